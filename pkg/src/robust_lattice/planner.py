"""A* over the state lattice with tube-inflated collision checking, and plan stitching.

Heuristic. Let v_h be at least the largest ratio (straight-line displacement /
cost) over all library primitives. For any edge n -> n' with cost c,
||p(n') - p(n)|| <= v_h c, so by the triangle inequality
h(n) = ||p(goal) - p(n)|| / v_h <= c + h(n'). The heuristic is therefore
consistent, and with h(goal) = 0 also admissible; A* with a closed set then
returns a cost-minimal path. v_h defaults to max(v_max, library ratio), which
keeps the Euclidean/v_max form whenever the library allows it.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .el_dynamics import integrate_step, phi, theta
from .errors import ConfigurationError, CorruptedPlanError, NoPathError, PlannerTimeoutError
from .geometry import inflate_polygon, outward_normals, points_in_polygon, segments_hit_polygon
from .primitives import LatticeNode, MotionPrimitive, PrimitiveLibrary, eval_quintic
from .scenario import Scenario, snap_state
from .tube import Box, TubeSpec

CHAIN_TOL = 1e-6
DEFAULT_MAX_EXPANSIONS = 500_000


def inflate_obstacles(obstacles, tube: TubeSpec | float | None, footprint_radius: float = 0.0) -> list[np.ndarray]:
    """Dilate each polygon by the tube position radius plus the ship footprint.

    ``tube`` may be a TubeSpec, a radius, or None (no tube, footprint only).
    """
    if isinstance(tube, TubeSpec):
        r = tube.position_radius
    else:
        r = float(tube or 0.0)
    r += footprint_radius
    return [inflate_polygon(np.asarray(p, dtype=float), r) for p in obstacles]


def collision_check(
    primitive: MotionPrimitive,
    world_offset,
    inflated_obstacles,
    tightened_workspace: Box,
) -> bool:
    """True iff the placed primitive stays in the workspace and off every inflated obstacle.

    ``world_offset`` is the (x1, x2) position of the primitive's start node.
    Consecutive samples are joined by segments, which are tested exactly.
    """
    pts = primitive.pose[:, :2] + np.asarray(world_offset, dtype=float)[:2]
    lo, hi = tightened_workspace.lower[:2], tightened_workspace.upper[:2]
    if np.any(pts < lo) or np.any(pts > hi):
        return False
    a, b = pts[:-1], pts[1:]
    for poly in inflated_obstacles:
        pmin, pmax = poly.min(axis=0), poly.max(axis=0)
        if np.any(pts.max(axis=0) < pmin) or np.any(pts.min(axis=0) > pmax):
            continue
        if len(a) == 0:
            if points_in_polygon(pts, poly).any():
                return False
            continue
        near = ~(np.any(np.maximum(a, b) < pmin, axis=1) | np.any(np.minimum(a, b) > pmax, axis=1))
        if near.any() and segments_hit_polygon(a[near], b[near], poly).any():
            return False
    return True


class CollisionWorld:
    """Inflated obstacles plus a per-(node, primitive) result cache.

    Same predicate as collision_check, with obstacle data precomputed and a
    bounding-box rejection in plain Python ahead of the exact segment test.
    """

    def __init__(self, inflated_obstacles, tightened_workspace: Box, h: float):
        self.obstacles = [np.asarray(p, dtype=float) for p in inflated_obstacles]
        self.workspace = tightened_workspace
        self.h = h
        self._ws = tuple(float(v) for v in (*tightened_workspace.lower[:2], *tightened_workspace.upper[:2]))
        self._obs = []
        for poly in self.obstacles:
            normals = outward_normals(poly)
            proj = poly @ normals.T
            bbox = tuple(float(v) for v in (*poly.min(axis=0), *poly.max(axis=0)))
            self._obs.append((bbox, poly, normals, proj.min(axis=0), proj.max(axis=0)))
        self._prim: dict[int, tuple] = {}
        self._cache: dict[tuple, bool] = {}

    def node_free(self, node: LatticeNode) -> bool:
        p = np.array([node.i * self.h, node.j * self.h])
        if not (np.all(p >= self.workspace.lower[:2]) and np.all(p <= self.workspace.upper[:2])):
            return False
        return not any(points_in_polygon(p, poly) for poly in self.obstacles)

    def _prim_data(self, prim: MotionPrimitive):
        data = self._prim.get(id(prim))
        if data is None:
            pts = prim.pose[:, :2]
            lo, hi = pts.min(axis=0), pts.max(axis=0)
            a, b = pts[:-1], pts[1:]
            data = (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]), pts, a, b,
                    np.minimum(a, b), np.maximum(a, b))
            self._prim[id(prim)] = (prim, data)  # keep prim alive so id() stays unique
        else:
            data = data[1]
        return data

    def edge_free(self, node: LatticeNode, prim: MotionPrimitive) -> bool:
        key = (node.i, node.j, id(prim))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        x0, y0, x1, y1, pts, a, b, smin, smax = self._prim_data(prim)
        ox, oy = node.i * self.h, node.j * self.h
        x0, y0, x1, y1 = x0 + ox, y0 + oy, x1 + ox, y1 + oy
        wx0, wy0, wx1, wy1 = self._ws
        ok = x0 >= wx0 and y0 >= wy0 and x1 <= wx1 and y1 <= wy1
        if ok:
            off = np.array([ox, oy])
            for (bx0, by0, bx1, by1), poly, normals, pmin, pmax in self._obs:
                if x1 < bx0 or x0 > bx1 or y1 < by0 or y0 > by1:
                    continue
                if len(a) == 0:
                    if points_in_polygon(pts + off, poly).any():
                        ok = False
                        break
                    continue
                near = ~((smax[:, 0] + ox < bx0) | (smax[:, 1] + oy < by0)
                         | (smin[:, 0] + ox > bx1) | (smin[:, 1] + oy > by1))
                if near.any() and segments_hit_polygon(a[near] + off, b[near] + off, poly,
                                                       normals, pmin, pmax).any():
                    ok = False
                    break
        self._cache[key] = ok
        return ok


def successors(node: LatticeNode, lib: PrimitiveLibrary, world: CollisionWorld):
    """Yield (primitive, next node) pairs whose placement is collision-free."""
    for prim in lib.get(node.h_idx, node.s_idx):
        if world.edge_free(node, prim):
            yield prim, LatticeNode(node.i + prim.di, node.j + prim.dj, prim.h_to, prim.s_to)


@dataclass
class PlanStep:
    primitive_id: str
    start: tuple[int, int, int, int]
    end: tuple[int, int, int, int]
    start_pose: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {"primitive": self.primitive_id, "from": list(self.start), "to": list(self.end),
                "start_pose": list(self.start_pose)}


@dataclass
class Plan:
    start: tuple[int, int, int, int]
    goal: tuple[int, int, int, int]
    steps: list[PlanStep]
    cost: float
    expansions: int = 0
    scenario_name: str = ""
    model_hash: str = ""
    tube_hash: str = ""
    inflation_radius: float = 0.0
    trajectory: "NominalTrajectory | None" = field(default=None, repr=False)

    @property
    def M(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_name,
            "model_hash": self.model_hash,
            "tube_hash": self.tube_hash,
            "inflation_radius": self.inflation_radius,
            "start": list(self.start),
            "goal": list(self.goal),
            "M": self.M,
            "cost": self.cost,
            "duration": self.trajectory.duration if self.trajectory is not None else None,
            "steps": [s.to_dict() for s in self.steps],
        }


def heuristic_speed(lib: PrimitiveLibrary) -> float:
    return max(max(lib.spec.speed_levels), lib.max_speed_ratio())


def astar(
    start: LatticeNode,
    goal: LatticeNode,
    lib: PrimitiveLibrary,
    world: CollisionWorld,
    max_expansions: int = DEFAULT_MAX_EXPANSIONS,
    heuristic: bool = True,
):
    """Best-first search; returns (cost, [(node, prim), ...], expansions).

    Heap entries are ordered by (f, phases, node tuple) so ties resolve to
    fewer primitives, then lexicographically smaller nodes. ``heuristic=False``
    turns this into Dijkstra's algorithm.
    """
    h = lib.spec.h
    v_h = heuristic_speed(lib)
    gx, gy = goal.i * h, goal.j * h

    def hval(n: LatticeNode) -> float:
        if not heuristic:
            return 0.0
        return math.hypot(n.i * h - gx, n.j * h - gy) / v_h

    best_g = {start: 0.0}
    parent: dict[LatticeNode, tuple[LatticeNode, MotionPrimitive] | None] = {start: None}
    phases = {start: 0}
    heap = [(hval(start), 0, start.as_tuple(), 0.0, start)]
    closed = set()
    expansions = 0
    while heap:
        f, m, _, g, node = heapq.heappop(heap)
        if node in closed or g > best_g[node] or m > phases[node]:
            continue
        if node == goal:
            path = []
            cur = node
            while parent[cur] is not None:
                prev, prim = parent[cur]
                path.append((prev, prim))
                cur = prev
            return g, path[::-1], expansions
        closed.add(node)
        expansions += 1
        if expansions > max_expansions:
            raise PlannerTimeoutError(f"node-expansion budget of {max_expansions} exhausted")
        for prim, nxt in successors(node, lib, world):
            ng = g + prim.cost
            nm = m + 1
            old = best_g.get(nxt)
            if old is not None and (ng > old or (ng == old and nm >= phases[nxt])):
                continue
            best_g[nxt] = ng
            phases[nxt] = nm
            parent[nxt] = (node, prim)
            closed.discard(nxt)
            heapq.heappush(heap, (ng + hval(nxt), nm, nxt.as_tuple(), ng, nxt))
    raise NoPathError("goal unreachable on the lattice graph")


def plan(
    scenario: Scenario,
    lib: PrimitiveLibrary,
    tube: TubeSpec,
    tightened,
    inflate: bool = True,
    max_expansions: int = DEFAULT_MAX_EXPANSIONS,
) -> Plan:
    """Solve the lattice search for a scenario and stitch the result.

    With ``inflate=False`` obstacles are dilated by the footprint only, which
    is the unsafe baseline used to show why the tube matters.
    """
    spec = lib.spec
    start = snap_state(scenario.start, spec, "start")
    goal = snap_state(scenario.goal, spec, "goal")
    radius = (tube.position_radius if inflate else 0.0) + scenario.footprint_radius
    inflated = inflate_obstacles(scenario.obstacles, radius)
    world = CollisionWorld(inflated, tightened.pose_w, spec.h)
    for label, n in (("start", start), ("goal", goal)):
        if not world.node_free(n):
            raise ConfigurationError(
                f"{label} node {n.as_tuple()} lies outside the tightened workspace or inside an "
                f"obstacle inflated by {radius:.6g} m"
            )
    try:
        cost, path, expansions = astar(start, goal, lib, world, max_expansions)
    except NoPathError as exc:
        if isinstance(exc, PlannerTimeoutError):
            raise
        raise NoPathError(
            f"no path from {start.as_tuple()} to {goal.as_tuple()}: every route is blocked once obstacles "
            f"are inflated by {radius:.6g} m (tube {radius - scenario.footprint_radius:.6g} m + footprint "
            f"{scenario.footprint_radius:.6g} m); passages need clearance wider than {2 * radius:.6g} m"
        ) from None
    steps = []
    for node, prim in path:
        end = (node.i + prim.di, node.j + prim.dj, prim.h_to, prim.s_to)
        steps.append(PlanStep(prim.id, node.as_tuple(), end,
                              (node.i * spec.h, node.j * spec.h, spec.heading(node.h_idx))))
    p = Plan(start.as_tuple(), goal.as_tuple(), steps, cost, expansions, scenario.name,
             lib.model_hash, lib.tube_hash, radius)
    p.trajectory = stitch(p, lib)
    return p


@dataclass
class NominalTrajectory:
    """Stitched nominal trajectory: uniform samples plus the exact piecewise-quintic reference."""

    dt: float
    t: np.ndarray
    pose: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    tau: np.ndarray
    v: np.ndarray
    seg_t0: np.ndarray
    seg_T: np.ndarray
    seg_coeffs: np.ndarray  # (S, 6, 3) in world coordinates

    @property
    def duration(self) -> float:
        return float(self.t[-1]) if len(self.t) else 0.0

    def reference(self, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(xbar, xbar', xbar'') at arbitrary times; held at the end state beyond the last segment."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if len(self.seg_T) == 0:
            n = len(t)
            return (np.repeat(self.pose[:1], n, 0), np.repeat(self.vel[:1], n, 0), np.zeros((n, 3)))
        k = np.clip(np.searchsorted(self.seg_t0, t, side="right") - 1, 0, len(self.seg_T) - 1)
        tau = np.clip(t - self.seg_t0[k], 0.0, self.seg_T[k])[:, None]
        c = self.seg_coeffs[k]
        pos = c[:, 0] + tau * (c[:, 1] + tau * (c[:, 2] + tau * (c[:, 3] + tau * (c[:, 4] + tau * c[:, 5]))))
        vel = c[:, 1] + tau * (2 * c[:, 2] + tau * (3 * c[:, 3] + tau * (4 * c[:, 4] + tau * 5 * c[:, 5])))
        acc = 2 * c[:, 2] + tau * (6 * c[:, 3] + tau * (12 * c[:, 4] + tau * 20 * c[:, 5]))
        return pos, vel, acc

    def nominal_input(self, t, model) -> np.ndarray:
        pos, vel, acc = self.reference(t)
        return acc - phi(pos, vel, model)

    def resimulate(self, model) -> dict[str, float]:
        """Integrate the nominal dynamics from the first sample under the stitched torque samples.

        Torque between samples comes from a cubic spline fitted per segment,
        since the torque has kinks at primitive junctions. Returns the max
        deviation from the stored samples in position, heading and velocity.
        """
        n = len(self.t) - 1
        tau_mid = np.zeros((n, 3))
        for t0, T in zip(self.seg_t0, self.seg_T):
            a, b = round(t0 / self.dt), round((t0 + T) / self.dt)
            spl = CubicSpline(self.t[a:b + 1], self.tau[a:b + 1], axis=0)
            tau_mid[a:b] = spl(self.t[a:b] + 0.5 * self.dt)
        x, v = self.pose[0].copy(), self.vel[0].copy()
        err = {"pos": 0.0, "heading": 0.0, "vel": 0.0}
        for k in range(n):
            ends = {0.0: self.tau[k], 0.5 * self.dt: tau_mid[k], self.dt: self.tau[k + 1]}

            def acc(s, xs, vs):
                return phi(xs[None], vs[None], model)[0] + theta(xs[None], model)[0] @ ends[s]

            x, v = integrate_step((x, v), acc, self.dt)
            err["pos"] = max(err["pos"], float(np.linalg.norm(x[:2] - self.pose[k + 1, :2])))
            err["heading"] = max(err["heading"], abs(float(x[2] - self.pose[k + 1, 2])))
            err["vel"] = max(err["vel"], float(np.linalg.norm(v - self.vel[k + 1])))
        return err

    def to_csv(self, path: str | Path) -> None:
        data = np.column_stack([self.t, self.pose, self.vel, self.tau])
        np.savetxt(path, data, delimiter=",", fmt="%.12g",
                   header="t,x1,x2,x3,dx1,dx2,dx3,tau1,tau2,tau3", comments="")


def stitch(p: Plan, lib: PrimitiveLibrary) -> NominalTrajectory:
    """Concatenate the plan's primitives in world coordinates, dropping repeated junction samples."""
    spec = lib.spec
    dt = lib.dt
    if not p.steps:
        pose, vel = spec.node_state(*p.start)
        z = np.zeros((1, 3))
        return NominalTrajectory(dt, np.zeros(1), pose[None], vel[None], z, z.copy(), z.copy(),
                                 np.zeros(0), np.zeros(0), np.zeros((0, 6, 3)))
    parts = {k: [] for k in ("pose", "vel", "acc", "tau", "v")}
    seg_t0, seg_T, seg_c = [], [], []
    t0 = 0.0
    prev_end = None
    for n, step in enumerate(p.steps):
        prim = lib.find(step.primitive_id)
        i, j, hi, si = step.start
        if (hi, si) != (prim.h_from, prim.s_from):
            raise CorruptedPlanError(f"step {n}: primitive {prim.id} does not start at node {step.start}")
        pose = prim.pose.copy()
        pose[:, 0] += i * spec.h
        pose[:, 1] += j * spec.h
        coeffs = prim.coeffs.copy()
        coeffs[0, 0] += i * spec.h
        coeffs[0, 1] += j * spec.h
        if prev_end is not None:
            wrap = 2 * math.pi * round((prev_end[0][2] - pose[0, 2]) / (2 * math.pi))
            pose[:, 2] += wrap
            coeffs[0, 2] += wrap
            if (np.max(np.abs(pose[0] - prev_end[0])) > CHAIN_TOL
                    or np.max(np.abs(prim.vel[0] - prev_end[1])) > CHAIN_TOL):
                raise CorruptedPlanError(f"chain mismatch between steps {n - 1} and {n}")
        sl = slice(0 if n == 0 else 1, None)
        parts["pose"].append(pose[sl])
        for k in ("vel", "acc", "tau", "v"):
            parts[k].append(getattr(prim, k)[sl])
        seg_t0.append(t0)
        seg_T.append(prim.duration)
        seg_c.append(coeffs)
        t0 += prim.duration
        prev_end = (pose[-1], prim.vel[-1])
    arrays = {k: np.concatenate(v) for k, v in parts.items()}
    n_samples = len(arrays["pose"])
    t = np.arange(n_samples) * dt
    goal_pose, goal_vel = spec.node_state(*p.goal)
    end = arrays["pose"][-1]
    if (np.max(np.abs(end[:2] - goal_pose[:2])) > CHAIN_TOL
            or abs(math.remainder(end[2] - goal_pose[2], 2 * math.pi)) > CHAIN_TOL
            or np.max(np.abs(arrays["vel"][-1] - goal_vel)) > CHAIN_TOL):
        raise CorruptedPlanError("plan does not end at the goal node")
    return NominalTrajectory(dt, t, arrays["pose"], arrays["vel"], arrays["acc"], arrays["tau"],
                             arrays["v"], np.array(seg_t0), np.array(seg_T), np.array(seg_c))


def dumps_plan(p: Plan) -> str:
    return json.dumps(p.to_dict(), indent=2, sort_keys=True) + "\n"


def save_plan(p: Plan, path: str | Path) -> None:
    Path(path).write_text(dumps_plan(p))


def load_plan(path: str | Path, lib: PrimitiveLibrary) -> Plan:
    """Rebuild a plan from its JSON record and the library it was planned with."""
    try:
        d = json.loads(Path(path).read_text())
        steps = [PlanStep(s["primitive"], tuple(s["from"]), tuple(s["to"]), tuple(s["start_pose"]))
                 for s in d["steps"]]
        p = Plan(tuple(d["start"]), tuple(d["goal"]), steps, float(d["cost"]), 0,
                 d.get("scenario", ""), d.get("model_hash", ""), d.get("tube_hash", ""),
                 float(d.get("inflation_radius", 0.0)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptedPlanError(f"cannot read plan {path}: {exc}") from exc
    try:
        p.trajectory = stitch(p, lib)
    except KeyError as exc:
        raise CorruptedPlanError(f"plan references unknown primitive {exc}") from exc
    return p


def eval_primitive_world(prim: MotionPrimitive, node: LatticeNode, h: float, t) -> np.ndarray:
    """World position of a placed primitive at times t (used by tests)."""
    pos, _, _ = eval_quintic(prim.coeffs, t)
    pos[:, 0] += node.i * h
    pos[:, 1] += node.j * h
    return pos
