"""State lattice and motion-primitive library for the nominal vessel.

A lattice node is (i, j, heading index, speed index). Its state is the pose
(i*h, j*h, 2*pi*k/n) with world velocity ``speed * (cos, sin, 0)``, i.e. pure
surge, no yaw rate. Primitives join two node states with per-axis quintics
that have zero boundary acceleration, so consecutive primitives concatenate
with continuous velocity, acceleration and torque.

Primitive samples are stored relative to the start node position; headings
are absolute, with the start heading in [0, 2*pi).
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .el_dynamics import KNOT, ELModel, inverse_dynamics, phi, theta
from .errors import (
    CorruptLibraryError,
    PrimitiveInfeasibleError,
    StaleLibraryError,
    SymmetryViolationError,
)
from .tube import ConstraintSets, TubeSpec

log = logging.getLogger(__name__)

LIBRARY_VERSION = 1
BOUNDARY_TOL = 1e-6
RESIM_POS_TOL = 1e-4
RESIM_HEADING_TOL = 1e-5
RESIM_VEL_TOL = 1e-4


@dataclass(frozen=True)
class TemplateEntry:
    """End-node offset relative to a canonical start heading.

    ``speed_deltas`` lists allowed end-speed index changes; ``start_speeds``
    restricts the entry to some start speed indices (None = all).
    """

    di: int
    dj: int
    dh: int
    speed_deltas: tuple[int, ...] = (0,)
    start_speeds: tuple[int, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "di": self.di, "dj": self.dj, "dh": self.dh,
            "speed_deltas": list(self.speed_deltas),
            "start_speeds": None if self.start_speeds is None else list(self.start_speeds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateEntry":
        ss = d.get("start_speeds")
        return cls(int(d["di"]), int(d["dj"]), int(d["dh"]),
                   tuple(int(x) for x in d.get("speed_deltas", [0])),
                   None if ss is None else tuple(int(x) for x in ss))


def _axis_template(quarter: int) -> list[TemplateEntry]:
    """Heading-0 template; ``quarter`` is the heading-index step of a 90 degree turn."""
    T = TemplateEntry
    entries = [T(k, 0, 0, (-1, 0, 1)) for k in (1, 2, 3)]
    if quarter == 2:
        for di in (2, 3):
            entries += [T(di, 1, 1, (0, -1)), T(di, -1, -1, (0, -1))]
    for k in (2, 3):
        entries += [T(k, k, quarter), T(k, -k, -quarter)]
    rest = (0,)
    entries += [T(0, 0, d, (0,), rest) for d in range(-quarter, quarter + 1) if d != 0]
    return entries


def _diagonal_template() -> list[TemplateEntry]:
    """Heading-1 (north-east) template for 8 headings."""
    T = TemplateEntry
    entries = [T(k, k, 0, (-1, 0, 1)) for k in (1, 2, 3)]
    entries += [T(2, 1, -1, (0, -1)), T(3, 2, -1, (0, -1)),
                T(1, 2, 1, (0, -1)), T(2, 3, 1, (0, -1))]
    entries += [T(0, 2, 2), T(2, 0, -2), T(0, 3, 2), T(3, 0, -2)]
    entries += [T(0, 0, d, (0,), (0,)) for d in (-2, -1, 1, 2)]
    return entries


def default_template(n_headings: int) -> dict[int, list[TemplateEntry]]:
    if n_headings == 4:
        return {0: _axis_template(1)}
    if n_headings == 8:
        return {0: _axis_template(2), 1: _diagonal_template()}
    raise ValueError(f"no default connectivity template for {n_headings} headings; supply one")


@dataclass(frozen=True)
class LatticeSpec:
    h: float = 25.0
    n_headings: int = 8
    speed_levels: tuple[float, ...] = (0.0, 3.0 * KNOT, 6.0 * KNOT)
    template: dict[int, list[TemplateEntry]] | None = None

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid pitch h must be positive")
        if self.n_headings < 4 or self.n_headings % 4:
            raise ValueError("n_headings must be >= 4 and divisible by 4")
        object.__setattr__(self, "speed_levels", tuple(float(s) for s in self.speed_levels))
        if any(s < 0 for s in self.speed_levels):
            raise ValueError("speed levels must be non-negative")
        if self.template is None:
            object.__setattr__(self, "template", default_template(self.n_headings))
        canon = set(range(self.n_headings // 4))
        if set(self.template) != canon:
            raise ValueError(f"template must define canonical headings {sorted(canon)}")

    @property
    def heading_pitch(self) -> float:
        return 2 * math.pi / self.n_headings

    def heading(self, h_idx: int) -> float:
        return self.heading_pitch * (h_idx % self.n_headings)

    def node_state(self, i: int, j: int, h_idx: int, s_idx: int) -> tuple[np.ndarray, np.ndarray]:
        psi = self.heading(h_idx)
        s = self.speed_levels[s_idx]
        pose = np.array([i * self.h, j * self.h, psi])
        vel = np.array([s * math.cos(psi), s * math.sin(psi), 0.0])
        return pose, vel

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "n_headings": self.n_headings,
            "speed_levels": list(self.speed_levels),
            "template": {str(k): [e.to_dict() for e in v] for k, v in sorted(self.template.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeSpec":
        n = int(d.get("n_headings", 8))
        if "speed_levels" in d:
            speeds = tuple(float(s) for s in d["speed_levels"])
        else:
            vmax = float(d.get("v_max_knots", 6.0)) * KNOT
            speeds = (0.0, vmax / 2, vmax)
        tpl = d.get("template")
        if tpl is not None:
            tpl = {int(k): [TemplateEntry.from_dict(e) for e in v] for k, v in tpl.items()}
        return cls(h=float(d.get("h", 25.0)), n_headings=n, speed_levels=speeds, template=tpl)


@dataclass(frozen=True)
class LatticeNode:
    i: int
    j: int
    h_idx: int
    s_idx: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.i, self.j, self.h_idx, self.s_idx)


@dataclass
class MotionPrimitive:
    h_from: int
    s_from: int
    di: int
    dj: int
    h_to: int
    s_to: int
    duration: float
    dt: float
    cost: float
    coeffs: np.ndarray  # (6, 3) quintic coefficients in t, local position frame
    pose: np.ndarray
    vel: np.ndarray
    acc: np.ndarray
    tau: np.ndarray
    v: np.ndarray
    index: int = 0

    @property
    def id(self) -> str:
        return f"h{self.h_from}s{self.s_from}#{self.index}"

    @property
    def n_steps(self) -> int:
        return len(self.pose) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "h_from": self.h_from, "s_from": self.s_from,
            "di": self.di, "dj": self.dj, "h_to": self.h_to, "s_to": self.s_to,
            "duration": self.duration, "dt": self.dt, "cost": self.cost,
            "coeffs": self.coeffs.tolist(),
            "pose": self.pose.tolist(), "vel": self.vel.tolist(), "acc": self.acc.tolist(),
            "tau": self.tau.tolist(), "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MotionPrimitive":
        arr = {k: np.array(d[k], dtype=float) for k in ("coeffs", "pose", "vel", "acc", "tau", "v")}
        return cls(
            h_from=int(d["h_from"]), s_from=int(d["s_from"]), di=int(d["di"]), dj=int(d["dj"]),
            h_to=int(d["h_to"]), s_to=int(d["s_to"]), duration=float(d["duration"]),
            dt=float(d["dt"]), cost=float(d["cost"]), index=int(d["index"]), **arr,
        )


def quintic_coeffs(p0, v0, p1, v1, T: float) -> np.ndarray:
    """Coefficients c0..c5 (rows) of the quintic with given end positions/velocities and zero end accelerations."""
    p0, v0, p1, v1 = (np.asarray(a, dtype=float) for a in (p0, v0, p1, v1))
    dp = p1 - p0
    c = np.zeros((6,) + dp.shape)
    c[0] = p0
    c[1] = v0
    c[3] = (20 * dp - (8 * v1 + 12 * v0) * T) / (2 * T**3)
    c[4] = (-30 * dp + (14 * v1 + 16 * v0) * T) / (2 * T**4)
    c[5] = (12 * dp - 6 * (v1 + v0) * T) / (2 * T**5)
    return c


def eval_quintic(coeffs: np.ndarray, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, velocity and acceleration at times t (shape (N,)) -> each (N, 3)."""
    t = np.asarray(t, dtype=float)[:, None]
    c = coeffs
    pos = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    vel = c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))
    acc = 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))
    return pos, vel, acc


def _sample_times(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"duration {T} is not a multiple of dt={dt}")
    t = np.arange(n + 1) * dt
    t[-1] = T
    return t


def constraint_violations(pose, vel, tau, tightened: ConstraintSets) -> list[str]:
    """Primitive-level constraint check: heading interval and velocity box (closed), torque box (open).

    Positions are checked against the workspace at plan time, when the
    primitive is placed in the world.
    """
    out = []
    lo, hi = tightened.pose_w.lower[2], tightened.pose_w.upper[2]
    if np.any(pose[:, 2] < lo) or np.any(pose[:, 2] > hi):
        out.append("heading outside tightened interval")
    if not np.all(tightened.velocity_w.contains(vel)):
        out.append("velocity outside tightened box")
    if not np.all(tightened.torque_w.contains(tau, strict=True)):
        out.append("torque not strictly inside tightened box")
    if not (np.all(np.isfinite(tau)) and np.all(np.isfinite(vel))):
        out.append("non-finite samples")
    return out


def generate_primitive(
    start_state: tuple[np.ndarray, np.ndarray],
    end_state: tuple[np.ndarray, np.ndarray],
    model: ELModel,
    tightened: ConstraintSets,
    duration_grid=None,
    dt: float = 0.1,
    w_u: float = 0.0,
) -> MotionPrimitive:
    """Cheapest feasible quintic between two states over a grid of durations.

    Cost is the integral of (1 + w_u ||vbar||^2); with w_u = 0 the first
    feasible duration wins. Lattice bookkeeping fields are left at zero.
    """
    p0, v0 = (np.asarray(a, dtype=float) for a in start_state)
    p1, v1 = (np.asarray(a, dtype=float) for a in end_state)
    if np.allclose(p0, p1, atol=1e-12) and np.allclose(v0, v1, atol=1e-12):
        raise PrimitiveInfeasibleError("degenerate primitive: start and end states coincide")
    if duration_grid is None:
        duration_grid = default_duration_grid()
    best = None
    for T in sorted(float(x) for x in duration_grid):
        t = _sample_times(T, dt)
        coeffs = quintic_coeffs(p0, v0, p1, v1, T)
        pose, vel, acc = eval_quintic(coeffs, t)
        tau = inverse_dynamics(pose, vel, acc, model)
        if constraint_violations(pose, vel, tau, tightened):
            continue
        v = acc - phi(pose, vel, model)
        cost = T
        if w_u:
            cost = T + w_u * float(np.trapezoid(np.sum(v * v, axis=1), t))
        if best is None or cost < best.cost:
            best = MotionPrimitive(0, 0, 0, 0, 0, 0, T, dt, cost, coeffs, pose, vel, acc, tau, v)
        if not w_u:
            break
    if best is None:
        raise PrimitiveInfeasibleError("no feasible duration in the grid")
    return best


def default_duration_grid() -> np.ndarray:
    # multiples of 0.5 s are exact in binary, so summed plan costs are exact
    return np.arange(1, 401) * 0.5


def _rot2(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    r = np.array([[c, -s], [s, c]])
    # quarter turns should be exact permutations, not cos(pi/2) = 6e-17
    r[np.abs(r) < 1e-15] = 0.0
    unit = np.abs(np.abs(r) - 1.0) < 1e-15
    r[unit] = np.sign(r[unit])
    return r


def rotate_primitive(
    m: MotionPrimitive,
    k: int,
    spec: LatticeSpec,
    model: ELModel,
    tightened: ConstraintSets | None = None,
) -> MotionPrimitive:
    """Rotate a primitive by k heading pitches about its start point.

    Torques are re-derived by inverse dynamics along the rotated trajectory.
    """
    n = spec.n_headings
    k = int(k)
    if k % n == 0:
        return MotionPrimitive(**{f: getattr(m, f) for f in m.__dataclass_fields__})
    angle = 2 * math.pi * k / n
    R = _rot2(angle)
    end = R @ (spec.h * np.array([m.di, m.dj], dtype=float))
    snapped = np.round(end / spec.h)
    if np.max(np.abs(end - snapped * spec.h)) > 1e-9 * max(1.0, spec.h):
        raise SymmetryViolationError(
            f"rotating {m.id} by {k} heading steps leaves the lattice (end offset {end / spec.h})"
        )
    h_from = (m.h_from + k) % n
    h_to = (m.h_to + k) % n
    dpsi = spec.heading(h_from) - spec.heading(m.h_from)

    pose = m.pose.copy()
    pose[:, :2] = m.pose[:, :2] @ R.T
    pose[:, 2] = m.pose[:, 2] + dpsi
    vel = m.vel.copy()
    vel[:, :2] = m.vel[:, :2] @ R.T
    acc = m.acc.copy()
    acc[:, :2] = m.acc[:, :2] @ R.T
    coeffs = m.coeffs.copy()
    coeffs[:, :2] = m.coeffs[:, :2] @ R.T
    coeffs[0, 2] += dpsi
    tau = inverse_dynamics(pose, vel, acc, model)
    v = acc - phi(pose, vel, model)
    out = MotionPrimitive(
        h_from, m.s_from, int(snapped[0]), int(snapped[1]), h_to, m.s_to,
        m.duration, m.dt, m.cost, coeffs, pose, vel, acc, tau, v, m.index,
    )
    if tightened is not None:
        bad = constraint_violations(pose, vel, tau, tightened)
        if bad:
            raise PrimitiveInfeasibleError(f"rotated primitive {out.id} infeasible: {'; '.join(bad)}")
    return out


@dataclass
class PrimitiveLibrary:
    spec: LatticeSpec
    model_hash: str
    tube_hash: str
    dt: float
    classes: dict[tuple[int, int], list[MotionPrimitive]]
    missing_classes: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {p.id: p for prims in self.classes.values() for p in prims}

    def get(self, h_idx: int, s_idx: int) -> list[MotionPrimitive]:
        return self.classes.get((h_idx, s_idx), [])

    def primitives(self) -> list[MotionPrimitive]:
        return [p for key in sorted(self.classes) for p in self.classes[key]]

    def find(self, prim_id: str) -> MotionPrimitive:
        return self._by_id[prim_id]

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.classes.values())

    def max_speed_ratio(self) -> float:
        """max over primitives of (start-to-end distance) / cost; makes dist/ratio an admissible heuristic."""
        best = 0.0
        for p in self.primitives():
            dist = self.spec.h * math.hypot(p.di, p.dj)
            if p.cost > 0:
                best = max(best, dist / p.cost)
        return best

    def coverage(self) -> dict[str, int]:
        return {f"h{h}s{s}": len(self.classes.get((h, s), []))
                for h in range(self.spec.n_headings) for s in range(len(self.spec.speed_levels))}


def constraint_fingerprint(tube: TubeSpec, tightened: ConstraintSets) -> str:
    """Provenance hash of everything a primitive was validated against, except the workspace."""
    payload = {
        "tube": tube.to_dict(),
        "heading_w": [float(tightened.pose_w.lower[2]), float(tightened.pose_w.upper[2])],
        "velocity_w": tightened.velocity_w.to_dict(),
        "torque_w": tightened.torque_w.to_dict(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def build_library(
    spec: LatticeSpec,
    model: ELModel,
    tube: TubeSpec,
    tightened: ConstraintSets,
    duration_grid=None,
    dt: float = 0.1,
    w_u: float = 0.0,
) -> PrimitiveLibrary:
    """Generate canonical-heading primitives, then fill the other headings by quarter-turn rotation."""
    n = spec.n_headings
    n_speeds = len(spec.speed_levels)
    for s in spec.speed_levels:
        probe = np.array([s, s, 0.0])
        if not (tightened.velocity_w.contains(probe) and tightened.velocity_w.contains(-probe)):
            raise ValueError(f"speed level {s} lies outside the tightened velocity box")
    classes: dict[tuple[int, int], list[MotionPrimitive]] = {}
    for hc in range(n // 4):
        for s in range(n_speeds):
            prims = []
            for entry in spec.template[hc]:
                if entry.start_speeds is not None and s not in entry.start_speeds:
                    continue
                for ds in entry.speed_deltas:
                    s_to = s + ds
                    if not 0 <= s_to < n_speeds:
                        continue
                    h_to = (hc + entry.dh) % n
                    start = spec.node_state(0, 0, hc, s)
                    end_pose, end_vel = spec.node_state(entry.di, entry.dj, h_to, s_to)
                    end_pose[2] = spec.heading(hc) + entry.dh * spec.heading_pitch
                    try:
                        m = generate_primitive(start, (end_pose, end_vel), model, tightened,
                                               duration_grid, dt, w_u)
                    except PrimitiveInfeasibleError as exc:
                        log.warning("dropping template entry %s (h%d s%d -> s%d): %s",
                                    entry, hc, s, s_to, exc)
                        continue
                    m.h_from, m.s_from, m.di, m.dj, m.h_to, m.s_to = hc, s, entry.di, entry.dj, h_to, s_to
                    m.index = len(prims)
                    prims.append(m)
            classes[(hc, s)] = prims
    for q in (1, 2, 3):
        k = q * n // 4
        for hc in range(n // 4):
            for s in range(n_speeds):
                classes[((hc + k) % n, s)] = [
                    rotate_primitive(m, k, spec, model, tightened) for m in classes[(hc, s)]
                ]
    classes = {key: classes[key] for key in sorted(classes)}
    missing = [key for key, v in classes.items() if not v]
    if missing:
        log.warning("library incomplete, empty classes: %s", missing)
    return PrimitiveLibrary(spec, model.hash(), constraint_fingerprint(tube, tightened), dt,
                            classes, missing)


def resimulate(prims: list[MotionPrimitive], model: ELModel) -> dict[str, np.ndarray]:
    """Integrate the nominal dynamics under each primitive's stored torque samples.

    Torque between samples comes from a cubic spline through the stored
    samples. All primitives are integrated together (RK4, step dt); each
    one stops at its own final sample. Returns per-primitive max deviations
    from the stored samples.
    """
    P = len(prims)
    if P == 0:
        return {"pos": np.zeros(0), "heading": np.zeros(0), "vel": np.zeros(0)}
    dt = prims[0].dt
    if any(abs(p.dt - dt) > 1e-15 for p in prims):
        raise ValueError("primitives must share dt")
    n = np.array([p.n_steps for p in prims])
    N = int(n.max())
    tau_k = np.zeros((N + 1, P, 3))
    tau_h = np.zeros((N, P, 3))
    ref_pose = np.zeros((N + 1, P, 3))
    ref_vel = np.zeros((N + 1, P, 3))
    for j, p in enumerate(prims):
        t = p.times
        spl = CubicSpline(t, p.tau, axis=0)
        tau_k[: p.n_steps + 1, j] = p.tau
        tau_k[p.n_steps + 1:, j] = p.tau[-1]
        tau_h[: p.n_steps, j] = spl(t[:-1] + 0.5 * dt)
        tau_h[p.n_steps:, j] = p.tau[-1]
        ref_pose[: p.n_steps + 1, j] = p.pose
        ref_pose[p.n_steps + 1:, j] = p.pose[-1]
        ref_vel[: p.n_steps + 1, j] = p.vel
        ref_vel[p.n_steps + 1:, j] = p.vel[-1]

    def acc(x, v, tau):
        return phi(x, v, model) + np.einsum("pij,pj->pi", theta(x, model), tau)

    x = ref_pose[0].copy()
    v = ref_vel[0].copy()
    err_pos = np.zeros(P)
    err_head = np.zeros(P)
    err_vel = np.zeros(P)
    h2 = 0.5 * dt
    for k in range(N):
        active = (k < n)[:, None]
        a1 = acc(x, v, tau_k[k])
        x2, v2 = x + h2 * v, v + h2 * a1
        a2 = acc(x2, v2, tau_h[k])
        x3, v3 = x + h2 * v2, v + h2 * a2
        a3 = acc(x3, v3, tau_h[k])
        x4, v4 = x + dt * v3, v + dt * a3
        a4 = acc(x4, v4, tau_k[k + 1])
        xn = x + dt / 6 * (v + 2 * v2 + 2 * v3 + v4)
        vn = v + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        x = np.where(active, xn, x)
        v = np.where(active, vn, v)
        dx = x - ref_pose[k + 1]
        err_pos = np.maximum(err_pos, np.linalg.norm(dx[:, :2], axis=1))
        err_head = np.maximum(err_head, np.abs(dx[:, 2]))
        err_vel = np.maximum(err_vel, np.linalg.norm(v - ref_vel[k + 1], axis=1))
    return {"pos": err_pos, "heading": err_head, "vel": err_vel}


def validate_library(lib: PrimitiveLibrary, model: ELModel, tightened: ConstraintSets) -> list[str]:
    """Check every primitive's boundary states, constraints and re-simulation; returns violations."""
    spec = lib.spec
    problems = []
    prims = lib.primitives()
    for p in prims:
        start_pose, start_vel = spec.node_state(0, 0, p.h_from, p.s_from)
        end_pose, end_vel = spec.node_state(p.di, p.dj, p.h_to, p.s_to)
        if (np.max(np.abs(p.pose[0, :2] - start_pose[:2])) > BOUNDARY_TOL
                or np.max(np.abs(p.pose[-1, :2] - end_pose[:2])) > BOUNDARY_TOL):
            problems.append(f"{p.id}: boundary position mismatch")
        for got, want in ((p.pose[0, 2], start_pose[2]), (p.pose[-1, 2], end_pose[2])):
            if abs(math.remainder(got - want, 2 * math.pi)) > BOUNDARY_TOL:
                problems.append(f"{p.id}: boundary heading mismatch")
        if (np.max(np.abs(p.vel[0] - start_vel)) > BOUNDARY_TOL
                or np.max(np.abs(p.vel[-1] - end_vel)) > BOUNDARY_TOL):
            problems.append(f"{p.id}: boundary velocity mismatch")
        if abs(p.duration - p.n_steps * p.dt) > 1e-9 * max(1.0, p.duration):
            problems.append(f"{p.id}: duration inconsistent with sample count")
        for msg in constraint_violations(p.pose, p.vel, p.tau, tightened):
            problems.append(f"{p.id}: {msg}")
    errs = resimulate(prims, model)
    for p, ep, eh, ev in zip(prims, errs["pos"], errs["heading"], errs["vel"]):
        if ep > RESIM_POS_TOL or eh > RESIM_HEADING_TOL or ev > RESIM_VEL_TOL:
            problems.append(f"{p.id}: re-simulation drift pos={ep:.3g} heading={eh:.3g} vel={ev:.3g}")
    return problems


def library_to_dict(lib: PrimitiveLibrary) -> dict:
    return {
        "version": LIBRARY_VERSION,
        "model_hash": lib.model_hash,
        "tube_hash": lib.tube_hash,
        "dt": lib.dt,
        "lattice_spec": lib.spec.to_dict(),
        "missing_classes": [list(k) for k in lib.missing_classes],
        "primitives": [p.to_dict() for p in lib.primitives()],
    }


def dumps_library(lib: PrimitiveLibrary) -> bytes:
    return json.dumps(library_to_dict(lib), separators=(",", ":")).encode()


def save_library(lib: PrimitiveLibrary, path: str | Path) -> None:
    data = dumps_library(lib)
    path = Path(path)
    if path.suffix == ".gz":
        # no mtime or file name in the header, so equal libraries give equal bytes
        with open(path, "wb") as fh, gzip.GzipFile(filename="", fileobj=fh, mode="wb", compresslevel=6, mtime=0) as gz:
            gz.write(data)
    else:
        path.write_bytes(data)


def load_library(
    path: str | Path,
    model: ELModel | None = None,
    tube: TubeSpec | None = None,
    tightened: ConstraintSets | None = None,
    validate: bool = True,
) -> PrimitiveLibrary:
    """Read a library file, check provenance against the active model/tube and re-validate."""
    path = Path(path)
    try:
        raw = path.read_bytes()
        if path.suffix == ".gz":
            raw = gzip.decompress(raw)
        data = json.loads(raw)
        if data.get("version") != LIBRARY_VERSION:
            raise CorruptLibraryError(f"unsupported library version {data.get('version')!r}")
        spec = LatticeSpec.from_dict(data["lattice_spec"])
        classes: dict[tuple[int, int], list[MotionPrimitive]] = {}
        for d in data["primitives"]:
            p = MotionPrimitive.from_dict(d)
            classes.setdefault((p.h_from, p.s_from), []).append(p)
        for h in range(spec.n_headings):
            for s in range(len(spec.speed_levels)):
                classes.setdefault((h, s), [])
        lib = PrimitiveLibrary(
            spec, str(data["model_hash"]), str(data["tube_hash"]), float(data["dt"]),
            {k: classes[k] for k in sorted(classes)},
            [tuple(k) for k in data.get("missing_classes", [])],
        )
    except CorruptLibraryError:
        raise
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CorruptLibraryError(f"cannot read library {path}: {exc}") from exc
    if model is not None and lib.model_hash != model.hash():
        raise StaleLibraryError(
            f"stale library: built for model {lib.model_hash}, active model is {model.hash()}; "
            "rebuild it with the primitives command"
        )
    if tube is not None and tightened is not None:
        fp = constraint_fingerprint(tube, tightened)
        if lib.tube_hash != fp:
            raise StaleLibraryError(f"stale library: built for tube {lib.tube_hash}, active tube is {fp}; "
                                    "rebuild it with the primitives command")
    if validate:
        if model is None or tightened is None:
            raise ValueError("validation needs the model and the tightened constraint sets")
        problems = validate_library(lib, model, tightened)
        if problems:
            raise CorruptLibraryError(
                f"{len(problems)} invariant violation(s) in {path}: " + "; ".join(problems[:5])
            )
    return lib
