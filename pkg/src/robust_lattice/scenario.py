"""Scenario files: workspace, obstacles, start/goal, gains, disturbance set and lattice."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .el_dynamics import ELModel, rotation
from .errors import ConfigurationError, ParseError, SnapError
from .geometry import as_convex_polygon
from .primitives import LatticeNode, LatticeSpec
from .tube import Box, ConstraintSets, DisturbanceEllipsoid, Gains, TubeSpec, compute_tube, tighten

SNAP_TOL = 1e-9
PACKAGED = {"demo": "demo_scenario.json", "corridor": "corridor_scenario.json"}


@dataclass(frozen=True)
class BoundaryState:
    """Pose plus body-frame velocity q, as written in scenario files."""

    pose: np.ndarray
    q: np.ndarray

    @property
    def world_vel(self) -> np.ndarray:
        return rotation(self.pose[2]) @ self.q

    def to_dict(self) -> dict:
        return {"x1": float(self.pose[0]), "x2": float(self.pose[1]), "x3": float(self.pose[2]),
                "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "BoundaryState":
        pose = np.array([d["x1"], d["x2"], d["x3"]], dtype=float)
        q = np.array(d.get("q", [0.0, 0.0, 0.0]), dtype=float)
        if q.shape != (3,):
            raise ValueError("q needs 3 components")
        return cls(pose, q)


def _box(data, name: str) -> Box:
    if isinstance(data, dict):
        if "lower" in data:
            return Box.from_dict(data)
        return Box(np.array([data[k][0] for k in ("x1", "x2", "x3")], dtype=float),
                   np.array([data[k][1] for k in ("x1", "x2", "x3")], dtype=float))
    half = np.asarray(data, dtype=float)
    if half.shape != (3,) or np.any(half <= 0):
        raise ValueError(f"{name} needs three positive half-widths")
    return Box.symmetric(half)


@dataclass
class Scenario:
    name: str
    workspace: Box
    velocity_limits: Box
    torque_limits: Box
    obstacles: list[np.ndarray]
    start: BoundaryState
    goal: BoundaryState
    gains: Gains
    ellipsoid: DisturbanceEllipsoid
    lattice: LatticeSpec
    footprint_radius: float = 0.0
    dt: float = 0.1
    description: str = ""
    extra: dict = field(default_factory=dict)

    def constraint_sets(self) -> ConstraintSets:
        return ConstraintSets(self.workspace, self.velocity_limits, self.torque_limits)

    def compute_tube(self, model: ELModel) -> TubeSpec:
        return compute_tube(self.gains, model, self.ellipsoid, self.velocity_limits, self.workspace)

    def prepare(self, model: ELModel) -> tuple[TubeSpec, ConstraintSets]:
        tube = self.compute_tube(model)
        return tube, tighten(self.constraint_sets(), tube, model)

    def with_overrides(self, **kw) -> "Scenario":
        data = self.to_dict()
        data.update(kw)
        return Scenario.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "workspace": self.workspace.to_dict(),
            "velocity_limits": self.velocity_limits.to_dict(),
            "torque_limits": self.torque_limits.to_dict(),
            "obstacles": [p.tolist() for p in self.obstacles],
            "start": self.start.to_dict(),
            "goal": self.goal.to_dict(),
            "gains": {"k1": self.gains.k1, "k2": self.gains.k2, "Gamma": self.gains.Gamma},
            "W_sqrt": self.ellipsoid.w_sqrt.tolist(),
            "lattice": self.lattice.to_dict(),
            "footprint_radius": self.footprint_radius,
            "dt": self.dt,
            **self.extra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = {"name", "description", "workspace", "velocity_limits", "torque_limits", "obstacles",
                 "start", "goal", "gains", "W_sqrt", "lattice", "footprint_radius", "dt"}
        try:
            g = d["gains"]
            gains_args = (float(g["k1"]), float(g["k2"]), float(g["Gamma"]))
            scen = dict(
                name=str(d.get("name", "scenario")),
                description=str(d.get("description", "")),
                workspace=_box(d["workspace"], "workspace"),
                velocity_limits=_box(d["velocity_limits"], "velocity_limits"),
                torque_limits=_box(d["torque_limits"], "torque_limits"),
                obstacles=[as_convex_polygon(p) for p in d.get("obstacles", [])],
                start=BoundaryState.from_dict(d["start"]),
                goal=BoundaryState.from_dict(d["goal"]),
                ellipsoid=DisturbanceEllipsoid(np.array(d["W_sqrt"], dtype=float)),
                lattice=LatticeSpec.from_dict(d.get("lattice", {})),
                footprint_radius=float(d.get("footprint_radius", 0.0)),
                dt=float(d.get("dt", 0.1)),
                extra={k: v for k, v in d.items() if k not in known},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed scenario: {exc!r}") from exc
        if scen["footprint_radius"] < 0 or not scen["dt"] > 0:
            raise ParseError("footprint_radius must be >= 0 and dt > 0")
        # gain-condition failures are configuration errors, not parse errors
        return cls(gains=Gains(*gains_args), **scen)


def load_scenario(path: str | Path | None = None) -> Scenario:
    """Load a scenario file; ``None`` or a packaged name ("demo", "corridor") loads a bundled one."""
    try:
        if path is None or str(path) in PACKAGED:
            fname = PACKAGED["demo" if path is None else str(path)]
            text = resources.files("robust_lattice.data").joinpath(fname).read_text()
        else:
            text = Path(path).read_text()
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("scenario file must hold a JSON object")
    return Scenario.from_dict(data)


def snap_state(state: BoundaryState, spec: LatticeSpec, label: str = "state") -> LatticeNode:
    """Map a boundary state to its lattice node, or raise SnapError with the nearest node."""
    fi, fj = state.pose[0] / spec.h, state.pose[1] / spec.h
    fh = state.pose[2] / spec.heading_pitch
    i, j, k = round(fi), round(fj), round(fh)
    speeds = np.array(spec.speed_levels)
    surge = float(state.q[0])
    s = int(np.argmin(np.abs(speeds - surge)))
    problems = []
    if abs(fi - i) * spec.h > SNAP_TOL or abs(fj - j) * spec.h > SNAP_TOL:
        problems.append(f"position ({state.pose[0]:.9g}, {state.pose[1]:.9g}) is off the {spec.h:g} m grid")
    if abs(fh - k) * spec.heading_pitch > SNAP_TOL:
        problems.append(f"heading {state.pose[2]:.9g} rad is not a multiple of 2*pi/{spec.n_headings}")
    if abs(speeds[s] - surge) > SNAP_TOL or np.any(np.abs(state.q[1:]) > SNAP_TOL):
        problems.append(f"body velocity {state.q.tolist()} is not pure surge at a lattice speed "
                        f"{list(spec.speed_levels)}")
    if problems:
        hint = (f"nearest node: x1={i * spec.h:g}, x2={j * spec.h:g}, "
                f"x3={spec.heading(k):.12g} (heading index {k % spec.n_headings}), "
                f"q=[{speeds[s]:.12g}, 0, 0]")
        raise SnapError(f"{label} is not on the lattice: {'; '.join(problems)}. Snap hint: {hint}")
    return LatticeNode(i, j, k % spec.n_headings, s)


def check_endpoints(scen: Scenario, tightened: ConstraintSets) -> None:
    for label, st in (("start", scen.start), ("goal", scen.goal)):
        if not tightened.pose_w.contains(st.pose):
            raise ConfigurationError(f"{label} pose {st.pose.tolist()} is outside the tightened workspace")
        if not tightened.velocity_w.contains(st.world_vel):
            raise ConfigurationError(f"{label} velocity is outside the tightened velocity box")
