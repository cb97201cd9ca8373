"""Closed-loop execution of a plan on the disturbed plant, and run certification.

Runs for several seeds are integrated together: every state array carries a
leading seed axis, and the controller is re-evaluated at every RK4 stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .el_dynamics import ELModel, phi, theta
from .errors import IntegrationDivergedError
from .geometry import segment_distance_to_polygon
from .planner import NominalTrajectory
from .tube import Box, DisturbanceEllipsoid, Gains, TubeSpec, decrease_predicate, feedback_control, lyapunov_value

PROFILE_KINDS = ("constant-worst-case", "rotating-extreme", "filtered-noise", "zero")
LYAPUNOV_RTOL = 1e-6
W_NORM_TOL = 1e-9


@dataclass(frozen=True)
class DisturbanceProfile:
    """Disturbance generator settings.

    constant-worst-case: fixed body-frame d on the ellipsoid boundary along
        ``direction`` (default: the longest semi-axis).
    rotating-extreme: unit-W-norm d rotating in a seeded random plane with
        period ``period`` s.
    filtered-noise: seeded sums of sinusoids below ``cutoff`` Hz, clipped
        into the ellipsoid.
    ``scale`` multiplies the final signal; values above 1 leave the
    admissible set on purpose (diagnostic runs only).
    """

    kind: str = "filtered-noise"
    seed: int = 0
    period: float = 60.0
    cutoff: float = 0.02
    n_components: int = 8
    direction: tuple[float, float, float] | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}; choose from {PROFILE_KINDS}")
        if not (self.period > 0 and self.cutoff > 0 and self.n_components >= 1 and self.scale >= 0):
            raise ValueError("period, cutoff, n_components and scale must be positive")

    def with_seed(self, seed: int) -> "DisturbanceProfile":
        return DisturbanceProfile(self.kind, seed, self.period, self.cutoff, self.n_components,
                                  self.direction, self.scale)


def _unit_w(u: np.ndarray, ell: DisturbanceEllipsoid) -> np.ndarray:
    return u / ell.w_norm(u)[..., None]


def make_disturbance(profile: DisturbanceProfile, ellipsoid: DisturbanceEllipsoid) -> Callable:
    """Return d(t): scalar t -> (3,), array t of shape (N,) -> (N, 3)."""
    batch = make_disturbance_batch([profile], ellipsoid)

    def d(t):
        t_arr = np.asarray(t, dtype=float)
        out = batch(t_arr.reshape(-1))[:, 0, :]
        return out[0] if t_arr.ndim == 0 else out.reshape(t_arr.shape + (3,))

    return d


def make_disturbance_batch(profiles: list[DisturbanceProfile], ellipsoid: DisturbanceEllipsoid) -> Callable:
    """Vectorised generator for several profiles: t of shape (N,) -> (N, B, 3)."""
    ell = ellipsoid
    B = len(profiles)
    const = np.zeros((B, 3))  # zero and constant-worst-case profiles
    rot = {"idx": [], "e1": [], "e2": [], "w": [], "ph": [], "s": []}
    noise: dict[int, dict[str, list]] = {}  # grouped by component count
    for b, p in enumerate(profiles):
        rng = np.random.default_rng(p.seed)
        if p.kind == "constant-worst-case":
            if p.direction is None:
                u = np.zeros(3)
                u[int(np.argmax(ell.semi_axes))] = 1.0
            else:
                u = np.asarray(p.direction, dtype=float)
            const[b] = p.scale * _unit_w(u, ell)
        elif p.kind == "rotating-extreme":
            q, _ = np.linalg.qr(rng.standard_normal((3, 2)))
            for key, val in zip(rot, (b, q[:, 0], q[:, 1], 2 * math.pi / p.period,
                                      rng.uniform(0, 2 * math.pi), p.scale)):
                rot[key].append(val)
        elif p.kind == "filtered-noise":
            K = p.n_components
            freqs = rng.uniform(0.1 * p.cutoff, p.cutoff, (3, K))
            phases = rng.uniform(0, 2 * math.pi, (3, K))
            amps = rng.uniform(0.2, 1.0, (3, K))
            amps /= amps.sum(axis=1, keepdims=True)
            g = noise.setdefault(K, {"idx": [], "f": [], "ph": [], "a": [], "s": []})
            for key, val in zip(g, (b, freqs, phases, amps, p.scale)):
                g[key].append(val)
    rot = {k: np.array(v) for k, v in rot.items()}
    noise = {K: {k: np.array(v) for k, v in g.items()} for K, g in noise.items()}

    def d(t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.repeat(const[None], len(t), axis=0)
        if len(rot["idx"]):
            arg = rot["w"] * t[:, None] + rot["ph"]
            u = np.cos(arg)[..., None] * rot["e1"] + np.sin(arg)[..., None] * rot["e2"]
            out[:, rot["idx"]] = rot["s"][:, None] * _unit_w(u, ell)
        for g in noise.values():
            z = np.einsum("bck,nbck->nbc", g["a"], np.sin(2 * math.pi * g["f"] * t[:, None, None, None] + g["ph"]))
            z /= np.maximum(1.0, np.linalg.norm(z, axis=-1))[..., None]
            out[:, g["idx"]] = g["s"][:, None] * z / ell.w_sqrt
        return out

    return d


@dataclass
class RunLog:
    """Per-sample records of one run (arrays indexed by sample)."""

    seed: int
    t: np.ndarray
    nominal_pose: np.ndarray
    nominal_vel: np.ndarray
    pose: np.ndarray
    vel: np.ndarray
    x_err: np.ndarray
    v_err: np.ndarray
    tau: np.ndarray
    d: np.ndarray
    V: np.ndarray
    predicate: np.ndarray
    d_w_norm: np.ndarray
    model_err: np.ndarray | None = None
    model_verr: np.ndarray | None = None

    @property
    def n_records(self) -> int:
        return len(self.t)

    def summary(self) -> dict:
        xe = np.linalg.norm(self.x_err, axis=1)
        ve = np.linalg.norm(self.v_err, axis=1)
        return {
            "seed": self.seed,
            "max_x_err": float(xe.max()),
            "max_v_err": float(ve.max()),
            "terminal_error": float(np.linalg.norm(self.pose[-1] - self.nominal_pose[-1])),
            "max_d_w_norm": float(self.d_w_norm.max()),
        }

    def to_csv(self, path: str | Path) -> None:
        cols = [self.t[:, None], self.nominal_pose, self.nominal_vel, self.pose, self.vel,
                self.x_err, self.v_err, self.tau, self.d, self.V[:, None],
                self.predicate[:, None].astype(float)]
        header = ("t,xbar1,xbar2,xbar3,dxbar1,dxbar2,dxbar3,x1,x2,x3,dx1,dx2,dx3,"
                  "xerr1,xerr2,xerr3,verr1,verr2,verr3,tau1,tau2,tau3,d1,d2,d3,V,decrease_predicate")
        np.savetxt(path, np.hstack(cols), delimiter=",", fmt="%.12g", header=header, comments="")


def run_batch(
    traj: NominalTrajectory,
    model: ELModel,
    gains: Gains,
    tube: TubeSpec,
    disturbance: Callable,
    dt: float | None = None,
    duration: float | None = None,
    ellipsoid: DisturbanceEllipsoid | None = None,
    seeds: list[int] | None = None,
    error_model: bool = False,
    initial_error: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[RunLog]:
    """Simulate B runs of the plant under tau = Theta(x)^-1 (vbar + v~).

    Runs start on the nominal trajectory unless ``initial_error`` gives
    (x~(0), x~'(0)), each of shape (3,) or (B, 3). The containment bounds
    assume a zero initial error; offsets are for exercising the Lyapunov check.

    ``disturbance`` maps times (N,) to (N, B, 3). With ``error_model`` the
    linear error system x~'' = -k1 k2 x~ - (k1 + k2) x~' + Theta(x) d is
    integrated alongside, fed by the same RK4 stage signals.
    """
    dt = traj.dt if dt is None else dt
    T = traj.duration if duration is None else duration
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"duration {T} is not a multiple of dt={dt}")
    B = disturbance(np.zeros(1)).shape[1]
    seeds = list(range(B)) if seeds is None else list(seeds)
    k1, k2 = gains.k1, gains.k2

    x0, v0, _ = traj.reference(0.0)
    x = np.repeat(x0, B, axis=0)
    v = np.repeat(v0, B, axis=0)
    e = np.zeros((B, 3))
    ed = np.zeros((B, 3))
    if initial_error is not None:
        e = e + np.asarray(initial_error[0], dtype=float)
        ed = ed + np.asarray(initial_error[1], dtype=float)
        x, v = x + e, v + ed

    def stage(t, x, v, e=None, ed=None):
        xb, vb, ab = traj.reference(t)
        vbar = ab - phi(xb, vb, model)
        xe, ve = x - xb, v - vb
        vt = feedback_control(xe, ve, xb, vb, gains, model)
        th = theta(x, model)
        tau = np.linalg.solve(th, (vbar + vt)[..., None])[..., 0]
        d = disturbance(np.array([t]))[0]
        thd = np.einsum("bij,bj->bi", th, d)
        acc = phi(x, v, model) + np.einsum("bij,bj->bi", th, tau + d)
        eacc = None if e is None else -k1 * k2 * e - (k1 + k2) * ed + thd
        return acc, eacc, tau, d, xb, vb

    rec = {k: np.zeros((n + 1, B, 3)) for k in ("xb", "vb", "x", "v", "tau", "d", "e", "ed")}
    h2 = 0.5 * dt
    for k in range(n + 1):
        t = k * dt
        a1, ea1, tau, d, xb, vb = stage(t, x, v, e, ed)
        rec["xb"][k], rec["vb"][k], rec["x"][k], rec["v"][k] = xb, vb, x, v
        rec["tau"][k], rec["d"][k], rec["e"][k], rec["ed"][k] = tau, d, e, ed
        if k == n:
            break
        em = error_model
        x2, v2 = x + h2 * v, v + h2 * a1
        e2, ed2 = (e + h2 * ed, ed + h2 * ea1) if em else (None, None)
        a2, ea2, *_ = stage(t + h2, x2, v2, e2, ed2)
        x3, v3 = x + h2 * v2, v + h2 * a2
        e3, ed3 = (e + h2 * ed2, ed + h2 * ea2) if em else (None, None)
        a3, ea3, *_ = stage(t + h2, x3, v3, e3, ed3)
        x4, v4 = x + dt * v3, v + dt * a3
        e4, ed4 = (e + dt * ed3, ed + dt * ea3) if em else (None, None)
        a4, ea4, *_ = stage(t + dt, x4, v4, e4, ed4)
        x = x + dt / 6 * (v + 2 * v2 + 2 * v3 + v4)
        v = v + dt / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        if em:
            e, ed = e + dt / 6 * (ed + 2 * ed2 + 2 * ed3 + ed4), ed + dt / 6 * (ea1 + 2 * ea2 + 2 * ea3 + ea4)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise IntegrationDivergedError(f"non-finite plant state at t={t + dt:.6g}")

    t_arr = np.arange(n + 1) * dt
    xe = rec["x"] - rec["xb"]
    ve = rec["v"] - rec["vb"]
    V = lyapunov_value(xe, ve, gains)
    pred = decrease_predicate(xe, ve, gains, tube.D)
    dw = ellipsoid.w_norm(rec["d"]) if ellipsoid is not None else np.full((n + 1, B), np.nan)
    logs = []
    for b in range(B):
        logs.append(RunLog(
            seeds[b], t_arr, rec["xb"][:, b], rec["vb"][:, b], rec["x"][:, b], rec["v"][:, b],
            xe[:, b], ve[:, b], rec["tau"][:, b], rec["d"][:, b], V[:, b], pred[:, b], dw[:, b],
            rec["e"][:, b].copy() if error_model else None, rec["ed"][:, b].copy() if error_model else None,
        ))
    return logs


def run_closed_loop(traj, model, gains, tube, disturbance: Callable, dt=None, ellipsoid=None, **kw) -> RunLog:
    """Single run; ``disturbance`` is a d(t) function as returned by make_disturbance."""

    def batched(t):
        return np.asarray(disturbance(t), dtype=float).reshape(len(t), 1, 3)

    return run_batch(traj, model, gains, tube, batched, dt, ellipsoid=ellipsoid, **kw)[0]


@dataclass
class CertificationReport:
    seed: int
    checks: dict[str, dict]
    attribution: str = ""
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())

    def failures(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c["passed"]]

    def to_dict(self) -> dict:
        return {"seed": self.seed, "passed": self.passed, "checks": self.checks,
                "attribution": self.attribution, "summary": self.summary}


def lyapunov_violations(log: RunLog, rtol: float = LYAPUNOV_RTOL) -> np.ndarray:
    """Steps where the decrease predicate holds at both ends yet V grew by more than rtol * V."""
    both = log.predicate[:-1] & log.predicate[1:]
    dV = np.diff(log.V)
    return np.flatnonzero(both & (dV > rtol * log.V[:-1]))


def min_clearance(positions: np.ndarray, obstacles) -> float:
    """Smallest distance from the sampled polyline to any obstacle (0 on contact)."""
    if not obstacles:
        return math.inf
    a, b = positions[:-1], positions[1:]
    if len(a) == 0:
        a = b = positions
    return float(min(segment_distance_to_polygon(a, b, poly).min() for poly in obstacles))


def certify(
    log: RunLog,
    tube: TubeSpec,
    obstacles,
    torque_box: Box,
    footprint_radius: float = 0.0,
    workspace: Box | None = None,
) -> CertificationReport:
    """Check containment, clearance, Lyapunov consistency and torque admissibility for one run."""
    C1D, C3D = tube.C1 * tube.D, tube.C3 * tube.D
    s = log.summary()
    clearance = min_clearance(log.pose[:, :2], obstacles)
    s["min_clearance"] = clearance
    bad_tau = ~torque_box.contains(log.tau)
    s["torque_violations"] = int(bad_tau.sum())
    lyap = lyapunov_violations(log)
    s["lyapunov_steps_checked"] = int((log.predicate[:-1] & log.predicate[1:]).sum())
    checks = {
        "containment": {
            "passed": s["max_x_err"] <= C1D and s["max_v_err"] <= C3D and s["terminal_error"] <= C1D,
            "max_x_err": s["max_x_err"], "limit_x": C1D,
            "max_v_err": s["max_v_err"], "limit_v": C3D,
            "terminal_error": s["terminal_error"],
        },
        "clearance": {
            "passed": clearance >= footprint_radius and clearance > 0.0,
            "min_clearance": clearance, "required": footprint_radius,
        },
        "lyapunov": {"passed": len(lyap) == 0, "violating_steps": lyap[:10].tolist()},
        "torque": {"passed": s["torque_violations"] == 0, "violations": s["torque_violations"]},
    }
    if workspace is not None:
        inside = workspace.contains(log.pose)
        checks["workspace"] = {"passed": bool(inside.all()), "samples_outside": int((~inside).sum())}
    attribution = ""
    failed = [k for k, c in checks.items() if not c["passed"]]
    if failed:
        if np.nanmax(log.d_w_norm) > 1 + W_NORM_TOL:
            attribution = (f"disturbance outside the admissible set (max ||W^1/2 d|| = "
                           f"{np.nanmax(log.d_w_norm):.6g} > 1); the bounds do not apply to this run")
        else:
            attribution = "admissible disturbance; failure is not explained by the disturbance bound"
    return CertificationReport(log.seed, checks, attribution, s)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def aggregate_report(reports: list[CertificationReport], tube: TubeSpec, profile: DisturbanceProfile) -> dict:
    failed = [r for r in reports if not r.passed]
    return _jsonable({
        "passed": not failed,
        "n_runs": len(reports),
        "n_failed": len(failed),
        "failed_seeds": [r.seed for r in failed],
        "profile": {"kind": profile.kind, "scale": profile.scale, "period": profile.period,
                    "cutoff": profile.cutoff},
        "bounds": {"C1D": tube.C1 * tube.D, "C3D": tube.C3 * tube.D},
        "max_x_err": max((r.summary["max_x_err"] for r in reports), default=0.0),
        "max_v_err": max((r.summary["max_v_err"] for r in reports), default=0.0),
        "runs": [r.to_dict() for r in reports],
    })


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
