"""Error-feedback law, ultimate bounds (tube radii) and constraint tightening."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .el_dynamics import ELModel, phi
from .errors import GainConditionError, InfeasibleTighteningError, ModelValidityError

AXES = ("x1", "x2", "x3")


@dataclass(frozen=True)
class Gains:
    k1: float
    k2: float
    Gamma: float

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.Gamma > 0):
            raise GainConditionError(
                f"gains must be positive (k1={self.k1}, k2={self.k2}, Gamma={self.Gamma})"
            )
        # relative margin so that Gamma == k1*k2 in decimal (0.1*0.1 vs 0.01) is still rejected
        if not self.k1 * self.k2 - self.Gamma > 1e-12 * self.k1 * self.k2:
            raise GainConditionError(
                f"gain condition k1*k2 > Gamma violated: k1*k2 = {self.k1 * self.k2:.6g} "
                f"<= Gamma = {self.Gamma:.6g}"
            )


@dataclass(frozen=True)
class DisturbanceEllipsoid:
    """Admissible set {d : ||diag(w_sqrt) d|| <= 1}."""

    w_sqrt: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w_sqrt, dtype=float)
        if w.ndim == 2:
            if np.count_nonzero(w - np.diag(np.diag(w))):
                raise ValueError("W^(1/2) must be diagonal")
            w = np.diag(w).copy()
        if w.shape != (3,) or not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("W^(1/2) needs three positive finite diagonal entries")
        object.__setattr__(self, "w_sqrt", w)

    @property
    def semi_axes(self) -> np.ndarray:
        return 1.0 / self.w_sqrt

    def w_norm(self, d) -> np.ndarray:
        """||d||_W = ||W^(1/2) d||, broadcast over leading dimensions."""
        return np.linalg.norm(np.asarray(d, dtype=float) * self.w_sqrt, axis=-1)

    def scaled(self, factor: float) -> "DisturbanceEllipsoid":
        """Ellipsoid whose semi-axes are multiplied by ``factor``."""
        return DisturbanceEllipsoid(self.w_sqrt / factor)


def disturbance_sup(ellipsoid: DisturbanceEllipsoid) -> float:
    """Largest 2-norm over the ellipsoid: its longest semi-axis."""
    return float(np.max(ellipsoid.semi_axes))


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError("box bounds must have equal shape")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, half_widths) -> "Box":
        h = np.asarray(half_widths, dtype=float)
        return cls(-h, h)

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    def contains(self, points, strict: bool = False) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if strict:
            return np.all((p > self.lower) & (p < self.upper), axis=-1)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)

    def erode(self, radius: float, label: str = "box", axis_names=AXES) -> "Box":
        """Minkowski difference with a ball of ``radius`` (per-interval erosion)."""
        lo, hi = self.lower + radius, self.upper - radius
        bad = lo > hi
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise InfeasibleTighteningError(
                f"tightened {label} is empty: interval {axis_names[idx]} = "
                f"[{self.lower[idx]:.6g}, {self.upper[idx]:.6g}] cannot absorb radius {radius:.6g}",
                constraint=f"{label}.{axis_names[idx]}",
            )
        return Box(lo, hi)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data) -> "Box":
        return cls(np.array(data["lower"], dtype=float), np.array(data["upper"], dtype=float))


@dataclass(frozen=True)
class ConstraintSets:
    """Pose box X, velocity box Xdot, torque box U, and tightened versions once computed."""

    pose: Box
    velocity: Box
    torque: Box
    pose_w: Box | None = None
    velocity_w: Box | None = None
    torque_w: Box | None = None

    @property
    def is_tightened(self) -> bool:
        return self.pose_w is not None


@dataclass(frozen=True)
class TubeSpec:
    k1: float
    k2: float
    Gamma: float
    mu_theta: float
    mu_Theta: float
    d_bar: float
    D: float
    C1: float
    C2: float
    C3: float
    r_x: float
    r_v: float
    r_r: float
    rho_v: float
    g1: float
    g2: float

    @property
    def position_radius(self) -> float:
        """Radius of the (x1, x2) projection of the error ball; used to inflate obstacles."""
        return self.r_x

    @property
    def torque_margin(self) -> float:
        return self.mu_Theta * self.rho_v

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TubeSpec":
        return cls(**{k: float(data[k]) for k in cls.__dataclass_fields__})

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def bound_constants(gains: Gains) -> tuple[float, float, float]:
    """(C1, C2, C3) of the ultimate bounds ||x~|| <= C1 D, ||r|| <= C2 D, ||x~'|| <= C3 D."""
    k1, k2, G = gains.k1, gains.k2, gains.Gamma
    C1 = 1.0 / math.sqrt(G * k1 * k2)
    C2 = math.sqrt(k1 / (k1 * k2**2 - k2 * G))
    return C1, C2, k1 * C1 + C2


def estimate_g1_g2(
    model: ELModel,
    workspace_box: Box,
    velocity_box: Box,
    n_samples: int = 512,
    fd_step: float = 1e-6,
    safety: float = 1.1,
    seed: int = 0,
) -> tuple[float, float]:
    """Sampled Lipschitz constants of Phi in x and in x' (central differences).

    Samples are uniform in X x Xdot plus every velocity-box corner paired with
    a spread of headings, since drag-type terms peak at the corners.
    """
    rng = np.random.default_rng(seed)
    u = rng.random((n_samples, 6))
    lo = np.concatenate([workspace_box.lower, velocity_box.lower])
    hi = np.concatenate([workspace_box.upper, velocity_box.upper])
    z = lo + u * (hi - lo)
    signs = np.array(np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij")).reshape(3, -1).T
    corners = np.where(signs == 1, velocity_box.upper, velocity_box.lower)
    headings = np.linspace(workspace_box.lower[2], workspace_box.upper[2], 17)
    cz = np.zeros((len(corners) * len(headings), 6))
    cz[:, :3] = 0.5 * (workspace_box.lower + workspace_box.upper)
    cz[:, 2] = np.repeat(headings, len(corners))
    cz[:, 3:] = np.tile(corners, (len(headings), 1))
    z = np.concatenate([z, cz])

    jac = np.empty((len(z), 3, 6))
    for k in range(6):
        h = fd_step * np.maximum(1.0, np.abs(z[:, k]))
        zp, zm = z.copy(), z.copy()
        zp[:, k] += h
        zm[:, k] -= h
        diff = phi(zp[:, :3], zp[:, 3:], model) - phi(zm[:, :3], zm[:, 3:], model)
        jac[:, :, k] = diff / (2.0 * h[:, None])
    if not np.all(np.isfinite(jac)):
        raise ModelValidityError("non-finite partial derivatives of Phi")
    g1 = np.linalg.norm(jac[:, :, :3], 2, axis=(1, 2)).max()
    g2 = np.linalg.norm(jac[:, :, 3:], 2, axis=(1, 2)).max()
    return safety * float(g1), safety * float(g2)


def compute_tube(
    gains: Gains,
    model: ELModel,
    ellipsoid: DisturbanceEllipsoid,
    velocity_box: Box,
    workspace_box: Box,
    **g_options,
) -> TubeSpec:
    # Gains validates k1 k2 > Gamma on construction; re-check in case of duck-typed input.
    if not gains.k1 * gains.k2 > gains.Gamma:
        raise GainConditionError(f"gain condition k1*k2 > Gamma violated for {gains}")
    C1, C2, C3 = bound_constants(gains)
    mu_theta = model.mu_theta
    d_bar = disturbance_sup(ellipsoid)
    D = mu_theta * d_bar
    g1, g2 = estimate_g1_g2(model, workspace_box, velocity_box, **g_options)
    r_x, r_r = C1 * D, C2 * D
    r_v = gains.k1 * r_x + r_r
    rho_v = (g1 + gains.k1 * gains.k2) * r_x + (g2 + gains.k1 + gains.k2) * r_v
    return TubeSpec(
        k1=gains.k1, k2=gains.k2, Gamma=gains.Gamma,
        mu_theta=mu_theta, mu_Theta=model.mu_Theta,
        d_bar=d_bar, D=D, C1=C1, C2=C2, C3=C3,
        r_x=r_x, r_v=r_v, r_r=r_r, rho_v=rho_v, g1=g1, g2=g2,
    )


def tighten(constraints: ConstraintSets, tube: TubeSpec, model: ELModel | None = None) -> ConstraintSets:
    """Erode X by r_x, Xdot by r_v and each torque interval by mu_Theta * rho_v."""
    mu_Theta = model.mu_Theta if model is not None else tube.mu_Theta
    return ConstraintSets(
        pose=constraints.pose,
        velocity=constraints.velocity,
        torque=constraints.torque,
        pose_w=constraints.pose.erode(tube.r_x, "pose box"),
        velocity_w=constraints.velocity.erode(tube.r_v, "velocity box"),
        torque_w=constraints.torque.erode(mu_Theta * tube.rho_v, "torque box", ("tau1", "tau2", "tau3")),
    )


def feedback_control(x_err, v_err, nominal_pose, nominal_vel, gains: Gains, model: ELModel) -> np.ndarray:
    """v~ = -(Phi(x, x') - Phi(xbar, xbar')) - k1 k2 x~ - (k1 + k2) x~'."""
    x_err = np.asarray(x_err, dtype=float)
    v_err = np.asarray(v_err, dtype=float)
    nominal_pose = np.asarray(nominal_pose, dtype=float)
    nominal_vel = np.asarray(nominal_vel, dtype=float)
    phi_tilde = phi(nominal_pose + x_err, nominal_vel + v_err, model) - phi(nominal_pose, nominal_vel, model)
    return -phi_tilde - gains.k1 * gains.k2 * x_err - (gains.k1 + gains.k2) * v_err


def filtered_error(x_err, v_err, gains: Gains) -> np.ndarray:
    return np.asarray(v_err) + gains.k1 * np.asarray(x_err)


def lyapunov_value(x_err, v_err, gains: Gains) -> np.ndarray:
    r = filtered_error(x_err, v_err, gains)
    return np.sum(r * r, axis=-1) + gains.Gamma * np.sum(np.asarray(x_err) ** 2, axis=-1)


def lyapunov_rate(x_err, v_err, gains: Gains, D: float) -> np.ndarray:
    """Upper bound on dV/dt: -(k2 - Gamma/k1)||r||^2 - Gamma k1 ||x~||^2 + D^2/k2."""
    r = filtered_error(x_err, v_err, gains)
    rr = np.sum(r * r, axis=-1)
    xx = np.sum(np.asarray(x_err) ** 2, axis=-1)
    return -(gains.k2 - gains.Gamma / gains.k1) * rr - gains.Gamma * gains.k1 * xx + D**2 / gains.k2


def decrease_predicate(x_err, v_err, gains: Gains, D: float) -> np.ndarray:
    """True where (k2 - Gamma/k1)||r||^2 + Gamma k1 ||x~||^2 >= D^2/k2, i.e. V is certified non-increasing."""
    return lyapunov_rate(x_err, v_err, gains, D) <= 0.0
