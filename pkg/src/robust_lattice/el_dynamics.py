"""Euler-Lagrange surface-vessel model in world coordinates.

The body-frame model is

    M q' + Vm(q) q + F(q) q = tau + d,      x' = J(x3) q

and the world-frame form used everywhere else is

    x'' = Phi(x, x') + Theta(x) (tau + d).

All functions broadcast over leading dimensions: a pose of shape (..., 3)
returns results of shape (..., 3) or (..., 3, 3).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import IntegrationDivergedError, ModelValidityError, ParseError

KNOT = 0.5144  # m/s


@dataclass(frozen=True)
class ELModel:
    """Constant-inertia 3-DOF vessel.

    ``vm_coeffs = (c1, c2)`` parameterise the skew-symmetric Coriolis matrix
    ``[[0, 0, -c2 q2], [0, 0, c1 q1], [c2 q2, -c1 q1, 0]]``; with
    ``c1 = M[0,0]`` and ``c2 = M[1,1]`` this is the rigid-body plus added-mass
    form for a vessel with its centre of gravity at the body origin.
    Friction is ``F(q) = diag(f_lin + f_quad * |q|)``.
    """

    M: np.ndarray
    vm_coeffs: np.ndarray = field(default_factory=lambda: np.zeros(2))
    f_linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    f_quadratic: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = "unnamed"
    source: str = ""

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "vm_coeffs", np.asarray(self.vm_coeffs, dtype=float))
        object.__setattr__(self, "f_linear", np.asarray(self.f_linear, dtype=float))
        object.__setattr__(self, "f_quadratic", np.asarray(self.f_quadratic, dtype=float))
        if M.shape != (3, 3) or not np.all(np.isfinite(M)):
            raise ModelValidityError("M must be a finite 3x3 matrix")
        if not np.allclose(M, M.T, rtol=0, atol=1e-9 * np.abs(M).max()):
            raise ModelValidityError("M must be symmetric")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise ModelValidityError("M must be positive definite")
        if self.vm_coeffs.shape != (2,) or self.f_linear.shape != (3,) or self.f_quadratic.shape != (3,):
            raise ModelValidityError("Vm_coeffs needs 2 entries, F_coeffs linear/quadratic need 3 each")

    def Vm(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        c1, c2 = self.vm_coeffs
        out = np.zeros(q.shape[:-1] + (3, 3))
        out[..., 0, 2] = -c2 * q[..., 1]
        out[..., 1, 2] = c1 * q[..., 0]
        out[..., 2, 0] = c2 * q[..., 1]
        out[..., 2, 1] = -c1 * q[..., 0]
        return out

    def F(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        diag = self.f_linear + self.f_quadratic * np.abs(q)
        out = np.zeros(q.shape[:-1] + (3, 3))
        out[..., [0, 1, 2], [0, 1, 2]] = diag
        return out

    @property
    def mu_theta(self) -> float:
        """sup_x ||Theta(x)|| = ||M^-1|| since Theta = J M^-1 with J orthogonal."""
        return float(np.linalg.norm(np.linalg.inv(self.M), 2))

    @property
    def mu_Theta(self) -> float:
        """sup_x ||Theta(x)^-1|| = ||M||."""
        return float(np.linalg.norm(self.M, 2))

    def check_velocity_limits(self, velocity_limits) -> None:
        """Evaluate Vm and F at the corners of the body-velocity box."""
        lim = np.abs(np.asarray(velocity_limits, dtype=float))
        signs = np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).reshape(3, -1).T
        corners = signs * lim
        if not (np.all(np.isfinite(self.Vm(corners))) and np.all(np.isfinite(self.F(corners)))):
            raise ModelValidityError("Vm or F not finite inside the velocity limits")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source": self.source,
            "M": self.M.tolist(),
            "Vm_coeffs": self.vm_coeffs.tolist(),
            "F_coeffs": {"linear": self.f_linear.tolist(), "quadratic": self.f_quadratic.tolist()},
        }

    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in ("name", "source")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "ELModel":
        try:
            fc = data.get("F_coeffs", {})
            return cls(
                M=np.array(data["M"], dtype=float),
                vm_coeffs=np.array(data.get("Vm_coeffs", [0.0, 0.0]), dtype=float),
                f_linear=np.array(fc.get("linear", [0.0, 0.0, 0.0]), dtype=float),
                f_quadratic=np.array(fc.get("quadratic", [0.0, 0.0, 0.0]), dtype=float),
                name=str(data.get("name", "unnamed")),
                source=str(data.get("source", "")),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed model description: {exc!r}") from exc


def load_model(path: str | Path | None = None) -> ELModel:
    """Load a ship model JSON file; ``None`` loads the packaged default."""
    try:
        if path is None:
            text = resources.files("robust_lattice.data").joinpath("default_ship.json").read_text()
        else:
            text = Path(path).read_text()
        data = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"model file {path} must hold a JSON object")
    return ELModel.from_dict(data)


def rotation(x3) -> np.ndarray:
    """Yaw rotation J(x3) embedded in 3x3."""
    x3 = np.asarray(x3, dtype=float)
    c, s = np.cos(x3), np.sin(x3)
    J = np.zeros(x3.shape + (3, 3))
    J[..., 0, 0] = c
    J[..., 0, 1] = -s
    J[..., 1, 0] = s
    J[..., 1, 1] = c
    J[..., 2, 2] = 1.0
    return J


def rotation_derivative(x3) -> np.ndarray:
    """dJ/dx3."""
    x3 = np.asarray(x3, dtype=float)
    c, s = np.cos(x3), np.sin(x3)
    dJ = np.zeros(x3.shape + (3, 3))
    dJ[..., 0, 0] = -s
    dJ[..., 0, 1] = -c
    dJ[..., 1, 0] = c
    dJ[..., 1, 1] = -s
    return dJ


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


def _starred(pose, world_vel, model: ELModel):
    pose = np.asarray(pose, dtype=float)
    world_vel = np.asarray(world_vel, dtype=float)
    J = rotation(pose[..., 2])
    JinvT = J  # J is a rotation, so J^-1 = J^T
    Jinv = np.swapaxes(J, -1, -2)
    Jdot = world_vel[..., 2, None, None] * rotation_derivative(pose[..., 2])
    q = _mv(Jinv, world_vel)
    M = model.M
    M_star = JinvT @ M @ Jinv
    # Fossen's form: the kinematic term carries M (Vm - M J^-1 Jdot)
    V_star = JinvT @ (model.Vm(q) - M @ Jinv @ Jdot) @ Jinv
    F_star = JinvT @ model.F(q) @ Jinv
    return M_star, V_star, F_star, JinvT


def phi(pose, world_vel, model: ELModel) -> np.ndarray:
    """Drift term Phi(x, x') of the world-frame dynamics (gravity is zero)."""
    world_vel = np.asarray(world_vel, dtype=float)
    M_star, V_star, F_star, _ = _starred(pose, world_vel, model)
    rhs = _mv(V_star, world_vel) + _mv(F_star, world_vel)
    return -np.linalg.solve(M_star, rhs[..., None])[..., 0]


def theta(pose, model: ELModel) -> np.ndarray:
    """Input matrix Theta(x) = M*^-1 J^-T."""
    pose = np.asarray(pose, dtype=float)
    M_star, _, _, JinvT = _starred(pose, np.zeros_like(pose), model)
    return np.linalg.solve(M_star, JinvT)


def forward_dynamics(pose, world_vel, torque, disturbance=None, model: ELModel | None = None) -> np.ndarray:
    if model is None:
        raise TypeError("model is required")
    u = np.asarray(torque, dtype=float)
    if disturbance is not None:
        u = u + np.asarray(disturbance, dtype=float)
    return phi(pose, world_vel, model) + _mv(theta(pose, model), u)


def inverse_dynamics(pose, world_vel, world_acc, model: ELModel) -> np.ndarray:
    """Computed torque tau = Theta^-1 (x'' - Phi)."""
    v = np.asarray(world_acc, dtype=float) - phi(pose, world_vel, model)
    return np.linalg.solve(theta(pose, model), v[..., None])[..., 0]


def integrate_step(
    state: tuple[np.ndarray, np.ndarray],
    accel_fn: Callable[[float, np.ndarray, np.ndarray], np.ndarray],
    dt: float,
    t: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """One classical RK4 step of x'' = accel_fn(t, x, x')."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, v = (np.asarray(s, dtype=float) for s in state)
    h2 = 0.5 * dt
    a1 = accel_fn(t, x, v)
    x2, v2 = x + h2 * v, v + h2 * a1
    a2 = accel_fn(t + h2, x2, v2)
    x3, v3 = x + h2 * v2, v + h2 * a2
    a3 = accel_fn(t + h2, x3, v3)
    x4, v4 = x + dt * v3, v + dt * a3
    a4 = accel_fn(t + dt, x4, v4)
    x_new = x + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    v_new = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(v_new))):
        raise IntegrationDivergedError(f"non-finite state after step at t={t:.6g}")
    return x_new, v_new


def body_dynamics(q, torque, model: ELModel) -> np.ndarray:
    """q' from the body-frame equations. Used as an independent check on Phi/Theta."""
    q = np.asarray(q, dtype=float)
    rhs = np.asarray(torque, dtype=float) - _mv(model.Vm(q), q) - _mv(model.F(q), q)
    return np.linalg.solve(model.M, rhs[..., None])[..., 0]
