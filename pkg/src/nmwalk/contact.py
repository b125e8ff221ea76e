"""Compliant ground contact: piecewise-constant terrain, spring-damper normal
force and velocity-regularized Coulomb friction.

The normal force follows the classic nonlinear law f_z = k_z * depth *
(1 - vz / v_relax), clamped non-negative, so it stiffens while penetrating and
releases before the point leaves the ground. Friction is Coulomb with a smooth
stick regularization, f_x = -mu * f_z * tanh(vx / v_slip): inside |vx| < v_slip
it acts as a stiff viscous "stick" band, outside it saturates at the sliding
cone. The tangential force therefore never exceeds mu times the normal force.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Any

import numpy as np

from .body import CONTACT_POINT_NAMES, BipedModel, ContactForce, ModelState


@dataclass(frozen=True)
class Terrain:
    """Piecewise-constant ground height: sorted (x_start, height) breakpoints.

    The profile is height[i] for x >= x_start[i]; the first breakpoint should
    cover -inf (use a very negative x_start). ``flat()`` and ``with_drop()``
    build the two profiles used by the walking protocols.
    """

    breakpoints: tuple[tuple[float, float], ...] = ((-1e12, 0.0),)

    def __post_init__(self) -> None:
        xs = [b[0] for b in self.breakpoints]
        if sorted(xs) != xs:
            raise ValueError("terrain breakpoints must be sorted by x")
        if not all(np.isfinite(h) for _, h in self.breakpoints):
            raise ValueError("terrain heights must be finite")

    @staticmethod
    def flat(height: float = 0.0) -> "Terrain":
        return Terrain(((-1e12, height),))

    @staticmethod
    def with_drop(x_drop: float, depth: float) -> "Terrain":
        """Single downward step of ``depth`` (positive number) at x_drop."""
        return Terrain(((-1e12, 0.0), (x_drop, -abs(depth))))

    def height_at(self, x: float) -> float:
        xs = [b[0] for b in self.breakpoints]
        i = bisect_right(xs, x) - 1
        return self.breakpoints[max(i, 0)][1]

    def heights(self, x: np.ndarray) -> np.ndarray:
        xs = np.array([b[0] for b in self.breakpoints])
        hs = np.array([b[1] for b in self.breakpoints])
        idx = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(hs) - 1)
        return hs[idx]


@dataclass(frozen=True)
class ContactParams:
    stiffness_z: float = 81500.0
    max_relax_vz: float = 0.03
    mu: float = 0.9
    v_slip: float = 0.01

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "ContactParams":
        return cls(stiffness_z=cfg["stiffness_z"], max_relax_vz=cfg["max_relax_vz"],
                   mu=cfg["mu"], v_slip=cfg["v_slip"])


def contact_forces_raw(points: np.ndarray, velocities: np.ndarray,
                       ground_heights: np.ndarray,
                       p: ContactParams) -> np.ndarray:
    """Vectorized contact law: (n,2) points/velocities -> (n,2) forces.

    Total function: points above ground produce exactly zero force.
    """
    depth = ground_heights - points[:, 1]
    fz = np.where(depth > 0.0,
                  p.stiffness_z * depth * (1.0 - velocities[:, 1] / p.max_relax_vz),
                  0.0)
    np.maximum(fz, 0.0, out=fz)
    fx = -p.mu * fz * np.tanh(velocities[:, 0] / p.v_slip)
    return np.column_stack((fx, fz))


def ground_contact(model: BipedModel, state: ModelState, terrain: Terrain,
                   params: ContactParams) -> list[ContactForce]:
    """Contact forces at heel and ball of both feet for the given state."""
    k = model.kinematics(state.q, state.qd)
    gh = terrain.heights(k.points[:, 0])
    forces = contact_forces_raw(k.points, k.pointv, gh, params)
    out: list[ContactForce] = []
    for i, name in enumerate(CONTACT_POINT_NAMES):
        if forces[i, 1] > 0.0:
            out.append(ContactForce(point=name, position=k.points[i].copy(),
                                    force=forces[i].copy()))
    return out
