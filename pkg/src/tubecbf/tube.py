"""Time-varying spherical tube: basis-expanded center/radius curves plus the
unit-sphere parameterization used to enumerate tube trajectories."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .basis import BernsteinBasis, MonomialBasis, make_basis

Basis = Union[MonomialBasis, BernsteinBasis]

_RANGE_SLACK = 1e-9


@dataclass(frozen=True)
class Tube:
    """Ball-valued tube t -> B(center(t), radius(t)) on [0, t_f].

    Positivity of the radius is not assumed here; it is certified by the
    synthesis layer.
    """

    center_coeffs: np.ndarray  # (n, z_c)
    radius_coeffs: np.ndarray  # (z_r,)
    center_basis: Basis
    radius_basis: Basis

    def __post_init__(self):
        qc = np.array(self.center_coeffs, dtype=float)
        qr = np.array(self.radius_coeffs, dtype=float)
        if qc.ndim != 2:
            raise ValueError("center coefficients must be (n, z_c)")
        if qr.ndim != 1:
            raise ValueError("radius coefficients must be (z_r,)")
        if qc.shape[1] != self.center_basis.count:
            raise ValueError("center coefficient count does not match basis")
        if qr.shape[0] != self.radius_basis.count:
            raise ValueError("radius coefficient count does not match basis")
        if self.center_basis.t_f != self.radius_basis.t_f:
            raise ValueError("center and radius bases must share t_f")
        qc.setflags(write=False)
        qr.setflags(write=False)
        object.__setattr__(self, "center_coeffs", qc)
        object.__setattr__(self, "radius_coeffs", qr)

    @property
    def dimension(self) -> int:
        return self.center_coeffs.shape[0]

    @property
    def t_f(self) -> float:
        return self.center_basis.t_f

    def _check_time(self, t: float) -> float:
        if t < -_RANGE_SLACK or t > self.t_f + _RANGE_SLACK:
            raise ValueError(f"time {t} outside tube domain [0, {self.t_f}]")
        return min(max(t, 0.0), self.t_f)

    def center(self, t: float) -> np.ndarray:
        return self.center_coeffs @ self.center_basis.values(self._check_time(t))

    def center_dot(self, t: float) -> np.ndarray:
        return self.center_coeffs @ self.center_basis.derivatives(self._check_time(t))

    def radius(self, t: float) -> float:
        return float(self.radius_coeffs @ self.radius_basis.values(self._check_time(t)))

    def radius_dot(self, t: float) -> float:
        return float(self.radius_coeffs @ self.radius_basis.derivatives(self._check_time(t)))

    def center_grid(self, ts: np.ndarray) -> np.ndarray:
        """Centers at many times, shape (n, len(ts)); no range check."""
        return self.center_coeffs @ self.center_basis.values(np.asarray(ts, dtype=float))

    def radius_grid(self, ts: np.ndarray) -> np.ndarray:
        return self.radius_coeffs @ self.radius_basis.values(np.asarray(ts, dtype=float))


def sphere_map(theta) -> np.ndarray:
    """Standard spherical coordinates: n-1 angles to a unit vector in R^n.

    s_1 = cos t1, s_2 = sin t1 cos t2, ..., s_n = sin t1 ... sin t_{n-1}.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    n = len(theta) + 1
    out = np.empty(n)
    sin_prod = 1.0
    for i, th in enumerate(theta):
        out[i] = sin_prod * np.cos(th)
        sin_prod *= np.sin(th)
    out[n - 1] = sin_prod
    return out


def sphere_map_many(thetas: np.ndarray) -> np.ndarray:
    """Vectorized sphere_map; thetas is (K, n-1), result (K, n)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    k, m = thetas.shape
    sin_prod = np.cumprod(np.hstack([np.ones((k, 1)), np.sin(thetas)]), axis=1)
    out = np.empty((k, m + 1))
    out[:, :m] = sin_prod[:, :m] * np.cos(thetas)
    out[:, m] = sin_prod[:, m]
    return out


def boundary_point(tube: Tube, theta, lam: float, tau: float) -> np.ndarray:
    """Point center(tau) + lam * radius(tau) * s(theta) of the tube cross-section."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"radial fraction {lam} outside [0, 1]")
    direction = sphere_map(theta)
    if len(direction) != tube.dimension:
        raise ValueError("angle count does not match tube dimension")
    return tube.center(tau) + lam * tube.radius(tau) * direction


@dataclass(frozen=True)
class TubeLipschitz:
    """Certified upper bounds: max ||center'(t)||, max |radius'(t)|, max radius(t)."""

    center: float
    radius: float
    radius_max: float


def tube_lipschitz(tube: Tube, grid_points: int = 1000) -> TubeLipschitz:
    """Lipschitz constants of the tube curves over [0, t_f].

    The analytic derivative is maximized on a dense grid; an additive slack of
    (second-derivative bound) * h/2 makes each value a certified upper bound
    for the continuous maximum (any t lies within h/2 of a grid point).
    """
    ts = np.linspace(0.0, tube.t_f, grid_points)
    h = tube.t_f / (grid_points - 1)

    cdot = tube.center_coeffs @ tube.center_basis.derivatives(ts)
    speed_max = float(np.max(np.linalg.norm(cdot, axis=0)))
    c2 = np.sqrt(sum(tube.center_basis.second_derivative_bound(row) ** 2
                     for row in tube.center_coeffs))
    l_center = speed_max + c2 * h / 2.0

    rdot = tube.radius_coeffs @ tube.radius_basis.derivatives(ts)
    r2 = tube.radius_basis.second_derivative_bound(tube.radius_coeffs)
    l_radius = float(np.max(np.abs(rdot))) + r2 * h / 2.0

    rvals = tube.radius_coeffs @ tube.radius_basis.values(ts)
    radius_max = float(np.max(rvals)) + l_radius * h / 2.0

    return TubeLipschitz(center=l_center, radius=l_radius, radius_max=radius_max)


# ---------------------------------------------------------------------------
# serialization (flat record, bit-exact round trip for binary64)
# ---------------------------------------------------------------------------

def tube_to_record(tube: Tube) -> dict:
    kind = {MonomialBasis: "monomial", BernsteinBasis: "bernstein"}[type(tube.center_basis)]
    kind_r = {MonomialBasis: "monomial", BernsteinBasis: "bernstein"}[type(tube.radius_basis)]
    if kind_r != kind:
        raise ValueError("record format stores a single basis kind for both curves")
    return {
        "n": tube.dimension,
        "t_f": tube.t_f,
        "basis": kind,
        "z_c": tube.center_basis.count,
        "z_r": tube.radius_basis.count,
        "q_c": [float(v) for v in tube.center_coeffs.ravel()],  # row-major
        "q_r": [float(v) for v in tube.radius_coeffs],
    }


def tube_from_record(rec: dict) -> Tube:
    n, z_c, z_r = int(rec["n"]), int(rec["z_c"]), int(rec["z_r"])
    q_c = np.asarray(rec["q_c"], dtype=float).reshape(n, z_c)
    q_r = np.asarray(rec["q_r"], dtype=float)
    t_f = float(rec["t_f"])
    return Tube(q_c, q_r,
                make_basis(rec["basis"], z_c, t_f),
                make_basis(rec["basis"], z_r, t_f))


def save_tube(tube: Tube, path) -> None:
    Path(path).write_text(json.dumps(tube_to_record(tube), indent=2, sort_keys=True) + "\n")


def load_tube(path) -> Tube:
    return tube_from_record(json.loads(Path(path).read_text()))
