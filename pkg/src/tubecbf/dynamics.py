"""Control-affine vehicle models.

Each model exposes two views: the internal simulation state (integrated by
RK4) and the certified output, a position-level point whose dynamics are
control-affine (drift + input_matrix).  For the holonomic models the two
coincide; the differential drive controls a look-ahead point so its position
loop is square and invertible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class OmniRobot:
    """Single integrator: xdot = u, in 2 or 3 dimensions."""

    n: int = 2

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError("omnidirectional model supports n in {2, 3}")

    @property
    def m(self) -> int:
        return self.n

    def initial_state(self, x0: np.ndarray) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.n,):
            raise ValueError(f"initial state must have dimension {self.n}")
        return x0.copy()

    def output(self, state: np.ndarray) -> np.ndarray:
        return np.asarray(state, dtype=float)

    def drift(self, t: float, state: np.ndarray) -> np.ndarray:
        return np.zeros(self.n)

    def input_matrix(self, t: float, state: np.ndarray) -> np.ndarray:
        return np.eye(self.n)

    def state_derivative(self, t: float, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class Quadrotor3D(OmniRobot):
    """Kinematic position model of a quadrotor: 3-D single integrator."""

    n: int = field(default=3, init=False)

    def __post_init__(self):
        pass


@dataclass(frozen=True)
class DiffDrive:
    """Unicycle (px, py, phi) with look-ahead output z = p + l*(cos phi, sin phi).

    Inputs are (v, omega).  The output dynamics are zdot = A(phi) u with
    A(phi) = [[cos phi, -l sin phi], [sin phi, l cos phi]], det A = l, so the
    position loop is fully actuated for l > 0.
    """

    lookahead: float = 0.1
    phi0: float = 0.0
    n: int = field(default=2, init=False)
    m: int = field(default=2, init=False)

    def __post_init__(self):
        if self.lookahead <= 0:
            raise ValueError("look-ahead distance must be positive")

    def initial_state(self, x0: np.ndarray) -> np.ndarray:
        """Internal state whose look-ahead point equals the requested output."""
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (2,):
            raise ValueError("initial output must be a 2-D point")
        heading = np.array([np.cos(self.phi0), np.sin(self.phi0)])
        p = x0 - self.lookahead * heading
        return np.array([p[0], p[1], self.phi0])

    def output(self, state: np.ndarray) -> np.ndarray:
        px, py, phi = state
        return np.array([px + self.lookahead * np.cos(phi),
                         py + self.lookahead * np.sin(phi)])

    def drift(self, t: float, state: np.ndarray) -> np.ndarray:
        return np.zeros(2)

    def input_matrix(self, t: float, state: np.ndarray) -> np.ndarray:
        phi = state[2]
        c, s = np.cos(phi), np.sin(phi)
        return np.array([[c, -self.lookahead * s],
                         [s, self.lookahead * c]])

    def state_derivative(self, t: float, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        phi = state[2]
        v, omega = u
        return np.array([v * np.cos(phi), v * np.sin(phi), omega])


DYNAMICS_KINDS = {"omni": OmniRobot, "quadrotor": Quadrotor3D, "diffdrive": DiffDrive}


def make_dynamics(kind: str, **params):
    try:
        cls = DYNAMICS_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown dynamics kind {kind!r}; choose from {sorted(DYNAMICS_KINDS)}")
    return cls(**params)
