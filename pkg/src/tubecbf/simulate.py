"""Closed-loop simulation under the QP safety filter, with trajectory logging
and post-hoc robustness monitoring."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cbf import Barrier, ControlStep, barrier_value, solve_safety_qp
from .stl import Formula, Signal, robustness


class SimulationError(RuntimeError):
    """Closed-loop run cannot proceed (bad initial state or diverged state)."""


def step_rk4(dynamics, t: float, state: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta step holding u constant over [t, t+dt]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = dynamics.state_derivative(t, state, u)
    k2 = dynamics.state_derivative(t + dt / 2, state + dt / 2 * k1, u)
    k3 = dynamics.state_derivative(t + dt / 2, state + dt / 2 * k2, u)
    k4 = dynamics.state_derivative(t + dt, state + dt * k3, u)
    out = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError(f"non-finite state after step at t={t}")
    return out


@dataclass
class RunReport:
    """Everything observed during one closed-loop run."""

    trajectory: Signal
    steps: list
    min_b: float
    tube_violations: int
    final_robustness: float
    satisfied: bool
    saturated_steps: int = 0


def run_closed_loop(dynamics, barrier: Barrier, x0: np.ndarray, dt: float,
                    formula: Formula, *, weight: Optional[np.ndarray] = None,
                    input_bound: Optional[float] = None,
                    until_convention: str = "paper",
                    control_sampling: str = "midpoint") -> RunReport:
    """Iterate the safety QP and RK4 over [0, t_f] and monitor the result.

    x0 is the initial certified output and must satisfy b(0, x0) >= 0.  The
    input is held constant over each step; "midpoint" control sampling
    evaluates the QP's time-varying terms at t + dt/2 so the hold tracks a
    moving tube without the O(dt) lag of sampling at the interval start.
    When input_bound is given, inputs are clamped per component and the
    saturation count reported; the invariance argument assumes no clamping.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if control_sampling not in ("midpoint", "start"):
        raise ValueError(f"unknown control sampling {control_sampling!r}")
    t_f = barrier.t_f
    n_steps = int(round(t_f / dt))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")
    times = np.linspace(0.0, t_f, n_steps + 1)
    weight = np.eye(dynamics.m) if weight is None else np.asarray(weight, dtype=float)

    state = dynamics.initial_state(np.asarray(x0, dtype=float))
    b0 = barrier_value(barrier, 0.0, dynamics.output(state))
    if b0 < 0.0:
        raise SimulationError(f"initial state outside the tube: b(0, x0) = {b0}")

    steps: list[ControlStep] = []
    outputs = np.empty((n_steps + 1, dynamics.n))
    saturated = 0
    for k, t in enumerate(times):
        t = float(t)
        h = float(times[k + 1] - t) if k < n_steps else 0.0
        t_ctrl = t + h / 2.0 if control_sampling == "midpoint" else t
        qp = solve_safety_qp(barrier, dynamics, weight, t_ctrl, state)
        u = qp.u
        if input_bound is not None:
            clamped = np.clip(u, -input_bound, input_bound)
            if not np.array_equal(clamped, u):
                saturated += 1
                u = clamped
        # the logged row carries the true barrier at the sample instant and
        # the input actually applied over the hold interval
        x = dynamics.output(state)
        steps.append(ControlStep(t=t, x=x, b=barrier_value(barrier, t, x),
                                 db_dx=qp.db_dx, db_dt=qp.db_dt, lie_f=qp.lie_f,
                                 lie_g=qp.lie_g, psi=qp.psi, u=u,
                                 constraint_active=qp.constraint_active))
        outputs[k] = x
        if k < n_steps:
            state = step_rk4(dynamics, t, state, u, h)

    trajectory = Signal(times, outputs)
    b_vals = np.array([s.b for s in steps])
    report = robustness(formula, trajectory, 0.0, until_convention=until_convention)
    return RunReport(
        trajectory=trajectory,
        steps=steps,
        min_b=float(b_vals.min()),
        tube_violations=int(np.sum(b_vals < 0.0)),
        final_robustness=report.value,
        satisfied=report.satisfied,
        saturated_steps=saturated,
    )


# ---------------------------------------------------------------------------
# trajectory log I/O
# ---------------------------------------------------------------------------

def write_trajectory_log(path, report: RunReport) -> None:
    """CSV log: t, x_1..x_n, u_1..u_m, b, psi, active; %.17g round-trips binary64."""
    steps = report.steps
    n = len(steps[0].x)
    m = len(steps[0].u)
    header = (["t"] + [f"x_{i+1}" for i in range(n)] + [f"u_{j+1}" for j in range(m)]
              + ["b", "psi", "active"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in steps:
            row = [f"{s.t:.17g}"]
            row += [f"{v:.17g}" for v in s.x]
            row += [f"{v:.17g}" for v in s.u]
            row += [f"{s.b:.17g}", f"{s.psi:.17g}", "1" if s.constraint_active else "0"]
            writer.writerow(row)


def read_trajectory_signal(path) -> Signal:
    """Rebuild the trajectory from a log using only the t and x_* columns.

    Deliberately ignores every other column so verification stays independent
    of the simulator's own barrier and robustness bookkeeping.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "t":
            raise ValueError(f"{path}: not a trajectory log (missing t column)")
        x_cols = [i for i, name in enumerate(header) if name.startswith("x_")]
        if not x_cols:
            raise ValueError(f"{path}: no state columns found")
        times, states = [], []
        for row in reader:
            times.append(float(row[0]))
            states.append([float(row[i]) for i in x_cols])
    return Signal(np.asarray(times), np.asarray(states))
