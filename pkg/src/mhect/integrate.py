"""Fixed-step RK4 integration with piecewise-constant inputs.

The inputs u and w are held at their left-endpoint piece values for all four
stages of each step, so the discrete-time step map is exactly reproducible:
identical inputs give bit-identical trajectories.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .sysmodel import PiecewiseSignal, as_grid_index, zero_signal

FLOAT_FMT = "%.17g"  # round-trips float64 exactly


@dataclass(frozen=True)
class Trajectory:
    """States on the uniform grid t0 + k*dt, k = 0..K; states has shape (K+1, n)."""

    t0: float
    dt: float
    states: np.ndarray

    def __post_init__(self):
        st = np.asarray(self.states, dtype=float)
        if st.ndim != 2 or st.shape[0] < 1:
            raise ConfigurationError("trajectory needs a (K+1, n) state array with K >= 0")
        object.__setattr__(self, "states", st)

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    def state_at(self, t):
        k = as_grid_index(t - self.t0, self.dt, "trajectory query time")
        if k < 0 or k > self.n_steps:
            raise ConfigurationError(f"t = {t} outside trajectory range")
        return self.states[k]

    def to_csv(self, path):
        n = self.states.shape[1]
        header = "t," + ",".join(f"x{i + 1}" for i in range(n))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for k in range(self.states.shape[0]):
                row = [FLOAT_FMT % (self.t0 + k * self.dt)]
                row += [FLOAT_FMT % v for v in self.states[k]]
                fh.write(",".join(row) + "\n")


def rk4_step(model, x, u, w, dt):
    """One classic RK4 step with u, w frozen across the stages."""
    f = model.f
    k1 = f(x, u, w)
    k2 = f(x + 0.5 * dt * k1, u, w)
    k3 = f(x + 0.5 * dt * k2, u, w)
    k4 = f(x + dt * k3, u, w)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_with_jacobians(model, x, u, w, dt):
    """RK4 step plus exact step-map Jacobians d(next x)/dx and d(next x)/dw.

    Differentiates the four stages by the chain rule using the model's
    continuous-time Jacobians, so the returned matrices are the derivatives
    of the discrete step map itself (not a discretization of the
    continuous-time linearization).
    """
    f = model.f
    n = model.n
    I = np.eye(n)

    x1 = x
    k1 = f(x1, u, w)
    A1 = model.jac_f_x(x1, u, w)
    B1 = model.jac_f_w(x1, u, w)

    x2 = x + 0.5 * dt * k1
    k2 = f(x2, u, w)
    A2 = model.jac_f_x(x2, u, w)
    B2 = model.jac_f_w(x2, u, w)

    x3 = x + 0.5 * dt * k2
    k3 = f(x3, u, w)
    A3 = model.jac_f_x(x3, u, w)
    B3 = model.jac_f_w(x3, u, w)

    x4 = x + dt * k3
    k4 = f(x4, u, w)
    A4 = model.jac_f_x(x4, u, w)
    B4 = model.jac_f_w(x4, u, w)

    # stage sensitivities wrt x
    D1 = A1
    D2 = A2 @ (I + 0.5 * dt * D1)
    D3 = A3 @ (I + 0.5 * dt * D2)
    D4 = A4 @ (I + dt * D3)
    A_step = I + (dt / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)

    # stage sensitivities wrt w
    E1 = B1
    E2 = B2 + A2 @ (0.5 * dt * E1)
    E3 = B3 + A3 @ (0.5 * dt * E2)
    E4 = B4 + A4 @ (dt * E3)
    B_step = (dt / 6.0) * (E1 + 2.0 * E2 + 2.0 * E3 + E4)

    x_next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_next, A_step, B_step


def _resolve_signal(sig, dim, t0, t1, dt, steps, name):
    if sig is None:
        return zero_signal(dim, dt, steps, t0)
    if sig.dim != dim:
        raise ConfigurationError(f"{name} has dimension {sig.dim}, expected {dim}")
    ratio = sig.dt / dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ConfigurationError(f"integration dt = {dt} must divide {name}.dt = {sig.dt}")
    as_grid_index(t0 - sig.t0, dt, f"{name} grid offset")
    tol = 1e-9 * dt
    if sig.t0 > t0 + tol or sig.end < t1 - tol:
        raise ConfigurationError(f"{name} does not cover [{t0}, {t1})")
    return sig


def integrate(model, chi, u, w, t0, t1, dt):
    """Integrate x' = f(x, u(t), w(t)) from chi over [t0, t1] on a fixed grid.

    dt must divide t1 - t0 and the signals' piece lengths exactly; u and w
    may be None for zero inputs.  Raises DivergenceError (with the offending
    time attached) if the state leaves float range.
    """
    chi = np.asarray(chi, dtype=float)
    if chi.shape != (model.n,):
        raise ConfigurationError(f"initial state must have shape ({model.n},)")
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if t1 < t0:
        raise ConfigurationError("t1 must be >= t0")
    steps = as_grid_index(t1 - t0, dt, "integration span")
    states = np.empty((steps + 1, model.n))
    states[0] = chi
    if steps == 0:
        return Trajectory(t0, dt, states)
    u = _resolve_signal(u, model.m, t0, t1, dt, steps, "u")
    w = _resolve_signal(w, model.q, t0, t1, dt, steps, "w")
    x = chi
    for k in range(steps):
        tk = t0 + k * dt
        x = rk4_step(model, x, u.eval(tk), w.eval(tk), dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(
                f"integration diverged at t = {tk + dt} (non-finite state)", t=tk + dt)
        states[k + 1] = x
    return Trajectory(t0, dt, states)


def output_along(model, traj, u, w):
    """Output samples h(x(t_k), u(t_k), w(t_k)) at the left node of each step.

    Returns a piecewise-constant signal with the trajectory's grid; this is
    the measurement convention used throughout (y available as grid samples).
    """
    K = traj.n_steps
    u = _resolve_signal(u, model.m, traj.t0, traj.t0 + K * traj.dt, traj.dt, max(K, 1), "u")
    w = _resolve_signal(w, model.q, traj.t0, traj.t0 + K * traj.dt, traj.dt, max(K, 1), "w")
    ys = np.empty((K, model.p))
    for k in range(K):
        tk = traj.t0 + k * traj.dt
        ys[k] = model.h(traj.states[k], u.eval(tk), w.eval(tk))
    return PiecewiseSignal(traj.t0, traj.dt, ys)
