"""Nonlocal velocity-form dynamics of the coupled system and its integrator.

The pair (u, v) evolves by

    u_t + (2u + v) u_x = p * (-3(2u_x + v_x)u + v_x u_xx - v_xx u_x)
    v_t + (2u + v) v_x = p * (-2(2u_x + v_x)v - 2 v_x u_xx - v_xx v_x)

where p* is convolution with the Helmholtz Green's function (symbol
1/(1+k^2)).  This form has no third derivatives, so explicit RK4 with an
advective CFL bound is stable.  Every quadratic product is dealiased before
it enters a convolution or the advection term.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from popowicz.spectral import (
    Field,
    Grid,
    GridMismatchError,
    _ctx,
    dealias_mask,
    field_from_spectrum,
)

__all__ = [
    "State",
    "MomentumState",
    "SolverConfig",
    "RunSummary",
    "StepAborted",
    "rhs_F",
    "rhs_H",
    "tendency",
    "momentum_form_tendency",
    "step_rk4",
    "simulate",
    "momentum",
    "velocity",
    "total_momentum",
    "PathRecorder",
    "write_snapshot_csv",
]


class StepAborted(RuntimeError):
    """Integrator produced non-finite values."""


@dataclass(frozen=True)
class State:
    """Velocity pair (u, v) at one instant."""

    u: Field
    v: Field
    time: float = 0.0

    def __post_init__(self) -> None:
        if self.u.grid != self.v.grid:
            raise GridMismatchError("u and v must share a grid")

    @property
    def grid(self) -> Grid:
        return self.u.grid

    def require_valid(self) -> None:
        self.u.require_valid("u")
        self.v.require_valid("v")

    def is_valid(self) -> bool:
        return self.u.is_valid() and self.v.is_valid()


@dataclass(frozen=True)
class MomentumState:
    """Helmholtz images (m, n) = ((1 - d_xx)u, (1 - d_xx)v)."""

    m: Field
    n: Field
    time: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.m.grid


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    dealias_fraction: float = 2.0 / 3.0
    snapshot_stride: int = 10
    safety_checks: bool = True

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if self.dt >= self.t_end:
            raise ValueError(f"dt ({self.dt}) must be smaller than t_end ({self.t_end})")
        if not (0.0 < self.dealias_fraction <= 1.0):
            raise ValueError("dealias_fraction must lie in (0, 1]")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    def cfl_bound(self, state: State) -> float:
        speed = max(1.0, float(np.abs(2.0 * state.u.values + state.v.values).max()))
        return 0.5 * state.grid.dx / speed

    def check_stability(self, state: State) -> None:
        bound = self.cfl_bound(state)
        if self.dt > bound * (1.0 + 1e-12):
            raise ValueError(
                f"dt = {self.dt:.4g} violates the advective bound "
                f"0.5*dx/max(1, max|2u+v|) = {bound:.4g}"
            )


# ---------------------------------------------------------------------------
# spectral right-hand side


def _tendency_hat(
    grid: Grid, fraction: float, u_hat: np.ndarray, v_hat: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    ctx = _ctx(grid)
    mask = dealias_mask(grid, fraction)
    n = grid.n_points

    u = np.fft.irfft(u_hat, n=n)
    v = np.fft.irfft(v_hat, n=n)
    ux = np.fft.irfft(ctx.ik * u_hat, n=n)
    vx = np.fft.irfft(ctx.ik * v_hat, n=n)
    uxx = np.fft.irfft(ctx.minus_k2 * u_hat, n=n)
    vxx = np.fft.irfft(ctx.minus_k2 * v_hat, n=n)

    g = 2.0 * u + v
    gx = 2.0 * ux + vx

    f_arg = -3.0 * gx * u + vx * uxx - vxx * ux
    h_arg = -2.0 * gx * v - 2.0 * vx * uxx - vxx * vx

    f_hat = ctx.helmholtz * (mask * np.fft.rfft(f_arg))
    h_hat = ctx.helmholtz * (mask * np.fft.rfft(h_arg))
    du_hat = f_hat - mask * np.fft.rfft(g * ux)
    dv_hat = h_hat - mask * np.fft.rfft(g * vx)
    return du_hat, dv_hat


def rhs_F(state: State, dealias_fraction: float = 2.0 / 3.0) -> Field:
    """Nonlocal source of the u-equation."""
    state.require_valid()
    grid = state.grid
    ctx = _ctx(grid)
    mask = dealias_mask(grid, dealias_fraction)
    n = grid.n_points
    u_hat, v_hat = state.u.spectrum(), state.v.spectrum()
    u = state.u.values
    ux = np.fft.irfft(ctx.ik * u_hat, n=n)
    vx = np.fft.irfft(ctx.ik * v_hat, n=n)
    uxx = np.fft.irfft(ctx.minus_k2 * u_hat, n=n)
    vxx = np.fft.irfft(ctx.minus_k2 * v_hat, n=n)
    f_arg = -3.0 * (2.0 * ux + vx) * u + vx * uxx - vxx * ux
    out = field_from_spectrum(grid, ctx.helmholtz * (mask * np.fft.rfft(f_arg)))
    out.require_valid("rhs_F")
    return out


def rhs_H(state: State, dealias_fraction: float = 2.0 / 3.0) -> Field:
    """Nonlocal source of the v-equation."""
    state.require_valid()
    grid = state.grid
    ctx = _ctx(grid)
    mask = dealias_mask(grid, dealias_fraction)
    n = grid.n_points
    u_hat, v_hat = state.u.spectrum(), state.v.spectrum()
    v = state.v.values
    ux = np.fft.irfft(ctx.ik * u_hat, n=n)
    vx = np.fft.irfft(ctx.ik * v_hat, n=n)
    uxx = np.fft.irfft(ctx.minus_k2 * u_hat, n=n)
    vxx = np.fft.irfft(ctx.minus_k2 * v_hat, n=n)
    h_arg = -2.0 * (2.0 * ux + vx) * v - 2.0 * vx * uxx - vxx * vx
    out = field_from_spectrum(grid, ctx.helmholtz * (mask * np.fft.rfft(h_arg)))
    out.require_valid("rhs_H")
    return out


def tendency(state: State, dealias_fraction: float = 2.0 / 3.0) -> tuple[Field, Field]:
    """Full velocity-form time derivative (u_t, v_t)."""
    state.require_valid()
    du_hat, dv_hat = _tendency_hat(
        state.grid, dealias_fraction, state.u.spectrum(), state.v.spectrum()
    )
    return (
        field_from_spectrum(state.grid, du_hat),
        field_from_spectrum(state.grid, dv_hat),
    )


def momentum_form_tendency(
    state: State, dealias_fraction: float = 2.0 / 3.0
) -> tuple[Field, Field]:
    """Direct momentum-form time derivative (m_t, n_t); oracle for tendency()."""
    state.require_valid()
    grid = state.grid
    ctx = _ctx(grid)
    mask = dealias_mask(grid, dealias_fraction)
    n_pts = grid.n_points
    u_hat, v_hat = state.u.spectrum(), state.v.spectrum()
    m_hat = (1.0 - ctx.minus_k2) * u_hat
    n_hat = (1.0 - ctx.minus_k2) * v_hat
    g = 2.0 * state.u.values + state.v.values
    gx = np.fft.irfft(ctx.ik * (2.0 * u_hat + v_hat), n=n_pts)
    m = np.fft.irfft(m_hat, n=n_pts)
    n = np.fft.irfft(n_hat, n=n_pts)
    mx = np.fft.irfft(ctx.ik * m_hat, n=n_pts)
    nx = np.fft.irfft(ctx.ik * n_hat, n=n_pts)
    dm = -(mask * np.fft.rfft(g * mx)) - 3.0 * (mask * np.fft.rfft(gx * m))
    dn = -(mask * np.fft.rfft(g * nx)) - 2.0 * (mask * np.fft.rfft(gx * n))
    return field_from_spectrum(grid, dm), field_from_spectrum(grid, dn)


def _rk4_hat(
    grid: Grid, fraction: float, u_hat: np.ndarray, v_hat: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    k1u, k1v = _tendency_hat(grid, fraction, u_hat, v_hat)
    k2u, k2v = _tendency_hat(grid, fraction, u_hat + 0.5 * dt * k1u, v_hat + 0.5 * dt * k1v)
    k3u, k3v = _tendency_hat(grid, fraction, u_hat + 0.5 * dt * k2u, v_hat + 0.5 * dt * k2v)
    k4u, k4v = _tendency_hat(grid, fraction, u_hat + dt * k3u, v_hat + dt * k3v)
    c = dt / 6.0
    return (
        u_hat + c * (k1u + 2.0 * k2u + 2.0 * k3u + k4u),
        v_hat + c * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )


def step_rk4(state: State, config: SolverConfig) -> State:
    """Advance one classical RK4 step of size config.dt."""
    if config.safety_checks:
        config.check_stability(state)
    u_hat, v_hat = _rk4_hat(
        state.grid,
        config.dealias_fraction,
        state.u.spectrum(),
        state.v.spectrum(),
        config.dt,
    )
    new = State(
        u=field_from_spectrum(state.grid, u_hat),
        v=field_from_spectrum(state.grid, v_hat),
        time=state.time + config.dt,
    )
    if not new.is_valid():
        raise StepAborted(f"non-finite state after step to t = {new.time:.6g}")
    return new


# ---------------------------------------------------------------------------
# velocity <-> momentum


def momentum(state: State) -> MomentumState:
    ctx = _ctx(state.grid)
    sym = 1.0 - ctx.minus_k2
    return MomentumState(
        m=field_from_spectrum(state.grid, sym * state.u.spectrum()),
        n=field_from_spectrum(state.grid, sym * state.v.spectrum()),
        time=state.time,
    )


def velocity(ms: MomentumState) -> State:
    ctx = _ctx(ms.grid)
    return State(
        u=field_from_spectrum(ms.grid, ctx.helmholtz * ms.m.spectrum()),
        v=field_from_spectrum(ms.grid, ctx.helmholtz * ms.n.spectrum()),
        time=ms.time,
    )


def total_momentum(state: State) -> float:
    """Quadrature of m + n; equals the integral of u + v since d_xx integrates to zero."""
    return float((state.u.values.sum() + state.v.values.sum()) * state.grid.dx)


# ---------------------------------------------------------------------------
# time loop


@dataclass
class RunSummary:
    final_state: State
    steps: int
    t_final: float
    abort_reason: str | None
    conserved_drift: float
    momentum_form_max_dev: float | None = None

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "t_final": self.t_final,
            "abort_reason": self.abort_reason,
            "conserved_drift": self.conserved_drift,
        }


class PathRecorder:
    """Observer keeping references to snapshot states (snapshot cadence)."""

    cadence = "snapshot"

    def __init__(self) -> None:
        self.times: list[float] = []
        self.states: list[State] = []

    def __call__(self, step: int, state: State) -> None:
        self.times.append(state.time)
        self.states.append(state)


def _observer_cadence(obs: Callable) -> str:
    return getattr(obs, "cadence", "snapshot")


def _momentum_form_deviation(state: State, fraction: float) -> float:
    ut, vt = tendency(state, fraction)
    ctx = _ctx(state.grid)
    sym = 1.0 - ctx.minus_k2
    mt = np.fft.irfft(sym * ut.spectrum(), n=state.grid.n_points)
    nt = np.fft.irfft(sym * vt.spectrum(), n=state.grid.n_points)
    dm, dn = momentum_form_tendency(state, fraction)
    scale = max(np.abs(dm.values).max(), np.abs(dn.values).max(), 1e-300)
    dev = max(np.abs(mt - dm.values).max(), np.abs(nt - dn.values).max())
    return float(dev / scale)


def simulate(
    initial: State,
    config: SolverConfig,
    observers: Sequence[Callable[[int, State], None]] = (),
) -> RunSummary:
    """Integrate to t_end (rounded to whole steps) or abort.

    Observers are callables ``obs(step, state)``.  An observer with attribute
    ``cadence == "step"`` runs after every step; the default cadence runs at
    step 0, every ``snapshot_stride`` steps, and at the final step.  Observers
    must not mutate the state; an observer exception aborts the run with that
    observer recorded.
    """
    initial.require_valid()
    config.check_stability(initial)
    n_steps = max(1, int(round(config.t_end / config.dt)))

    ms0 = momentum(initial)
    conserved_scale = float(
        (np.abs(ms0.m.values) + np.abs(ms0.n.values)).sum() * initial.grid.dx
    )

    snapshot_obs = [o for o in observers if _observer_cadence(o) == "snapshot"]
    step_obs = [o for o in observers if _observer_cadence(o) == "step"]

    conserved0 = total_momentum(initial)
    mom_dev = 0.0 if config.safety_checks else None

    def notify(group: Iterable[Callable], step: int, state: State) -> str | None:
        for obs in group:
            try:
                obs(step, state)
            except Exception as exc:  # noqa: BLE001 - identity must be reported
                name = getattr(obs, "__name__", type(obs).__name__)
                return f"observer {name} failed at step {step}: {exc}"
        return None

    state = initial
    abort = notify(snapshot_obs, 0, state)
    steps_done = 0
    while abort is None and steps_done < n_steps:
        try:
            state = step_rk4(state, config)
        except (StepAborted, ValueError) as exc:
            abort = str(exc)
            break
        steps_done += 1
        abort = notify(step_obs, steps_done, state)
        if abort is None and (
            steps_done % config.snapshot_stride == 0 or steps_done == n_steps
        ):
            if config.safety_checks:
                mom_dev = max(
                    mom_dev, _momentum_form_deviation(state, config.dealias_fraction)
                )
            abort = notify(snapshot_obs, steps_done, state)

    # fall back to the L1 scale when the conserved integral is itself ~0
    drift = abs(total_momentum(state) - conserved0) / max(
        abs(conserved0), conserved_scale, 1e-300
    )
    return RunSummary(
        final_state=state,
        steps=steps_done,
        t_final=state.time,
        abort_reason=abort,
        conserved_drift=float(drift),
        momentum_form_max_dev=mom_dev,
    )


def write_snapshot_csv(path: str | Path, times: Sequence[float], states: Sequence[State]) -> Path:
    """Stream snapshots as rows t,x,u,v,m,n."""
    path = Path(path)
    fmt = lambda x: format(float(x), ".17g")  # noqa: E731
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "u", "v", "m", "n"])
        for t, state in zip(times, states):
            ms = momentum(state)
            xs = state.grid.nodes
            for i in range(state.grid.n_points):
                writer.writerow(
                    [
                        fmt(t),
                        fmt(xs[i]),
                        fmt(state.u.values[i]),
                        fmt(state.v.values[i]),
                        fmt(ms.m.values[i]),
                        fmt(ms.n.values[i]),
                    ]
                )
    return path
