"""Initial-data builders: bumps, peakons, mode sums, seeded random fields.

Profiles are sampled directly on the periodic grid; the box is expected to be
large enough that line-type profiles decay below round-off at the edges (the
peakon builder uses the circle distance so the wrap stays continuous).
"""

from __future__ import annotations

import numpy as np

from popowicz.spectral import Field, Grid, dealias, field_from_spectrum

__all__ = [
    "gaussian_bump",
    "peakon_profile",
    "odd_bump",
    "fourier_modes_field",
    "random_smooth_field",
]


def gaussian_bump(
    grid: Grid, amplitude: float, width: float, center: float, sign: float = 1.0
) -> Field:
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    x = grid.nodes
    values = sign * amplitude * np.exp(-((x - center) ** 2) / (2.0 * width**2))
    return Field(grid, values)


def peakon_profile(
    grid: Grid, c: float, center: float | None = None, mollify_passes: int = 1
) -> Field:
    """Sampled peaked soliton c*exp(-|x - center|), smoothed by dealiasing.

    The raw profile is only Lipschitz; sampling it produces Gibbs oscillation,
    so the samples are passed through the 2/3 dealias filter ``mollify_passes``
    times (the filter is a projection, so passes beyond the first are no-ops).
    """
    if mollify_passes < 0:
        raise ValueError("mollify_passes must be >= 0")
    if center is None:
        center = grid.period / 2.0
    x = grid.nodes
    dist = np.abs(x - center)
    dist = np.minimum(dist, grid.period - dist)
    f = Field(grid, c * np.exp(-dist))
    for _ in range(mollify_passes):
        f = dealias(f)
    return f


def odd_bump(grid: Grid, amplitude: float, width: float) -> Field:
    """Odd profile A*y*exp(-y^2/(2w^2)) about the box center, positive for y > 0."""
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    y = grid.nodes - grid.period / 2.0
    return Field(grid, amplitude * y * np.exp(-(y**2) / (2.0 * width**2)))


def fourier_modes_field(grid: Grid, modes: list[tuple[int, float, float]]) -> Field:
    """Sum of cosine modes: sum_i amp_i * cos(2 pi k_i x / L + phase_i)."""
    values = np.zeros(grid.n_points)
    base = 2.0 * np.pi / grid.period
    for k, amp, phase in modes:
        k = int(k)
        if not 0 <= k <= grid.n_points // 2:
            raise ValueError(f"mode index {k} outside 0..{grid.n_points // 2}")
        values += amp * np.cos(base * k * grid.nodes + phase)
    return Field(grid, values)


def random_smooth_field(
    grid: Grid,
    rng: np.random.Generator,
    amplitude: float = 0.05,
    max_mode: int | None = None,
    decay: float = 0.35,
    zero_mean: bool = True,
) -> Field:
    """Seeded band-limited field with geometrically decaying random spectrum.

    ``max_mode`` defaults to n/6 so that pairwise products of such fields stay
    below the 2/3 dealias cutoff (no aliasing in quadratic terms).
    """
    half = grid.n_points // 2
    if max_mode is None:
        max_mode = min(half // 3, 48)
    max_mode = min(max_mode, half)
    spec = np.zeros(half + 1, dtype=complex)
    idx = np.arange(1, max_mode + 1)
    spec[1 : max_mode + 1] = (
        rng.normal(size=max_mode) + 1j * rng.normal(size=max_mode)
    ) * np.exp(-decay * idx)
    if not zero_mean:
        spec[0] = rng.normal()
    f = field_from_spectrum(grid, spec * grid.n_points)
    peak = np.abs(f.values).max()
    if peak == 0.0:
        return f
    return Field(grid, f.values * (amplitude / peak))
