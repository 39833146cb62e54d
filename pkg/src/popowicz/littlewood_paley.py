"""Dyadic frequency decomposition, discrete Besov norms, and paraproducts.

The cutoff pair (chi, phi) is built from the canonical exp(-1/t) glue so that
chi == 1 on |xi| <= 1, supp chi inside the ball |xi| <= 4/3, and
phi(xi) = chi(xi/2) - chi(xi), supported in the annulus 3/4 <= |xi| <= 8/3.
The partition chi(xi) + sum_j phi(2^-j xi) then telescopes exactly, so all
identity-level checks (partition of unity, reconstruction, Bony splitting)
hold to round-off on the grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from popowicz.spectral import (
    Field,
    Grid,
    GridMismatchError,
    dealias_mask,
    field_from_spectrum,
    lp_norm,
)

__all__ = [
    "BALL_RADIUS",
    "ANNULUS",
    "BesovParams",
    "DyadicCutoffs",
    "LPDecomposition",
    "TruncationWarning",
    "chi_profile",
    "phi_profile",
    "build_cutoffs",
    "decompose",
    "low_freq_truncate",
    "besov_norm",
    "block_norms",
    "paraproduct",
    "remainder",
    "product_estimate_ratio",
    "product_estimate_admissible",
    "commutator",
]

BALL_RADIUS = 4.0 / 3.0
ANNULUS = (3.0 / 4.0, 8.0 / 3.0)


class TruncationWarning(UserWarning):
    """Spectral content above the decomposition's covered band."""


def _glue(t: np.ndarray) -> np.ndarray:
    # smooth 0 -> 1 transition on [0, 1], flat C-infinity at both ends
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def chi_profile(xi) -> np.ndarray:
    """Low-frequency cutoff: 1 on |xi| <= 1, 0 outside |xi| <= 4/3."""
    r = np.abs(np.asarray(xi, dtype=float))
    return 1.0 - _glue((r - 1.0) / (BALL_RADIUS - 1.0))


def phi_profile(xi) -> np.ndarray:
    """Annulus window phi(xi) = chi(xi/2) - chi(xi)."""
    xi = np.asarray(xi, dtype=float)
    return chi_profile(xi / 2.0) - chi_profile(xi)


@dataclass(frozen=True)
class BesovParams:
    """Regularity/integrability/summation triple indexing a discrete Besov norm."""

    s: float
    p: float = 2.0
    r: float = 2.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.s):
            raise ValueError(f"s must be finite, got {self.s}")
        for name, value in (("p", self.p), ("r", self.r)):
            if not (value >= 1.0):  # inf passes
                raise ValueError(f"{name} must be >= 1 or inf, got {value}")

    def shifted(self, ds: float) -> "BesovParams":
        return BesovParams(self.s + ds, self.p, self.r)


@dataclass(frozen=True)
class DyadicCutoffs:
    """Tabulated chi / phi windows for every spectral mode of one grid."""

    grid: Grid
    j_max: int
    chi: np.ndarray          # chi(k) per rfft mode
    phis: np.ndarray         # phis[j] = phi(2^-j k), j = 0..j_max

    @property
    def block_indices(self) -> range:
        return range(-1, self.j_max + 1)

    def window(self, j: int) -> np.ndarray:
        if j == -1:
            return self.chi
        if 0 <= j <= self.j_max:
            return self.phis[j]
        raise ValueError(f"block index {j} outside -1..{self.j_max}")

    def coverage(self) -> float:
        """Largest |k| where the tabulated partition still sums to one."""
        return 2.0 ** (self.j_max + 1)


@lru_cache(maxsize=64)
def build_cutoffs(grid: Grid) -> DyadicCutoffs:
    j_max = int(math.floor(math.log2(grid.nyquist * 3.0 / 8.0)))
    if j_max < 1:
        raise ValueError(
            f"grid too coarse for a dyadic decomposition: nyquist {grid.nyquist:.3g} "
            f"allows j_max = {j_max} < 1"
        )
    k = grid.wavenumbers
    chi = chi_profile(k)
    phis = np.stack([phi_profile(k / 2.0**j) for j in range(j_max + 1)])
    chi.setflags(write=False)
    phis.setflags(write=False)
    return DyadicCutoffs(grid=grid, j_max=j_max, chi=chi, phis=phis)


@dataclass(frozen=True)
class LPDecomposition:
    """Dyadic blocks of one field, indexed j = -1..j_max."""

    grid: Grid
    blocks: dict[int, Field]

    def reconstruct(self) -> Field:
        total = np.zeros(self.grid.n_points)
        for blk in self.blocks.values():
            total = total + blk.values
        return Field(self.grid, total)


def _require_same_grid(cutoffs: DyadicCutoffs, f: Field) -> None:
    if cutoffs.grid != f.grid:
        raise GridMismatchError("cutoffs were built for a different grid")


def _warn_truncation(cutoffs: DyadicCutoffs, spectrum: np.ndarray) -> None:
    k = cutoffs.grid.wavenumbers
    above = np.abs(spectrum[k > cutoffs.coverage()])
    if above.size == 0:
        return
    total = np.abs(spectrum).max()
    if total > 0 and above.max() > 1e-12 * total:
        warnings.warn(
            f"field has spectral content above the covered band |k| <= "
            f"{cutoffs.coverage():.3g}; the top blocks truncate it",
            TruncationWarning,
            stacklevel=3,
        )


def decompose(f: Field, cutoffs: DyadicCutoffs) -> LPDecomposition:
    _require_same_grid(cutoffs, f)
    f.require_valid()
    spec = f.spectrum()
    _warn_truncation(cutoffs, spec)
    blocks = {
        j: field_from_spectrum(f.grid, cutoffs.window(j) * spec)
        for j in cutoffs.block_indices
    }
    return LPDecomposition(grid=f.grid, blocks=blocks)


def low_freq_truncate(f: Field, j: int, cutoffs: DyadicCutoffs) -> Field:
    """Cumulative low-frequency part: multiplier chi(2^-j k) (telescoped sum)."""
    if j < 0:
        raise ValueError(f"truncation index must be >= 0, got {j}")
    _require_same_grid(cutoffs, f)
    f.require_valid()
    window = chi_profile(f.grid.wavenumbers / 2.0**j)
    return field_from_spectrum(f.grid, window * f.spectrum())


def block_norms(f: Field, p: float, cutoffs: DyadicCutoffs) -> np.ndarray:
    """L^p norm of each dyadic block, ordered j = -1..j_max."""
    dec = decompose(f, cutoffs)
    return np.array([lp_norm(dec.blocks[j], p) for j in cutoffs.block_indices])


def besov_norm(f: Field, params: BesovParams, cutoffs: DyadicCutoffs) -> float:
    norms = block_norms(f, params.p, cutoffs)
    js = np.arange(-1, cutoffs.j_max + 1, dtype=float)
    weighted = 2.0 ** (js * params.s) * norms
    if params.r == np.inf:
        return float(weighted.max())
    return float((weighted**params.r).sum() ** (1.0 / params.r))


def _dealias_product(a: Field, b: Field, fraction: float) -> np.ndarray:
    mask = dealias_mask(a.grid, fraction)
    return mask * np.fft.rfft(a.values * b.values)


def paraproduct(
    u: Field, v: Field, cutoffs: DyadicCutoffs, dealias_fraction: float = 2.0 / 3.0
) -> Field:
    """Low-high interaction sum_j S_{j-1}u * Delta_j v, products dealiased."""
    _require_same_grid(cutoffs, u)
    _require_same_grid(cutoffs, v)
    u.require_valid()
    v.require_valid()
    dec_v = decompose(v, cutoffs)
    total = np.zeros(u.grid.n_points // 2 + 1, dtype=complex)
    # S_{j-1}u vanishes for j <= 0, so the sum effectively starts at j = 1
    for j in range(1, cutoffs.j_max + 1):
        s_low = low_freq_truncate(u, j - 1, cutoffs)
        total += _dealias_product(s_low, dec_v.blocks[j], dealias_fraction)
    return field_from_spectrum(u.grid, total)


def remainder(
    u: Field, v: Field, cutoffs: DyadicCutoffs, dealias_fraction: float = 2.0 / 3.0
) -> Field:
    """Diagonal interaction sum over |j - j'| <= 1 of Delta_{j'}u * Delta_j v."""
    _require_same_grid(cutoffs, u)
    _require_same_grid(cutoffs, v)
    u.require_valid()
    v.require_valid()
    dec_u = decompose(u, cutoffs)
    dec_v = decompose(v, cutoffs)
    total = np.zeros(u.grid.n_points // 2 + 1, dtype=complex)
    for j in cutoffs.block_indices:
        for jp in (j - 1, j, j + 1):
            if -1 <= jp <= cutoffs.j_max:
                total += _dealias_product(
                    dec_u.blocks[jp], dec_v.blocks[j], dealias_fraction
                )
    return field_from_spectrum(u.grid, total)


def product_estimate_admissible(params: BesovParams) -> bool:
    """Parameter range of the two-derivative-loss product estimate."""
    if params.s > max(2.0, 1.0 / params.p + 1.5):
        return True
    return params.s == 2.0 and params.p >= 2.0 and 1.0 <= params.r <= 2.0


def product_estimate_ratio(
    u: Field,
    v: Field,
    params: BesovParams,
    cutoffs: DyadicCutoffs,
    dealias_fraction: float = 2.0 / 3.0,
) -> float | None:
    """Ratio ||uv||_{s-3} / (||u||_{s-2} ||v||_{s-2}); None when undefined."""
    if not product_estimate_admissible(params):
        raise ValueError(
            f"(s, p, r) = ({params.s}, {params.p}, {params.r}) outside the "
            "admissible range s > max(2, 1/p + 3/2) or (s = 2, p >= 2, r <= 2)"
        )
    u.require_valid()
    v.require_valid()
    den = besov_norm(u, params.shifted(-2.0), cutoffs) * besov_norm(
        v, params.shifted(-2.0), cutoffs
    )
    if den == 0.0:
        return None
    mask = dealias_mask(u.grid, dealias_fraction)
    product = field_from_spectrum(u.grid, mask * np.fft.rfft(u.values * v.values))
    return besov_norm(product, params.shifted(-3.0), cutoffs) / den


def commutator(
    velocity: Field,
    f: Field,
    j: int,
    cutoffs: DyadicCutoffs,
    dealias_fraction: float = 2.0 / 3.0,
) -> Field:
    """Transport/block commutator velocity * d_x(Delta_j f) - Delta_j(velocity * d_x f)."""
    from popowicz.spectral import derivative

    _require_same_grid(cutoffs, velocity)
    _require_same_grid(cutoffs, f)
    velocity.require_valid()
    f.require_valid()
    window = cutoffs.window(j)
    fx = derivative(f)
    block_f = field_from_spectrum(f.grid, window * f.spectrum())
    first = _dealias_product(velocity, derivative(block_f), dealias_fraction)
    second = window * _dealias_product(velocity, fx, dealias_fraction)
    return field_from_spectrum(f.grid, first - second)
