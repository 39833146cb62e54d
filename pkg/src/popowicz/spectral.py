"""Periodic spectral substrate: grid, sampled fields, Helmholtz kernel.

All operators act on a uniform periodic grid through real-to-complex FFTs
(Hermitian symmetry is enforced structurally by rfft/irfft).  The Helmholtz
kernel is represented only through its Fourier symbol 1/(1+k^2), never as a
sampled function, so convolving with it is exact for band-limited data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "HelmholtzKernel",
    "InvalidFieldError",
    "GridMismatchError",
    "derivative",
    "second_derivative",
    "helmholtz_inverse",
    "helmholtz_forward",
    "kernel_for",
    "kernel_derivative_convolve",
    "dealias",
    "dealias_mask",
    "quadrature",
    "lp_norm",
    "l2_norm",
    "spectral_l2_norm",
    "evaluate_at",
    "evaluate_fields_at",
    "integral_on_interval",
    "field_from_function",
    "field_from_spectrum",
    "field_to_csv",
    "field_from_csv",
    "field_to_json",
    "field_from_json",
]


class InvalidFieldError(ValueError):
    """Field contains NaN/Inf samples."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n_points`` nodes on [0, period)."""

    n_points: int
    period: float

    def __post_init__(self) -> None:
        if self.n_points < 8 or self.n_points % 2 != 0:
            raise ValueError(f"n_points must be even and >= 8, got {self.n_points}")
        if not (np.isfinite(self.period) and self.period > 0):
            raise ValueError(f"period must be positive and finite, got {self.period}")

    @property
    def dx(self) -> float:
        return self.period / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_points) * self.dx

    @property
    def wavenumbers(self) -> np.ndarray:
        """Nonnegative physical wavenumbers in rfft layout, 0..pi*n/L."""
        return 2.0 * np.pi * np.fft.rfftfreq(self.n_points, d=self.dx)

    @property
    def nyquist(self) -> float:
        return np.pi * self.n_points / self.period


@dataclass(frozen=True)
class _SpectralContext:
    """Per-grid symbol arrays shared by every operator."""

    k: np.ndarray
    ik: np.ndarray          # Nyquist zeroed: odd derivative of the top cosine mode
    minus_k2: np.ndarray
    helmholtz: np.ndarray   # 1/(1+k^2)


@lru_cache(maxsize=64)
def _ctx(grid: Grid) -> _SpectralContext:
    k = grid.wavenumbers
    ik = 1j * k
    ik[-1] = 0.0
    for arr in (k, ik):
        arr.setflags(write=False)
    minus_k2 = -(k * k)
    helm = 1.0 / (1.0 + k * k)
    minus_k2.setflags(write=False)
    helm.setflags(write=False)
    return _SpectralContext(k=k, ik=ik, minus_k2=minus_k2, helmholtz=helm)


@lru_cache(maxsize=64)
def dealias_mask(grid: Grid, fraction: float) -> np.ndarray:
    """Multiplier keeping modes with |k| <= fraction * k_nyquist."""
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"dealias fraction must lie in (0, 1], got {fraction}")
    mask = (grid.wavenumbers <= fraction * grid.nyquist + 1e-12).astype(float)
    mask.setflags(write=False)
    return mask


@dataclass(frozen=True)
class Field:
    """Real samples of a periodic function, one value per grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValueError(
                f"values shape {values.shape} does not match grid with "
                f"{self.grid.n_points} nodes"
            )
        object.__setattr__(self, "values", values)

    def spectrum(self) -> np.ndarray:
        return np.fft.rfft(self.values)

    def is_valid(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def require_valid(self, label: str = "field") -> None:
        if not self.is_valid():
            raise InvalidFieldError(f"{label} contains non-finite samples")


@dataclass(frozen=True)
class HelmholtzKernel:
    """Fourier symbol of (1 - d^2/dx^2)^{-1} on a grid."""

    grid: Grid
    symbol: np.ndarray

    def require_grid(self, grid: Grid) -> None:
        if self.grid != grid:
            raise GridMismatchError("kernel grid does not match field grid")


def kernel_for(grid: Grid) -> HelmholtzKernel:
    return HelmholtzKernel(grid=grid, symbol=_ctx(grid).helmholtz)


def field_from_function(grid: Grid, fn: Callable[[np.ndarray], np.ndarray]) -> Field:
    return Field(grid, np.asarray(fn(grid.nodes), dtype=float))


def field_from_spectrum(grid: Grid, spectrum: np.ndarray) -> Field:
    return Field(grid, np.fft.irfft(spectrum, n=grid.n_points))


def _apply_symbol(f: Field, symbol: np.ndarray) -> Field:
    f.require_valid()
    return field_from_spectrum(f.grid, symbol * f.spectrum())


def derivative(f: Field) -> Field:
    """Spectral d/dx; exact for band-limited fields."""
    return _apply_symbol(f, _ctx(f.grid).ik)


def second_derivative(f: Field) -> Field:
    return _apply_symbol(f, _ctx(f.grid).minus_k2)


def helmholtz_inverse(f: Field, kernel: HelmholtzKernel | None = None) -> Field:
    """Convolution with the Helmholtz Green's function via its symbol."""
    if kernel is None:
        kernel = kernel_for(f.grid)
    kernel.require_grid(f.grid)
    f.require_valid()
    return field_from_spectrum(f.grid, kernel.symbol * f.spectrum())


def helmholtz_forward(f: Field) -> Field:
    """Apply (1 - d^2/dx^2) spectrally."""
    ctx = _ctx(f.grid)
    return _apply_symbol(f, 1.0 - ctx.minus_k2)


def kernel_derivative_convolve(f: Field, kernel: HelmholtzKernel | None = None) -> Field:
    """Convolution with the x-derivative of the Helmholtz kernel (symbol ik/(1+k^2))."""
    if kernel is None:
        kernel = kernel_for(f.grid)
    kernel.require_grid(f.grid)
    ctx = _ctx(f.grid)
    return _apply_symbol(f, ctx.ik * kernel.symbol)


def dealias(f: Field, fraction: float = 2.0 / 3.0) -> Field:
    """Zero every mode with |k| > fraction * k_nyquist; idempotent."""
    return _apply_symbol(f, dealias_mask(f.grid, fraction))


def quadrature(f: Field) -> float:
    """Grid quadrature of f over one period (exact for the interpolant)."""
    return float(f.values.sum() * f.grid.dx)


def lp_norm(f: Field, p: float) -> float:
    if p == np.inf:
        return float(np.abs(f.values).max())
    if p < 1:
        raise ValueError(f"p must be >= 1 or inf, got {p}")
    return float((np.abs(f.values) ** p).sum() * f.grid.dx) ** (1.0 / p)


def l2_norm(f: Field) -> float:
    return lp_norm(f, 2.0)


def spectral_l2_norm(f: Field) -> float:
    """L2 norm evaluated from rfft coefficients (Parseval route)."""
    c = f.spectrum()
    n = f.grid.n_points
    power = np.abs(c) ** 2
    total = power[0] + 2.0 * power[1:-1].sum() + power[-1]
    return float(np.sqrt(total * f.grid.dx / n))


def _interp_weights(n: int) -> np.ndarray:
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w


def evaluate_at(f: Field, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of f at arbitrary (possibly off-grid) points."""
    return evaluate_fields_at(np.asarray(points, dtype=float), f)[0]


def evaluate_fields_at(points: np.ndarray, *fields: Field) -> list[np.ndarray]:
    """Interpolate several fields on one grid, sharing the evaluation matrix."""
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError("fields must share a grid")
    w = _interp_weights(grid.n_points)
    coeffs = np.stack([w * f.spectrum() for f in fields], axis=1)
    basis = np.exp(1j * np.outer(points, grid.wavenumbers))
    vals = (basis @ coeffs).real / grid.n_points
    return [vals[:, i] for i in range(len(fields))]


def integral_on_interval(f: Field, a: float, b: float) -> float:
    """Exact integral of the trigonometric interpolant of f over [a, b]."""
    grid = f.grid
    c = f.spectrum()
    k = grid.wavenumbers
    mean = c[0].real / grid.n_points
    anti = np.zeros_like(c)
    anti[1:] = c[1:] / (1j * k[1:])
    w = _interp_weights(grid.n_points)
    pts = np.exp(1j * np.outer(np.array([a, b]), k))
    vals = (pts @ (w * anti)).real / grid.n_points
    return float(mean * (b - a) + vals[1] - vals[0])


# ---------------------------------------------------------------------------
# serialization


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def field_to_csv(f: Field, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "value"])
        for x, v in zip(f.grid.nodes, f.values):
            writer.writerow([_fmt(x), _fmt(v)])
    return path


def field_from_csv(path: str | Path) -> Field:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["x", "value"]:
            raise ValueError(f"expected header 'x,value' in {path}, got {header}")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    xs = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows])
    n = len(xs)
    if n < 8:
        raise ValueError(f"too few samples in {path} to form a grid")
    dx = xs[1] - xs[0]
    if abs(xs[0]) > 1e-12 * max(1.0, dx) or np.abs(np.diff(xs) - dx).max() > 1e-9 * dx:
        raise ValueError(f"{path} does not hold a uniform grid starting at 0")
    return Field(Grid(n_points=n, period=float(n * dx)), values)


def field_to_json(f: Field) -> dict:
    return {
        "grid": {"n": f.grid.n_points, "period": f.grid.period},
        "values": [float(v) for v in f.values],
    }


def field_from_json(obj: dict | str) -> Field:
    if isinstance(obj, str):
        obj = json.loads(obj)
    grid = Grid(n_points=int(obj["grid"]["n"]), period=float(obj["grid"]["period"]))
    return Field(grid, np.asarray(obj["values"], dtype=float))
