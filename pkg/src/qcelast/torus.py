"""Periodic fields on the flat torus Q = (0,1)^d and their spectral calculus.

Fields are stored in physical space as arrays of shape ``(n,)*d + (d,)*rank``
(grid axes first, tensor components last).  Derivatives are Fourier
multipliers; odd derivatives drop the Nyquist mode so that results stay
real-valued and ``gradient``/``divergence`` are exact adjoints.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SCALAR, VECTOR, MATRIX = 0, 1, 2
_RANK_NAMES = {SCALAR: "scalar", VECTOR: "vector", MATRIX: "matrix"}


@dataclass(frozen=True)
class Grid:
    """Uniform collocation grid on (0,1)^d plus the time-stepping window."""

    d: int
    n: int
    t_end: float = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError(f"d must be 2 or 3, got {self.d}")
        if self.n < 4 or self.n % 2:
            raise ValueError(f"n must be even and >= 4, got {self.n}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def cell_volume(self) -> float:
        return float(self.n) ** (-self.d)

    @property
    def npoints(self) -> int:
        return self.n**self.d

    def coords(self) -> list[np.ndarray]:
        """Coordinate arrays x_1..x_d, each of shape ``grid.shape``."""
        x = np.arange(self.n) / self.n
        return list(np.meshgrid(*([x] * self.d), indexing="ij"))

    def same_space(self, other: "Grid") -> bool:
        return self.d == other.d and self.n == other.n


class PeriodicField:
    """Immutable real samples of a scalar, vector or matrix field."""

    __slots__ = ("grid", "rank", "data")

    def __init__(self, grid: Grid, rank: int, data):
        if rank not in _RANK_NAMES:
            raise ValueError(f"rank must be 0, 1 or 2, got {rank}")
        arr = np.array(data, dtype=np.float64, copy=True)
        expected = grid.shape + (grid.d,) * rank
        if arr.shape != expected:
            raise ValueError(
                f"{_RANK_NAMES[rank]} field on d={grid.d}, n={grid.n} needs shape "
                f"{expected}, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("PeriodicField is immutable")

    def __repr__(self):
        return f"PeriodicField({_RANK_NAMES[self.rank]}, d={self.grid.d}, n={self.grid.n})"

    @classmethod
    def zeros(cls, grid: Grid, rank: int) -> "PeriodicField":
        return cls(grid, rank, np.zeros(grid.shape + (grid.d,) * rank))

    @classmethod
    def constant(cls, grid: Grid, value) -> "PeriodicField":
        value = np.asarray(value, dtype=float)
        rank = value.ndim
        return cls(grid, rank, np.broadcast_to(value, grid.shape + value.shape))

    @property
    def rank_name(self) -> str:
        return _RANK_NAMES[self.rank]

    @property
    def components(self) -> int:
        return self.grid.d**self.rank

    def _check(self, other: "PeriodicField"):
        if not isinstance(other, PeriodicField):
            return NotImplemented
        if not self.grid.same_space(other.grid) or self.rank != other.rank:
            raise ValueError(f"incompatible fields {self!r} and {other!r}")

    def __add__(self, other):
        self._check(other)
        return PeriodicField(self.grid, self.rank, self.data + other.data)

    def __sub__(self, other):
        self._check(other)
        return PeriodicField(self.grid, self.rank, self.data - other.data)

    def __neg__(self):
        return PeriodicField(self.grid, self.rank, -self.data)

    def __mul__(self, scalar: float):
        return PeriodicField(self.grid, self.rank, self.data * float(scalar))

    __rmul__ = __mul__

    def with_data(self, data) -> "PeriodicField":
        return PeriodicField(self.grid, self.rank, data)

    def mean(self) -> np.ndarray:
        """Spatial average over Q, one entry per component."""
        return self.data.mean(axis=tuple(range(self.grid.d)))

    def pointwise_norm(self) -> np.ndarray:
        """Euclidean (Frobenius for matrices) norm at each grid point."""
        if self.rank == SCALAR:
            return np.abs(self.data)
        flat = self.data.reshape(self.grid.shape + (-1,))
        return np.sqrt(np.sum(flat * flat, axis=-1))

    def integral(self) -> np.ndarray:
        return self.mean()

    def l2_norm(self) -> float:
        return float(np.sqrt(integrate(self.pointwise_norm() ** 2)))

    def max_norm(self) -> float:
        return float(np.max(self.pointwise_norm()))


def integrate(values: np.ndarray) -> float:
    """Midpoint-rule integral over Q of pointwise scalar values.

    ``np.sum`` on a contiguous float array uses pairwise summation, which
    keeps the result reproducible.
    """
    flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    return float(np.sum(flat) / flat.size)


# ---------------------------------------------------------------------------
# Fourier machinery


@dataclass(frozen=True)
class _Spectrum:
    axes: tuple[int, ...]
    # 2*pi*k_alpha with the Nyquist entry set to zero (first derivatives)
    dk: tuple[np.ndarray, ...]
    # 4*pi^2*|k|^2 with the full wavenumber (negative Laplacian symbol)
    k2: np.ndarray
    # |2*pi*kappa|^2 built from dk (symbol of -div grad)
    dk2: np.ndarray
    # integer wavenumbers, for masks
    kint: tuple[np.ndarray, ...]


@functools.lru_cache(maxsize=16)
def spectrum(d: int, n: int) -> _Spectrum:
    full = np.fft.fftfreq(n, 1.0 / n)
    half = np.fft.rfftfreq(n, 1.0 / n)
    axes_k = [full] * (d - 1) + [half]
    kint = np.meshgrid(*axes_k, indexing="ij")
    dk = []
    for k in kint:
        kk = 2 * np.pi * k.copy()
        kk[np.abs(k) == n // 2] = 0.0
        dk.append(kk)
    k2 = 4 * np.pi**2 * sum(k * k for k in kint)
    dk2 = sum(k * k for k in dk)
    for a in (*dk, k2, dk2, *kint):
        a.setflags(write=False)
    return _Spectrum(tuple(range(d)), tuple(dk), k2, dk2, tuple(kint))


def _expand(mult: np.ndarray, extra: int) -> np.ndarray:
    return mult.reshape(mult.shape + (1,) * extra)


def forward(field: PeriodicField) -> np.ndarray:
    return np.fft.rfftn(field.data, axes=tuple(range(field.grid.d)))


def backward(coeffs: np.ndarray, grid: Grid, rank: int) -> PeriodicField:
    data = np.fft.irfftn(coeffs, s=grid.shape, axes=tuple(range(grid.d)))
    return PeriodicField(grid, rank, data)


def apply_multiplier(field: PeriodicField, mult: np.ndarray) -> PeriodicField:
    """Multiply every component by a real Fourier symbol (rfft layout)."""
    coeffs = forward(field) * _expand(mult, field.rank)
    return backward(coeffs, field.grid, field.rank)


# ---------------------------------------------------------------------------
# Differential operators


def gradient(f: PeriodicField) -> PeriodicField:
    """Spectral gradient; the derivative index is appended last."""
    if f.rank == MATRIX:
        raise ValueError("gradient accepts scalar or vector fields only")
    sp = spectrum(f.grid.d, f.grid.n)
    fh = forward(f)
    parts = [1j * _expand(k, f.rank) * fh for k in sp.dk]
    return backward(np.stack(parts, axis=-1), f.grid, f.rank + 1)


def divergence(F: PeriodicField) -> PeriodicField:
    """Contract the last index with the derivative: (div F)_i = sum_a d_a F_ia."""
    if F.rank == SCALAR:
        raise ValueError("divergence needs a vector or matrix field")
    sp = spectrum(F.grid.d, F.grid.n)
    Fh = forward(F)
    out = sum(1j * _expand(k, F.rank - 1) * Fh[..., a] for a, k in enumerate(sp.dk))
    return backward(out, F.grid, F.rank - 1)


def laplacian(f: PeriodicField) -> PeriodicField:
    sp = spectrum(f.grid.d, f.grid.n)
    return apply_multiplier(f, -sp.k2)


def curl_components(F: PeriodicField) -> np.ndarray:
    """Row-wise curl entries d_b F_ia - d_a F_ib for a < b, stacked last."""
    if F.rank != MATRIX:
        raise ValueError("curl is defined here for matrix fields")
    d = F.grid.d
    sp = spectrum(d, F.grid.n)
    Fh = forward(F)
    parts = []
    for a in range(d):
        for b in range(a + 1, d):
            kb = _expand(sp.dk[b], 1)
            ka = _expand(sp.dk[a], 1)
            parts.append(1j * (kb * Fh[..., a] - ka * Fh[..., b]))
    coeffs = np.stack(parts, axis=-1)
    return np.fft.irfftn(coeffs, s=F.grid.shape, axes=tuple(range(d)))


def curl_defect(F: PeriodicField) -> float:
    """L2 norm of all row-wise curl components of a matrix field."""
    c = curl_components(F)
    return float(np.sqrt(integrate(np.sum(c * c, axis=(-2, -1)))))


def solve_poisson_zero_mean(psi: PeriodicField, tol: float = 1e-10, return_mean: bool = False):
    """Zero-mean solution g of -Lap g = psi.

    A non-zero mean of ``psi`` is projected out first (with a warning when it
    exceeds ``tol``); ``return_mean=True`` also returns the removed mean.
    """
    if psi.rank == MATRIX:
        raise ValueError("Poisson solve expects a scalar or vector field")
    removed = psi.mean()
    if np.max(np.abs(removed)) > tol:
        warnings.warn(
            f"right-hand side has mean {removed!r}; projecting it out", RuntimeWarning, stacklevel=2
        )
    sp = spectrum(psi.grid.d, psi.grid.n)
    inv = np.zeros_like(sp.k2)
    nz = sp.k2 > 0
    inv[nz] = 1.0 / sp.k2[nz]
    coeffs = forward(psi) * _expand(inv, psi.rank)
    g = backward(coeffs, psi.grid, psi.rank)
    return (g, removed) if return_mean else g


def hodge_decompose(V: PeriodicField):
    """Split a matrix field row-wise into curl-free and divergence-free parts.

    Returns ``(curl_free, div_free, potential)``.  The mean of ``V`` goes to
    the curl-free part, and ``gradient(potential) + mean(V) == curl_free``.
    Modes invisible to the first-derivative symbol (pure Nyquist) are left in
    the divergence-free part, where both discrete div and curl annihilate them.
    """
    if V.rank != MATRIX:
        raise ValueError("hodge_decompose expects a matrix field")
    grid = V.grid
    sp = spectrum(grid.d, grid.n)
    Vh = forward(V)
    dk = [_expand(k, 1) for k in sp.dk]
    inv = np.zeros_like(sp.dk2)
    nz = sp.dk2 > 0
    inv[nz] = 1.0 / sp.dk2[nz]
    inv = _expand(inv, 1)
    kdotv = sum(dk[a] * Vh[..., a] for a in range(grid.d))  # per row i
    zh = -1j * kdotv * inv
    grad_zh = np.stack([1j * dk[a] * zh for a in range(grid.d)], axis=-1)
    potential = backward(zh, grid, VECTOR)
    const = V.mean()
    grad_z = backward(grad_zh, grid, MATRIX)
    curl_free = PeriodicField(grid, MATRIX, grad_z.data + const)
    div_free = V - curl_free
    return curl_free, div_free, potential


def hodge_potential(F: PeriodicField) -> tuple[PeriodicField, np.ndarray]:
    """Zero-mean y and constant matrix M with grad y + M the curl-free part of F."""
    _, _, y = hodge_decompose(F)
    return y, F.mean()


def hminus1_norm(f: PeriodicField) -> float:
    """H^{-1} norm of the zero-mean part, via the inverse Laplacian symbol."""
    sp = spectrum(f.grid.d, f.grid.n)
    fh = forward(f)
    w = _rfft_weights(f.grid)
    inv = np.zeros_like(sp.k2)
    nz = sp.k2 > 0
    inv[nz] = 1.0 / sp.k2[nz]
    mag = np.abs(fh) ** 2
    if f.rank:
        mag = mag.reshape(mag.shape[: f.grid.d] + (-1,)).sum(axis=-1)
    return float(np.sqrt(np.sum(w * inv * mag)) / f.grid.npoints)


def spectral_l2_norm(f: PeriodicField) -> float:
    """L2 norm computed from Fourier coefficients (Parseval)."""
    fh = forward(f)
    w = _rfft_weights(f.grid)
    mag = np.abs(fh) ** 2
    if f.rank:
        mag = mag.reshape(mag.shape[: f.grid.d] + (-1,)).sum(axis=-1)
    return float(np.sqrt(np.sum(w * mag)) / f.grid.npoints)


@functools.lru_cache(maxsize=16)
def _rfft_weights_cached(d: int, n: int) -> np.ndarray:
    # half-spectrum multiplicities: interior columns of the last axis count twice
    w = np.full(spectrum(d, n).k2.shape, 2.0)
    w[..., 0] = 1.0
    w[..., n // 2] = 1.0
    w.setflags(write=False)
    return w


def _rfft_weights(grid: Grid) -> np.ndarray:
    return _rfft_weights_cached(grid.d, grid.n)


def band_limited_random(
    grid: Grid, rank: int, rng: np.random.Generator, kmax: int, zero_mean: bool = True
) -> PeriodicField:
    """Random real field with Fourier content only on modes |k|_inf <= kmax."""
    sp = spectrum(grid.d, grid.n)
    mask = np.ones(sp.k2.shape, dtype=bool)
    for k in sp.kint:
        mask &= np.abs(k) <= kmax
    if zero_mean:
        mask &= sp.k2 > 0
    shape = sp.k2.shape + (grid.d,) * rank
    coeffs = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coeffs *= _expand(mask.astype(float), rank)
    return backward(coeffs, grid, rank)


def matrix_contract(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pointwise Frobenius product A:B over trailing (d, d) axes."""
    return np.einsum("...ij,...ij->...", A, B)


def stack_fields(fields: Sequence[PeriodicField]) -> np.ndarray:
    return np.stack([f.data for f in fields])
