"""Flat torus fibers: equispaced grids, truncated Fourier lattices, spectral helpers.

A fiber is the torus [0,1)^r sampled on an equispaced tensor grid with n
points per dimension.  Band-limited data lives on the mode box {-N..N}^r.
Uniform-weight quadrature on the grid integrates trigonometric polynomials
of band <= n-1 exactly, so products of two band-N fields are integrated
exactly once n >= 2N+2.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI_I = 2j * np.pi


class ModelError(ValueError):
    """Raised when a fiber or base model violates a structural precondition."""


@dataclass(frozen=True)
class FiberModel:
    """Torus fiber of dimension ``dim`` with Fourier cutoff and grid resolution.

    kind is "circle" (dim 1) or "torus".  grid_size is the number of grid
    points per dimension and must be at least 2*fourier_cutoff + 2 so that
    quadrature is exact on products of band-limited fields.
    """

    kind: str
    dim: int
    fourier_cutoff: int
    grid_size: int

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "torus"):
            raise ModelError(f"unknown fiber kind {self.kind!r}")
        if self.kind == "circle" and self.dim != 1:
            raise ModelError("circle fibers are one dimensional")
        if self.dim < 1:
            raise ModelError("fiber dimension must be positive")
        if self.fourier_cutoff < 1:
            raise ModelError("fourier cutoff must be at least 1")
        if self.grid_size < 2 * self.fourier_cutoff + 2:
            raise ModelError(
                "grid must have at least 2N+2 points per dimension for "
                f"cutoff N={self.fourier_cutoff} (got {self.grid_size})"
            )

    @property
    def npoints(self) -> int:
        return self.grid_size**self.dim

    @property
    def nmodes(self) -> int:
        return (2 * self.fourier_cutoff + 1) ** self.dim

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return (self.grid_size,) * self.dim

    @property
    def quad_weight(self) -> float:
        """Quadrature weight per grid point (total fiber volume 1)."""
        return 1.0 / self.npoints

    def modes(self) -> np.ndarray:
        return mode_lattice(self.fourier_cutoff, self.dim)

    def points(self) -> np.ndarray:
        return grid_points(self.grid_size, self.dim)

    def eval_matrix(self) -> np.ndarray:
        return eval_matrix(self.grid_size, self.fourier_cutoff, self.dim)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@lru_cache(maxsize=None)
def mode_lattice(N: int, r: int) -> np.ndarray:
    """Integer mode box {-N..N}^r in lexicographic order, shape ((2N+1)^r, r)."""
    axes = [np.arange(-N, N + 1)] * r
    mesh = np.meshgrid(*axes, indexing="ij")
    return _readonly(np.stack([m.ravel() for m in mesh], axis=-1))


@lru_cache(maxsize=None)
def grid_points(n: int, r: int) -> np.ndarray:
    """Grid points j/n in [0,1)^r, shape (n^r, r), row-major over axes."""
    axes = [np.arange(n) / n] * r
    mesh = np.meshgrid(*axes, indexing="ij")
    return _readonly(np.stack([m.ravel() for m in mesh], axis=-1))


@lru_cache(maxsize=None)
def eval_matrix(n: int, N: int, r: int) -> np.ndarray:
    """Matrix E[z, nu] = exp(2 pi i nu.z) evaluating box coefficients on the grid.

    Columns are orthonormal for the quadrature inner product: E^* E / n^r = I
    whenever n > 2N.
    """
    z = grid_points(n, r)
    nu = mode_lattice(N, r)
    return _readonly(np.exp(TWO_PI_I * (z @ nu.T)))


def eval_modes_at(coeffs: np.ndarray, modes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate sum_nu coeffs[nu] e^{2 pi i nu.z} at arbitrary points."""
    return np.exp(TWO_PI_I * (points @ modes.T)) @ coeffs


def grid_to_box(field: np.ndarray, fiber: FiberModel) -> np.ndarray:
    """Fourier coefficients of a grid field on the mode box (aliased projection).

    Exact for fields that are band-limited to the box.
    """
    shaped = np.asarray(field, dtype=complex).reshape(fiber.grid_shape)
    full = np.fft.fftn(shaped) / fiber.npoints
    N = fiber.fourier_cutoff
    idx = np.arange(-N, N + 1)
    out = full
    for ax in range(fiber.dim):
        out = np.take(out, idx, axis=ax)
    return out.reshape(fiber.nmodes)


def box_to_grid(coeffs: np.ndarray, fiber: FiberModel) -> np.ndarray:
    """Grid samples of a mode-box coefficient vector."""
    return fiber.eval_matrix() @ np.asarray(coeffs, dtype=complex)


def spectral_derivative(field: np.ndarray, axis: int, fiber: FiberModel) -> np.ndarray:
    """Partial derivative d/dz_axis via the full FFT of the grid field.

    The unmatched Nyquist mode (n even) is dropped from the derivative; it is
    absent from all band-limited data anyway.
    """
    n = fiber.grid_size
    shaped = np.asarray(field, dtype=complex).reshape(fiber.grid_shape)
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        freqs = freqs.copy()
        freqs[n // 2] = 0.0
    shape = [1] * fiber.dim
    shape[axis] = n
    mult = TWO_PI_I * freqs.reshape(shape)
    out = np.fft.ifftn(np.fft.fftn(shaped) * mult)
    return out.reshape(field.shape)


def band_limit(field: np.ndarray, fiber: FiberModel) -> np.ndarray:
    """Project a grid field onto the mode box (drop all higher harmonics)."""
    return box_to_grid(grid_to_box(field, fiber), fiber).reshape(field.shape)


def integrate_grid(field: np.ndarray) -> complex:
    """Quadrature integral over the unit-volume fiber."""
    return complex(np.mean(field))


def random_band_limited(
    rng: np.random.Generator,
    fiber: FiberModel,
    band: int,
    real: bool = True,
    scale: float = 1.0,
) -> np.ndarray:
    """Seeded random trigonometric polynomial of band <= band, as a grid field."""
    if band > fiber.fourier_cutoff:
        raise ModelError("requested band exceeds the fiber cutoff")
    modes = mode_lattice(band, fiber.dim)
    coeff = rng.normal(size=len(modes)) + 1j * rng.normal(size=len(modes))
    coeff *= scale / np.sqrt(len(modes))
    vals = eval_modes_at(coeff, modes, fiber.points())
    return np.real(vals) if real else vals
