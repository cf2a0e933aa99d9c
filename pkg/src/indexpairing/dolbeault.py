"""Twisted antiholomorphic derivative on the two-torus, realized exactly.

Sections of the degree-d twist are functions on the plane with
f(z1 + 1, z2) = f(z) and f(z1, z2 + 1) = exp(-2 pi i d z1) f(z); the operator
is D = dbar + pi i d z2 with dbar = (d/dz1 + i d/dz2) / 2.  Fourier analysis
in z1 splits sections into |d| sectors, and in each sector D is a harmonic
oscillator ladder:

    level basis  B_{j,l}(z) = (2 pi |d|)^(1/4) * sum_p h_l(sqrt(2 pi |d|)
                               * (z2 - p + j/d)) * exp(2 pi i (j - d p) z1)

with h_l the orthonormal Hermite functions.  For d > 0 the ladder lowers,
D B_{j,l} = i sqrt(pi d l) B_{j,l-1}, so the kernel is the |d|-dimensional
level zero; for d < 0 it raises and the cokernel is level zero.  The operator
blocks are assembled from these exact relations; a quasi-periodic
finite-difference application is provided separately as an independent check.
"""
from __future__ import annotations

import numpy as np

from .grids import FiberModel, ModelError, grid_points
from .groupoid import BaseModel
from .operators import LeafwiseOperatorFamily, OperatorBlock, SectionBasis, fourier_basis


def hermite_values(max_level: int, t: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite function values, shape (max_level + 1,) + t.shape."""
    t = np.asarray(t, dtype=float)
    out = np.empty((max_level + 1,) + t.shape)
    out[0] = np.pi ** (-0.25) * np.exp(-0.5 * t * t)
    if max_level >= 1:
        out[1] = np.sqrt(2.0) * t * out[0]
    for l in range(2, max_level + 1):
        out[l] = t * np.sqrt(2.0 / l) * out[l - 1] - np.sqrt((l - 1.0) / l) * out[l - 2]
    return out


def landau_section_values(fiber: FiberModel, twist: int, max_level: int) -> np.ndarray:
    """Grid samples of the level basis, columns ordered level-major.

    Column l * |twist| + j holds B_{j,l}.  The image sum over p is truncated
    where the Gaussian tails drop below working precision.
    """
    if fiber.dim != 2:
        raise ModelError("the twisted realization lives on two-dimensional fibers")
    if twist == 0:
        raise ModelError("zero twist has no level basis; use the Fourier realization")
    d = int(twist)
    s = abs(d)
    scale = np.sqrt(2.0 * np.pi * s)
    reach = (np.sqrt(2.0 * max_level + 1.0) + 9.0) / scale
    p_max = int(np.ceil(reach)) + 1
    pts = grid_points(fiber.grid_size, 2)
    z1, z2 = pts[:, 0], pts[:, 1]
    cols = np.zeros((fiber.npoints, s * (max_level + 1)), dtype=complex)
    norm = (2.0 * np.pi * s) ** 0.25
    for j in range(s):
        for p in range(-p_max, p_max + 1):
            u = z2 - p + j / d
            h = hermite_values(max_level, scale * u)
            phase = np.exp(2j * np.pi * (j - d * p) * z1)
            for l in range(max_level + 1):
                cols[:, l * s + j] += norm * h[l] * phase
    return cols


def landau_basis(fiber: FiberModel, twist: int, max_level: int) -> SectionBasis:
    return SectionBasis(
        fiber,
        landau_section_values(fiber, twist, max_level),
        key=("landau", int(twist), fiber.grid_size, max_level),
    )


def dolbeault_block(fiber: FiberModel, twist: int, levels: int) -> OperatorBlock:
    """One rectangular block of the twisted operator.

    ``levels`` is the highest level retained on the larger side.  For
    twist > 0 the domain holds levels 0..levels and the codomain 0..levels-1;
    for twist < 0 the two sides swap roles; for twist = 0 the operator is the
    exact Fourier multiplier pi i (nu1 + i nu2) on the truncated box.
    """
    d = int(twist)
    if levels < 1:
        raise ModelError("at least one level transition is required")
    if d == 0:
        basis = fourier_basis(fiber)
        modes = fiber.modes()
        mult = np.pi * 1j * (modes[:, 0] + 1j * modes[:, 1])
        return OperatorBlock(basis, basis, np.diag(mult.astype(complex)))
    s = abs(d)
    big = landau_basis(fiber, d, levels)
    small = landau_basis(fiber, d, levels - 1)
    mat = np.zeros((small.size, big.size), dtype=complex) if d > 0 else np.zeros(
        (big.size, small.size), dtype=complex
    )
    if d > 0:
        for l in range(1, levels + 1):
            coef = 1j * np.sqrt(np.pi * d * l)
            for j in range(s):
                mat[(l - 1) * s + j, l * s + j] = coef
        return OperatorBlock(big, small, mat)
    for l in range(0, levels):
        coef = -1j * np.sqrt(np.pi * s * (l + 1))
        for j in range(s):
            mat[(l + 1) * s + j, l * s + j] = coef
    return OperatorBlock(small, big, mat)


def dolbeault_family(base: BaseModel, twist: int, levels: int) -> LeafwiseOperatorFamily:
    blocks = [dolbeault_block(base.fiber(x), twist, levels) for x in range(len(base))]
    return LeafwiseOperatorFamily(base, blocks, order=1.0)


_FD6 = (
    (-3, -1.0 / 60.0),
    (-2, 3.0 / 20.0),
    (-1, -3.0 / 4.0),
    (1, 3.0 / 4.0),
    (2, -3.0 / 20.0),
    (3, 1.0 / 60.0),
)


def twisted_shift(field: np.ndarray, ticks: int, twist: int, fiber: FiberModel) -> np.ndarray:
    """Sample translate in the second coordinate with the quasi-periodic wrap.

    Rows that cross the unit cell pick up the boundary factor
    exp(-+ 2 pi i twist z1) so the result samples the same section of the
    twisted bundle.
    """
    n = fiber.grid_size
    shaped = field.reshape(fiber.grid_shape).copy()
    z1 = grid_points(n, 2)[:, 0].reshape(fiber.grid_shape)
    rolled = np.roll(shaped, -ticks, axis=1)
    j = np.arange(n)
    wrapped = (j + ticks) // n  # how many cells each column crossed
    factors = np.exp(-2j * np.pi * twist * z1[:, :1]) ** wrapped[None, :]
    return (rolled * factors).reshape(field.shape)


def dolbeault_apply_fd(field: np.ndarray, twist: int, fiber: FiberModel) -> np.ndarray:
    """Independent application of D: spectral in z1, sixth-order stencil in z2."""
    from .grids import spectral_derivative

    n = fiber.grid_size
    d1 = spectral_derivative(field, 0, fiber)
    d2 = np.zeros_like(field, dtype=complex)
    for off, coef in _FD6:
        d2 += coef * twisted_shift(field, off, twist, fiber)
    d2 *= n
    pts = grid_points(n, 2)
    return 0.5 * (d1 + 1j * d2) + np.pi * 1j * twist * pts[:, 1] * field


def magnetic_translation(field: np.ndarray, v_ticks: tuple[int, int], twist: int, fiber: FiberModel) -> np.ndarray:
    """Bundle-compatible translation by a grid vector v.

    (T_v f)(z) = exp(2 pi i twist v2 z1) f(z + v), where the argument shift
    respects the quasi-periodic wrap.  Requires twist * v to be integral, so
    the phase is a genuine character of the translation.
    """
    n = fiber.grid_size
    t1, t2 = int(v_ticks[0]), int(v_ticks[1])
    if (twist * t1) % n or (twist * t2) % n:
        raise ModelError("translation is not compatible with the twist")
    shifted = twisted_shift(field, t2, twist, fiber)
    shaped = shifted.reshape(fiber.grid_shape)
    shaped = np.roll(shaped, -t1, axis=0)
    pts = grid_points(n, 2)
    phase = np.exp(2j * np.pi * twist * (t2 / n) * pts[:, 0])
    return phase * shaped.reshape(field.shape)


def magnetic_translation_matrix(
    basis: SectionBasis, v_ticks: tuple[int, int], twist: int
) -> np.ndarray:
    """Matrix of the bundle translation on a section basis."""
    moved = np.column_stack(
        [magnetic_translation(basis.matrix[:, k], v_ticks, twist, basis.fiber) for k in range(basis.size)]
    )
    return basis.matrix.conj().T @ moved / basis.fiber.npoints
