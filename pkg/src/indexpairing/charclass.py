"""Characteristic forms on the leafwise cotangent model.

Differential forms live on two sites here.  The fiber site is the torus grid
already used by forms.py; derivatives are spectral and components follow the
sorted-subset convention.  The frequency site is a closed disc of fixed radius
in each cotangent plane, discretized in polar coordinates with Gauss-Legendre
radial nodes and an equispaced angular grid, so that radial derivatives are
exact on polynomials below the node count and angular derivatives are exact on
trigonometric polynomials below the angular band.

The module provides the curvature-to-form machinery (matrix-valued exterior
calculus on either site), Chern character forms of projector fields with an
optional connection perturbation, the multiplicative genus built from power
traces of the curvature, the Levi-Civita curvature of a sampled fiber metric,
and the three model projector families used by the scenarios: a flux-twisted
line bundle frame on the fiber, a clutching projector on the disc, and the
graph projector of a nonvanishing scalar symbol.

Normalization is fixed once: curvature enters the Chern character through the
scale 1/(2*pi*i) and enters the genus through root scale 1/(2*pi).  Any
further orientation constant belongs to the index integrand, not here.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np

from .dolbeault import landau_section_values
from .forms import (
    DegreeError,
    FoliatedForm,
    d_leafwise,
    index_subsets,
    merge_sign,
    subset_position,
    wedge,
)
from .grids import FiberModel, ModelError
from .groupoid import BaseModel
from .symbols import EllipticityError

CH_CURVATURE_SCALE = 1.0 / (2.0j * np.pi)
CURVATURE_ROOT_SCALE = 1.0 / (2.0 * np.pi)

# Exponential-of-traces coefficients of the multiplicative genus
# sqrt(det((R/2)/sinh(R/2))) = exp(AHAT_TR2*tr(R^2) + AHAT_TR4*tr(R^4) + ...),
# valid for any square matrix of commuting 2-form entries.  Expanding the
# exponential gives the degree-8 trace polynomial with the AHAT_TR2_SQ term.
AHAT_TR2 = Fraction(-1, 48)
AHAT_TR4 = Fraction(1, 5760)
AHAT_TR2_SQ = Fraction(1, 4608)

IDEMPOTENT_TOL = 1e-10


def a_hat_from_power_traces(tr2, tr4):
    """Genus terms by degree from the power traces of a scaled curvature.

    Works symbolically (exact Fraction coefficients survive sympy inputs), so
    series oracles can check the coefficients without any grid in sight.
    Returns {0: 1, 4: ..., 8: ...} where the entries are the degree-4 and
    degree-8 parts of the genus written in tr(R^2) and tr(R^4).
    """
    return {
        0: 1,
        4: AHAT_TR2 * tr2,
        8: AHAT_TR4 * tr4 + AHAT_TR2_SQ * tr2 * tr2,
    }


@lru_cache(maxsize=None)
def _smoothstep_coeffs(flatness: int) -> tuple[tuple[int, float], ...]:
    terms = [
        (flatness + j + 1, Fraction((-1) ** j * math.comb(flatness, j), flatness + j + 1))
        for j in range(flatness + 1)
    ]
    norm = sum(c for _, c in terms)
    return tuple((e, float(c / norm)) for e, c in terms)


def smoothstep_poly(u, flatness: int = 8):
    """Polynomial ramp from 0 at u=0 to 1 at u=1, clamped outside [0, 1].

    The first `flatness` derivatives vanish at both ends (the derivative is
    proportional to u^flatness * (1-u)^flatness), which keeps projector
    families built from the ramp smooth across gluing radii.
    """
    if flatness < 1:
        raise ValueError("flatness must be at least 1")
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    # Evaluate on [0, 1/2] and reflect through m(u) + m(1-u) = 1; the raw
    # alternating polynomial cancels catastrophically near u = 1.
    lower = np.minimum(u, 1.0 - u)
    out = np.zeros_like(u)
    for e, c in _smoothstep_coeffs(flatness):
        out += c * lower**e
    return np.where(u <= 0.5, out, 1.0 - out)


# ---------------------------------------------------------------------------
# The frequency disc


@dataclass(frozen=True)
class DiscModel:
    """Closed disc of given radius with a polar tensor quadrature.

    Radial nodes are Gauss-Legendre points mapped to (0, radius); the angular
    grid is equispaced.  Node ordering is C-order over (radial, angular), so
    flat fields have shape (nnodes,) with nnodes = nradial * nangular.
    """

    radius: float
    nradial: int = 48
    nangular: int = 48

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ModelError("disc radius must be positive")
        if self.nradial < 4 or self.nangular < 4:
            raise ModelError("disc needs at least 4 nodes per direction")

    @property
    def nnodes(self) -> int:
        return self.nradial * self.nangular

    @cached_property
    def _radial_rule(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.nradial)
        nodes = 0.5 * self.radius * (x + 1.0)
        weights = 0.5 * self.radius * w
        return nodes, weights

    @property
    def radial_nodes(self) -> np.ndarray:
        return self._radial_rule[0]

    @property
    def radial_weights(self) -> np.ndarray:
        return self._radial_rule[1]

    @cached_property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.nangular) / self.nangular

    @cached_property
    def rho(self) -> np.ndarray:
        """Radial coordinate per flat node."""
        return np.repeat(self.radial_nodes, self.nangular)

    @cached_property
    def theta(self) -> np.ndarray:
        """Angular coordinate per flat node."""
        return np.tile(self.angles, self.nradial)

    @cached_property
    def points(self) -> np.ndarray:
        """Cartesian node coordinates, shape (nnodes, 2)."""
        return np.column_stack((self.rho * np.cos(self.theta), self.rho * np.sin(self.theta)))

    @cached_property
    def weights(self) -> np.ndarray:
        """Plane-measure quadrature weights (rho dr dtheta), flat ordering."""
        ang = 2.0 * np.pi / self.nangular
        return np.repeat(self.radial_weights * self.radial_nodes * ang, self.nangular)

    @cached_property
    def _radial_diff(self) -> np.ndarray:
        x = self.radial_nodes
        diff = x[:, None] - x[None, :]
        np.fill_diagonal(diff, 1.0)
        # barycentric weights, rescaled to dodge overflow
        bary = 1.0 / diff.prod(axis=1)
        bary /= np.abs(bary).max()
        D = (bary[None, :] / bary[:, None]) / diff
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=1))
        return D

    def sample(self, fn) -> np.ndarray:
        """Evaluate fn(xi1, xi2) on the nodes."""
        return np.asarray(fn(self.points[:, 0], self.points[:, 1]))

    def derivative(self, field: np.ndarray, axis: int) -> np.ndarray:
        """Cartesian partial derivative along frequency axis 0 or 1.

        Accepts flat fields of shape (nnodes, ...); differentiation is
        barycentric in the radial direction and spectral in the angle.
        """
        if axis not in (0, 1):
            raise ModelError(f"disc axis must be 0 or 1, got {axis}")
        f = np.asarray(field, dtype=complex)
        shaped = f.reshape(self.nradial, self.nangular, -1)
        fr = np.einsum("ij,jtk->itk", self._radial_diff, shaped)
        freqs = np.fft.fftfreq(self.nangular, d=1.0 / self.nangular)
        if self.nangular % 2 == 0:
            freqs = freqs.copy()
            freqs[self.nangular // 2] = 0.0
        ft = np.fft.ifft(np.fft.fft(shaped, axis=1) * (1j * freqs)[None, :, None], axis=1)
        cos = np.cos(self.angles)[None, :, None]
        sin = np.sin(self.angles)[None, :, None]
        inv_rho = (1.0 / self.radial_nodes)[:, None, None]
        if axis == 0:
            out = cos * fr - sin * inv_rho * ft
        else:
            out = sin * fr + cos * inv_rho * ft
        return out.reshape(f.shape)

    def integrate(self, field: np.ndarray) -> complex:
        """Quadrature integral of a flat scalar field over the disc."""
        f = np.asarray(field)
        return complex(np.sum(self.weights * f))


@dataclass
class DiscForm:
    """Differential form on the frequency disc, degree 0, 1 or 2.

    Components follow the same sorted-subset convention as leafwise forms:
    degree 1 stores (d_xi1, d_xi2) coefficients, degree 2 the single
    d_xi1 ^ d_xi2 coefficient.
    """

    disc: DiscModel
    degree: int
    field: np.ndarray

    def __post_init__(self) -> None:
        if not 0 <= self.degree <= 2:
            raise DegreeError(f"disc form degree must be 0..2, got {self.degree}")
        self.field = np.asarray(self.field, dtype=complex)
        if self.field.ndim != 2 or self.field.shape != (self.disc.nnodes, self.ncomp):
            raise DegreeError(
                f"disc form field shape {self.field.shape} does not match "
                f"(nnodes={self.disc.nnodes}, ncomp={self.ncomp})"
            )

    @property
    def ncomp(self) -> int:
        return len(index_subsets(2, self.degree))

    @classmethod
    def zero(cls, disc: DiscModel, degree: int) -> "DiscForm":
        ncomp = len(index_subsets(2, degree))
        return cls(disc, degree, np.zeros((disc.nnodes, ncomp), dtype=complex))

    @classmethod
    def one(cls, disc: DiscModel) -> "DiscForm":
        return cls(disc, 0, np.ones((disc.nnodes, 1), dtype=complex))

    @classmethod
    def from_scalar(cls, disc: DiscModel, values: np.ndarray) -> "DiscForm":
        return cls(disc, 0, np.asarray(values, dtype=complex).reshape(-1, 1))

    def copy(self) -> "DiscForm":
        return DiscForm(self.disc, self.degree, self.field.copy())

    def __add__(self, other: "DiscForm") -> "DiscForm":
        if self.degree != other.degree or self.disc != other.disc:
            raise DegreeError("can only add disc forms of equal degree on one disc")
        return DiscForm(self.disc, self.degree, self.field + other.field)

    def __sub__(self, other: "DiscForm") -> "DiscForm":
        return self + other.scaled(-1.0)

    def scaled(self, factor: complex) -> "DiscForm":
        return DiscForm(self.disc, self.degree, self.field * factor)

    def max_abs(self) -> float:
        return float(np.abs(self.field).max()) if self.field.size else 0.0

    def integrate(self) -> complex:
        if self.degree != 2:
            raise DegreeError("only 2-forms integrate over the disc")
        return self.disc.integrate(self.field[:, 0])


def d_disc(form: DiscForm) -> DiscForm:
    """Exterior derivative on the frequency disc."""
    if form.degree >= 2:
        raise DegreeError("cannot differentiate a top-degree disc form")
    q = form.degree
    in_pos = subset_position(2, q)
    out_subs = index_subsets(2, q + 1)
    out = np.zeros((form.disc.nnodes, len(out_subs)), dtype=complex)
    for kk, K in enumerate(out_subs):
        for j in K:
            rest = tuple(i for i in K if i != j)
            sgn = merge_sign((j,), rest)
            out[:, kk] += sgn * form.disc.derivative(form.field[:, in_pos[rest]], j)
    return DiscForm(form.disc, q + 1, out)


def wedge_disc(f1: DiscForm, f2: DiscForm) -> DiscForm:
    q = f1.degree + f2.degree
    if q > 2:
        raise DegreeError("disc wedge exceeds the top degree")
    pos2 = subset_position(2, f2.degree)
    out_subs = index_subsets(2, q)
    out_pos = subset_position(2, q)
    out = np.zeros((f1.disc.nnodes, len(out_subs)), dtype=complex)
    for i1, I in enumerate(index_subsets(2, f1.degree)):
        iset = set(I)
        for K in out_subs:
            if not iset <= set(K):
                continue
            J = tuple(j for j in K if j not in iset)
            sgn = merge_sign(I, J)
            out[:, out_pos[K]] += sgn * f1.field[:, i1] * f2.field[:, pos2[J]]
    return DiscForm(f1.disc, q, out)


# ---------------------------------------------------------------------------
# Matrix-valued exterior calculus, shared by both sites


def matrix_d(field: np.ndarray, degree: int, dim: int, diff) -> np.ndarray:
    """Exterior derivative of a matrix-valued form.

    field has shape (n, ncomp, m, m); diff(block, axis) must differentiate a
    (n, m, m) entry block along one coordinate of the site.
    """
    if degree >= dim:
        raise DegreeError("cannot differentiate a top-degree form")
    in_pos = subset_position(dim, degree)
    out_subs = index_subsets(dim, degree + 1)
    n, _, m, _ = field.shape
    out = np.zeros((n, len(out_subs), m, m), dtype=complex)
    for kk, K in enumerate(out_subs):
        for j in K:
            rest = tuple(i for i in K if i != j)
            sgn = merge_sign((j,), rest)
            out[:, kk] += sgn * diff(field[:, in_pos[rest]], j)
    return out


def matrix_wedge(f1: np.ndarray, q1: int, f2: np.ndarray, q2: int, dim: int) -> np.ndarray:
    """Wedge of matrix-valued forms; entries multiply as matrices."""
    q = q1 + q2
    if q > dim:
        raise DegreeError("wedge exceeds the top degree")
    pos2 = subset_position(dim, q2)
    out_subs = index_subsets(dim, q)
    out_pos = subset_position(dim, q)
    n, _, m, _ = f1.shape
    out = np.zeros((n, len(out_subs), m, m), dtype=complex)
    for i1, I in enumerate(index_subsets(dim, q1)):
        iset = set(I)
        for K in out_subs:
            if not iset <= set(K):
                continue
            J = tuple(j for j in K if j not in iset)
            sgn = merge_sign(I, J)
            out[:, out_pos[K]] += sgn * (f1[:, i1] @ f2[:, pos2[J]])
    return out


def _fiber_block_derivative(block: np.ndarray, axis: int, fiber: FiberModel) -> np.ndarray:
    """Spectral derivative of an entry block (npoints, m, m) along one fiber axis."""
    shaped = block.reshape(fiber.grid_shape + block.shape[1:])
    n = fiber.grid_size
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        freqs = freqs.copy()
        freqs[n // 2] = 0.0
    shape = [1] * shaped.ndim
    shape[axis] = n
    mult = (2.0j * np.pi * freqs).reshape(shape)
    grid_axes = tuple(range(fiber.dim))
    out = np.fft.ifftn(np.fft.fftn(shaped, axes=grid_axes) * mult, axes=grid_axes)
    return out.reshape(block.shape)


def fiber_matrix_d(field: np.ndarray, degree: int, fiber: FiberModel) -> np.ndarray:
    return matrix_d(field, degree, fiber.dim, lambda blk, j: _fiber_block_derivative(blk, j, fiber))


def disc_matrix_d(field: np.ndarray, degree: int, disc: DiscModel) -> np.ndarray:
    return matrix_d(field, degree, 2, lambda blk, j: disc.derivative(blk, j))


# ---------------------------------------------------------------------------
# Chern character of a projector field


def _projected_curvature(p: np.ndarray, dim: int, dmat, connection: np.ndarray | None) -> np.ndarray:
    """Curvature 2-form p (dp ^ dp) p of the projected connection.

    With an extra connection 1-form a the projected connection picks up the
    compression A = p a p and the curvature gains p d(A) p + A ^ A.
    """
    dp = dmat(p[:, None], 0)
    F = matrix_wedge(dp, 1, dp, 1, dim)
    F = np.einsum("nij,ncjk,nkl->ncil", p, F, p)
    if connection is not None:
        A = np.einsum("nij,ncjk,nkl->ncil", p, connection, p)
        dA = dmat(A, 1)
        F = F + np.einsum("nij,ncjk,nkl->ncil", p, dA, p)
        F = F + matrix_wedge(A, 1, A, 1, dim)
    return F


def _chern_scalars(
    p: np.ndarray, dim: int, dmat, connection: np.ndarray | None = None
) -> dict[int, np.ndarray]:
    """Trace scalars of the Chern character by form degree for one site.

    Input is a pointwise projector field (n, m, m); the result maps the even
    degree 2j to component arrays (n, ncomp) of tr(p F^j) * scale^j / j!.
    """
    p = np.asarray(p, dtype=complex)
    defect = float(np.abs(p @ p - p).max())
    if defect > IDEMPOTENT_TOL:
        raise ModelError(f"field is not a projector: |p^2 - p| = {defect:.3e}")
    n = p.shape[0]
    out = {0: np.trace(p, axis1=-2, axis2=-1).reshape(n, 1)}
    if dim < 2:
        return out
    F = _projected_curvature(p, dim, dmat, connection)
    power = F
    j = 1
    while True:
        scale = CH_CURVATURE_SCALE**j / math.factorial(j)
        sandwich = np.einsum("nij,ncji->nc", p, power)
        out[2 * j] = scale * sandwich
        if 2 * (j + 1) > dim:
            break
        power = matrix_wedge(power, 2 * j, F, 2, dim)
        j += 1
    return out


# ---------------------------------------------------------------------------
# Characteristic classes on the combined sites


@dataclass
class CotangentTerm:
    """Separable product of a leafwise form and a disc form."""

    zform: FoliatedForm
    xform: DiscForm

    @property
    def degrees(self) -> tuple[int, int]:
        return (self.zform.degree, self.xform.degree)

    def scaled(self, factor: complex) -> "CotangentTerm":
        return CotangentTerm(self.zform.scaled(factor), self.xform.copy())


@dataclass
class CharClassForm:
    """Characteristic form on the cotangent model, stored as separable terms.

    Mixed-degree data is a list of (leafwise form, disc form) products; sums
    of terms of equal bidegree represent one component.  kind is a label for
    reporting; virtual_rank records the rank of the represented difference
    class (degree-0 normalization).
    """

    kind: str
    terms: list[CotangentTerm]
    virtual_rank: int = 0

    def part(self, z_degree: int, x_degree: int) -> list[CotangentTerm]:
        return [t for t in self.terms if t.degrees == (z_degree, x_degree)]

    def scaled(self, factor: complex) -> "CharClassForm":
        return CharClassForm(self.kind, [t.scaled(factor) for t in self.terms], self.virtual_rank)

    def __add__(self, other: "CharClassForm") -> "CharClassForm":
        return CharClassForm(
            f"{self.kind}+{other.kind}",
            list(self.terms) + list(other.terms),
            self.virtual_rank + other.virtual_rank,
        )

    def __sub__(self, other: "CharClassForm") -> "CharClassForm":
        return self + other.scaled(-1.0)


def unit_char(base: BaseModel, disc: DiscModel, kind: str = "unit", rank: int = 1) -> CharClassForm:
    r = base.fiber(0).dim
    ones = FoliatedForm(
        0,
        r,
        [np.full((base.fiber(x).npoints, 1), float(rank), dtype=complex) for x in range(len(base))],
        invariant=True,
    )
    return CharClassForm(kind, [CotangentTerm(ones, DiscForm.one(disc))], rank)


def wedge_char(c1: CharClassForm, c2: CharClassForm) -> CharClassForm:
    """Wedge on the combined sites; overflowing bidegrees drop out as zero."""
    terms: list[CotangentTerm] = []
    for t1 in c1.terms:
        for t2 in c2.terms:
            qz = t1.zform.degree + t2.zform.degree
            qx = t1.xform.degree + t2.xform.degree
            if qz > t1.zform.fiber_dim or qx > 2:
                continue
            sign = -1.0 if (t1.xform.degree * t2.zform.degree) % 2 else 1.0
            zw = wedge(t1.zform, t2.zform)
            xw = wedge_disc(t1.xform, t2.xform)
            terms.append(CotangentTerm(zw.scaled(sign), xw))
    return CharClassForm(
        f"{c1.kind}^{c2.kind}", terms, c1.virtual_rank * c2.virtual_rank
    )


def char_bucket_fields(terms: list[CotangentTerm], base: BaseModel) -> dict[tuple[int, int], list[np.ndarray]]:
    """Materialize summed full tensors per bidegree.

    Returns, for each (z_degree, x_degree) present, one array per base point
    of shape (npoints, ncomp_z, nnodes, ncomp_x).  Intended for equality and
    closedness checks at test scale; the arrays are dense.
    """
    buckets: dict[tuple[int, int], list[np.ndarray]] = {}
    for t in terms:
        key = t.degrees
        if key not in buckets:
            buckets[key] = [
                np.zeros(
                    (
                        t.zform.fields[x].shape[0],
                        t.zform.ncomp,
                        t.xform.disc.nnodes,
                        t.xform.ncomp,
                    ),
                    dtype=complex,
                )
                for x in range(len(base))
            ]
        for x in range(len(base)):
            buckets[key][x] += np.einsum("pc,nd->pcnd", t.zform.fields[x], t.xform.field)
    return buckets


def char_difference(c1: CharClassForm, c2: CharClassForm, base: BaseModel) -> float:
    """Largest pointwise deviation between two characteristic forms."""
    b1 = char_bucket_fields(c1.terms, base)
    b2 = char_bucket_fields(c2.terms, base)
    worst = 0.0
    for key in set(b1) | set(b2):
        for x in range(len(base)):
            a = b1[key][x] if key in b1 else 0.0
            b = b2[key][x] if key in b2 else 0.0
            diff = np.abs(a - b)
            if np.ndim(diff):
                worst = max(worst, float(diff.max()))
    return worst


def char_closedness_defect(cform: CharClassForm, base: BaseModel) -> float:
    """Max component of the total exterior derivative across both sites."""
    image: list[CotangentTerm] = []
    for t in cform.terms:
        qz, qx = t.degrees
        if qz < t.zform.fiber_dim:
            image.append(CotangentTerm(d_leafwise(t.zform, base), t.xform))
        if qx < 2:
            sign = -1.0 if qz % 2 else 1.0
            image.append(CotangentTerm(t.zform.scaled(sign), d_disc(t.xform)))
    if not image:
        return 0.0
    buckets = char_bucket_fields(image, base)
    worst = 0.0
    for arrs in buckets.values():
        for a in arrs:
            if a.size:
                worst = max(worst, float(np.abs(a).max()))
    return worst


def chern_character_fiber(
    base: BaseModel,
    disc: DiscModel,
    projectors: list[np.ndarray],
    connection: list[np.ndarray] | None = None,
    reference_rank: int = 0,
) -> CharClassForm:
    """Chern character of a projector family on the fiber site.

    projectors holds one (npoints, m, m) field per base point; an optional
    connection supplies a matrix 1-form (npoints, r, m, m) per base point.
    The result carries trivial disc dependence; wedge with a disc-side class
    for symbols.  reference_rank shifts the degree-0 part so a virtual class
    [p] - [trivial] can be formed without a second field.
    """
    if len(projectors) != len(base):
        raise ModelError("need one projector field per base point")
    r = base.fiber(0).dim
    per_degree: dict[int, list[np.ndarray]] = {}
    for x in range(len(base)):
        fiber = base.fiber(x)
        conn = None if connection is None else connection[x]
        scalars = _chern_scalars(
            projectors[x], r, lambda fld, q, fb=fiber: fiber_matrix_d(fld, q, fb), conn
        )
        scalars[0] = scalars[0] - reference_rank
        for deg, arr in scalars.items():
            per_degree.setdefault(deg, []).append(arr)
    rank = int(round(float(np.mean([a[:, 0].real.mean() for a in per_degree[0]]))))
    terms = []
    for deg, fields in sorted(per_degree.items()):
        zf = FoliatedForm(deg, r, fields)
        terms.append(CotangentTerm(zf, DiscForm.one(disc)))
    return CharClassForm("fiber-chern", terms, rank)


def chern_character_disc(
    base: BaseModel,
    disc: DiscModel,
    projector: np.ndarray,
    reference: np.ndarray | None = None,
    connection: np.ndarray | None = None,
) -> CharClassForm:
    """Chern character of a disc projector field, minus an optional reference.

    The reference is a constant matrix (or full field) describing the rim
    value; subtracting it forms the compactly supported difference class that
    symbol classes of elliptic operators produce.
    """
    scalars = _chern_scalars(projector, 2, lambda fld, q: disc_matrix_d(fld, q, disc), connection)
    if reference is not None:
        ref = np.asarray(reference, dtype=complex)
        if ref.ndim == 2:
            ref = np.broadcast_to(ref, projector.shape).copy()
        ref_scalars = _chern_scalars(ref, 2, lambda fld, q: disc_matrix_d(fld, q, disc))
        for deg in scalars:
            if deg in ref_scalars:
                scalars[deg] = scalars[deg] - ref_scalars[deg]
    r = base.fiber(0).dim
    ones = [np.ones((base.fiber(x).npoints, 1), dtype=complex) for x in range(len(base))]
    terms = []
    for deg, arr in sorted(scalars.items()):
        zf = FoliatedForm(0, r, ones, invariant=True)
        terms.append(CotangentTerm(zf, DiscForm(disc, deg, arr)))
    rank = int(round(float(scalars[0][:, 0].real.mean())))
    return CharClassForm("disc-chern", terms, rank)


# ---------------------------------------------------------------------------
# Model projector families


def twist_projector(fiber: FiberModel, twist: int) -> np.ndarray:
    """Rank-one projector field representing a flux line bundle on the fiber.

    Built from the lowest magnetic level frame; for unit flux a second level
    is included because a single section vanishes somewhere and the frame
    would degenerate.  twist 0 returns the constant rank-one projector.
    """
    if fiber.dim != 2:
        raise ModelError("flux projectors need a two-dimensional fiber")
    if twist == 0:
        return np.ones((fiber.npoints, 1, 1), dtype=complex)
    max_level = 0 if abs(twist) >= 2 else 1
    V = landau_section_values(fiber, twist, max_level)
    density = np.sum(np.abs(V) ** 2, axis=1)
    if density.min() < 1e-6 * density.max():
        raise ModelError("magnetic frame degenerates on the grid")
    p = np.einsum("ni,nj->nij", np.conj(V), V) / density[:, None, None]
    return p


def bott_projector(disc: DiscModel, flatness: int = 8) -> np.ndarray:
    """Unit-charge clutching projector on the frequency disc.

    Interpolates from a constant rank-one projector at the center to the
    complementary constant at the rim through the angular phase, flat to high
    order at both ends so the field extends smoothly over the compactified
    plane.  Pair with bott_reference() for the rim value.
    """
    u = (disc.rho / disc.radius) ** 2
    alpha = 0.5 * np.pi * smoothstep_poly(u, flatness)
    c = np.cos(alpha)
    s = np.sin(alpha)
    phase = np.exp(1j * disc.theta)
    p = np.empty((disc.nnodes, 2, 2), dtype=complex)
    p[:, 0, 0] = c * c
    p[:, 0, 1] = c * s * np.conj(phase)
    p[:, 1, 0] = c * s * phase
    p[:, 1, 1] = s * s
    return p


def bott_reference() -> np.ndarray:
    """Rim value of the clutching projectors, for difference classes."""
    return np.diag([0.0, 1.0]).astype(complex)


def graph_symbol_projector(disc: DiscModel, values: np.ndarray, flatness: int = 8) -> np.ndarray:
    """Graph projector of a nonvanishing scalar symbol on the disc.

    values holds the symbol samples on the disc nodes; its unit phase
    replaces the angular phase of the clutching projector, so the integral of
    the degree-2 character equals the winding of the symbol along the rim.
    """
    a = np.asarray(values, dtype=complex)
    if a.shape != (disc.nnodes,):
        raise ModelError("symbol samples must be one value per disc node")
    mag = np.abs(a)
    if mag.min() <= 0.0 or mag.min() < 1e-12 * mag.max():
        raise EllipticityError("symbol vanishes on the frequency disc")
    phase = a / mag
    u = (disc.rho / disc.radius) ** 2
    alpha = 0.5 * np.pi * smoothstep_poly(u, flatness)
    c = np.cos(alpha)
    s = np.sin(alpha)
    p = np.empty((disc.nnodes, 2, 2), dtype=complex)
    p[:, 0, 0] = c * c
    p[:, 0, 1] = c * s * np.conj(phase)
    p[:, 1, 0] = c * s * phase
    p[:, 1, 1] = s * s
    return p


# ---------------------------------------------------------------------------
# Levi-Civita curvature of a sampled fiber metric


def levi_civita_curvature(metric: np.ndarray, fiber: FiberModel) -> np.ndarray:
    """Curvature of the Levi-Civita connection of a grid-sampled metric.

    metric has shape (npoints, r, r), symmetric positive definite per point.
    Returns the matrix-valued curvature 2-form (npoints, C(r,2), r, r) with
    entry [.., K, i, j] the coefficient of dz^K in the mixed-index curvature
    acting on frame vectors (first matrix index up, second down).
    """
    r = fiber.dim
    g = np.asarray(metric, dtype=complex)
    if g.shape != (fiber.npoints, r, r):
        raise ModelError(f"metric shape {g.shape} does not match the fiber")
    ginv = np.linalg.inv(g)
    dg = np.stack([_fiber_block_derivative(g, j, fiber) for j in range(r)])
    # Christoffel symbols, index order [point, i, j, k] for Gamma^i_{jk}
    gamma = 0.5 * np.einsum(
        "pil,jplk->pijk", ginv, dg + np.einsum("kplj->jplk", dg) - np.einsum("lpjk->jplk", dg)
    )
    dgamma = np.stack([_fiber_block_derivative(gamma, j, fiber) for j in range(r)])
    # R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + G^i_{km} G^m_{lj} - G^i_{lm} G^m_{kj}
    riem = np.empty((fiber.npoints, r, r, r, r), dtype=complex)
    for k in range(r):
        for l in range(r):
            riem[:, :, :, k, l] = (
                dgamma[k][:, :, l, :]
                - dgamma[l][:, :, k, :]
                + np.einsum("pim,pmj->pij", gamma[:, :, k, :], gamma[:, :, l, :])
                - np.einsum("pim,pmj->pij", gamma[:, :, l, :], gamma[:, :, k, :])
            )
    subs = index_subsets(r, 2)
    out = np.empty((fiber.npoints, len(subs), r, r), dtype=complex)
    for pos, (k, l) in enumerate(subs):
        out[:, pos] = riem[:, :, :, k, l]
    return out


def christoffel_one_form(metric: np.ndarray, fiber: FiberModel) -> np.ndarray:
    """Connection matrix 1-form of the Levi-Civita connection.

    Returns (npoints, r, r, r) with entry [.., k, i, j] the dz^k coefficient
    of the connection acting on frames, consistent with the curvature layout.
    """
    r = fiber.dim
    g = np.asarray(metric, dtype=complex)
    ginv = np.linalg.inv(g)
    dg = np.stack([_fiber_block_derivative(g, j, fiber) for j in range(r)])
    gamma = 0.5 * np.einsum(
        "pil,jplk->pijk", ginv, dg + np.einsum("kplj->jplk", dg) - np.einsum("lpjk->jplk", dg)
    )
    out = np.empty((fiber.npoints, r, r, r), dtype=complex)
    for k in range(r):
        out[:, k] = gamma[:, :, k, :]
    return out


def a_hat_form(
    base: BaseModel,
    disc: DiscModel,
    metrics: list[np.ndarray] | None = None,
    curvatures: list[np.ndarray] | None = None,
) -> CharClassForm:
    """Multiplicative genus of the leafwise tangent as a characteristic form.

    Accepts either sampled metrics (one (npoints, r, r) array per base point)
    or precomputed curvature matrix 2-forms; with neither the genus of the
    flat structure, identically 1, is returned.  Curvature enters through the
    root scale 1/(2*pi) and the exponential trace series; on fibers of
    dimension below four every higher term vanishes identically.
    """
    r = base.fiber(0).dim
    out = unit_char(base, disc, kind="a-hat")
    if metrics is None and curvatures is None:
        return out
    if curvatures is None:
        curvatures = [levi_civita_curvature(metrics[x], base.fiber(x)) for x in range(len(base))]
    if len(curvatures) != len(base):
        raise ModelError("need one curvature per base point")
    if r < 4:
        return out
    deg4 = []
    deg8 = []
    for x in range(len(base)):
        R = np.asarray(curvatures[x], dtype=complex) * CURVATURE_ROOT_SCALE
        R2 = matrix_wedge(R, 2, R, 2, r)
        tr2 = np.trace(R2, axis1=-2, axis2=-1)
        deg4.append(float(AHAT_TR2) * tr2)
        if r >= 8:
            R4 = matrix_wedge(R2, 4, R2, 4, r)
            tr4 = np.trace(R4, axis1=-2, axis2=-1)
            sq = matrix_wedge(
                tr2[:, :, None, None], 4, tr2[:, :, None, None], 4, r
            )[:, :, 0, 0]
            deg8.append(float(AHAT_TR4) * tr4 + float(AHAT_TR2_SQ) * sq)
    out.terms.append(CotangentTerm(FoliatedForm(4, r, deg4), DiscForm.one(disc)))
    if deg8:
        out.terms.append(CotangentTerm(FoliatedForm(8, r, deg8), DiscForm.one(disc)))
    return out
