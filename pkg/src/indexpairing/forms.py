"""Leafwise differential forms: exterior calculus, invariant projection, integration.

A leafwise q-form is stored per base point as an array of shape
(npoints, ncomp) where ncomp = C(r, q) and components are indexed by sorted
coordinate subsets in lexicographic order.  All derivatives are spectral, so
d is exact on band-limited data and the grid sum of any exact top component
vanishes to round-off (the derivative has no zero mode).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import combinations

import numpy as np

from .density import CutoffDensity, TransversalDensity
from .grids import ModelError, spectral_derivative
from .groupoid import Arrow, BaseModel
from .space import AffineTorusMap, FiberedGSpace


class DegreeError(ModelError):
    """Raised when a form degree is outside the valid range for an operation."""


class InvarianceError(ModelError):
    """Raised when an operation requires an invariant input and the flag is unset."""


@lru_cache(maxsize=None)
def index_subsets(r: int, q: int) -> tuple[tuple[int, ...], ...]:
    """Sorted coordinate subsets of size q in lexicographic order."""
    return tuple(combinations(range(r), q))


@lru_cache(maxsize=None)
def subset_position(r: int, q: int) -> dict[tuple[int, ...], int]:
    return {s: i for i, s in enumerate(index_subsets(r, q))}


def merge_sign(left: tuple[int, ...], right: tuple[int, ...]) -> int:
    """Sign of the shuffle sorting left+right, both inputs sorted and disjoint."""
    inversions = sum(1 for i in left for j in right if i > j)
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def _minor_matrix(A_flat: tuple, r: int, q: int) -> np.ndarray:
    """Minors M[J, I] = det(A[rows J, cols I]) over size-q subsets."""
    A = np.asarray(A_flat, dtype=float).reshape(r, r)
    subs = index_subsets(r, q)
    M = np.empty((len(subs), len(subs)))
    for jj, J in enumerate(subs):
        for ii, I in enumerate(subs):
            if q == 0:
                M[jj, ii] = 1.0
            else:
                M[jj, ii] = np.linalg.det(A[np.ix_(J, I)])
    return M


def minor_matrix(A: np.ndarray, q: int) -> np.ndarray:
    A = np.asarray(A)
    return _minor_matrix(tuple(A.ravel().tolist()), A.shape[0], q)


@dataclass
class FoliatedForm:
    """Family of leafwise q-forms over the base."""

    degree: int
    fiber_dim: int
    fields: list[np.ndarray]
    invariant: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.degree <= self.fiber_dim:
            raise DegreeError(
                f"degree {self.degree} invalid for fiber dimension {self.fiber_dim}"
            )
        ncomp = self.ncomp
        self.fields = [np.asarray(f, dtype=complex) for f in self.fields]
        for f in self.fields:
            if f.ndim != 2 or f.shape[1] != ncomp:
                raise DegreeError(
                    f"component array shape {f.shape} does not match ncomp={ncomp}"
                )

    @property
    def ncomp(self) -> int:
        return len(index_subsets(self.fiber_dim, self.degree))

    @classmethod
    def zero(cls, base: BaseModel, degree: int) -> "FoliatedForm":
        r = base.fiber(0).dim
        ncomp = len(index_subsets(r, degree))
        fields = [
            np.zeros((base.fiber(x).npoints, ncomp), dtype=complex)
            for x in range(len(base))
        ]
        return cls(degree, r, fields, invariant=True)

    @classmethod
    def from_scalar(cls, base: BaseModel, scalars: list[np.ndarray]) -> "FoliatedForm":
        r = base.fiber(0).dim
        fields = [np.asarray(s, dtype=complex).reshape(-1, 1) for s in scalars]
        return cls(0, r, fields)

    @classmethod
    def volume(cls, base: BaseModel) -> "FoliatedForm":
        """The top form dz_1 ^ ... ^ dz_r with unit coefficient everywhere."""
        r = base.fiber(0).dim
        fields = [
            np.ones((base.fiber(x).npoints, 1), dtype=complex)
            for x in range(len(base))
        ]
        return cls(r, r, fields, invariant=True)

    def copy(self) -> "FoliatedForm":
        return replace(self, fields=[f.copy() for f in self.fields])

    def __add__(self, other: "FoliatedForm") -> "FoliatedForm":
        if self.degree != other.degree:
            raise DegreeError("cannot add forms of different degree")
        return FoliatedForm(
            self.degree,
            self.fiber_dim,
            [a + b for a, b in zip(self.fields, other.fields)],
            invariant=self.invariant and other.invariant,
        )

    def __sub__(self, other: "FoliatedForm") -> "FoliatedForm":
        return self + other.scaled(-1)

    def scaled(self, factor: complex) -> "FoliatedForm":
        return replace(self, fields=[factor * f for f in self.fields])

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(f))) if f.size else 0.0 for f in self.fields)


def d_leafwise(form: FoliatedForm, base: BaseModel) -> FoliatedForm:
    """Spectral exterior derivative along the fibers."""
    r = form.fiber_dim
    if form.degree >= r:
        raise DegreeError("cannot differentiate a top-degree form")
    q = form.degree
    in_pos = subset_position(r, q)
    out_subs = index_subsets(r, q + 1)
    out_fields = []
    for x in range(len(base)):
        fiber = base.fiber(x)
        src = form.fields[x]
        out = np.zeros((src.shape[0], len(out_subs)), dtype=complex)
        for kk, K in enumerate(out_subs):
            for j in K:
                rest = tuple(i for i in K if i != j)
                sgn = merge_sign((j,), rest)
                out[:, kk] += sgn * spectral_derivative(src[:, in_pos[rest]], j, fiber)
        out_fields.append(out)
    return FoliatedForm(q + 1, r, out_fields, invariant=form.invariant)


def wedge(f1: FoliatedForm, f2: FoliatedForm) -> FoliatedForm:
    r = f1.fiber_dim
    q = f1.degree + f2.degree
    if q > r:
        raise DegreeError("wedge exceeds the top degree")
    pos1 = index_subsets(r, f1.degree)
    pos2 = subset_position(r, f2.degree)
    out_subs = index_subsets(r, q)
    out_pos = subset_position(r, q)
    out_fields = [
        np.zeros((a.shape[0], len(out_subs)), dtype=complex) for a in f1.fields
    ]
    for i1, I in enumerate(pos1):
        iset = set(I)
        for K in out_subs:
            if not iset <= set(K):
                continue
            J = tuple(j for j in K if j not in iset)
            sgn = merge_sign(I, J)
            for x, out in enumerate(out_fields):
                out[:, out_pos[K]] += sgn * f1.fields[x][:, i1] * f2.fields[x][:, pos2[J]]
    return FoliatedForm(q, r, out_fields, invariant=f1.invariant and f2.invariant)


def pullback_form_field(m: AffineTorusMap, field: np.ndarray, n: int, q: int) -> np.ndarray:
    """Pointwise pullback of a single q-form field under an affine torus map.

    out_I(z) = sum_J field_J(m z) det(A[J, I]).
    """
    pulled = m.pullback_field(field, n)
    if q == 0:
        return pulled
    M = minor_matrix(m.A, q)
    return pulled @ M


def transport_form(gspace: FiberedGSpace, a: Arrow, field: np.ndarray, q: int) -> np.ndarray:
    """Carry a q-form field on the source fiber to the target fiber.

    Matches the function transport: the result is the pullback of the source
    field under the stored target-to-source fiber map.
    """
    n = gspace.base.fiber(a.src).grid_size
    return pullback_form_field(gspace.fiber_map(a), field, n, q)


def form_invariance_defect(gspace: FiberedGSpace, form: FoliatedForm) -> float:
    """Max over arrows of the transport mismatch of the family."""
    worst = 0.0
    for a in gspace.groupoid.arrows:
        moved = transport_form(gspace, a, form.fields[a.src], form.degree)
        worst = max(worst, float(np.max(np.abs(form.fields[a.tgt] - moved))))
    return worst


def invariant_project_form(
    gspace: FiberedGSpace, cutoff: CutoffDensity, form: FoliatedForm
) -> FoliatedForm:
    """Cutoff-weighted average onto the invariant forms.

    (P form)_x = sum over arrows a from x of (c o action_a) * action_a-pullback
    of the target component.  Fixes invariant inputs exactly (partition
    identity) and always lands in the invariants.
    """
    q = form.degree
    out_fields = []
    for x in range(len(gspace.base)):
        n = gspace.base.fiber(x).grid_size
        acc = np.zeros_like(form.fields[x])
        for a in gspace.groupoid.arrows_from(x):
            weight = gspace.eval_after_action(a, cutoff.fields[a.tgt]).real
            pulled = pullback_form_field(
                gspace.point_action(a), form.fields[a.tgt], n, q
            )
            acc += weight[:, None] * pulled
        out_fields.append(acc)
    return FoliatedForm(q, form.fiber_dim, out_fields, invariant=True)


def integrate_invariant(
    form: FoliatedForm, cutoff: CutoffDensity, dens: TransversalDensity
) -> complex:
    """Quadrature of a top-degree invariant form against the cutoff and masses.

    Value = sum over base points of weight*mass * mean_z c(z) * top component.
    Independent of the cutoff choice and zero on derivatives of invariant
    forms, provided the action is orientation preserving and the transverse
    mass is orbit-constant.
    """
    if form.degree != form.fiber_dim:
        raise DegreeError("integration requires a top-degree form")
    if not form.invariant:
        raise InvarianceError("integration requires the invariance flag")
    gspace = dens.gspace
    total = 0.0 + 0.0j
    for x in range(len(gspace.base)):
        weighted = cutoff.fields[x] * form.fields[x][:, 0]
        total += dens.mass(x) * np.mean(weighted)
    return complex(total)


def cohomology_rank(
    gspace: FiberedGSpace,
    cutoff: CutoffDensity,
    q: int,
    threshold: float = 1e-8,
) -> int:
    """Rank of degree-q cohomology of the band-limited invariant complex.

    Assembles the derivative on grid samples of the band-limited q and q-1
    form spaces, restricts to the range of the invariant projection, and
    counts dimensions by singular-value rank with a relative threshold.
    Reliable when the action maps preserve the Fourier box (translations and
    signed permutations).
    """
    base = gspace.base
    r = gspace.fiber_dim

    def basis_forms(p: int) -> list[FoliatedForm]:
        ncomp = len(index_subsets(r, p))
        out = []
        for x in range(len(base)):
            E = base.fiber(x).eval_matrix()
            for c in range(ncomp):
                for col in range(E.shape[1]):
                    fields = [
                        np.zeros((base.fiber(y).npoints, ncomp), dtype=complex)
                        for y in range(len(base))
                    ]
                    fields[x][:, c] = E[:, col]
                    out.append(FoliatedForm(p, r, fields))
        return out

    def to_vector(form: FoliatedForm) -> np.ndarray:
        return np.concatenate([f.ravel() for f in form.fields])

    def rank_of(Mt: np.ndarray) -> int:
        if Mt.size == 0:
            return 0
        s = np.linalg.svd(Mt, compute_uv=False)
        if s[0] == 0:
            return 0
        return int(np.sum(s > threshold * s[0]))

    def invariant_basis(p: int) -> np.ndarray:
        forms = basis_forms(p)
        cols = [to_vector(invariant_project_form(gspace, cutoff, f)) for f in forms]
        P = np.stack(cols, axis=1)
        U, s, _ = np.linalg.svd(P, full_matrices=False)
        keep = s > threshold * (s[0] if s.size and s[0] > 0 else 1.0)
        return U[:, keep]

    Uq = invariant_basis(q)
    dim_inv = Uq.shape[1]
    if q < r:
        d_cols = []
        for j in range(dim_inv):
            comp_fields = []
            start = 0
            ncomp = len(index_subsets(r, q))
            for x in range(len(base)):
                npts = base.fiber(x).npoints
                comp_fields.append(Uq[start : start + npts * ncomp, j].reshape(npts, ncomp))
                start += npts * ncomp
            fq = FoliatedForm(q, r, comp_fields)
            d_cols.append(to_vector(d_leafwise(fq, base)))
        rank_dq = rank_of(np.stack(d_cols, axis=1))
    else:
        rank_dq = 0
    dim_ker = dim_inv - rank_dq

    if q == 0:
        rank_prev = 0
    else:
        Uprev = invariant_basis(q - 1)
        d_cols = []
        ncomp = len(index_subsets(r, q - 1))
        for j in range(Uprev.shape[1]):
            comp_fields = []
            start = 0
            for x in range(len(base)):
                npts = base.fiber(x).npoints
                comp_fields.append(
                    Uprev[start : start + npts * ncomp, j].reshape(npts, ncomp)
                )
                start += npts * ncomp
            fprev = FoliatedForm(q - 1, r, comp_fields)
            d_cols.append(to_vector(d_leafwise(fprev, base)))
        rank_prev = rank_of(np.stack(d_cols, axis=1))
    return dim_ker - rank_prev
