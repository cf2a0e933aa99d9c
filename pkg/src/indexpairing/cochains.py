"""Alexander-Spanier style cochains, their differential, and the form realization.

A degree-k cochain is a finite sum of elementary tensors (f_0, ..., f_k),
each factor a scalar field family over the base, evaluated on (k+1)-tuples of
fiber points as the product f_0(z_0) ... f_k(z_k).  Only tuples whose points
lie within the germ radius of each other matter to the pairing downstream;
the cochain itself stores the radius.

The realization map lam sends f_0 (x) ... (x) f_k to f_0 df_1 ^ ... ^ df_k.
It intertwines the tuple differential with the leafwise exterior derivative
and transport along arrows, which is what the chain-map and equivariance
tests check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forms import DegreeError, FoliatedForm, d_leafwise, wedge
from .grids import ModelError, band_limit
from .groupoid import Arrow, BaseModel
from .space import FiberedGSpace

ScalarFamily = list  # one complex grid field per base point


@dataclass(frozen=True)
class ASTerm:
    weight: complex
    factors: tuple  # k+1 scalar families


class ASCochain:
    """Finite sum of elementary tensors of band-limited scalar families."""

    def __init__(
        self,
        base: BaseModel,
        degree: int,
        terms: list[ASTerm],
        germ_radius: float | None = None,
        check_band: bool = True,
    ):
        if degree < 0:
            raise DegreeError("cochain degree must be nonnegative")
        self.base = base
        self.degree = degree
        self.terms = list(terms)
        if germ_radius is None:
            # default: three grid spacings of the finest fiber
            germ_radius = 3.0 / max(base.fiber(x).grid_size for x in range(len(base)))
        if germ_radius <= 0:
            raise ModelError("germ radius must be positive")
        self.germ_radius = float(germ_radius)
        for t in self.terms:
            if len(t.factors) != degree + 1:
                raise DegreeError("every term needs degree+1 factors")
            for fam in t.factors:
                if len(fam) != len(base):
                    raise ModelError("factor family size must match the base")
                if check_band:
                    for x, f in enumerate(fam):
                        f = np.asarray(f, dtype=complex).reshape(-1)
                        if np.max(np.abs(f - band_limit(f, base.fiber(x)))) > 1e-10:
                            raise ModelError(
                                "cochain factors must be band-limited to the cutoff"
                            )

    @classmethod
    def elementary(
        cls,
        base: BaseModel,
        factors: list[ScalarFamily],
        weight: complex = 1.0,
        germ_radius: float | None = None,
    ) -> "ASCochain":
        fams = tuple(
            [np.asarray(f, dtype=complex).reshape(-1) for f in fam] for fam in factors
        )
        return cls(base, len(factors) - 1, [ASTerm(weight, fams)], germ_radius)

    @classmethod
    def unit(cls, base: BaseModel, germ_radius: float | None = None) -> "ASCochain":
        """The constant degree-0 cochain with value 1."""
        ones = [np.ones(base.fiber(x).npoints, dtype=complex) for x in range(len(base))]
        return cls.elementary(base, [ones], germ_radius=germ_radius)

    def evaluate(self, x: int, tuple_indices) -> complex:
        """Value at a tuple of grid-point indices on the fiber over x."""
        if len(tuple_indices) != self.degree + 1:
            raise DegreeError("tuple length must be degree+1")
        total = 0.0 + 0.0j
        for t in self.terms:
            prod = t.weight
            for slot, z in enumerate(tuple_indices):
                prod *= t.factors[slot][x][z]
            total += prod
        return complex(total)

    def evaluate_batch(self, x: int, tuples: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on an array of index tuples, shape (m, k+1)."""
        tuples = np.asarray(tuples, dtype=int)
        out = np.zeros(len(tuples), dtype=complex)
        for t in self.terms:
            prod = np.full(len(tuples), t.weight, dtype=complex)
            for slot in range(self.degree + 1):
                prod *= np.asarray(t.factors[slot][x])[tuples[:, slot]]
            out += prod
        return out


def d_as(phi: ASCochain) -> ASCochain:
    """Tuple differential: alternating sum over omitted arguments.

    On an elementary tensor this inserts the constant factor 1 at each slot i
    with sign (-1)^i; the result is again a finite sum of elementary tensors.
    """
    base = phi.base
    ones = [np.ones(base.fiber(x).npoints, dtype=complex) for x in range(len(base))]
    new_terms = []
    for t in phi.terms:
        for i in range(phi.degree + 2):
            sign = -1.0 if i % 2 else 1.0
            factors = t.factors[:i] + (ones,) + t.factors[i:]
            new_terms.append(ASTerm(sign * t.weight, factors))
    return ASCochain(
        base, phi.degree + 1, new_terms, phi.germ_radius, check_band=False
    )


def van_est_realize(phi: ASCochain) -> FoliatedForm:
    """Realize a cochain as the leafwise form sum of f_0 df_1 ^ ... ^ df_k."""
    base = phi.base
    r = base.fiber(0).dim
    k = phi.degree
    if k > r:
        raise DegreeError(
            f"degree {k} cochains realize to zero beyond the fiber dimension {r}"
        )
    total = FoliatedForm.zero(base, k)
    for t in phi.terms:
        form = FoliatedForm.from_scalar(base, list(t.factors[0])).scaled(t.weight)
        for slot in range(1, k + 1):
            df = d_leafwise(
                FoliatedForm.from_scalar(base, list(t.factors[slot])), base
            )
            form = wedge(form, df)
        total = total + form
    total.invariant = False
    return total


def transport_cochain(gspace: FiberedGSpace, a: Arrow, phi: ASCochain) -> ASCochain:
    """Move every factor's source-fiber component along the arrow.

    Only the components over s(a) and t(a) change; this is the slot-wise
    action of a single arrow, enough to state equivariance of the realization
    map arrow by arrow.
    """
    new_terms = []
    for t in phi.terms:
        factors = []
        for fam in t.factors:
            fam2 = [np.asarray(f) for f in fam]
            fam2[a.tgt] = gspace.transport(a, fam[a.src])
            factors.append(fam2)
        new_terms.append(ASTerm(t.weight, tuple(factors)))
    return ASCochain(
        phi.base, phi.degree, new_terms, phi.germ_radius, check_band=False
    )


def invariant_project_cochain(
    gspace: FiberedGSpace, cutoff, phi: ASCochain
) -> ASCochain:
    """Cutoff-weighted average of a cochain onto the arrow invariants.

    Each arrow contributes one elementary term per input term: all factors are
    composed with the point action and the cutoff weight (also composed) is
    attached to the leading factor.  Fixes invariant cochains by the partition
    identity applied in the leading argument.
    """
    base = phi.base
    new_terms = []
    for t in phi.terms:
        for x in range(len(base)):
            for a in gspace.groupoid.arrows_from(x):
                weight_field = gspace.eval_after_action(a, cutoff.fields[a.tgt])
                factors = []
                for slot, fam in enumerate(t.factors):
                    fam2 = [np.zeros_like(np.asarray(f)) for f in fam]
                    moved = gspace.eval_after_action(a, fam[a.tgt])
                    fam2[x] = weight_field * moved if slot == 0 else moved
                    factors.append(fam2)
                new_terms.append(ASTerm(t.weight, tuple(factors)))
    return ASCochain(base, phi.degree, new_terms, phi.germ_radius, check_band=False)


class GroupoidCochain:
    """Scalar cochain on composable arrow tuples (finite tables).

    Degree 0 is a function on base points; degree p >= 1 is a function on
    p-tuples of arrows with t(a_i) = s(a_{i+1}).
    """

    def __init__(self, degree: int, values: dict):
        if degree < 0:
            raise DegreeError("groupoid cochain degree must be nonnegative")
        self.degree = degree
        self.values = dict(values)

    @classmethod
    def from_function(cls, gpd, degree: int, fn) -> "GroupoidCochain":
        if degree == 0:
            vals = {x: complex(fn(x)) for x in range(len(gpd.base))}
        else:
            vals = {}
            for tup in _composable_tuples(gpd, degree):
                vals[tuple(a.label for a in tup)] = complex(fn(*tup))
        return cls(degree, vals)

    def __call__(self, *key):
        if self.degree == 0:
            return self.values[key[0]]
        return self.values[tuple(k.label if isinstance(k, Arrow) else k for k in key)]


def _composable_tuples(gpd, p: int):
    if p == 1:
        for a in gpd.arrows:
            yield (a,)
        return
    for tup in _composable_tuples(gpd, p - 1):
        for nxt in gpd.source_fibers[tup[-1].tgt]:
            yield tup + (nxt,)


def d_groupoid(nu: GroupoidCochain, gpd) -> GroupoidCochain:
    """Simplicial differential on groupoid cochains."""
    p = nu.degree
    if p == 0:
        vals = {(a.label,): nu(a.src) - nu(a.tgt) for a in gpd.arrows}
        return GroupoidCochain(1, vals)
    vals = {}
    for tup in _composable_tuples(gpd, p + 1):
        total = nu(*tup[1:])
        for i in range(p):
            merged = tup[: i] + (gpd.compose(tup[i], tup[i + 1]),) + tup[i + 2 :]
            total += (-1) ** (i + 1) * nu(*merged)
        total += (-1) ** (p + 1) * nu(*tup[:-1])
        vals[tuple(a.label for a in tup)] = total
    return GroupoidCochain(p + 1, vals)
