"""Operators on fiber sections: spectral bases, operator blocks, smoothing kernels.

Conventions
-----------
Sections are grid vectors of length npoints (per bundle component).  The
inner product is the quadrature one, (1/n^r) sum conj(f) g.  A SectionBasis
holds an (npoints, nbasis) evaluation matrix with quadrature-orthonormal
columns; operators between bases are plain matrices on coefficients.

Smoothing operators are stored as operator matrices M acting by f -> M f on
grid vectors, possibly with a block structure for bundle components.  The
Schwartz kernel against the quadrature measure is k(z, w) = npoints * M[z, w];
all trace and pairing formulas below are written directly in terms of M so
that no npoints factors float around.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import CutoffDensity, TransversalDensity
from .forms import InvarianceError
from .grids import FiberModel, ModelError, grid_points
from .groupoid import BaseModel
from .space import FiberedGSpace


class SupportMismatchError(ModelError):
    """Raised when kernel supports and requested operations are incompatible."""


@dataclass(frozen=True)
class SectionBasis:
    """Quadrature-orthonormal family of sections on one fiber.

    Sections with ``components`` bundle components are grid vectors of length
    components * npoints in block-major layout.  ``key`` identifies the basis
    for compatibility checks when composing operators; bases with equal keys
    are interchangeable.
    """

    fiber: FiberModel
    matrix: np.ndarray
    key: tuple
    components: int = 1

    def __post_init__(self):
        if self.matrix.shape[0] != self.components * self.fiber.npoints:
            raise ModelError("basis rows must match the fiber grid times components")

    @property
    def size(self) -> int:
        return self.matrix.shape[1]

    def gram_defect(self) -> float:
        G = self.matrix.conj().T @ self.matrix / self.fiber.npoints
        return float(np.max(np.abs(G - np.eye(self.size))))

    def project(self, fieldvec: np.ndarray) -> np.ndarray:
        return self.matrix.conj().T @ fieldvec / self.fiber.npoints

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self.matrix @ coeffs


def fourier_basis(fiber: FiberModel, components: int = 1) -> SectionBasis:
    E = fiber.eval_matrix()
    if components > 1:
        E = np.kron(np.eye(components), E)
    return SectionBasis(
        fiber,
        E,
        key=("fourier", fiber.grid_size, fiber.fourier_cutoff, fiber.dim, components),
        components=components,
    )


@dataclass
class OperatorBlock:
    """Matrix of an operator from one section basis to another."""

    domain: SectionBasis
    codomain: SectionBasis
    matrix: np.ndarray

    def __post_init__(self):
        expect = (self.codomain.size, self.domain.size)
        if self.matrix.shape != expect:
            raise ModelError(f"operator matrix shape {self.matrix.shape} != {expect}")

    def apply(self, fieldvec: np.ndarray) -> np.ndarray:
        return self.codomain.synthesize(self.matrix @ self.domain.project(fieldvec))

    def compose(self, other: "OperatorBlock") -> "OperatorBlock":
        """self after other."""
        if other.codomain.key != self.domain.key:
            raise ModelError("operator bases are not compatible for composition")
        return OperatorBlock(other.domain, self.codomain, self.matrix @ other.matrix)

    def adjoint(self) -> "OperatorBlock":
        return OperatorBlock(self.codomain, self.domain, self.matrix.conj().T)

    def grid_matrix(self) -> np.ndarray:
        """Operator matrix on grid vectors (codomain grid x domain grid)."""
        n = self.domain.fiber.npoints
        return self.codomain.matrix @ self.matrix @ self.domain.matrix.conj().T / n

    @classmethod
    def identity(cls, basis: SectionBasis) -> "OperatorBlock":
        return cls(basis, basis, np.eye(basis.size, dtype=complex))


@dataclass
class LeafwiseOperatorFamily:
    """One operator block per base point, with a declared order."""

    base: BaseModel
    blocks: list[OperatorBlock]
    order: float

    def __post_init__(self):
        if len(self.blocks) != len(self.base):
            raise ModelError("one operator block per base point is required")


def transport_matrix(
    gspace: FiberedGSpace, a, domain: SectionBasis, codomain: SectionBasis
) -> np.ndarray:
    """Matrix of section transport along an arrow, domain over s(a) to codomain over t(a).

    Computed by moving the domain basis columns with the grid permutation and
    projecting onto the codomain basis.  Unitary whenever the transported
    columns stay inside the codomain span.
    """
    n = domain.fiber.grid_size
    npts = domain.fiber.npoints
    perm = gspace.fiber_map(a).grid_permutation(n)
    bidx = np.concatenate([perm + b * npts for b in range(domain.components)])
    moved = domain.matrix[bidx, :]
    return codomain.matrix.conj().T @ moved / npts


def family_invariance_defect(
    gspace: FiberedGSpace, fam: LeafwiseOperatorFamily
) -> float:
    """Max over arrows of |U_a P_s - P_t U_a| on the section bases."""
    worst = 0.0
    for a in gspace.groupoid.arrows:
        Ps, Pt = fam.blocks[a.src], fam.blocks[a.tgt]
        U_dom = transport_matrix(gspace, a, Ps.domain, Pt.domain)
        U_cod = transport_matrix(gspace, a, Ps.codomain, Pt.codomain)
        defect = U_cod @ Ps.matrix - Pt.matrix @ U_dom
        worst = max(worst, float(np.max(np.abs(defect))))
    return worst


def fiber_distance_matrix(fiber: FiberModel) -> np.ndarray:
    """Pairwise periodic Euclidean distances between grid points."""
    pts = grid_points(fiber.grid_size, fiber.dim)
    diff = pts[:, None, :] - pts[None, :, :]
    diff = np.abs(diff)
    diff = np.minimum(diff, 1.0 - diff)
    return np.sqrt(np.sum(diff**2, axis=-1))


class SmoothingKernel:
    """Family of finite-rank-style integral operators on grid sections.

    ``mats[x]`` acts on grid vectors over base point x by plain matrix
    multiplication; with ``blocks`` bundle components the layout is
    block-major (component index varies slowest).  ``support_radius`` is the
    fiber distance beyond which kernel entries vanish (infinity when not
    localized).
    """

    def __init__(
        self,
        base: BaseModel,
        mats: list[np.ndarray],
        blocks: int = 1,
        support_radius: float = np.inf,
    ):
        self.base = base
        self.blocks = int(blocks)
        self.mats = [np.asarray(m, dtype=complex) for m in mats]
        self.support_radius = float(support_radius)
        for x, m in enumerate(self.mats):
            dim = self.blocks * base.fiber(x).npoints
            if m.shape != (dim, dim):
                raise ModelError(f"kernel matrix at point {x} has shape {m.shape}")

    def copy(self) -> "SmoothingKernel":
        return SmoothingKernel(
            self.base, [m.copy() for m in self.mats], self.blocks, self.support_radius
        )

    def __add__(self, other: "SmoothingKernel") -> "SmoothingKernel":
        self._check(other)
        return SmoothingKernel(
            self.base,
            [a + b for a, b in zip(self.mats, other.mats)],
            self.blocks,
            max(self.support_radius, other.support_radius),
        )

    def __sub__(self, other: "SmoothingKernel") -> "SmoothingKernel":
        return self + other.scaled(-1.0)

    def scaled(self, factor: complex) -> "SmoothingKernel":
        return SmoothingKernel(
            self.base, [factor * m for m in self.mats], self.blocks, self.support_radius
        )

    def compose(self, other: "SmoothingKernel") -> "SmoothingKernel":
        self._check(other)
        radius = self.support_radius + other.support_radius
        return SmoothingKernel(
            self.base,
            [a @ b for a, b in zip(self.mats, other.mats)],
            self.blocks,
            radius,
        )

    def _check(self, other: "SmoothingKernel") -> None:
        if self.base is not other.base and len(self.base) != len(other.base):
            raise ModelError("kernel bases differ")
        if self.blocks != other.blocks:
            raise ModelError("kernel block counts differ")

    def norm(self) -> float:
        """Largest operator norm across base points."""
        return max(float(np.linalg.norm(m, 2)) for m in self.mats)

    def diag_trace_field(self, x: int) -> np.ndarray:
        """Pointwise matrix trace of the operator diagonal over base point x."""
        npts = self.base.fiber(x).npoints
        d = np.zeros(npts, dtype=complex)
        for b in range(self.blocks):
            idx = b * npts + np.arange(npts)
            d += self.mats[x][idx, idx]
        return d

    def kernel_values(self, x: int) -> np.ndarray:
        """Schwartz kernel values k(z, w) against the quadrature measure."""
        return self.base.fiber(x).npoints * self.mats[x]

    def _moved(self, gspace: FiberedGSpace, a) -> np.ndarray:
        n = gspace.base.fiber(a.src).grid_size
        npts = gspace.base.fiber(a.src).npoints
        perm = gspace.point_action(a).grid_permutation(n)
        bidx = np.concatenate([perm + b * npts for b in range(self.blocks)])
        return self.mats[a.tgt][np.ix_(bidx, bidx)]

    def invariance_defect(self, gspace: FiberedGSpace) -> float:
        """Strict equivariance defect for untwisted (plain pullback) transport."""
        worst = 0.0
        for a in gspace.groupoid.arrows:
            moved = self._moved(gspace, a)
            worst = max(worst, float(np.max(np.abs(self.mats[a.src] - moved))))
        return worst

    def twisted_invariance_defect(self, gspace: FiberedGSpace) -> float:
        """Equivariance defect modulo a unimodular character.

        Bundle actions may twist kernels by phases chi(z) conj(chi(w)); traces
        and cyclic chain sums are blind to such phases.  This checks the
        phase-free data: entry magnitudes, the operator diagonal, and closed
        two-cycles k(z, w) k(w, z).
        """
        worst = 0.0
        for a in gspace.groupoid.arrows:
            here = self.mats[a.src]
            moved = self._moved(gspace, a)
            worst = max(worst, float(np.max(np.abs(np.abs(here) - np.abs(moved)))))
            worst = max(worst, float(np.max(np.abs(np.diag(here) - np.diag(moved)))))
            cyc = here * here.T - moved * moved.T
            worst = max(worst, float(np.max(np.abs(cyc))))
        return worst

    def truncate(self, radius: float) -> "SmoothingKernel":
        """Zero all entries at fiber distance beyond the radius."""
        out = []
        for x, m in enumerate(self.mats):
            mask = fiber_distance_matrix(self.base.fiber(x)) <= radius
            if self.blocks > 1:
                mask = np.tile(mask, (self.blocks, self.blocks))
            out.append(m * mask)
        return SmoothingKernel(self.base, out, self.blocks, radius)

    @classmethod
    def zero(cls, base: BaseModel, blocks: int = 1) -> "SmoothingKernel":
        mats = [
            np.zeros((blocks * base.fiber(x).npoints,) * 2, dtype=complex)
            for x in range(len(base))
        ]
        return cls(base, mats, blocks)


def average_kernel(
    gspace: FiberedGSpace, cutoff: CutoffDensity, kern: SmoothingKernel
) -> SmoothingKernel:
    """Cutoff-weighted diagonal average of a kernel family onto the invariants.

    out_x(z, w) = sum over arrows a from x of c(action_a z) k_{t(a)}(action_a z, action_a w).

    Exactly invariant for any input and fixes invariant inputs.
    """
    out = []
    for x in range(len(gspace.base)):
        n = gspace.base.fiber(x).grid_size
        npts = gspace.base.fiber(x).npoints
        acc = np.zeros_like(kern.mats[x])
        for a in gspace.groupoid.arrows_from(x):
            perm = gspace.point_action(a).grid_permutation(n)
            weight = cutoff.fields[a.tgt][perm]
            bidx = np.concatenate([perm + b * npts for b in range(kern.blocks)])
            moved = kern.mats[a.tgt][np.ix_(bidx, bidx)]
            wfull = np.tile(weight, kern.blocks)
            acc += wfull[:, None] * moved
        out.append(acc)
    return SmoothingKernel(gspace.base, out, kern.blocks, kern.support_radius)


def trace_tau(
    kern: SmoothingKernel,
    cutoff: CutoffDensity,
    dens: TransversalDensity,
    invariance_tol: float = 1e-8,
) -> complex:
    """Cutoff-weighted trace of an invariant smoothing family.

    tau(K) = sum over base points of mass * sum_z c(z) tr k-diagonal(z).
    Independent of the cutoff choice, and tracial, for invariant kernels over
    orbit-constant mass; both properties fail without invariance, hence the
    check.
    """
    gspace = dens.gspace
    scale = max(kern.norm(), 1e-30)
    if kern.twisted_invariance_defect(gspace) > invariance_tol * scale:
        raise InvarianceError("trace is only defined for invariant kernel families")
    total = 0.0 + 0.0j
    for x in range(len(gspace.base)):
        diag = kern.diag_trace_field(x)
        total += dens.mass(x) * np.sum(cutoff.fields[x] * diag)
    return complex(total)


def random_invariant_kernel(
    rng: np.random.Generator,
    gspace: FiberedGSpace,
    cutoff: CutoffDensity,
    band: int,
    blocks: int = 1,
) -> SmoothingKernel:
    """Seeded invariant smoothing family built from band-limited separable pieces."""
    base = gspace.base
    mats = []
    for x in range(len(base)):
        fiber = base.fiber(x)
        E = fiber.eval_matrix()
        keep = np.max(np.abs(fiber.modes()), axis=1) <= band
        E = E[:, keep]
        nb = E.shape[1]
        npts = fiber.npoints
        m = np.zeros((blocks * npts, blocks * npts), dtype=complex)
        for bi in range(blocks):
            for bj in range(blocks):
                C = rng.normal(size=(nb, nb)) + 1j * rng.normal(size=(nb, nb))
                block = E @ (C / nb) @ E.conj().T / npts
                m[bi * npts : (bi + 1) * npts, bj * npts : (bj + 1) * npts] = block
        mats.append(m)
    rough = SmoothingKernel(base, mats, blocks)
    return average_kernel(gspace, cutoff, rough)
