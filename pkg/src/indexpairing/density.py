"""Cutoff densities, transverse weights, metric averaging.

The cutoff family c_x >= 0 satisfies, at every fiber point z over every base
point x, the partition identity

    sum over arrows a with source x of  c_{t(a)}(action_a(z))  =  1.

It is built from any positive seed family by normalizing with the orbit sum;
the identity then holds pointwise on the grid with no quadrature error, by
the left-translation bijection of the arrow set at x.
"""
from __future__ import annotations

import numpy as np

from .grids import ModelError
from .groupoid import Arrow
from .space import FiberedGSpace


class CoverageError(ModelError):
    """Raised when a cutoff or seed family fails positivity or coverage."""


class CutoffDensity:
    """Nonnegative fields c_x on the fibers with the unit partition property."""

    def __init__(self, gspace: FiberedGSpace, fields: list[np.ndarray]):
        base = gspace.base
        if len(fields) != len(base):
            raise CoverageError("one cutoff field per base point is required")
        self.gspace = gspace
        self.fields = [np.asarray(f, dtype=float).reshape(-1) for f in fields]
        for x, f in enumerate(self.fields):
            if f.shape != (base.fiber(x).npoints,):
                raise CoverageError(f"cutoff field at point {x} has wrong size")
            if f.min() < -1e-14:
                raise CoverageError(f"cutoff field at point {x} is negative")

    def partition_defect(self) -> float:
        """Max deviation of the orbit sums from 1 over all points and fibers."""
        g = self.gspace
        worst = 0.0
        for x in range(len(g.base)):
            total = np.zeros(g.base.fiber(x).npoints)
            for a in g.groupoid.arrows_from(x):
                total += g.eval_after_action(a, self.fields[a.tgt]).real
            worst = max(worst, float(np.max(np.abs(total - 1.0))))
        return worst


def compute_cutoff(gspace: FiberedGSpace, seeds: list[np.ndarray] | None = None) -> CutoffDensity:
    """Normalize a positive seed family into a cutoff density.

    With no seeds, every point gets the constant seed 1, which yields the
    uniform cutoff 1/#(arrows from x).
    """
    base = gspace.base
    if seeds is None:
        seeds = [np.ones(base.fiber(x).npoints) for x in range(len(base))]
    seeds = [np.asarray(s, dtype=float).reshape(-1) for s in seeds]
    for x, s in enumerate(seeds):
        if s.shape != (base.fiber(x).npoints,):
            raise CoverageError(f"seed at point {x} has wrong size")
        if s.min() < 0:
            raise CoverageError(f"seed at point {x} must be nonnegative")
    fields = []
    for x in range(len(base)):
        orbit_sum = np.zeros(base.fiber(x).npoints)
        for a in gspace.groupoid.arrows_from(x):
            orbit_sum += gspace.eval_after_action(a, seeds[a.tgt]).real
        bad = np.flatnonzero(orbit_sum <= 0)
        if len(bad):
            raise CoverageError(
                f"seed family does not cover the orbit of grid point "
                f"{int(bad[0])} over base point {x}"
            )
        fields.append(seeds[x] / orbit_sum)
    return CutoffDensity(gspace, fields)


class TransversalDensity:
    """Per-point transverse mass scales paired with the base weights.

    ``omega[x]`` scales the unit Lebesgue mass of the fiber over x.  The
    combination weight(x) * omega[x] is what every trace and integral sees.
    """

    def __init__(self, gspace: FiberedGSpace, omega: list[float]):
        if len(omega) != len(gspace.base):
            raise ModelError("one mass scale per base point is required")
        if min(omega) <= 0:
            raise ModelError("mass scales must be positive")
        self.gspace = gspace
        self.omega = [float(v) for v in omega]

    def mass(self, x: int) -> float:
        return self.gspace.base.weight(x) * self.omega[x]

    def modular(self, a: Arrow) -> float:
        """Multiplicative cocycle comparing the mass at target and source.

        Equal to 1 on every arrow exactly when the combined mass is constant
        along orbits, which is the condition for the traces downstream to be
        genuinely tracial.
        """
        return self.mass(a.tgt) / self.mass(a.src)

    def is_invariant(self, tol: float = 1e-12) -> bool:
        return all(
            abs(self.modular(a) - 1.0) <= tol for a in self.gspace.groupoid.arrows
        )

    @classmethod
    def uniform(cls, gspace: FiberedGSpace) -> "TransversalDensity":
        return cls(gspace, [1.0] * len(gspace.base))


def modular_cocycle(dens: TransversalDensity) -> dict[object, float]:
    """The modular ratio on every arrow, keyed by arrow label.

    Multiplicative over composition by construction; identically 1 exactly
    when the transverse mass is orbit-constant.
    """
    return {a.label: dens.modular(a) for a in dens.gspace.groupoid.arrows}


def average_function(
    gspace: FiberedGSpace, cutoff: CutoffDensity, fields: list[np.ndarray]
) -> list[np.ndarray]:
    """Cutoff-weighted orbit average of a scalar field family.

    out_x(z) = sum over arrows a from x of c_{t(a)}(action_a z) f_{t(a)}(action_a z).

    The output family is invariant for any input, and equals the input when
    the input was already invariant (partition identity).
    """
    out = []
    for x in range(len(gspace.base)):
        acc = np.zeros(gspace.base.fiber(x).npoints, dtype=np.result_type(*fields, float))
        for a in gspace.groupoid.arrows_from(x):
            weight = gspace.eval_after_action(a, cutoff.fields[a.tgt]).real
            acc += weight * gspace.eval_after_action(a, fields[a.tgt])
        out.append(acc)
    return out


def function_invariance_defect(gspace: FiberedGSpace, fields: list[np.ndarray]) -> float:
    """Max over arrows of |f_{s(a)} - f_{t(a)} o action_a| on the grid."""
    worst = 0.0
    for a in gspace.groupoid.arrows:
        diff = fields[a.src] - gspace.eval_after_action(a, fields[a.tgt])
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def average_metric(
    gspace: FiberedGSpace, cutoff: CutoffDensity, metrics: list[np.ndarray]
) -> list[np.ndarray]:
    """Cutoff-weighted average of leafwise metric fields into an invariant one.

    Each metrics[x] has shape (npoints, r, r), symmetric positive definite at
    every grid point.  The average pulls back by the linear part B_a of the
    pointwise action and conjugates:

        eta_x(z) = sum_a c(action_a z) B_a^T rho_{t(a)}(action_a z) B_a.
    """
    r = gspace.fiber_dim
    out = []
    for x in range(len(gspace.base)):
        npts = gspace.base.fiber(x).npoints
        acc = np.zeros((npts, r, r))
        for a in gspace.groupoid.arrows_from(x):
            B = gspace.point_action(a).A.astype(float)
            weight = gspace.eval_after_action(a, cutoff.fields[a.tgt]).real
            rho_pulled = gspace.eval_after_action(a, metrics[a.tgt])
            acc += weight[:, None, None] * (B.T @ rho_pulled @ B)
        out.append(acc)
    return out


def metric_invariance_defect(gspace: FiberedGSpace, metrics: list[np.ndarray]) -> float:
    """Max deviation from arrow-invariance of a metric family."""
    worst = 0.0
    for a in gspace.groupoid.arrows:
        B = gspace.point_action(a).A.astype(float)
        pulled = B.T @ gspace.eval_after_action(a, metrics[a.tgt]) @ B
        worst = max(worst, float(np.max(np.abs(metrics[a.src] - pulled))))
    return worst
