"""The twisted ladder realization, its oracles, and index extraction."""
import numpy as np
import pytest

from indexpairing.density import compute_cutoff, TransversalDensity
from indexpairing.dolbeault import (
    dolbeault_apply_fd,
    dolbeault_block,
    dolbeault_family,
    hermite_values,
    landau_basis,
    magnetic_translation,
    magnetic_translation_matrix,
)
from indexpairing.grids import FiberModel, ModelError
from indexpairing.groupoid import BaseModel, BasePoint, FiniteGroup, action_groupoid
from indexpairing.operators import OperatorBlock, SmoothingKernel, trace_tau
from indexpairing.parametrix import (
    IndexIdempotent,
    LocalizationError,
    ThresholdAmbiguityError,
    analytic_index,
    certified_rank,
    index_idempotent,
    parametrix,
)
from indexpairing.space import FiberedGSpace


def torus_base(n=20, N=8):
    return BaseModel([BasePoint("pt", 1.0, FiberModel("torus", 2, N, n))])


def trivial_space(n=20, N=8):
    base = torus_base(n, N)
    gpd = action_groupoid(FiniteGroup.trivial(), base, act=lambda g, x: x)
    return FiberedGSpace.trivial(gpd)


def test_hermite_functions_are_orthonormal():
    t = np.linspace(-12.0, 12.0, 4001)
    h = hermite_values(6, t)
    dt = t[1] - t[0]
    gram = h @ h.T * dt
    assert np.max(np.abs(gram - np.eye(7))) <= 1e-8


def test_hermite_lowering_identity():
    """h_l' + t h_l = sqrt(2 l) h_{l-1}, checked with a fine central difference."""
    t = np.linspace(-8.0, 8.0, 20001)
    dt = t[1] - t[0]
    h = hermite_values(5, t)
    for l in range(1, 6):
        deriv = np.gradient(h[l], dt)
        lhs = deriv + t * h[l]
        rhs = np.sqrt(2.0 * l) * h[l - 1]
        assert np.max(np.abs(lhs - rhs)[100:-100]) <= 1e-4


@pytest.mark.parametrize("twist", [1, 2, -1])
def test_landau_basis_is_orthonormal_on_grid(twist):
    fiber = FiberModel("torus", 2, 8, 20)
    basis = landau_basis(fiber, twist, max_level=4)
    assert basis.size == abs(twist) * 5
    assert basis.gram_defect() <= 1e-10


@pytest.mark.parametrize("twist", [1, 2, -1])
def test_ladder_matches_finite_difference_application(twist):
    """The assembled matrix against an independent quasi-periodic stencil."""
    fiber = FiberModel("torus", 2, 8, 32)
    block = dolbeault_block(fiber, twist, levels=3)
    scale = np.sqrt(np.pi * abs(twist) * 3)
    dom = block.domain
    for k in range(dom.size):
        col = dom.matrix[:, k]
        fd = dolbeault_apply_fd(col, twist, fiber)
        analytic = block.codomain.matrix @ block.matrix[:, k]
        assert np.max(np.abs(fd - analytic)) <= 1e-4 * scale


def test_zero_twist_block_is_exact_multiplier():
    fiber = FiberModel("torus", 2, 3, 12)
    block = dolbeault_block(fiber, 0, levels=1)
    modes = fiber.modes()
    expected = np.pi * 1j * (modes[:, 0] + 1j * modes[:, 1])
    assert np.max(np.abs(block.matrix - np.diag(expected))) == 0.0


@pytest.mark.parametrize("twist,expected", [(-2, -2), (-1, -1), (0, 0), (1, 1), (2, 2)])
def test_spectral_index_matches_twist(twist, expected):
    base = torus_base()
    fam = dolbeault_family(base, twist, levels=4)
    count = analytic_index(fam)
    assert count.index(0) == expected
    if twist > 0:
        assert count.kernel_dims[0] == twist and count.cokernel_dims[0] == 0
    elif twist < 0:
        assert count.kernel_dims[0] == 0 and count.cokernel_dims[0] == -twist
    else:
        assert count.kernel_dims[0] == 1 and count.cokernel_dims[0] == 1


def test_certified_rank_flags_ambiguity():
    sing = np.array([1.0, 1e-2, 3e-8])
    with pytest.raises(ThresholdAmbiguityError):
        certified_rank(sing, threshold=1e-8)
    assert certified_rank(np.array([1.0, 1e-2, 1e-12]), threshold=1e-8) == 2


def test_parametrix_remainders_are_kernel_projectors():
    base = torus_base()
    fam = dolbeault_family(base, 2, levels=4)
    data = parametrix(fam)
    r0 = data.r0[0].matrix
    r1 = data.r1[0].matrix
    assert np.max(np.abs(r0 @ r0 - r0)) <= 1e-12
    assert np.linalg.matrix_rank(r0) == 2
    assert np.max(np.abs(r1)) <= 1e-12
    fam_neg = dolbeault_family(base, -2, levels=4)
    data_neg = parametrix(fam_neg)
    assert np.max(np.abs(data_neg.r0[0].matrix)) <= 1e-12
    assert np.linalg.matrix_rank(data_neg.r1[0].matrix) == 2


def test_index_is_stable_under_small_perturbations():
    base = torus_base()
    rng = np.random.default_rng(13)
    fam = dolbeault_family(base, 1, levels=4)
    gap = np.sqrt(np.pi)  # smallest nonzero ladder coefficient
    block = fam.blocks[0]
    noise = rng.normal(size=block.matrix.shape) + 1j * rng.normal(size=block.matrix.shape)
    noise *= 0.1 * gap / np.linalg.norm(noise, 2)
    bumped = OperatorBlock(block.domain, block.codomain, block.matrix + noise)
    from indexpairing.operators import LeafwiseOperatorFamily

    fam2 = LeafwiseOperatorFamily(base, [bumped], fam.order)
    count = analytic_index(fam2, threshold=1e-3)
    assert count.index(0) == 1


@pytest.mark.parametrize("twist", [2, -2])
def test_magnetic_translation_is_unitary_and_commutes(twist):
    fiber = FiberModel("torus", 2, 8, 20)
    block = dolbeault_block(fiber, twist, levels=4)
    v = (10, 10)  # half shift on the n = 20 grid
    U_dom = magnetic_translation_matrix(block.domain, v, twist)
    U_cod = magnetic_translation_matrix(block.codomain, v, twist)
    eye_d = np.eye(block.domain.size)
    eye_c = np.eye(block.codomain.size)
    assert np.max(np.abs(U_dom.conj().T @ U_dom - eye_d)) <= 1e-10
    assert np.max(np.abs(U_cod.conj().T @ U_cod - eye_c)) <= 1e-10
    assert np.max(np.abs(U_cod @ block.matrix - block.matrix @ U_dom)) <= 1e-10


def test_magnetic_translation_square_is_the_predicted_phase():
    fiber = FiberModel("torus", 2, 8, 20)
    twist = 2
    basis = landau_basis(fiber, twist, max_level=3)
    U = magnetic_translation_matrix(basis, (10, 10), twist)
    phase = np.exp(1j * np.pi * twist / 2.0)
    assert np.max(np.abs(U @ U - phase * np.eye(basis.size))) <= 1e-10


def test_magnetic_translation_needs_compatible_twist():
    fiber = FiberModel("torus", 2, 8, 20)
    with pytest.raises(ModelError):
        magnetic_translation(np.ones(400, dtype=complex), (10, 10), 1, fiber)


@pytest.mark.parametrize("twist", [1, -1, 0])
def test_graph_idempotent_is_exact_and_traces_to_the_index(twist):
    space = trivial_space()
    fam = dolbeault_family(space.base, twist, levels=4)
    idem = index_idempotent(fam)
    assert idem.idempotent_defect() <= 1e-10
    cutoff = compute_cutoff(space)
    dens = TransversalDensity.uniform(space)
    value = trace_tau(idem.skernel, cutoff, dens)
    assert abs(value - twist) <= 1e-8


def test_localized_idempotent_converges_and_stays_local():
    space = trivial_space(n=24, N=8)
    fam = dolbeault_family(space.base, 8, levels=2)
    idem = index_idempotent(fam, radius=0.45)
    assert idem.idempotent_defect() <= 1e-8
    assert idem.skernel.support_radius == 0.45
    cutoff = compute_cutoff(space)
    dens = TransversalDensity.uniform(space)
    value = trace_tau(idem.skernel, cutoff, dens)
    assert abs(value - 8) <= 1e-6 * 8


def test_localization_error_when_budget_exhausted():
    space = trivial_space(n=24, N=8)
    fam = dolbeault_family(space.base, 8, levels=2)
    with pytest.raises(LocalizationError):
        index_idempotent(fam, radius=0.18, max_newton=1)


def test_index_idempotent_needs_two_components():
    base = torus_base(n=12, N=3)
    with pytest.raises(ModelError):
        IndexIdempotent(base, SmoothingKernel.zero(base, blocks=1))
