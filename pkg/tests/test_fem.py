import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from thermohom import fem
from thermohom.linalg import BlockSolver, Factorization, FrozenSolver
from thermohom.material import isotropic_stiffness
from thermohom.mesh import box_mesh


@pytest.fixture(scope="module")
def square():
    return box_mesh([(0, 1), (0, 1)], 8)


def test_diffusion_annihilates_constants(square):
    A = fem.assemble_diffusion(square, np.eye(2))
    np.testing.assert_allclose(A @ np.ones(square.n_nodes), 0.0, atol=1e-12)
    assert abs(A - A.T).max() < 1e-14


def test_elasticity_annihilates_rigid_motions(square):
    K = fem.assemble_elasticity(square, isotropic_stiffness(1.0, 1.0))
    x = square.vertices
    for rigid in (np.c_[np.ones(len(x)), np.zeros(len(x))], np.c_[-x[:, 1], x[:, 0]]):
        np.testing.assert_allclose(K @ rigid.ravel(), 0.0, atol=1e-12)


def test_mass_integrates_area(square):
    for lumped in (False, True):
        M = fem.assemble_mass(square, 2.0, lumped=lumped)
        assert M.sum() == pytest.approx(2.0)


def test_load_of_linear_function_is_exact(square):
    b = fem.assemble_load(square, lambda p: 1 + p[..., 0])
    assert b.sum() == pytest.approx(1.5)


def test_rejects_indefinite_conductivity(square):
    with pytest.raises(ValueError):
        fem.assemble_diffusion(square, -np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2))
def test_interpolation_reproduces_linear_fields(a, b, c):
    m = box_mesh([(0, 1), (0, 1)], 5)
    pts = np.random.default_rng(1).random((40, 2))
    f = a + b * m.vertices[:, 0] + c * m.vertices[:, 1]
    W = fem.interpolation_matrix(m, pts)
    np.testing.assert_allclose(W @ f, a + b * pts[:, 0] + c * pts[:, 1], atol=1e-12)


def test_interpolation_on_boundary_sees_only_boundary_nodes():
    m = box_mesh([(0, 1), (0, 1)], 4)
    pts = np.c_[np.linspace(0, 1, 13), np.zeros(13)]
    W = fem.interpolation_matrix(m, pts).tocoo()
    assert np.all(m.vertices[W.col[W.data != 0], 1] == 0.0)


def test_interpolation_outside_raises():
    with pytest.raises(ValueError):
        fem.interpolation_matrix(box_mesh([(0, 1), (0, 1)], 2), [[2.0, 2.0]])


def test_block_diag_plan_matches_kron():
    cells = np.array([[0, 1], [1, 2]])
    plan = fem.AssemblyPlan(cells, cells, (3, 3))
    loc = np.random.default_rng(0).random((2, 2, 2))
    blocks = plan.build_block_diag(loc[None] * np.arange(1, 4)[:, None, None, None])
    single = plan.build(loc).toarray()
    ref = sps.block_diag([k * single for k in (1, 2, 3)]).toarray()
    np.testing.assert_allclose(blocks.toarray(), ref)


def test_dirichlet_elimination():
    A = sps.csr_matrix(np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]]))
    system = fem.apply_dirichlet(A, np.zeros(3), [0], 1.0)
    assert abs(system.matrix - system.matrix.T).max() == 0.0
    x = sps.linalg.spsolve(system.matrix.tocsc(), system.rhs)
    assert x[0] == pytest.approx(1.0)
    assert x[2] == pytest.approx(1 / 3)


def _spd(n, seed=0):
    rng = np.random.default_rng(seed)
    B = sps.random(n, n, density=0.05, random_state=rng)
    return (B @ B.T + n * sps.eye(n)).tocsr()


@pytest.mark.parametrize("kind", ["splu", "amg"])
def test_frozen_solver_reuses_factorization(kind):
    A = _spd(200)
    b = np.ones(200)
    solver = FrozenSolver(symmetric=True, kind=kind, refactor_below=0)
    x1 = solver(A, b)
    x2 = solver(A + 0.01 * sps.eye(200), b)
    assert np.linalg.norm(A @ x1 - b) < 1e-8 * np.linalg.norm(b)
    assert np.linalg.norm((A + 0.01 * sps.eye(200)) @ x2 - b) < 1e-8 * np.linalg.norm(b)
    assert solver.refreshes == 1


def test_factorization_rejects_unknown_kind():
    with pytest.raises(ValueError):
        Factorization(sps.eye(3), kind="magic")


@pytest.mark.parametrize("couple", ["B", "L", "both"])
def test_block_solver_matches_monolithic(couple):
    n = 60
    Kuu, H = _spd(2 * n, 1), _spd(n, 2)
    rng = np.random.default_rng(3)
    B = sps.random(n, 2 * n, density=0.1, random_state=rng).tocsr() if couple in ("B", "both") else None
    L = sps.random(n, 2 * n, density=0.1, random_state=rng).tocsr() * 0.1 if couple in ("L", "both") else None
    Fu, Ft = rng.random(2 * n), rng.random(n)
    U, T = BlockSolver(2 * n, refactor_below=0).solve(Kuu, B, L, H, H, Fu, Ft)
    Bm = B if B is not None else sps.csr_matrix((n, 2 * n))
    Lm = L if L is not None else sps.csr_matrix((n, 2 * n))
    A = sps.bmat([[Kuu, -Bm.T], [Lm, H]]).tocsc()
    ref = sps.linalg.spsolve(A, np.concatenate([Fu, Ft]))
    np.testing.assert_allclose(np.concatenate([U, T]), ref, rtol=1e-7, atol=1e-9)
