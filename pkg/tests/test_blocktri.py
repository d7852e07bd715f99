import numpy as np
import pytest

from declqg.blocktri import BoundarySystem, solve_block_tridiagonal
from declqg.errors import PivotFailure


def random_system(T, q, seed=0, scale=0.2):
    rng = np.random.default_rng(seed)
    b = 2 * q
    return BoundarySystem(q=q, G=scale * rng.standard_normal((T - 1, b, b)),
                          H=scale * rng.standard_normal((T - 1, b, b)),
                          c=rng.standard_normal((T, b)))


def test_single_stage_identity():
    v = np.array([1.0, -2.0, 3.0, 0.5])
    sys = BoundarySystem(q=2, G=np.zeros((0, 4, 4)), H=np.zeros((0, 4, 4)), c=v[None])
    np.testing.assert_array_equal(solve_block_tridiagonal(sys)[0], v)


@pytest.mark.parametrize("T,q", [(3, 2), (7, 1), (12, 3)])
def test_matches_dense_solve(T, q):
    sys = random_system(T, q, seed=T)
    eta = solve_block_tridiagonal(sys)
    ref = np.linalg.solve(sys.dense(), sys.c.ravel()).reshape(T, -1)
    np.testing.assert_allclose(eta, ref, atol=1e-10)
    assert sys.residual(eta) < 1e-13


def test_apply_matches_dense():
    sys = random_system(5, 2, seed=9)
    x = np.random.default_rng(3).standard_normal((5, 4))
    np.testing.assert_allclose(sys.apply(x).ravel(), sys.dense() @ x.ravel(), atol=1e-13)


def test_zero_rhs_gives_zero():
    sys = random_system(6, 2)
    sys = BoundarySystem(q=2, G=sys.G, H=sys.H, c=np.zeros_like(sys.c))
    assert np.all(solve_block_tridiagonal(sys) == 0)


def test_singular_pivot_detected():
    # block row 1 becomes I - G H = 0 after elimination
    b = 2
    G = np.eye(b)[None]
    H = np.eye(b)[None]
    sys = BoundarySystem(q=1, G=G, H=H, c=np.ones((2, b)))
    with pytest.raises(PivotFailure) as exc:
        solve_block_tridiagonal(sys)
    assert exc.value.block == 1
