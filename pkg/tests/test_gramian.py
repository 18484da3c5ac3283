import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from pbfcontrol.errors import BadStep
from pbfcontrol.fem import LTI_ALUMINUM, thermal_system
from pbfcontrol.gramian import (discretize, eigendecompose_general, eigendecompose_real,
                                gramian_closed_form, gramian_finite, gramian_lyapunov,
                                rank_tests, spectral_radius, spectrum_check)
from pbfcontrol.mesh import BuildGeometry, build_mesh
from pbfcontrol.paths import LinearSweep
from pbfcontrol.shapes import l_shape, rectangle
from pbfcontrol.system import (CameraConfig, Laser, LaserConfig, TopHat, build_A,
                               build_B_uniform, build_case)

K2 = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))


def _dup_block():
    A1 = np.array([[-2.0, 1.0], [0.5, -1.0]])
    return np.kron(np.eye(2), A1)


def test_two_node_eigs():
    ed = eigendecompose_real(np.array([1.0, 2.0]), K2)
    assert np.allclose(np.sort(ed.values), [-2.366025, -0.633975], atol=1e-6)


def test_identity_mass():
    ed = eigendecompose_real(np.ones(2), K2)
    assert np.allclose(np.sort(ed.values), np.sort(np.linalg.eigvalsh(-K2.toarray())))


def test_duplicated_blocks_multiplicity():
    ed = eigendecompose_general(_dup_block())
    assert ed.max_geometric == 2
    assert ed.algebraic.max() == 2 and not ed.distinct


def _distinct_mesh():
    mesh = build_mesh(l_shape(3, 2, 1, 1))
    sys_ = thermal_system(mesh, LTI_ALUMINUM)
    return mesh, sys_


def test_single_driver_full_rank():
    mesh, sys_ = _distinct_mesh()
    A = build_A(sys_).toarray()
    assert eigendecompose_real(sys_.m, sys_.K).distinct
    b = np.zeros((sys_.n, 1))
    b[sys_.global_to_free[np.flatnonzero(mesh.omega)[0]]] = 1.0
    rep = rank_tests(A, B=b)
    assert rep.full and not rep.pbh_deficient


def test_duplicated_block_pbh():
    b = np.zeros((4, 1))
    b[0] = 1
    rep = rank_tests(_dup_block(), B=b)
    assert not rep.full and len(rep.pbh_deficient) >= 1 and rep.n_d == 2


def test_zero_output_rank():
    rep = rank_tests(_dup_block(), C=np.zeros((1, 4)))
    assert rep.kalman_rank == 0


def test_scalar_gramian():
    g = gramian_finite(np.array([[-1.0]]), np.array([[1.0]]), 0.0, 1.0)
    assert g.W[0, 0] == pytest.approx((1 - np.exp(-2)) / 2, rel=1e-6)
    assert g.W[0, 0] == pytest.approx(0.432332, abs=1e-6)
    assert gramian_finite(np.array([[-1.0]]), np.array([[0.0]]), 0.0, 1.0).W[0, 0] == 0


def test_gramian_shrinking_interval():
    A = _dup_block()
    B = np.array([[1.0], [0.0], [0.5], [0.2]])
    prev = None
    for t1 in (1.0, 0.5, 0.1, 0.01, 1e-4):
        W = gramian_closed_form(A, B, t1)
        if prev is not None:
            assert np.linalg.eigvalsh(prev - W).min() >= -1e-12 * np.trace(prev)
        prev = W
    assert np.abs(prev).max() < 1e-3


def test_discretize_scalar():
    Ad, _ = discretize(np.array([[-1.0]]), np.array([[1.0]]), 0.1, "bilinear")
    assert Ad[0, 0] == pytest.approx(0.95 / 1.05, abs=1e-12)
    Ad, Bd = discretize(np.array([[-1.0]]), np.array([[1.0]]), 0.1, "zoh")
    assert Ad[0, 0] == pytest.approx(np.exp(-0.1), abs=1e-12)
    assert Bd[0, 0] == pytest.approx(1 - np.exp(-0.1), abs=1e-12)
    assert (round(Ad[0, 0], 6), round(Bd[0, 0], 6)) == (0.904837, 0.095163)


def test_discretize_small_step():
    A = _dup_block()
    for method in ("bilinear", "zoh"):
        Ad, _ = discretize(A, np.ones((4, 1)), 1e-9, method)
        assert np.allclose(Ad, np.eye(4), atol=1e-8)
    with pytest.raises(BadStep):
        discretize(A, np.ones((4, 1)), 0.0)


occupancies = st.tuples(st.integers(1, 4), st.integers(1, 3)).flatmap(
    lambda s: st.lists(st.integers(0, 3), min_size=s[0] * s[1], max_size=s[0] * s[1])
    .map(lambda h: np.arange(3) < np.array(h).reshape(s)[..., None])
).filter(lambda a: a.any())


@given(occupancies, st.floats(1e-7, 1e-1))
def test_spectrum_and_discrete_stability(occ, dt):
    mesh = build_mesh(BuildGeometry(occ))
    sys_ = thermal_system(mesh, LTI_ALUMINUM)
    A = build_A(sys_).toarray()
    chk = spectrum_check(A, sys_.m, sys_.K)
    assert chk["max_imag_rel"] < 1e-8 and chk["max_real"] < 0
    assert chk["sym_vs_general_rel"] < 1e-8
    B = build_B_uniform(mesh, sys_)
    for method in ("bilinear", "zoh"):
        Ad, _ = discretize(A, B, dt, method)
        assert spectral_radius(Ad) < 1


@pytest.mark.parametrize("seed", range(5))
def test_simpson_matches_closed_form(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 16))
    X = rng.standard_normal((n, n))
    A = -(X @ X.T + 0.5 * np.eye(n))
    B = rng.standard_normal((n, 2))
    for kind, G in (("controllability", B), ("observability", B.T)):
        ref = gramian_closed_form(A, G, 1.0, kind)
        W = gramian_finite(A, G, 0.0, 1.0, kind=kind).W
        assert np.abs(W - ref).max() <= 1e-6 * np.abs(ref).max()


def test_closed_form_approaches_lyapunov():
    A = _dup_block()
    B = np.array([[1.0], [0.0], [0.5], [0.2]])
    assert np.allclose(gramian_closed_form(A, B, 60.0), gramian_lyapunov(A, B), atol=1e-10)


def test_structured_mesh_can_be_unobservable():
    # on a 6 x 1 part at h = 0.5 a (2, -1, -1, ...) pattern in the middle row
    # never reaches the top surface
    mesh = build_mesh(rectangle(6, 1), 0.5)
    sys_ = thermal_system(mesh, LTI_ALUMINUM)
    top = sys_.global_to_free[np.flatnonzero(mesh.omega)]
    assert not rank_tests(build_A(sys_).toarray(), C=np.eye(sys_.n)[top]).full


def test_case2_observability_gramian_pd():
    mesh = build_mesh(rectangle(6, 1))
    sys_ = thermal_system(mesh, LTI_ALUMINUM)
    lasers = LaserConfig([Laser(10.0, 0.05, LinearSweep(0.0, 6.0, 1e-2))])
    th = TopHat(tau=5e-4, t0=0.0, t1=1e-2)
    case = build_case(2, mesh, sys_, lasers, CameraConfig("coaxial", extent=1.0), th)
    A = case.A.toarray()
    assert rank_tests(A, C=np.eye(sys_.n)[sys_.global_to_free[np.flatnonzero(mesh.omega)]]).full
    # once the window has swept the whole top surface
    for t1 in (1e-2, 5e-2):
        g = gramian_finite(A, case.C_at, 0.0, t1, kind="observability")
        assert g.is_pd(1e-10)
    # after 2 ms the far end is seen only through the floor and slow diffusion
    short = gramian_finite(A, case.C_at, 0.0, 2e-3, kind="observability")
    assert np.linalg.eigvalsh(short.W)[0] >= -1e-12 * np.trace(short.W)
