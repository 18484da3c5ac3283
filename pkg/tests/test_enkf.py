import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given
from hypothesis import strategies as st

import pbfcontrol.enkf as enkf
from pbfcontrol.enkf import (EnsembleState, FilterConfig, NoiseModel, enkf_update, make_ensemble,
                             part_a_analogue, perturb_measurements, propagate_ensemble,
                             raster_window, reference_simulate, run_filter, sample_covariances,
                             step_input)
from pbfcontrol.errors import ConfigError, TooFewMembers
from pbfcontrol.fem import LTI_ALUMINUM, thermal_system
from pbfcontrol.gramian import discretize
from pbfcontrol.mesh import build_mesh
from pbfcontrol.paths import FixedPoint, SineRaster
from pbfcontrol.shapes import rectangle
from pbfcontrol.system import (CameraConfig, Laser, LaserConfig, build_A, build_B0,
                               build_C_fixed)


def test_sample_covariance_examples():
    P, R = sample_covariances(np.array([[1.0, -1.0]]), np.array([[0.0, 0.0]]))
    assert P[0, 0] == pytest.approx(2.0) and R[0, 0] == 0
    P, _ = sample_covariances(np.ones((3, 5)), np.ones((1, 5)))
    assert np.all(P == 0)
    with pytest.raises(TooFewMembers):
        sample_covariances(np.ones((2, 1)), np.ones((1, 1)))
    with pytest.raises(TooFewMembers):
        make_ensemble(np.zeros(2), 1, np.random.SeedSequence(0))


def test_update_examples():
    Z = np.array([[1.0, -1.0]])
    Y = np.zeros((1, 2))
    P, R = sample_covariances(Z, Y)
    Zn, mean = enkf_update(Z, np.eye(1), Y, P, R)
    assert np.allclose(Zn, 0) and mean[0] == pytest.approx(0)
    rng = np.random.default_rng(1)
    Z = rng.standard_normal((3, 6))
    C = rng.standard_normal((2, 3))
    P, _ = sample_covariances(Z, C @ Z)
    Zn, _ = enkf_update(Z, C, C @ Z, P, np.eye(2))
    assert np.array_equal(Zn, Z)
    Y = rng.standard_normal((2, 6))
    step = [np.abs(enkf_update(Z, C, Y, P, s * np.eye(2))[0] - Z).max() for s in (1e2, 1e6, 1e10)]
    assert step[0] > step[1] > step[2] and step[2] < 1e-6


def test_propagate_zero_noise_is_deterministic_model():
    Ad = np.array([[0.9, 0.05], [0.05, 0.8]])
    Bd = np.array([[1.0], [0.5]])
    ens = make_ensemble(np.array([1.0, 2.0]), 5, np.random.SeedSequence(3))
    x = np.array([1.0, 2.0])
    for k in range(4):
        u = np.array([float(k)])
        propagate_ensemble(ens, Ad, Bd, u, 0.0)
        x = Ad @ x + Bd @ u
    assert np.array_equal(ens.Z, np.repeat(x[:, None], 5, axis=1))
    assert ens.k == 4


def test_member_streams_are_reproducible():
    def run():
        ens = make_ensemble(np.zeros(2), 4, np.random.SeedSequence(11))
        propagate_ensemble(ens, np.eye(2) * 0.5, np.eye(2), np.zeros(2), 1.0)
        return ens.Z, perturb_measurements(ens, np.zeros(1), 2.0)
    a, b = run(), run()
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_gaussian_closure():
    # one step from the origin: state noise is B_d w, so cov = q B_d B_d'
    Ad = np.array([[0.9, 0.1], [0.1, 0.7]])
    Bd = np.array([[1.0, 0.0], [0.6, 0.8]])
    q = 2.5
    ens = make_ensemble(np.zeros(2), 10_000, np.random.SeedSequence(5))
    propagate_ensemble(ens, Ad, Bd, np.zeros(2), q)
    emp = np.cov(ens.Z)
    expected = q * Bd @ Bd.T
    assert np.all(np.abs(emp - expected) <= 0.2 * np.abs(expected))


@given(st.integers(0, 2 ** 31), st.integers(2, 30))
def test_covariances_symmetric_psd(seed, N):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((4, N)) * rng.uniform(0.1, 100)
    Y = rng.standard_normal((3, N))
    for M in sample_covariances(Z, Y):
        assert np.array_equal(M, M.T)
        assert np.linalg.eigvalsh(M).min() >= -1e-10 * max(1.0, np.abs(M).max())


def test_noise_model():
    assert NoiseModel(2.0, 3.0).q(0.5) == 4.0 and NoiseModel(2.0, 3.0).r(0.5) == 6.0
    with pytest.raises(ConfigError):
        NoiseModel(-1.0, 0.0)


def test_defaults():
    cfg = FilterConfig(mesh=None, lasers=None)
    assert cfg.noise == NoiseModel(1e5, 1.0)
    assert cfg.N == 100
    pa = part_a_analogue()
    assert pa.t_final == pytest.approx(4e-3)
    laser = pa.lasers.lasers[0]
    assert laser.variance == pytest.approx(0.01) and laser.path.v == pytest.approx(954.0)
    assert raster_window(pa.lasers, pa.dt) == 17
    assert raster_window(LaserConfig((Laser(1.0, 1.0, FixedPoint(0.0)),)), 1e-4) == 1


# ---------------------------------------------------------------------------
# truth simulator
# ---------------------------------------------------------------------------


@pytest.fixture
def small():
    mesh = build_mesh(rectangle(4, 2))
    sys_ = thermal_system(mesh, LTI_ALUMINUM)
    C = build_C_fixed(mesh, sys_, CameraConfig())
    return mesh, sys_, C


def test_truth_zero_power_stays_zero(small):
    mesh, _, C = small
    las = LaserConfig((Laser(0.0, 0.01, FixedPoint(1.0)),))
    tr = reference_simulate(mesh, LTI_ALUMINUM, las, NoiseModel(0, 0), C, 1e-3, 5e-3)
    assert np.all(tr.states == 0) and np.all(tr.measurements == 0)


def test_truth_rejects_coarse_fine_step(small):
    mesh, _, C = small
    with pytest.raises(ConfigError):
        reference_simulate(mesh, LTI_ALUMINUM, LaserConfig(()), NoiseModel(0, 0), C, 1e-3,
                           5e-3, dt_fine=5e-4)


def test_truth_matches_lti_under_refinement(small):
    mesh, sys_, C = small
    A = build_A(sys_).toarray()
    dt, steps = 1e-3, 10
    x0 = np.random.default_rng(0).random(sys_.n)
    exact = np.array([sl.expm(A * dt * k) @ x0 for k in range(steps + 1)])
    errs = []
    for fine in (1e-4, 1e-5, 1e-6):
        tr = reference_simulate(mesh, LTI_ALUMINUM, LaserConfig(()), NoiseModel(0, 0), C, dt,
                                dt * steps, fine, x0=x0)
        errs.append(np.abs(tr.states - exact).max() / np.abs(exact).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] <= 1e-4

    # driven: a very wide beam makes the quantized input equal the exact load
    las = LaserConfig((Laser(1e3, 1e6, FixedPoint(2.0)),))
    B = build_B0(mesh, sys_) / sys_.m[:, None]
    fine = 1e-6
    tr = reference_simulate(mesh, LTI_ALUMINUM, las, NoiseModel(0, 0), C, dt, dt * steps, fine)
    Ad, Bd = discretize(A, B, fine, "zoh")
    u = step_input(mesh, las, 0.0, dt)
    x, ref = np.zeros(sys_.n), [np.zeros(sys_.n)]
    for _ in range(steps):
        for _ in range(int(round(dt / fine))):
            x = Ad @ x + Bd @ u
        ref.append(x)
    assert np.abs(tr.states - np.array(ref)).max() <= 1e-4 * np.abs(tr.states).max()


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------


def _small_cfg(**kw):
    h = 0.25
    mesh = build_mesh(rectangle(8, 3, h), h)
    doc = dict(mesh=mesh, lasers=LaserConfig((Laser(1e5, 0.01, SineRaster(954.0, 0.2, 1.8)),)),
               camera=CameraConfig("fixed", center=(1.0, 0.0), extent=100.0),
               N=30, dt=1e-4, t_final=2e-3)
    doc.update(kw)
    return FilterConfig(**doc)


def test_zero_noise_exact_model():
    # a wide beam, so quantizing the input loses nothing
    wide = LaserConfig((Laser(1e5, 1e4, SineRaster(954.0, 0.2, 1.8)),))
    run = run_filter(_small_cfg(truth_material=LTI_ALUMINUM, noise=NoiseModel(0, 0),
                                lasers=wide, fine_factor=100))
    # no spread, no gain: the estimate is the open-loop model up to GEMM vs GEMV rounding
    assert np.abs(run.estimate - run.open_loop).max() <= 1e-12 * np.abs(run.open_loop).max()
    # what remains is the time-step gap between the two integrators
    scale = np.abs(run.truth).max()
    assert scale > 0 and np.abs(run.error_ol).max() <= 5e-3 * scale
    s = run.summary()
    assert s["rms_cl"] == pytest.approx(s["rms_ol"], rel=1e-12)


def test_run_is_deterministic():
    a = run_filter(_small_cfg(seed=4))
    b = run_filter(_small_cfg(seed=4))
    c = run_filter(_small_cfg(seed=5))
    assert np.array_equal(a.estimate, b.estimate) and np.array_equal(a.truth, b.truth)
    assert not np.array_equal(a.estimate, c.estimate)
    assert a.times.shape[0] == a.estimate.shape[0] == a.open_loop.shape[0] == a.truth.shape[0]


def test_consistency_over_seeds():
    noise = NoiseModel(1e2, 1e-6)
    sigma = np.sqrt(noise.r(1e-4))
    for seed in range(10):
        s = run_filter(_small_cfg(truth_material=LTI_ALUMINUM, noise=noise, seed=seed)).summary()
        assert s["rms_cl"] <= s["rms_ol"] + 3 * sigma


def test_dimension_mismatch(monkeypatch):
    monkeypatch.setattr(enkf, "build_C_fixed", lambda mesh, sys_, cam: np.zeros((2, 3)))
    with pytest.raises(ConfigError):
        run_filter(_small_cfg())
    with pytest.raises(TooFewMembers):
        run_filter(_small_cfg(N=1))


def test_late_trend_synthetic():
    t = np.arange(30)
    truth = np.zeros((30, 2))
    ol = -np.column_stack([t, t]).astype(float)
    est = -np.column_stack([np.minimum(t, 5)] * 2).astype(float)
    run = enkf.FilterRun(t * 1.0, est, ol, truth, 0)
    tr = run.late_trend(3)
    assert tr["ol_growing"] and tr["cl_bounded"]
    assert tr["cl_late_peak_ratio"] == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        run.late_trend(0)
    with pytest.raises(ConfigError):
        run.late_trend(28)
