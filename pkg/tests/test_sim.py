import numpy as np
import pytest

from gpimu import sim
from gpimu.priors import MotionModel, PriorKind


def test_counts_inclusive_grid():
    tr = sim.simulate(sim.SimConfig(), sim.TRAIN, 1)[0]
    assert len(tr.pos_meas) == 11
    assert len(tr.acc_meas) == 101
    assert tr.states.shape == (101, 3)
    assert tr.times[-1] == pytest.approx(1.0)


def test_deterministic_without_noise():
    m = MotionModel.wnoj(0.0)
    t = np.linspace(0, 1, 11)
    x = sim.sample_states(m, t, [0.0, 1.0, 2.0], np.zeros((3, 3)), np.random.default_rng(0))
    np.testing.assert_allclose(x[-1], [2.0, 3.0, 2.0], rtol=1e-12)


def test_measurements_equal_truth_in_noise_limit():
    cfg = sim.SimConfig(sigma_pos=1e-15, sigma_acc=1e-15)
    tr = sim.simulate(cfg, sim.EVAL, 1)[0]
    np.testing.assert_allclose(tr.pos_meas.y[:, 0], tr.states[::10, 0], atol=1e-13)
    np.testing.assert_allclose(tr.acc_meas.y[:, 0], tr.states[:, 2], atol=1e-13)


def test_presets():
    wnoj, singer = sim.experiment_presets()
    assert wnoj.kind is PriorKind.WNOJ and wnoj.qc == 1.0
    assert singer.alpha == 10.0 and singer.sigma2 == 1.0
    for cfg in (wnoj, singer):
        assert cfg.sigma_pos == 0.01 and cfg.sigma_acc == 0.01
        assert cfg.n_train == 100 and cfg.n_eval == 1000


def test_seeded_streams_are_independent_of_count():
    cfg = sim.SimConfig(seed=7)
    a = sim.simulate(cfg, sim.EVAL, 3)
    b = sim.simulate(cfg, sim.EVAL, 5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.states, y.states)
        np.testing.assert_array_equal(x.acc_meas.y, y.acc_meas.y)
    c = sim.simulate(cfg, sim.TRAIN, 1)[0]
    assert not np.array_equal(c.states, a[0].states)


def test_sample_covariance_matches_prior():
    m = MotionModel.singer(10.0, 1.0)
    t = np.array([0.0, 0.1])
    rng = np.random.default_rng(0)
    x = np.array([sim.sample_states(m, t, np.zeros(3), np.zeros((3, 3)), rng)[1] for _ in range(20000)])
    q = m.q(0.1)
    # Frobenius error of a sample covariance shrinks like 1/sqrt(n)
    assert np.linalg.norm(np.cov(x.T) - q) < 5 * np.linalg.norm(q) * np.sqrt(2 / 20000)


def test_config_validation_and_round_trip():
    cfg = sim.SimConfig(kind="singer", alpha=3.0)
    assert sim.SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        sim.SimConfig(acc_rate=95.0)
    with pytest.raises(ValueError):
        sim.SimConfig(n_eval=-1)
    with pytest.raises(KeyError):
        sim.SimConfig.from_dict({"bogus": 1})


def test_psd_sqrt_singular():
    m = np.outer([1.0, 2.0], [1.0, 2.0])
    s = sim.psd_sqrt(m)
    np.testing.assert_allclose(s @ s.T, m, atol=1e-12)
