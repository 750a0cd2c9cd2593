"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run directly (``python tests/test_acceptance.py``) or through pytest.
"""

import sys
import time

import numpy as np
import pytest
from scipy.stats import chi2, kstest

from gpimu import cli, dataio, evaluation as ev, gp_traj, learn, preint, sim
from gpimu.estimators import EstimatorConfig, Method, run_estimator
from gpimu.gp_traj import MeasurementStream
from gpimu.priors import MotionModel, SingerParams, q_alpha_jacobian, singer_phi, singer_q, wnoj_phi_q
from oracles import endpoint_paths, random_instance, rel_err


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
    assert ok, detail


def test_1_endpoint_equivalence(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        batch, gp, schur = endpoint_paths(*random_instance(rng))
        for mean, cov in (gp, schur):
            worst = max(worst, rel_err(mean, batch[0]), rel_err(cov, batch[1]))
    worst_dr = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 11))
        times = np.sort(rng.uniform(0.0, 1.0, n - 1))
        times = np.append(times, 1.0)
        acc = MeasurementStream.scalar(times, rng.normal(size=n), [0, 0, 1], 1e-4)
        x0 = rng.normal(size=2)
        f = preint.classic_preintegrate(acc, (0.0, 1.0), 1e-3)
        ref = preint.dead_reckon(acc, (0.0, 1.0), x0)
        worst_dr = max(worst_dr, rel_err(f.phi_window @ x0 + f.delta_x, ref))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and worst_dr < 1e-12 and elapsed < 10.0
    report(capsys, 1, "endpoint equivalence", ok,
           f"three-path rel err {worst:.2e} (<1e-9), classic vs dead reckoning {worst_dr:.2e} (<1e-12), {elapsed:.1f} s")


def _read_tests(path):
    return {(r["method"], r["test"]): r for r in dataio.read_rows(path)}


def _reproduce(name, tmp_path_factory):
    out = tmp_path_factory.mktemp(name)
    start = time.perf_counter()
    cli.stage_reproduce(cli.load_config(None, default_preset=name), out, cli.Log(True), threads=1)
    elapsed = time.perf_counter() - start
    params = dataio.read_json(out / "train" / "params.json")
    return params, _read_tests(out / "evaluate" / "tests.csv"), elapsed


def _passed(tests, method, name):
    return tests[(method, name)]["passed"] == "1"


def _consistency(tests):
    checks = {}
    for m in ("input", "measurement"):
        checks[m] = all(_passed(tests, m, t) for t in ("bias_pos", "bias_vel", "nees_full_mean"))
    return checks


@pytest.mark.slow
def test_2_wnoj_reproduction(capsys, tmp_path_factory):
    params, tests, elapsed = _reproduce("wnoj", tmp_path_factory)
    q, a, s2 = params["q_input"], params["alpha"], params["sigma2"]
    cons = _consistency(tests)
    ratio = float(tests[("both", "rmse_pos_ratio")]["value"])
    nees = {m: float(tests[(m, "nees_full_mean")]["value"]) for m in cons}
    ok = (0.0029 <= q <= 0.0039 and 0.90 <= s2 <= 1.11 and a <= 0.5 and all(cons.values())
          and 0.95 <= ratio <= 1.05 and elapsed < 300)
    report(capsys, 2, "WNOJ experiment", ok,
           f"q_input={q:.5f} sigma2={s2:.4f} alpha={a:.4f}; bias+NEES pass {cons}; "
           f"mean NEES {nees}; RMSE ratio {ratio:.4f}; {elapsed:.0f} s")


@pytest.mark.slow
def test_3_singer_reproduction(capsys, tmp_path_factory):
    params, tests, elapsed = _reproduce("singer", tmp_path_factory)
    q, a, s2 = params["q_input"], params["alpha"], params["sigma2"]
    cons = _consistency(tests)
    ok = 8.2 <= a <= 12.3 and 0.91 <= s2 <= 1.11 and 0.0024 <= q <= 0.0033 and all(cons.values()) and elapsed < 300
    report(capsys, 3, "Singer experiment", ok,
           f"alpha={a:.4f} sigma2={s2:.4f} q_input={q:.5f}; bias+NEES pass {cons}; {elapsed:.0f} s")


def test_4_gradient_verification(capsys):
    rng = np.random.default_rng(11)
    m = MotionModel.singer(3.0, 1.0)
    worst, branches = 0.0, set()
    for i in range(20):
        dt = 0.5 if i % 2 else 0.05
        t = np.arange(31) * dt
        trajs = [(t, sim.sample_states(m, t, np.zeros(3), np.eye(3) * 0.1, rng))]
        data = learn.collect_intervals(trajs)
        alpha = float(np.exp(rng.uniform(np.log(0.05), np.log(30.0))))
        s2 = float(rng.uniform(0.5, 2.0))
        x = alpha * dt
        branches.add(("Q series" if x < 1 else "Q closed", "J series" if x < 4 else "J closed"))
        _, ga, gs = learn.singer_objective(data, alpha, s2)
        num = learn.finite_difference_gradient(
            lambda p: learn.singer_objective(data, p[0], p[1], False)[0], [alpha, s2], [1e-5 * alpha, 1e-6 * s2])
        worst = max(worst, abs(ga - num[0]) / abs(num[0]), abs(gs - num[1]) / abs(num[1]))
        dq, dphi = q_alpha_jacobian(dt, alpha)
        h = 1e-5 * alpha
        num_q = (singer_q(dt, alpha + h) - singer_q(dt, alpha - h)) / (2 * h)
        num_phi = (singer_phi(dt, alpha + h) - singer_phi(dt, alpha - h)) / (2 * h)
        worst = max(worst, rel_err(dq, num_q), rel_err(dphi, num_phi))
    kinds = {b for pair in branches for b in pair}
    ok = worst < 1e-4 and kinds == {"Q series", "Q closed", "J series", "J closed"}
    report(capsys, 4, "gradient verification", ok, f"worst rel err {worst:.2e} over 20 points; branches {sorted(kinds)}")


def test_5_kernel_limits(capsys):
    wn_phi, wn_q = wnoj_phi_q(1.0, 1.0)
    e_q = rel_err(singer_q(1.0, 1e-8, 1.0), wn_q)
    exact = np.array_equal(singer_phi(1.0, 0.0), wn_phi) and np.array_equal(singer_phi(0.1, 0.0), wnoj_phi_q(0.1)[0])
    e_inf = abs(singer_q(1.0, 1e4, 1.0)[1, 1] / 1e-8 - 1.0)
    ok = e_q < 1e-6 and exact and e_inf < 1e-3
    report(capsys, 5, "kernel limits", ok,
           f"small-alpha Q rel {e_q:.1e}, alpha=0 Phi exact {exact}, large-alpha Q22 rel {e_inf:.1e}")


def test_6_linear_complexity(capsys):
    # sizes are timed round-robin and the best of 15 rounds is kept, so
    # background load drifts affect every size alike
    model = MotionModel.singer(10.0, 1.0)
    rng = np.random.default_rng(0)
    sizes = (1000, 2000, 4000)
    problems = []
    for k in sizes:
        t = np.arange(k + 1) * 0.01
        prior = gp_traj.build_prior(model, t, np.zeros(3), np.eye(3) * 1e-3)
        meas = MeasurementStream.scalar(t, rng.normal(size=t.size), [0, 0, 1], 1e-4)
        problems.append((prior, meas))
    calls = {"solve_posterior": gp_traj.solve_posterior, "gp_preintegrate": preint.gp_preintegrate}
    best = {name: [np.inf] * len(sizes) for name in calls}
    for _ in range(15):
        for name, fn in calls.items():
            for i, (prior, meas) in enumerate(problems):
                start = time.perf_counter()
                fn(prior, meas)
                best[name][i] = min(best[name][i], time.perf_counter() - start)
    ratios = {name: [b / a for a, b in zip(v, v[1:])] for name, v in best.items()}
    ok = all(r <= 2.5 for v in ratios.values() for r in v)
    detail = "; ".join(f"{n} ratios {', '.join(f'{r:.2f}' for r in v)}" for n, v in ratios.items())
    report(capsys, 6, "linear complexity", ok, detail + " (<=2.5)")


@pytest.mark.slow
def test_7_statistical_calibration(capsys):
    cfg = sim.SimConfig(kind="singer", alpha=10.0, sigma2=1.0, x0_mean=(0.0, 1.0, 0.0), duration=0.3,
                        n_eval=2000, seed=17)
    ecfg = EstimatorConfig(Method.MEASUREMENT, cfg.x0_mean, cfg.p0, cfg.sigma_pos**2, cfg.sigma_acc**2,
                           singer=SingerParams(cfg.alpha, cfg.sigma2))
    stats, dof = [], None
    for tr in sim.simulate(cfg, sim.EVAL):
        res = run_estimator(tr.pos_meas, tr.acc_meas, ecfg)
        value, dof = ev.nees_full(res, tr.states[::cfg.substeps])
        stats.append(value * dof)
    p = kstest(stats, chi2(dof).cdf).pvalue
    report(capsys, 7, "statistical calibration", p > 0.01,
           f"KS p-value {p:.3f} for dof*NEES vs chi2({dof}) over {len(stats)} trajectories (>0.01)")


def test_8_dropout(capsys):
    cfg = sim.experiment_presets()[1]
    tr = sim.simulate(cfg, sim.EVAL, 1)[0]
    ecfg = EstimatorConfig(Method.MEASUREMENT, cfg.x0_mean, cfg.p0, cfg.sigma_pos**2, cfg.sigma_acc**2,
                           singer=SingerParams(cfg.alpha, cfg.sigma2))
    lost = (tr.acc_meas.times >= 0.25) & (tr.acc_meas.times < 0.75)
    full = run_estimator(tr.pos_meas, tr.acc_meas, ecfg)
    cut = run_estimator(tr.pos_meas, tr.acc_meas.select(~lost), ecfg)
    affected = (full.times >= 0.3 - 1e-9) & (full.times <= 0.7 + 1e-9)
    before = np.trace(full.covs, axis1=1, axis2=2)
    after = np.trace(cut.covs, axis1=1, axis2=2)
    ok = np.all(np.isfinite(cut.means)) and bool(np.all(after[affected] > before[affected]))
    report(capsys, 8, "dropout", ok,
           f"dropped {lost.mean():.0%} of accel samples contiguously; trace ratio at affected endpoints "
           f"{np.min(after[affected] / before[affected]):.3f}..{np.max(after[affected] / before[affected]):.3f}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
