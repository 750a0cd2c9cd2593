"""Command-line experiment driver: simulate, train, estimate, evaluate, reproduce.

Each stage reads only files written by earlier stages, so any stage can be
rerun on its own. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, dataio, evaluation as ev, learn, sim
from .errors import GpImuError
from .estimators import EstimatorConfig, Method, run_estimator
from .priors import SingerParams

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

TRAIN_DEFAULTS = {"alpha0": 1.0, "sigma2_0": 1.0, "max_iter": learn.MAX_ITER, "tol": learn.GRAD_TOL}
ESTIMATE_DEFAULTS = {"methods": ["input", "measurement"], "r_pos": None, "r_acc": None}
TOP_KEYS = {"preset", "seed", "sim", "train", "estimate"}


class ConfigError(GpImuError, ValueError):
    """Invalid configuration, located by line and field where possible."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line, self.field = line, field


@dataclass
class Config:
    sim: sim.SimConfig
    train: dict = field(default_factory=lambda: dict(TRAIN_DEFAULTS))
    estimate: dict = field(default_factory=lambda: dict(ESTIMATE_DEFAULTS))
    preset: str | None = None

    def to_dict(self) -> dict:
        return {"preset": self.preset, "seed": self.sim.seed, "sim": self.sim.to_dict(),
                "train": self.train, "estimate": self.estimate}

    def r_pos(self) -> float:
        r = self.estimate.get("r_pos")
        return float(r) if r is not None else self.sim.sigma_pos**2

    def r_acc(self) -> float:
        r = self.estimate.get("r_acc")
        return float(r) if r is not None else self.sim.sigma_acc**2


def _line_of(text: str, key: str):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def preset(name: str) -> sim.SimConfig:
    wnoj, singer = sim.experiment_presets()
    try:
        return {"wnoj": wnoj, "singer": singer}[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r} (expected 'wnoj' or 'singer')", field="preset") from None


def parse_config(text: str, default_preset: str | None = None) -> Config:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg}, column {exc.colno})", line=exc.lineno) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object", line=1)
    if "config" in data and "outputs" in data:
        data = data["config"]  # a run manifest
    unknown = set(data) - TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError("unknown field", line=_line_of(text, key), field=key)
    name = data.get("preset") or default_preset
    base = preset(name) if name else sim.SimConfig()
    sim_over = data.get("sim") or {}
    if not isinstance(sim_over, dict):
        raise ConfigError("must be an object", line=_line_of(text, "sim"), field="sim")
    fields = dict(base.to_dict())
    for key, val in sim_over.items():
        if key not in fields:
            raise ConfigError("unknown field", line=_line_of(text, key), field=f"sim.{key}")
        fields[key] = val
    if "seed" in data:
        fields["seed"] = data["seed"]
    try:
        if not isinstance(fields["seed"], int) or fields["seed"] < 0:
            raise ValueError("seed must be a non-negative integer")
        cfg_sim = sim.SimConfig.from_dict(fields)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), line=_line_of(text, "sim"), field="sim") from None
    train = _section(data, text, "train", TRAIN_DEFAULTS)
    estimate = _section(data, text, "estimate", ESTIMATE_DEFAULTS)
    bad = [m for m in estimate["methods"] if m not in {x.value for x in Method}]
    if bad:
        raise ConfigError(f"unknown method {bad[0]!r}", line=_line_of(text, "methods"), field="estimate.methods")
    return Config(cfg_sim, train, estimate, name)


def _section(data, text, name, defaults):
    over = data.get(name) or {}
    if not isinstance(over, dict):
        raise ConfigError("must be an object", line=_line_of(text, name), field=name)
    out = dict(defaults)
    for key, val in over.items():
        if key not in defaults:
            raise ConfigError("unknown field", line=_line_of(text, key), field=f"{name}.{key}")
        out[key] = val
    return out


def load_config(path, default_preset=None, seed=None) -> Config:
    if path is None:
        cfg = parse_config("", default_preset)
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        cfg = parse_config(p.read_text(), default_preset)
    if seed is not None:
        cfg.sim = replace(cfg.sim, seed=int(seed))
    return cfg


# ---------------------------------------------------------------- stages


class Log:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str):
        if not self.quiet:
            print(msg, file=sys.stderr, flush=True)


def _manifest(out: Path, command: str, cfg: Config, outputs, timings) -> None:
    dataio.write_json(out / "manifest.json", {
        "version": __version__, "command": command, "config": cfg.to_dict(), "seed": cfg.sim.seed,
        "outputs": {str(Path(p).relative_to(out)): dataio.file_digest(p) for p in outputs},
        "timings": timings,
    })


def stage_simulate(cfg: Config, out: Path, log: Log) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    paths = []
    for split, name in ((sim.TRAIN, "train"), (sim.EVAL, "eval")):
        trajs = sim.simulate(cfg.sim, split)
        log(f"simulated {len(trajs)} {name} trajectories")
        paths += [out / f"{name}_trajectories.csv", out / f"{name}_measurements.csv"]
        dataio.write_trajectories(paths[-2], trajs)
        dataio.write_measurements(paths[-1], trajs)
    timings = {"simulate": time.perf_counter() - t0}
    _manifest(out, "simulate", cfg, paths, timings)
    return timings


def _dataset(cfg: Config, data_dir: Path, split: str):
    return dataio.read_dataset(data_dir / f"{split}_trajectories.csv", data_dir / f"{split}_measurements.csv",
                               cfg.r_pos(), cfg.r_acc())


def stage_train(cfg: Config, data_dir: Path, out: Path, log: Log) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    trajs = _dataset(cfg, data_dir, "train")
    t0 = time.perf_counter()
    rq = learn.train_input_covariance(trajs, cfg.sim.pos_times(), cfg.sim.x0_mean, cfg.sim.p0)
    t1 = time.perf_counter()
    init = SingerParams(cfg.train["alpha0"], cfg.train["sigma2_0"])
    rs = learn.train_singer_noiseless(trajs, init, int(cfg.train["max_iter"]), float(cfg.train["tol"]))
    t2 = time.perf_counter()
    params = {"q_input": rq.params["q_input"], "alpha": rs.params["alpha"][0],
              "sigma2": rs.params["sigma2"][0]}
    log(f"learned q_input={params['q_input']:.6g} alpha={params['alpha']:.6g} sigma2={params['sigma2']:.6g}")
    dataio.write_json(out / "params.json", params)
    rows = [("input", 0, rq.objective, rq.params["q_input"], "", "")]
    rows += [("measurement", it, obj, "", float(np.exp(th)), optimal)
             for (_, it, obj, th), optimal in _singer_trace(rs, trajs)]
    dataio.write_rows(out / "train_report.csv", ["method", "iteration", "objective", "q_input", "alpha", "sigma2"], rows)
    timings = {"train_input": t1 - t0, "train_singer": t2 - t1}
    _manifest(out, "train", cfg, [out / "params.json", out / "train_report.csv"], timings)
    return timings


def _singer_trace(report, trajs):
    data = learn.collect_intervals(trajs)
    for row in report.trace:
        yield row, learn.optimal_sigma2(data, float(np.exp(row[3])))


def _estimator_configs(cfg: Config, params: dict):
    out = []
    for m in cfg.estimate["methods"]:
        if m == "input":
            out.append(EstimatorConfig(Method.INPUT, cfg.sim.x0_mean, cfg.sim.p0, cfg.r_pos(), cfg.r_acc(),
                                       q_input=float(params["q_input"])))
        else:
            out.append(EstimatorConfig(Method.MEASUREMENT, cfg.sim.x0_mean, cfg.sim.p0, cfg.r_pos(), cfg.r_acc(),
                                       singer=SingerParams(params["alpha"], params["sigma2"])))
    return out


def _run_chunk(args):
    streams, ecfg = args
    return [run_estimator(pos, acc, ecfg) for pos, acc in streams]


def _parallel_estimates(trajs, ecfg, threads: int):
    streams = [(t.pos_meas, t.acc_meas) for t in trajs]
    if threads <= 1 or len(streams) < 2:
        return _run_chunk((streams, ecfg))
    chunks = [streams[i::threads] for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_run_chunk, [(c, ecfg) for c in chunks]))
    out = [None] * len(streams)
    for i, part in enumerate(parts):
        out[i::threads] = part
    return out


def stage_estimate(cfg: Config, data_dir: Path, params_path: Path, out: Path, log: Log, threads: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    params = dataio.read_json(params_path)
    missing = {"q_input", "alpha", "sigma2"} - set(params)
    if missing:
        raise dataio.DataFormatError(f"{params_path}: missing parameters {sorted(missing)}")
    trajs = _dataset(cfg, data_dir, "eval")
    timings, paths = {}, []
    for ecfg in _estimator_configs(cfg, params):
        t0 = time.perf_counter()
        results = _parallel_estimates(trajs, ecfg, threads)
        timings[f"estimate_{ecfg.method.value}"] = time.perf_counter() - t0
        log(f"ran {ecfg.method.value} estimator on {len(results)} trajectories")
        est, info = out / f"estimates_{ecfg.method.value}.csv", out / f"information_{ecfg.method.value}.csv"
        if not results:
            dataio.write_rows(est, dataio.estimate_header(ecfg.state_dim), [])
            dataio.write_rows(info, dataio.info_header(ecfg.state_dim), [])
        else:
            dataio.write_estimates(est, info, results)
        paths += [est, info]
    dataio.write_json(out / "params.json", params)
    paths.append(out / "params.json")
    _manifest(out, "estimate", cfg, paths, timings)
    return timings


def _truth_at(truth, times):
    idx = np.clip(np.searchsorted(truth.times, times - 1e-9), 0, truth.times.size - 1)
    if np.any(np.abs(truth.times[idx] - times) > 1e-9):
        raise dataio.DataFormatError("estimate times do not match the ground-truth grid")
    return truth.states[idx]


def evaluate_results(results_by_method: dict, truths) -> tuple[list, list, list]:
    metric_rows, summary_rows, test_rows = [], [], []
    for method, results in results_by_method.items():
        metrics = [ev.trajectory_metrics(r, _truth_at(t, r.times)) for r, t in zip(results, truths)]
        for i, m in enumerate(metrics):
            for key, val in m.as_dict().items():
                metric_rows.append((i, method, key, val))
        if len(metrics) < 2:
            continue
        cols = {k: np.array([getattr(m, k) for m in metrics]) for k in metrics[0].as_dict()}
        for key, vals in cols.items():
            b = ev.box_stats(vals)
            summary_rows.append((method, key, b.mean, b.median, b.q1, b.q3, b.whisker_lo, b.whisker_hi, b.n_outliers))
        for key in ("mean_err_pos", "mean_err_vel"):
            bt = ev.bias_test(cols[key])
            test_rows.append((method, f"bias_{key[-3:]}", bt.mean, bt.ci_lo, bt.ci_hi, bt.passed))
            box = ev.box_stats(cols[key])
            test_rows.append((method, f"bias_{key[-3:]}_whiskers_in_ci", bt.mean, box.whisker_lo, box.whisker_hi,
                              bt.whiskers_inside))
        dof = int(cols["dof_full"][0])
        lo, hi = ev.nees_band(dof)
        nf = cols["nees_full"]
        test_rows.append((method, "nees_full_mean", float(nf.mean()), lo, hi, bool(lo <= nf.mean() <= hi)))
        inside = float(np.mean((nf >= lo) & (nf <= hi)))
        test_rows.append((method, "nees_full_fraction_in_band", inside, 0.95, 1.0, ""))
        lo_n, hi_n = ev.nees_band(dof, n=nf.size)
        test_rows.append((method, "nees_full_mean_pooled", float(nf.mean()), lo_n, hi_n, bool(lo_n <= nf.mean() <= hi_n)))
        dm = int(cols["dof_marginal"][0])
        lo_m, hi_m = ev.nees_band(dm)
        nm = cols["nees_marginal"]
        test_rows.append((method, "nees_marginal_mean", float(nm.mean()), lo_m, hi_m, bool(lo_m <= nm.mean() <= hi_m)))
    if {"input", "measurement"} <= set(results_by_method):
        rm = {}
        for method in ("input", "measurement"):
            vals = [r for (_, mth, k, r) in metric_rows if mth == method and k == "rmse_pos"]
            rm[method] = float(np.sqrt(np.mean(np.square(vals)))) if vals else float("nan")
        ratio = rm["measurement"] / rm["input"] if rm["input"] > 0 else float("nan")
        test_rows.append(("both", "rmse_pos_ratio", ratio, 0.95, 1.05, bool(0.95 <= ratio <= 1.05)))
    return metric_rows, summary_rows, test_rows


def stage_evaluate(cfg: Config | None, results_dir: Path, truth_dir: Path, out: Path, log: Log) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    truths = dataio.read_dataset(truth_dir / "eval_trajectories.csv", truth_dir / "eval_measurements.csv")
    by_method = {}
    for m in Method:
        est = results_dir / f"estimates_{m.value}.csv"
        if est.exists():
            by_method[m.value] = dataio.read_estimates(est, results_dir / f"information_{m.value}.csv", m)
            if len(by_method[m.value]) != len(truths):
                raise dataio.DataFormatError(f"{est}: {len(by_method[m.value])} estimates for {len(truths)} trajectories")
    if not by_method:
        raise dataio.MissingInput(f"no estimates found in {results_dir}")
    metric_rows, summary_rows, test_rows = evaluate_results(by_method, truths)
    params_path = results_dir / "params.json"
    if params_path.exists():
        params = dataio.read_json(params_path)
        for method, key in (("input", "q_input"), ("measurement", "alpha"), ("measurement", "sigma2")):
            v = params[key]
            summary_rows.append((method, f"learned_{key}", v, v, v, v, v, v, 0))
    paths = [out / "metrics.csv", out / "summary.csv", out / "tests.csv"]
    dataio.write_rows(paths[0], dataio.METRIC_HEADER, metric_rows)
    dataio.write_rows(paths[1], dataio.SUMMARY_HEADER, summary_rows)
    dataio.write_rows(paths[2], ["method", "test", "value", "lo", "hi", "passed"], test_rows)
    for row in test_rows:
        log(f"{row[0]:>11} {row[1]:<28} {row[2]: .5g}  [{row[3]:.5g}, {row[4]:.5g}]  {row[5]}")
    timings = {"evaluate": time.perf_counter() - t0}
    if cfg is not None:
        _manifest(out, "evaluate", cfg, paths, timings)
    return timings


def stage_reproduce(cfg: Config, out: Path, log: Log, threads: int = 1) -> dict:
    timings = {}
    timings.update(stage_simulate(cfg, out / "data", log))
    timings.update(stage_train(cfg, out / "data", out / "train", log))
    timings.update(stage_estimate(cfg, out / "data", out / "train" / "params.json", out / "estimate", log, threads))
    timings.update(stage_evaluate(cfg, out / "estimate", out / "data", out / "evaluate", log))
    outputs = [out / s / n for s, n in (("train", "params.json"), ("evaluate", "metrics.csv"),
                                        ("evaluate", "summary.csv"), ("evaluate", "tests.csv"))]
    _manifest(out, "reproduce", cfg, outputs, timings)
    return timings


# ------------------------------------------------------------------ entry


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for estimation")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    p = argparse.ArgumentParser(prog="gpimu", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="sample training and evaluation data")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("train", parents=[common], help="learn q_input and Singer parameters")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("estimate", parents=[common], help="run the estimators on evaluation data")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--out", required=True)
    s = sub.add_parser("evaluate", parents=[common], help="metrics, summaries and statistical tests")
    s.add_argument("--results", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s = sub.add_parser("reproduce", parents=[common], help="run one study end to end")
    s.add_argument("experiment", choices=["wnoj", "singer"])
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None, help="optional overrides (or a previous manifest)")
    return p


def cmd_simulate(config_path, out_dir, seed=None, quiet=True):
    return stage_simulate(load_config(config_path, seed=seed), Path(out_dir), Log(quiet))


def cmd_train(config_path, data_dir, out_dir, seed=None, quiet=True):
    return stage_train(load_config(config_path, seed=seed), Path(data_dir), Path(out_dir), Log(quiet))


def cmd_estimate(config_path, data_dir, params_path, out_dir, seed=None, quiet=True, threads=1):
    cfg = load_config(config_path, seed=seed)
    return stage_estimate(cfg, Path(data_dir), Path(params_path), Path(out_dir), Log(quiet), max(1, int(threads)))


def cmd_evaluate(results_dir, truth_dir, out_dir, config_path=None, seed=None, quiet=True):
    cfg = load_config(config_path, seed=seed) if config_path else None
    return stage_evaluate(cfg, Path(results_dir), Path(truth_dir), Path(out_dir), Log(quiet))


def cmd_reproduce(experiment, out_dir, config_path=None, seed=None, quiet=True, threads=1):
    cfg = load_config(config_path, default_preset=experiment, seed=seed)
    return stage_reproduce(cfg, Path(out_dir), Log(quiet), max(1, int(threads)))


def run(argv=None) -> int:
    a = build_parser().parse_args(argv)
    common = {"seed": a.seed, "quiet": a.quiet}
    if a.command == "simulate":
        cmd_simulate(a.config, a.out, **common)
    elif a.command == "train":
        cmd_train(a.config, a.data, a.out, **common)
    elif a.command == "estimate":
        cmd_estimate(a.config, a.data, a.params, a.out, threads=a.threads, **common)
    elif a.command == "evaluate":
        cmd_evaluate(a.results, a.truth, a.out, a.config, **common)
    else:
        cmd_reproduce(a.experiment, a.out, a.config, threads=a.threads, **common)
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (dataio.MissingInput, dataio.DataFormatError, GpImuError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
