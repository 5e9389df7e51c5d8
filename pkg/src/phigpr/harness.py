"""
Experiment orchestration: configuration, ground truth and observations, the
three forecasting methods, metrics and persisted run records.

A run proceeds through fixed stages (ensemble, truth, moments, observations,
one stage per method, metrics, output). A failure in any stage is re-raised as
``StageError`` naming the stage, after the record so far has been written
together with a ``FAILED`` marker file.
"""

from __future__ import annotations

import configparser
import contextlib
import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import arima, dd_gpr
from .errors import ContractError
from .gpr import ObservationSet, condition, write_posterior_csv
from .grid_model import GridParameters, load_grid, three_gen_path
from .metrics import EvalSeries, MetricRow, evaluate, write_metrics_csv
from .prior_stats import (MomentTable, StateChannel, assemble_joint, channel_values,
                          ensemble_moments, parse_channel, time_indices)
from .sde_sim import Ensemble, SimConfig, Trajectory, generate_ensemble, stride_for

__all__ = [
    "METHODS",
    "ConfigError",
    "StageError",
    "ObservationPlan",
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "recipe_path",
    "recipe_names",
    "make_ground_truth",
    "make_observations",
    "run_experiment",
    "rerun",
    "emit_plotdata",
]

METHODS = ("phi-gpr", "dd-gpr", "arima")
WINDOWS = ("estimation", "forecast", "forecast-2s")
FORECAST_HEAD = 2.0
_TOL = 1e-9
_DATA = Path(__file__).resolve().parent / "data"


class ConfigError(ContractError):
    """The experiment configuration is invalid."""


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _derived_seed(master, *key) -> int:
    # two-element spawn keys never collide with the one-element member keys
    return int(np.random.SeedSequence(master, spawn_key=(0x5EED,) + key).generate_state(1, np.uint64)[0])


def _grid_times(step, start, stop):
    """Multiples k*step with start <= k*step <= stop."""
    k0 = int(np.ceil(start / step - _TOL))
    k1 = int(np.floor(stop / step + _TOL))
    return np.arange(k0, k1 + 1) * step


@dataclass(frozen=True)
class ObservationPlan:
    kinds: tuple
    cadence: float
    window_end: float
    noise_pct: float = 0.0
    pooled_noise: bool = False

    def __post_init__(self):
        if not self.kinds or any(k not in ("theta", "omega") for k in self.kinds):
            raise ConfigError("observed kinds must be a non-empty subset of theta, omega")
        if not self.cadence > 0 or not self.window_end > 0:
            raise ConfigError("cadence and window end must be positive")
        if self.noise_pct < 0:
            raise ConfigError("noise percentage must be non-negative")

    def channels(self, n_gen):
        return [StateChannel(kind, k) for kind in self.kinds for k in range(1, n_gen + 1)]

    def times(self):
        return _grid_times(self.cadence, 0.0, self.window_end)


def _split(text):
    return tuple(v.strip() for v in str(text).replace(";", ",").split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    grid: str = "three_gen.cfg"
    step: float = 0.0025
    t_end: float = 12.5
    n_mc: int = 2000
    seed: int = 0
    record_interval: float = 0.025
    init_theta: tuple = (0.0431, 0.4584, 0.2372)
    observed: tuple = ("theta",)
    cadences: tuple = (0.05,)
    window_end: float = 8.3375
    noise_levels: tuple = (0.0,)
    pooled_noise: bool = False
    targets: tuple = ("theta_2-theta_1",)
    forecast_end: float = 12.5
    target_step: float = 0.025
    methods: tuple = ("phi-gpr",)
    replicates: int = 1
    arima_p_max: int = 20
    arima_q_max: int = 3
    ddgpr_starts: int = 8
    output: str = "runs/experiment"
    base_dir: str = "."

    def __post_init__(self):
        if not 0 < self.window_end < self.forecast_end <= self.t_end + _TOL:
            raise ConfigError("need 0 < window_end < forecast_end <= t_end")
        if self.n_mc < 3:
            raise ConfigError("n_mc must be at least 3")
        if self.replicates < 1 or self.replicates > self.n_mc:
            raise ConfigError("replicates must lie in [1, n_mc]")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        try:
            stride_for(self.record_interval, self.step)
            for c in self.cadences:
                stride_for(c, self.step)
                stride_for(c, self.record_interval)
            stride_for(self.target_step, self.record_interval)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None
        if any(n < 0 for n in self.noise_levels):
            raise ConfigError("noise levels must be non-negative")
        chans = [parse_channel(c) for c in self.targets]
        if "dd-gpr" in self.methods or "arima" in self.methods:
            wind = [c.label for c in chans if c.base_kind == "wind_fluct"]
            if wind:
                raise ConfigError(f"data-driven baselines cannot target unobserved wind channels: {wind}")
            for c in chans:
                if c.base_kind not in self.observed:
                    raise ConfigError(f"baseline target {c.label} is built from unobserved channels")
        if self.ddgpr_starts < dd_gpr.MIN_STARTS:
            raise ConfigError(f"ddgpr_starts must be at least {dd_gpr.MIN_STARTS}")
        if self.methods and not self.cadences:
            raise ConfigError("at least one cadence is required")

    @property
    def target_channels(self):
        return [parse_channel(c) for c in self.targets]

    def grid_path(self) -> Path:
        p = Path(self.grid)
        if p.is_absolute() and p.exists():
            return p
        for base in (Path(self.base_dir), _DATA):
            if (base / p).exists():
                return base / p
        if p.name == "three_gen.cfg":
            return three_gen_path()
        raise ConfigError(f"grid file {self.grid} not found")

    def output_dir(self) -> Path:
        return Path(self.output)

    def plans(self):
        return [[ObservationPlan(self.observed, c, self.window_end, n, self.pooled_noise)
                 for n in self.noise_levels] for c in self.cadences]

    def sim_config(self) -> SimConfig:
        return SimConfig(step=self.step, t_end=self.t_end, seed=self.seed,
                         init_theta=tuple(self.init_theta),
                         init_omega=(0.0,) * len(self.init_theta))

    def target_times(self):
        return _grid_times(self.target_step, self.target_step, self.forecast_end)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v, tuple) else v)
                for f, v in ((f, getattr(self, f.name)) for f in fields(self))}

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def write(self, path) -> Path:
        cfg = configparser.ConfigParser()
        d = self.to_dict()
        cfg["experiment"] = {k: _fmt(d[k]) for k in
                             ("name", "grid", "methods", "replicates", "output")}
        cfg["simulation"] = {k: _fmt(d[k]) for k in
                             ("step", "t_end", "n_mc", "seed", "record_interval", "init_theta")}
        cfg["observations"] = {"kinds": _fmt(d["observed"]), "cadences": _fmt(d["cadences"]),
                               "window_end": _fmt(d["window_end"]),
                               "noise_levels": _fmt(d["noise_levels"]),
                               "pooled_noise": _fmt(d["pooled_noise"])}
        cfg["targets"] = {"channels": _fmt(d["targets"]), "forecast_end": _fmt(d["forecast_end"]),
                          "grid_step": _fmt(d["target_step"])}
        cfg["baselines"] = {k: _fmt(d[k]) for k in ("arima_p_max", "arima_q_max", "ddgpr_starts")}
        path = Path(path)
        with path.open("w") as fh:
            cfg.write(fh)
        return path


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI experiment file; keyword overrides win over file values."""
    path = Path(path)
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        if not cfg.read(path):
            raise ConfigError(f"cannot read config {path}")
        kw = {"base_dir": str(path.resolve().parent)}
        if cfg.has_section("experiment"):
            s = cfg["experiment"]
            kw.update(name=s.get("name", path.stem), grid=s.get("grid", "three_gen.cfg"),
                      methods=_split(s.get("methods", "phi-gpr")),
                      replicates=s.getint("replicates", 1),
                      output=s.get("output", f"runs/{path.stem}"))
        if cfg.has_section("simulation"):
            s = cfg["simulation"]
            kw.update(step=s.getfloat("step", 0.0025), t_end=s.getfloat("t_end", 12.5),
                      n_mc=s.getint("n_mc", 2000), seed=s.getint("seed", 0),
                      record_interval=s.getfloat("record_interval", 0.025))
            if "init_theta" in s:
                kw["init_theta"] = tuple(float(v) for v in _split(s["init_theta"]))
        if cfg.has_section("observations"):
            s = cfg["observations"]
            kw.update(observed=_split(s.get("kinds", "theta")),
                      cadences=tuple(float(v) for v in _split(s.get("cadences", "0.05"))),
                      window_end=s.getfloat("window_end", 8.3375),
                      noise_levels=tuple(float(v) for v in _split(s.get("noise_levels", "0"))),
                      pooled_noise=s.getboolean("pooled_noise", False))
        if cfg.has_section("targets"):
            s = cfg["targets"]
            kw.update(targets=_split(s.get("channels", "theta_2-theta_1")),
                      forecast_end=s.getfloat("forecast_end", 12.5),
                      target_step=s.getfloat("grid_step", 0.025))
        if cfg.has_section("baselines"):
            s = cfg["baselines"]
            kw.update(arima_p_max=s.getint("arima_p_max", 20), arima_q_max=s.getint("arima_q_max", 3),
                      ddgpr_starts=s.getint("ddgpr_starts", 8))
    except (configparser.Error, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    kw.update({k: v for k, v in overrides.items() if v is not None})
    # relative output directories are taken from the working directory
    kw["output"] = str(Path(kw.get("output", f"runs/{path.stem}")).resolve())
    return ExperimentConfig(**kw)


def recipe_names():
    return sorted(p.stem.replace("_", "-") for p in (_DATA / "recipes").glob("*.cfg"))


def recipe_path(name) -> Path:
    p = _DATA / "recipes" / f"{name.replace('-', '_')}.cfg"
    if not p.exists():
        raise ConfigError(f"unknown recipe {name!r}; available: {', '.join(recipe_names())}")
    return p


@dataclass
class RunRecord:
    config: dict
    seeds: dict = field(default_factory=dict)
    truth_members: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    files: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    status: str = "running"
    failure: dict | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["metrics"] = [asdict(m) for m in self.metrics]
        return json.dumps(d, indent=2, default=_json_default)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        d = json.loads(Path(path).read_text())
        d["metrics"] = [MetricRow(**m) for m in d["metrics"]]
        return cls(**d)

    def experiment_config(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def make_ground_truth(ensemble: Ensemble, selector_seed: int, replicate: int = 0):
    """Pick one member uniformly as the truth; the rest form the prior ensemble.

    Replicate r takes the r-th entry of one seeded permutation, so replicates
    never reuse a member.
    """
    m = ensemble.n_members
    if m < 3:
        raise ContractError("ground-truth selection needs at least 3 members")
    if not 0 <= replicate < m:
        raise ContractError("replicate index out of range")
    idx = int(np.random.default_rng(selector_seed).permutation(m)[replicate])
    rest = np.delete(np.arange(m), idx)
    return ensemble.member(idx), ensemble.select(rest), idx


@dataclass
class Observations:
    channels: list
    times: np.ndarray
    data: ObservationSet
    clean: np.ndarray

    def series(self, ch: StateChannel) -> np.ndarray:
        """Observed values of a raw channel or the difference of two raw ones."""
        n = len(self.times)
        if ch in self.channels:
            i = self.channels.index(ch)
            return self.data.values[i * n:(i + 1) * n]
        if ch.is_relative:
            a, b = ch.raw_parts()
            return self.series(a) - self.series(b)
        raise ContractError(f"{ch} is not observed")


def make_observations(truth: Trajectory, plan: ObservationPlan, noise_seed: int = 0,
                      truth_member: int | None = None) -> Observations:
    """Subsample the truth at the plan cadence over [0, window_end] and add noise.

    The noise std of a channel is noise_pct/100 times the temporal std of that
    channel's truth over the observation window. The same std (or with
    ``pooled_noise`` the root-mean-square over channels) is passed on as the
    observation noise level.
    """
    times = plan.times()
    try:
        idx = time_indices(truth.times, times)
    except ContractError:
        raise ContractError(f"cadence {plan.cadence} is not on the truth grid") from None
    channels = plan.channels(truth.n_gen)
    clean = np.stack([channel_values(truth, ch)[idx] for ch in channels])
    stds = plan.noise_pct / 100.0 * clean.std(axis=1)
    rng = np.random.default_rng(noise_seed)
    noisy = clean + stds[:, None] * rng.standard_normal(clean.shape)
    sigma_n = np.full_like(stds, np.sqrt(np.mean(stds ** 2))) if plan.pooled_noise else stds
    data = ObservationSet(noisy.ravel(), noise_std=sigma_n, truth_member=truth_member,
                          noise_seed=noise_seed)
    return Observations(channels, times, data, clean.ravel())


@dataclass
class MethodResult:
    method: str
    channel: StateChannel
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    truth: np.ndarray
    info: dict = field(default_factory=dict)


def _truth_at(truth, ch, times):
    return channel_values(truth, ch)[time_indices(truth.times, times)]


def _run_phi(table: MomentTable, obs: Observations, targets, target_times, truth):
    prior = assemble_joint(table, obs.channels, obs.times, obs.data.noise_std, targets, target_times)
    post = condition(prior, obs.data)
    excess = float(np.max(post.var - np.diag(prior.k_tt), initial=-np.inf))
    out = []
    for ch in targets:
        t, mu, sd = post.select(ch)
        out.append(MethodResult("phi-gpr", ch, t, mu, sd, _truth_at(truth, ch, t)))
    return out, excess


def _run_dd(obs: Observations, targets, target_times, truth, n_starts, seed, threads):
    out = []
    for ch in targets:
        if ch.base_kind == "wind_fluct":
            raise ContractError(f"data-driven GPR cannot target the unobserved channel {ch.label}")
        spec = dd_gpr.fit(obs.times, obs.series(ch), n_starts=n_starts, seed=seed, threads=threads)
        post = dd_gpr.forecast(spec, obs.times, obs.series(ch), target_times, label=ch)
        out.append(MethodResult("dd-gpr", ch, target_times, post.mean, post.std,
                                _truth_at(truth, ch, target_times),
                                {"gamma": list(spec.gamma), "const_mean": spec.const_mean}))
    return out


def _run_arima(obs: Observations, targets, plan, forecast_end, truth, p_max, q_max, threads):
    out = []
    t_last = obs.times[-1]
    horizon = int(np.floor((forecast_end - t_last) / plan.cadence + _TOL))
    times = t_last + plan.cadence * np.arange(1, horizon + 1)
    for ch in targets:
        if ch.base_kind == "wind_fluct":
            raise ContractError(f"ARIMA cannot target the unobserved channel {ch.label}")
        model = arima.select_order(obs.series(ch), p_max, q_max, threads=threads)
        mean, var = arima.forecast(model, obs.series(ch), horizon)
        out.append(MethodResult("arima", ch, times, mean, np.sqrt(var), _truth_at(truth, ch, times),
                                {"order": [model.p, model.d, model.q], "aic": arima.aic(model)}))
    return out


def _window_masks(times, t0):
    return {
        "estimation": times <= t0 + _TOL,
        "forecast": times > t0 + _TOL,
        "forecast-2s": (times > t0 + _TOL) & (times <= t0 + FORECAST_HEAD + _TOL),
    }


def _score(res: MethodResult, t0, tags):
    rows = []
    series = EvalSeries(res.times, res.mean, res.std, res.truth)
    for window, mask in _window_masks(res.times, t0).items():
        if np.any(mask):
            rows.append(evaluate(res.method, res.channel.label, res.channel.index, window,
                                 series.window(mask), **tags))
    return rows


def _case_tag(cadence, noise, replicate):
    return f"d{cadence:g}_n{noise:g}_r{replicate}"


def _write_observations(path, obs: Observations, targets):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "t", "value", "clean"])
        n = len(obs.times)
        for i, ch in enumerate(obs.channels):
            for j, t in enumerate(obs.times):
                w.writerow([ch.label, repr(float(t)), repr(float(obs.data.values[i * n + j])),
                            repr(float(obs.clean[i * n + j]))])
        for ch in targets:
            if ch.is_relative and all(p in obs.channels for p in ch.raw_parts()):
                a, b = (obs.channels.index(p) for p in ch.raw_parts())
                vals = obs.series(ch)
                clean = obs.clean[a * n:(a + 1) * n] - obs.clean[b * n:(b + 1) * n]
                for t, v, c in zip(obs.times, vals, clean):
                    w.writerow([ch.label, repr(float(t)), repr(float(v)), repr(float(c))])


def _finish(record: RunRecord, out: Path):
    record.save(out / "record.json")
    if record.metrics:
        write_metrics_csv(record.metrics, out / "metrics.csv")


def run_experiment(config: ExperimentConfig, threads: int = 1, ensemble: Ensemble | None = None,
                   write_posteriors: bool = True) -> RunRecord:
    """Execute a configured experiment and persist its outputs.

    ``ensemble`` may be passed to reuse a previously generated ensemble; it
    must come from the same simulation settings.
    """
    out = config.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    record = RunRecord(config=config.to_dict())
    record.seeds = {"master": config.seed}
    config.write(out / "config.cfg")
    record.files.append("config.cfg")
    try:
        _execute(config, record, out, threads, ensemble, write_posteriors)
    except StageError as exc:
        record.status = "failed"
        record.failure = {"stage": exc.stage, "error": f"{type(exc.cause).__name__}: {exc.cause}"}
        _finish(record, out)
        (out / "FAILED").write_text(f"stage: {exc.stage}\n{exc.cause}\n")
        raise
    record.status = "ok"
    record.files.append("record.json")
    if record.metrics:
        record.files.append("metrics.csv")
    _finish(record, out)
    return record


def _execute(config, record, out, threads, ensemble, write_posteriors):
    with _stage("config"):
        params: GridParameters = load_grid(config.grid_path())
        if len(config.init_theta) != params.n_gen:
            raise ConfigError("init_theta length does not match the grid")
        targets = config.target_channels
        for ch in targets:
            if max(ch.index, ch.reference or 0) > params.n_gen:
                raise ConfigError(f"target {ch.label} exceeds n_gen = {params.n_gen}")

    with _stage("ensemble"):
        if ensemble is None:
            ensemble = generate_ensemble(config.sim_config(), params, config.n_mc,
                                         record_interval=config.record_interval, threads=threads)
        elif ensemble.n_members != config.n_mc:
            raise ContractError("supplied ensemble does not match n_mc")

    if not config.methods:
        with _stage("moments"):
            table = ensemble_moments(ensemble, targets)
            table.write_csv(out / "moments.csv")
            record.files.append("moments.csv")
        return

    selector = _derived_seed(config.seed, 1)
    record.seeds["selector"] = selector
    record.seeds["noise"] = {}
    record.seeds["dd-gpr"] = {}
    target_times = config.target_times()
    plans = config.plans()
    excess = -np.inf
    orders = {}
    moment_channels = list(dict.fromkeys(plans[0][0].channels(params.n_gen) + targets))

    for r in range(config.replicates):
        with _stage("truth"):
            truth, reduced, idx = make_ground_truth(ensemble, selector, r)
            record.truth_members.append(idx)
        table = None
        if "phi-gpr" in config.methods:
            with _stage("moments"):
                table = ensemble_moments(reduced, moment_channels)
        del reduced
        for ci, row in enumerate(plans):
            for ni, plan in enumerate(row):
                tag = _case_tag(plan.cadence, plan.noise_pct, r)
                tags = {"replicate": r, "cadence": plan.cadence, "noise_pct": plan.noise_pct}
                with _stage("observations"):
                    nseed = _derived_seed(config.seed, 2, r, ci, ni)
                    record.seeds["noise"][tag] = nseed
                    obs = make_observations(truth, plan, nseed, idx)
                    if write_posteriors:
                        _write_observations(out / f"observations_{tag}.csv", obs, targets)
                        record.files.append(f"observations_{tag}.csv")
                results = []
                if "phi-gpr" in config.methods:
                    with _stage("phi-gpr"):
                        res, ex = _run_phi(table, obs, targets, target_times, truth)
                        excess = max(excess, ex)
                        results += res
                if "dd-gpr" in config.methods:
                    with _stage("dd-gpr"):
                        dseed = _derived_seed(config.seed, 3, r, ci, ni)
                        record.seeds["dd-gpr"][tag] = dseed
                        results += _run_dd(obs, targets, target_times, truth,
                                           config.ddgpr_starts, dseed, threads)
                if "arima" in config.methods:
                    with _stage("arima"):
                        res = _run_arima(obs, targets, plan, config.forecast_end, truth,
                                         config.arima_p_max, config.arima_q_max, threads)
                        for x in res:
                            orders[f"{x.channel.label}_{tag}"] = x.info["order"]
                        results += res
                with _stage("metrics"):
                    for res in results:
                        record.metrics.extend(_score(res, config.window_end, tags))
                if write_posteriors:
                    with _stage("output"):
                        for method in config.methods:
                            name = f"posterior_{method}_{tag}.csv"
                            write_posterior_csv(out / name, (
                                (res.channel.label, t, mu, sd, tr)
                                for res in results if res.method == method
                                for t, mu, sd, tr in zip(res.times, res.mean, res.std, res.truth)))
                            record.files.append(name)
    if np.isfinite(excess):
        record.checks["max_posterior_minus_prior_var"] = float(excess)
    if orders:
        record.checks["arima_orders"] = orders


def rerun(record_path, output=None, threads: int = 1) -> RunRecord:
    """Repeat the run described by a saved record, optionally into another directory."""
    record = RunRecord.load(record_path)
    cfg = record.experiment_config()
    if output is not None:
        cfg = cfg.replace(output=str(Path(output).resolve()))
    return run_experiment(cfg, threads=threads)


def emit_plotdata(record: RunRecord, out_dir=None):
    """Split posterior and observation files into one CSV pair per figure.

    ``fig_<method>_<channel>_<case>.csv`` holds t, truth, mean, lower, upper
    (2 std band); ``fig_..._obs.csv`` holds the observed values of the channel.
    """
    cfg = record.experiment_config()
    src = cfg.output_dir()
    dest = Path(out_dir) if out_dir is not None else src / "plotdata"
    dest.mkdir(parents=True, exist_ok=True)
    written = []
    for name in record.files:
        if not name.startswith("posterior_"):
            continue
        method, tag = name[len("posterior_"):-len(".csv")].split("_", 1)
        by_channel = {}
        with (src / name).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                by_channel.setdefault(rec["channel"], []).append(rec)
        obs_rows = {}
        obs_file = src / f"observations_{tag}.csv"
        if obs_file.exists():
            with obs_file.open(newline="") as fh:
                for rec in csv.DictReader(fh):
                    obs_rows.setdefault(rec["channel"], []).append(rec)
        for label, rows in by_channel.items():
            rows.sort(key=lambda x: float(x["t"]))
            fig = dest / f"fig_{method}_{label}_{tag}.csv"
            with fig.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "truth", "mean", "lower", "upper"])
                for x in rows:
                    w.writerow([x["t"], x["truth"], x["mean"], x["lower2"], x["upper2"]])
            written.append(fig)
            ofig = dest / f"fig_{method}_{label}_{tag}_obs.csv"
            with ofig.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "observed"])
                for x in obs_rows.get(label, []):
                    w.writerow([x["t"], x["value"]])
            written.append(ofig)
    return written
