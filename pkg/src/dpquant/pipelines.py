"""Experiment engines: public-private fitting, sequential release, synthetic data."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from dpquant.core import (
    ConfigError,
    DataError,
    QuantileList,
    SortedDataset,
    floor_qn,
    gaps,
    make_rng,
    optimal_interval,
    sub_seed,
)
from dpquant.learning import Cocob, FtrlBox, TreeAggregator, noise_scale, ogd_step, ogd_step_sizes
from dpquant.losses import featurized_loss, featurized_loss_intervals, featurized_proxy_loss
from dpquant.mechanisms import ReleasePlan, release_multi
from dpquant.priors import Cauchy, HalfCauchy, Laplace, Prior, Uniform, mix, prior_from_dict

log = logging.getLogger(__name__)

STATIC_METHODS = ("uniform", "cauchy", "halfcauchy")
PUBPRI_METHODS = ("uniform", "cauchy", "halfcauchy", "public_quantiles", "public_cauchy", "pubfit", "pubfit_robust")
SEQUENTIAL_METHODS = ("uniform", "cauchy", "halfcauchy", "pubprev", "pubprox", "dpftrl", "nonprivate")


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    task: str = "oneshot"  # oneshot | pubpri | sequential
    m: int = 9
    qs: list | None = None
    epsilons: list = field(default_factory=lambda: [1.0])
    trials: int = 1
    seed: int = 0
    methods: list = field(default_factory=lambda: ["uniform"])
    # priors
    lam: float = 0.1
    prior_loc: float = 0.0
    prior_scale: float = 1.0
    uniform_range: list = field(default_factory=lambda: [-10.0, 10.0])
    uniform_ranges: list | None = None  # optional [a, b] per quantile, overriding uniform_range
    nonnegative: bool = False
    robust_prior: dict | None = None
    # parameter boxes for Laplace priors
    B: float = 10.0
    sigma_min: float = 0.01
    sigma_max: float = 10.0
    granularity: float = 0.01
    # release
    arity: int = 2
    adaptation: str = "conditional"
    schedule: str = "uniform"
    power: float | None = None
    literal_budgets: bool = False
    # public-private
    optimizer: str = "cocob"
    pubfit_steps: int | None = None
    public_size: int = 10000
    private_size: int = 100
    public_path: str | None = None
    # data
    data_path: str | None = None
    value_column: str = "value"
    feature_columns: list = field(default_factory=list)
    group_column: str | None = None
    feature_mode: str = "mean"
    tie_jitter: float = 0.0
    # sequential
    days: int = 200
    noise_scale: float = 0.0
    feature_dim: int = 10
    intercept: bool = True
    dpftrl_fraction: float = 0.5
    delta: float = 1e-6
    beta: float = 0.05
    dpftrl_eta_v: float | None = None
    dpftrl_eta_phi: float | None = None
    overlapping_users: bool = False
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.task not in ("oneshot", "pubpri", "sequential"):
            raise ConfigError(f"task: unknown task {self.task!r}")
        if self.trials < 1:
            raise ConfigError("trials: must be at least 1")
        if self.m < 1:
            raise ConfigError("m: must be at least 1")
        if not self.epsilons or any(not e > 0 for e in self.epsilons):
            raise ConfigError("epsilons: all values must be positive")
        allowed = {"oneshot": STATIC_METHODS, "pubpri": PUBPRI_METHODS, "sequential": SEQUENTIAL_METHODS}[self.task]
        for meth in self.methods:
            if meth not in allowed:
                raise ConfigError(f"methods: {meth!r} is not one of {allowed}")
        if not 0 <= self.lam <= 1:
            raise ConfigError("lam: must lie in [0, 1]")
        if not 0 < self.sigma_min < self.sigma_max:
            raise ConfigError("sigma_min/sigma_max: need 0 < sigma_min < sigma_max")
        if self.optimizer not in ("cocob", "ogd"):
            raise ConfigError("optimizer: must be cocob or ogd")
        if self.feature_mode not in ("mean", "first"):
            raise ConfigError("feature_mode: must be mean or first")
        if not 0 < self.dpftrl_fraction < 1:
            raise ConfigError("dpftrl_fraction: must lie in (0, 1)")
        if self.uniform_range[0] >= self.uniform_range[1]:
            raise ConfigError("uniform_range: need a < b")
        if self.uniform_ranges is not None:
            if len(self.uniform_ranges) != len(self.quantiles()):
                raise ConfigError("uniform_ranges: need one [a, b] pair per quantile")
            if any(len(r) != 2 or not r[0] < r[1] for r in self.uniform_ranges):
                raise ConfigError("uniform_ranges: every pair needs a < b")
        self.quantiles()

    def quantiles(self) -> QuantileList:
        try:
            return QuantileList(self.qs) if self.qs else QuantileList.uniform(self.m)
        except ConfigError as e:
            raise ConfigError(f"qs: {e}") from None

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["qs"] = list(self.quantiles().qs)
        return d


@dataclass
class TrialRecord:
    method: str
    epsilon: float
    trial: int
    step: int
    gaps: list
    max_gap: int
    wall_time: float = 0.0
    outputs: list | None = None

    def to_json(self) -> str:
        # Wall time is excluded so that data files stay deterministic.
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        if d["outputs"] is None:
            d.pop("outputs")
        return json.dumps(d, sort_keys=True)


# ---------------------------------------------------------------- priors from config


def robust_prior(cfg: ExperimentConfig) -> Prior:
    if cfg.robust_prior:
        return prior_from_dict(cfg.robust_prior)
    if cfg.nonnegative:
        return HalfCauchy(cfg.prior_scale)
    return Cauchy(cfg.prior_loc, cfg.prior_scale)


def static_prior(name: str, cfg: ExperimentConfig, i: int | None = None) -> Prior:
    """Static prior ``name`` for quantile index ``i`` (only Uniform ranges vary by index)."""
    if name == "uniform":
        if cfg.uniform_ranges is not None and i is not None:
            return Uniform(*cfg.uniform_ranges[i])
        return Uniform(*cfg.uniform_range)
    if name == "cauchy":
        return Cauchy(cfg.prior_loc, cfg.prior_scale)
    if name == "halfcauchy":
        return HalfCauchy(cfg.prior_scale)
    raise ConfigError(f"{name!r} is not a static prior")


def make_plan(cfg: ExperimentConfig, eps: float, priors: Sequence[Prior]) -> ReleasePlan:
    return ReleasePlan(
        cfg.quantiles(),
        eps,
        priors,
        arity=cfg.arity,
        adaptation=cfg.adaptation,
        schedule=cfg.schedule,
        power=cfg.power,
        literal_budgets=cfg.literal_budgets,
    )


class LaplaceParams:
    """Per-quantile linear locations and scales in (theta, phi) coordinates.

    theta_i = <V_i, f>, clipped to +-B/sigma_min; phi_i clipped to the
    [1/sigma_max, 1/sigma_min] box.
    """

    def __init__(self, cfg: ExperimentConfig, m: int, d: int):
        self.cfg, self.m, self.d = cfg, m, d
        self.phi_lo, self.phi_hi = 1.0 / cfg.sigma_max, 1.0 / cfg.sigma_min
        self.theta_hi = cfg.B / cfg.sigma_min

    def initial(self, loc: float, scale: float, intercept_col: int | None):
        phi0 = float(np.clip(1.0 / scale, self.phi_lo, self.phi_hi))
        V = np.zeros((self.m, self.d))
        if intercept_col is not None:
            V[:, intercept_col] = loc * phi0
        return V, np.full(self.m, phi0)

    def clip(self, V, phi):
        return np.clip(V, -self.theta_hi, self.theta_hi), np.clip(phi, self.phi_lo, self.phi_hi)

    def priors(self, V, phi, f) -> list[Laplace]:
        V, phi = self.clip(V, phi)
        theta = np.clip(V @ f, -self.theta_hi, self.theta_hi)
        return [Laplace(float(t / p), float(1.0 / p)) for t, p in zip(theta, phi)]


# ---------------------------------------------------------------- public-private


def public_quantiles(public: SortedDataset, qs: Sequence[float]) -> list[float]:
    """Order statistic x'[floor(qN) + 1] (1-based) for each q."""
    N = public.n
    return [float(public.values[min(floor_qn(q, N), N - 1)]) for q in qs]


def public_baselines(public: SortedDataset, qs: Sequence[float], cfg: ExperimentConfig) -> dict[str, list]:
    if public.n < 1:
        raise DataError("public data are empty")
    pq = public_quantiles(public, qs)
    return {"public_quantiles": pq, "public_cauchy": [Cauchy(v, cfg.prior_scale) for v in pq]}


def pubfit(
    public: SortedDataset,
    n: int,
    qs: Sequence[float],
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    steps: int | None = None,
) -> list[Laplace]:
    """Fit one Laplace prior per quantile on size-n blocks of the public data.

    The shuffled public data are split into T = N // n blocks. COCOB (default)
    keeps cycling through freshly shuffled blocks for ``steps`` updates and
    returns its final iterate; OGD makes one pass with the theory step sizes
    and returns the averaged iterate.
    """
    N = public.n
    if N < n:
        raise DataError(f"public data ({N}) smaller than block size ({n})")
    m, T = len(qs), N // n
    par = LaplaceParams(cfg, m, 1)
    f = np.ones(1)

    def blocks():
        while True:
            perm = rng.permutation(public.values)
            for t in range(T):
                yield SortedDataset(np.sort(perm[t * n : (t + 1) * n]), _trusted=True)

    if cfg.optimizer == "ogd":
        eta_t, eta_p = ogd_step_sizes(cfg.B, cfg.sigma_min, cfg.sigma_max, m, T)
        theta = np.zeros(m)
        phi = np.full(m, 0.5 * (par.phi_lo + par.phi_hi))
        th_sum, ph_sum = np.zeros(m), np.zeros(m)
        gen = blocks()
        for _ in range(T):
            th_sum += theta
            ph_sum += phi
            _, gV, gphi = featurized_loss(next(gen), qs, f, theta[:, None], phi)
            theta = ogd_step(theta, gV[:, 0], eta_t, -par.theta_hi, par.theta_hi)
            phi = ogd_step(phi, gphi, eta_p, par.phi_lo, par.phi_hi)
        return par.priors(th_sum[:, None] / T, ph_sum / T, f)

    steps = steps or cfg.pubfit_steps or max(T, 200)
    V0, phi0 = par.initial(cfg.prior_loc, cfg.prior_scale, 0)
    opt = Cocob(np.concatenate([V0[:, 0], phi0]))
    gen = blocks()
    for _ in range(steps):
        V, phi = par.clip(opt.w[:m, None], opt.w[m:])
        _, gV, gphi = featurized_loss(next(gen), qs, f, V, phi)
        opt.step(np.concatenate([gV[:, 0], gphi]))
    return par.priors(opt.w[:m, None], opt.w[m:], f)


def _release_record(x, cfg, eps, priors, rng, method, trial, step=0, keep_outputs=False) -> TrialRecord:
    t0 = time.perf_counter()
    res = release_multi(x, make_plan(cfg, eps, priors), rng)
    outs = [float(o) for o in res.outputs] if keep_outputs else None
    return TrialRecord(method, eps, trial, step, list(res.gaps), max(res.gaps), time.perf_counter() - t0, outs)


def _pubpri_data(cfg: ExperimentConfig, rng) -> tuple[SortedDataset, SortedDataset]:
    if cfg.public_path and cfg.data_path:
        public = ingest_csv(cfg.public_path, cfg.value_column, tie_jitter=cfg.tie_jitter)[0][0]
        private = ingest_csv(cfg.data_path, cfg.value_column, tie_jitter=cfg.tie_jitter)[0][0]
        return public, private
    return (
        SortedDataset(rng.standard_normal(cfg.public_size)),
        SortedDataset(rng.standard_normal(cfg.private_size)),
    )


def run_pubpri_trial(cfg: ExperimentConfig, trial: int) -> list[TrialRecord]:
    """All methods and epsilons on one public/private draw."""
    qs = cfg.quantiles().qs
    data_rng = make_rng(sub_seed(cfg.seed, trial, 0))
    public, private = _pubpri_data(cfg, data_rng)
    fitted = None
    if {"pubfit", "pubfit_robust"} & set(cfg.methods):
        fitted = pubfit(public, private.n, qs, cfg, make_rng(sub_seed(cfg.seed, trial, 1)))
    base = public_baselines(public, qs, cfg)
    out = []
    for ei, eps in enumerate(cfg.epsilons):
        for mi, meth in enumerate(cfg.methods):
            rng = make_rng(sub_seed(cfg.seed, trial, 2, ei, mi))
            if meth == "public_quantiles":
                g = gaps(private, qs, base["public_quantiles"])
                out.append(TrialRecord(meth, eps, trial, 0, g, max(g)))
                continue
            if meth == "public_cauchy":
                priors = base["public_cauchy"]
            elif meth == "pubfit":
                priors = fitted
            elif meth == "pubfit_robust":
                rob = robust_prior(cfg)
                priors = [mix(p, rob, cfg.lam) for p in fitted]
            else:
                priors = [static_prior(meth, cfg, i) for i in range(len(qs))]
            out.append(_release_record(private, cfg, eps, priors, rng, meth, trial))
    return out


def run_oneshot_trial(cfg: ExperimentConfig, trial: int) -> list[TrialRecord]:
    qs = cfg.quantiles().qs
    if cfg.data_path:
        x = ingest_csv(cfg.data_path, cfg.value_column, tie_jitter=cfg.tie_jitter)[0][0]
    else:
        x = SortedDataset(make_rng(sub_seed(cfg.seed, 0, 0)).standard_normal(cfg.private_size))
    out = []
    for ei, eps in enumerate(cfg.epsilons):
        for mi, meth in enumerate(cfg.methods):
            rng = make_rng(sub_seed(cfg.seed, trial, 2, ei, mi))
            priors = [static_prior(meth, cfg, i) for i in range(len(qs))]
            out.append(_release_record(x, cfg, eps, priors, rng, meth, trial, keep_outputs=True))
    return out


# ---------------------------------------------------------------- sequential


def dpftrl_step_sizes(cfg: ExperimentConfig, m: int, d: int, F: float, eps_prime: float, T: int) -> tuple[float, float]:
    """Theory step sizes for the location (V) and scale (phi) learners."""
    L = math.ceil(math.log2(T + 1))
    ll = math.log(T / cfg.beta) * math.log(1.0 / cfg.delta)
    e1 = e2 = eps_prime / 2.0
    eta_v = cfg.B / (F * cfg.sigma_min) * math.sqrt(2 * m * e1 / (L * T * (1 + math.sqrt(2 * m * d * ll))))
    eta_phi = (1.0 / cfg.sigma_min) / (cfg.B + cfg.sigma_max) * math.sqrt(
        m * e2 / (2 * L * T * (1 + math.sqrt(2 * m * ll)))
    )
    return eta_v, eta_phi


def run_sequential(
    datasets: Sequence[SortedDataset],
    features: Sequence[np.ndarray] | None,
    method: str,
    cfg: ExperimentConfig,
    rng: np.random.Generator,
    eps: float | None = None,
    trial: int = 0,
) -> list[TrialRecord]:
    """Release quantiles of each dataset in turn, updating priors between steps."""
    if method not in SEQUENTIAL_METHODS:
        raise ConfigError(f"unknown sequential method {method!r}")
    eps = cfg.epsilons[0] if eps is None else eps
    qs = cfg.quantiles().qs
    m, T = len(qs), len(datasets)
    if features is None:
        features = [np.zeros(0)] * T
    if len(features) != T:
        raise DataError(f"{T} datasets but {len(features)} feature vectors")
    feats = [np.concatenate([np.asarray(f, float), [1.0]]) if cfg.intercept else np.asarray(f, float) for f in features]
    d = feats[0].size
    if d == 0 and method in ("pubprox", "dpftrl", "nonprivate"):
        raise ConfigError("learned methods need features or intercept=true")
    step_eps = eps / T if cfg.overlapping_users else eps
    rob = robust_prior(cfg)
    par = LaplaceParams(cfg, m, d) if d else None
    icol = d - 1 if cfg.intercept else None

    release_eps = step_eps
    opt = ftrl_v = ftrl_phi = None
    if method in ("pubprox", "nonprivate"):
        V0, phi0 = par.initial(cfg.prior_loc, cfg.prior_scale, icol)
        opt = Cocob(np.concatenate([V0.ravel(), phi0]))
    elif method == "dpftrl":
        eps_prime = cfg.dpftrl_fraction * step_eps
        release_eps = step_eps - eps_prime
        V0, phi0 = par.initial(cfg.prior_loc, cfg.prior_scale, icol)
        F = max(float(np.max(np.abs(np.stack(feats)))), 1e-12)
        eta_v, eta_phi = dpftrl_step_sizes(cfg, m, d, F, eps_prime, T)
        eta_v = cfg.dpftrl_eta_v or eta_v
        eta_phi = cfg.dpftrl_eta_phi or eta_phi
        sig = noise_scale(eps_prime / 2.0, cfg.delta / 2.0, T)
        # Gradients are clipped to the analytic bounds (softmax weights sum to
        # one, so per-quantile bounds carry over); replacing one dataset moves
        # a clipped gradient by at most twice that.
        clip_v = F * math.sqrt(d)
        clip_phi = 4.0 * cfg.B + cfg.sigma_max
        ftrl_v = FtrlBox(
            V0.ravel(), -par.theta_hi, par.theta_hi, eta_v,
            TreeAggregator(T, m * d, sig, 2 * clip_v, rng, clip_norm=clip_v),
        )
        ftrl_phi = FtrlBox(
            phi0, par.phi_lo, par.phi_hi, eta_phi,
            TreeAggregator(T, m, sig, 2 * clip_phi, rng, clip_norm=clip_phi),
        )

    prev = None
    records = []
    for t, (x, f) in enumerate(zip(datasets, feats)):
        if method in ("uniform", "cauchy", "halfcauchy"):
            priors = [static_prior(method, cfg, i) for i in range(m)]
        elif method == "pubprev":
            centers = prev if prev is not None else [cfg.prior_loc] * m
            priors = [mix(Laplace(c, cfg.prior_scale), rob, cfg.lam) for c in centers]
        else:
            if method == "dpftrl":
                V, phi = ftrl_v.x.reshape(m, d), ftrl_phi.x
            else:
                V, phi = opt.w[: m * d].reshape(m, d), opt.w[m * d :]
            priors = [mix(p, rob, cfg.lam) for p in par.priors(V, phi, f)]
        t0 = time.perf_counter()
        res = release_multi(x, make_plan(cfg, release_eps, priors), rng)
        records.append(TrialRecord(method, eps, trial, t, list(res.gaps), max(res.gaps), time.perf_counter() - t0))
        prev = list(res.outputs)
        if method == "pubprox":
            Vc, pc = par.clip(V, phi)
            _, gV, gphi = featurized_proxy_loss(res.outputs, cfg.granularity, f, Vc, pc)
            opt.step(np.concatenate([gV.ravel(), gphi]))
        elif method == "nonprivate":
            Vc, pc = par.clip(V, phi)
            _, gV, gphi = featurized_loss(x, qs, f, Vc, pc)
            opt.step(np.concatenate([gV.ravel(), gphi]))
        elif method == "dpftrl":
            _, gV, gphi = featurized_loss(x, qs, f, V, phi)
            ftrl_v.step(gV.ravel())
            ftrl_phi.step(gphi)
    return records


def generate_synthetic(T: int, m: int, noise: float, rng: np.random.Generator, dim: int = 10):
    """Stationary task whose quantiles are linear in Gaussian features.

    Returns (datasets, features, truth) with truth[t][i] = <a, f_t> + b[i+1].
    """
    if T < 1:
        raise ConfigError("need at least one day")
    a = rng.standard_normal(dim)
    b = np.sort(rng.standard_normal(m + 2))
    base = 100 // (m + 1)
    datasets, features, truth = [], [], []
    for _ in range(T):
        f = rng.standard_normal(dim)
        shift = float(a @ f)
        counts = base + (rng.poisson(noise, m + 1) if noise > 0 else np.zeros(m + 1, dtype=int))
        vals = np.concatenate(
            [rng.uniform(shift + b[i], shift + b[i + 1], counts[i]) for i in range(m + 1)]
        )
        datasets.append(SortedDataset(vals))
        features.append(f)
        truth.append(shift + b[1 : m + 1])
    return datasets, features, truth


def run_sequential_trial(cfg: ExperimentConfig, trial: int) -> list[TrialRecord]:
    if cfg.data_path:
        datasets, features, _ = ingest_csv(
            cfg.data_path, cfg.value_column, cfg.feature_columns, cfg.group_column, cfg.feature_mode, cfg.tie_jitter
        )
    else:
        datasets, features, _ = generate_synthetic(
            cfg.days, cfg.m, cfg.noise_scale, make_rng(sub_seed(cfg.seed, trial, 0)), cfg.feature_dim
        )
    out = []
    for ei, eps in enumerate(cfg.epsilons):
        for mi, meth in enumerate(cfg.methods):
            rng = make_rng(sub_seed(cfg.seed, trial, 2, ei, mi))
            out.extend(run_sequential(datasets, features, meth, cfg, rng, eps, trial))
    return out


_TRIAL_RUNNERS = {"oneshot": run_oneshot_trial, "pubpri": run_pubpri_trial, "sequential": run_sequential_trial}


def _run_trial(args):
    cfg, trial = args
    return _TRIAL_RUNNERS[cfg.task](cfg, trial)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[TrialRecord]:
    """Run every trial; results are ordered by trial regardless of worker count."""
    workers = max(1, workers or cfg.workers)
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if workers == 1 or cfg.trials == 1:
        chunks = [_run_trial(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trial, jobs))
    records = [r for c in chunks for r in c]
    log.info("ran %d trials, %d records, %.3fs release time", cfg.trials, len(records), sum(r.wall_time for r in records))
    return records


# ---------------------------------------------------------------- aggregation and ingestion


def nearest_rank(values: Sequence[float], p: float) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    k = max(1, math.ceil(p / 100.0 * v.size - 1e-9))
    return float(v[k - 1])


def aggregate(records: Sequence[TrialRecord]) -> list[dict[str, Any]]:
    """Mean, median and 5th/95th nearest-rank percentiles of max gap per (method, epsilon)."""
    if not records:
        raise ValueError("no records to aggregate")
    groups: dict[tuple, list] = {}
    for r in records:
        groups.setdefault((r.method, r.epsilon), []).append(r.max_gap)
    rows = []
    for (meth, eps), vals in groups.items():
        rows.append(
            {
                "method": meth,
                "epsilon": eps,
                "mean_max_gap": float(np.mean(vals)),
                "median_max_gap": float(np.median(vals)),
                "p5": nearest_rank(vals, 5),
                "p95": nearest_rank(vals, 95),
            }
        )
    return rows


SUMMARY_FIELDS = ("method", "epsilon", "mean_max_gap", "median_max_gap", "p5", "p95")


def ingest_csv(
    path: str,
    value_column: str,
    feature_columns: Sequence[str] = (),
    group_column: str | None = None,
    feature_mode: str = "mean",
    tie_jitter: float = 0.0,
):
    """Read one dataset per group (sorted by group key) from a CSV file.

    Returns (datasets, features or None, group keys).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [value_column, *feature_columns, *([group_column] if group_column else [])]:
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        values: dict[str, list] = {}
        feats: dict[str, list] = {}
        for row in reader:
            line = reader.line_num
            key = row[group_column] if group_column else ""
            try:
                v = float(row[value_column])
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {line}: non-numeric value {row[value_column]!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: line {line}: non-finite value")
            try:
                fv = [float(row[c]) for c in feature_columns]
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {line}: non-numeric feature") from None
            values.setdefault(key, []).append(v)
            feats.setdefault(key, []).append(fv)
    if not values:
        raise DataError(f"{path}: no data rows")
    keys = sorted(values)
    datasets = []
    for k in keys:
        try:
            datasets.append(SortedDataset(values[k], tie_jitter=tie_jitter))
        except DataError as e:
            raise DataError(f"{path}: group {k!r}: {e}") from None
    features = None
    if feature_columns:
        features = [
            np.mean(feats[k], axis=0) if feature_mode == "mean" else np.asarray(feats[k][0]) for k in keys
        ]
    return datasets, features, keys
