"""Generative models and a seeded Monte Carlo runner.

Every replication draws from its own counter-based stream keyed by
``(seed, replication index)``, so serial and parallel runs give identical
results. Quantile metrics are reported on the relative scale
``q_hat / q - 1``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import special, stats

from .distributed import aggregate, machine_summarize, MachineSummary
from .inference import REJECT_LEVELS
from .numerics import normal_quantile
from .pipeline import (
    combined_hill,
    pool_samples,
    resolve_ks,
    test_homogeneity,
    test_homoskedasticity,
)
from .tail import SortedSample, hill_estimate, weissman_quantile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MARGINALS = ("pareto", "frechet", "burr", "abs_student_t")
COPULAS = ("independence", "clayton", "gumbel", "gaussian", "student")

GAMMA_ESTIMATORS = (
    "hill_combined",
    "naive",
    "variance_optimal",
    "amse_optimal",
    "amse_optimal_pooled_so",
    "bias_reduced_variance_optimal",
    "bias_reduced_amse_optimal",
    "distributed_naive",
    "distributed_variance_optimal",
    "distributed_amse_optimal",
    "distributed_bias_reduced_variance_optimal",
    "distributed_bias_reduced_amse_optimal",
)
QUANTILE_ESTIMATORS = (
    "weissman_combined",
    "geometric_naive",
    "geometric_variance_optimal",
    "geometric_amse_optimal",
    "geometric_amse_optimal_pooled_so",
    "arithmetic_naive",
    "distributed_geometric_naive",
    "distributed_geometric_variance_optimal",
    "distributed_geometric_amse_optimal",
)
TESTS = ("homogeneity", "homoskedasticity")


@dataclass(frozen=True)
class ModelSpec:
    """Joint model for ``m`` samples observed in parallel.

    The first ``min(sizes)`` rows of all samples are drawn jointly from
    the copula; longer samples continue with further joint rows, keeping
    only their own column.

    Attributes
    ----------
    marginal : str
        One of ``pareto``, ``frechet``, ``burr`` or ``abs_student_t``.
    gamma, rho : float
        Tail index and second-order parameter (``rho`` used by Burr only).
    df : float
        Degrees of freedom of the absolute Student-t marginal; its tail
        index is ``1/df``.
    copula : str
        ``independence``, ``clayton`` (``theta > 0``), ``gumbel``
        (``theta >= 1``), ``gaussian`` (``r``) or ``student`` (``r``,
        ``copula_df``). Correlation copulas use an exchangeable matrix.
    sizes : tuple of int
        Sample sizes, one per sample.
    gamma_per_sample, scale_per_sample : tuple of float, optional
        Heterogeneous tail indices or multiplicative scales, used to
        build alternatives for the tests.
    """

    marginal: str
    sizes: tuple
    gamma: float = 1.0
    rho: float = -1.0
    df: float = 4.0
    copula: str = "independence"
    theta: float | None = None
    r: float | None = None
    copula_df: float | None = None
    gamma_per_sample: tuple | None = None
    scale_per_sample: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if self.marginal not in MARGINALS:
            raise ValueError(f"unknown marginal {self.marginal!r}")
        if self.copula not in COPULAS:
            raise ValueError(f"unknown copula {self.copula!r}")
        if not self.sizes or min(self.sizes) < 2:
            raise ValueError("need at least one sample of size >= 2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.marginal == "burr" and not self.rho < 0:
            raise ValueError("burr needs rho < 0")
        if self.marginal == "abs_student_t" and not self.df > 0:
            raise ValueError("student-t degrees of freedom must be positive")
        for name in ("gamma_per_sample", "scale_per_sample"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(float(v) for v in val)
                if len(val) != self.m or min(val) <= 0:
                    raise ValueError(f"{name} needs {self.m} positive entries")
                object.__setattr__(self, name, val)
        if self.gamma_per_sample is not None and self.marginal == "abs_student_t":
            raise ValueError("gamma_per_sample is not available for abs_student_t")
        self._check_copula()

    def _check_copula(self):
        c = self.copula
        if c == "clayton" and not (self.theta is not None and self.theta > 0):
            raise ValueError("clayton copula needs theta > 0")
        if c == "gumbel" and not (self.theta is not None and self.theta >= 1):
            raise ValueError("gumbel copula needs theta >= 1")
        if c in ("gaussian", "student"):
            lo = -1.0 / (self.m - 1) if self.m > 1 else -1.0
            if self.r is None or not lo < self.r < 1:
                raise ValueError(f"exchangeable correlation must lie in ({lo:g}, 1)")
        if c == "student" and not (self.copula_df is not None and self.copula_df > 0):
            raise ValueError("student copula needs copula_df > 0")

    @property
    def m(self) -> int:
        return len(self.sizes)

    @property
    def tail_index(self) -> float:
        return 1.0 / self.df if self.marginal == "abs_student_t" else self.gamma

    def sample_gamma(self, j: int) -> float:
        return self.tail_index if self.gamma_per_sample is None else self.gamma_per_sample[j]


def _survival_quantile(spec: ModelSpec, s, gamma: float | None = None):
    # quantile at level 1 - s; written in s for precision far in the tail
    g = spec.gamma if gamma is None else gamma
    s = np.asarray(s, dtype=float)
    if spec.marginal == "pareto":
        return s ** (-g)
    if spec.marginal == "frechet":
        return (-np.log1p(-s)) ** (-g)
    if spec.marginal == "burr":
        return (s**spec.rho - 1.0) ** (-g / spec.rho)
    return stats.t.isf(s / 2.0, spec.df)


def marginal_quantile(spec: ModelSpec, u):
    """Quantile of the (common) marginal at level ``u`` in ``(0, 1)``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0) | ~(u_arr < 1)):
        raise ValueError("u must lie in (0, 1)")
    if spec.marginal == "frechet":
        out = (-np.log(u_arr)) ** (-spec.gamma)
    else:
        out = _survival_quantile(spec, 1.0 - u_arr)
    return float(out) if np.ndim(out) == 0 else out


def marginal_cdf(spec: ModelSpec, x):
    x = np.asarray(x, dtype=float)
    g, rho = spec.gamma, spec.rho
    if spec.marginal == "pareto":
        return np.where(x >= 1, 1.0 - np.maximum(x, 1.0) ** (-1.0 / g), 0.0)
    if spec.marginal == "frechet":
        return np.exp(-np.maximum(x, 1e-300) ** (-1.0 / g))
    if spec.marginal == "burr":
        return 1.0 - (1.0 + np.maximum(x, 1e-300) ** (-rho / g)) ** (1.0 / rho)
    return np.where(x > 0, 2.0 * stats.t.cdf(x, spec.df) - 1.0, 0.0)


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))


def _open_uniform(rng, shape):
    # uniforms strictly inside (0, 1)
    return (rng.integers(0, 2**53, size=shape).astype(float) + 0.5) / 2.0**53


def _positive_stable(rng, alpha: float, size: int):
    # Kanter representation; Laplace transform exp(-t**alpha)
    if alpha == 1.0:
        return np.ones(size)
    theta = math.pi * _open_uniform(rng, size)
    w = rng.standard_exponential(size)
    a = np.sin(alpha * theta) / np.sin(theta) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * theta) / w) ** ((1.0 - alpha) / alpha)
    return a * b


def _exchangeable_normals(rng, n: int, m: int, r: float):
    corr = np.full((m, m), r)
    np.fill_diagonal(corr, 1.0)
    L = np.linalg.cholesky(corr)
    return rng.standard_normal((n, m)) @ L.T


def copula_survival(spec: ModelSpec, n: int, rng) -> np.ndarray:
    """``n x m`` joint survival probabilities ``1 - U`` under the copula of ``spec``."""
    m, c = spec.m, spec.copula
    if c == "independence":
        return _open_uniform(rng, (n, m))
    if c == "clayton":
        v = rng.gamma(1.0 / spec.theta, 1.0, size=(n, 1))
        e = rng.standard_exponential((n, m))
        s = -np.expm1(-np.log1p(e / v) / spec.theta)
    elif c == "gumbel":
        alpha = 1.0 / spec.theta
        v = _positive_stable(rng, alpha, n)[:, None]
        e = rng.standard_exponential((n, m))
        s = -np.expm1(-((e / v) ** alpha))
    elif c == "gaussian":
        s = special.ndtr(-_exchangeable_normals(rng, n, m, spec.r))
    else:
        z = _exchangeable_normals(rng, n, m, spec.r)
        chi = rng.chisquare(spec.copula_df, size=(n, 1))
        s = stats.t.sf(z / np.sqrt(chi / spec.copula_df), spec.copula_df)
    return np.clip(s, 1e-300, 1.0 - 2**-53)


def sample_model(spec: ModelSpec, seed) -> list[np.ndarray]:
    """Draw the ``m`` samples of ``spec``.

    ``seed`` is an int or a ``numpy`` Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    s = copula_survival(spec, max(spec.sizes), rng)
    out = []
    for j, n in enumerate(spec.sizes):
        x = _survival_quantile(spec, s[:n, j], spec.sample_gamma(j) if spec.gamma_per_sample else None)
        if spec.scale_per_sample is not None:
            x = x * spec.scale_per_sample[j]
        out.append(np.asarray(x, dtype=float))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """What to compute in each replication."""

    replications: int = 100
    seed: int = 0
    k: tuple | int | None = None
    k_fraction: float | None = None
    p_levels: tuple = ()
    level: float = 0.95
    estimators: tuple = ("hill_combined", "variance_optimal")
    tests: tuple = ()
    test_level: float = 0.05
    test_p: float | None = None
    independent: bool = False
    second_order: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        unknown = set(self.estimators) - set(GAMMA_ESTIMATORS) - set(QUANTILE_ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")
        if set(self.tests) - set(TESTS):
            raise ValueError(f"unknown tests: {sorted(set(self.tests) - set(TESTS))}")
        if self.test_level not in REJECT_LEVELS:
            raise ValueError(f"test level must be one of {REJECT_LEVELS}")
        if "homoskedasticity" in self.tests and self.test_p is None:
            raise ValueError("homoskedasticity test needs test_p")
        if any(not 0 < p < 1 for p in self.p_levels):
            raise ValueError("p levels must lie in (0, 1)")
        if any(e in QUANTILE_ESTIMATORS for e in self.estimators) and not self.p_levels:
            raise ValueError("quantile estimators need at least one p level")


@dataclass(frozen=True)
class EstimatorMetrics:
    target: str
    truth: float
    mse: float
    bias: float
    coverage: float
    n_ok: int


@dataclass
class ExperimentResult:
    """Aggregated Monte Carlo metrics.

    ``errors`` keeps the per-replication errors (``nan`` where the
    estimator failed) and ``covered`` the interval hits, for resampling.
    """

    spec: ModelSpec
    config: ExperimentConfig
    estimators: dict[str, EstimatorMetrics]
    tests: dict[str, dict]
    failures: int
    errors: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    covered: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def replications(self) -> int:
        return self.config.replications

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.replications


def _qkey(name: str, p: float) -> str:
    return f"{name}@{p:g}"


def _needs(cfg: ExperimentConfig, prefix: str) -> bool:
    return any(e.startswith(prefix) for e in cfg.estimators)


def _general_block(spec, cfg, samples, ks, z, out):
    general = [e for e in cfg.estimators if not e.startswith(("distributed", "hill_combined", "weissman_combined"))]
    if not general and not cfg.tests:
        return
    report = pool_samples(samples, ks, independent=cfg.independent, p_levels=cfg.p_levels, level=cfg.level)
    for name in general:
        if name in report.estimates:
            ci = report.intervals[name]
            out[name] = (report.estimates[name].gamma, ci.lower, ci.upper)
        else:
            for p in cfg.p_levels:
                q = report.quantiles[p][name]
                out[_qkey(name, p)] = (q["estimate"], q.get("lower", math.nan), q.get("upper", math.nan))
    for test in cfg.tests:
        res = test_homogeneity(report) if test == "homogeneity" else test_homoskedasticity(report, cfg.test_p)
        out[f"test:{test}"] = (float(res.reject_at[cfg.test_level]), res.statistic, res.p_value)


def _summaries(samples, ks, second_order: bool) -> list[MachineSummary]:
    out = []
    for j, (x, k) in enumerate(zip(samples, ks)):
        s = SortedSample.from_values(x, f"{j:06d}")
        if second_order:
            out.append(machine_summarize(s, k))
        else:
            fit = hill_estimate(s, k)
            out.append(MachineSummary(s.origin_id, s.n, k, fit.gamma_hat, fit.threshold, 0.0, 0.0))
    return out


def _distributed_block(spec, cfg, samples, ks, out):
    rep = aggregate(_summaries(samples, ks, cfg.second_order), p_levels=cfg.p_levels, level=cfg.level)
    ests = rep.estimates()
    for name in cfg.estimators:
        if not name.startswith("distributed"):
            continue
        short = name[len("distributed_"):]
        if short in ests:
            ci = rep.intervals[short]
            out[name] = (ests[short].gamma, ci.lower, ci.upper)
        else:
            scheme = short[len("geometric_"):]
            for p in cfg.p_levels:
                q = rep.quantiles[p][scheme]
                out[_qkey(name, p)] = (q["estimate"], q["lower"], q["upper"])


def _combined_block(spec, cfg, samples, ks, z, out):
    k = int(sum(ks))
    n = int(sum(len(x) for x in samples))
    fit = combined_hill(samples, k)
    half = z * fit.gamma_hat / math.sqrt(k)
    if "hill_combined" in cfg.estimators:
        out["hill_combined"] = (fit.gamma_hat, fit.gamma_hat - half, fit.gamma_hat + half)
    if "weissman_combined" in cfg.estimators:
        for p in cfg.p_levels:
            q = weissman_quantile(fit, p)
            h = half * math.log(k / (n * p))
            out[_qkey("weissman_combined", p)] = (q, q * math.exp(-h), q * math.exp(h))


def run_replication(spec: ModelSpec, cfg: ExperimentConfig, rep: int) -> tuple[dict, bool]:
    """One replication: ``{key: (estimate, lower, upper)}`` and a failure flag."""
    samples = sample_model(spec, replication_rng(cfg.seed, rep))
    ks = resolve_ks(spec.sizes, cfg.k, cfg.k_fraction)
    z = normal_quantile(0.5 + cfg.level / 2.0)
    out: dict = {}
    failed = False
    blocks = [lambda: _general_block(spec, cfg, samples, ks, z, out)]
    if _needs(cfg, "distributed"):
        blocks.append(lambda: _distributed_block(spec, cfg, samples, ks, out))
    if "hill_combined" in cfg.estimators or "weissman_combined" in cfg.estimators:
        blocks.append(lambda: _combined_block(spec, cfg, samples, ks, z, out))
    for block in blocks:
        try:
            block()
        except (ValueError, ArithmeticError, np.linalg.LinAlgError):
            failed = True
    return out, failed


def _run_chunk(args):
    spec, cfg, reps = args
    return [run_replication(spec, cfg, r) for r in reps]


def _targets(spec: ModelSpec, cfg: ExperimentConfig) -> dict[str, tuple[str, float]]:
    out = {}
    for name in cfg.estimators:
        if name in GAMMA_ESTIMATORS:
            out[name] = ("gamma", spec.tail_index)
        else:
            for p in cfg.p_levels:
                out[_qkey(name, p)] = (f"q({p:g})/q-1", float(marginal_quantile(spec, 1.0 - p)))
    return out


def run_experiment(spec: ModelSpec, cfg: ExperimentConfig) -> ExperimentResult:
    """Run ``cfg.replications`` seeded replications and aggregate the metrics.

    Failed computations are recorded as ``nan`` and counted; they never
    abort the run.
    """
    reps = range(cfg.replications)
    if cfg.workers > 1 and cfg.replications > 1:
        chunks = [(spec, cfg, list(reps[i :: cfg.workers])) for i in range(cfg.workers)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_run_chunk, chunks))
        results = [None] * cfg.replications
        for i, part in enumerate(parts):
            for r, res in zip(reps[i :: cfg.workers], part):
                results[r] = res
    else:
        results = [run_replication(spec, cfg, r) for r in reps]

    targets = _targets(spec, cfg)
    estimators, errors, covered = {}, {}, {}
    for key, (target, truth) in targets.items():
        est = np.array([res[0].get(key, (math.nan,) * 3) for res in results], dtype=float)
        relative = not target == "gamma"
        err = est[:, 0] / truth - 1.0 if relative else est[:, 0] - truth
        hit = np.where(np.isnan(est[:, 1]), np.nan, (est[:, 1] <= truth) & (truth <= est[:, 2]))
        ok = ~np.isnan(err)
        errors[key], covered[key] = err, hit
        n_ok = int(ok.sum())
        estimators[key] = EstimatorMetrics(
            target=target,
            truth=truth,
            mse=float(np.mean(err[ok] ** 2)) if n_ok else math.nan,
            bias=float(np.mean(err[ok])) if n_ok else math.nan,
            coverage=float(np.nanmean(hit)) if np.any(~np.isnan(hit)) else math.nan,
            n_ok=n_ok,
        )
    tests = {}
    for test in cfg.tests:
        rej = np.array([res[0].get(f"test:{test}", (math.nan,) * 3)[0] for res in results])
        ok = ~np.isnan(rej)
        tests[test] = {
            "rejection_rate": float(rej[ok].mean()) if ok.any() else math.nan,
            "level": cfg.test_level,
            "n_ok": int(ok.sum()),
        }
    return ExperimentResult(
        spec=spec,
        config=cfg,
        estimators=estimators,
        tests=tests,
        failures=sum(1 for _, f in results if f),
        errors=errors,
        covered=covered,
    )


# configuration files

_SPEC_KEYS = {f.name for f in fields(ModelSpec)}
_CFG_KEYS = {f.name for f in fields(ExperimentConfig)} - {"seed", "workers"}
_ALIASES = {"p": "p_levels"}


def scenario_from_dict(
    entry: dict, seed: int, workers: int = 1, force_seed: bool = False
) -> tuple[str, ModelSpec, ExperimentConfig]:
    """Build one scenario; a per-scenario ``seed`` wins unless ``force_seed``."""
    entry = {_ALIASES.get(k, k): v for k, v in entry.items()}
    name = str(entry.pop("name", "scenario"))
    own_seed = entry.pop("seed", None)
    if own_seed is not None and not force_seed:
        seed = int(own_seed)
    if "sizes" not in entry and {"m", "n"} <= entry.keys():
        entry["sizes"] = [entry.pop("n")] * int(entry.pop("m"))
    unknown = set(entry) - _SPEC_KEYS - _CFG_KEYS
    if unknown:
        raise ValueError(f"scenario {name!r}: unknown keys {sorted(unknown)}")
    spec_args = {k: v for k, v in entry.items() if k in _SPEC_KEYS}
    cfg_args = {k: v for k, v in entry.items() if k in _CFG_KEYS}
    for key in ("p_levels", "estimators", "tests", "sizes", "gamma_per_sample", "scale_per_sample"):
        source = spec_args if key in spec_args else cfg_args
        if key in source and source[key] is not None:
            val = source[key]
            source[key] = tuple(val) if isinstance(val, (list, tuple)) else (val,)
    if isinstance(cfg_args.get("k"), list):
        cfg_args["k"] = tuple(cfg_args["k"])
    try:
        spec = ModelSpec(**spec_args)
        cfg = ExperimentConfig(seed=seed, workers=workers, **cfg_args)
    except TypeError as exc:
        raise ValueError(f"scenario {name!r}: {exc}") from None
    except ValueError as exc:
        raise ValueError(f"scenario {name!r}: {exc}") from None
    return name, spec, cfg


def load_config(path, seed: int | None = None, workers: int | None = None):
    """Parse a TOML experiment file into ``(name, spec, config)`` triples.

    Top-level ``seed`` and ``workers`` apply to every ``[[scenario]]``
    that does not set its own ``seed``. An explicit ``seed`` argument
    overrides both.
    """
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"invalid config {path}: {exc}") from None
    scenarios = doc.pop("scenario", None)
    if not scenarios:
        raise ValueError(f"config {path} defines no [[scenario]] entries")
    base_seed = int(doc.pop("seed", 0)) if seed is None else int(seed)
    doc.pop("seed", None)
    n_workers = int(doc.pop("workers", 1)) if workers is None else int(workers)
    doc.pop("workers", None)
    if doc:
        raise ValueError(f"config {path}: unknown top-level keys {sorted(doc)}")
    return [scenario_from_dict(dict(s), base_seed, n_workers, force_seed=seed is not None) for s in scenarios]


CSV_COLUMNS = (
    "scenario", "kind", "name", "target", "truth", "replications", "n_ok",
    "mse", "bias", "coverage", "rejection_rate", "failure_fraction", "seed",
)


def result_rows(name: str, result: ExperimentResult) -> list[dict]:
    rows = []
    common = {
        "scenario": name,
        "replications": result.replications,
        "failure_fraction": result.failure_fraction,
        "seed": result.seed,
    }
    for key, met in result.estimators.items():
        rows.append({**common, "kind": "estimator", "name": key, "target": met.target, "truth": met.truth,
                     "n_ok": met.n_ok, "mse": met.mse, "bias": met.bias, "coverage": met.coverage,
                     "rejection_rate": ""})
    for key, met in result.tests.items():
        rows.append({**common, "kind": "test", "name": key, "target": f"alpha={met['level']:g}", "truth": "",
                     "n_ok": met["n_ok"], "mse": "", "bias": "", "coverage": "",
                     "rejection_rate": met["rejection_rate"]})
    return rows


def _fmt(v):
    return f"{v:.10g}" if isinstance(v, float) else v


def write_csv(rows: Sequence[dict], path_or_file) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    finally:
        if own:
            fh.close()
