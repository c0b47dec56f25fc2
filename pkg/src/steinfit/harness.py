"""Seeded samplers and Monte Carlo drivers for the simulation studies.

Every (replication r, sample-size index k) pair draws its data from the stream
``SeedSequence(base_seed, spawn_key=(r, k))`` and any estimator randomness (NCE
noise, multi-start offsets) from ``spawn_key=(r, k, 1)``.  Work units are
independent, so the table is identical for any number of workers once rows are
sorted by (n, estimator, rep).
"""

import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .asymptotics import (
    asymptotic_covariance,
    ellipse_polyline,
    gof_test,
    hessian_blocks,
    model_select_score,
    select_model,
)
from .baselines import (
    BaselineOpts,
    KernelSpec,
    cramer_rao_bound,
    ksd_estimate,
    mle_estimate,
    nce_estimate,
    score_matching_estimate,
)
from .dle import DleOpts, estimate_dle
from .errors import ConfigError, SteinfitError, UnknownDistribution
from .features import make_feature
from .models import TanhExpFamily, make_model
from .sdre import SolverOpts

STUDIES = ("qq_scatter", "variance_curve", "gof_null", "model_select")
ESTIMATORS = ("dle", "sm", "ksd", "nce", "mle")
DISTRIBUTIONS = ("gaussian", "gamma", "gaussian_mixture", "tanh_exp")
ELLIPSE_LEVELS = (0.95, 0.999)

# which sampler generates data "from the model" at theta*
MODEL_DISTRIBUTION = {
    "isotropic_gaussian": "gaussian",
    "gamma_rate": "gamma",
    "gaussian_mixture_loc": "gaussian_mixture",
    "tanh_exp_family": "tanh_exp",
}


# -- samplers -------------------------------------------------------------------


def sample_distribution(name, params, n, rng):
    """i.i.d. draws, shape (n, d), from one of the study distributions.

    gaussian: mean (scalar or vector), sigma2.  gamma: shape, rate.
    gaussian_mixture: theta, other_mean, weight.  tanh_exp: theta (must be 0).
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    params = dict(params or {})
    if name == "gaussian":
        mean = np.atleast_1d(np.asarray(params.get("mean", 0.0), dtype=float))
        sd = np.sqrt(float(params.get("sigma2", 1.0)))
        return mean + sd * rng.standard_normal((n, mean.size))
    if name == "gamma":
        shape = float(params.get("shape", 5.0))
        rate = float(params.get("rate", 1.0))
        return rng.gamma(shape, 1.0 / rate, size=(n, 1))
    if name == "gaussian_mixture":
        w = float(params.get("weight", 0.5))
        pick = rng.random(n) < w
        loc = np.where(pick, float(params.get("theta", -1.0)), float(params.get("other_mean", 1.0)))
        return (loc + rng.standard_normal(n))[:, None]
    if name == "tanh_exp":
        theta = np.asarray(params.get("theta", [0.0, 0.0]), dtype=float)
        return TanhExpFamily().sample(theta, n, rng)
    raise UnknownDistribution(f"unknown distribution {name!r}; known: {list(DISTRIBUTIONS)}")


def model_distribution_params(model_name, model, theta_star):
    """Sampler name and parameters producing data from ``model`` at theta*."""
    try:
        dist = MODEL_DISTRIBUTION[model_name]
    except KeyError:
        raise UnknownDistribution(f"no data sampler for model {model_name!r}") from None
    theta = [float(t) for t in np.atleast_1d(theta_star)]
    if dist == "gaussian":
        return dist, {"mean": theta, "sigma2": model.sigma2}
    if dist == "gamma":
        return dist, {"shape": model.shape, "rate": theta[0]}
    if dist == "gaussian_mixture":
        return dist, {"theta": theta[0], "other_mean": model.other_mean, "weight": model.weight}
    return dist, {"theta": theta}


def stream(base_seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key)))


# -- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    model: str
    theta_star: tuple
    feature: str
    estimators: tuple = ("dle",)
    n_grid: tuple = (500,)
    reps: int = 500
    base_seed: int = 0
    model_fixed: dict = field(default_factory=dict)
    estimator_opts: dict = field(default_factory=dict)
    distribution: str = None
    distribution_params: dict = None
    candidates: tuple = ()
    reference_samples: int = 200_000
    record_timing: bool = False

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        grid = list(self.n_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
            raise ConfigError("n_grid must be a nonempty strictly ascending list of positive sizes")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown or not self.estimators:
            raise ConfigError(f"unknown estimators {unknown}; known: {ESTIMATORS}")
        if self.study == "model_select" and not self.candidates:
            raise ConfigError("model_select needs a list of candidates")
        if not 0 <= int(self.base_seed) < 2**64:
            raise ConfigError("base_seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("theta_star", "estimators", "n_grid"):
            if key in d:
                d[key] = tuple(np.atleast_1d(d[key]).tolist()) if key == "theta_star" else tuple(d[key])
        if "candidates" in d:
            d["candidates"] = tuple(dict(c) for c in d["candidates"])
        return cls(**d)

    def to_dict(self):
        out = asdict(self)
        out["theta_star"] = list(self.theta_star)
        out["estimators"] = list(self.estimators)
        out["n_grid"] = list(self.n_grid)
        out["candidates"] = [dict(c) for c in self.candidates]
        return out

    def build_model(self):
        try:
            return make_model(self.model, **self.model_fixed)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"cannot build model {self.model!r} with {self.model_fixed}: {exc}") from None

    def data_source(self):
        if self.distribution is not None:
            return self.distribution, dict(self.distribution_params or {})
        return model_distribution_params(self.model, self.build_model(), self.theta_star)


def default_config(study, **overrides):
    """Desk-scale defaults for each study."""
    base = {
        "qq_scatter": dict(study="qq_scatter", model="tanh_exp_family", theta_star=(0.0, 0.0), feature="tanh",
                           estimators=("dle",), n_grid=(500,), reps=500),
        "variance_curve": dict(study="variance_curve", model="gamma_rate", model_fixed={"shape": 5.0},
                               theta_star=(1.0,), feature="poly_pair",
                               estimators=("dle", "sm", "ksd", "nce", "mle"),
                               n_grid=(50, 100, 150, 200, 400), reps=1000),
        "gof_null": dict(study="gof_null", model="isotropic_gaussian", theta_star=(0.0,),
                         feature="identity+half_square", estimators=("dle",), n_grid=(500,), reps=2000),
        "model_select": dict(study="model_select", model="isotropic_gaussian", theta_star=(0.0,),
                             feature="poly_pair", estimators=("dle",), n_grid=(500,), reps=200,
                             candidates=({"model": "isotropic_gaussian", "feature": "poly_pair"},
                                         {"model": "isotropic_gaussian", "feature": "poly_pair+tanh"},
                                         {"model": "gaussian_mixture_loc", "fixed": {"other_mean": 3.0},
                                          "feature": "poly_pair"},
                                         {"model": "gaussian_mixture_loc", "fixed": {"other_mean": 3.0},
                                          "feature": "poly_pair+tanh"})),
    }
    if study not in base:
        raise ConfigError(f"study must be one of {STUDIES}")
    cfg = dict(base[study])
    cfg.update(overrides)
    return ExperimentConfig.from_dict(cfg)


# -- replication table ----------------------------------------------------------


@dataclass
class Row:
    rep: int
    n: int
    estimator: str
    theta: np.ndarray
    loglik_ratio: float
    converged: bool
    wall_ms: float = 0.0
    error: str = ""
    extras: dict = field(default_factory=dict)

    def sort_key(self):
        return (self.n, self.estimator, self.rep)


def _fmt(x):
    x = float(x)
    if np.isnan(x):
        return "nan"
    return format(x, ".17g")


@dataclass
class ReplicationTable:
    rows: list
    config: ExperimentConfig = None

    def __post_init__(self):
        self.rows = sorted(self.rows, key=Row.sort_key)

    def __len__(self):
        return len(self.rows)

    @property
    def param_dim(self):
        return max((r.theta.size for r in self.rows), default=0)

    def select(self, estimator=None, n=None, converged_only=False):
        return [r for r in self.rows
                if (estimator is None or r.estimator == estimator)
                and (n is None or r.n == n)
                and (not converged_only or r.converged)]

    def thetas(self, estimator, n, converged_only=True):
        rows = self.select(estimator, n, converged_only)
        p = self.param_dim
        return np.array([r.theta for r in rows]).reshape(len(rows), p)

    def to_csv(self):
        p = self.param_dim
        header = ["rep", "n", "estimator"] + [f"theta_{j + 1}" for j in range(p)] + ["loglik_ratio", "converged", "wall_ms"]
        lines = [",".join(header)]
        for r in self.rows:
            th = [_fmt(t) for t in r.theta] + [""] * (p - r.theta.size)
            lines.append(",".join([str(r.rep), str(r.n), r.estimator] + th +
                                  [_fmt(r.loglik_ratio), "true" if r.converged else "false", _fmt(r.wall_ms)]))
        return "\n".join(lines) + "\n"


# -- running one replication --------------------------------------------------------


def _dle_opts(opts, seed):
    sdre = SolverOpts(inner_tol=opts.get("inner_tol", 1e-8), max_iter=opts.get("inner_max_iter", 200),
                      ridge=opts.get("ridge", 0.0))
    return DleOpts(outer_tol=opts.get("outer_tol", 1e-6), outer_max_iter=opts.get("outer_max_iter", 500),
                   method=opts.get("method", "profile"), theta_init=opts.get("theta_init", "default"),
                   sdre_opts=sdre, starts=opts.get("starts", 1), seed=seed)


def _baseline_opts(opts):
    return BaselineOpts(gtol=opts.get("gtol", 1e-6), max_iter=opts.get("max_iter", 500),
                        theta_init=opts.get("theta_init", "default"), jitter=opts.get("jitter", 1e-6))


def run_estimator(name, model, feature, X, opts=None, rng=None, seed=0):
    """Run one estimator; returns (theta_hat, loglik_ratio, converged, extras)."""
    opts = dict(opts or {})
    if name == "dle":
        res = estimate_dle(model, feature, X, _dle_opts(opts, seed))
        extras = {"delta_hat": res.delta_hat}
        return res.theta_hat, res.loglik_ratio, res.converged, extras
    if name == "sm":
        res = score_matching_estimate(model, X, _baseline_opts(opts))
    elif name == "ksd":
        kernel = KernelSpec(degree=opts.get("degree", 2), offset=opts.get("offset", 1.0))
        res = ksd_estimate(model, X, kernel, _baseline_opts(opts))
    elif name == "nce":
        res = nce_estimate(model, X, _baseline_opts(opts), rng)
    elif name == "mle":
        res = mle_estimate(model, X, _baseline_opts(opts))
    else:
        raise ConfigError(f"unknown estimator {name!r}")
    return res.theta_hat, float("nan"), res.converged, {}


def _unit(config, r, k):
    """All rows for replication r at grid index k."""
    n = config.n_grid[k]
    dist, params = config.data_source()
    X = sample_distribution(dist, params, n, stream(config.base_seed, r, k))
    est_rng_seed = np.random.SeedSequence(int(config.base_seed), spawn_key=(r, k, 1))
    rows = []
    if config.study == "model_select":
        jobs = [(_candidate_label(c), c) for c in config.candidates]
    else:
        jobs = [(e, None) for e in config.estimators]
    for label, cand in jobs:
        if cand is None:
            model = config.build_model()
            feature = make_feature(config.feature, model)
            est = label
        else:
            model = make_model(cand["model"], **dict(cand.get("fixed", {})))
            feature = make_feature(cand["feature"], model)
            est = "dle"
        opts = dict(config.estimator_opts.get(est, {}))
        rng = np.random.default_rng(est_rng_seed)
        seed = int(est_rng_seed.generate_state(1)[0])
        t0 = time.perf_counter()
        try:
            theta, ll, conv, extras = run_estimator(est, model, feature, X, opts, rng, seed)
            err = ""
            theta = np.asarray(theta, dtype=float)
        except (SteinfitError, np.linalg.LinAlgError, FloatingPointError) as exc:
            theta = np.full(model.param_dim, np.nan)
            ll, conv, extras, err = float("nan"), False, {}, type(exc).__name__
        wall = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
        if cand is not None:
            extras = dict(extras, b=feature.out_dim(model.input_dim), p=model.param_dim)
        rows.append(Row(r, n, label, theta, float(ll), bool(conv), wall, err, extras))
    return rows


def _candidate_label(c):
    fixed = ",".join(f"{k}={v}" for k, v in sorted(dict(c.get("fixed", {})).items()))
    return f"dle[{c['model']}({fixed})|{c['feature']}]"


def _units_chunk(args):
    config, units = args
    out = []
    for r, k in units:
        out.extend(_unit(config, r, k))
    return out


def run_replications(config, workers=1):
    """Run every (rep, n) unit; per-row failures are recorded, never raised."""
    units = [(r, k) for k in range(len(config.n_grid)) for r in range(config.reps)]
    if workers is None or workers <= 1:
        rows = _units_chunk((config, units))
    else:
        chunks = [units[i::workers * 4] for i in range(workers * 4)]
        rows = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_units_chunk, [(config, c) for c in chunks if c]):
                rows.extend(part)
    return ReplicationTable(rows, config)


# -- derived curves ----------------------------------------------------------------


@dataclass
class CurveRow:
    n: int
    estimator: str
    coord: int
    variance: float
    crb: float
    stderr: float
    used: int
    excluded: int


def _variance_stderr(x):
    m = x.size
    if m < 2:
        return float("nan"), float("nan")
    v = float(x.var(ddof=1))
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    return v, float(np.sqrt(max(m4 - v * v, 0.0) / m))


def variance_curve(table, crb=None):
    """Unbiased per-coordinate variance of theta_hat for each (n, estimator).

    ``crb`` is the per-observation bound (p x p); the curve reports crb_jj / n.
    Non-converged rows are excluded and counted.
    """
    if not table.rows:
        raise ValueError("empty replication table")
    out = []
    ns = sorted({r.n for r in table.rows})
    ests = sorted({r.estimator for r in table.rows})
    p = table.param_dim
    for n in ns:
        for est in ests:
            rows = table.select(est, n)
            if not rows:
                continue
            good = [r for r in rows if r.converged and np.all(np.isfinite(r.theta))]
            T = np.array([r.theta for r in good]).reshape(len(good), p)
            for j in range(p):
                v, se = _variance_stderr(T[:, j])
                bound = float(np.asarray(crb)[j, j]) / n if crb is not None else float("nan")
                out.append(CurveRow(n, est, j + 1, v, bound, se, len(good), len(rows) - len(good)))
    return out


def curve_csv(curve):
    lines = ["n,estimator,coord,variance,crb"]
    for c in curve:
        lines.append(f"{c.n},{c.estimator},{c.coord},{_fmt(c.variance)},{_fmt(c.crb)}")
    return "\n".join(lines) + "\n"


@dataclass
class QQResult:
    qq: dict  # coord -> (theoretical quantiles, empirical quantiles)
    scatter: np.ndarray  # sqrt(n) (theta_hat - theta*)
    ellipses: dict  # level -> polyline
    correlation: dict
    coverage: dict


def qq_and_scatter(table, covariance, theta_star=None, estimator="dle"):
    """Normal qq pairs of sqrt(n)(theta_hat - theta*), scatter points and ellipses."""
    ns = sorted({r.n for r in table.select(estimator)})
    if not ns:
        raise ValueError(f"no {estimator} rows in the table")
    n = ns[-1]
    T = table.thetas(estimator, n)
    T = T[np.all(np.isfinite(T), axis=1)]
    if theta_star is None:
        theta_star = table.config.theta_star
    Z = np.sqrt(n) * (T - np.asarray(theta_star, dtype=float))
    V = np.asarray(covariance.V if hasattr(covariance, "V") else covariance, dtype=float)
    reps, p = Z.shape
    levels = (np.arange(1, reps + 1) - 0.5) / reps
    qq, corr = {}, {}
    for j in range(p):
        theo = stats.norm.ppf(levels) * np.sqrt(V[j, j])
        emp = np.sort(Z[:, j])
        qq[j + 1] = (theo, emp)
        corr[j + 1] = float(np.corrcoef(theo, emp)[0, 1]) if reps > 1 else float("nan")
    ellipses, coverage = {}, {}
    if p == 2:
        Vinv = np.linalg.inv(V)
        m2 = np.einsum("ia,ab,ib->i", Z, Vinv, Z)
        for level in ELLIPSE_LEVELS:
            ellipses[level] = ellipse_polyline(V, level)
            coverage[level] = float(np.mean(m2 <= stats.chi2.ppf(level, 2)))
    return QQResult(qq, Z, ellipses, corr, coverage)


def qq_csv(qq):
    lines = ["coord,level,theoretical,empirical"]
    for j, (theo, emp) in qq.qq.items():
        reps = theo.size
        for i in range(reps):
            lines.append(f"{j},{_fmt((i + 0.5) / reps)},{_fmt(theo[i])},{_fmt(emp[i])}")
    return "\n".join(lines) + "\n"


def ellipse_csv(qq):
    lines = ["level,x,y"]
    for level, poly in qq.ellipses.items():
        for x, y in poly:
            lines.append(f"{_fmt(level)},{_fmt(x)},{_fmt(y)}")
    return "\n".join(lines) + "\n"


def reference_covariance(model, feature, theta_star, samples, rng, alpha=0.05):
    """Sandwich covariance at (delta = 0, theta*) from a large exact model sample."""
    theta_star = model.check_theta(theta_star)
    X = model.sample(theta_star, samples, rng)
    b = feature.out_dim(model.input_dim)
    blocks = hessian_blocks(model, feature, X, np.zeros(b), theta_star)
    return asymptotic_covariance(blocks, 1, alpha), blocks


# -- studies -------------------------------------------------------------------------


@dataclass
class StudyOutput:
    table: ReplicationTable
    files: dict  # file name -> text
    summary: dict


def _crb_at_truth(config):
    model = config.build_model()
    if not (model.supports("log_density") and model.supports("score_theta")):
        return None
    return cramer_rao_bound(model, config.theta_star, stream(config.base_seed, 2**32 - 1))


def run_study(config, workers=1):
    table = run_replications(config, workers)
    files = {"replications.csv": table.to_csv()}
    summary = {"study": config.study, "rows": len(table),
               "failed_rows": sum(1 for r in table.rows if not r.converged),
               "errors": _error_counts(table)}
    if config.study == "variance_curve":
        crb = _crb_at_truth(config)
        curve = variance_curve(table, crb)
        files["curve.csv"] = curve_csv(curve)
        summary["curve"] = [asdict(c) for c in curve]
        summary["crb_per_observation"] = None if crb is None else np.asarray(crb).tolist()
    elif config.study == "qq_scatter":
        model = config.build_model()
        feature = make_feature(config.feature, model)
        ref, _ = reference_covariance(model, feature, config.theta_star, config.reference_samples,
                                      stream(config.base_seed, 2**32 - 1))
        qq = qq_and_scatter(table, ref, config.theta_star)
        files["qq.csv"] = qq_csv(qq)
        if qq.ellipses:
            files["ellipse.csv"] = ellipse_csv(qq)
        summary.update({"V_reference": ref.V.tolist(), "qq_correlation": qq.correlation,
                        "coverage": {str(k): v for k, v in qq.coverage.items()}})
    elif config.study == "gof_null":
        summary.update(gof_null_summary(table, config))
    elif config.study == "model_select":
        summary.update(model_select_summary(table, config))
    return StudyOutput(table, files, summary)


def _error_counts(table):
    counts = {}
    for r in table.rows:
        if r.error:
            counts[r.error] = counts.get(r.error, 0) + 1
    return dict(sorted(counts.items()))


def optimism_reference(model, feature, theta_star, samples, rng):
    """Full (delta, theta) Hessian of E_q log r at (0, theta*), q the model itself."""
    _, blocks = reference_covariance(model, feature, theta_star, samples, rng)
    return blocks.full()


def gof_null_summary(table, config):
    """Chi-square calibration of 2 n l_hat and the optimism of n l_hat.

    The optimism of one replication is n (l_hat - E_q l(eta_hat)), where the
    out-of-sample term is the quadratic expansion 0.5 eta^T H eta around the
    truth with H the expected Hessian; its mean should be b - p.
    """
    model = config.build_model()
    feature = make_feature(config.feature, model)
    b = feature.out_dim(model.input_dim)
    p = model.param_dim
    n = config.n_grid[-1]
    rows = [r for r in table.select("dle", n) if r.converged]
    ll = np.array([r.loglik_ratio for r in rows])
    stat = 2.0 * n * ll
    pvals = np.array([gof_test(v, n, b, p).p_value for v in ll])
    H = optimism_reference(model, feature, config.theta_star, config.reference_samples,
                           stream(config.base_seed, 2**32 - 2))
    theta_star = np.asarray(config.theta_star, dtype=float)
    opt = []
    for r in rows:
        eta = np.concatenate([r.extras["delta_hat"], r.theta - theta_star])
        opt.append(n * (r.loglik_ratio - 0.5 * eta @ H @ eta))
    opt = np.array(opt)
    m = max(len(rows), 1)
    return {
        "df": b - p,
        "used": len(rows),
        "ks_statistic_chi2": float(stats.kstest(stat, stats.chi2(b - p).cdf).statistic) if len(rows) else float("nan"),
        "ks_pvalue_uniform": float(stats.kstest(pvals, "uniform").statistic) if len(rows) else float("nan"),
        "mean_n_loglik": float(np.mean(n * ll)) if len(rows) else float("nan"),
        "stderr_n_loglik": float(np.std(n * ll, ddof=1) / np.sqrt(m)) if len(rows) > 1 else float("nan"),
        "mean_optimism": float(np.mean(opt)) if len(rows) else float("nan"),
        "stderr_optimism": float(np.std(opt, ddof=1) / np.sqrt(m)) if len(rows) > 1 else float("nan"),
        "expected_optimism": b - p,
    }


def model_select_summary(table, config):
    """Per replication, score every candidate and pick a model; report frequencies."""
    picks = {}
    for r_idx in range(config.reps):
        for n in config.n_grid:
            scores = {}
            for c in config.candidates:
                label = _candidate_label(c)
                rows = [r for r in table.select(label, n) if r.rep == r_idx]
                if not rows or not rows[0].converged:
                    continue
                row = rows[0]
                s = model_select_score(max(row.loglik_ratio, 0.0), n, row.extras["b"], row.extras["p"])
                model_key = f"{c['model']}({','.join(f'{k}={v}' for k, v in sorted(dict(c.get('fixed', {})).items()))})"
                scores[(model_key, c["feature"])] = s
            if scores:
                m, f = select_model(scores)
                picks[m] = picks.get(m, 0) + 1
    return {"selection_counts": dict(sorted(picks.items()))}


def write_text(path, text):
    with io.open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
