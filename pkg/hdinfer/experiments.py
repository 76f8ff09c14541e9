"""
Monte Carlo experiments: JSON configs, per-replication runners and result
tables

Every replication only depends on (seed, replication index): datasets come
from `dgp.generate` and bootstrap seeds from Rng(seed).fork(_BOOTSTRAP_STREAM,
r), so the outputs are identical whatever the number of workers.
"""
import dataclasses
import functools
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

import joblib
import numpy as np
import pandas as pd
from tqdm import tqdm

from hdinfer.annotations import Count, FilePath, Seed
from hdinfer.bootstrap import (
    EMPIRICAL,
    GAUSSIAN,
    make_weights,
    sup_draws,
)
from hdinfer.datacl import (
    BootstrapConfig,
    Dataset,
    MamProblem,
    RmdConfig,
    RmdResult,
    band_to_df,
    decisions_to_df,
)
from hdinfer.dgp import DgpSpec, generate
from hdinfer.drgmm import (
    DrgmmStageError,
    RemainderOracle,
    SingularMatrixError,
    drgmm_pipeline,
)
from hdinfer.io import FLOAT_FORMAT, get_conf
from hdinfer.lp_solver import LpIterationLimitError
from hdinfer.linalg_core import DomainError, Rng, norm, std_normal_quantile
from hdinfer.mam import influence_scales, t_statistics
from hdinfer.multiple_testing import (
    benjamini_hochberg,
    bonferroni,
    dependence_diagnostic,
    holm_stepdown,
    romano_wolf_stepdown,
)
from hdinfer.regularized_means import (
    select_lambda,
    selection_threshold,
    soft_threshold,
    theoretical_error_bound,
)
from hdinfer.rmd import (
    LinearIVScore,
    LogisticScore,
    ScoreModel,
    rmd_linear,
    rmd_nonlinear,
)
from hdinfer.simultaneous_ci import (
    band_covers,
    simultaneous_intervals,
    simultaneous_intervals_md,
)


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
SCHEMA_VERSION = 1
EXPERIMENT_VARIANTS = {
    "pp_data": ("figure1",),
    "coverage": ("figure1", "means_model", "rct_outcomes"),
    "fwer": ("figure1", "means_model", "rct_outcomes"),
    "fdr": ("figure1", "means_model", "rct_outcomes"),
    "lq_bounds": ("means_model",),
    "rmd_rates": ("sparse_linear", "homoskedastic_iv", "logistic"),
    "drgmm_inference": ("sparse_linear", "homoskedastic_iv", "logistic"),
}
_REQUIRED_KEYS = ("schema_version", "experiment", "dgp", "seed", "output_dir")
_OPTIONAL_KEYS = ("method", "replications")
_BOOTSTRAP_STREAM = 3
_GAUSSIAN_LIMIT_STREAM = 4
_LIMIT_CHUNK_SIZE = 256
# Upper tail of the P-P curve on which approximation gaps are reported
_PP_TAIL_LEVEL = 0.8
_ESTIMATION_ERRORS = (
    DrgmmStageError,
    LpIterationLimitError,
    SingularMatrixError,
)


# ==========
# Exceptions
# ==========
class ConfigError(Exception):
    """Experiment config violating the schema"""

    def __init__(self, message: str, key_path: str = "", line: int = 1):
        self.key_path = key_path
        self.line = line
        where = f"{key_path!r} " if key_path else ""
        super().__init__(f"line {line}: {where}{message}")


# ======
# Config
# ======
@dataclass(frozen=True)
class MethodParams:
    """Parameters of the statistical methods, filled from conf/defaults.yaml

    Attributes
        alpha (float): level of bands and tests
        B (int): bootstrap draws
        scheme (str): "gaussian" or "empirical" bootstrap
        weight_mode (str): "unit" or "inv_sd" band weights
        two_sided (bool): two-sided hypotheses in fwer and fdr
        penalty_c (float): constant of the default DRGMM penalties
        lambda_mode (str): rule for the RMD lambda, "ideal_noise",
            "self_normalized" or "bootstrap", all evaluated at the truth
        lambda_alpha (float): level of that rule
        max_outer_iterations (int): nonlinear RMD outer loop cap
        tol (float): nonlinear RMD step tolerance
        pp_grid_size (int): points of the P-P curve
        sample_sizes (list[int]): sample sizes of rmd_rates, [dgp.n] if
            missing
        homoskedastic (bool): compute gamma_hat against E_n[Z Z']
    """

    alpha: float
    B: int
    scheme: str
    weight_mode: str
    two_sided: bool
    penalty_c: float
    lambda_mode: str
    lambda_alpha: float
    max_outer_iterations: int
    tol: float
    pp_grid_size: int
    sample_sizes: Optional[list] = None
    homoskedastic: bool = False


def _method_defaults() -> dict:
    conf = get_conf("defaults.yaml")
    return {
        "alpha": conf["alpha"],
        "B": conf["bootstrap"]["B"],
        "scheme": conf["bootstrap"]["scheme"],
        "weight_mode": conf["weight_mode"],
        "two_sided": conf["two_sided"],
        "penalty_c": conf["penalty_c"],
        "lambda_mode": conf["rmd"]["lambda_mode"],
        "lambda_alpha": conf["rmd"]["lambda_alpha"],
        "max_outer_iterations": conf["rmd"]["max_outer_iterations"],
        "tol": conf["rmd"]["tol"],
        "pp_grid_size": conf["pp_grid_size"],
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment config

    `dgp_conf` keeps the DGP block as written, for the config echo.
    """

    experiment: str
    dgp: DgpSpec
    dgp_conf: dict
    method: MethodParams
    replications: Count
    seed: Seed
    output_dir: FilePath
    schema_version: int = SCHEMA_VERSION

    def echo(self) -> dict:
        """Resolved config, enough to rerun the experiment"""
        return {
            "schema_version": self.schema_version,
            "experiment": self.experiment,
            "dgp": self.dgp_conf,
            "method": dataclasses.asdict(self.method),
            "replications": self.replications,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    def bootstrap_config(self, replication: int) -> BootstrapConfig:
        boot_seed = (
            Rng(seed=self.seed)
            .fork(_BOOTSTRAP_STREAM, replication)
            .child_seed()
        )
        return BootstrapConfig(
            scheme=self.method.scheme, B=self.method.B, seed=boot_seed
        )


def _key_line(text: Optional[str], key_path: str) -> int:
    """Line of the last key of `key_path` in the JSON text, 1 if absent"""
    if not text or not key_path:
        return 1
    start = 0
    match = None
    for key in key_path.split("."):
        match = re.compile(rf'"{re.escape(key)}"\s*:').search(text, start)
        if match is None:
            return 1
        start = match.end()
    return text.count("\n", 0, match.start()) + 1


def _is_type(value, expected: type) -> bool:
    if expected is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if expected is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, expected)


def _parse_method(method_conf: dict, text: Optional[str]) -> MethodParams:
    def fail(key: str, message: str):
        path = f"method.{key}"
        raise ConfigError(message, key_path=path, line=_key_line(text, path))

    types = {
        "alpha": float,
        "B": int,
        "scheme": str,
        "weight_mode": str,
        "two_sided": bool,
        "penalty_c": float,
        "lambda_mode": str,
        "lambda_alpha": float,
        "max_outer_iterations": int,
        "tol": float,
        "pp_grid_size": int,
        "sample_sizes": list,
        "homoskedastic": bool,
    }
    for key, value in method_conf.items():
        if key not in types:
            fail(key, "unknown method parameter")
        if not _is_type(value, types[key]):
            fail(key, f"expected {types[key].__name__}, got {value!r}")
    merged = {**_method_defaults(), **method_conf}
    for key in ("alpha", "lambda_alpha"):
        if not (0.0 < merged[key] < 1.0):
            fail(key, f"must lie in (0, 1), got {merged[key]}")
    if merged["scheme"] not in (GAUSSIAN, EMPIRICAL):
        fail("scheme", f"unknown bootstrap scheme {merged['scheme']!r}")
    if merged["weight_mode"] not in ("unit", "inv_sd"):
        fail("weight_mode", f"unknown weight mode {merged['weight_mode']!r}")
    if merged["lambda_mode"] not in (
        "ideal_noise",
        "self_normalized",
        "bootstrap",
    ):
        fail("lambda_mode", f"unknown rule {merged['lambda_mode']!r}")
    for key in ("B", "max_outer_iterations", "pp_grid_size"):
        if merged[key] < 1:
            fail(key, f"must be >= 1, got {merged[key]}")
    sizes = merged.get("sample_sizes")
    if sizes is not None and not (
        sizes and all(_is_type(n, int) and n >= 1 for n in sizes)
    ):
        fail("sample_sizes", f"expected positive integers, got {sizes!r}")
    return MethodParams(**merged)


def parse_config(conf: dict, text: Optional[str] = None) -> ExperimentConfig:
    """Validate a decoded config; `text` locates keys in error messages"""
    if not isinstance(conf, dict):
        raise ConfigError("top level must be a JSON object")
    for key in conf:
        if key not in _REQUIRED_KEYS + _OPTIONAL_KEYS:
            raise ConfigError(
                "unknown top-level key",
                key_path=key,
                line=_key_line(text, key),
            )
    for key in _REQUIRED_KEYS:
        if key not in conf:
            raise ConfigError("missing required key", key_path=key)

    def check(key: str, expected: type):
        if not _is_type(conf[key], expected):
            raise ConfigError(
                f"expected {expected.__name__}, got {conf[key]!r}",
                key_path=key,
                line=_key_line(text, key),
            )

    check("schema_version", int)
    if conf["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema version {conf['schema_version']}",
            key_path="schema_version",
            line=_key_line(text, "schema_version"),
        )
    check("experiment", str)
    check("dgp", dict)
    check("seed", int)
    check("output_dir", str)
    experiment = conf["experiment"]
    if experiment not in EXPERIMENT_VARIANTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}, expected one of"
            f" {sorted(EXPERIMENT_VARIANTS)}",
            key_path="experiment",
            line=_key_line(text, "experiment"),
        )
    if conf["seed"] < 0:
        raise ConfigError(
            "seed must be nonnegative",
            key_path="seed",
            line=_key_line(text, "seed"),
        )
    try:
        spec = DgpSpec.from_dict(conf["dgp"])
    except (DomainError, TypeError) as e:
        raise ConfigError(
            str(e), key_path="dgp", line=_key_line(text, "dgp")
        ) from e
    if spec.variant not in EXPERIMENT_VARIANTS[experiment]:
        raise ConfigError(
            f"{experiment!r} runs on {EXPERIMENT_VARIANTS[experiment]},"
            f" got {spec.variant!r}",
            key_path="dgp.variant",
            line=_key_line(text, "dgp.variant"),
        )
    method_conf = conf.get("method", {})
    if not isinstance(method_conf, dict):
        raise ConfigError(
            "expected an object",
            key_path="method",
            line=_key_line(text, "method"),
        )
    replications = conf.get(
        "replications", get_conf("defaults.yaml")["replications"]
    )
    if not _is_type(replications, int) or replications < 1:
        raise ConfigError(
            f"expected an integer >= 1, got {replications!r}",
            key_path="replications",
            line=_key_line(text, "replications"),
        )
    return ExperimentConfig(
        experiment=experiment,
        dgp=spec,
        dgp_conf=dict(conf["dgp"]),
        method=_parse_method(method_conf=method_conf, text=text),
        replications=replications,
        seed=conf["seed"],
        output_dir=conf["output_dir"],
        schema_version=conf["schema_version"],
    )


def load_config(filepath: FilePath) -> ExperimentConfig:
    """Read and validate a JSON experiment config"""
    with open(filepath, "r") as f:
        text = f.read()
    try:
        conf = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"invalid JSON at column {e.colno}: {e.msg}", line=e.lineno
        ) from e
    return parse_config(conf=conf, text=text)


# ============
# Result table
# ============
@dataclass
class ResultTable:
    """Metrics per replication, with mean and MC standard error rows

    Booleans are stored as 0/1. Aggregates skip NaN entries; se is
    sd / sqrt(count) and NaN with fewer than two values.
    """

    rows: list = field(default_factory=list)

    def add_row(self, metrics: dict):
        self.rows.append(
            {key: float(value) for key, value in metrics.items()}
        )

    def per_replication(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)

    def aggregate(self) -> pd.DataFrame:
        df = self.per_replication()
        mean = df.mean(axis=0)
        se = df.std(axis=0, ddof=1) / np.sqrt(df.count(axis=0))
        return pd.DataFrame([mean, se], index=["mean", "se"])

    def to_df(self) -> pd.DataFrame:
        df = self.per_replication()
        df.insert(0, "replication", [str(r) for r in range(len(df))])
        agg = self.aggregate().reset_index(drop=True)
        agg.insert(0, "replication", ["mean", "se"])
        return pd.concat([df, agg], ignore_index=True)

    def to_csv(self, filepath: FilePath):
        self.to_df().to_csv(filepath, index=False, float_format=FLOAT_FORMAT)


@dataclass
class ExperimentOutput:
    """Metrics, extra CSV tables keyed by file name, and summary numbers"""

    metrics: ResultTable
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


# =======
# Helpers
# =======
def _score_model(dataset: Dataset) -> ScoreModel:
    if dataset.variant == "logistic":
        return LogisticScore(y=dataset.y, W=dataset.W)
    return LinearIVScore(y=dataset.y, W=dataset.W, Z=dataset.Z)


def _rmd_lambda(
    cfg: ExperimentConfig, score: ScoreModel, theta0, replication: int
) -> float:
    """Penalty from the noise of the moments at the truth"""
    params = cfg.method
    n = score.n
    if params.lambda_mode == "ideal_noise":
        return select_lambda(
            mode="ideal_noise",
            alpha=params.lambda_alpha,
            n=n,
            p=score.m,
            sigma=cfg.dgp.sigma,
        )
    prob = MamProblem(
        theta_hat=score.moments(theta0), influence=score.scores(theta0)
    )
    return select_lambda(
        mode=params.lambda_mode,
        alpha=params.lambda_alpha,
        prob=prob,
        cfg=dataclasses.replace(
            cfg.bootstrap_config(replication), scheme=GAUSSIAN
        ),
    )


def _rmd_estimate(
    cfg: ExperimentConfig, score: ScoreModel, lam: float, replication: int
) -> RmdResult:
    """RMD with infeasibility mapped to zero"""
    if score.is_linear:
        result = rmd_linear(score=score, lam=lam)
    else:
        result = rmd_nonlinear(
            score=score,
            cfg=RmdConfig(
                lam=lam,
                max_outer_iterations=cfg.method.max_outer_iterations,
                tol=cfg.method.tol,
            ),
        )
    if result.status == "infeasible":
        logger.warning(f"Replication {replication}: RMD infeasible, use 0")
        result = dataclasses.replace(result, theta_hat=np.zeros(score.p))
    return result


def _nan_on_estimation_failure(replicate):
    """Log an estimation failure and keep the run going

    Rows get a `failed` flag; a failed replication only carries that flag, so
    its other metrics are NaN in the result table.
    """

    @functools.wraps(replicate)
    def guarded(cfg: ExperimentConfig, replication: int) -> dict:
        try:
            metrics = replicate(cfg, replication)
        except _ESTIMATION_ERRORS as e:
            logger.warning(
                f"Replication {replication}: estimation failed, metrics set"
                f" to NaN: {e}"
            )
            return {"failed": True}
        return {"failed": False, **metrics}

    return guarded


def _losses(estimate, theta0, prefix: str) -> dict:
    error = np.asarray(estimate) - theta0
    return {
        f"{prefix}_l1": norm(error, "l1"),
        f"{prefix}_l2": norm(error, "l2"),
        f"{prefix}_linf": norm(error, "linf"),
    }


def _ecdf(samples, grid) -> np.ndarray:
    ordered = np.sort(samples)
    return np.searchsorted(ordered, grid, side="right") / ordered.size


# ===========
# Replication
# ===========
def _pp_replication(cfg: ExperimentConfig, replication: int) -> dict:
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=replication)
    prob = dataset.problem
    error = norm(prob.theta_hat - dataset.theta0, "linf")
    return {"sup_stat": math.sqrt(prob.n) * error}


def _coverage_replication(cfg: ExperimentConfig, replication: int) -> dict:
    params = cfg.method
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=replication)
    prob = dataset.problem
    boot_cfg = cfg.bootstrap_config(replication)
    weights = make_weights(prob=prob, weight_mode=params.weight_mode)
    draws = sup_draws(prob=prob, weights=weights, cfg=boot_cfg)
    band = simultaneous_intervals(
        prob=prob,
        alpha=params.alpha,
        weight_mode=params.weight_mode,
        cfg=boot_cfg,
        draws=draws,
    )
    band_md = simultaneous_intervals_md(prob=prob, alpha=params.alpha)
    sigma_bar = float(np.max(weights * influence_scales(prob)))
    quantile_bound = sigma_bar * std_normal_quantile(
        1.0 - params.alpha / (2.0 * prob.p)
    )
    return {
        "covered": band_covers(band=band, theta0=dataset.theta0),
        "covered_md": band_covers(band=band_md, theta0=dataset.theta0),
        "lambda_hat": band.lambda_used,
        "quantile_bound": quantile_bound,
        "lambda_below_bound": band.lambda_used <= quantile_bound,
        "mean_radius": float(np.mean(band.radius)),
        "mean_radius_md": float(np.mean(band_md.radius)),
    }


def _testing_replication(cfg: ExperimentConfig, replication: int) -> dict:
    params = cfg.method
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=replication)
    prob = dataset.problem
    null_values = np.zeros(prob.p)
    if params.two_sided:
        false_nulls = dataset.theta0 != null_values
    else:
        false_nulls = dataset.theta0 > null_values
    t = t_statistics(prob=prob, null_values=null_values)
    decisions = {
        "bonf": bonferroni(
            t=t, alpha=params.alpha, two_sided=params.two_sided
        ),
        "holm": holm_stepdown(
            t=t, alpha=params.alpha, two_sided=params.two_sided
        ),
        "rw": romano_wolf_stepdown(
            prob=prob,
            null_values=null_values,
            alpha=params.alpha,
            cfg=dataclasses.replace(
                cfg.bootstrap_config(replication), scheme=GAUSSIAN
            ),
            two_sided=params.two_sided,
        ),
        "bh": benjamini_hochberg(
            t=t, alpha=params.alpha, two_sided=params.two_sided
        ),
    }
    n_false_nulls = int(np.sum(false_nulls))
    metrics = {}
    for name, decision in decisions.items():
        rejected = np.zeros(prob.p, dtype=bool)
        rejected[list(decision.rejected)] = True
        n_rejected = int(rejected.sum())
        false_rejections = int(np.sum(rejected & ~false_nulls))
        metrics[f"rejections_{name}"] = n_rejected
        metrics[f"any_false_{name}"] = false_rejections > 0
        metrics[f"fdp_{name}"] = false_rejections / max(n_rejected, 1)
        metrics[f"power_{name}"] = (
            np.sum(rejected & false_nulls) / n_false_nulls
            if n_false_nulls > 0
            else np.nan
        )
    metrics["bonf_within_holm"] = (
        decisions["bonf"].rejected <= decisions["holm"].rejected
    )
    if cfg.experiment == "fdr":
        metrics["max_correlation"] = dependence_diagnostic(prob=prob)
    if replication == 0:
        metrics["_decisions"] = (t, decisions)
    return metrics


def _lq_replication(cfg: ExperimentConfig, replication: int) -> dict:
    params = cfg.method
    model = cfg.dgp.model
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=replication)
    prob, theta0 = dataset.problem, dataset.theta0
    lam = select_lambda(
        mode="ideal_noise",
        alpha=params.alpha,
        n=prob.n,
        p=prob.p,
        sigma=cfg.dgp.sigma,
    )
    soft = soft_threshold(theta_hat=prob.theta_hat, lam=lam)
    selection = selection_threshold(theta_hat=prob.theta_hat, rho=lam)
    sup_ok = norm(prob.theta_hat - theta0, "linf") <= lam
    off_support = theta0 == 0.0
    metrics = {
        "lambda": lam,
        "sup_event": sup_ok,
        "off_support_zero": (not sup_ok)
        or bool(np.all(soft.theta_tilde[off_support] == 0.0)),
    }
    for name, estimate in (("soft", soft), ("selection", selection)):
        losses = _losses(estimate.theta_tilde, theta0, prefix=name)
        metrics.update(losses)
        for q, loss in ((1, losses[f"{name}_l1"]), (2, losses[f"{name}_l2"])):
            try:
                bound = theoretical_error_bound(model=model, lam=lam, q=q)
            except DomainError:
                bound = np.nan
            metrics[f"{name}_within_l{q}_bound"] = (
                loss <= bound if np.isfinite(bound) else np.nan
            )
    return metrics


@_nan_on_estimation_failure
def _rmd_replication(cfg: ExperimentConfig, replication: int) -> dict:
    sizes = cfg.method.sample_sizes or [cfg.dgp.n]
    metrics = {}
    for n in sizes:
        spec = dataclasses.replace(cfg.dgp, n=n)
        dataset = generate(spec=spec, seed=cfg.seed, replication=replication)
        score = _score_model(dataset)
        lam = _rmd_lambda(
            cfg=cfg,
            score=score,
            theta0=dataset.theta0,
            replication=replication,
        )
        result = _rmd_estimate(
            cfg=cfg, score=score, lam=lam, replication=replication
        )
        metrics.update(
            _losses(result.theta_hat, dataset.theta0, prefix=f"n{n}")
        )
        metrics[f"n{n}_lambda"] = lam
        metrics[f"n{n}_optimal"] = result.status == "optimal"
        metrics[f"n{n}_iterations"] = result.iterations
    return metrics


def _iv_oracle(
    dataset: Dataset, theta0, homoskedastic: bool
) -> Optional[RemainderOracle]:
    extras = dataset.extras
    if "G0" not in extras:
        return None
    G0 = extras["G0"]
    omega0 = extras["EZZ0"] if homoskedastic else extras["Omega0"]
    gamma0 = G0.T @ np.linalg.inv(omega0)
    return RemainderOracle(
        theta0=theta0, gamma0=gamma0, mu0=np.linalg.inv(gamma0 @ G0)
    )


@_nan_on_estimation_failure
def _drgmm_replication(cfg: ExperimentConfig, replication: int) -> dict:
    params = cfg.method
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=replication)
    theta0 = dataset.theta0
    score = _score_model(dataset)
    lam = _rmd_lambda(
        cfg=cfg, score=score, theta0=theta0, replication=replication
    )
    gamma_omega = None
    if params.homoskedastic and dataset.Z is not None:
        gamma_omega = dataset.Z.T @ dataset.Z / dataset.Z.shape[0]
    result = drgmm_pipeline(
        score=score,
        rmd_cfg=RmdConfig(
            lam=lam,
            max_outer_iterations=params.max_outer_iterations,
            tol=params.tol,
        ),
        gamma_omega=gamma_omega,
        penalty_c=params.penalty_c,
        oracle=_iv_oracle(
            dataset=dataset,
            theta0=theta0,
            homoskedastic=gamma_omega is not None,
        ),
    )
    z = std_normal_quantile(1.0 - params.alpha / 2.0)
    se = result.standard_errors()
    covered = np.abs(result.theta_check - theta0) <= z * se
    band = simultaneous_intervals(
        prob=result.to_mam_problem(),
        alpha=params.alpha,
        weight_mode="inv_sd",
        cfg=cfg.bootstrap_config(replication),
    )
    metrics = {
        "rmd_optimal": result.rmd_status == "optimal",
        "covered_band": band_covers(band=band, theta0=theta0),
        **_losses(result.theta_hat, theta0, prefix="rmd"),
        **_losses(result.theta_check, theta0, prefix="drgmm"),
    }
    for j in range(theta0.size):
        metrics[f"covered_{j}"] = covered[j]
        metrics[f"bias_rmd_{j}"] = result.theta_hat[j] - theta0[j]
        metrics[f"bias_drgmm_{j}"] = result.theta_check[j] - theta0[j]
    if result.remainder is not None:
        metrics["r1"] = result.remainder.r1
        metrics["r2"] = result.remainder.r2
        metrics["r3"] = result.remainder.r3
    return metrics


_REPLICATIONS = {
    "pp_data": _pp_replication,
    "coverage": _coverage_replication,
    "fwer": _testing_replication,
    "fdr": _testing_replication,
    "lq_bounds": _lq_replication,
    "rmd_rates": _rmd_replication,
    "drgmm_inference": _drgmm_replication,
}


# =========
# Summaries
# =========
def _gaussian_limit_draws(
    cfg: ExperimentConfig, dataset: Dataset, n_draws: Count
) -> np.ndarray:
    """sup-norm of N(0, V W'W / n) draws, V the noise variance"""
    W = dataset.W
    n = W.shape[0]
    scaling = math.sqrt(dataset.extras["noise_variance"] / n)
    rng = Rng(seed=cfg.seed).fork(_GAUSSIAN_LIMIT_STREAM)
    sups = []
    for start in range(0, n_draws, _LIMIT_CHUNK_SIZE):
        size = min(_LIMIT_CHUNK_SIZE, n_draws - start)
        block = rng.standard_normal(size=(size, n)) @ W * scaling
        sups.append(np.max(np.abs(block), axis=1))
    return np.concatenate(sups)


def _pp_curve(cfg: ExperimentConfig, stats: np.ndarray) -> tuple:
    """P-P curve of the sup statistic and its largest upper-tail gaps

    Both bootstraps resample the sample of replication 0.
    """
    dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=0)
    prob = dataset.problem
    weights = np.ones(prob.p)
    boot_cfg = cfg.bootstrap_config(0)
    approximations = {
        "gaussian": _gaussian_limit_draws(
            cfg=cfg,
            dataset=dataset,
            n_draws=max(cfg.replications, cfg.method.B),
        ),
    }
    for scheme in (GAUSSIAN, EMPIRICAL):
        draws = sup_draws(
            prob=prob,
            weights=weights,
            cfg=dataclasses.replace(boot_cfg, scheme=scheme),
        )
        approximations[f"{scheme}_bootstrap"] = draws.values
    grid = np.linspace(
        float(np.min(stats)), float(np.max(stats)), cfg.method.pp_grid_size
    )
    curve = pd.DataFrame({"x": grid, "empirical": _ecdf(stats, grid)})
    tail = grid >= float(np.quantile(stats, _PP_TAIL_LEVEL))
    gaps = {}
    for name, samples in approximations.items():
        curve[name] = _ecdf(samples, grid)
        gaps[f"max_gap_{name}"] = float(
            np.max(np.abs(curve["empirical"] - curve[name]).to_numpy()[tail])
        )
    return curve, gaps


def _decisions_table(rows: list) -> dict:
    """Decisions of replication 0, dropped from the metric rows"""
    t, decisions = rows[0].pop("_decisions")
    return {
        "decisions.csv": decisions_to_df(
            t=t,
            bonferroni=decisions["bonf"],
            holm=decisions["holm"],
            romano_wolf=decisions["rw"],
            bh=decisions["bh"],
        )
    }


# ====
# Core
# ====
def run_experiment(
    cfg: ExperimentConfig, n_jobs: int = 1, progress: bool = True
) -> ExperimentOutput:
    """Run all replications and build the output tables

    Args:
        cfg (ExperimentConfig): validated config
        n_jobs (int): joblib workers over replications
        progress (bool): show a progress bar over replications

    Returns:
        ExperimentOutput
    """
    replicate = _REPLICATIONS[cfg.experiment]
    logger.info(
        f"Run {cfg.experiment} on {cfg.dgp.variant} with"
        f" {cfg.replications} replications, {n_jobs=}"
    )
    indices = tqdm(range(cfg.replications), disable=not progress)
    if n_jobs == 1:
        rows = [replicate(cfg, r) for r in indices]
    else:
        rows = joblib.Parallel(n_jobs=n_jobs)(
            joblib.delayed(replicate)(cfg, r) for r in indices
        )
    output = ExperimentOutput(metrics=ResultTable())
    if cfg.experiment in ("fwer", "fdr"):
        output.tables.update(_decisions_table(rows))
    for row in rows:
        output.metrics.add_row(row)
    if cfg.experiment == "pp_data":
        stats = output.metrics.per_replication()["sup_stat"].to_numpy()
        curve, gaps = _pp_curve(cfg=cfg, stats=stats)
        output.tables["pp_curve.csv"] = curve
        output.summary.update(gaps)
    elif cfg.experiment == "coverage":
        dataset = generate(spec=cfg.dgp, seed=cfg.seed, replication=0)
        band = simultaneous_intervals(
            prob=dataset.problem,
            alpha=cfg.method.alpha,
            weight_mode=cfg.method.weight_mode,
            cfg=cfg.bootstrap_config(0),
        )
        output.tables["bands.csv"] = band_to_df(band)
    elif cfg.experiment == "rmd_rates":
        output.summary.update(_rate_ratios(cfg=cfg, table=output.metrics))
    for key, value in output.summary.items():
        logger.info(f"{key}: {value:.4g}")
    return output


def _median(df: pd.DataFrame, column: str) -> float:
    """NaN when every replication failed and the column is missing"""
    if column not in df:
        return np.float64(np.nan)
    return np.float64(df[column].median())


def _rate_ratios(cfg: ExperimentConfig, table: ResultTable) -> dict:
    """Ratios of median l2 errors between consecutive sample sizes"""
    sizes = cfg.method.sample_sizes or [cfg.dgp.n]
    df = table.per_replication()
    ratios = {}
    for small, large in zip(sizes[:-1], sizes[1:]):
        ratio = _median(df, f"n{small}_l2") / _median(df, f"n{large}_l2")
        ratios[f"median_l2_ratio_n{small}_n{large}"] = float(ratio)
    return ratios


def write_outputs(
    cfg: ExperimentConfig, output: ExperimentOutput, folder: FilePath
) -> list:
    """Write metrics.csv, config_echo.json and the extra tables

    Returns:
        list: paths of the written files
    """
    os.makedirs(folder, exist_ok=True)
    paths = [os.path.join(folder, "metrics.csv")]
    output.metrics.to_csv(paths[0])
    echo = {**cfg.echo(), "summary": output.summary}
    paths.append(os.path.join(folder, "config_echo.json"))
    with open(paths[-1], "w") as f:
        json.dump(echo, f, indent=2, sort_keys=True)
    for filename, table in output.tables.items():
        path = os.path.join(folder, filename)
        table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        paths.append(path)
    for path in paths:
        logger.info(f"Wrote {path}")
    return paths
