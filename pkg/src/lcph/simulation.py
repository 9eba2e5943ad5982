"""Simulation scenarios, replicate studies and their summary metrics.

Five benchmark scenarios vary the censoring intensity, class overlap and
number of classes. Event times are drawn by inverting the class-specific
distribution function F(t) = 1 - exp{0.1(1 - e^t) * relative_risk}, whose
cumulative baseline hazard is 0.1(e^t - 1). Censoring is the minimum of an
exponential and a Uniform(5, 6) administrative cutoff.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, ModelConfig
from .em import fit, labels_to_weights
from .errors import FitError
from .inference import covariance, nonconvergence_flag, wald_intervals
from .likelihood import design_tensor, log_membership_matrix
from .prediction import cv_brier_folds
from .selection import criteria, select_L

__all__ = [
    "ScenarioSpec",
    "scenario",
    "load_scenario",
    "SCENARIO_IDS",
    "generate",
    "perturbed_truth_weights",
    "theta_names",
    "ReplicateSummary",
    "run_replicates",
    "run_selection_study",
    "run_brier_study",
]

log = logging.getLogger(__name__)

BASELINE_RATE = 0.1


@dataclass(frozen=True)
class ScenarioSpec:
    """Parameters of one simulation scenario (two covariates, both submodels)."""

    id: str
    L_true: int
    censor_rate: float
    alpha_true: np.ndarray  # (L-1, 3): intercept, x1, x2 per non-reference class
    gamma_true: np.ndarray  # stacked survival coefficients
    n: int = 1000
    seed: int = 0
    t_star: float = 5.0

    def __post_init__(self):
        object.__setattr__(
            self, "alpha_true", np.atleast_2d(np.asarray(self.alpha_true, dtype=float))
        )
        object.__setattr__(
            self, "gamma_true", np.asarray(self.gamma_true, dtype=float)
        )
        if self.alpha_true.shape != (self.L_true - 1, 3):
            raise ValueError("alpha_true must have shape (L_true-1, 3)")
        expected = 2 * self.L_true + self.L_true - 1
        if self.gamma_true.shape != (expected,):
            raise ValueError(f"gamma_true must have length {expected}")

    @property
    def theta_true(self) -> np.ndarray:
        return np.concatenate([self.alpha_true.ravel(), self.gamma_true])

    def model_config(self, **kwargs) -> ModelConfig:
        base = dict(num_classes=self.L_true, seed=self.seed)
        base.update(kwargs)
        return ModelConfig(**base)

    def with_options(self, **kwargs) -> "ScenarioSpec":
        return replace(self, **kwargs)


def _spec(id, L, r, alpha, gamma, t_star=5.0):
    return ScenarioSpec(
        id=id,
        L_true=L,
        censor_rate=r,
        alpha_true=np.array(alpha),
        gamma_true=np.array(gamma),
        t_star=t_star,
    )


_REGISTRY = {
    "I": _spec("I", 2, 0.1, [[np.log(2.0), 0.0, 0.0]], [-2, 0, 2, 2, 2]),
    "II": _spec("II", 2, 0.1, [[np.log(2.0), 0.0, 0.0]], [-2, 0, 0, 2, 2]),
    "III": _spec("III", 2, 0.6, [[np.log(2.0), 0.0, 0.0]], [-2, 0, 2, 2, 2]),
    "IV": _spec("IV", 2, 0.1, [[2.0, -4.0, 0.0]], [0, -3, 0.5, 0, 6]),
    "V": _spec(
        "V",
        3,
        0.1,
        [[0.0, -0.5, 0.0], [0.0, 0.0, 0.5]],
        [-2, -2, 2, 2, 2, 4, 4, 4],
        t_star=5.75,
    ),
}

SCENARIO_IDS = tuple(_REGISTRY)


def scenario(id: str, n: int = 1000, seed: int = 0) -> ScenarioSpec:
    """Look up a benchmark scenario, overriding sample size and seed."""
    key = str(id).upper()
    if key not in _REGISTRY:
        raise KeyError(f"unknown scenario {id!r}; choose from {SCENARIO_IDS}")
    return _REGISTRY[key].with_options(n=n, seed=seed)


def load_scenario(path, n: int | None = None, seed: int | None = None) -> ScenarioSpec:
    """Read a scenario specification from a JSON file.

    Required keys: ``id``, ``L_true``, ``censor_rate``, ``alpha_true`` (a
    (L_true-1) x 3 nested list), ``gamma_true``. Optional: ``n``, ``seed``,
    ``t_star``. Function arguments override the file's values.
    """
    import json
    from pathlib import Path

    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = ScenarioSpec(
        id=str(payload["id"]),
        L_true=int(payload["L_true"]),
        censor_rate=float(payload["censor_rate"]),
        alpha_true=np.array(payload["alpha_true"], dtype=float),
        gamma_true=np.array(payload["gamma_true"], dtype=float),
        n=int(payload.get("n", 1000)),
        seed=int(payload.get("seed", 0)),
        t_star=float(payload.get("t_star", 5.0)),
    )
    overrides = {}
    if n is not None:
        overrides["n"] = n
    if seed is not None:
        overrides["seed"] = seed
    return spec.with_options(**overrides) if overrides else spec


def true_cumulative_hazard(t) -> np.ndarray:
    """Baseline cumulative hazard of the generating model, 0.1(e^t - 1)."""
    return BASELINE_RATE * np.expm1(np.asarray(t, dtype=float))


def generate(spec: ScenarioSpec, rng=None) -> tuple[Dataset, np.ndarray]:
    """Draw one dataset plus the hidden class labels.

    Covariates are a fair coin and a Uniform(0, 1) draw; labels follow the
    membership submodel; event times invert the class-specific distribution
    function; censoring is min(Exponential(rate), Uniform(5, 6)).
    """
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    n, L = spec.n, spec.L_true
    x1 = rng.binomial(1, 0.5, size=n).astype(float)
    x2 = rng.uniform(0.0, 1.0, size=n)
    X = np.column_stack([x1, x2])
    x_mem = np.column_stack([np.ones(n), X])
    probs = np.exp(log_membership_matrix(x_mem, spec.alpha_true))
    u = rng.uniform(size=n)
    labels = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    eta = design_tensor(X, L) @ spec.gamma_true  # (L, n)
    eta_own = eta[labels, np.arange(n)]
    unit_expo = rng.exponential(1.0, size=n)
    T = np.log1p(unit_expo / (BASELINE_RATE * np.exp(eta_own)))
    C = np.minimum(
        rng.exponential(1.0 / spec.censor_rate, size=n),
        rng.uniform(5.0, 6.0, size=n),
    )
    times = np.minimum(T, C)
    status = (T <= C).astype(int)
    return Dataset(times, status, X, ["x1", "x2"]), labels


def perturbed_truth_weights(labels: np.ndarray, L: int) -> np.ndarray:
    """Initial weights putting 0.9 on each subject's true class."""
    return labels_to_weights(labels, L, confidence=0.9)


def theta_names(L: int, pm: int, q: int) -> list[str]:
    """Coordinate names for the stacked coefficient vector.

    Membership coefficients are ``alpha_<class>_<j>`` with j=0 the
    intercept; survival coefficients are ``zeta_1_<k>`` for the reference
    effects and ``a_<class>``, ``zeta_<class>_<k>`` for each later class.
    """
    names = [
        f"alpha_{l}_{j}" for l in range(2, L + 1) for j in range(pm + 1)
    ]
    names += [f"zeta_1_{k}" for k in range(1, q + 1)]
    for l in range(2, L + 1):
        names.append(f"a_{l}")
        names += [f"zeta_{l}_{k}" for k in range(1, q + 1)]
    return names


@dataclass
class ReplicateSummary:
    """Aggregated estimation metrics across simulation replicates."""

    scenario: str
    n: int
    replicates: int
    parameter_names: list[str]
    truth: np.ndarray
    median_bias: np.ndarray
    empirical_sd: np.ndarray
    median_see: np.ndarray | None
    coverage: np.ndarray | None
    convergence_rate: float
    median_entropy: float
    median_censoring: float
    baseline_at: dict
    n_failed: int
    raw: dict = field(default_factory=dict)


def _estimation_replicate(args):
    spec, rep, init_mode, compute_cov, level, max_iterations = args
    rng = np.random.default_rng([spec.seed, rep])
    data, labels = generate(spec, rng)
    config = spec.model_config(
        max_iterations=max_iterations,
        seed=spec.seed + rep,
        initialization="random" if init_mode == "random" else "kmeans",
    )
    supplied = (
        perturbed_truth_weights(labels, spec.L_true)
        if init_mode == "perturbed"
        else None
    )
    out = {
        "rep": rep,
        "censoring": 1.0 - data.status.mean(),
        "ok": False,
    }
    try:
        state = fit(data, config, initial_weights=supplied)
    except FitError as exc:
        out["error"] = str(exc)
        return out
    report = criteria(state, data, config)
    out.update(
        ok=True,
        converged=state.converged,
        theta=state.params.pack(),
        entropy=report.entropy_index,
        baseline_at_3=float(state.params.baseline(3.0)),
        iterations=state.iteration,
    )
    if compute_cov and state.converged:
        try:
            cov = covariance(data, state, config)
            ci = wald_intervals(cov, level)
            out["see"] = cov.standard_errors
            out["ci"] = ci
        except FitError as exc:
            out["cov_error"] = str(exc)
    return out


def _map_replicates(worker, argument_list, n_jobs: int):
    if n_jobs <= 1:
        return [worker(args) for args in argument_list]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(worker, argument_list, chunksize=1))


def run_replicates(
    spec: ScenarioSpec,
    R: int,
    init_mode: str = "perturbed",
    compute_covariance: bool = True,
    level: float = 0.95,
    max_iterations: int = 2000,
    n_jobs: int = 1,
) -> ReplicateSummary:
    """Fit ``R`` simulated replicates and aggregate estimation metrics.

    Outlying estimates are flagged by the median-plus-5-MAD distance rule
    and excluded from the bias/SD/SEE/coverage summaries; the convergence
    rate counts unflagged, successfully fitted replicates. Aborts if more
    than half the replicates fail outright.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    if init_mode not in ("perturbed", "kmeans", "random"):
        raise ValueError(f"unknown init_mode {init_mode!r}")
    argument_list = [
        (spec, rep, init_mode, compute_covariance, level, max_iterations)
        for rep in range(R)
    ]
    results = _map_replicates(_estimation_replicate, argument_list, n_jobs)
    failures = [res for res in results if not res["ok"]]
    if len(failures) > 0.5 * R:
        raise FitError(
            f"{len(failures)} of {R} replicates failed to fit; "
            f"first error: {failures[0].get('error')}"
        )
    completed = [res for res in results if res["ok"]]
    truth = spec.theta_true
    thetas = np.array([res["theta"] for res in completed])
    flags = nonconvergence_flag(thetas, truth)
    kept = np.flatnonzero(~flags)
    kept_thetas = thetas[kept]
    bias = kept_thetas - truth[None, :]
    median_bias = np.median(bias, axis=0)
    empirical_sd = kept_thetas.std(axis=0, ddof=1)

    median_see = coverage = None
    if compute_covariance:
        sees, covers = [], []
        for j in kept:
            res = completed[j]
            if "see" not in res:
                continue
            sees.append(res["see"])
            lo, hi = res["ci"][:, 0], res["ci"][:, 1]
            covers.append((lo <= truth) & (truth <= hi))
        if sees:
            median_see = np.median(np.array(sees), axis=0)
            coverage = np.array(covers).mean(axis=0)

    lambda3_true = float(true_cumulative_hazard(3.0))
    lambda3 = np.array([completed[j]["baseline_at_3"] for j in kept])
    names = theta_names(spec.L_true, 2, 2)
    convergence_rate = len(kept) / R
    return ReplicateSummary(
        scenario=spec.id,
        n=spec.n,
        replicates=R,
        parameter_names=names,
        truth=truth,
        median_bias=median_bias,
        empirical_sd=empirical_sd,
        median_see=median_see,
        coverage=coverage,
        convergence_rate=convergence_rate,
        median_entropy=float(np.median([res["entropy"] for res in completed])),
        median_censoring=float(np.median([res["censoring"] for res in results])),
        baseline_at={
            "time": 3.0,
            "truth": lambda3_true,
            "median_bias": float(np.median(lambda3 - lambda3_true)),
            "empirical_sd": float(lambda3.std(ddof=1)) if len(lambda3) > 1 else 0.0,
        },
        n_failed=len(failures),
        raw={
            "thetas": thetas,
            "flags": flags,
            "results": results,
        },
    )


def _selection_replicate(args):
    spec, rep, L_range, restarts, max_iterations = args
    rng = np.random.default_rng([spec.seed, rep])
    data, _ = generate(spec, rng)
    config = ModelConfig(
        num_classes=2,
        max_iterations=max_iterations,
        initialization="kmeans",
        seed=spec.seed + rep,
    )
    try:
        best_by, reports = select_L(data, config, L_range, restarts=restarts)
    except FitError as exc:
        return {"rep": rep, "ok": False, "error": str(exc)}
    return {
        "rep": rep,
        "ok": True,
        "best_by": best_by,
        "table": [
            {
                "L": rep_.L,
                "loglik": rep_.loglik,
                "aic": rep_.aic,
                "bic": rep_.bic,
                "icl_bic": rep_.icl_bic,
                "entropy_index": rep_.entropy_index,
            }
            for rep_ in reports
        ],
    }


def run_selection_study(
    spec: ScenarioSpec,
    R: int,
    L_range=(2, 3, 4),
    restarts: int = 0,
    max_iterations: int = 2000,
    n_jobs: int = 1,
) -> dict:
    """Fraction of replicates on which each criterion selects each L."""
    if R < 1:
        raise ValueError("R must be >= 1")
    argument_list = [(spec, rep, tuple(L_range), restarts, max_iterations) for rep in range(R)]
    results = _map_replicates(_selection_replicate, argument_list, n_jobs)
    completed = [res for res in results if res["ok"]]
    if not completed:
        raise FitError("every selection replicate failed")
    frequencies: dict[str, dict[int, float]] = {}
    for criterion in ("aic", "bic", "icl_bic", "entropy_index"):
        counts = {int(L): 0 for L in L_range}
        for res in completed:
            counts[res["best_by"][criterion]] += 1
        frequencies[criterion] = {
            L: counts[L] / len(completed) for L in counts
        }
    return {
        "scenario": spec.id,
        "replicates": len(completed),
        "failed": len(results) - len(completed),
        "frequencies": frequencies,
        "results": results,
    }


def _brier_replicate(args):
    spec, rep, L_fit, folds, grid, max_iterations = args
    rng = np.random.default_rng([spec.seed, rep])
    data, _ = generate(spec, rng)
    config = ModelConfig(
        num_classes=L_fit,
        max_iterations=max_iterations,
        initialization="kmeans",
        seed=spec.seed + rep,
    )
    try:
        result = cv_brier_folds(
            data,
            config,
            folds=folds,
            grid=grid,
            seed=spec.seed + rep,
        )
    except FitError as exc:
        return {"rep": rep, "ok": False, "error": str(exc)}
    return {
        "rep": rep,
        "ok": True,
        "latent_class": result["latent_class"],
        "competitor": result["competitor"],
        "folds_used": result["folds_used"],
    }


def default_brier_grid(spec: ScenarioSpec, step: float = 0.25) -> np.ndarray:
    """Common evaluation grid (0, t*] shared by all replicates of a study."""
    return np.arange(step, spec.t_star + 1e-9, step)


def run_brier_study(
    spec: ScenarioSpec,
    R: int,
    L_fit: int | None = None,
    folds: int = 5,
    grid=None,
    max_iterations: int = 2000,
    n_jobs: int = 1,
) -> dict:
    """Cross-validated Brier comparison of the latent class and Cox models.

    Returns the common grid, per-replicate fold-averaged curves for both
    models, and their across-replicate medians.
    """
    if L_fit is None:
        L_fit = spec.L_true
    if grid is None:
        grid = default_brier_grid(spec)
    grid = np.asarray(grid, dtype=float)
    argument_list = [
        (spec, rep, L_fit, folds, grid, max_iterations) for rep in range(R)
    ]
    results = _map_replicates(_brier_replicate, argument_list, n_jobs)
    completed = [res for res in results if res["ok"]]
    if not completed:
        raise FitError("every Brier replicate failed")
    out = {
        "scenario": spec.id,
        "grid": grid,
        "replicates": len(completed),
        "failed": len(results) - len(completed),
        "results": results,
    }
    for name in ("latent_class", "competitor"):
        out[f"{name}_bs1"] = np.array([res[name].bs1 for res in completed])
        out[f"{name}_bs2"] = np.array([res[name].bs2 for res in completed])
        out[f"{name}_median_bs1"] = np.nanmedian(out[f"{name}_bs1"], axis=0)
        out[f"{name}_median_bs2"] = np.nanmedian(out[f"{name}_bs2"], axis=0)
    return out
