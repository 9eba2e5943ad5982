"""Survival prediction and time-dependent Brier score assessment.

Two Brier estimators are provided: the data-based one reweights observed
residuals by the inverse censoring survival probability, while the
model-based one redistributes each censored subject's residual across the
two possible outcomes using the model's own conditional survival ratio.
Both reduce to the raw mean squared residual on fully uncensored data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ModelConfig, Parameters
from .em import fit
from .errors import FitError
from .likelihood import design_tensor, log_membership_matrix

__all__ = [
    "SurvivalCurve",
    "BrierCurve",
    "predicted_survival",
    "survival_matrix",
    "kaplan_meier",
    "brier_scores",
    "cross_validated_brier",
    "cv_brier_folds",
]

log = logging.getLogger(__name__)


class SurvivalCurve:
    """Right-continuous step estimate of a survival function."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-d of equal length")
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(values < -1e-12) or np.any(values > 1.0 + 1e-12):
            raise ValueError("values must lie in [0, 1]")
        if times.size and np.any(np.diff(values) > 1e-12):
            raise ValueError("values must be nonincreasing")
        self.times = times
        self.values = np.clip(values, 0.0, 1.0)

    def _evaluate(self, t, side):
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            out = np.ones_like(t)
        else:
            idx = np.searchsorted(self.times, t, side=side)
            out = np.where(idx > 0, self.values[np.maximum(idx - 1, 0)], 1.0)
        return float(out) if out.ndim == 0 else out

    def __call__(self, t):
        """Evaluate S(t); 1 before the first step time."""
        return self._evaluate(t, "right")

    def left_limit(self, t):
        """Evaluate S(t-); 1 at or before the first step time."""
        return self._evaluate(t, "left")


@dataclass
class BrierCurve:
    """Data-based and model-based Brier scores on an evaluation grid.

    Undefined points (censoring survival mass exhausted) are NaN, not zero.
    """

    times: np.ndarray
    bs1: np.ndarray
    bs2: np.ndarray
    folds: int = 1
    metadata: dict = field(default_factory=dict)


def predicted_survival(x, t, params: Parameters, config: ModelConfig):
    """Mixture-averaged survival probability at time ``t`` for covariates ``x``.

    Class probabilities weight the class-specific exponential survival terms;
    at t=0 the value is exactly 1.
    """
    x = np.asarray(x, dtype=float)
    single_x = x.ndim == 1
    X = np.atleast_2d(x)
    t_arr = np.asarray(t, dtype=float)
    single_t = t_arr.ndim == 0
    grid = np.atleast_1d(t_arr)
    if np.any(grid < 0):
        raise ValueError("t must be >= 0")
    S = survival_matrix(grid, X, params, config)
    if single_x and single_t:
        return float(S[0, 0])
    if single_x:
        return S[0]
    if single_t:
        return S[:, 0]
    return S


def survival_matrix(times, X, params: Parameters, config: ModelConfig) -> np.ndarray:
    """Predicted survival probabilities, shape (n_subjects, n_times)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    times = np.atleast_1d(np.asarray(times, dtype=float))
    p = X.shape[1]
    mem_idx = config.membership_indices(p)
    surv_idx = config.survival_indices(p)
    x_mem = np.column_stack([np.ones(X.shape[0]), X[:, mem_idx]])
    probs = np.exp(log_membership_matrix(x_mem, params.alpha))  # (n, L)
    Z = design_tensor(X[:, surv_idx], config.num_classes)  # (L, n, d)
    eta = (Z @ params.gamma).T  # (n, L)
    cumhaz = np.asarray(params.baseline(times))  # (k,)
    with np.errstate(over="ignore"):
        class_surv = np.exp(-cumhaz[None, :, None] * np.exp(eta)[:, None, :])
    S = np.clip(np.einsum("il,itl->it", probs, class_surv), 0.0, 1.0)
    # zero accumulated hazard means survival exactly one, free of the
    # rounding in the mixture weights
    S[:, cumhaz == 0.0] = 1.0
    return S


def kaplan_meier(data: Dataset, target: str = "event") -> SurvivalCurve:
    """Product-limit estimator of the event or censoring survival function.

    ``target="censoring"`` flips the status indicator, giving the reverse
    estimator used for inverse-probability-of-censoring weights.
    """
    if target not in ("event", "censoring"):
        raise ValueError("target must be 'event' or 'censoring'")
    status = data.status if target == "event" else 1 - data.status
    times = data.times
    order = np.argsort(times, kind="stable")
    sorted_times = times[order]
    sorted_status = status[order]
    distinct, start = np.unique(sorted_times, return_index=True)
    n = len(times)
    at_risk = n - start
    events = np.add.reduceat(sorted_status, start)
    keep = events > 0
    if not np.any(keep):
        return SurvivalCurve(np.empty(0), np.empty(0))
    factors = 1.0 - events[keep] / at_risk[keep]
    return SurvivalCurve(distinct[keep], np.cumprod(factors))


def brier_scores(
    test_data: Dataset,
    model_predictor,
    G_hat: SurvivalCurve,
    grid,
) -> BrierCurve:
    """Single-fold Brier score curves on an evaluation grid.

    ``model_predictor(times, X)`` must return predicted survival
    probabilities of shape (n, len(times)). The censoring survival enters
    the event-residual weights through its left limit at the follow-up time.
    Grid points where the censoring survival is zero are reported as NaN.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    times = test_data.times
    status = test_data.status
    n = test_data.n
    S_grid = np.asarray(model_predictor(grid, test_data.covariates))
    S_own = _predict_own(model_predictor, test_data)
    G_grid = np.asarray(G_hat(grid))
    G_left = np.asarray(G_hat.left_limit(times))

    bs1 = np.empty(len(grid))
    bs2 = np.empty(len(grid))
    event_mask = status == 1
    for j, t in enumerate(grid):
        surv = S_grid[:, j]
        alive = times > t
        dead = event_mask & (times <= t)
        censored_before = (~event_mask) & (times <= t)

        if G_grid[j] <= 0.0:
            bs1[j] = np.nan
        else:
            terms = np.zeros(n)
            terms[alive] = (1.0 - surv[alive]) ** 2 / G_grid[j]
            with np.errstate(divide="ignore"):
                weights = np.where(G_left > 0, 1.0 / G_left, np.nan)
            terms[dead] = surv[dead] ** 2 * weights[dead]
            bs1[j] = float(np.mean(terms))

        terms2 = np.zeros(n)
        terms2[alive] = (1.0 - surv[alive]) ** 2
        terms2[dead] = surv[dead] ** 2
        if np.any(censored_before):
            ratio = _conditional_survival_ratio(
                surv[censored_before], S_own[censored_before]
            )
            terms2[censored_before] = (1.0 - surv[censored_before]) ** 2 * ratio + surv[
                censored_before
            ] ** 2 * (1.0 - ratio)
        bs2[j] = float(np.mean(terms2))
    return BrierCurve(times=grid, bs1=bs1, bs2=bs2, folds=1)


def _predict_own(model_predictor, data: Dataset) -> np.ndarray:
    """Each subject's predicted survival at its own follow-up time."""
    distinct, inverse = np.unique(data.times, return_inverse=True)
    S = np.asarray(model_predictor(distinct, data.covariates))
    return S[np.arange(data.n), inverse]


def _conditional_survival_ratio(s_t: np.ndarray, s_followup: np.ndarray) -> np.ndarray:
    """S(t|x)/S(followup|x), falling back to the crisp limit at mass zero."""
    ratio = np.empty_like(s_t)
    ok = s_followup > 0
    ratio[ok] = np.clip(s_t[ok] / s_followup[ok], 0.0, 1.0)
    if np.any(~ok):
        log.warning(
            "%d censored subjects have zero predicted survival at follow-up; "
            "their redistributed residuals use the uncensored limit",
            int((~ok).sum()),
        )
        ratio[~ok] = 0.0
    return ratio


def _stratified_folds(status: np.ndarray, folds: int, rng) -> np.ndarray:
    """Fold labels stratified on the event indicator."""
    assignment = np.empty(len(status), dtype=int)
    for value in (0, 1):
        idx = np.flatnonzero(status == value)
        idx = rng.permutation(idx)
        assignment[idx] = np.arange(len(idx)) % folds
    return assignment


def model_predictor_from(params: Parameters, config: ModelConfig):
    """Bind a fitted model into the (times, X) -> survival-matrix interface."""

    def predictor(times, X):
        return survival_matrix(times, X, params, config)

    return predictor


def _cv_fold(args):
    data, assignment, f, config, competitor, grid = args
    train = data.subset(assignment != f)
    test = data.subset(assignment == f)
    try:
        G_hat = kaplan_meier(test, target="censoring")
        record = {"fold": f}
        for name, cfg in (("latent_class", config), ("competitor", competitor)):
            state = fit(train, cfg)
            predictor = model_predictor_from(state.params, cfg)
            record[name] = brier_scores(test, predictor, G_hat, grid)
        return record
    except FitError as exc:
        log.warning("fold %d skipped: %s", f, exc)
        return None


def cv_brier_folds(
    data: Dataset,
    config: ModelConfig,
    folds: int = 5,
    grid=None,
    competitor: ModelConfig | None = None,
    seed: int = 0,
    n_jobs: int = 1,
) -> dict:
    """Cross-validated Brier curves for the model and a competitor.

    Fits on each training split, scores on the held-out split with the
    censoring survival estimated from that split. Fold assignment is a
    seeded permutation stratified on the event indicator; folds may run in
    parallel processes (``n_jobs``). Failed training fits skip the fold;
    fewer than three surviving folds is an error.

    Returns a dict with the grid, per-fold curves and fold-averaged curves
    for both models, plus scoring metadata.
    """
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if competitor is None:
        competitor = config.with_classes(1)
    if grid is None:
        grid = data.event_times()
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    rng = np.random.default_rng(seed)
    assignment = _stratified_folds(data.status, folds, rng)
    argument_list = [
        (data, assignment, f, config, competitor, grid) for f in range(folds)
    ]
    if n_jobs <= 1:
        records = [_cv_fold(args) for args in argument_list]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            records = list(pool.map(_cv_fold, argument_list, chunksize=1))
    per_fold = [rec for rec in records if rec is not None]
    skipped = folds - len(per_fold)
    if len(per_fold) < 3:
        raise FitError(
            f"only {len(per_fold)} folds fitted successfully (need >= 3)"
        )
    result = {
        "grid": grid,
        "per_fold": per_fold,
        "folds_used": len(per_fold),
        "folds_skipped": skipped,
        "metadata": {
            "censoring_estimate": "kaplan-meier on the test fold",
            "stratified_on_status": True,
            "seed": seed,
        },
    }
    for name in ("latent_class", "competitor"):
        bs1 = np.nanmean([rec[name].bs1 for rec in per_fold], axis=0)
        bs2 = np.nanmean([rec[name].bs2 for rec in per_fold], axis=0)
        result[name] = BrierCurve(
            times=grid,
            bs1=bs1,
            bs2=bs2,
            folds=len(per_fold),
            metadata=result["metadata"],
        )
    return result


def cross_validated_brier(
    data: Dataset,
    config: ModelConfig,
    folds: int = 5,
    grid=None,
    competitor: ModelConfig | None = None,
    seed: int = 0,
) -> tuple[BrierCurve, BrierCurve]:
    """Fold-averaged Brier curves for (model, single-class competitor)."""
    result = cv_brier_folds(
        data, config, folds=folds, grid=grid, competitor=competitor, seed=seed
    )
    return result["latent_class"], result["competitor"]
