"""Model-selection criteria over candidate class counts."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, ModelConfig
from .em import EmState, fit
from .errors import FitError

__all__ = ["CriteriaReport", "criteria", "select_L", "num_parameters"]

log = logging.getLogger(__name__)


def num_parameters(L: int, pm: int, q: int) -> int:
    """Free finite-dimensional parameter count (baseline jumps excluded)."""
    return (pm + 1) * (L - 1) + q * L + L - 1


@dataclass
class CriteriaReport:
    """Selection criteria for one fitted class count."""

    L: int
    loglik: float
    num_params: int
    aic: float
    bic: float
    icl_bic: float
    entropy_index: float


def _posterior_entropy(W: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = -W * np.log(W)
    return float(np.where(W > 0, terms, 0.0).sum())


def criteria(fit_state: EmState, data: Dataset, config: ModelConfig) -> CriteriaReport:
    """AIC, BIC, entropy-penalized BIC and the standardized entropy index.

    The entropy index is 1 for perfectly crisp posteriors and 0 for uniform
    ones; with a single class it is reported as 1 by convention.
    """
    L = config.num_classes
    pm = len(config.membership_indices(data.p))
    q = len(config.survival_indices(data.p))
    r = num_parameters(L, pm, q)
    loglik = fit_state.loglik
    n = data.n
    aic = -2.0 * loglik + 2.0 * r
    bic = -2.0 * loglik + r * np.log(n)
    entropy = _posterior_entropy(fit_state.weights.weights)
    icl_bic = bic + 2.0 * entropy
    if L == 1:
        entropy_index = 1.0
    else:
        entropy_index = 1.0 - entropy / (n * np.log(L))
    return CriteriaReport(
        L=L,
        loglik=loglik,
        num_params=r,
        aic=aic,
        bic=bic,
        icl_bic=icl_bic,
        entropy_index=entropy_index,
    )


def select_L(
    data: Dataset,
    config: ModelConfig,
    L_range,
    restarts: int = 0,
) -> tuple[dict[str, int], list[CriteriaReport]]:
    """Fit every candidate class count and pick the best per criterion.

    Each candidate is fitted with k-means initialization, plus ``restarts``
    additional random-initialization runs keeping the best final
    log-likelihood. AIC, BIC and entropy-penalized BIC select by minimum,
    the entropy index by maximum; ties break toward fewer classes. A failed
    candidate is dropped from the comparison.
    """
    L_range = list(L_range)
    if not L_range:
        raise ValueError("L_range must be nonempty")
    reports: list[CriteriaReport] = []
    for L in L_range:
        cfg = config.with_classes(L, initialization="kmeans")
        best: EmState | None = None
        attempts = [cfg] + [
            cfg.with_classes(L, initialization="random", seed=cfg.seed + 1 + j)
            for j in range(restarts)
        ]
        for attempt_cfg in attempts:
            try:
                state = fit(data, attempt_cfg)
            except FitError as exc:
                log.warning("fit failed for L=%d (%s)", L, exc)
                continue
            if best is None or state.loglik > best.loglik:
                best = state
        if best is None:
            log.warning("all fits failed for L=%d; excluded from selection", L)
            continue
        reports.append(criteria(best, data, cfg))
    if not reports:
        raise FitError("every candidate class count failed to fit")
    best_by: dict[str, int] = {}
    for name, sign in (("aic", 1.0), ("bic", 1.0), ("icl_bic", 1.0), ("entropy_index", -1.0)):
        ranked = sorted(reports, key=lambda rep: (sign * getattr(rep, name), rep.L))
        best_by[name] = ranked[0].L
    return best_by, reports
