"""EM estimation: posterior weights, profiled M-steps and stopping control.

The M-step profiles out the baseline hazard in closed form (a weighted
Breslow-type update), solves a weighted multinomial logistic problem for the
membership coefficients, and solves the weighted partial score equation for
the survival coefficients with a dedicated Newton-Raphson solver. Standard
Cox software is deliberately not reused for the latter: each observed event
is counted once per latent class, and off-the-shelf tie handling would not
solve the intended score equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .data import (
    Dataset,
    ModelConfig,
    Parameters,
    PosteriorWeights,
    StepFunction,
)
from .errors import (
    ConvergenceError,
    FitError,
    MonotonicityError,
    SeparationError,
    SingularMatrixError,
)
from .likelihood import ModelArrays, log_membership_matrix

__all__ = [
    "EmState",
    "RiskSetIndex",
    "e_step",
    "breslow_update",
    "m_step_alpha",
    "m_step_gamma",
    "aitken_stop",
    "initialize_weights",
    "fit",
]

# Inner Newton solvers run tighter than the outer EM tolerance so that
# M-step error never masks EM divergence.
NEWTON_GRAD_TOL = 1e-8
NEWTON_MAX_ITER = 100
MAX_STEP_HALVINGS = 30
# Objective roundoff allowance in the line searches: near the maximizer a
# candidate can evaluate one ulp below the incumbent even though the step is
# a genuine Newton step. Fewer than ~100 ulps, so orders of magnitude below
# the EM monotonicity slack.
_ACCEPT_SLACK = 64.0 * np.finfo(float).eps
# Per-iteration slack on EM monotonicity of the observed-data log-likelihood.
MONOTONICITY_SLACK = 1e-8
# Coefficient magnitude at which the membership solver declares separation.
ALPHA_DIVERGENCE_BOUND = 1e3
# A weighted multinomial log-likelihood this close to its supremum of zero
# means the classes are perfectly classified, which for logistic models only
# happens when the solution runs off to infinity (separation).
SEPARATION_LOGLIK = -1e-6


@dataclass
class EmState:
    """Converged (or stopped) state of one EM run."""

    params: Parameters
    weights: PosteriorWeights
    loglik_history: list[float]
    iteration: int
    converged: bool
    frozen_gamma: tuple[int, ...] = ()

    @property
    def loglik(self) -> float:
        return self.loglik_history[-1]


class RiskSetIndex:
    """Risk-set and event bookkeeping on the distinct event-time grid.

    Subjects are indexed 0..n-1; entry ``k`` of :meth:`risk_indices` lists
    everyone still under observation at the k-th distinct event time. Risk
    sets are nested: each is a subset of the previous one.
    """

    def __init__(self, data: Dataset):
        self.event_times = data.event_times()
        times = data.times
        status = data.status.astype(bool)
        self._risk = [np.flatnonzero(times >= t) for t in self.event_times]
        self._events = [
            np.flatnonzero(status & (times == t)) for t in self.event_times
        ]
        # censored subjects falling in [t_k, t_{k+1}) carry Lambda_k forward
        self._censored_interval = np.searchsorted(
            self.event_times, times[~status], side="right"
        )

    def risk_indices(self, k: int) -> np.ndarray:
        return self._risk[k]

    def event_indices(self, k: int) -> np.ndarray:
        return self._events[k]

    def censored_interval_index(self) -> np.ndarray:
        """For each censored subject, the number of event times passed."""
        return self._censored_interval

    def __len__(self) -> int:
        return len(self.event_times)


def e_step(data: Dataset, params: Parameters, config: ModelConfig) -> PosteriorWeights:
    """Posterior class membership probabilities at the current parameters."""
    params.validate_dims(config, data.p)
    arrays = ModelArrays(data, config)
    weights, _ = arrays.posterior_and_loglik(params.alpha, params.gamma, params.baseline)
    return PosteriorWeights(weights)


def _breslow(arrays: ModelArrays, W: np.ndarray, gamma: np.ndarray) -> StepFunction:
    eta = arrays.linear_predictors(gamma)  # (L, n)
    with np.errstate(over="ignore", invalid="ignore"):
        terms = W.T * np.exp(eta)  # (L, n); 0 * inf from dead classes is 0
    risk_score = np.where(np.isnan(terms), 0.0, terms).sum(axis=0)
    denom = arrays.risk_sums(risk_score)
    if not np.all(np.isfinite(denom)) or np.any(denom <= 0):
        raise FitError("Breslow denominator vanished or overflowed at some event time")
    return StepFunction(arrays.event_times, arrays.event_counts / denom)


def breslow_update(
    data: Dataset, weights: PosteriorWeights | np.ndarray, gamma, config: ModelConfig
) -> StepFunction:
    """Closed-form baseline hazard maximizer given weights and coefficients.

    Jumps sit on the distinct uncensored event times; a tied time gets a
    single jump equal to its event count over the weighted risk-set total.
    """
    W = weights.weights if isinstance(weights, PosteriorWeights) else np.asarray(weights)
    arrays = ModelArrays(data, config)
    return _breslow(arrays, W, np.asarray(gamma, dtype=float))


def _weighted_multinomial_loglik(x_mem, alpha, W) -> float:
    logp = log_membership_matrix(x_mem, alpha)
    return float((W * logp).sum())


def _fit_alpha(
    arrays: ModelArrays, W: np.ndarray, alpha0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Newton solver for the weighted multinomial logistic subproblem.

    Returns the solution together with its membership log-probability
    matrix, which the caller reuses for the E-step.
    """
    L, x_mem = arrays.L, arrays.x_mem
    if L == 1:
        return np.zeros((0, x_mem.shape[1])), np.zeros((arrays.n, 1))
    alpha = np.array(alpha0, dtype=float)
    pdim = x_mem.shape[1]
    logp = log_membership_matrix(x_mem, alpha)
    objective = None  # computed lazily; the warm path exits on the gradient alone
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        probs = np.exp(logp)
        grad = ((W - probs)[:, 1:].T[:, :, None] * x_mem[None, :, :]).sum(axis=1)
        grad_flat = grad.ravel()
        if np.linalg.norm(grad_flat) < NEWTON_GRAD_TOL:
            objective = float((W * logp).sum())
            # a log-likelihood at its supremum of zero with every class still
            # populated means perfect classification, i.e. separation; an
            # emptied class (mass ~ 0) legitimately drives its own intercept
            # down without the solution being separated
            if objective > SEPARATION_LOGLIK and W.sum(axis=0).min() >= 0.5:
                raise SeparationError(
                    "weights are perfectly classified by the covariates; the "
                    "membership solution diverges",
                    iterations=iteration,
                )
            return alpha, logp
        # negative Hessian: sum_i xx^T kron (diag(p) - p p^T) over classes 2..L
        neg_hess = np.zeros(((L - 1) * pdim, (L - 1) * pdim))
        for a in range(1, L):
            for b in range(a, L):
                w_ab = probs[:, a] * ((a == b) - probs[:, b])
                block = (x_mem * w_ab[:, None]).T @ x_mem
                neg_hess[
                    (a - 1) * pdim : a * pdim, (b - 1) * pdim : b * pdim
                ] = block
                if a != b:
                    neg_hess[
                        (b - 1) * pdim : b * pdim, (a - 1) * pdim : a * pdim
                    ] = block
        try:
            chol = scipy.linalg.cho_factor(neg_hess)
            step = scipy.linalg.cho_solve(chol, grad_flat).reshape(L - 1, pdim)
        except scipy.linalg.LinAlgError as exc:
            raise SeparationError(
                "singular Hessian in the membership solver (separated classes)",
                iterations=iteration,
            ) from exc
        if objective is None:
            objective = float((W * logp).sum())
        scale = 1.0
        slack = _ACCEPT_SLACK * max(1.0, abs(objective))
        for _ in range(MAX_STEP_HALVINGS + 1):
            candidate = alpha + scale * step
            candidate_logp = log_membership_matrix(x_mem, candidate)
            value = float((W * candidate_logp).sum())
            if np.isfinite(value) and value >= objective - slack:
                break
            scale *= 0.5
        else:
            raise ConvergenceError(
                "membership solver exhausted step halvings", iterations=iteration
            )
        alpha, logp, objective = candidate, candidate_logp, value
        if np.max(np.abs(alpha)) > ALPHA_DIVERGENCE_BOUND:
            raise SeparationError(
                "membership coefficients diverged (separated classes)",
                iterations=iteration,
            )
    raise ConvergenceError(
        "membership solver did not converge", iterations=NEWTON_MAX_ITER
    )


def m_step_alpha(
    data: Dataset, weights: PosteriorWeights | np.ndarray, alpha_init, config: ModelConfig
) -> np.ndarray:
    """Maximize the weighted membership log-likelihood over alpha."""
    W = weights.weights if isinstance(weights, PosteriorWeights) else np.asarray(weights)
    arrays = ModelArrays(data, config)
    alpha, _ = _fit_alpha(arrays, W, np.atleast_2d(np.asarray(alpha_init, dtype=float)))
    return alpha


class _GammaObjective:
    """Weighted partial-likelihood machinery shared by the Newton iterations.

    Every subject is replicated once per latent class with its posterior
    weight; events therefore appear L times with weights summing to one,
    which is exactly the score displayed by the profiled objective.
    """

    def __init__(self, arrays: ModelArrays, W: np.ndarray):
        self.arrays = arrays
        self.W = W
        ev = arrays.status
        # sum over event subjects of their weighted class design vectors
        self.event_design_sum = np.einsum(
            "il,lid->d", W[ev], arrays.Z[:, ev, :]
        )

    def _risk_terms(self, gamma) -> np.ndarray:
        # 0 * inf from a zero-weight class with an overflowing dead block is 0
        with np.errstate(over="ignore", invalid="ignore"):
            risk = self.W.T * np.exp(self.arrays.linear_predictors(gamma))  # (L, n)
        return np.where(np.isnan(risk), 0.0, risk)

    def value(self, gamma: np.ndarray) -> float:
        s0 = self.arrays.risk_sums(self._risk_terms(gamma).sum(axis=0))
        if np.any(s0 <= 0) or not np.all(np.isfinite(s0)):
            return -np.inf
        return float(
            self.event_design_sum @ gamma
            - self.arrays.event_counts @ np.log(s0)
        )

    def value_score(self, gamma):
        """Objective, score, and the first-moment pieces needed for the Hessian."""
        arrays = self.arrays
        risk = self._risk_terms(gamma)
        d = arrays.d
        packed = np.empty((arrays.n, 1 + d))
        packed[:, 0] = risk.sum(axis=0)
        np.einsum("li,lid->id", risk, arrays.Z, out=packed[:, 1:])
        sums = arrays.risk_sums(packed)
        s0, s1 = sums[:, 0], sums[:, 1:]
        if np.any(s0 <= 0) or not np.all(np.isfinite(s0)):
            raise FitError("risk-set totals vanished or overflowed in the gamma solver")
        counts = arrays.event_counts
        zbar = s1 / s0[:, None]
        value = float(self.event_design_sum @ gamma - counts @ np.log(s0))
        score = self.event_design_sum - counts @ zbar
        return value, score, risk, s0, zbar

    def information(self, risk, s0, zbar):
        """Weighted-covariance information matrix from the cached moments."""
        arrays = self.arrays
        d = arrays.d
        packed = np.zeros((arrays.n, d * d))
        for l in range(arrays.L):
            z = arrays.Z[l]
            rz = risk[l][:, None] * z
            packed += (rz[:, :, None] * z[:, None, :]).reshape(arrays.n, d * d)
        s2 = arrays.risk_sums(packed).reshape(-1, d, d)
        counts = arrays.event_counts
        return np.einsum("k,kab->ab", counts, s2 / s0[:, None, None]) - (
            zbar.T * counts
        ) @ zbar

    def score_and_information(self, gamma):
        _, score, risk, s0, zbar = self.value_score(gamma)
        return score, self.information(risk, s0, zbar)


def _fit_gamma(
    arrays: ModelArrays,
    W: np.ndarray,
    gamma0: np.ndarray,
    info_cache: np.ndarray | None = None,
) -> tuple[np.ndarray, tuple[int, ...], np.ndarray | None]:
    """Newton solver for the weighted partial score equation.

    The convergence check always uses a freshly computed score, but the step
    metric may start from ``info_cache`` (the information matrix from the
    previous EM iteration, which changes little between warm iterations) and
    is refreshed whenever one step does not finish the job. Coordinates with
    no information under the current weights (e.g. a class whose posterior
    mass is exactly zero everywhere) are frozen at their initial values and
    reported back.
    """
    gamma = np.array(gamma0, dtype=float)
    d = arrays.d
    if d == 0:
        return gamma, (), None
    problem = _GammaObjective(arrays, W)
    objective, score, risk, s0, zbar = problem.value_score(gamma)
    info = info_cache
    fresh = False
    if info is None:
        info = problem.information(risk, s0, zbar)
        fresh = True
    diag = np.diag(info)
    frozen = np.flatnonzero(diag <= 1e-12 * max(1.0, float(diag.max(initial=0.0))))
    free = np.setdiff1d(np.arange(d), frozen)
    if free.size == 0:
        raise SingularMatrixError("no gamma coordinate carries information")
    previous_norm = np.inf
    stale_steps = 0
    for iteration in range(1, NEWTON_MAX_ITER + 1):
        score_f = score[free]
        norm = np.linalg.norm(score_f)
        if norm < NEWTON_GRAD_TOL:
            return gamma, tuple(int(j) for j in frozen), info
        if not fresh and (norm > 0.25 * previous_norm or stale_steps >= 3):
            # the cached metric stopped contracting the score; rebuild it
            info = problem.information(risk, s0, zbar)
            fresh = True
        previous_norm = norm
        info_f = info[np.ix_(free, free)]
        try:
            chol = scipy.linalg.cho_factor(info_f)
            step = scipy.linalg.cho_solve(chol, score_f)
        except scipy.linalg.LinAlgError as exc:
            if not fresh:
                info = problem.information(risk, s0, zbar)
                fresh = True
                previous_norm = np.inf
                continue
            raise SingularMatrixError(
                "singular information matrix in the gamma solver",
                iterations=iteration,
            ) from exc
        if not np.all(np.isfinite(step)):
            raise FitError("non-finite Newton step in the gamma solver")
        scale = 1.0
        slack = _ACCEPT_SLACK * max(1.0, abs(objective))
        accepted = False
        for _ in range(MAX_STEP_HALVINGS + 1):
            candidate = gamma.copy()
            candidate[free] += scale * step
            try:
                value, new_score, new_risk, new_s0, new_zbar = problem.value_score(
                    candidate
                )
            except FitError:
                value = -np.inf
            if np.isfinite(value) and value >= objective - slack:
                accepted = True
                break
            scale *= 0.5
            if not fresh:
                break  # do not spend the halving budget on a stale metric
        if not accepted:
            if not fresh:
                info = problem.information(risk, s0, zbar)
                fresh = True
                previous_norm = np.inf
                continue  # retry from the same point with a true Newton step
            raise ConvergenceError(
                "gamma solver exhausted step halvings", iterations=iteration
            )
        gamma, objective, score = candidate, value, new_score
        risk, s0, zbar = new_risk, new_s0, new_zbar
        stale_steps = 0 if fresh else stale_steps + 1
        fresh = False  # the metric now lags the iterate by one step
    raise ConvergenceError("gamma solver did not converge", iterations=NEWTON_MAX_ITER)


def m_step_gamma(
    data: Dataset, weights: PosteriorWeights | np.ndarray, gamma_init, config: ModelConfig
) -> np.ndarray:
    """Solve the weighted partial score equation for the survival coefficients."""
    W = weights.weights if isinstance(weights, PosteriorWeights) else np.asarray(weights)
    arrays = ModelArrays(data, config)
    gamma, _, _ = _fit_gamma(arrays, W, np.asarray(gamma_init, dtype=float))
    return gamma


def aitken_stop(loglik_history, tol: float) -> bool:
    """Aitken-accelerated stopping rule on the log-likelihood sequence.

    Extrapolates the sequence limit from the last two difference ratios and
    stops when consecutive extrapolated limits agree within ``tol``. Needs
    four history entries; underflowing differences count as converged, a
    difference ratio of one blocks extrapolation and reports not converged.
    """
    if len(loglik_history) < 4:
        return False
    l0, l1, l2, l3 = (float(v) for v in loglik_history[-4:])
    d1, d2, d3 = l1 - l0, l2 - l1, l3 - l2
    tiny = 1e-14 * max(1.0, abs(l3))
    if abs(d1) <= tiny or abs(d2) <= tiny:
        return max(abs(d2), abs(d3)) < tol
    a1, a2 = d2 / d1, d3 / d2
    if abs(1.0 - a1) <= 1e-12 or abs(1.0 - a2) <= 1e-12:
        return False
    acc_prev = l1 + d2 / (1.0 - a1)
    acc_next = l2 + d3 / (1.0 - a2)
    return bool(abs(acc_next - acc_prev) < tol)


def _kmeans_plusplus_centers(values, k, rng):
    centers = np.empty(k)
    centers[0] = values[rng.integers(len(values))]
    d2 = (values - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j:] = values[rng.integers(len(values), size=k - j)]
            break
        centers[j] = values[rng.choice(len(values), p=d2 / total)]
        d2 = np.minimum(d2, (values - centers[j]) ** 2)
    return centers


def _kmeans_1d(values, k, rng, restarts=10, max_iter=100):
    """Lloyd's algorithm with k-means++ seeding on scalar data."""
    best_inertia, best_centers = np.inf, None
    for _ in range(restarts):
        centers = _kmeans_plusplus_centers(values, k, rng)
        for _ in range(max_iter):
            d2 = (values[:, None] - centers[None, :]) ** 2
            labels = d2.argmin(axis=1)
            new_centers = centers.copy()
            for j in range(k):
                members = values[labels == j]
                if members.size:
                    new_centers[j] = members.mean()
            if np.allclose(new_centers, centers):
                break
            centers = new_centers
        inertia = ((values - centers[labels]) ** 2).sum()
        if inertia < best_inertia:
            best_inertia, best_centers = inertia, centers
    order = np.argsort(best_centers, kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    labels = relabel[((values[:, None] - best_centers[None, :]) ** 2).argmin(axis=1)]
    return labels


def labels_to_weights(labels, L: int, confidence: float = 0.9) -> np.ndarray:
    """Soft weight matrix putting ``confidence`` on each subject's own class."""
    labels = np.asarray(labels, dtype=int)
    if L == 1:
        return np.ones((len(labels), 1))
    W = np.full((len(labels), L), (1.0 - confidence) / (L - 1))
    W[np.arange(len(labels)), labels] = confidence
    return W


def initialize_weights(
    data: Dataset, config: ModelConfig, supplied=None
) -> PosteriorWeights:
    """Initial posterior weights per the configured strategy.

    ``random`` draws rows from the flat simplex distribution; ``kmeans``
    clusters follow-up times and plants 0.9 on each subject's cluster;
    ``supplied`` validates a caller-provided row-stochastic matrix.
    """
    L = config.num_classes
    if config.initialization == "supplied" or supplied is not None:
        if supplied is None:
            raise ValueError("initialization='supplied' requires a weight matrix")
        W = np.asarray(supplied, dtype=float)
        if W.shape != (data.n, L):
            raise ValueError(f"supplied weights must have shape ({data.n}, {L})")
        return PosteriorWeights(W)
    if L == 1:
        return PosteriorWeights(np.ones((data.n, 1)))
    rng = np.random.default_rng(config.seed)
    if config.initialization == "random":
        return PosteriorWeights(rng.dirichlet(np.ones(L), size=data.n))
    labels = _kmeans_1d(data.times, L, rng)
    return PosteriorWeights(labels_to_weights(labels, L))


def fit(data: Dataset, config: ModelConfig, initial_weights=None) -> EmState:
    """Run the full EM algorithm to convergence.

    Each cycle solves the two weighted score equations, refreshes the
    baseline by the closed-form update at the new coefficients, then takes an
    E-step and records the observed-data log-likelihood. Stops on the Aitken
    rule at ``config.tolerance``; hitting ``config.max_iterations`` returns a
    state flagged not converged rather than raising.

    Raises
    ------
    MonotonicityError
        If the observed-data log-likelihood drops by more than 1e-8 in one
        iteration. This is the primary correctness guard and is always on.
    FitError
        Propagated from the M-step solvers, annotated with the EM iteration.
    """
    arrays = ModelArrays(data, config)
    L = config.num_classes
    num_finite_params = (arrays.pm + 1) * (L - 1) + arrays.d
    if data.n_events < num_finite_params:
        raise FitError(
            f"only {data.n_events} events for {num_finite_params} coefficients; "
            "the model is underdetermined"
        )
    if initial_weights is not None:
        W = initialize_weights(data, config, supplied=initial_weights).weights
    else:
        W = initialize_weights(data, config).weights
    alpha = np.zeros((L - 1, arrays.pm + 1))
    gamma = np.zeros(arrays.d)
    history: list[float] = []
    frozen: tuple[int, ...] = ()
    converged = False
    iteration = 0
    info_cache = None
    for iteration in range(1, config.max_iterations + 1):
        try:
            alpha, logp = _fit_alpha(arrays, W, alpha)
            gamma, frozen, info_cache = _fit_gamma(arrays, W, gamma, info_cache)
            baseline = _breslow(arrays, W, gamma)
        except FitError as exc:
            exc.em_iteration = iteration
            raise type(exc)(
                f"EM iteration {iteration}: {exc}", iterations=exc.iterations
            ) from exc
        W_next, loglik = arrays.posterior_and_loglik(alpha, gamma, baseline, logp=logp)
        if history and loglik < history[-1] - MONOTONICITY_SLACK:
            raise MonotonicityError(
                f"log-likelihood decreased at EM iteration {iteration}: "
                f"{history[-1]:.10f} -> {loglik:.10f}"
            )
        history.append(loglik)
        W = W_next
        if aitken_stop(history, config.tolerance):
            converged = True
            break
    if converged:
        # polish the baseline at the final coefficients so the reported state
        # sits on the profile fixed point: iterate only the closed-form
        # baseline update and the posterior until the log-likelihood stalls
        previous = history[-1]
        for _ in range(500):
            baseline = _breslow(arrays, W, gamma)
            W, loglik = arrays.posterior_and_loglik(alpha, gamma, baseline, logp=logp)
            if abs(loglik - previous) <= 1e-12 * max(1.0, abs(loglik)):
                break
            previous = loglik
        history.append(loglik)
    params = Parameters(alpha=alpha, gamma=gamma, baseline=baseline)
    return EmState(
        params=params,
        weights=PosteriorWeights(W),
        loglik_history=history,
        iteration=iteration,
        converged=converged,
        frozen_gamma=frozen,
    )
