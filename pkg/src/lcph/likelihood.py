"""Per-observation likelihood components of the latent class hazards model.

All densities are computed and stored in log-space. The class-specific
"density" of an event at one of the baseline jump times uses the jump mass
of the cumulative hazard, which is the nonparametric maximum likelihood
convention.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset, ModelConfig, Parameters, StepFunction, num_survival_design
from .errors import DegenerateModelError


def logsumexp_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max subtraction; -inf rows stay -inf."""
    m = np.max(a, axis=1)
    finite = np.isfinite(m)
    shifted = a - np.where(finite, m, 0.0)[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = m + np.log(np.exp(shifted).sum(axis=1))
    return np.where(finite, out, -np.inf)

__all__ = [
    "expand_design",
    "class_membership_probs",
    "class_density",
    "mixture_loglik",
    "ModelArrays",
]


def expand_design(x_bar, l: int, L: int) -> np.ndarray:
    """Stacked survival design vector for class ``l`` (1-based) of ``L``.

    The reference class contributes only its covariates; every later class
    appends an indicator block (1, x_bar) in its own slot so that a single
    coefficient vector carries the reference effects, the per-class hazard
    offsets and the per-class effect shifts.
    """
    if not 1 <= l <= L:
        raise ValueError(f"class index l={l} out of range 1..{L}")
    x_bar = np.asarray(x_bar, dtype=float).ravel()
    q = x_bar.shape[0]
    z = np.zeros(num_survival_design(q, L))
    z[:q] = x_bar
    if l > 1:
        start = q + (l - 2) * (q + 1)
        z[start] = 1.0
        z[start + 1 : start + 1 + q] = x_bar
    return z


def design_tensor(x_surv: np.ndarray, L: int) -> np.ndarray:
    """All class design vectors for a covariate matrix, shape (L, n, d)."""
    x_surv = np.atleast_2d(np.asarray(x_surv, dtype=float))
    n, q = x_surv.shape
    d = num_survival_design(q, L)
    Z = np.zeros((L, n, d))
    Z[:, :, :q] = x_surv
    for l in range(2, L + 1):
        start = q + (l - 2) * (q + 1)
        Z[l - 1, :, start] = 1.0
        Z[l - 1, :, start + 1 : start + 1 + q] = x_surv
    return Z


def log_membership_matrix(x_mem: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Log class probabilities for an intercept-augmented design matrix.

    Parameters
    ----------
    x_mem : ndarray, shape (n, pm+1)
        Rows (1, x_i).
    alpha : ndarray, shape (L-1, pm+1)
        Coefficients for classes 2..L; class 1 is the zero reference.

    Returns
    -------
    ndarray, shape (n, L) of log probabilities, rows normalized.
    """
    alpha = np.atleast_2d(alpha)
    L = alpha.shape[0] + 1
    eta = np.zeros((x_mem.shape[0], L))
    if L > 1:
        eta[:, 1:] = x_mem @ alpha.T
    return eta - logsumexp_rows(eta)[:, None]


def class_membership_probs(x, alpha) -> np.ndarray:
    """Class membership probabilities for a single covariate vector.

    Computed in log-space with max subtraction, so arbitrarily large linear
    predictors cannot overflow. Output sums to 1.
    """
    x = np.asarray(x, dtype=float).ravel()
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    if alpha.shape[0] == 0:
        return np.ones(1)
    if alpha.shape[1] != x.shape[0] + 1:
        raise ValueError(
            f"alpha has {alpha.shape[1]} columns, expected {x.shape[0] + 1}"
        )
    x_mem = np.concatenate([[1.0], x])[None, :]
    return np.exp(log_membership_matrix(x_mem, alpha))[0]


class ModelArrays:
    """Precomputed arrays shared by the likelihood and EM internals.

    Sorting, risk-set boundaries and the class design tensor depend only on
    (data, config), so they are built once per fit and reused across EM
    iterations and profile-likelihood evaluations.
    """

    def __init__(self, data: Dataset, config: ModelConfig):
        self.data = data
        self.config = config
        self.n = data.n
        self.L = config.num_classes
        mem_idx = config.membership_indices(data.p)
        surv_idx = config.survival_indices(data.p)
        self.q = len(surv_idx)
        self.pm = len(mem_idx)
        self.x_mem = np.column_stack(
            [np.ones(data.n), data.covariates[:, mem_idx]]
        )
        self.x_surv = data.covariates[:, surv_idx]
        self.Z = design_tensor(self.x_surv, self.L)
        self.d = self.Z.shape[2]

        self.times = data.times
        self.status = data.status.astype(bool)
        self.event_times = data.event_times()
        self.m = len(self.event_times)
        # index of each event's position in the distinct event-time grid
        self.event_pos = np.searchsorted(self.event_times, self.times[self.status])
        self.event_counts = np.bincount(self.event_pos, minlength=self.m).astype(float)

        # descending sort; the risk set for t_k is a prefix of that order
        order = np.argsort(self.times, kind="stable")
        sorted_times = self.times[order]
        risk_start = np.searchsorted(sorted_times, self.event_times, side="left")
        self.order_desc = order[::-1].copy()
        self.n_at_risk = self.n - risk_start

        # per-subject index into event_times (only valid where status)
        self.subject_event_pos = np.full(data.n, -1)
        self.subject_event_pos[self.status] = self.event_pos

    def linear_predictors(self, gamma: np.ndarray) -> np.ndarray:
        """Per class-and-subject linear predictors, shape (L, n)."""
        return self.Z @ gamma

    def risk_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum ``values`` over each risk set: out[k] = sum_{i: T_i >= t_k} values[i].

        ``values`` may be (n,) or (n, d); summation runs over axis 0. With
        subjects ordered by decreasing time, each risk set is a prefix, so one
        cumulative sum serves every event time.
        """
        prefix = np.cumsum(values[self.order_desc], axis=0)
        padded = np.concatenate([np.zeros((1,) + prefix.shape[1:]), prefix])
        return padded[self.n_at_risk]

    def baseline_values(self, baseline: StepFunction) -> np.ndarray:
        """Cumulative hazard evaluated at every follow-up time, shape (n,)."""
        return np.asarray(baseline(self.times))

    def log_density_matrix(self, gamma: np.ndarray, baseline: StepFunction) -> np.ndarray:
        """Log class-specific densities, shape (n, L).

        Events must sit on the baseline's jump times; the event term uses the
        jump mass there.
        """
        self._check_jump_alignment(baseline)
        eta = self.linear_predictors(gamma).T  # (n, L)
        cumhaz = self.baseline_values(baseline)
        with np.errstate(over="ignore", invalid="ignore"):
            logf = -cumhaz[:, None] * np.exp(eta)
        # zero hazard mass before the first jump beats any relative risk
        logf = np.where(np.isnan(logf), 0.0, logf)
        log_jumps = np.log(baseline.jump_sizes)
        ev = self.status
        logf[ev] += log_jumps[self.subject_event_pos[ev], None] + eta[ev]
        return logf

    def log_mixture_terms(
        self, alpha: np.ndarray, gamma: np.ndarray, baseline: StepFunction
    ) -> np.ndarray:
        """Per-subject log mixture density contributions, shape (n,)."""
        logp = log_membership_matrix(self.x_mem, alpha)
        logf = self.log_density_matrix(gamma, baseline)
        return logsumexp_rows(logp + logf)

    def posterior_and_loglik(
        self,
        alpha: np.ndarray,
        gamma: np.ndarray,
        baseline: StepFunction,
        logp: np.ndarray | None = None,
    ) -> tuple[np.ndarray, float]:
        """Posterior membership matrix (n, L) and total observed log-likelihood.

        ``logp`` may carry precomputed membership log-probabilities for
        ``alpha`` to avoid recomputing them in inner loops.
        """
        if logp is None:
            logp = log_membership_matrix(self.x_mem, alpha)
        logf = self.log_density_matrix(gamma, baseline)
        joint = logp + logf
        norm = logsumexp_rows(joint)
        if not np.all(np.isfinite(norm)):
            bad = int(np.argmin(np.isfinite(norm)))
            raise DegenerateModelError(
                f"all class log-densities are -inf for subject {bad}; "
                "the baseline hazard is degenerate for its follow-up time"
            )
        return np.exp(joint - norm[:, None]), float(norm.sum())

    def _check_jump_alignment(self, baseline: StepFunction) -> None:
        if baseline.jump_times.shape != self.event_times.shape or not np.array_equal(
            baseline.jump_times, self.event_times
        ):
            raise ValueError(
                "baseline jump times do not match the dataset's distinct event "
                "times; rebuild the baseline on this dataset"
            )


def class_density(
    obs, l: int, params: Parameters, config: ModelConfig
) -> float:
    """Log class-specific density of one observation for class ``l`` (1-based).

    For an event the follow-up time must be one of the baseline jump times;
    otherwise the caller must rebuild the baseline on the dataset's event
    times first.
    """
    L = config.num_classes
    if not 1 <= l <= L:
        raise ValueError(f"class index l={l} out of range 1..{L}")
    x = np.asarray(obs.covariates, dtype=float)
    surv_idx = config.survival_indices(x.shape[0])
    z = expand_design(x[surv_idx], l, L)
    eta = float(z @ params.gamma)
    cumhaz = params.baseline(obs.time)
    log_f = -cumhaz * np.exp(eta)
    if obs.status == 1:
        jump = params.baseline.jump_at(obs.time)
        if jump <= 0:
            raise ValueError(
                f"event time {obs.time} is not a jump time of the baseline"
            )
        log_f += np.log(jump) + eta
    return float(log_f)


def mixture_loglik(data: Dataset, params: Parameters, config: ModelConfig) -> float:
    """Observed-data log-likelihood of the finite mixture model.

    The inner sum over classes runs through log-sum-exp; the covariate
    density factor is parameter-free and omitted.
    """
    params.validate_dims(config, data.p)
    arrays = ModelArrays(data, config)
    return float(
        arrays.log_mixture_terms(params.alpha, params.gamma, params.baseline).sum()
    )
