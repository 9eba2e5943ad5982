"""Core data containers: observations, model configuration and parameters.

The baseline cumulative hazard is represented as a nondecreasing step
function with jumps at the distinct uncensored event times, which is the
natural parameterization for nonparametric maximum likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "Observation",
    "Dataset",
    "ModelConfig",
    "StepFunction",
    "Parameters",
    "PosteriorWeights",
]

ROW_SUM_TOL = 1e-10


@dataclass(frozen=True)
class Observation:
    """A single right-censored observation.

    Attributes
    ----------
    time : float
        Follow-up time (event or censoring time), nonnegative and finite.
    status : int
        1 if the event was observed, 0 if censored.
    covariates : ndarray
        Baseline covariate vector of length ``p``.
    """

    time: float
    status: int
    covariates: np.ndarray

    def __post_init__(self):
        time = float(self.time)
        if not np.isfinite(time) or time < 0:
            raise ValueError(f"time must be finite and >= 0, got {self.time}")
        if self.status not in (0, 1):
            raise ValueError(f"status must be 0 or 1, got {self.status}")
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim != 1:
            raise ValueError("covariates must be a 1-d vector")
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariates contain non-finite values")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "status", int(self.status))
        object.__setattr__(self, "covariates", cov)


class Dataset:
    """Right-censored survival data for ``n`` subjects.

    Stored internally as arrays (``times``, ``status``, ``covariates``);
    the ``observations`` property materializes per-subject views.

    Parameters
    ----------
    times : array-like, shape (n,)
        Follow-up times.
    status : array-like, shape (n,)
        Event indicators in {0, 1}.
    covariates : array-like, shape (n, p)
        Baseline covariate matrix.
    covariate_names : sequence of str, optional
        Defaults to ``x1 .. xp``.
    """

    def __init__(self, times, status, covariates, covariate_names=None):
        times = np.asarray(times, dtype=float)
        status = np.asarray(status)
        covariates = np.atleast_2d(np.asarray(covariates, dtype=float))
        if times.ndim != 1:
            raise ValueError("times must be 1-d")
        n = times.shape[0]
        if n < 1:
            raise ValueError("dataset must contain at least one observation")
        if status.shape != (n,):
            raise ValueError("status must have the same length as times")
        if covariates.shape[0] != n:
            raise ValueError("covariates must have one row per observation")
        if not np.all(np.isfinite(times)) or np.any(times < 0):
            raise ValueError("times must be finite and >= 0")
        if not np.isin(status, (0, 1)).all():
            raise ValueError("status entries must be 0 or 1")
        if not np.all(np.isfinite(covariates)):
            raise ValueError("covariates contain missing or non-finite values")
        self.times = times
        self.status = status.astype(np.int64)
        self.covariates = covariates
        p = covariates.shape[1]
        if covariate_names is None:
            covariate_names = [f"x{j + 1}" for j in range(p)]
        covariate_names = list(covariate_names)
        if len(covariate_names) != p:
            raise ValueError("covariate_names length must equal number of covariates")
        self.covariate_names = covariate_names

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], covariate_names=None):
        times = [o.time for o in observations]
        status = [o.status for o in observations]
        covs = [o.covariates for o in observations]
        lengths = {len(c) for c in covs}
        if len(lengths) != 1:
            raise ValueError("all observations must have identical covariate length")
        return cls(times, status, np.vstack(covs) if covs else np.empty((0, 0)), covariate_names)

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(t, s, x)
            for t, s, x in zip(self.times, self.status, self.covariates)
        ]

    @property
    def n_events(self) -> int:
        return int(self.status.sum())

    def event_times(self) -> np.ndarray:
        """Distinct uncensored event times, sorted increasing.

        Tied events collapse into a single time; estimation sums their
        contributions. Raises if the data contain no events, since the
        nonparametric baseline has no support points in that case.
        """
        if self.n_events == 0:
            raise ValueError("dataset contains no events; no event times exist")
        return np.unique(self.times[self.status == 1])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.times[index],
            self.status[index],
            self.covariates[index],
            self.covariate_names,
        )

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, p={self.p}, events={self.n_events})"


@dataclass(frozen=True)
class ModelConfig:
    """Configuration of the latent class proportional hazards model.

    Attributes
    ----------
    num_classes : int
        Number of latent classes ``L`` (>= 1).
    membership_covariates : tuple of int, optional
        0-based column indices entering the class membership submodel.
        ``None`` selects all covariates.
    survival_covariates : tuple of int, optional
        0-based column indices entering the survival submodel (size ``q``).
        ``None`` selects all covariates.
    tolerance : float
        Aitken stopping tolerance for the EM loop.
    max_iterations : int
        Cap on EM iterations; hitting it flags the fit as not converged.
    initialization : {"random", "kmeans", "supplied"}
        How the initial posterior weights are produced.
    seed : int
        Seed for any randomness in initialization.
    """

    num_classes: int
    membership_covariates: tuple | None = None
    survival_covariates: tuple | None = None
    tolerance: float = 1e-7
    max_iterations: int = 2000
    initialization: str = "kmeans"
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initialization not in ("random", "kmeans", "supplied"):
            raise ValueError(f"unknown initialization {self.initialization!r}")
        for name in ("membership_covariates", "survival_covariates"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(j) for j in value))

    def membership_indices(self, p: int) -> np.ndarray:
        idx = self.membership_covariates
        idx = np.arange(p) if idx is None else np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= p):
            raise ValueError("membership covariate index out of range")
        return idx

    def survival_indices(self, p: int) -> np.ndarray:
        idx = self.survival_covariates
        idx = np.arange(p) if idx is None else np.asarray(idx, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= p):
            raise ValueError("survival covariate index out of range")
        return idx

    def with_classes(self, L: int, **kwargs) -> "ModelConfig":
        return replace(self, num_classes=L, **kwargs)


class StepFunction:
    """Nondecreasing, right-continuous step function, zero before the first jump.

    Evaluation at ``t`` returns the sum of all jump sizes at times <= ``t``.
    """

    def __init__(self, jump_times, jump_sizes):
        jump_times = np.asarray(jump_times, dtype=float)
        jump_sizes = np.asarray(jump_sizes, dtype=float)
        if jump_times.shape != jump_sizes.shape or jump_times.ndim != 1:
            raise ValueError("jump_times and jump_sizes must be 1-d of equal length")
        if jump_times.size:
            if np.any(np.diff(jump_times) <= 0):
                raise ValueError("jump_times must be strictly increasing")
            if np.any(jump_times <= 0):
                raise ValueError("jump_times must be positive")
            if np.any(jump_sizes <= 0):
                raise ValueError("jump_sizes must be positive")
        self.jump_times = jump_times
        self.jump_sizes = jump_sizes
        self._cumulative = np.cumsum(jump_sizes)

    def __call__(self, t):
        """Evaluate at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="right")
        values = np.where(idx > 0, self._cumulative[np.maximum(idx - 1, 0)], 0.0)
        if values.ndim == 0:
            return float(values)
        return values

    def jump_at(self, t) -> np.ndarray:
        """Jump size at ``t`` (0 where ``t`` is not a jump time)."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t)
        idx_clip = np.minimum(idx, max(len(self.jump_times) - 1, 0))
        if len(self.jump_times) == 0:
            return np.zeros_like(t)
        hit = self.jump_times[idx_clip] == t
        return np.where(hit, self.jump_sizes[idx_clip], 0.0)

    @property
    def total(self) -> float:
        return float(self._cumulative[-1]) if self.jump_sizes.size else 0.0

    def __repr__(self) -> str:
        return f"StepFunction(m={len(self.jump_times)}, total={self.total:.6g})"


def num_survival_design(q: int, L: int) -> int:
    """Length of the stacked survival design vector: q*L + L - 1."""
    return q * L + L - 1


@dataclass
class Parameters:
    """Finite-dimensional parameters plus the nonparametric baseline.

    Attributes
    ----------
    alpha : ndarray, shape (L-1, p_mem+1)
        Membership submodel coefficients for classes 2..L; class 1 is the
        implicit zero reference row. Column 0 is the intercept.
    gamma : ndarray, shape (q*L + L - 1,)
        Survival coefficients laid out as
        (reference effects, class-2 offset, class-2 shifts, class-3 offset, ...).
    baseline : StepFunction
        Baseline cumulative hazard.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    baseline: StepFunction

    def __post_init__(self):
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        self.gamma = np.asarray(self.gamma, dtype=float)
        if not np.all(np.isfinite(self.alpha)) or not np.all(np.isfinite(self.gamma)):
            raise ValueError("parameters must be finite")

    @property
    def num_classes(self) -> int:
        return self.alpha.shape[0] + 1

    def validate_dims(self, config: ModelConfig, p: int) -> None:
        L = config.num_classes
        q = len(config.survival_indices(p))
        pm = len(config.membership_indices(p))
        if L > 1 and self.alpha.shape != (L - 1, pm + 1):
            raise ValueError(
                f"alpha shape {self.alpha.shape} inconsistent with (L-1, p+1)="
                f"({L - 1}, {pm + 1})"
            )
        if self.gamma.shape != (num_survival_design(q, L),):
            raise ValueError(
                f"gamma length {self.gamma.shape[0]} inconsistent with q*L+L-1="
                f"{num_survival_design(q, L)}"
            )

    def pack(self) -> np.ndarray:
        """Flatten (alpha, gamma) into a single vector, alpha rows first."""
        L = self.num_classes
        alpha_flat = self.alpha.ravel() if L > 1 else np.empty(0)
        return np.concatenate([alpha_flat, self.gamma])

    @classmethod
    def unpack(cls, theta, L: int, pm: int, q: int, baseline: StepFunction) -> "Parameters":
        theta = np.asarray(theta, dtype=float)
        n_alpha = (pm + 1) * (L - 1)
        d = num_survival_design(q, L)
        if theta.shape != (n_alpha + d,):
            raise ValueError(f"theta must have length {n_alpha + d}, got {theta.shape}")
        alpha = theta[:n_alpha].reshape(L - 1, pm + 1) if L > 1 else np.zeros((0, pm + 1))
        return cls(alpha=alpha, gamma=theta[n_alpha:].copy(), baseline=baseline)


@dataclass(frozen=True)
class PosteriorWeights:
    """Posterior class membership probabilities, one row per subject."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        row_sums = w.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > ROW_SUM_TOL):
            worst = float(np.max(np.abs(row_sums - 1.0)))
            raise ValueError(f"weight rows must sum to 1 (max deviation {worst:.2e})")
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def __getitem__(self, item):
        return self.weights[item]
