"""Fit a two-class proportional hazards mixture and read off the estimates.

Generates a benchmark dataset, fits the model by EM, and prints the
coefficient table with profile-likelihood standard errors next to the
generating values.
"""

import numpy as np

from lcph import ModelConfig, covariance, criteria, fit, wald_intervals
from lcph.simulation import generate, scenario, theta_names

spec = scenario("I", n=1000, seed=7)
data, labels = generate(spec)
print(f"simulated cohort: {data.n} subjects, {data.n_events} events, "
      f"{1 - data.status.mean():.0%} censored")

# class labels are exchangeable (a k-means start may recover them swapped,
# with identical likelihood); seeding from the known labels keeps the truth
# column aligned. A real analysis would use initialization="kmeans".
from lcph.simulation import perturbed_truth_weights

config = ModelConfig(num_classes=2, seed=1)
state = fit(data, config, initial_weights=perturbed_truth_weights(labels, 2))
print(f"converged: {state.converged} after {state.iteration} EM iterations, "
      f"log-likelihood {state.loglik:.3f}")

cov = covariance(data, state, config)
intervals = wald_intervals(cov, 0.95)
names = theta_names(2, 2, 2)
theta = state.params.pack()

print(f"\n{'parameter':<12} {'estimate':>9} {'see':>7} {'95% interval':>18} {'truth':>7}")
for k, name in enumerate(names):
    lo, hi = intervals[k]
    print(
        f"{name:<12} {theta[k]:>9.3f} {cov.standard_errors[k]:>7.3f} "
        f"[{lo:>7.3f}, {hi:>6.3f}] {spec.theta_true[k]:>7.3f}"
    )

report = criteria(state, data, config)
print(f"\nAIC {report.aic:.1f}  BIC {report.bic:.1f}  "
      f"entropy index {report.entropy_index:.3f}")

# class sizes under modal assignment
modal = state.weights.weights.argmax(axis=1)
sizes = np.bincount(modal, minlength=2)
print(f"modal assignment: {sizes[0]} vs {sizes[1]} subjects "
      f"(true split {np.bincount(labels, minlength=2)})")
