"""Desk-scale reruns of the benchmark simulation studies.

Replicate counts here are trimmed for a quick run; pass larger values (or
use the command line: ``lcph reproduce``) for publication-scale numbers.
"""

from lcph.simulation import run_replicates, run_selection_study, scenario

# estimation metrics under the benchmark two-class scenario
summary = run_replicates(
    scenario("I", n=1000, seed=1), R=25, init_mode="perturbed",
    compute_covariance=True,
)
print(f"scenario I, {summary.replicates} replicates "
      f"(convergence {summary.convergence_rate:.2%}, "
      f"median entropy {summary.median_entropy:.3f}, "
      f"median censoring {summary.median_censoring:.2%})\n")
print(f"{'parameter':<12} {'truth':>7} {'med.bias':>9} {'SD':>7} {'med.SEE':>8} {'CP':>6}")
for k, name in enumerate(summary.parameter_names):
    print(
        f"{name:<12} {summary.truth[k]:>7.3f} {summary.median_bias[k]:>+9.4f} "
        f"{summary.empirical_sd[k]:>7.4f} {summary.median_see[k]:>8.4f} "
        f"{summary.coverage[k]:>6.3f}"
    )
b = summary.baseline_at
print(f"\ncumulative hazard at t=3: truth {b['truth']:.3f}, "
      f"median bias {b['median_bias']:+.4f}, SD {b['empirical_sd']:.4f} (point only)")

# how often each criterion picks each number of classes
study = run_selection_study(scenario("I", n=1000, seed=2), R=10, L_range=(2, 3, 4))
print(f"\nselection frequencies over {study['replicates']} replicates:")
for criterion, freq in study["frequencies"].items():
    cells = ", ".join(f"L={L}: {frac:.0%}" for L, frac in sorted(freq.items()))
    print(f"  {criterion:<14} {cells}")
