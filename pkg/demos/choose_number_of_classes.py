"""Choose the number of latent classes with information criteria.

Fits one to four classes on a two-class benchmark dataset and tabulates
AIC, BIC, the entropy-penalized BIC and the standardized entropy index.
BIC is the recommended criterion.
"""

from lcph import ModelConfig, select_L
from lcph.simulation import generate, scenario

data, _ = generate(scenario("I", n=1000, seed=3))
config = ModelConfig(num_classes=2, initialization="kmeans", seed=0)

best_by, reports = select_L(data, config, L_range=[1, 2, 3, 4])

print(f"{'L':>2} {'loglik':>11} {'params':>6} {'AIC':>10} {'BIC':>10} "
      f"{'ICL-BIC':>10} {'entropy':>8}")
for rep in reports:
    print(
        f"{rep.L:>2} {rep.loglik:>11.2f} {rep.num_params:>6} {rep.aic:>10.1f} "
        f"{rep.bic:>10.1f} {rep.icl_bic:>10.1f} {rep.entropy_index:>8.3f}"
    )

print("\nselected number of classes:")
for criterion, L in sorted(best_by.items()):
    print(f"  {criterion:<14} -> L = {L}")
