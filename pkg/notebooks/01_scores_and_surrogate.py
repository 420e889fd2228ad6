"""
From observational data to a weighted classification problem
=============================================================

A policy picks treatment +1 or -1 for each context x. We never see both
outcomes, so each row gets a score psi whose conditional mean is the
treatment effect. Learning a policy then looks like weighted logistic
classification with label sign(psi) and weight |psi|.
"""

import numpy as np

from policylearn import (ScoreConfig, compute_scores, erm_fit, fit_nuisances, generate_data,
                         linear_spec, oracle_policy_value, sample_scenario)
from policylearn.data import Dataset

# A random linear scenario: outcome means and propensity logit are linear in x.
scenario = sample_scenario("Linear", seed=1)
train = generate_data(scenario, 2000, seed=1, label="train")
tune = generate_data(scenario, 2000, seed=1, label="tune")

# Nuisances are fit on the tuning sample only.
both = Dataset(np.vstack([train.X, tune.X]), np.concatenate([train.T, tune.T]),
               np.concatenate([train.Y, tune.Y]))
nuisances = fit_nuisances(both, np.arange(train.n, both.n), "linear-logistic")

# Three score variants. All three average to roughly the same effect.
for kind in ("IPS", "DM", "DR"):
    scored = compute_scores(train, nuisances, ScoreConfig(kind))
    print(f"{kind:>3}: mean psi {scored.psi.mean():+.3f}, rows at the propensity clip {scored.clip_binding}")
print(f"true mean effect {scenario.tau(train.X).mean():+.3f}")

# Fit the weighted logistic surrogate on doubly robust scores.
scored = compute_scores(train, nuisances, ScoreConfig("DR"))
model = erm_fit(scored, linear_spec(2), seed=1)
value = oracle_policy_value(scenario, model, mc_size=200_000, seed=1)
print(f"policy value {value.value:.4f} of an optimum {value.optimum:.4f} (regret {value.regret:.4f})")
