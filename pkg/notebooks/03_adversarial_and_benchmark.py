"""
Learning the critic, and the benchmark protocol
===============================================

ESPRM replaces the fixed critics with a small network trained adversarially
against the policy. A reduced benchmark then compares it with the
classifier on freshly sampled scenarios. The plan below is tiny so the
script runs in about a minute. The full protocol uses 64 reps per n.
ESPRM takes small steps (learning rate 0.001), so it needs the full epoch
schedule min(8e6 / n, 8000). Capping it far below that leaves the policy
near its random initialization.
"""

from policylearn import EsprmConfig, FixtureSpec, esprm_fit, generate_fixture, linear_spec
from policylearn.bench import ExperimentPlan, run_experiment

data = generate_fixture(FixtureSpec(), 1000, seed=0)
model = esprm_fit(data, EsprmConfig(linear_spec(2), seed=0))
print("ESPRM direction:", model.params / abs(model.params).sum())

plan = ExperimentPlan(methods=["erm", "esprm", "finite_gmm_poly3"], n_grid=[200], reps=4,
                      mc_size=100_000, bootstrap=200)
report, rows, seconds = run_experiment(plan)
for r in report["results"]:
    print(f"{r['method']:>18}: mean regret {r['mean_regret']:.4f}, RMRR {r['rmrr']:+.1f}%")
print(f"{seconds:.1f}s")
