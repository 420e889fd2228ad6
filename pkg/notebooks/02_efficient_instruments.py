"""
Why the weighted classifier is not efficient
============================================

At a minimizer of the surrogate risk the conditional moment
E[|psi| l'(g(X), sign psi) | X] vanishes. Any critic f(x) turns it into an
unconditional restriction. The classifier uses the policy's own gradient
as critics. The efficient choice divides by the conditional variance of the
moment, which matters when |psi| changes with x.
"""

import numpy as np

from policylearn import FixtureSpec, generate_fixture, linear_spec
from policylearn.bench import param_sq_error
from policylearn.gmm import PolynomialBasis, finite_gmm_fit, fixture_conditionals, instrument_basis
from policylearn.surrogate import erm_fit

fixture = FixtureSpec()   # |psi| = c(x) ranges from 0.05 to 1
spec = linear_spec(2)
errors = {"erm": [], "efficient": [], "poly3": []}
for rep in range(16):
    data = generate_fixture(fixture, 2000, seed=rep)
    erm = erm_fit(data, spec, seed=rep)
    # GMM with the exact efficient instruments evaluated at the ERM estimate
    basis = instrument_basis(spec, erm.params, fixture_conditionals(fixture))
    eff = finite_gmm_fit(data, spec, basis, stages=1, anchor=erm.params)
    poly = finite_gmm_fit(data, spec, PolynomialBasis(3), seed=rep)
    for name, model in (("erm", erm), ("efficient", eff), ("poly3", poly)):
        errors[name].append(param_sq_error(model.params, fixture.theta_star))

for name, vals in errors.items():
    print(f"{name:>9}: mean squared error of the normalized direction {np.mean(vals):.5f}")
