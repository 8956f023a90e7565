# Recovering a Gaussian coupling from its initial velocity field.
#
# The flow-matching velocity at t = 0 is v0(x) = E[X1 - X0 | X0 = x]. For a
# Gaussian plan it is affine, x -> A x + b, and A + I = S^T Sigma0^{-1}, so the
# cross-covariance S can be read off exactly.

# %%
import numpy as np

from invfm import (
    AffineVelocityField,
    GaussianPlan,
    InconsistentField,
    recover_plan_from_v0,
    velocity_field,
)

rng = np.random.default_rng(1)
D = 3
Q, _ = np.linalg.qr(rng.standard_normal((D, D)))
sigma0 = Q @ np.diag([0.5, 1.0, 2.0]) @ Q.T
sigma1 = np.diag([1.0, 0.7, 1.3])
S = 0.3 * rng.standard_normal((D, D))
plan = GaussianPlan(rng.standard_normal(D), rng.standard_normal(D), sigma0, sigma1, S)
print("valid plan:", plan.report.valid)

# %% forward: the initial field
v0 = velocity_field(plan, 0.0)
print("A =\n", v0.A.round(4))
print("b =", v0.b.round(4))

# %% inverse: only the endpoints and v0 are needed
recovered = recover_plan_from_v0(plan.mu0, plan.sigma0, plan.mu1, plan.sigma1, v0)
print("max |S_rec - S| =", np.max(np.abs(recovered.cross - S)))

# %% a field whose constant term does not fit the endpoints is rejected
try:
    recover_plan_from_v0(plan.mu0, plan.sigma0, plan.mu1, plan.sigma1, AffineVelocityField(v0.A, v0.b + 0.1))
except InconsistentField as exc:
    print("rejected:", exc)
