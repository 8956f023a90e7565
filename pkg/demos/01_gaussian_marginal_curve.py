# Marginal curve of a Gaussian coupling.
#
# Couple N(mu0, Sigma0) with N(mu1, Sigma1) through a cross-covariance S and
# watch the law of X_t = (1 - t) X0 + t X1 move between them.

# %%
import numpy as np

from invfm import GaussianPlan, marginal_at, sample_plan, validate_gaussian_plan

plan = GaussianPlan(
    mu0=[0.0, 0.0],
    mu1=[2.0, 0.0],
    sigma0=np.eye(2),
    sigma1=np.eye(2),
    cross=np.zeros((2, 2)),  # independent coupling
)
print(validate_gaussian_plan(plan).valid)

# %% closed form along the curve
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    p = marginal_at(plan, t)
    print(f"t={t:4.2f}  mean={p.mean}  cov diag={np.diag(p.cov)}")

# At t = 0.5 the covariance shrinks to 0.5 I: averaging two independent
# unit Gaussians halves the variance.

# %% the same numbers by brute force
x0, x1 = sample_plan(plan, 200_000, seed=0)
xt = 0.5 * x0 + 0.5 * x1
print("empirical mean", xt.mean(0).round(3))
print("empirical cov\n", np.cov(xt, rowvar=False).round(3))

# %% a plan that is not a valid coupling
bad = GaussianPlan([0.0], [0.0], [[1.0]], [[1.0]], [[1.5]])
report = validate_gaussian_plan(bad)
print(report.valid, report["joint_psd"].detail)
