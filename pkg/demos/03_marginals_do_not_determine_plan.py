# Two different Gaussian couplings with the same marginal curve.
#
# Sigma_t only involves S + S^T, so adding and subtracting an antisymmetric
# matrix K to a common symmetric part gives plans that no snapshot of X_t can
# tell apart. Their initial velocity fields still differ.

# %%
import numpy as np

from invfm import (
    NotApplicableInOneDimension,
    counterexample_pair,
    marginal_curve,
    velocity_field,
)

K = np.array([[0.0, 0.5], [-0.5, 0.0]])
first, second = counterexample_pair(np.eye(2), np.eye(2), np.zeros((2, 2)), K)
print("S  =\n", first.cross)
print("S' =\n", second.cross)

# %% identical marginals on a fine grid
grid = np.linspace(0, 1, 101)
dm, dc = marginal_curve(first, grid).max_deviation(marginal_curve(second, grid))
print(f"max mean deviation {dm:.1e}, max cov deviation {dc:.1e}")

# %% but different initial velocities
for plan in (first, second):
    print("A_0 =\n", velocity_field(plan, 0.0).A)

# %% and in one dimension there is nothing to exploit
try:
    counterexample_pair([[1.0]], [[1.0]], [[0.0]], [[0.0]])
except NotApplicableInOneDimension as exc:
    print("D = 1:", exc)
