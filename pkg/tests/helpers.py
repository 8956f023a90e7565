import numpy as np

from invfm import DiscretePlan1D, GaussianPlan


def random_spd(rng, D, lo=0.5, hi=3.0):
    Q, _ = np.linalg.qr(rng.standard_normal((D, D)))
    M = (Q * rng.uniform(lo, hi, D)) @ Q.T
    return 0.5 * (M + M.T)


def _sqrtm(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(w)) @ V.T


def random_gaussian_plan(rng, D, max_corr=0.95):
    """Gaussian plan with strictly PD joint covariance.

    S = Sigma0^{1/2} K Sigma1^{1/2} with spectral norm of K below 1.
    """
    s0, s1 = random_spd(rng, D), random_spd(rng, D)
    K = rng.standard_normal((D, D))
    K *= rng.uniform(0.05, max_corr) / np.linalg.norm(K, 2)
    S = _sqrtm(s0) @ K @ _sqrtm(s1)
    return GaussianPlan(rng.normal(size=D), rng.normal(size=D), s0, s1, S)


def random_discrete_plan(rng, n, m, sparsity=0.0):
    x = np.sort(rng.uniform(-2, 2, n))
    y = np.sort(rng.uniform(-2, 2, m))
    while n > 1 and np.min(np.diff(x)) < 1e-3:
        x = np.sort(rng.uniform(-2, 2, n))
    while m > 1 and np.min(np.diff(y)) < 1e-3:
        y = np.sort(rng.uniform(-2, 2, m))
    w = rng.dirichlet(np.ones(n * m)).reshape(n, m)
    if sparsity:
        w[rng.random((n, m)) < sparsity] = 0.0
        if w.sum() == 0:
            w[0, 0] = 1.0
        w /= w.sum()
    return DiscretePlan1D(x, y, w)
