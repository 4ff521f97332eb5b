"""Shared oracles for sampler correctness checks."""

import numpy as np
from scipy import stats


def batch_mean_se(draws) -> float:
    """Monte Carlo standard error of a chain mean by batch means."""
    draws = np.asarray(draws, dtype=float)
    n = draws.size
    n_batches = max(int(np.sqrt(n)), 2)
    usable = (n // n_batches) * n_batches
    batches = draws[:usable].reshape(n_batches, -1).mean(axis=1)
    return float(batches.std(ddof=1) / np.sqrt(n_batches))


def grid_posterior_mean(logpost, grids, transform=None):
    """Dense-grid quadrature posterior mean over 1 or 2 parameters.

    ``logpost`` takes the meshgrid arrays; ``transform`` maps the grid to the
    quantity whose posterior mean is wanted (default: first parameter).
    """
    mesh = np.meshgrid(*grids, indexing="ij")
    lp = logpost(*mesh)
    lp = lp - lp.max()
    w = np.exp(lp)
    target = transform(*mesh) if transform is not None else mesh[0]
    return float((w * target).sum() / w.sum())


def gamma_poisson_posterior(a, b, y):
    """Closed-form Gamma posterior for a Poisson mean."""
    y = np.asarray(y)
    return stats.gamma(a=a + y.sum(), scale=1.0 / (b + y.size))


def normal_normal_posterior(prior_mean, prior_var, sigma2, y):
    """Closed-form Normal posterior for a Normal mean with known variance."""
    y = np.asarray(y, dtype=float)
    post_var = 1.0 / (1.0 / prior_var + y.size / sigma2)
    post_mean = post_var * (prior_mean / prior_var + y.sum() / sigma2)
    return post_mean, post_var
