"""Expected improvement and its maximization over the unit hypercube.

The improvement target is the best MAP goodness value among the observed
points.  Maximization is gradient-free and deterministic for a given seed:
a seeded uniform sweep over the box followed by coordinate-wise pattern
search (compass search with step halving) from the best starting points.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .preference_gp import posterior
from .validation import check_positive

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcquisitionConfig:
    """Budget and seeding for expected-improvement maximization."""

    n_uniform_candidates: int = 2000
    n_local_refinements: int = 10
    local_steps: int = 100
    seed: int = 0
    initial_step: float = 0.1
    min_step: float = 1e-4

    def __post_init__(self):
        check_positive(self.n_uniform_candidates, "n_uniform_candidates")
        check_positive(self.n_local_refinements, "n_local_refinements")
        check_positive(self.local_steps, "local_steps")
        check_positive(self.initial_step, "initial_step")
        check_positive(self.min_step, "min_step")
        if self.n_local_refinements > self.n_uniform_candidates:
            raise ValueError("n_local_refinements cannot exceed n_uniform_candidates")
        if self.min_step > self.initial_step:
            raise ValueError("min_step cannot exceed initial_step")


def expected_improvement(mu, sigma, g_best):
    """Closed-form expected improvement of N(mu, sigma^2) over ``g_best``.

    For sigma > 0 this is ``(mu - g_best) * Phi(z) + sigma * phi(z)`` with
    ``z = (mu - g_best) / sigma``; for sigma = 0 it degenerates to
    ``max(mu - g_best, 0)``.  Accepts scalars or arrays; always >= 0.
    """
    mu_arr = np.asarray(mu, dtype=float)
    sigma_arr = np.asarray(sigma, dtype=float)
    if np.any(sigma_arr < 0):
        raise ValueError("sigma must be non-negative")
    scalar_in = mu_arr.ndim == 0 and sigma_arr.ndim == 0
    mu_b, sigma_b = np.broadcast_arrays(np.atleast_1d(mu_arr), np.atleast_1d(sigma_arr))
    diff = mu_b - g_best
    out = np.maximum(diff, 0.0)
    pos = sigma_b > 0
    if np.any(pos):
        z = diff[pos] / sigma_b[pos]
        phi = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        out[pos] = diff[pos] * ndtr(z) + sigma_b[pos] * phi
    out = np.maximum(out, 0.0)
    if scalar_in:
        return float(out[0])
    return out


def ei_at(model, X):
    """Expected improvement of the model posterior at a batch of points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu, sigma = posterior(model, X)
    return expected_improvement(mu, sigma, model.best_goodness())


def maximize_ei(model, config=None):
    """Find the point in [0,1]^D with the (approximately) largest expected
    improvement.

    Evaluates EI at ``n_uniform_candidates`` seeded-uniform points, refines
    the ``n_local_refinements`` best with coordinate-wise pattern search
    (steps halving from ``initial_step`` down to ``min_step``, clipped to the
    box), and returns the overall argmax.  Fully deterministic for a given
    seed; ties break toward the lowest candidate index.
    """
    config = config or AcquisitionConfig()
    dim = model.dim
    rng = np.random.default_rng(config.seed)
    cands = rng.uniform(size=(config.n_uniform_candidates, dim))
    ei = ei_at(model, cands)

    k = config.n_local_refinements
    order = np.argsort(-ei, kind="stable")[:k]
    x = cands[order].copy()  # (k, dim)
    f = ei[order].copy()
    step = np.full(k, config.initial_step)
    active = step >= config.min_step

    offsets = np.concatenate([np.eye(dim), -np.eye(dim)])  # (2*dim, dim)
    sweeps = 0
    while active.any() and sweeps < config.local_steps:
        idx = np.flatnonzero(active)
        moved = np.clip(x[idx, None, :] + step[idx, None, None] * offsets[None, :, :], 0.0, 1.0)
        fc = ei_at(model, moved.reshape(-1, dim)).reshape(len(idx), 2 * dim)
        best = np.argmax(fc, axis=1)
        f_best = fc[np.arange(len(idx)), best]
        improved = f_best > f[idx]
        imp_rows = idx[improved]
        x[imp_rows] = moved[improved, best[improved]]
        f[imp_rows] = f_best[improved]
        stalled = idx[~improved]
        step[stalled] /= 2.0
        active = step >= config.min_step
        sweeps += 1

    return x[int(np.argmax(f))].copy()
