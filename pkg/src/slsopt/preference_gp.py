"""Gaussian-process preference model fitted by joint MAP estimation.

The latent "goodness" function is a scalar valuation over the unit hypercube,
never observed directly: each observation is a slider choice saying one point
beat a set of alternatives.  The model combines

* a zero-mean GP prior with an ARD Matern-5/2 kernel over the observed points,
* a Bradley-Terry-Luce (softmax) likelihood for each choice record, and
* independent log-normal priors on the kernel hyperparameters,

and maximizes the joint log posterior over the goodness values at the observed
points and the hyperparameters.  Posterior prediction at an unobserved point
follows the usual GP conditionals; ``posterior`` returns the mean and the
*standard deviation* (not the variance).

The additive-shift degeneracy of the choice likelihood (adding a constant to
all goodness values changes no choice probability) is broken by the GP prior,
which anchors the scale at zero.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import logsumexp
from sklearn.base import BaseEstimator

from .validation import DimensionMismatchError, as_point_batch, check_positive

SQRT5 = np.sqrt(5.0)
LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_SIGNAL_VARIANCE = 0.5
DEFAULT_LENGTH_SCALE = 0.5
DEFAULT_BTL_SCALE = 0.01
DEFAULT_JITTER = 1e-6
DUPLICATE_TOL = 1e-9


class GramNotPositiveDefiniteError(np.linalg.LinAlgError):
    """The kernel Gram matrix failed to factorize even after jitter."""


class MapConvergenceError(RuntimeError):
    """MAP optimization did not reach the gradient tolerance.

    Carries the best iterate found so the caller can inspect or retry.
    """

    def __init__(self, message, goodness, hyper, grad_norm):
        super().__init__(message)
        self.goodness = goodness
        self.hyper = hyper
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class Hyperparameters:
    """Kernel and likelihood hyperparameters, all strictly positive.

    ``signal_variance`` and ``length_scales`` are MAP-estimated by default;
    ``btl_scale`` (the choice-likelihood temperature) and ``jitter`` (the
    diagonal stabilizer) stay fixed.
    """

    signal_variance: float = DEFAULT_SIGNAL_VARIANCE
    length_scales: np.ndarray = DEFAULT_LENGTH_SCALE
    btl_scale: float = DEFAULT_BTL_SCALE
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        check_positive(self.signal_variance, "signal_variance")
        check_positive(self.btl_scale, "btl_scale")
        check_positive(self.jitter, "jitter")
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        check_positive(ls, "length_scales")
        ls = ls.copy()
        ls.flags.writeable = False
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "btl_scale", float(self.btl_scale))
        object.__setattr__(self, "jitter", float(self.jitter))

    @classmethod
    def default(cls, dim):
        return cls(length_scales=np.full(dim, DEFAULT_LENGTH_SCALE))

    def broadcast(self, dim):
        """Return a copy whose length-scale vector has exactly ``dim`` entries."""
        ls = self.length_scales
        if ls.shape[0] == dim:
            return self
        if ls.shape[0] == 1:
            return Hyperparameters(self.signal_variance, np.full(dim, ls[0]),
                                   self.btl_scale, self.jitter)
        raise DimensionMismatchError(
            f"length_scales has {ls.shape[0]} entries, expected {dim}")


@dataclass(frozen=True)
class HyperPriors:
    """Independent log-normal priors on the optimized hyperparameters.

    Each prior has its median at the given value with spread ``log_std`` in
    log space.  The prior term enters the objective as the Gaussian log
    density of log(theta), so the prior term alone is maximized exactly at
    the median values.
    """

    median_signal_variance: float = DEFAULT_SIGNAL_VARIANCE
    median_length_scale: float = DEFAULT_LENGTH_SCALE
    log_std: float = 0.5

    def __post_init__(self):
        check_positive(self.median_signal_variance, "median_signal_variance")
        check_positive(self.median_length_scale, "median_length_scale")
        check_positive(self.log_std, "log_std")


@dataclass(frozen=True)
class PreferenceRecord:
    """One slider choice: ``winner`` beat every index in ``losers``."""

    winner: int
    losers: tuple

    def __post_init__(self):
        losers = tuple(dict.fromkeys(int(l) for l in self.losers))
        if not losers:
            raise ValueError("a preference record needs at least one loser")
        if self.winner in losers:
            raise ValueError(f"winner {self.winner} cannot also be a loser")
        if self.winner < 0 or any(l < 0 for l in losers):
            raise ValueError("indices must be non-negative")
        object.__setattr__(self, "winner", int(self.winner))
        object.__setattr__(self, "losers", losers)

    def indices(self):
        return (self.winner, *self.losers)


def _coerce_records(records):
    out = []
    for r in records:
        if isinstance(r, PreferenceRecord):
            out.append(r)
        else:
            winner, losers = r
            out.append(PreferenceRecord(winner, tuple(np.atleast_1d(losers).tolist())))
    return tuple(out)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------

def _scaled_r(X, Y, length_scales):
    """Pairwise ARD distance r with r^2 = sum_d (x_d - y_d)^2 / l_d^2.

    Uses the expanded-square matmul form; round-off can push tiny squared
    distances a hair negative, so they are clamped before the square root.
    """
    Xs = X / length_scales
    Ys = Y / length_scales
    sq = (np.sum(Xs * Xs, axis=1)[:, None] + np.sum(Ys * Ys, axis=1)[None, :]
          - 2.0 * (Xs @ Ys.T))
    return np.sqrt(np.maximum(sq, 0.0))


def _matern52(r, signal_variance):
    return signal_variance * (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def kernel(a, b, hyper):
    """ARD Matern-5/2 covariance between two points."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.shape[0] != hyper.length_scales.shape[0]:
        raise DimensionMismatchError(
            f"kernel inputs have shapes {a.shape}, {b.shape}; "
            f"length_scales has {hyper.length_scales.shape[0]} entries")
    r = _scaled_r(a[None, :], b[None, :], hyper.length_scales)[0, 0]
    return float(_matern52(r, hyper.signal_variance))


def kernel_matrix(X, Y, hyper):
    """Cross-covariance matrix between two point batches (no jitter)."""
    X = as_point_batch(X, hyper.length_scales.shape[0], "X")
    Y = as_point_batch(Y, hyper.length_scales.shape[0], "Y")
    return _matern52(_scaled_r(X, Y, hyper.length_scales), hyper.signal_variance)


def gram_matrix(X, hyper):
    """Kernel Gram matrix of a point batch with jitter on the diagonal."""
    K = kernel_matrix(X, X, hyper)
    return K + hyper.jitter * np.eye(K.shape[0])


def _chol_gram(X, hyper):
    K = gram_matrix(X, hyper)
    try:
        return cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise GramNotPositiveDefiniteError(
            f"Gram matrix of {X.shape[0]} points is not positive definite after "
            f"jitter {hyper.jitter:g} (signal_variance={hyper.signal_variance:g}); "
            f"consider a larger jitter or merging near-duplicate points") from exc


# ---------------------------------------------------------------------------
# Log posterior
# ---------------------------------------------------------------------------

def btl_log_likelihood(goodness, records, btl_scale):
    """Sum over records of log P(winner | candidate set) under the softmax
    choice model with temperature ``btl_scale``."""
    goodness = np.asarray(goodness, dtype=float)
    total = 0.0
    for rec in records:
        z = goodness[list(rec.indices())] / btl_scale
        total += z[0] - logsumexp(z)
    return float(total)


def _log_hyper_prior(hyper, priors):
    lam = np.concatenate(([np.log(hyper.signal_variance)], np.log(hyper.length_scales)))
    mu = np.concatenate(([np.log(priors.median_signal_variance)],
                         np.full(hyper.length_scales.shape[0], np.log(priors.median_length_scale))))
    z = (lam - mu) / priors.log_std
    return float(-0.5 * np.sum(z * z) - lam.size * (np.log(priors.log_std) + 0.5 * LOG_2PI))


def log_posterior(goodness, hyper, points, records, priors=None):
    """Joint unnormalized log posterior of (goodness, hyperparameters).

    The three terms: choice log likelihood, GP log density of the goodness
    vector under the jittered Gram matrix, and the hyperparameter log prior.
    """
    priors = priors or HyperPriors()
    points = as_point_batch(points, name="points")
    goodness = np.asarray(goodness, dtype=float)
    if goodness.shape[0] != points.shape[0]:
        raise DimensionMismatchError(
            f"goodness has {goodness.shape[0]} entries for {points.shape[0]} points")
    records = _coerce_records(records)
    hyper = hyper.broadcast(points.shape[1])

    L = _chol_gram(points, hyper)
    alpha = cho_solve((L, True), goodness)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    gp_term = -0.5 * goodness @ alpha - 0.5 * log_det - 0.5 * goodness.shape[0] * LOG_2PI
    return btl_log_likelihood(goodness, records, hyper.btl_scale) + gp_term \
        + _log_hyper_prior(hyper, priors)


class _MapObjective:
    """Negative log posterior and its gradient in the optimization variables
    ``z = [goodness, log signal_variance, log length_scales]`` (the hyper block
    is dropped when hyperparameters are held fixed).

    The point set is fixed during one fit, so squared coordinate differences
    are precomputed once.
    """

    def __init__(self, points, records, priors, hyper0, optimize_hyper):
        self.points = points
        self.records = records
        self.priors = priors
        self.hyper0 = hyper0
        self.optimize_hyper = optimize_hyper
        self.n, self.dim = points.shape
        diff = points[:, None, :] - points[None, :, :]
        self.sq_diffs = diff * diff  # (n, n, dim)
        self.mu_lam = np.concatenate(
            ([np.log(priors.median_signal_variance)],
             np.full(self.dim, np.log(priors.median_length_scale))))
        # records padded to a rectangular index table for vectorized
        # likelihood evaluation; winner sits in column 0
        if records:
            width = max(len(rec.losers) for rec in records) + 1
            self.rec_idx = np.zeros((len(records), width), dtype=int)
            self.rec_mask = np.zeros((len(records), width), dtype=bool)
            for i, rec in enumerate(records):
                idx = rec.indices()
                self.rec_idx[i, : len(idx)] = idx
                self.rec_mask[i, : len(idx)] = True
        else:
            self.rec_idx = np.zeros((0, 1), dtype=int)
            self.rec_mask = np.zeros((0, 1), dtype=bool)

    def _btl_value(self, g, btl_scale):
        """Vectorized choice log likelihood over all records."""
        if self.rec_idx.shape[0] == 0:
            return 0.0
        Z = g[self.rec_idx] / btl_scale
        Z = np.where(self.rec_mask, Z, -np.inf)
        m = Z.max(axis=1)
        lse = m + np.log(np.sum(np.exp(Z - m[:, None]), axis=1))
        return float(np.sum(Z[:, 0] - lse))

    def _btl_probabilities(self, g, btl_scale):
        """Per-record softmax probabilities, zero at padded positions."""
        Z = g[self.rec_idx] / btl_scale
        Z = np.where(self.rec_mask, Z, -np.inf)
        Z -= Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        return P

    def _btl_grad_into(self, grad, g, btl_scale):
        """Accumulate the choice-likelihood gradient into ``grad``; returns
        the per-record probability table for curvature reuse."""
        if self.rec_idx.shape[0] == 0:
            return None
        P = self._btl_probabilities(g, btl_scale)
        contrib = -P / btl_scale
        contrib[:, 0] += 1.0 / btl_scale
        np.add.at(grad, self.rec_idx.ravel(), np.where(self.rec_mask, contrib, 0.0).ravel())
        return P

    def unpack(self, z):
        g = z[: self.n]
        if self.optimize_hyper:
            sv = float(np.exp(z[self.n]))
            ls = np.exp(z[self.n + 1:])
            hyper = Hyperparameters(sv, ls, self.hyper0.btl_scale, self.hyper0.jitter)
        else:
            hyper = self.hyper0
        return g, hyper

    def pack(self, goodness, hyper):
        if self.optimize_hyper:
            return np.concatenate(
                [goodness, [np.log(hyper.signal_variance)], np.log(hyper.length_scales)])
        return np.asarray(goodness, dtype=float).copy()

    def neg_value_and_grad(self, z):
        g, hyper = self.unpack(z)
        sv, ls = hyper.signal_variance, hyper.length_scales
        s = hyper.btl_scale

        r2 = np.sum(self.sq_diffs / (ls * ls), axis=-1)
        r = np.sqrt(r2)
        decay = np.exp(-SQRT5 * r)
        Kf = sv * (1.0 + SQRT5 * r + (5.0 / 3.0) * r2) * decay
        K = Kf + hyper.jitter * np.eye(self.n)
        try:
            L = cholesky(K, lower=True)
        except np.linalg.LinAlgError as exc:
            raise GramNotPositiveDefiniteError(
                f"Gram matrix not positive definite during MAP fit "
                f"(n={self.n}, signal_variance={sv:g})") from exc
        alpha = cho_solve((L, True), g)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))

        value = -0.5 * g @ alpha - 0.5 * log_det - 0.5 * self.n * LOG_2PI
        value += self._btl_value(g, s)
        grad_g = -alpha.copy()
        self._btl_grad_into(grad_g, g, s)

        if not self.optimize_hyper:
            return -value, -grad_g

        Kinv = cho_solve((L, True), np.eye(self.n))
        B = np.outer(alpha, alpha) - Kinv
        # dK/dlog(sv) = Kf;  dK/dlog(l_d) = C * sq_diffs[..,d] / l_d^2
        grad_log_sv = 0.5 * np.sum(B * Kf)
        C = (5.0 / 3.0) * sv * (1.0 + SQRT5 * r) * decay
        grad_log_ls = 0.5 * np.einsum("ij,ijd->d", B * C, self.sq_diffs) / (ls * ls)

        lam = z[self.n:]
        zp = (lam - self.mu_lam) / self.priors.log_std
        value += -0.5 * np.sum(zp * zp) \
            - lam.size * (np.log(self.priors.log_std) + 0.5 * LOG_2PI)
        grad_lam = np.concatenate(([grad_log_sv], grad_log_ls)) - zp / self.priors.log_std

        return -value, -np.concatenate([grad_g, grad_lam])

    def solve_goodness(self, z, tol_inner, max_inner=100, trace=None):
        """Maximize the log posterior over the goodness block with damped
        Newton steps, holding hyperparameters fixed.

        The objective is strictly concave in the goodness values and the
        exact block Hessian is cheap, so this converges quadratically and
        clears the stiff choice-likelihood directions that defeat a
        quasi-Newton line search.  The Gram matrix only depends on the fixed
        hyperparameters, so it is factorized once per call.  Returns the
        updated z.
        """
        z = z.copy()
        _, hyper = self.unpack(z)
        s = hyper.btl_scale
        ls = hyper.length_scales
        r2 = np.sum(self.sq_diffs / (ls * ls), axis=-1)
        K = _matern52(np.sqrt(r2), hyper.signal_variance) + hyper.jitter * np.eye(self.n)
        try:
            L = cholesky(K, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise GramNotPositiveDefiniteError(
                "Gram matrix not positive definite during goodness solve") from exc
        Kinv = cho_solve((L, True), np.eye(self.n), check_finite=False)
        const = -np.sum(np.log(np.diag(L))) - 0.5 * self.n * LOG_2PI
        if self.optimize_hyper:
            lam = z[self.n:]
            zp = (lam - self.mu_lam) / self.priors.log_std
            const += (-0.5 * np.sum(zp * zp)
                      - lam.size * (np.log(self.priors.log_std) + 0.5 * LOG_2PI))
        record_idx = [list(rec.indices()) for rec in self.records]

        def value(g):
            val = -0.5 * g @ (Kinv @ g) + const
            return float(val + self._btl_value(g, s))

        def grad_and_curvature(g, with_curvature=True):
            grad = -(Kinv @ g)
            A = Kinv.copy() if with_curvature else None
            P = self._btl_grad_into(grad, g, s)
            if with_curvature and P is not None:
                for i, idx in enumerate(record_idx):
                    p = P[i, : len(idx)]
                    A[np.ix_(idx, idx)] += (np.diag(p) - np.outer(p, p)) / (s * s)
            return grad, A

        g = z[: self.n].copy()
        f0 = value(g)
        for _ in range(max_inner):
            grad_g, A = grad_and_curvature(g)
            grad_norm = float(np.max(np.abs(grad_g)))
            if grad_norm <= tol_inner:
                break
            try:
                La = cholesky(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise GramNotPositiveDefiniteError(
                    "goodness Hessian not positive definite") from exc
            direction = cho_solve((La, True), grad_g, check_finite=False)
            t = 1.0
            accepted = False
            while t >= 1e-14:
                g_trial = g + t * direction
                f_trial = value(g_trial)
                if f_trial > f0:
                    g, f0, accepted = g_trial, f_trial, True
                    if trace is not None:
                        trace.append(f_trial)
                    break
                t *= 0.5
            if not accepted:
                # The objective is flat beyond float resolution but the
                # gradient is still informative: take the full Newton step
                # when it contracts the gradient norm.  f moves by at most
                # the noise floor, so monotone ascent holds to within eps.
                g_trial = g + direction
                grad_trial, _ = grad_and_curvature(g_trial, with_curvature=False)
                if float(np.max(np.abs(grad_trial))) < 0.9 * grad_norm:
                    g = g_trial
                    f0 = value(g)
                    if trace is not None:
                        trace.append(f0)
                else:
                    break  # genuinely stuck; caller checks the residual
        z[: self.n] = g
        return z


def log_posterior_grad(goodness, hyper, points, records, priors=None,
                       include_hyper=True):
    """Analytic gradient of ``log_posterior`` with respect to the goodness
    vector and, when ``include_hyper``, the log hyperparameters
    (log signal_variance, log length_scales)."""
    priors = priors or HyperPriors()
    points = as_point_batch(points, name="points")
    hyper = hyper.broadcast(points.shape[1])
    records = _coerce_records(records)
    obj = _MapObjective(points, records, priors, hyper, include_hyper)
    z = obj.pack(np.asarray(goodness, dtype=float), hyper)
    _, neg_grad = obj.neg_value_and_grad(z)
    return -neg_grad


def _merge_duplicates(points, records, tol=DUPLICATE_TOL):
    """Collapse observed points closer than ``tol`` onto their first occurrence
    and remap record indices.  Losers colliding with their record's winner are
    dropped; records left with no losers are dropped entirely."""
    n = points.shape[0]
    remap = np.arange(n)
    keep = []
    for i in range(n):
        dup = None
        for j in keep:
            if np.linalg.norm(points[i] - points[j]) < tol:
                dup = j
                break
        if dup is None:
            keep.append(i)
        else:
            remap[i] = dup
    if len(keep) == n:
        return points, records
    new_index = {old: new for new, old in enumerate(keep)}
    merged = points[keep]
    out = []
    for rec in records:
        winner = new_index[remap[rec.winner]]
        losers = tuple(dict.fromkeys(
            new_index[remap[l]] for l in rec.losers if new_index[remap[l]] != winner))
        if losers:
            out.append(PreferenceRecord(winner, losers))
    return merged, tuple(out)


# ---------------------------------------------------------------------------
# Fitted model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreferenceModel:
    """Immutable fitted state: observed points, MAP goodness values, MAP
    hyperparameters, the records that produced them, and the cached Cholesky
    factorization of the jittered Gram matrix."""

    points: np.ndarray
    goodness: np.ndarray
    hyper: Hyperparameters
    records: tuple = ()
    chol_lower: np.ndarray = field(default=None, repr=False)
    alpha: np.ndarray = field(default=None, repr=False)
    # cached prediction-side terms: points/lengthscales and their row norms
    scaled_points: np.ndarray = field(default=None, repr=False)
    scaled_sqnorms: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(cls, points, goodness, hyper, records=()):
        """Construct a model directly from explicit parts, computing the
        factorization (useful for fixed-hyperparameter prediction)."""
        points = as_point_batch(points, name="points")
        goodness = np.asarray(goodness, dtype=float).copy()
        if goodness.shape != (points.shape[0],):
            raise DimensionMismatchError(
                f"goodness shape {goodness.shape} does not match {points.shape[0]} points")
        hyper = hyper.broadcast(points.shape[1])
        records = _coerce_records(records)
        L = _chol_gram(points, hyper)
        alpha = cho_solve((L, True), goodness)
        points = points.copy()
        scaled = points / hyper.length_scales
        sqnorms = np.sum(scaled * scaled, axis=1)
        for arr in (points, goodness, L, alpha, scaled, sqnorms):
            arr.flags.writeable = False
        return cls(points=points, goodness=goodness, hyper=hyper,
                   records=records, chol_lower=L, alpha=alpha,
                   scaled_points=scaled, scaled_sqnorms=sqnorms)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def n_points(self):
        return self.points.shape[0]

    def best_goodness(self):
        """Largest MAP goodness value among the observed points."""
        return float(np.max(self.goodness))


def fit_map(points, records, priors=None, init=None, *, hyper=None,
            optimize_hyper=True, tol=1e-5, max_iter=500, trace=None):
    """Jointly MAP-fit goodness values and hyperparameters from choice records.

    Parameters
    ----------
    points : array-like, shape (N, D)
        Observed points.  Near-duplicates (within 1e-9) are merged first.
    records : sequence of PreferenceRecord or (winner, losers) pairs
        Choice data; indices refer to rows of ``points``.
    priors : HyperPriors, optional
        Hyperparameter priors; defaults center on the engine defaults.
    init : (goodness, Hyperparameters) pair, optional
        Warm start.  Defaults to zero goodness and default hyperparameters.
    hyper : Hyperparameters, optional
        Starting hyperparameters (and the fixed values of btl_scale/jitter);
        overridden by ``init`` when both are given.
    optimize_hyper : bool
        When False, only the goodness vector is optimized.
    tol : float
        Gradient infinity-norm required at the solution.
    max_iter : int
        Iteration budget for the quasi-Newton ascent.
    trace : list, optional
        When given, receives the log-posterior value of each accepted iterate.

    Returns
    -------
    PreferenceModel

    Raises
    ------
    MapConvergenceError
        If the gradient norm still exceeds ``tol`` after the budget; the error
        carries the best iterate found.
    """
    priors = priors or HyperPriors()
    points = as_point_batch(points, name="points")
    if points.shape[0] < 1:
        raise ValueError("need at least one observed point")
    records = _coerce_records(records)
    for rec in records:
        if any(i >= points.shape[0] for i in rec.indices()):
            raise IndexError(f"record {rec} references a point index out of range")
    points, records = _merge_duplicates(points, records)
    n, dim = points.shape

    if init is not None:
        g0, hyper0 = init
        g0 = np.asarray(g0, dtype=float).copy()
        if g0.shape != (n,):
            raise DimensionMismatchError(f"init goodness shape {g0.shape}, expected ({n},)")
    else:
        g0 = np.zeros(n)
        hyper0 = hyper if hyper is not None else Hyperparameters(
            signal_variance=priors.median_signal_variance,
            length_scales=np.full(dim, priors.median_length_scale))
    hyper0 = hyper0.broadcast(dim)

    obj = _MapObjective(points, records, priors, hyper0, optimize_hyper)
    z0 = obj.pack(g0, hyper0)
    inner_tol = max(min(0.01 * tol, 1e-7), 1e-12)
    if trace is not None:
        trace.append(-obj.neg_value_and_grad(z0)[0])

    if not optimize_hyper:
        z_best = obj.solve_goodness(z0, inner_tol, trace=trace)
    else:
        # Profile the goodness block out: for each hyperparameter trial the
        # inner Newton solve maximizes over goodness, and the envelope theorem
        # makes the reduced gradient just the hyper block of the full gradient.
        # This removes the stiff goodness/hyper coupling that stalls a joint
        # quasi-Newton ascent.  The inner solve always starts from the same
        # initial goodness so the reduced objective is bit-reproducible; warm
        # starting it from the previous evaluation would make repeated
        # evaluations at one hyperparameter point disagree at the float noise
        # level, which derails the outer line search.
        def reduced(lam):
            z = z0.copy()
            z[obj.n:] = lam
            z = obj.solve_goodness(z, inner_tol)
            f, grad = obj.neg_value_and_grad(z)
            return f, grad[obj.n:]

        callback = None
        if trace is not None:
            callback = lambda lam_k: trace.append(-reduced(np.asarray(lam_k))[0])
            trace.append(-reduced(z0[obj.n:])[0])

        # Generous bounds only guard against numerical blow-up during line
        # search; the priors keep the solution far inside.
        bounds = [(np.log(1e-4), np.log(1e4))] * (1 + dim)
        options = {"maxiter": max_iter, "ftol": 1e-16, "gtol": 0.5 * tol,
                   "maxcor": 20, "maxls": 60}
        res = minimize(reduced, z0[obj.n:], jac=True, method="L-BFGS-B",
                       bounds=bounds, options=options, callback=callback)
        z_best = z0.copy()
        z_best[obj.n:] = res.x
        z_best = obj.solve_goodness(z_best, inner_tol)
        if float(np.max(np.abs(obj.neg_value_and_grad(z_best)[1]))) > tol:
            z_best = _newton_polish_hyper(obj, z0, z_best, tol, bounds, trace)

    grad_norm = float(np.max(np.abs(obj.neg_value_and_grad(z_best)[1])))
    g_star, hyper_star = obj.unpack(z_best)
    if grad_norm > tol:
        raise MapConvergenceError(
            f"MAP fit stopped with gradient infinity-norm {grad_norm:.3g} > tol {tol:g} "
            f"after {max_iter} iterations (n={n}, {len(records)} records)",
            goodness=g_star, hyper=hyper_star, grad_norm=grad_norm)
    return PreferenceModel.build(points, g_star, hyper_star, records)


def _newton_polish_hyper(obj, z0, z_best, tol, bounds, trace=None):
    """Drive the hyperparameter gradient below tolerance when the outer line
    search has hit the float noise floor.

    Near the optimum the objective is so flat that f-value comparisons cannot
    see the remaining improvement, but the analytic gradient is still accurate
    to many digits.  Newton steps on the profiled hyperparameter block, with a
    finite-difference Hessian of the reduced gradient and acceptance based on
    gradient-norm decrease (not f-increase), land on the flat optimum.
    """
    inner_tol = max(1e-11, tol * 1e-4)
    lo, hi = bounds[0]

    def reduced_grad(lam):
        z = z0.copy()
        z[obj.n:] = lam
        z = obj.solve_goodness(z, inner_tol)
        return obj.neg_value_and_grad(z)[1][obj.n:], z

    m = z_best.size - obj.n
    lam = z_best[obj.n:].copy()
    g_lam, z_cur = reduced_grad(lam)
    for _ in range(15):
        if float(np.max(np.abs(g_lam))) <= 0.25 * tol:
            break
        h = 3e-6
        H = np.empty((m, m))
        for j in range(m):
            lam_j = lam.copy()
            lam_j[j] += h
            H[:, j] = (reduced_grad(lam_j)[0] - g_lam) / h
        H = 0.5 * (H + H.T)
        try:
            step = -np.linalg.solve(H, g_lam)
        except np.linalg.LinAlgError:
            step = -g_lam
        norm0 = float(np.max(np.abs(g_lam)))
        t = 1.0
        accepted = False
        while t >= 1e-6:
            lam_t = np.clip(lam + t * step, lo, hi)
            g_t, z_t = reduced_grad(lam_t)
            if float(np.max(np.abs(g_t))) < 0.9 * norm0:
                lam, g_lam, z_cur = lam_t, g_t, z_t
                accepted = True
                if trace is not None:
                    trace.append(-obj.neg_value_and_grad(z_cur)[0])
                break
            t *= 0.5
        if not accepted:
            break
    return z_cur


def posterior(model, x):
    """GP posterior at query point(s): mean and standard deviation.

    Accepts a single point (returns two floats) or a batch of points
    (returns two arrays).  Tiny negative variances from round-off are
    clamped to zero.
    """
    single = np.asarray(x).ndim == 1
    X = as_point_batch(x, model.dim, "x")
    Xs = X / model.hyper.length_scales
    sq = (np.sum(Xs * Xs, axis=1)[:, None] + model.scaled_sqnorms[None, :]
          - 2.0 * (Xs @ model.scaled_points.T))
    ks = _matern52(np.sqrt(np.maximum(sq, 0.0)), model.hyper.signal_variance)  # (B, N)
    mu = ks @ model.alpha
    v = solve_triangular(model.chol_lower, ks.T, lower=True,
                         check_finite=False)  # (N, B)
    var = model.hyper.signal_variance - np.sum(v * v, axis=0)
    sigma = np.sqrt(np.maximum(var, 0.0))
    if single:
        return float(mu[0]), float(sigma[0])
    return mu, sigma


# ---------------------------------------------------------------------------
# Estimator wrapper
# ---------------------------------------------------------------------------

class PreferenceGP(BaseEstimator):
    """Scikit-learn style estimator around the MAP preference fit.

    ``fit(X, choices)`` takes observed points and choice records (pairs of
    ``(winner_index, loser_indices)`` or ``PreferenceRecord``s), and
    ``predict(X, return_std=True)`` evaluates the GP posterior.

    Parameters
    ----------
    signal_variance, length_scale, btl_scale, jitter : float
        Starting hyperparameters; ``length_scale`` may be a scalar (shared
        across dimensions) or a per-dimension vector.
    prior_log_std : float
        Spread of the log-normal hyperparameter priors.
    optimize_hyper : bool
        MAP-fit the kernel hyperparameters alongside the goodness values.
    tol, max_iter : float, int
        Convergence controls for the MAP fit.
    """

    def __init__(self, signal_variance=DEFAULT_SIGNAL_VARIANCE,
                 length_scale=DEFAULT_LENGTH_SCALE, btl_scale=DEFAULT_BTL_SCALE,
                 jitter=DEFAULT_JITTER, prior_log_std=0.5, optimize_hyper=True,
                 tol=1e-5, max_iter=500):
        self.signal_variance = signal_variance
        self.length_scale = length_scale
        self.btl_scale = btl_scale
        self.jitter = jitter
        self.prior_log_std = prior_log_std
        self.optimize_hyper = optimize_hyper
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = as_point_batch(X, name="X")
        hyper0 = Hyperparameters(
            signal_variance=self.signal_variance,
            length_scales=np.atleast_1d(np.asarray(self.length_scale, dtype=float)),
            btl_scale=self.btl_scale, jitter=self.jitter).broadcast(X.shape[1])
        priors = HyperPriors(
            median_signal_variance=self.signal_variance,
            median_length_scale=float(np.atleast_1d(self.length_scale)[0]),
            log_std=self.prior_log_std)
        self.model_ = fit_map(X, y, priors=priors, hyper=hyper0,
                              optimize_hyper=self.optimize_hyper,
                              tol=self.tol, max_iter=self.max_iter)
        return self

    def predict(self, X, return_std=False):
        if not hasattr(self, "model_"):
            raise RuntimeError("PreferenceGP is not fitted; call fit first")
        mu, sigma = posterior(self.model_, as_point_batch(X, self.model_.dim, "X"))
        if return_std:
            return mu, sigma
        return mu
