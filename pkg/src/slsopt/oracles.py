"""Simulated preference oracles standing in for the human chooser.

Each oracle scores points (higher is better) and picks a slider index from a
presented segment.  With temperature 0 the pick is the argmax (ties broken by
lowest index); with temperature > 0 it is a softmax sample from the oracle's
private seeded rng, so a given oracle produces an identical index sequence on
every run.
"""

import numpy as np

from .metrics import masked_mae, sinusoidal_features
from .validation import as_point


class OracleConfigError(ValueError):
    """The oracle specification is inconsistent (kind/target mismatch etc.)."""


class PreferenceOracle:
    """Base chooser: subclasses supply ``score``."""

    kind = "custom"

    def __init__(self, temperature=0.0, seed=0):
        if temperature < 0:
            raise OracleConfigError(f"temperature must be >= 0, got {temperature}")
        self.temperature = float(temperature)
        self.seed = int(seed)
        self._rng = np.random.default_rng(seed)

    def score(self, x):
        raise NotImplementedError

    def score_batch(self, X):
        return np.array([self.score(np.asarray(p, dtype=float)) for p in X])

    def choose(self, segment):
        """Pick a slider index from ``segment.points``."""
        scores = self.score_batch(segment.points)
        if self.temperature == 0.0:
            return int(np.argmax(scores))  # first maximum = lowest index
        z = scores / self.temperature
        z -= z.max()
        p = np.exp(z)
        p /= p.sum()
        return int(self._rng.choice(scores.size, p=p))


class NegL2Oracle(PreferenceOracle):
    """Score is the negated Euclidean distance to a target point."""

    kind = "neg_l2"

    def __init__(self, target, temperature=0.0, seed=0):
        super().__init__(temperature=temperature, seed=seed)
        self.target = as_point(target, name="target")

    def score(self, x):
        x = as_point(x, self.target.shape[0], "x")
        return -float(np.linalg.norm(x - self.target))

    def score_batch(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.target.shape[0]:
            raise OracleConfigError(
                f"points have dimension {X.shape[1]}, target has {self.target.shape[0]}")
        return -np.linalg.norm(X - self.target, axis=1)


class NegMaskedMaeOracle(PreferenceOracle):
    """Score is the negated masked MAE between rendered features of the point
    and a target feature matrix.

    ``render`` must be a deterministic map from a point to a (T, F) matrix;
    the built-in sinusoidal feature map is used when none is given.
    """

    kind = "neg_masked_mae"

    def __init__(self, target_features, mask, render=None, temperature=0.0, seed=0):
        super().__init__(temperature=temperature, seed=seed)
        self.target_features = np.asarray(target_features, dtype=float)
        if self.target_features.ndim != 2:
            raise OracleConfigError("target must be a 2-D feature matrix")
        self.mask = np.asarray(mask, dtype=bool)
        t, f = self.target_features.shape
        self.render = render or (lambda x: sinusoidal_features(x, n_frames=t, n_bins=f))

    def score(self, x):
        return -masked_mae(self.render(np.asarray(x, dtype=float)),
                           self.target_features, self.mask)


class CustomOracle(PreferenceOracle):
    """Wraps an arbitrary scoring callable."""

    def __init__(self, fn, temperature=0.0, seed=0):
        super().__init__(temperature=temperature, seed=seed)
        self._fn = fn

    def score(self, x):
        return float(self._fn(np.asarray(x, dtype=float)))


def make_oracle(kind, *, target=None, target_features=None, mask=None,
                fn=None, render=None, temperature=0.0, seed=0):
    """Factory used by the harness and CLI."""
    if kind == "neg_l2":
        if target is None:
            raise OracleConfigError("neg_l2 oracle needs a target point")
        return NegL2Oracle(target, temperature=temperature, seed=seed)
    if kind == "neg_masked_mae":
        if target_features is None or mask is None:
            raise OracleConfigError("neg_masked_mae oracle needs target_features and mask")
        return NegMaskedMaeOracle(target_features, mask, render=render,
                                  temperature=temperature, seed=seed)
    if kind == "custom":
        if fn is None:
            raise OracleConfigError("custom oracle needs a callable")
        return CustomOracle(fn, temperature=temperature, seed=seed)
    raise OracleConfigError(f"unknown oracle kind {kind!r}")
