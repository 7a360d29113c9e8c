"""Sequential line search session: the propose-choose-refit state machine.

Each step presents a line segment in the unit hypercube, discretized into
``n_points`` slider positions.  The user (or a simulated one) picks the best
position; the session records the choice as preference data, refits the GP
preference model, maximizes expected improvement, and builds the next segment
between the chosen point and the EI maximizer.  Before presentation every
segment is symmetrically extended about its midpoint by ``extension_factor``
and clipped componentwise to the box.

A session is a single-writer state machine: exactly one ``submit_choice`` may
be in flight at a time; a concurrent call fails fast with
``ConcurrentChoiceError`` rather than queueing.  Every state transition is
recorded as a JSON-serializable event, and replaying the same choice indices
from the same seed reproduces every segment bit-exactly.
"""

import copy
import threading
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig, maximize_ei
from .preference_gp import Hyperparameters, HyperPriors, PreferenceRecord, fit_map
from .validation import as_point, check_unit_box

DEDUP_TOL = 1e-9
DEGENERATE_PROPOSAL_TOL = 1e-6
EXPLORATION_KICK_LENGTH = 0.1


class SessionCompleteError(RuntimeError):
    """The step budget is exhausted; no further choices are accepted."""


class ConcurrentChoiceError(RuntimeError):
    """Another choice is already in flight for this session."""


class ReplayMismatchError(RuntimeError):
    """A replayed session diverged from its log."""


@dataclass(frozen=True)
class Segment:
    """A presented line segment.

    ``endpoint_plus`` and ``endpoint_ei`` are the pre-extension endpoints
    (the incumbent side and the EI-proposal side); ``presented_a`` and
    ``presented_b`` are the post-extension, post-clip endpoints the slider
    actually spans.  ``points`` holds the ``n_points`` uniformly spaced
    slider positions, inclusive of both presented endpoints.
    """

    endpoint_plus: np.ndarray
    endpoint_ei: np.ndarray
    presented_a: np.ndarray
    presented_b: np.ndarray
    points: np.ndarray

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def to_dict(self):
        return {
            "endpoint_plus": self.endpoint_plus.tolist(),
            "endpoint_ei": self.endpoint_ei.tolist(),
            "presented_a": self.presented_a.tolist(),
            "presented_b": self.presented_b.tolist(),
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            endpoint_plus=np.asarray(d["endpoint_plus"], dtype=float),
            endpoint_ei=np.asarray(d["endpoint_ei"], dtype=float),
            presented_a=np.asarray(d["presented_a"], dtype=float),
            presented_b=np.asarray(d["presented_b"], dtype=float),
            points=np.asarray(d["points"], dtype=float),
        )

    def equals_exactly(self, other):
        return (
            np.array_equal(self.endpoint_plus, other.endpoint_plus)
            and np.array_equal(self.endpoint_ei, other.endpoint_ei)
            and np.array_equal(self.presented_a, other.presented_a)
            and np.array_equal(self.presented_b, other.presented_b)
            and np.array_equal(self.points, other.points)
        )


def extend_endpoints(a, b, factor):
    """Symmetric extension of segment (a, b) about its midpoint, no clipping."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = 0.5 * (a + b)
    half = 0.5 * factor * (b - a)
    return m - half, m + half


def extend_segment(a, b, factor):
    """Extend (a, b) by ``factor`` about the midpoint, then clip each endpoint
    componentwise to [0, 1]."""
    if factor < 1.0:
        raise ValueError(f"extension factor must be >= 1, got {factor}")
    ea, eb = extend_endpoints(a, b, factor)
    return np.clip(ea, 0.0, 1.0), np.clip(eb, 0.0, 1.0)


def build_segment(endpoint_plus, endpoint_ei, factor, n_points):
    """Assemble a presented Segment from pre-extension endpoints."""
    if n_points < 2:
        raise ValueError(f"n_points must be >= 2, got {n_points}")
    endpoint_plus = np.asarray(endpoint_plus, dtype=float)
    endpoint_ei = np.asarray(endpoint_ei, dtype=float)
    pa, pb = extend_segment(endpoint_plus, endpoint_ei, factor)
    # linspace includes both endpoints exactly; the clip only guards against
    # sub-ulp overshoot of interior points.
    points = np.clip(np.linspace(pa, pb, n_points), 0.0, 1.0)
    seg = Segment(endpoint_plus=endpoint_plus.copy(), endpoint_ei=endpoint_ei.copy(),
                  presented_a=pa, presented_b=pb, points=points)
    for arr in (seg.endpoint_plus, seg.endpoint_ei, seg.presented_a,
                seg.presented_b, seg.points):
        arr.flags.writeable = False
    return seg


def draw_initial_endpoints(dim, rng):
    """Two distinct uniform-random points in the box, from the given rng."""
    while True:
        a, b = rng.uniform(size=(2, dim))
        if np.linalg.norm(a - b) >= DEDUP_TOL:
            return a, b


@dataclass(frozen=True)
class GPConfig:
    """Preference-model settings carried by a session."""

    signal_variance: float = 0.5
    length_scale: float = 0.5
    btl_scale: float = 0.01
    jitter: float = 1e-6
    prior_log_std: float = 0.5
    optimize_hyper: bool = True
    tol: float = 1e-5
    max_iter: int = 500


@dataclass(frozen=True)
class SessionConfig:
    n_points: int = 20
    extension_factor: float = 1.25
    max_steps: int = 30
    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp: GPConfig = field(default_factory=GPConfig)

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be >= 2")
        if self.extension_factor < 1.0:
            raise ValueError("extension_factor must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["acquisition"] = AcquisitionConfig(**d.get("acquisition", {}))
        d["gp"] = GPConfig(**d.get("gp", {}))
        return cls(**d)


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    segment: Segment
    chosen_index: int
    chosen_point: np.ndarray


class Session:
    """One sequential line search run.

    Parameters
    ----------
    dim : int
        Dimensionality of the search box.
    endpoints : pair of points, optional
        Pre-extension endpoints of the initial segment.  When omitted, two
        distinct uniform-random points are drawn from the session rng.
    config : SessionConfig, optional
    seed : int, optional
        Overrides ``config.seed`` when given.
    """

    def __init__(self, dim, endpoints=None, config=None, seed=None):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        config = config or SessionConfig()
        if seed is not None:
            config = replace(config, seed=int(seed))
        self.dim = int(dim)
        self.config = config
        self._rng = np.random.default_rng(config.seed)

        endpoints_given = endpoints is not None
        if endpoints_given:
            a = check_unit_box(as_point(endpoints[0], dim, "endpoint a"), "endpoint a")
            b = check_unit_box(as_point(endpoints[1], dim, "endpoint b"), "endpoint b")
            if np.linalg.norm(a - b) < DEDUP_TOL:
                raise ValueError(
                    f"initial endpoints coincide (distance < {DEDUP_TOL:g}); "
                    "two distinct points are required")
        else:
            a, b = draw_initial_endpoints(dim, self._rng)

        self.step = 0
        self.model = None
        self.history = []
        self.segment = build_segment(a, b, config.extension_factor, config.n_points)
        self._points = []  # canonical observed-point list
        self._records = []
        self._lock = threading.Lock()
        self.events = [{
            "event": "init",
            "step": 0,
            "dim": self.dim,
            "seed": config.seed,
            "endpoints_given": endpoints_given,
            "endpoints": [a.tolist(), b.tolist()],
            "config": config.to_dict(),
            "segment": self.segment.to_dict(),
            "ts": time.time(),
        }]

    def __deepcopy__(self, memo):
        # Locks are not copyable; the copy gets a fresh one of its own.
        clone = object.__new__(Session)
        for key, value in self.__dict__.items():
            if key == "_lock":
                clone._lock = threading.Lock()
            else:
                setattr(clone, key, copy.deepcopy(value, memo))
        return clone

    # -- public surface ----------------------------------------------------

    @property
    def max_steps(self):
        return self.config.max_steps

    @property
    def n_points(self):
        return self.config.n_points

    @property
    def complete(self):
        return self.step >= self.max_steps

    def observed_points(self):
        """Copy of the canonical observed-point list (model training inputs)."""
        return [p.copy() for p in self._points]

    def submit_choice(self, slider_index):
        """Ingest one slider choice and advance the session one step.

        Validation failures leave the session untouched; a concurrent call
        raises ``ConcurrentChoiceError`` instead of queueing.
        """
        if not isinstance(slider_index, (int, np.integer)):
            raise TypeError(f"slider_index must be an integer, got {type(slider_index).__name__}")
        if not 0 <= slider_index < self.n_points:
            raise IndexError(
                f"slider_index {slider_index} out of range [0, {self.n_points})")
        if self.complete:
            raise SessionCompleteError(
                f"session complete: all {self.max_steps} steps already taken")
        if not self._lock.acquire(blocking=False):
            raise ConcurrentChoiceError("another choice is already in flight")
        try:
            self._advance(int(slider_index))
        finally:
            self._lock.release()
        return self

    def best_point(self, mode="last_chosen"):
        """Current best point: the most recent chosen point (default, matching
        the interactive protocol) or the observed point with maximal MAP
        goodness."""
        if self.step < 1:
            raise ValueError("no choices yet: best_point requires at least one step")
        if mode == "last_chosen":
            return self.history[-1].chosen_point.copy()
        if mode == "map_argmax":
            return self.model.points[int(np.argmax(self.model.goodness))].copy()
        raise ValueError(f"unknown best_point mode {mode!r}")

    # -- internals -----------------------------------------------------------

    def _acquisition_for_step(self, step):
        # Per-step derived seed keeps every EI maximization deterministic while
        # decorrelating the candidate sweeps across steps.
        base = self.config.acquisition
        mixed = int(np.random.SeedSequence([base.seed, step]).generate_state(1, np.uint64)[0])
        return replace(base, seed=mixed)

    def _propose_ei_endpoint(self, chosen, model):
        x_ei = maximize_ei(model, self._acquisition_for_step(self.step))
        if np.linalg.norm(x_ei - chosen) < DEGENERATE_PROPOSAL_TOL:
            return self._exploration_kick(chosen)
        return x_ei

    def _exploration_kick(self, chosen):
        """Replacement proposal when EI collapses onto the incumbent: a fixed
        length step in a random direction so the next slider still spans a
        meaningful segment."""
        while True:
            direction = self._rng.standard_normal(self.dim)
            norm = np.linalg.norm(direction)
            if norm < 1e-12:
                continue
            kicked = np.clip(chosen + EXPLORATION_KICK_LENGTH * direction / norm, 0.0, 1.0)
            if np.linalg.norm(kicked - chosen) >= DEGENERATE_PROPOSAL_TOL:
                return kicked

    def _advance(self, slider_index):
        segment = self.segment
        chosen = segment.points[slider_index].copy()

        points = list(self._points)
        records = list(self._records)
        chosen_idx = _canonical_index_of(points, chosen)
        loser_idx = []
        for endpoint in (segment.presented_a, segment.presented_b):
            idx = _canonical_index_of(points, endpoint)
            if idx != chosen_idx and idx not in loser_idx:
                loser_idx.append(idx)
        if loser_idx:
            records.append(PreferenceRecord(chosen_idx, tuple(loser_idx)))

        gp = self.config.gp
        hyper0 = Hyperparameters(
            signal_variance=gp.signal_variance,
            length_scales=np.full(self.dim, gp.length_scale),
            btl_scale=gp.btl_scale, jitter=gp.jitter)
        priors = HyperPriors(median_signal_variance=gp.signal_variance,
                             median_length_scale=gp.length_scale,
                             log_std=gp.prior_log_std)
        if self.model is not None:
            warm_g = np.zeros(len(points))
            warm_g[: self.model.goodness.shape[0]] = self.model.goodness
            init = (warm_g, self.model.hyper)
        else:
            init = None
        model = fit_map(np.asarray(points), records, priors=priors, init=init,
                        hyper=hyper0, optimize_hyper=gp.optimize_hyper,
                        tol=gp.tol, max_iter=gp.max_iter)

        x_ei = self._propose_ei_endpoint(chosen, model)
        next_segment = build_segment(chosen, x_ei,
                                     self.config.extension_factor, self.config.n_points)

        # All computation succeeded; commit the transition.
        self._points = points
        self._records = records
        self.model = model
        self.history.append(HistoryEntry(step=self.step, segment=segment,
                                         chosen_index=slider_index, chosen_point=chosen))
        self.step += 1
        self.segment = next_segment
        self.events.append({
            "event": "choice",
            "step": self.step - 1,
            "chosen_index": slider_index,
            "chosen_point": chosen.tolist(),
            "segment": next_segment.to_dict(),
            "ts": time.time(),
        })


def _canonical_index_of(points, p):
    for i, q in enumerate(points):
        if np.linalg.norm(p - q) < DEDUP_TOL:
            return i
    points.append(p.copy())
    return len(points) - 1


def replay_events(events):
    """Re-execute a session event log and verify bit-exact agreement.

    Returns the replayed Session; raises ReplayMismatchError on the first
    divergence (segment or chosen point differing in any bit).
    """
    if not events or events[0].get("event") != "init":
        raise ValueError("event log must start with an init event")
    init = events[0]
    config = SessionConfig.from_dict(init["config"])
    endpoints = init["endpoints"] if init["endpoints_given"] else None
    session = Session(init["dim"], endpoints=endpoints, config=config)
    logged = Segment.from_dict(init["segment"])
    if not session.segment.equals_exactly(logged):
        raise ReplayMismatchError("initial segment diverged from log")
    for ev in events[1:]:
        if ev.get("event") != "choice":
            raise ValueError(f"unexpected event kind {ev.get('event')!r}")
        session.submit_choice(ev["chosen_index"])
        chosen = np.asarray(ev["chosen_point"], dtype=float)
        if not np.array_equal(session.history[-1].chosen_point, chosen):
            raise ReplayMismatchError(f"chosen point diverged at step {ev['step']}")
        if not session.segment.equals_exactly(Segment.from_dict(ev["segment"])):
            raise ReplayMismatchError(f"segment diverged after step {ev['step']}")
    return session
