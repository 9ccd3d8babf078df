"""Finite metric spaces and finite-support probability measures.

The building blocks every other module consumes:

* :class:`FiniteSpace` -- a finite set of labelled points with an explicit
  metric, and :class:`ProductSpace` for cartesian products under the
  max-combination metric.
* :class:`Measure` -- an immutable probability vector over a space.
* Constructors ``delta``, ``uniform``, ``empirical``, ``mix_in``,
  ``product``, ``pushforward``, and i.i.d. ``sample``.
* :func:`prohorov` -- the exact Prohorov distance between two
  finite-support measures, found by scanning the distinct support
  distances and checking transport feasibility with a max flow
  (Strassen's coupling characterization).
* Plain-text (de)serialization for spaces and measures.

Everything here is a pure function on immutable values, so the module is
safe to use from any number of threads. Random sampling takes an explicit
``numpy.random.Generator``, which the caller owns and must not share.
"""

from __future__ import annotations

import itertools
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "FiniteSpace",
    "ProductSpace",
    "Measure",
    "delta",
    "uniform",
    "empirical",
    "mix_in",
    "pushforward",
    "product",
    "prohorov",
    "sample",
    "discrete_space",
    "grid_space",
    "space_to_text",
    "space_from_text",
    "measure_to_text",
    "measure_from_text",
]

Label = Hashable

# A weight vector is accepted as-is when its total is within _SUM_EXACT of
# one, silently renormalized when within _SUM_REPAIR, rejected otherwise.
_SUM_EXACT = 1e-12
_SUM_REPAIR = 1e-9

# Slack for metric-axiom checks, absorbing float dust in user matrices.
_METRIC_SLACK = 1e-12

# Residual capacities at or below this are treated as exhausted by the
# augmenting-path search; stray mass left behind is bounded by the number
# of support points times this, far below the 1e-12 comparisons used
# everywhere else.
_FLOW_EPS = 1e-15


# ---------------------------------------------------------------------------
# Spaces
# ---------------------------------------------------------------------------

class FiniteSpace:
    """A finite metric space: opaque point labels plus a distance matrix.

    Parameters
    ----------
    labels : sequence of hashable
        Distinct point labels in canonical order.
    dist : array-like of shape (k, k)
        Pairwise distances: symmetric, nonnegative, finite, zero exactly on
        the diagonal, and satisfying the triangle inequality.

    Attributes
    ----------
    labels : tuple
    dist : numpy.ndarray
        Read-only float matrix.
    """

    __slots__ = ("labels", "dist", "_pos")

    def __init__(self, labels: Sequence[Label], dist, *, _validate: bool = True):
        labels = tuple(labels)
        if not labels:
            raise InvalidInputError("a space needs at least one point")
        pos = {lab: i for i, lab in enumerate(labels)}
        if len(pos) != len(labels):
            raise InvalidInputError("duplicate point labels")
        d = np.array(dist, dtype=float)
        if d.shape != (len(labels), len(labels)):
            raise InvalidInputError(
                f"distance matrix shape {d.shape} does not match {len(labels)} points"
            )
        if _validate:
            self._check_metric(d)
        d.setflags(write=False)
        self.labels = labels
        self.dist = d
        self._pos = pos

    @staticmethod
    def _check_metric(d: np.ndarray) -> None:
        if not np.isfinite(d).all():
            raise InvalidInputError("distances must be finite")
        if (d < 0).any():
            raise InvalidInputError("distances must be nonnegative")
        if (np.abs(np.diag(d)) > 0).any():
            raise InvalidInputError("self-distances must be zero")
        if not np.array_equal(d, d.T):
            raise InvalidInputError("distance matrix must be symmetric")
        # d(i,j) <= d(i,k) + d(k,j) for every triple (i,j,k).
        slack = d[:, :, None] - d[:, None, :] - d.T[None, :, :]
        if (slack > _METRIC_SLACK).any():
            raise InvalidInputError("triangle inequality violated")

    def index(self, label: Label) -> int:
        try:
            return self._pos[label]
        except KeyError:
            raise InvalidInputError(f"label {label!r} is not a point of this space") from None

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: Label) -> bool:
        return label in self._pos

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, FiniteSpace):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.dist, other.dist)

    __hash__ = None  # structural equality; not meant for dict keys

    def __repr__(self) -> str:
        shown = ", ".join(repr(l) for l in self.labels[:4])
        if len(self.labels) > 4:
            shown += ", ..."
        return f"{type(self).__name__}({len(self)} points: {shown})"


class ProductSpace(FiniteSpace):
    """Cartesian product of finite spaces under the max-combination metric.

    Points are tuples, one component per factor, ordered row-major (first
    factor varies slowest). The max of valid metrics is itself a valid
    metric, so construction skips the metric re-check.
    """

    __slots__ = ("factors",)

    def __init__(self, factors: Sequence[FiniteSpace]):
        factors = tuple(factors)
        if not factors:
            raise InvalidInputError("a product space needs at least one factor")
        labels = tuple(itertools.product(*(f.labels for f in factors)))
        d = factors[0].dist
        for f in factors[1:]:
            a, b = d.shape[0], f.dist.shape[0]
            d = np.maximum(
                d[:, None, :, None], f.dist[None, :, None, :]
            ).reshape(a * b, a * b)
        super().__init__(labels, d, _validate=False)
        self.factors = factors


def discrete_space(labels: Sequence[Label]) -> FiniteSpace:
    """The 0/1 metric on the given labels."""
    k = len(tuple(labels))
    return FiniteSpace(labels, 1.0 - np.eye(k))


def grid_space(values: Sequence[float], scale: float = 1.0) -> FiniteSpace:
    """Numeric labels with distance ``scale * |a - b|``."""
    v = np.asarray(list(values), dtype=float)
    return FiniteSpace(list(values), scale * np.abs(v[:, None] - v[None, :]))


# ---------------------------------------------------------------------------
# Measures
# ---------------------------------------------------------------------------

class Measure:
    """A probability measure on a :class:`FiniteSpace`.

    Weights cover *all* points of the space; the support is wherever the
    weight is strictly positive. Instances are immutable.
    """

    __slots__ = ("space", "weights")

    def __init__(self, space: FiniteSpace, weights):
        w = np.array(weights, dtype=float)
        if w.shape != (len(space),):
            raise InvalidInputError(
                f"got {w.shape[0] if w.ndim == 1 else w.shape} weights "
                f"for a space of {len(space)} points"
            )
        if not np.isfinite(w).all():
            raise InvalidInputError("weights must be finite")
        if (w < -_SUM_EXACT).any():
            raise InvalidInputError("weights must be nonnegative")
        np.clip(w, 0.0, None, out=w)
        total = float(w.sum())
        if abs(total - 1.0) > _SUM_REPAIR:
            raise InvalidInputError(f"weights sum to {total!r}, not 1")
        if abs(total - 1.0) > _SUM_EXACT:
            w /= total
        w.setflags(write=False)
        self.space = space
        self.weights = w

    def mass(self, label: Label) -> float:
        return float(self.weights[self.space.index(label)])

    def support_indices(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0.0)

    def support(self) -> tuple:
        return tuple(self.space.labels[i] for i in self.support_indices())

    def items(self):
        """Yield ``(label, weight)`` over the support."""
        for i in self.support_indices():
            yield self.space.labels[i], float(self.weights[i])

    def __repr__(self) -> str:
        pairs = ", ".join(f"{lab!r}: {w:.4g}" for lab, w in itertools.islice(self.items(), 4))
        more = "" if len(self.support_indices()) <= 4 else ", ..."
        return f"Measure({pairs}{more})"


def delta(space: FiniteSpace, label: Label) -> Measure:
    """Point mass at ``label``."""
    w = np.zeros(len(space))
    w[space.index(label)] = 1.0
    return Measure(space, w)


def uniform(space: FiniteSpace) -> Measure:
    """The uniform measure on ``space``."""
    return Measure(space, np.full(len(space), 1.0 / len(space)))


def empirical(space: FiniteSpace, points: Iterable[Label]) -> Measure:
    """Uniform weight 1/n on each of n listed points, accumulated on duplicates."""
    points = list(points)
    if not points:
        raise InvalidInputError("empirical() needs at least one point")
    w = np.zeros(len(space))
    share = 1.0 / len(points)
    for p in points:
        w[space.index(p)] += share
    return Measure(space, w)


def mix_in(a: Label, pi: Measure, n: int) -> Measure:
    """The measure ``(1/n) * delta_a + ((n-1)/n) * pi``.

    Models appending one more sample to an (n-1)-sample empirical measure,
    though ``pi`` may have arbitrary weights.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidInputError(f"mix_in needs an integer n >= 2, got {n!r}")
    w = pi.weights * ((n - 1.0) / n)
    w = w.copy()
    w[pi.space.index(a)] += 1.0 / n
    return Measure(pi.space, w)


def pushforward(mu: Measure, f: Callable[[Label], Label], target: FiniteSpace) -> Measure:
    """Image measure of ``mu`` under ``f``.

    Parameters
    ----------
    mu : Measure
    f : callable
        Must send every support point of ``mu`` to a point of ``target``.
    target : FiniteSpace

    Returns
    -------
    Measure
        Mass of each target point is the sum of the source masses mapping
        to it; total mass is conserved.
    """
    w = np.zeros(len(target))
    for lab, mass in mu.items():
        try:
            out = f(lab)
        except KeyError:
            raise InvalidInputError(f"map is undefined on support point {lab!r}") from None
        if out not in target:
            raise InvalidInputError(
                f"map sends support point {lab!r} to {out!r}, outside the target space"
            )
        w[target.index(out)] += mass
    return Measure(target, w)


def product(mu: Measure, nu: Measure) -> Measure:
    """Independent product measure on ``ProductSpace([mu.space, nu.space])``."""
    ps = ProductSpace([mu.space, nu.space])
    return Measure(ps, np.outer(mu.weights, nu.weights).ravel())


def sample(mu: Measure, rng: np.random.Generator, count: int) -> list:
    """``count`` i.i.d. draws from ``mu``; deterministic given the generator state."""
    if count < 1:
        raise InvalidInputError("sample count must be >= 1")
    idx = rng.choice(len(mu.space), size=count, p=mu.weights)
    labels = mu.space.labels
    return [labels[i] for i in idx]


# ---------------------------------------------------------------------------
# Prohorov distance
# ---------------------------------------------------------------------------

def _augment_flow(cap: np.ndarray, source: int, sink: int) -> float:
    """Push the current residual network ``cap`` to a maximum flow.

    Plain Edmonds-Karp (BFS augmenting paths) on a dense residual-capacity
    matrix, mutated in place. Returns the amount of flow added, so calling
    again after raising some capacities continues incrementally.
    """
    n = cap.shape[0]
    added = 0.0
    while True:
        parent = np.full(n, -1, dtype=int)
        parent[source] = source
        queue = [source]
        for u in queue:
            if u == sink:
                break
            for v in np.flatnonzero(cap[u] > _FLOW_EPS):
                if parent[v] < 0:
                    parent[v] = u
                    queue.append(v)
        if parent[sink] < 0:
            return added
        bottleneck = np.inf
        v = sink
        while v != source:
            u = parent[v]
            bottleneck = min(bottleneck, cap[u, v])
            v = u
        v = sink
        while v != source:
            u = parent[v]
            cap[u, v] -= bottleneck
            cap[v, u] += bottleneck
            v = u
        added += bottleneck


def prohorov(mu: Measure, nu: Measure) -> float:
    """Exact Prohorov distance between two measures on the same space.

    The distinct pairwise support distances (plus zero) are the only
    candidate values. For each candidate ``eps``, a bipartite max flow with
    edges on pairs at distance <= eps measures how much mass admits a
    coupling within eps; by Strassen's characterization the distance is
    ``min over candidates of max(eps, 1 - flow)``. Edges accumulate as the
    candidate grows, so the flow resumes from the previous residual network
    instead of restarting, and the ascending scan stops as soon as the
    candidate distance alone exceeds the best value found.
    """
    if mu.space != nu.space:
        raise InvalidInputError("prohorov() needs measures on the same space")
    si = mu.support_indices()
    sj = nu.support_indices()
    p = mu.weights[si]
    q = nu.weights[sj]
    dsub = mu.space.dist[np.ix_(si, sj)]
    a, b = len(si), len(sj)

    # Nodes: 0 = source, 1..a = mu atoms, a+1..a+b = nu atoms, a+b+1 = sink.
    cap = np.zeros((a + b + 2, a + b + 2))
    cap[0, 1 : a + 1] = p
    cap[a + 1 : a + b + 1, a + b + 1] = q
    inner = cap[1 : a + 1, a + 1 : a + b + 1]  # view: mu-to-nu capacities

    best = np.inf
    flow = 0.0
    opened = np.zeros_like(dsub, dtype=bool)
    for eps in np.unique(np.concatenate(([0.0], dsub.ravel()))):
        if eps >= best:
            break
        fresh = (dsub <= eps) & ~opened
        if fresh.any() or eps == 0.0:
            inner[fresh] = 2.0  # effectively unbounded: total supply is 1
            opened |= fresh
            flow += _augment_flow(cap, 0, a + b + 1)
        best = min(best, max(float(eps), 1.0 - flow))
    return float(best)


# ---------------------------------------------------------------------------
# Plain-text serialization
# ---------------------------------------------------------------------------

def _label_token(label: Label) -> str:
    token = str(label)
    if not token or any(ch.isspace() for ch in token):
        raise InvalidInputError(
            f"label {label!r} cannot be serialized: tokens must be non-empty "
            "and contain no whitespace"
        )
    return token


def space_to_text(space: FiniteSpace) -> str:
    """One row per point: its label, then distances to all earlier points."""
    lines = []
    for i, lab in enumerate(space.labels):
        row = [_label_token(lab)] + [repr(float(space.dist[i, j])) for j in range(i)]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def space_from_text(text: str) -> FiniteSpace:
    """Inverse of :func:`space_to_text`. Labels come back as strings."""
    labels: list[str] = []
    rows: list[list[float]] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != len(labels) + 1:
            raise InvalidInputError(
                f"space row {ln}: expected a label and {len(labels)} distances, "
                f"got {len(parts)} fields"
            )
        labels.append(parts[0])
        try:
            rows.append([float(tok) for tok in parts[1:]])
        except ValueError:
            raise InvalidInputError(f"space row {ln}: non-numeric distance") from None
    if not labels:
        raise InvalidInputError("no space rows found")
    k = len(labels)
    d = np.zeros((k, k))
    for i, row in enumerate(rows):
        for j, val in enumerate(row):
            d[i, j] = d[j, i] = val
    return FiniteSpace(labels, d)


def measure_to_text(mu: Measure) -> str:
    """One row per support point: label and weight."""
    lines = [f"{_label_token(lab)} {repr(w)}" for lab, w in mu.items()]
    return "\n".join(lines) + "\n"


def measure_from_text(text: str, space: FiniteSpace) -> Measure:
    """Inverse of :func:`measure_to_text`; unlisted points get weight zero."""
    w = np.zeros(len(space))
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInputError(f"measure row {ln}: expected 'label weight'")
        lab, tok = parts
        if lab not in space:
            raise InvalidInputError(f"measure row {ln}: {lab!r} is not a point of the space")
        try:
            w[space.index(lab)] += float(tok)
        except ValueError:
            raise InvalidInputError(f"measure row {ln}: non-numeric weight") from None
    return Measure(space, w)
