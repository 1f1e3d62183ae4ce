"""Centralized XGBoost mathematics.

Losses and their derivatives, second- and first-order split scores, leaf
weights, the tree/ensemble containers and prediction.  The module also holds
a plain single-site tree grower (:func:`grow_tree`) that the federated
drivers are checked against.
"""

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from .candidates import aggregate, build_party_matrix, degenerate_columns
from .errors import DimensionError, NumericDomainError, ParameterError, RoutingError

__all__ = [
    "SquaredError", "Logistic", "get_loss", "GradHessVectors", "compute_grad_hess",
    "split_score_second_order", "split_score_first_order", "optimal_leaf_weight",
    "first_order_leaf_weight", "best_index", "worth_splitting", "Hyperparams", "TreeNode",
    "RegressionTree", "Ensemble", "predict", "dump_model", "load_model", "grow_tree",
]


# -- losses -----------------------------------------------------------------

class SquaredError:
    name = "squared-error"

    @staticmethod
    def value(y, yhat):
        y, yhat = np.asarray(y, float), np.asarray(yhat, float)
        return 0.5 * (y - yhat) ** 2

    @staticmethod
    def grad(y, yhat):
        return np.asarray(yhat, float) - np.asarray(y, float)

    @staticmethod
    def hess(y, yhat):
        return np.ones(np.broadcast(np.asarray(y), np.asarray(yhat)).shape)


class Logistic:
    """Binary log-loss on the logit scale, labels in {0, 1}."""

    name = "logistic"

    @staticmethod
    def value(y, yhat):
        y, yhat = np.asarray(y, float), np.asarray(yhat, float)
        return np.logaddexp(0.0, yhat) - y * yhat

    @staticmethod
    def grad(y, yhat):
        return _sigmoid(np.asarray(yhat, float)) - np.asarray(y, float)

    @staticmethod
    def hess(y, yhat):
        p = _sigmoid(np.asarray(yhat, float))
        return p * (1.0 - p) + 0.0 * np.asarray(y, float)


def _sigmoid(z):
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


_LOSSES = {SquaredError.name: SquaredError, Logistic.name: Logistic}


def get_loss(name):
    try:
        return _LOSSES[name]
    except KeyError:
        raise ParameterError(f"unknown loss {name!r}; expected one of {sorted(_LOSSES)}")


@dataclass
class GradHessVectors:
    g: np.ndarray
    h: np.ndarray
    instance_ids: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        self.h = np.asarray(self.h, dtype=float).reshape(-1)
        self.instance_ids = np.asarray(self.instance_ids)
        if not (self.g.size == self.h.size == self.instance_ids.shape[0]):
            raise DimensionError("g, h and instance_ids must have equal length")
        if np.any(self.h < 0):
            raise NumericDomainError("hessians must be non-negative")

    def __len__(self):
        return self.g.size


def compute_grad_hess(loss, labels, predictions, instance_ids=None):
    """Per-instance first and second derivatives of ``loss`` at ``predictions``."""
    if isinstance(loss, str):
        loss = get_loss(loss)
    y = np.asarray(labels, dtype=float).reshape(-1)
    p = np.asarray(predictions, dtype=float).reshape(-1)
    if y.size != p.size:
        raise DimensionError(f"{y.size} labels vs {p.size} predictions")
    if y.size == 0:
        raise DimensionError("empty input")
    ids = np.arange(y.size) if instance_ids is None else instance_ids
    return GradHessVectors(loss.grad(y, p), loss.hess(y, p), ids)


# -- scores and weights -----------------------------------------------------

def split_score_second_order(GL, HL, GR, HR, G, H, lam=1.0, gamma=0.0):
    """Gain of splitting a node into (GL, HL) and (GR, HR).

    Works elementwise on arrays of candidates.
    """
    GL, HL, GR, HR = (np.asarray(a, dtype=float) for a in (GL, HL, GR, HR))
    dl, dr, dp = HL + lam, HR + lam, H + lam
    if np.any(dl <= 0) or np.any(dr <= 0) or np.any(np.asarray(dp) <= 0):
        raise NumericDomainError("hessian sum + lambda must be positive")
    score = 0.5 * (GL ** 2 / dl + GR ** 2 / dr - G ** 2 / dp) - gamma
    return float(score) if score.ndim == 0 else score


def split_score_first_order(GL, GR, lam=1.0):
    """First-order gain ``-(1/lambda) * GL * GR``."""
    if lam <= 0:
        raise ParameterError("lambda must be positive for the first-order score")
    score = -np.asarray(GL, dtype=float) * np.asarray(GR, dtype=float) / lam
    return float(score) if score.ndim == 0 else score


def optimal_leaf_weight(G_leaf, H_leaf, lam=1.0):
    if H_leaf + lam <= 0:
        raise NumericDomainError("hessian sum + lambda must be positive")
    return -G_leaf / (H_leaf + lam)


def first_order_leaf_weight(G_leaf, lam=1.0):
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    return -G_leaf / lam


def best_index(scores, rtol=1e-6):
    """Index of the best score; near-ties go to the lowest index.

    Scores within ``rtol * max(1, |best|)`` of the maximum count as tied so
    that round-off between two computation routes cannot flip a choice.
    Returns ``None`` when no score is finite.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    finite = np.isfinite(s)
    if not finite.any():
        return None
    top = s[finite].max()
    tol = rtol * max(1.0, abs(top))
    return int(np.flatnonzero(finite & (s >= top - tol))[0])


def worth_splitting(score, rtol=1e-6):
    """A split needs a gain above ``rtol``; smaller gains count as zero.

    The same band as :func:`best_index`, so round-off or vanishing noise
    around a zero gain cannot turn a leaf into a split.
    """
    return score is not None and score > rtol


def masked_second_order_scores(agg, G, H, lam, gamma, degenerate=None):
    scores = split_score_second_order(agg.GL, agg.HL, agg.GR, agg.HR, G, H, lam, gamma)
    scores = np.atleast_1d(np.asarray(scores, dtype=float)).copy()
    if degenerate is not None:
        scores[degenerate] = -np.inf
    return scores


def masked_first_order_scores(GL, GR, lam, degenerate=None):
    scores = np.atleast_1d(np.asarray(split_score_first_order(GL, GR, lam), dtype=float)).copy()
    if degenerate is not None:
        scores[degenerate] = -np.inf
    return scores


# -- hyperparameters, trees, ensembles --------------------------------------

@dataclass
class Hyperparams:
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 3
    min_instances: int = 2
    learning_rate: float = 0.3
    base_score: float = 0.0
    n_candidates: int = 10
    min_bucket: int = 1
    loss: str = "logistic"
    tie_rtol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError("lambda must be >= 0")
        if self.gamma < 0:
            raise ParameterError("gamma must be >= 0")
        if self.max_depth < 0:
            raise ParameterError("max_depth must be >= 0")
        if not 0 < self.learning_rate <= 1:
            raise ParameterError("learning_rate must lie in (0, 1]")
        if self.n_candidates < 1:
            raise ParameterError("n_candidates must be >= 1")
        if self.min_instances < 1 or self.min_bucket < 1:
            raise ParameterError("min_instances and min_bucket must be >= 1")
        get_loss(self.loss)


@dataclass
class TreeNode:
    node_id: int
    depth: int
    split_ref: Optional[tuple] = None
    left_child: Optional[int] = None
    right_child: Optional[int] = None
    leaf_weight: Optional[float] = None
    gain: Optional[float] = None

    @property
    def is_leaf(self):
        return self.split_ref is None


@dataclass
class RegressionTree:
    nodes: list = field(default_factory=list)
    max_depth: int = 0

    def node(self, node_id):
        return self.nodes[node_id]

    def validate(self):
        for nd in self.nodes:
            if nd.depth > self.max_depth:
                raise ParameterError(f"node {nd.node_id} deeper than max_depth")
            if nd.is_leaf:
                if nd.leaf_weight is None or nd.left_child is not None or nd.right_child is not None:
                    raise ParameterError(f"leaf {nd.node_id} malformed")
            elif nd.left_child is None or nd.right_child is None:
                raise ParameterError(f"internal node {nd.node_id} lacks a child")

    def internal_nodes(self):
        return [nd for nd in self.nodes if not nd.is_leaf]

    def leaf_value(self, goes_left: Callable):
        """Follow ``goes_left(split_ref) -> bool`` from the root to a leaf weight."""
        nd = self.nodes[0]
        while not nd.is_leaf:
            try:
                left = goes_left(nd.split_ref)
            except (KeyError, LookupError) as exc:
                raise RoutingError(f"cannot resolve split {nd.split_ref}: {exc}") from exc
            if left is None:
                raise RoutingError(f"cannot resolve split {nd.split_ref}")
            nd = self.nodes[nd.left_child if left else nd.right_child]
        return nd.leaf_weight


@dataclass
class Ensemble:
    trees: list = field(default_factory=list)
    learning_rate: float = 0.3
    base_score: float = 0.0
    lam: float = 1.0
    gamma: float = 0.0
    loss: str = "logistic"


def predict(ensemble, goes_left):
    """Raw (margin) prediction for one instance.

    ``goes_left(split_ref) -> bool`` decides the direction at every internal
    node.  Split references are unique across the trees of an ensemble.
    """
    total = 0.0
    for tree in ensemble.trees:
        total += tree.leaf_value(goes_left)
    return ensemble.base_score + ensemble.learning_rate * total


# -- model dump -------------------------------------------------------------

def dump_model(ensemble, extra=None):
    """Stable JSON text for an ensemble; ``load_model`` inverts it."""
    doc = {
        "format": "fedxgb-ensemble/1",
        "hyperparams": {"learning_rate": ensemble.learning_rate,
                        "base_score": ensemble.base_score,
                        "lambda": ensemble.lam, "gamma": ensemble.gamma,
                        "loss": ensemble.loss},
        "trees": [{"max_depth": tr.max_depth,
                   "nodes": [_node_doc(nd) for nd in tr.nodes]} for tr in ensemble.trees],
    }
    if extra:
        doc["extra"] = extra
    return json.dumps(doc, sort_keys=True, indent=1)


def _node_doc(nd):
    d = asdict(nd)
    d["split_ref"] = None if nd.split_ref is None else list(nd.split_ref)
    return d


def load_model(text):
    doc = json.loads(text)
    hp = doc["hyperparams"]
    trees = []
    for tdoc in doc["trees"]:
        nodes = []
        for nd in tdoc["nodes"]:
            nd = dict(nd)
            if nd["split_ref"] is not None:
                nd["split_ref"] = tuple(nd["split_ref"])
            nodes.append(TreeNode(**nd))
        trees.append(RegressionTree(nodes, tdoc["max_depth"]))
    ens = Ensemble(trees, hp["learning_rate"], hp["base_score"], hp["lambda"],
                   hp["gamma"], hp["loss"])
    return ens, doc.get("extra")


# -- single-site grower -----------------------------------------------------

@dataclass
class SplitRecord:
    """What the owner of a split keeps: the feature and its threshold."""
    feature_id: object
    threshold: float


def grow_tree(columns, groups, g, h, params, first_order=False, record_counters=None):
    """Grow one tree on joined data.

    ``columns`` maps feature id to a full-length value array; ``groups`` is
    an ordered list of ``(party_id, [feature ids])`` that fixes candidate
    order and tie-breaking (party first, then candidate).  Returns the tree,
    a ``{(party_id, record_id): SplitRecord}`` table and the per-instance
    leaf value of the new tree.
    """
    g = np.asarray(g, float)
    h = np.asarray(h, float)
    n_all = g.size
    counters = {} if record_counters is None else record_counters
    records = {}
    nodes = []
    fitted = np.zeros(n_all)

    def leaf(rows, depth):
        G = g[rows].sum()
        w = first_order_leaf_weight(G, params.lam) if first_order \
            else optimal_leaf_weight(G, h[rows].sum(), params.lam)
        nid = len(nodes)
        nodes.append(TreeNode(nid, depth, leaf_weight=float(w)))
        fitted[rows] = w
        return nid

    def best_for(rows):
        G, H = g[rows].sum(), h[rows].sum()
        per_party = []
        for pid, fids in groups:
            M = build_party_matrix({f: np.asarray(columns[f])[rows] for f in fids},
                                   params.n_candidates, rows, params.min_bucket)
            if M.l == 0:
                continue
            agg = aggregate(M, g[rows], h[rows], G, H)
            deg = degenerate_columns(M)
            if first_order:
                scores = masked_first_order_scores(agg.GL, agg.GR, params.lam, deg)
            else:
                scores = masked_second_order_scores(agg, G, H, params.lam, params.gamma, deg)
            j = best_index(scores, params.tie_rtol)
            if j is not None:
                per_party.append((pid, j, float(scores[j]), M))
        if not per_party:
            return None
        k = best_index([p[2] for p in per_party], params.tie_rtol)
        return per_party[k]

    def grow(rows, depth):
        if depth >= params.max_depth or rows.size < params.min_instances:
            return leaf(rows, depth)
        best = best_for(rows)
        if best is None or not worth_splitting(best[2], params.tie_rtol):
            return leaf(rows, depth)
        pid, j, score, M = best
        rid = counters.get(pid, 0)
        counters[pid] = rid + 1
        fid, thr = M.column_meta[j]
        records[(pid, rid)] = SplitRecord(fid, thr)
        nid = len(nodes)
        nodes.append(TreeNode(nid, depth, split_ref=(pid, rid), gain=score))
        left_rows = rows[M.entries[:, j] == 1]
        right_rows = rows[M.entries[:, j] == 0]
        nodes[nid].left_child = grow(left_rows, depth + 1)
        nodes[nid].right_child = grow(right_rows, depth + 1)
        return nid

    grow(np.arange(n_all), 0)
    tree = RegressionTree(nodes, params.max_depth)
    return tree, records, fitted


def train_centralized(columns, groups, labels, params, rounds, first_order=False):
    """Boost ``rounds`` trees on joined data; returns ensemble, records, losses."""
    loss = get_loss(params.loss)
    y = np.asarray(labels, float)
    margin = np.full(y.size, params.base_score)
    ens = Ensemble([], params.learning_rate, params.base_score, params.lam,
                   params.gamma, params.loss)
    records, counters, losses = {}, {}, []
    for _ in range(rounds):
        gh = compute_grad_hess(loss, y, margin)
        tree, recs, fitted = grow_tree(columns, groups, gh.g, gh.h, params,
                                       first_order, counters)
        ens.trees.append(tree)
        records.update(recs)
        margin = margin + params.learning_rate * fitted
        losses.append(float(np.mean(loss.value(y, margin))))
    return ens, records, losses


def threshold_router(records, row):
    """Router over joined data: ``row`` maps feature id to value."""
    def goes_left(ref):
        rec = records[tuple(ref)]
        return bool(row[rec.feature_id] <= rec.threshold)
    return goes_left


def mean_loss(loss, labels, margins):
    loss = get_loss(loss) if isinstance(loss, str) else loss
    return float(np.mean(loss.value(labels, margins)))


def accuracy(labels, margins):
    return float(np.mean((np.asarray(margins) > 0) == (np.asarray(labels) > 0.5)))


def isclose_tree(a, b, atol=1e-8):
    """Structural tree equality with leaf weights and gains within ``atol``."""
    if len(a.nodes) != len(b.nodes):
        return False
    for x, y in zip(a.nodes, b.nodes):
        if (x.split_ref, x.left_child, x.right_child, x.depth) != \
                (y.split_ref, y.left_child, y.right_child, y.depth):
            return False
        if x.is_leaf and not math.isclose(x.leaf_weight, y.leaf_weight, rel_tol=0, abs_tol=atol):
            return False
        if not x.is_leaf and not math.isclose(x.gain, y.gain, rel_tol=0, abs_tol=atol):
            return False
    return True
