"""Tree construction, the boosting loop and federated inference."""

from dataclasses import dataclass, field

import numpy as np

from ..boosting import Ensemble, Hyperparams, RegressionTree, TreeNode, grow_tree, mean_loss
from ..errors import ParameterError, RoutingError
from .parties import ActiveParty, PassiveParty
from .protocols import MODES, ROUND_DRIVERS, Federation


class LookupTable:
    """AP-side map ``(tree_id, node_id) -> (party_id, record_id)``."""

    def __init__(self, entries=None):
        self.entries = dict(entries or {})

    def add(self, tree_id, node_id, party_id, record_id):
        key = (int(tree_id), int(node_id))
        if key in self.entries:
            raise ValueError(f"lookup entry {key} already recorded")
        self.entries[key] = (int(party_id), int(record_id))

    def __getitem__(self, key):
        return self.entries[key]

    def __len__(self):
        return len(self.entries)

    def to_list(self):
        return [[t, n, p, r] for (t, n), (p, r) in sorted(self.entries.items())]

    @classmethod
    def from_list(cls, rows):
        return cls({(t, n): (p, r) for t, n, p, r in rows})


@dataclass
class TrainResult:
    ensemble: Ensemble
    lookup: LookupTable
    losses: list
    initial_loss: float
    rounds_log: list = field(default_factory=list)


def build_tree(fed, mode, tree_id=0, lookup=None):
    """Grow one tree for the AP's current gradients.

    Returns the tree, the lookup table it was recorded in, and the new
    tree's output for every training instance (AP row order).
    """
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}; expected one of {MODES}")
    lookup = LookupTable() if lookup is None else lookup
    if mode == "centralized":
        return _build_centralized(fed, tree_id, lookup)

    ap, params = fed.active, fed.params
    first_order = mode == "ldp"
    driver = ROUND_DRIVERS[mode]
    nodes = []
    fitted = np.zeros(ap.user_ids.shape[0])
    log = []

    def leaf(user_ids, depth):
        w = ap.leaf_weight(user_ids, params.lam, first_order)
        nid = len(nodes)
        nodes.append(TreeNode(nid, depth, leaf_weight=float(w)))
        fitted[ap.rows(user_ids)] = w
        return nid

    def grow(user_ids, depth):
        if depth >= params.max_depth or len(user_ids) < params.min_instances:
            return leaf(user_ids, depth)
        nid = len(nodes)
        res = driver(fed, nid, user_ids)
        log.append({"tree": tree_id, "node": nid, "party": res.party_id,
                    "score": res.score, "split": res.split, "refusals": res.refusals})
        if not res.split:
            return leaf(user_ids, depth)
        nodes.append(TreeNode(nid, depth, split_ref=(res.party_id, res.record_id),
                              gain=res.score))
        lookup.add(tree_id, nid, res.party_id, res.record_id)
        nodes[nid].left_child = grow(list(res.left_ids), depth + 1)
        nodes[nid].right_child = grow(list(res.right_ids), depth + 1)
        return nid

    grow(ap.user_ids.tolist(), 0)
    tree = RegressionTree(nodes, params.max_depth)
    fed.rounds_log = getattr(fed, "rounds_log", []) + log
    return tree, lookup, fitted


def _build_centralized(fed, tree_id, lookup):
    ap, params = fed.active, fed.params
    counters = {pid: party._next_record for pid, party in fed.parties.items()}
    tree, records, fitted = grow_tree(fed.joined_columns(), fed.groups(), ap.gh.g, ap.gh.h,
                                      params, record_counters=counters)
    parties = fed.parties
    for (pid, rid), rec in records.items():
        owner = parties[pid]
        owner.records[rid] = rec
        owner._next_record = max(owner._next_record, rid + 1)
    for nd in tree.internal_nodes():
        lookup.add(tree_id, nd.node_id, *nd.split_ref)
    return tree, lookup, fitted


def train_ensemble(fed, mode, rounds):
    """Boost ``rounds`` trees; losses are mean training loss after each tree."""
    if rounds < 1:
        raise ParameterError("rounds must be >= 1")
    ap, params = fed.active, fed.params
    ens = Ensemble([], params.learning_rate, params.base_score, params.lam, params.gamma,
                   params.loss)
    lookup = LookupTable()
    initial = mean_loss(ap.loss, ap.labels, ap.margin)
    losses = []
    for t in range(rounds):
        with fed.timer("gradients"):
            ap.refresh_gradients()
        tree, lookup, fitted = build_tree(fed, mode, t, lookup)
        ens.trees.append(tree)
        ap.margin = ap.margin + params.learning_rate * fitted
        losses.append(mean_loss(ap.loss, ap.labels, ap.margin))
    return TrainResult(ens, lookup, losses, initial, list(getattr(fed, "rounds_log", [])))


def federated_predict(ensemble, lookup, parties, instance_id):
    """Margin for one instance, asking each split's owner for the direction."""
    total = 0.0
    for t, tree in enumerate(ensemble.trees):
        nd = tree.nodes[0]
        while not nd.is_leaf:
            try:
                pid, rid = lookup[(t, nd.node_id)]
            except KeyError:
                raise RoutingError(f"no lookup entry for tree {t} node {nd.node_id}")
            try:
                owner = parties[pid]
            except KeyError:
                raise RoutingError(f"party {pid} is not available")
            nd = tree.nodes[nd.left_child if owner.route(rid, instance_id) else nd.right_child]
        total += nd.leaf_weight
    return ensemble.base_score + ensemble.learning_rate * total


def federation_from_slices(slices, spec, params=None, protocol=None, seed=0, transport=None):
    """Wire aligned per-party slices into a :class:`Federation`.

    ``slices`` maps party id to an aligned :class:`~fedxgb.data.DatasetSlice`;
    the label owner becomes the AP.
    """
    params = params or Hyperparams()
    ap_slice = slices[spec.label_owner]
    if ap_slice.labels is None:
        raise ParameterError(f"label owner {spec.label_owner} holds no labels")
    ap = ActiveParty(spec.label_owner, ap_slice.user_ids, ap_slice.labels, params.loss,
                     {f: ap_slice.columns[f] for f in spec.features_of(spec.label_owner)},
                     params.base_score)
    passives = []
    for pid in spec.party_ids:
        if pid == spec.label_owner:
            continue
        ds = slices[pid]
        if ds.labels is not None:
            raise ParameterError(f"passive party {pid} must not hold labels")
        passives.append(PassiveParty(pid, ds.user_ids,
                                     {f: ds.columns[f] for f in spec.features_of(pid)}))
    return Federation(ap, passives, params, protocol, seed, transport)
