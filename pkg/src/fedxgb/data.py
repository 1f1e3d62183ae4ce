"""CSV ingestion, vertical partitioning, id alignment and synthetic data."""

import csv
import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DataError, DimensionError, ParameterError

MISSING_POLICIES = ("impute-median", "drop-row")


@dataclass
class DatasetSlice:
    """One party's rows: ids, named numeric columns and (AP only) labels."""

    user_ids: np.ndarray
    columns: dict = field(default_factory=dict)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.user_ids = np.asarray(self.user_ids)
        n = self.user_ids.shape[0]
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        for name, col in self.columns.items():
            if col.shape != (n,):
                raise DimensionError(f"column {name!r} has shape {col.shape}, expected ({n},)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float)
            if self.labels.shape != (n,):
                raise DimensionError("label column length differs from user_ids")
        ids = self.user_ids.tolist()
        if len(set(ids)) != n:
            seen = set()
            dup = next(u for u in ids if u in seen or seen.add(u))
            raise DataError(f"duplicate id {dup!r}")

    def __len__(self):
        return self.user_ids.shape[0]

    @property
    def feature_names(self):
        return list(self.columns)

    def take(self, rows):
        rows = np.asarray(rows, dtype=int)
        return DatasetSlice(self.user_ids[rows], {k: v[rows] for k, v in self.columns.items()},
                            None if self.labels is None else self.labels[rows])

    def select(self, features, with_labels=False):
        return DatasetSlice(self.user_ids.copy(), {f: self.columns[f].copy() for f in features},
                            self.labels.copy() if with_labels and self.labels is not None else None)

    def digest(self):
        h = hashlib.sha256()
        h.update(np.asarray(self.user_ids).astype(str).tobytes())
        for k in sorted(self.columns):
            h.update(str(k).encode())
            h.update(self.columns[k].tobytes())
        if self.labels is not None:
            h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


@dataclass
class VerticalPartitionSpec:
    """``assignment`` maps feature name to party id; labels live at ``label_owner``."""

    assignment: dict
    label_owner: int
    id_column: str = "id"

    @property
    def party_ids(self):
        ids = set(self.assignment.values()) | {self.label_owner}
        return sorted(ids)

    def features_of(self, party_id):
        return [f for f, p in self.assignment.items() if p == party_id]

    @classmethod
    def from_groups(cls, features_per_party, label_owner, id_column="id"):
        assignment = {}
        for pid, feats in features_per_party.items():
            for f in feats:
                if f in assignment:
                    raise ParameterError(f"feature {f!r} assigned to parties "
                                         f"{assignment[f]} and {pid}")
                assignment[f] = int(pid)
        return cls(assignment, int(label_owner), id_column)


def _parse_id(text):
    try:
        return int(text)
    except ValueError:
        return text


def load_csv(path, id_column="id", label_column=None, missing="impute-median"):
    """Read a header-first CSV into a :class:`DatasetSlice`.

    Empty or unparseable numeric cells are missing; they are filled with the
    column median or cause the row to be dropped, per ``missing``.
    """
    if missing not in MISSING_POLICIES:
        raise ParameterError(f"missing policy must be one of {MISSING_POLICIES}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        rows = [r for r in reader if r]
    if id_column not in header:
        raise DataError(f"{path}: missing id column {id_column!r}")
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: missing label column {label_column!r}")
    id_at = header.index(id_column)
    names = [h for h in header if h != id_column]
    at = {h: header.index(h) for h in names}
    ids = [_parse_id(r[id_at]) for r in rows]
    data = np.full((len(rows), len(names)), np.nan)
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, expected {len(header)}")
        for j, name in enumerate(names):
            try:
                data[i, j] = float(r[at[name]])
            except ValueError:
                pass
    bad = ~np.isfinite(data)
    if missing == "drop-row":
        keep = ~bad.any(axis=1)
        data = data[keep]
        ids = [u for u, k in zip(ids, keep) if k]
    else:
        for j in range(data.shape[1]):
            col = data[:, j]
            miss = ~np.isfinite(col)
            if miss.any():
                if miss.all():
                    raise DataError(f"{path}: column {names[j]!r} has no numeric values")
                col[miss] = np.median(col[~miss])
    cols = {name: data[:, j] for j, name in enumerate(names) if name != label_column}
    labels = data[:, names.index(label_column)] if label_column is not None else None
    return DatasetSlice(np.asarray(ids), cols, labels)


def write_csv(ds, path, id_column="id", label_column="label"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        names = list(ds.columns)
        header = [id_column] + names + ([label_column] if ds.labels is not None else [])
        w.writerow(header)
        for i, uid in enumerate(ds.user_ids.tolist()):
            row = [uid] + [repr(float(ds.columns[f][i])) for f in names]
            if ds.labels is not None:
                row.append(repr(float(ds.labels[i])))
            w.writerow(row)


def align_and_partition(slices):
    """Restrict every party's slice to the common ids, in ascending id order.

    ``slices`` maps party id to :class:`DatasetSlice`.
    """
    if not slices:
        raise DataError("no slices to align")
    common = None
    for ds in slices.values():
        ids = set(ds.user_ids.tolist())
        common = ids if common is None else common & ids
    if not common:
        raise DataError("parties share no instance ids")
    order = sorted(common)
    out = {}
    for pid, ds in slices.items():
        pos = {u: i for i, u in enumerate(ds.user_ids.tolist())}
        out[pid] = ds.take([pos[u] for u in order])
    return out


def partition(ds, spec):
    """Split one joined slice into per-party slices following ``spec``."""
    missing = [f for f in spec.assignment if f not in ds.columns]
    if missing:
        raise DataError(f"features not in dataset: {missing}")
    return {pid: ds.select(spec.features_of(pid), with_labels=pid == spec.label_owner)
            for pid in spec.party_ids}


def generate_synthetic(n, d, task="binary", seed=0, noise=0.5):
    """Gaussian features; label from a positive-weight linear score.

    ``binary`` labels are Bernoulli draws through the logistic link, so both
    classes appear for any reasonable ``n``.
    """
    if n < 2 or d < 1:
        raise ParameterError("need n >= 2 and d >= 1")
    if task not in ("binary", "regression"):
        raise ParameterError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    w = rng.uniform(0.5, 1.5, d)
    score = X @ w
    if task == "regression":
        y = score + noise * rng.standard_normal(n)
    else:
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-2.0 * score))).astype(float)
    cols = {f"f{j}": X[:, j] for j in range(d)}
    return DatasetSlice(np.arange(n), cols, y)


def even_spec(ds, n_passive, ap_features=False):
    """Deal features round-robin; the AP is party 0, PPs are 1..n_passive."""
    if n_passive < 1:
        raise ParameterError("a federation needs at least one passive party")
    holders = list(range(0 if ap_features else 1, n_passive + 1))
    assignment = {f: holders[i % len(holders)] for i, f in enumerate(ds.feature_names)}
    return VerticalPartitionSpec(assignment, 0)
