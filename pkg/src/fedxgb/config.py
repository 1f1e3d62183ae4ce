"""Run configuration: YAML (or JSON) documents validated into typed objects."""

import copy
from dataclasses import dataclass

import yaml

from .boosting import Hyperparams
from .errors import ConfigError, ParameterError
from .federation.parties import ProtocolParams
from .federation.protocols import MODES
from .ldp import MECHANISMS

# Defaults keep every node well above the secure protocols' kernel capacity.
DEFAULTS = {
    "data": {"synthetic": {"n": 200, "d": 4, "task": "binary", "seed": 0}},
    "parties": 3,
    "features-per-party": None,
    "label-owner": 0,
    "loss": "logistic",
    "lambda": 1.0,
    "gamma": 0.0,
    "max_depth": 3,
    "rounds": 10,
    "learning_rate": 0.3,
    "base_score": 0.0,
    "l": 4,
    "min_bucket": 8,
    "min_instances": 20,
    "l1": None,
    "l2": None,
    "mu": 0.0,
    "sigma": 1.0,
    "r": None,
    "r_prime": None,
    "fresh_basis": True,
    "mix": True,
    "max_retries": 3,
    "epsilon": 1.0,
    "mechanism": "laplace",
    "clip": 1.0,
    "seed": 0,
    "mode": "centralized",
}

_INT_OR_NONE = ("l1", "l2", "r", "r_prime")


@dataclass
class RunConfig:
    raw: dict
    params: Hyperparams
    protocol: ProtocolParams

    @property
    def mode(self):
        return self.raw["mode"]

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def rounds(self):
        return self.raw["rounds"]


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}".replace("\n", " ")) from exc
    return parse_config(doc or {}, overrides)


def parse_config(doc, overrides=None):
    """Merge ``doc`` (and ``overrides``) over :data:`DEFAULTS` and validate."""
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"config: unknown keys {unknown}")
    raw = copy.deepcopy(DEFAULTS)
    raw.update(copy.deepcopy(doc))
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    _check(raw)
    try:
        params = Hyperparams(lam=raw["lambda"], gamma=raw["gamma"], max_depth=raw["max_depth"],
                             min_instances=raw["min_instances"],
                             learning_rate=raw["learning_rate"], base_score=raw["base_score"],
                             n_candidates=raw["l"], min_bucket=raw["min_bucket"],
                             loss=raw["loss"])
        protocol = ProtocolParams(r=raw["r"], r_prime=raw["r_prime"], l1=raw["l1"],
                                  l2=raw["l2"], mu=raw["mu"], sigma=raw["sigma"],
                                  mix=raw["mix"], fresh_basis=raw["fresh_basis"],
                                  max_retries=raw["max_retries"], epsilon=raw["epsilon"],
                                  clip=raw["clip"], mechanism=raw["mechanism"])
    except ParameterError as exc:
        raise ConfigError(f"config: {exc}") from exc
    return RunConfig(raw, params, protocol)


def _fail(key, msg):
    raise ConfigError(f"config: {key}: {msg}")


def _number(raw, key, lo=None, strict=False):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(key, f"expected a number, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        _fail(key, f"must be {'>' if strict else '>='} {lo}, got {v}")


def _integer(raw, key, lo):
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, int):
        _fail(key, f"expected an integer, got {v!r}")
    if v < lo:
        _fail(key, f"must be >= {lo}, got {v}")


def _check(raw):
    if raw["mode"] not in MODES:
        _fail("mode", f"expected one of {list(MODES)}, got {raw['mode']!r}")
    if raw["mechanism"] not in MECHANISMS:
        _fail("mechanism", f"expected one of {list(MECHANISMS)}, got {raw['mechanism']!r}")
    _number(raw, "epsilon", 0, strict=True)
    _number(raw, "clip", 0, strict=True)
    _number(raw, "sigma", 0, strict=True)
    _number(raw, "mu")
    _number(raw, "lambda", 0)
    _number(raw, "gamma", 0)
    _number(raw, "learning_rate", 0, strict=True)
    _number(raw, "base_score")
    if raw["learning_rate"] > 1:
        _fail("learning_rate", "must be <= 1")
    if raw["mode"] == "ldp" and raw["lambda"] <= 0:
        _fail("lambda", "the first-order score needs lambda > 0")
    _integer(raw, "max_depth", 0)
    _integer(raw, "rounds", 1)
    _integer(raw, "l", 1)
    _integer(raw, "min_bucket", 1)
    _integer(raw, "min_instances", 1)
    _integer(raw, "max_retries", 0)
    _integer(raw, "seed", 0)
    _integer(raw, "parties", 2)
    _integer(raw, "label-owner", 0)
    for key in _INT_OR_NONE:
        if raw[key] is not None:
            _integer(raw, key, 0 if key in ("l1", "l2") else 1)
    for key in ("mix", "fresh_basis"):
        if not isinstance(raw[key], bool):
            _fail(key, "expected true or false")
    _check_parties(raw)
    _check_data(raw["data"])


def _check_parties(raw):
    fpp = raw["features-per-party"]
    owner = raw["label-owner"]
    if owner >= raw["parties"]:
        _fail("label-owner", f"party {owner} does not exist among {raw['parties']} parties")
    if fpp is None:
        return
    if not isinstance(fpp, dict):
        _fail("features-per-party", "expected a mapping party-id -> [feature names]")
    seen = {}
    for pid, feats in fpp.items():
        try:
            pid_i = int(pid)
        except (TypeError, ValueError):
            _fail("features-per-party", f"party id {pid!r} is not an integer")
        if not 0 <= pid_i < raw["parties"]:
            _fail("features-per-party", f"party {pid_i} outside 0..{raw['parties'] - 1}")
        if not isinstance(feats, list):
            _fail("features-per-party", f"party {pid_i}: expected a list of feature names")
        for f in feats:
            if f in seen:
                _fail("features-per-party", f"feature {f!r} assigned to {seen[f]} and {pid_i}")
            seen[f] = pid_i


def _check_data(data):
    if not isinstance(data, dict):
        _fail("data", "expected a mapping")
    if ("path" in data) == ("synthetic" in data):
        _fail("data", "give exactly one of 'path' or 'synthetic'")
    if "synthetic" in data:
        syn = data["synthetic"]
        if not isinstance(syn, dict):
            _fail("data.synthetic", "expected a mapping with n, d, task, seed")
        extra = sorted(set(syn) - {"n", "d", "task", "seed"})
        if extra:
            _fail("data.synthetic", f"unknown keys {extra}")
        for key, lo in (("n", 2), ("d", 1), ("seed", 0)):
            v = syn.get(key, DEFAULTS["data"]["synthetic"][key])
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                _fail(f"data.synthetic.{key}", f"expected an integer >= {lo}, got {v!r}")
        if syn.get("task", "binary") not in ("binary", "regression"):
            _fail("data.synthetic.task", "expected binary or regression")
    else:
        extra = sorted(set(data) - {"path", "id_column", "label_column", "missing",
                                    "predict_path"})
        if extra:
            _fail("data", f"unknown keys {extra}")
        if data.get("missing", "impute-median") not in ("impute-median", "drop-row"):
            _fail("data.missing", "expected impute-median or drop-row")
