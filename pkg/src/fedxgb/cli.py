"""Command line: ``fedxgb {train,predict,compare,audit} --config run.yaml``.

Exit codes: 0 success, 2 config or usage error, 3 protocol abort, 4 I/O or
data error.  Failures print one line ``<prefix>: <reason>`` to stderr.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .audit import run_audit
from .boosting import SplitRecord, accuracy, dump_model, load_model, mean_loss
from .config import load_config
from .data import (VerticalPartitionSpec, align_and_partition, generate_synthetic, load_csv,
                   partition)
from .errors import CapacityError, ConfigError, DataError, ProtocolError, RoutingError
from .federation import (MODES, LookupTable, federated_predict, federation_from_slices,
                         train_ensemble)
from .federation.parties import ActiveParty, PassiveParty

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="fedxgb", description="Vertically federated XGBoost simulator.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, helptext in (("train", "train one ensemble and write its artefacts"),
                           ("predict", "federated inference with a trained ensemble"),
                           ("compare", "train several modes on the same data and seed"),
                           ("audit", "run the privacy audit checks")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", required=True)
        s.add_argument("--mode", default=None,
                       help="mode name; for compare a comma-separated list of >= 2 modes")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--out", default="fedxgb-out")
        s.add_argument("--quiet", action="store_true")
    return p


# -- data plumbing -----------------------------------------------------------

def _spec(cfg, feature_names):
    raw = cfg.raw
    owner = raw["label-owner"]
    fpp = raw["features-per-party"]
    if fpp is not None:
        spec = VerticalPartitionSpec.from_groups({int(k): v for k, v in fpp.items()}, owner)
        unknown = [f for f in spec.assignment if f not in feature_names]
        if unknown:
            raise ConfigError(f"config: features-per-party: unknown features {unknown}")
        return spec
    holders = [p for p in range(raw["parties"]) if p != owner]
    assignment = {f: holders[i % len(holders)] for i, f in enumerate(feature_names)}
    return VerticalPartitionSpec(assignment, owner)


def load_dataset(cfg, which="path"):
    data = cfg.raw["data"]
    if "synthetic" in data:
        syn = dict(cfg.raw["data"]["synthetic"])
        ds = generate_synthetic(syn.get("n", 200), syn.get("d", 4), syn.get("task", "binary"),
                                syn.get("seed", 0))
        return ds, "synthetic: Normal(0,1) features, logistic labels; no preprocessing"
    path = data.get(which) or data["path"]
    label = data.get("label_column", "label")
    missing = data.get("missing", "impute-median")
    # prediction files may come without labels
    ds = load_csv(path, data.get("id_column", "id"), None, missing)
    if label in ds.columns:
        ds.labels = ds.columns.pop(label)
    elif which == "path":
        raise DataError(f"{path}: missing label column {label!r}")
    return ds, f"csv {os.path.basename(path)}; missing values: {missing}"


def prepare(cfg, which="path"):
    ds, note = load_dataset(cfg, which)
    spec = _spec(cfg, ds.feature_names)
    slices = align_and_partition(partition(ds, spec))
    missing_parties = [p for p in range(cfg.raw["parties"]) if p not in slices]
    if missing_parties:
        raise ConfigError(f"config: parties {missing_parties} hold no features")
    return ds, spec, slices, note


# -- outputs -------------------------------------------------------------------

def write_trajectory(path, losses):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss"])
        for i, v in enumerate(losses, start=1):
            w.writerow([i, repr(float(v))])


def _records_doc(party):
    return {"party_id": party.party_id,
            "records": [[rid, rec.feature_id, rec.threshold]
                        for rid, rec in sorted(party.records.items())]}


def run_report(cfg, mode, result, fed, ds, note):
    ap = fed.active
    dist = {"log_loss": mean_loss(ap.loss, ap.labels, ap.margin)}
    if cfg.params.loss == "logistic":
        dist["accuracy"] = accuracy(ap.labels, ap.margin)
    hp = {k: v for k, v in cfg.raw.items() if k not in ("data", "mode", "seed")}
    return {"mode": mode, "seed": cfg.seed, "hyperparameters": hp,
            "losses": result.losses, "initial_loss": result.initial_loss,
            "timings": {k: round(v, 6) for k, v in sorted(fed.timings.items())},
            "final_metrics": dist, "dataset_digest": ds.digest(), "preprocessing": note,
            "refusal_events": len(fed.events)}


def _train(cfg, mode, slices, spec):
    fed = federation_from_slices(slices, spec, cfg.params, cfg.protocol, cfg.seed)
    try:
        return fed, train_ensemble(fed, mode, cfg.rounds)
    except (ProtocolError, CapacityError) as exc:
        raise ProtocolError(f"{mode} round {fed.round}: {exc}") from exc


def cmd_train(cfg, out, log):
    mode = cfg.mode
    ds, spec, slices, note = prepare(cfg)
    fed, res = _train(cfg, mode, slices, spec)
    os.makedirs(out, exist_ok=True)
    write_trajectory(os.path.join(out, "trajectory.csv"), res.losses)
    with open(os.path.join(out, "model.json"), "w", encoding="utf-8") as fh:
        fh.write(dump_model(res.ensemble, {"lookup": res.lookup.to_list(), "mode": mode,
                                           "label_owner": spec.label_owner}))
    for pid, party in fed.parties.items():
        with open(os.path.join(out, f"party_{pid}_records.json"), "w", encoding="utf-8") as fh:
            json.dump(_records_doc(party), fh, sort_keys=True, indent=1)
    fed.transport.write_trace(os.path.join(out, "trace.ndjson"))
    report = run_report(cfg, mode, res, fed, ds, note)
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    log(f"{mode}: {cfg.rounds} rounds, final loss {res.losses[-1]:.6f}, out={out}")
    return report


def cmd_predict(cfg, out, log):
    with open(os.path.join(out, "model.json"), encoding="utf-8") as fh:
        ens, extra = load_model(fh.read())
    lookup = LookupTable.from_list((extra or {}).get("lookup", []))
    ds, spec, slices, _ = prepare(cfg, "predict_path")
    parties = {}
    for pid, sl in slices.items():
        feats = {f: sl.columns[f] for f in spec.features_of(pid)}
        if pid == spec.label_owner:
            labels = sl.labels if sl.labels is not None else np.zeros(len(sl))
            party = ActiveParty(pid, sl.user_ids, labels, ens.loss, feats)
        else:
            party = PassiveParty(pid, sl.user_ids, feats)
        rec_path = os.path.join(out, f"party_{pid}_records.json")
        if os.path.exists(rec_path):
            with open(rec_path, encoding="utf-8") as fh:
                for rid, fid, thr in json.load(fh)["records"]:
                    party.records[rid] = SplitRecord(fid, thr)
        parties[pid] = party
    ids = slices[spec.label_owner].user_ids.tolist()
    margins = [federated_predict(ens, lookup, parties, u) for u in ids]
    path = os.path.join(out, "predictions.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "margin"])
        for u, m in zip(ids, margins):
            w.writerow([u, repr(float(m))])
    log(f"predicted {len(ids)} instances -> {path}")
    return margins


def cmd_compare(cfg, modes, out, log):
    if len(modes) < 2:
        raise UsageError("compare needs at least two modes, e.g. --mode centralized,smm2")
    ds, spec, slices, note = prepare(cfg)
    runs = {}
    for mode in modes:
        fed, res = _train(cfg, mode, slices, spec)
        runs[mode] = run_report(cfg, mode, res, fed, ds, note)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "compare.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration"] + [f"loss_{m}" for m in modes])
        for i in range(cfg.rounds):
            w.writerow([i + 1] + [repr(float(runs[m]["losses"][i])) for m in modes])
    with open(os.path.join(out, "compare.json"), "w", encoding="utf-8") as fh:
        json.dump(runs, fh, sort_keys=True, indent=1)
    for m in modes:
        log(f"{m:12s} final loss {runs[m]['losses'][-1]:.6f}  "
            f"time {sum(runs[m]['timings'].values()):.3f}s")
    return runs


def cmd_audit(cfg, out, log):
    _, spec, slices, _ = prepare(cfg)
    checks = run_audit(slices, spec, cfg.params, cfg.protocol, cfg.seed)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "audit.json"), "w", encoding="utf-8") as fh:
        json.dump([c.as_dict() for c in checks], fh, sort_keys=True, indent=1)
    for c in checks:
        log(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    return checks


def _modes(arg):
    names = [m.strip() for m in arg.split(",") if m.strip()]
    bad = [m for m in names if m not in MODES]
    if bad:
        raise ConfigError(f"config: mode: unknown {bad}; expected {list(MODES)}")
    return names


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand (train, predict, compare, audit)")
        log = (lambda *_: None) if args.quiet else print
        modes = _modes(args.mode) if args.mode else None
        if args.command == "compare":
            if not modes:
                raise UsageError("compare needs --mode with at least two modes")
        elif modes and len(modes) != 1:
            raise UsageError(f"{args.command} takes a single --mode")
        if not os.path.exists(args.config):
            raise FileNotFoundError(f"config file {args.config} not found")
        single = modes[0] if modes and args.command != "compare" else None
        cfg = load_config(args.config, {"mode": single, "seed": args.seed})
        if args.command == "train":
            cmd_train(cfg, args.out, log)
        elif args.command == "predict":
            cmd_predict(cfg, args.out, log)
        elif args.command == "compare":
            cmd_compare(cfg, modes, args.out, log)
        else:
            cmd_audit(cfg, args.out, log)
        return EXIT_OK
    except (UsageError, ConfigError) as exc:
        return _die("config-error", exc, EXIT_CONFIG)
    except (ProtocolError, CapacityError, RoutingError) as exc:
        return _die("protocol-abort", exc, EXIT_PROTOCOL)
    except (OSError, DataError) as exc:
        return _die("io-error", exc, EXIT_IO)


def _die(prefix, exc, code):
    msg = " ".join(str(exc).split())
    if msg.startswith("config: "):
        msg = msg[len("config: "):]
    print(f"{prefix}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
