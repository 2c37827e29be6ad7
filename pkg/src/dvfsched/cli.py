"""Command-line pipeline: synth -> train -> evaluate -> simulate -> serve.

Configuration is a JSON document (see README for the schema); every field can
be overridden on the command line with ``--set key.path=value``, and common
fields have dedicated flags. A seed is mandatory — there is no wall-clock
default — and all randomness flows from it through named sub-streams, so each
command's outputs are byte-reproducible (timestamps live only in a single
``created_at`` metadata field of the report files).

Exit codes: 0 success, 2 configuration or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import signal
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import models as mdl
from . import oracle as orc
from .matcher import build_knowledge_base, load_kb, save_kb
from .models import ModelFormatError
from .policies import Policy
from .schema import DeviceSpec, FrequencyConfig, ValidationError
from .server import ModelServer
from .simulator import (
    compare_policies,
    generate_workload,
    oracle_optimal_active_energy,
    write_result_csv,
    write_result_json,
)
from .traces import TraceParseError, load_dataset, load_device, normalize, save_device, split, write_dataset


class ConfigError(Exception):
    """Bad or missing configuration; maps to exit code 2."""


DEFAULT_CONFIG: dict = {
    "out_dir": "out",
    "device": None,          # device JSON path; null uses the built-in desk GPU
    "dataset": None,         # trace CSV path; null -> <out_dir>/dataset.csv
    "oracle": None,          # oracle JSON path; null -> dataset path + .oracle.json
    "synth": {
        "n_apps": 12,
        "noise_sigma": 0.05,
        "ranges": {},        # overrides for OracleRanges fields, e.g. {"compute_work": [300, 1100]}
    },
    "train": {
        "kinds": ["ols", "lasso", "gbrt"],
        "test_fraction": 0.2,
        "lasso": {"lam": 0.01},
        "gbrt": {"n_trees": 200, "max_depth": 3, "shrinkage": 0.1, "min_leaf": 2},
        "kmeans_k": None,    # null -> sqrt(n_apps / 2) rule
        "models_dir": None,  # null -> <out_dir>/models
    },
    "workload": {
        "n_jobs": 200,
        "arrival_rate": 0.04,
        "slack_range": [1.2, 3.0],
        "execution_noise": None,  # null keeps each app's own noise_sigma
    },
    "simulate": {
        "policies": ["data-driven", "default-clock", "max-clock"],
        "model_kind": "gbrt",
        "n_devices": 1,
        "switch_overhead_s": 0.0,
        "queue": "edf",
    },
    "server": {"host": "127.0.0.1", "port": 8099},
}


def builtin_device() -> DeviceSpec:
    """Desk-scale single-GPU device: fixed HBM clock, a 12-step core clock
    ladder, and a base (default) clock mid-ladder so the energy-optimal point
    of typical synthetic apps is reachable on both sides of it while the max
    clock stays clearly wasteful."""
    mem = 715
    cores = (810, 847, 884, 921, 958, 999, 1063, 1126, 1189, 1265, 1328, 1390)
    return DeviceSpec(
        name="desk-gpu",
        supported_configs=tuple(FrequencyConfig(mem, c) for c in cores),
        default_config=FrequencyConfig(mem, 1063),
        max_config=FrequencyConfig(mem, 1390),
        idle_power=55.0,
    )


def derive_seed(seed: int, stream: str) -> int:
    """Stable named sub-stream of the master seed."""
    digest = hashlib.sha256(f"{seed}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# ---------------------------------------------------------------------------
# configuration plumbing


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key.path=value, got {assignment!r}")
    key_path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings are common; keep them as-is
    node = cfg
    parts = key_path.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {key_path!r} crosses a non-object value")
    node[parts[-1]] = value


def load_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _deep_merge(cfg, file_cfg)
    for assignment in args.set or []:
        _apply_set(cfg, assignment)
    # dedicated flags win over config file and --set
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    if "seed" not in cfg:
        raise ConfigError("a seed is required (--seed or config 'seed'); "
                          "there is no wall-clock default")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_path(cfg: dict) -> Path:
    return Path(cfg["dataset"]) if cfg["dataset"] else _out_dir(cfg) / "dataset.csv"


def _oracle_path(cfg: dict) -> Path:
    if cfg["oracle"]:
        return Path(cfg["oracle"])
    ds = _dataset_path(cfg)
    return ds.with_name(ds.stem + ".oracle.json")


def _models_dir(cfg: dict) -> Path:
    tr = cfg["train"]
    return Path(tr["models_dir"]) if tr["models_dir"] else _out_dir(cfg) / "models"


def _load_device_cfg(cfg: dict) -> DeviceSpec:
    if cfg["device"]:
        path = Path(cfg["device"])
        if not path.exists():
            raise ConfigError(f"device spec not found: {path}")
        return load_device(path)
    return builtin_device()


def _model_kind(name: str, train_cfg: dict) -> mdl.ModelKind:
    if name == "ols":
        return mdl.OLSKind()
    if name == "lasso":
        return mdl.LassoKind(**train_cfg["lasso"])
    if name == "gbrt":
        return mdl.GBRTKind(**train_cfg["gbrt"])
    raise ConfigError(f"unknown model kind {name!r} (expected ols, lasso, or gbrt)")


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: dict) -> int:
    out = _out_dir(cfg)
    device = _load_device_cfg(cfg)
    syn = cfg["synth"]
    try:
        ranges = orc.OracleRanges(**{
            **{k: tuple(v) if isinstance(v, list) else v
               for k, v in syn["ranges"].items()},
            "noise_sigma": syn["noise_sigma"],
        })
    except TypeError as exc:
        raise ConfigError(f"bad synth.ranges: {exc}") from None
    dataset, specs = orc.generate_synthetic(
        n_apps=int(syn["n_apps"]), device=device, ranges=ranges,
        seed=derive_seed(cfg["seed"], "dataset"))
    ds_path = _dataset_path(cfg)
    write_dataset(dataset, ds_path)
    orc.save_oracles(specs, _oracle_path(cfg))
    save_device(device, out / "device.json")
    print(f"wrote {len(dataset)} records ({syn['n_apps']} apps x "
          f"{len(device.supported_configs)} configs) to {ds_path}")
    return 0


def cmd_train(cfg: dict) -> int:
    device = _load_device_cfg(cfg)
    ds_path = _dataset_path(cfg)
    if not ds_path.exists():
        raise ConfigError(f"dataset not found: {ds_path} (run synth first?)")
    dataset = load_dataset(ds_path, device)
    tr = cfg["train"]
    kinds = [(name, _model_kind(name, tr)) for name in tr["kinds"]]

    train_set, test_set = split(dataset, float(tr["test_fraction"]),
                                derive_seed(cfg["seed"], "split"))
    dm_train = mdl.build_design_matrix(train_set)
    dm_test = mdl.build_design_matrix(test_set, stats=dm_train.stats)
    dm_full = mdl.build_design_matrix(dataset)

    models_dir = _models_dir(cfg)
    models_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, kind in kinds:
        for target in mdl.TARGETS:
            seed = derive_seed(cfg["seed"], f"model.{target}.{name}")
            held_out = mdl.fit(kind, dm_train.X, dm_train.target(target), seed,
                               target=target, input_labels=dm_train.labels)
            report = mdl.evaluate(held_out, dm_test.X, dm_test.target(target),
                                  app_ids=dm_test.app_ids)
            mean_target = float(dm_test.target(target).mean())
            rows.append({
                "kind": name, "target": target,
                "rmse": report.rmse, "mae": report.mae,
                "rel_rmse": report.rmse / mean_target,
                "n_test": report.n_samples,
                "per_app_rmse": dict(report.per_app_rmse),
            })
            # final model sees every profiled app, mirroring deployment
            final = mdl.fit(kind, dm_full.X, dm_full.target(target), seed,
                            target=target, input_labels=dm_full.labels)
            mdl.save_model(final, models_dir / f"{target}_{name}.json")

    kb = build_knowledge_base(normalize(dataset), k=tr["kmeans_k"],
                              seed=derive_seed(cfg["seed"], "cluster"))
    save_kb(kb, models_dir / "kb.json")

    report_doc = {
        "created_at": _now(),
        "dataset": str(ds_path),
        "device": device.name,
        "split": {
            "test_fraction": tr["test_fraction"],
            "train_apps": list(train_set.app_ids()),
            "test_apps": list(test_set.app_ids()),
        },
        "rows": rows,
    }
    _dump_json(report_doc, _out_dir(cfg) / "eval_report.json")

    print(f"held-out prediction error ({len(test_set.app_ids())} unseen apps, "
          f"{rows[0]['n_test']} records):")
    print(f"  {'model':<8}{'target':<10}{'RMSE':>12}{'MAE':>12}{'RMSE/mean':>12}")
    for row in rows:
        print(f"  {row['kind']:<8}{row['target']:<10}{row['rmse']:>12.4f}"
              f"{row['mae']:>12.4f}{row['rel_rmse']:>12.4f}")
    print(f"models + knowledge base written to {models_dir}")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    device = _load_device_cfg(cfg)
    ds_path = _dataset_path(cfg)
    if not ds_path.exists():
        raise ConfigError(f"dataset not found: {ds_path}")
    dataset = load_dataset(ds_path, device)
    models_dir = _models_dir(cfg)
    kb_path = models_dir / "kb.json"
    if not kb_path.exists():
        raise ConfigError(f"knowledge base not found: {kb_path} (run train first?)")
    kb = load_kb(kb_path)
    dm = mdl.build_design_matrix(dataset, stats=kb.stats)

    rows = []
    for name in cfg["train"]["kinds"]:
        for target in mdl.TARGETS:
            path = models_dir / f"{target}_{name}.json"
            if not path.exists():
                raise ConfigError(f"model file not found: {path}")
            model = mdl.load_model(path)
            report = mdl.evaluate(model, dm.X, dm.target(target), app_ids=dm.app_ids)
            rows.append({"kind": name, "target": target, "rmse": report.rmse,
                         "mae": report.mae,
                         "rel_rmse": report.rmse / float(dm.target(target).mean()),
                         "n_samples": report.n_samples,
                         "per_app_rmse": dict(report.per_app_rmse)})

    _dump_json({"created_at": _now(), "dataset": str(ds_path), "rows": rows},
               _out_dir(cfg) / "eval_report.json")
    print(f"  {'model':<8}{'target':<10}{'RMSE':>12}{'MAE':>12}{'RMSE/mean':>12}")
    for row in rows:
        print(f"  {row['kind']:<8}{row['target']:<10}{row['rmse']:>12.4f}"
              f"{row['mae']:>12.4f}{row['rel_rmse']:>12.4f}")
    return 0


def cmd_simulate(cfg: dict) -> int:
    out = _out_dir(cfg)
    device = _load_device_cfg(cfg)
    oracle_path = _oracle_path(cfg)
    if not oracle_path.exists():
        raise ConfigError(f"oracle ground truth not found: {oracle_path}")
    specs = orc.load_oracles(oracle_path)

    models_dir = _models_dir(cfg)
    sim = cfg["simulate"]
    kind = sim["model_kind"]
    paths = {target: models_dir / f"{target}_{kind}.json" for target in mdl.TARGETS}
    for target, path in paths.items():
        if not path.exists():
            raise ConfigError(f"{target} model not found: {path} (run train first?)")
    kb_path = models_dir / "kb.json"
    if not kb_path.exists():
        raise ConfigError(f"knowledge base not found: {kb_path}")
    energy_model = mdl.load_model(paths["energy"])
    time_model = mdl.load_model(paths["time"])
    kb = load_kb(kb_path)

    wl = cfg["workload"]
    if wl["execution_noise"] is not None:
        sigma = float(wl["execution_noise"])
        specs = [orc.OracleSpec(**{**s.to_dict(), "noise_sigma": sigma}) for s in specs]
    workload = generate_workload(
        specs, n_jobs=int(wl["n_jobs"]), arrival_rate=float(wl["arrival_rate"]),
        slack_factor_range=tuple(wl["slack_range"]),
        seed=derive_seed(cfg["seed"], "workload"), device=device)

    policies = [Policy(p) for p in sim["policies"]]
    devices = [device] * int(sim["n_devices"])
    comparison = compare_policies(workload, devices, policies, kb, energy_model,
                                  time_model, specs,
                                  switch_overhead_s=float(sim["switch_overhead_s"]),
                                  queue=sim["queue"])

    for name, result in comparison.results.items():
        write_result_json(result, workload, out / f"results_{name}.json")
        write_result_csv(result, workload, out / f"results_{name}.csv")

    doc = {
        "created_at": _now(),
        "n_jobs": len(workload.jobs),
        "policies": {
            name: {
                "total_energy_j": r.total_energy,
                "active_energy_j": r.active_energy,
                "idle_energy_j": r.idle_energy,
                "violations": r.violations,
                "violation_rate": r.violation_rate,
                "mean_normalized_completion": r.mean_normalized_completion,
                "makespan_s": r.makespan,
            } for name, r in comparison.results.items()
        },
        "savings_pct": {p: dict(row) for p, row in comparison.savings_pct.items()},
        "active_savings_pct": {p: dict(row)
                               for p, row in comparison.active_savings_pct.items()},
    }
    if len(devices) == 1:
        opt = oracle_optimal_active_energy(workload, device, specs)
        doc["oracle_optimal_active_energy_j"] = opt
        if Policy.MAX_CLOCK.value in comparison.results and \
                Policy.DATA_DRIVEN.value in comparison.results:
            e_max = comparison.results[Policy.MAX_CLOCK.value].active_energy
            e_dd = comparison.results[Policy.DATA_DRIVEN.value].active_energy
            if e_max > opt:
                doc["oracle_savings_capture"] = (e_max - e_dd) / (e_max - opt)
    _dump_json(doc, out / "comparison.json")

    print(f"{len(workload.jobs)} jobs on {len(devices)} device(s), "
          f"queue={sim['queue']}:")
    print(f"  {'policy':<16}{'total J':>12}{'active J':>12}{'violations':>12}"
          f"{'mean nct':>10}")
    for name, r in comparison.results.items():
        print(f"  {name:<16}{r.total_energy:>12.1f}{r.active_energy:>12.1f}"
              f"{r.violations:>12d}{r.mean_normalized_completion:>10.3f}")
    for p, row in comparison.active_savings_pct.items():
        for q, pct in row.items():
            if p != q:
                total_pct = comparison.savings_pct[p][q]
                print(f"  {p} vs {q}: {pct:+.2f}% job energy ({total_pct:+.2f}% incl. idle)")
    if "oracle_savings_capture" in doc:
        print(f"  oracle-optimal capture: {100 * doc['oracle_savings_capture']:.1f}%")
    return 0


def cmd_serve(cfg: dict) -> int:
    models_dir = _models_dir(cfg)
    kind = cfg["simulate"]["model_kind"]
    served = {}
    for target in mdl.TARGETS:
        path = models_dir / f"{target}_{kind}.json"
        if not path.exists():
            raise ConfigError(f"model file not found: {path} (run train first?)")
        served[target] = mdl.load_model(path)

    srv = cfg["server"]
    try:
        server = ModelServer(served, host=srv["host"], port=int(srv["port"]))
    except OSError as exc:
        print(f"error: cannot bind {srv['host']}:{srv['port']}: {exc}", file=sys.stderr)
        return 1

    def _interrupt(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGINT, _interrupt)
    signal.signal(signal.SIGTERM, _interrupt)
    print(f"serving {', '.join(sorted(served))} models on {server.url} "
          f"(fingerprint {next(iter(served.values())).fingerprint[:12]}...)",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        # waits for in-flight handler threads before returning
        server._httpd.server_close()
    print("shut down cleanly")
    return 0


# ---------------------------------------------------------------------------
# entry point


def _add_shared_flags(parser: argparse.ArgumentParser, top_level: bool) -> None:
    # Subparser copies use SUPPRESS so they never clobber values already
    # parsed from before the subcommand (the 3.10 subparser default-merge).
    default = None if top_level else argparse.SUPPRESS
    parser.add_argument("--config", metavar="PATH", default=default,
                        help="JSON config file")
    parser.add_argument("--seed", type=int, default=default,
                        help="master seed (required here or in config)")
    parser.add_argument("--out", metavar="DIR", default=default,
                        help="output directory")
    parser.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                        default=default,
                        help="override any config field; value parsed as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvfsched",
        description="Data-driven GPU frequency scaling pipeline")
    _add_shared_flags(parser, top_level=True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
            ("synth", "generate a synthetic trace dataset + ground truth"),
            ("train", "fit energy/time models and build the knowledge base"),
            ("evaluate", "score saved models on a dataset"),
            ("simulate", "run the policy comparison simulation"),
            ("serve", "serve the fitted models over HTTP")):
        _add_shared_flags(sub.add_parser(name, help=text), top_level=False)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "simulate": cmd_simulate,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValidationError, TraceParseError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
