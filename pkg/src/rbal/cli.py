"""Command-line harness: datasets, repeated campaigns and reports.

    rbal dataset gen    [--config CFG] [--seed N] --out data.csv
    rbal dataset import data.csv [--derive-damage-split] [--out relabelled.csv]
    rbal simulate --config CFG [--reps N] [--seed N] [--out DIR] [--only-rep R]
    rbal report --out DIR

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .campaign import CLASSIFIERS, AgentConfig, CampaignError, run_campaign, run_random_baseline
from .datasets import (ConfigurationError, DatasetImportError, SplitError, SyntheticConfig,
                       derive_damage_split, generate_synthetic, import_labelled_csv, split_and_init,
                       standardize, write_labelled_csv)
from .decision import resolve_process
from .gmm import NiwPrior
from .metrics import aggregate_runs
from .mrvm import TrainHyper

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

_pos_int = {"type": "integer", "minimum": 1}
_open_unit = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_vec = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dataset", "process", "agents"],
    "properties": {
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "cycles": _pos_int,
                        "points_per_cycle_per_class": {"type": "array", "items": _pos_int, "minItems": 2},
                        "first_cycle_points": {"type": ["array", "null"], "items": _pos_int},
                        "class_means": {"type": "array", "items": _vec, "minItems": 2},
                        "class_covariances": {"type": "array", "items": {"type": "array", "items": _vec}},
                        "seed": {"type": "integer"},
                    },
                },
                "csv": {"type": "string"},
                "expected_dims": _pos_int,
                "n_classes": _pos_int,
                "derive_damage_split": {"type": "boolean"},
                "damage_start": {"type": "integer", "minimum": 0},
            },
            "oneOf": [{"required": ["synthetic"]}, {"required": ["csv"]}],
        },
        "process": {"type": "string", "minLength": 1},
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["classifier"],
                "properties": {
                    "classifier": {"enum": list(CLASSIFIERS)},
                    "name": {"type": "string", "minLength": 1},
                    "decision_mode": {"enum": ["agent", "scripted"]},
                    "baseline": {"type": "boolean"},
                    "alpha": {"type": "number", "exclusiveMinimum": 0},
                    "prior": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["m0", "kappa0", "v0", "S0"],
                        "properties": {
                            "m0": _vec,
                            "kappa0": {"type": "number", "exclusiveMinimum": 0},
                            "v0": {"type": "number"},
                            "S0": {"type": "array", "items": _vec},
                        },
                    },
                    "em_tol": {"type": "number", "exclusiveMinimum": 0},
                    "em_max_iter": _pos_int,
                    "gamma": {"type": "number", "exclusiveMinimum": 0},
                    "mrvm": {
                        "type": "object",
                        "additionalProperties": False,
                        "properties": {
                            "tau": {"type": "number", "exclusiveMinimum": 0},
                            "nu": {"type": "number", "exclusiveMinimum": 0},
                            "max_iter": _pos_int,
                            "conv_tol": {"type": "number", "exclusiveMinimum": 0},
                            "stable_iters": _pos_int,
                            "quad_nodes": _pos_int,
                            "prune_threshold": {"type": "number", "exclusiveMinimum": 0},
                            "scale_moment": {"enum": ["second", "point", "mackay"]},
                        },
                    },
                },
            },
        },
        "repetitions": _pos_int,
        "base_seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "test_fraction": _open_unit,
        "init_label_fraction": _open_unit,
        "standardize": {"type": "boolean"},
        "workers": _pos_int,
    },
}

DEFAULTS = {
    "repetitions": 100,
    "base_seed": 0,
    "output_dir": "results",
    "test_fraction": 0.5,
    "init_label_fraction": 0.002,
    "standardize": False,
    "workers": 1,
}
AGENT_DEFAULTS = {"decision_mode": "agent", "baseline": True}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: dict
    process: str
    agents: list
    repetitions: int = 100
    base_seed: int = 0
    output_dir: str = "results"
    test_fraction: float = 0.5
    init_label_fraction: float = 0.002
    standardize: bool = False
    workers: int = 1
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


def _pointer(err: jsonschema.ValidationError) -> str:
    return "/" + "/".join(str(p) for p in err.absolute_path)


def parse_config_dict(doc: dict, base_dir=".") -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_pointer(e)}: {e.message}")
    full = {**DEFAULTS, **doc}
    full["agents"] = [{**AGENT_DEFAULTS, "name": a["classifier"], **a} for a in doc["agents"]]
    names = [a["name"] for a in full["agents"]]
    if len(set(names)) != len(names):
        raise ConfigError("/agents: agent names must be unique")
    cfg = ExperimentConfig(**full, base_dir=Path(base_dir))
    for i, a in enumerate(cfg.agents):
        try:
            _agent_from_dict(a, cfg, probe=True)
        except (ValueError, KeyError, OSError) as exc:
            raise ConfigError(f"/agents/{i}: {exc}") from None
    return cfg


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("/: config must be a JSON object")
    return parse_config_dict(doc, path.parent)


def _agent_from_dict(a: dict, cfg: ExperimentConfig, probe: bool = False) -> AgentConfig:
    proc = resolve_process(str(cfg.resolve(cfg.process)) if cfg.process not in ("synthetic", "z24") else cfg.process)
    prior = None
    if "prior" in a:
        p = a["prior"]
        prior = NiwPrior(np.asarray(p["m0"]), p["kappa0"], p["v0"], np.asarray(p["S0"]))
    return AgentConfig(
        classifier=a["classifier"],
        process=proc,
        decision_mode=a["decision_mode"],
        name=a["name"],
        prior=prior,
        alpha=a.get("alpha", 1.0),
        em_tol=a.get("em_tol", 1e-6),
        em_max_iter=a.get("em_max_iter", 100),
        mrvm=TrainHyper(**a.get("mrvm", {})),
        gamma=a.get("gamma"),
    )


def load_dataset(cfg: ExperimentConfig, derive_split: Optional[bool] = None):
    ds = cfg.dataset
    if "synthetic" in ds:
        sc = dict(ds["synthetic"])
        for key in ("points_per_cycle_per_class", "first_cycle_points", "class_means"):
            if sc.get(key) is not None:
                sc[key] = tuple(tuple(v) if isinstance(v, list) else v for v in sc[key])
        if "class_covariances" in sc:
            sc["class_covariances"] = tuple(tuple(map(tuple, c)) for c in sc["class_covariances"])
        return generate_synthetic(SyntheticConfig(**sc))
    data = import_labelled_csv(cfg.resolve(ds["csv"]), ds.get("expected_dims"), ds.get("n_classes"))
    derive = ds.get("derive_damage_split", False) if derive_split is None else derive_split
    if derive:
        data = derive_damage_split(data, ds.get("damage_start", 3475))
    return data


# -- experiment ---------------------------------------------------------------

PER_QUERY_HEAD = ["repetition", "seed", "agent", "query_index", "observation_index", "evpi",
                  "decision_accuracy", "macro_f1"]
SUMMARY_HEAD = ["agent", "repetition", "seed", "query_count", "final_accuracy", "final_f1", "status"]


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if np.isnan(x) else repr(float(x))
    return str(x)


def _query_rows(rep: int, seed: int, res, K: int) -> list:
    rows = []
    pos = res.query_positions
    for q in range(res.query_count + 1):
        obs = int(pos[q - 1]) if q else -1
        ev = float(res.evpi[obs]) if q else float("nan")
        rows.append([rep, seed, res.agent, q, obs, ev, res.accuracy_trajectory[q], res.f1_trajectory[q],
                     *res.class_prop_trajectory[q]])
    return rows


def run_repetition(cfg: ExperimentConfig, rep: int, data=None):
    """One repetition: split with seed base_seed + rep, then every agent (and its baseline)."""
    seed = cfg.base_seed + rep
    data = load_dataset(cfg) if data is None else data
    labelled, pool, test = split_and_init(data, cfg.test_fraction, cfg.init_label_fraction, seed)
    if cfg.standardize:
        labelled, pool, test = standardize(labelled, pool, test)
    out = []  # (agent_name, result or exception)
    for i, a in enumerate(cfg.agents):
        agent = _agent_from_dict(a, cfg)
        try:
            res = run_campaign(labelled, pool, test, agent, seed)
        except CampaignError as exc:
            out.append((agent.label, exc))
            if a["baseline"]:
                out.append((f"{agent.label}_random", exc))
            continue
        out.append((agent.label, res))
        if a["baseline"]:
            try:
                base = run_random_baseline(labelled, pool, test, agent, res.query_count, [seed, i])
                out.append((base.agent, base))
            except CampaignError as exc:
                out.append((f"{agent.label}_random", exc))
    return rep, seed, out


def _rep_worker(args):
    cfg_dict, base_dir, rep = args
    cfg = ExperimentConfig(**cfg_dict, base_dir=Path(base_dir))
    return run_repetition(cfg, rep)


def run_experiment(cfg: ExperimentConfig, only_rep: Optional[int] = None, log=None) -> int:
    log = log or sys.stderr
    out_dir = cfg.resolve(cfg.output_dir) if not Path(cfg.output_dir).is_absolute() else Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_dataset(cfg)
    K = data.K
    reps = [only_rep] if only_rep is not None else list(range(cfg.repetitions))
    if cfg.workers > 1 and len(reps) > 1:
        jobs = [(cfg.to_dict(), str(cfg.base_dir), r) for r in reps]
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            outcomes = list(ex.map(_rep_worker, jobs))
    else:
        outcomes = []
        for r in reps:
            outcomes.append(run_repetition(cfg, r, data))
            print(f"repetition {r} done", file=log)
    outcomes.sort(key=lambda o: o[0])

    pq_rows, sum_rows = [], []
    by_agent: dict = {}
    failures: dict = {}
    for rep, seed, results in outcomes:
        for name, res in results:
            by_agent.setdefault(name, [])
            if isinstance(res, Exception):
                failures[name] = failures.get(name, 0) + 1
                sum_rows.append([name, rep, seed, "", "", "", f"error: {res}"])
                continue
            by_agent[name].append(res)
            pq_rows.extend(_query_rows(rep, seed, res, K))
            sum_rows.append([name, rep, seed, res.query_count, res.accuracy_trajectory[-1],
                             res.f1_trajectory[-1], "ok"])

    head = PER_QUERY_HEAD + [f"class_prop_{k + 1}" for k in range(K)]
    _write_csv(out_dir / "per_query.csv", head, pq_rows)
    _write_csv(out_dir / "summary.csv", SUMMARY_HEAD, sum_rows)
    agg = {
        "config": cfg.to_dict(),
        "repetitions": reps,
        "agents": {name: aggregate_runs(rs).to_dict() if rs else None for name, rs in by_agent.items()},
        "failures": failures,
    }
    (out_dir / "aggregate.json").write_text(json.dumps(agg, indent=1), encoding="utf-8")
    all_failed = [n for n, rs in by_agent.items() if not rs]
    if all_failed:
        print(f"every repetition failed for: {', '.join(all_failed)}", file=log)
        return EXIT_RUNTIME
    return EXIT_OK


def _write_csv(path: Path, head, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def report(out_dir, stream=None) -> int:
    stream = stream or sys.stdout
    path = Path(out_dir) / "summary.csv"
    if not path.exists():
        print(f"no summary.csv in {out_dir}", file=sys.stderr)
        return EXIT_CONFIG
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok"]
    agents = sorted({r["agent"] for r in rows})
    print(f"{'agent':<24}{'runs':>6}{'median queries':>16}{'median acc':>12}{'median f1':>11}", file=stream)
    for a in agents:
        rs = [r for r in rows if r["agent"] == a]
        q = np.median([float(r["query_count"]) for r in rs])
        acc = np.median([float(r["final_accuracy"]) for r in rs])
        f1 = np.median([float(r["final_f1"]) for r in rs])
        print(f"{a:<24}{len(rs):>6}{q:>16.1f}{acc:>12.3f}{f1:>11.3f}", file=stream)
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rbal",
        description="Risk-based active learning experiments.",
        epilog=("Config defaults: repetitions=100, base_seed=0, test_fraction=0.5, "
                "init_label_fraction=0.002, standardize=false, workers=1, output_dir=results; "
                "per agent: decision_mode=agent, baseline=true, name=<classifier>."),
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    ds = sub.add_parser("dataset", help="generate or import datasets")
    dsub = ds.add_subparsers(dest="action", required=True)
    gen = dsub.add_parser("gen", help="write the synthetic dataset to CSV")
    gen.add_argument("--config", help="experiment config whose dataset.synthetic section is used")
    gen.add_argument("--seed", type=int, help="override the generator seed")
    gen.add_argument("--out", required=True, help="output CSV path")
    imp = dsub.add_parser("import", help="validate a labelled CSV")
    imp.add_argument("csv")
    imp.add_argument("--dims", type=int, help="expected number of feature columns")
    imp.add_argument("--classes", type=int, help="number of classes K")
    imp.add_argument("--derive-damage-split", action="store_true",
                     help="relabel rows from 3476 onwards as classes 3/4 in two halves")
    imp.add_argument("--out", help="write the (relabelled) dataset here")

    sim = sub.add_parser("simulate", help="run repeated campaigns")
    sim.add_argument("--config", required=True)
    sim.add_argument("--reps", type=int, help="override repetitions")
    sim.add_argument("--seed", type=int, help="override base_seed")
    sim.add_argument("--out", help="override output_dir")
    sim.add_argument("--only-rep", type=int, help="run a single repetition index (standalone rerun)")
    sim.add_argument("--workers", type=int, help="override worker count")
    sim.add_argument("--derive-damage-split", action="store_true",
                     help="relabel a CSV dataset's damaged rows into two halves")

    rep = sub.add_parser("report", help="summarise a results directory")
    rep.add_argument("--out", required=True, help="results directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dataset":
            return _dataset_cmd(args)
        if args.command == "simulate":
            cfg = parse_config(args.config)
            overrides = {"repetitions": args.reps, "base_seed": args.seed, "output_dir": args.out,
                         "workers": args.workers}
            doc = cfg.to_dict()
            doc.update({k: v for k, v in overrides.items() if v is not None})
            if args.derive_damage_split:
                if "csv" not in doc["dataset"]:
                    raise ConfigError("/dataset: --derive-damage-split needs a CSV dataset")
                doc["dataset"]["derive_damage_split"] = True
            cfg = parse_config_dict(doc, cfg.base_dir)
            if args.out is not None:
                cfg.output_dir = str(Path(args.out).resolve())
            if args.only_rep is not None and not 0 <= args.only_rep < cfg.repetitions:
                raise ConfigError(f"--only-rep must lie in 0..{cfg.repetitions - 1}")
            return run_experiment(cfg, args.only_rep)
        return report(args.out)
    except (ConfigError, ConfigurationError, DatasetImportError, SplitError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _dataset_cmd(args) -> int:
    if args.action == "gen":
        sc = SyntheticConfig()
        if args.config:
            cfg = parse_config(args.config)
            if "synthetic" not in cfg.dataset:
                raise ConfigError("/dataset: config has no synthetic section")
            data = load_dataset(cfg) if args.seed is None else None
            if data is None:
                doc = cfg.to_dict()
                doc["dataset"]["synthetic"]["seed"] = args.seed
                data = load_dataset(parse_config_dict(doc, cfg.base_dir))
        else:
            if args.seed is not None:
                sc = SyntheticConfig(seed=args.seed)
            data = generate_synthetic(sc)
        write_labelled_csv(data, args.out)
        print(f"wrote {len(data)} observations (D={data.D}, K={data.K}) to {args.out}")
        return EXIT_OK
    data = import_labelled_csv(args.csv, args.dims, args.classes)
    if args.derive_damage_split:
        data = derive_damage_split(data)
    counts = np.bincount(data.labels, minlength=data.K + 1)[1:]
    print(f"{len(data)} observations, D={data.D}, K={data.K}, class counts {counts.tolist()}")
    if args.out:
        write_labelled_csv(data, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
