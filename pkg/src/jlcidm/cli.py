"""Command-line driver: simulate, fit, select, replicate and postfit.

Every command reads an optional YAML/JSON config, applies flag overrides,
rejects unknown keys and writes the resolved config next to its outputs.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import postfit as pf
from .data import (DataError, ModelSpec, ParameterLayout, SubjectRecord, load_dataset,
                   spec_from_dict, spec_to_dict, table1_spec, table1_truth, write_dataset)
from .optimizer import FitResult, OptimizerConfig, fit
from .simulator import SimulationDesign, generate_dataset, impute_competing, replicate_seeds

log = logging.getLogger("jlcidm")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4
WORKERS_ENV = "JLCIDM_WORKERS"
MODEL_KINDS = ("markovian", "semi-markovian", "competing")


class ConfigError(ValueError):
    pass


DEFAULTS: Dict[str, object] = {
    "out": "out",
    "seed": 0,
    "workers": None,
    "design": {
        "preset": "table1",
        "n_subjects": 500,
        "visit_interval": 2.0,
        "admin_years": 20.0,
        "entry_age": [65.0, 85.0],
        "x_prob": 0.5,
        "markovian": True,
    },
    "model": {"kind": "markovian", "n_classes": 2, "spec": None},
    "data": {"events": None, "observations": None},
    "init": None,
    "optimizer": {
        "eps_loglik": 1e-3, "eps_param": 1e-3, "eps_rdm": 1e-2, "max_iter": 100,
        "n_starts": 10, "fd_step": 1e-4, "grad_step": 1e-5, "jitter": 0.1,
    },
    "select": {"classes": [1, 2, 3], "kinds": None},
    "replicate": {"n_replicates": 50, "n_starts": 1, "kinds": None},
    "postfit": {
        "fit": None,
        "ages": {"start": 65.0, "stop": 100.0, "step": 1.0},
        "bin_width": 5.0,
        "covariates": {},
        "conditions": [["healthy_alive", 95.0], ["healthy_alive", 85.0],
                       ["died_dementia_free", 80.0], ["dementia_onset", 80.0]],
    },
}
# values that are free-form mappings rather than config sections
OPEN_KEYS = {("model", "spec"), ("postfit", "covariates")}

FLAGS = (
    ("--out", "out", str, "output directory"),
    ("--seed", "seed", int, "master seed"),
    ("--workers", "workers", int, f"worker processes (default ${WORKERS_ENV} or 1)"),
    ("--design", "design.preset", str, "simulation design preset"),
    ("--n", "design.n_subjects", int, "subjects per dataset"),
    ("--interval", "design.visit_interval", float, "years between visits"),
    ("--classes", "model.n_classes", int, "number of latent classes"),
    ("--model", "model.kind", str, "markovian | semi-markovian | competing"),
    ("--events", "data.events", str, "events CSV"),
    ("--observations", "data.observations", str, "observations CSV"),
    ("--init", "init", str, "starting values: fit.json path or 'truth'"),
    ("--n-starts", "optimizer.n_starts", int, "number of optimizer starts"),
    ("--max-iter", "optimizer.max_iter", int, "Marquardt iteration cap"),
    ("--replicates", "replicate.n_replicates", int, "number of replicates"),
    ("--select-classes", "select.classes", "intlist", "class counts, e.g. 1,2,3"),
    ("--select-models", "select.kinds", "strlist", "model kinds to compare"),
    ("--fit", "postfit.fit", str, "fit.json to post-process"),
)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _merge(base: dict, update: dict, path=()) -> dict:
    for key, val in update.items():
        where = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(where)!r}")
        if isinstance(base[key], dict) and where not in OPEN_KEYS:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {'.'.join(where)!r} must be a mapping")
            _merge(base[key], val, where)
        else:
            base[key] = val
    return base


def _set_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        _merge(cfg, read_config_file(args.config))
    for flag, dest, _, _ in FLAGS:
        val = getattr(args, _dest_attr(flag))
        if val is not None:
            _set_path(cfg, dest, val)
    for item in args.set or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        _set_path(cfg, key.strip(), yaml.safe_load(raw))
    if cfg["workers"] is None:
        try:
            cfg["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
        except ValueError:
            raise ConfigError(f"${WORKERS_ENV} must be an integer") from None
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["model"]["kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {MODEL_KINDS}")
    for kinds in (cfg["select"]["kinds"], cfg["replicate"]["kinds"]):
        if kinds is not None and any(k not in MODEL_KINDS for k in kinds):
            raise ConfigError(f"model kinds must be among {MODEL_KINDS}")
    if cfg["design"]["preset"] != "table1":
        raise ConfigError("design.preset: only 'table1' is available")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers must be >= 1")
    if int(cfg["model"]["n_classes"]) < 1:
        raise ConfigError("model.n_classes must be >= 1")


def _dest_attr(flag: str) -> str:
    return flag.lstrip("-").replace("-", "_")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def build_spec(cfg: dict, kind: Optional[str] = None, n_classes: Optional[int] = None
               ) -> ModelSpec:
    kind = kind or cfg["model"]["kind"]
    G = int(n_classes or cfg["model"]["n_classes"])
    flags = dict(n_classes=G, markovian=kind != "semi-markovian", competing=kind == "competing")
    custom = cfg["model"]["spec"]
    try:
        if custom:
            d = dict(custom)
            d.update(flags)
            return spec_from_dict(d)
        return table1_spec(**flags)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model specification: {exc}") from None


def build_design(cfg: dict, seed: Optional[int] = None) -> SimulationDesign:
    d = cfg["design"]
    try:
        return SimulationDesign(
            n_subjects=int(d["n_subjects"]), visit_interval=float(d["visit_interval"]),
            admin_years=float(d["admin_years"]),
            entry_age=(float(d["entry_age"][0]), float(d["entry_age"][1])),
            x_prob=float(d["x_prob"]), spec=table1_spec(markovian=bool(d["markovian"])),
            seed=int(cfg["seed"] if seed is None else seed))
    except (TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"design: {exc}") from None


def build_optimizer(cfg: dict, **override) -> OptimizerConfig:
    o = dict(cfg["optimizer"])
    o.update(override)
    try:
        return OptimizerConfig(
            eps_loglik=float(o["eps_loglik"]), eps_param=float(o["eps_param"]),
            eps_rdm=float(o["eps_rdm"]), max_iter=int(o["max_iter"]),
            n_starts=int(o["n_starts"]), fd_step=float(o["fd_step"]),
            grad_step=float(o["grad_step"]),
            jitter=float(o["jitter"]), seed=int(o.get("seed", cfg["seed"])),
            workers=int(o.get("workers", cfg["workers"])))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"optimizer: {exc}") from None


def load_records(cfg: dict, spec: ModelSpec) -> List[SubjectRecord]:
    ev, obs = cfg["data"]["events"], cfg["data"]["observations"]
    if not ev or not obs:
        raise ConfigError("data.events and data.observations are required")
    base = spec_from_dict({**spec_to_dict(spec), "competing": False})
    try:
        records = load_dataset(ev, obs, base)
    except OSError as exc:
        raise DataError(str(exc)) from None
    return impute_competing(records) if spec.competing else records


def read_fit(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read fit file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"fit file {path} is not valid JSON: {exc}") from None
    if "model" not in data or "parameters" not in data:
        raise DataError(f"fit file {path} lacks model/parameters")
    return data


def theta_from_fit(data: dict, spec: ModelSpec):
    layout = ParameterLayout(spec)
    labels = [p["name"] for p in data["parameters"]]
    if labels != layout.labels:
        raise ConfigError("fit file parameters do not match the requested model")
    return layout.decode([p["value"] for p in data["parameters"]])


def initial_values(cfg: dict, spec: ModelSpec):
    init = cfg["init"]
    if init is None:
        return None
    if init == "truth":
        try:
            return table1_truth(spec)
        except ValueError as exc:
            raise ConfigError(f"init 'truth': {exc}") from None
    return theta_from_fit(read_fit(init), spec)


def fit_record(result: FitResult) -> dict:
    out = result.to_dict()
    out["model"] = spec_to_dict(result.spec)
    return out


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    out = _outdir(cfg)
    design = build_design(cfg)
    records, summary = generate_dataset(design)
    write_dataset(records, out / "events.csv", out / "observations.csv", design.spec)
    write_json(out / "summary.json", summary.to_dict())
    log.info("simulated %d subjects: %.1f%% demented, %.1f%% died undiagnosed",
             summary.n, 100 * summary.observed_demented, 100 * summary.died_undiagnosed)
    return EXIT_OK


def cmd_fit(cfg: dict) -> int:
    out = _outdir(cfg)
    spec = build_spec(cfg)
    records = load_records(cfg, spec)
    result = fit(records, spec, initial_values(cfg, spec), build_optimizer(cfg))
    write_json(out / "fit.json", fit_record(result))
    log.info("loglik %.4f  BIC %.2f  converged=%s", result.loglik, result.bic, result.converged)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_select(cfg: dict) -> int:
    out = _outdir(cfg)
    kinds = cfg["select"]["kinds"] or [cfg["model"]["kind"]]
    classes = [int(g) for g in cfg["select"]["classes"]]
    if cfg["data"]["events"]:
        base = load_records(cfg, build_spec(cfg, "markovian", 1))
    else:
        base, _ = generate_dataset(build_design(cfg))
    opt = build_optimizer(cfg)
    rows = []
    for kind in kinds:
        for G in classes:
            spec = build_spec(cfg, kind, G)
            recs = impute_competing(base) if spec.competing else base
            res = fit(recs, spec, None, opt)
            write_json(out / f"fit_{kind}_G{G}.json", fit_record(res))
            rows.append({"model": kind, "n_classes": G, "loglik": res.loglik, "bic": res.bic,
                         "n_params": res.n_params, "converged": res.converged})
            log.info("%s G=%d loglik %.3f BIC %.3f", kind, G, res.loglik, res.bic)
    best = {}
    for kind in kinds:
        cand = [r for r in rows if r["model"] == kind]
        best[kind] = min(cand, key=lambda r: r["bic"])["n_classes"]
    write_json(out / "select.json", {"fits": rows, "best_n_classes": best})
    with open(out / "select.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "n_classes", "n_params", "loglik", "bic", "converged"])
        for r in rows:
            w.writerow([r["model"], r["n_classes"], r["n_params"], repr(r["loglik"]),
                        repr(r["bic"]), int(r["converged"])])
    chosen = [r for r in rows if r["n_classes"] == best[r["model"]]]
    return EXIT_OK if all(r["converged"] for r in chosen) else EXIT_NOT_CONVERGED


def _replicate_task(args):
    index, seed_seq, design, opt, kinds = args
    rng = np.random.default_rng(seed_seq)
    records, summary = generate_dataset(design, rng)
    row = {"index": index, "summary": summary.to_dict(), "fits": {}}
    for kind in kinds:
        spec = table1_spec(markovian=kind != "semi-markovian", competing=kind == "competing")
        recs = impute_competing(records) if spec.competing else records
        try:
            res = fit(recs, spec, table1_truth(spec), opt)
        except Exception as exc:  # logged and excluded from summaries
            row["fits"][kind] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        row["fits"][kind] = {
            "converged": bool(res.converged), "loglik": res.loglik, "n_iter": res.n_iter,
            "labels": res.labels, "estimates": [float(v) for v in res.estimates],
            "se": [float(v) for v in res.se],
        }
    return row


def summarize_replicates(rows: Sequence[dict], kind: str) -> List[dict]:
    """Mean estimate, mean ASE, empirical SE and 95% coverage per parameter."""
    spec = table1_spec(markovian=kind != "semi-markovian", competing=kind == "competing")
    layout = ParameterLayout(spec)
    truth = layout.report(layout.encode(table1_truth(spec)))
    fits = [r["fits"].get(kind, {}) for r in rows]
    ok = [f for f in fits if f.get("converged")]
    est = np.array([f["estimates"] for f in ok]).reshape(len(ok), layout.p)
    se = np.array([f["se"] for f in ok]).reshape(len(ok), layout.p)
    out = []
    for j, label in enumerate(layout.labels):
        e, s = est[:, j], se[:, j]
        n = len(e)
        cover = np.abs(e - truth[j]) <= 1.96 * s
        out.append({
            "model": kind, "parameter": label, "truth": float(truth[j]),
            "mean": float(e.mean()) if n else math.nan,
            "ase": float(np.nanmean(s)) if n else math.nan,
            "ese": float(e.std(ddof=1)) if n > 1 else None,
            "coverage": float(cover.mean()) if n else math.nan,
            "n_converged": n,
        })
    return out


def run_replicates(design: SimulationDesign, opt: OptimizerConfig, kinds: Sequence[str],
                   n_replicates: int, seed: int, workers: int = 1) -> List[dict]:
    seeds = replicate_seeds(seed, n_replicates)
    tasks = [(i, s, design, opt, tuple(kinds)) for i, s in enumerate(seeds)]
    if workers > 1 and n_replicates > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_replicate_task, tasks))
    else:
        rows = [_replicate_task(t) for t in tasks]
    return sorted(rows, key=lambda r: r["index"])


def _selection_task(args):
    index, seed_seq, design, opt, classes, kind = args
    records, _ = generate_dataset(design, np.random.default_rng(seed_seq))
    out = {"index": index, "fits": []}
    for G in classes:
        spec = table1_spec(n_classes=G, markovian=kind != "semi-markovian",
                           competing=kind == "competing")
        recs = impute_competing(records) if spec.competing else records
        res = fit(recs, spec, None, opt)
        out["fits"].append({"n_classes": G, "loglik": res.loglik, "bic": res.bic,
                            "converged": bool(res.converged)})
    out["best"] = min(out["fits"], key=lambda f: f["bic"])["n_classes"]
    return out


def run_selection(design: SimulationDesign, opt: OptimizerConfig, n_datasets: int, seed: int,
                  classes: Sequence[int] = (1, 2, 3), kind: str = "markovian",
                  workers: int = 1) -> List[dict]:
    """BIC choice of the number of classes on independently simulated datasets."""
    seeds = replicate_seeds(seed, n_datasets)
    tasks = [(i, s, design, opt, tuple(classes), kind) for i, s in enumerate(seeds)]
    if workers > 1 and n_datasets > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_selection_task, tasks))
    else:
        rows = [_selection_task(t) for t in tasks]
    return sorted(rows, key=lambda r: r["index"])


def cmd_replicate(cfg: dict) -> int:
    out = _outdir(cfg)
    rep = cfg["replicate"]
    design = build_design(cfg)
    kinds = rep["kinds"] or ["markovian" if design.spec.markovian else "semi-markovian",
                             "competing"]
    opt = build_optimizer(cfg, n_starts=int(rep["n_starts"]), workers=1)
    R = int(rep["n_replicates"])
    if R < 1:
        raise ConfigError("replicate.n_replicates must be >= 1")
    rows = run_replicates(design, opt, kinds, R, int(cfg["seed"]), int(cfg["workers"]))
    table = [line for kind in kinds for line in summarize_replicates(rows, kind)]
    counts = {k: {"converged": sum(1 for r in rows if r["fits"].get(k, {}).get("converged")),
                  "failed": sum(1 for r in rows if "error" in r["fits"].get(k, {}))}
              for k in kinds}
    props = {key: float(np.mean([r["summary"][key] for r in rows]))
             for key in ("observed_demented", "died_undiagnosed", "died_after_diagnosis")}
    write_json(out / "replicate.json", {"n_replicates": R, "counts": counts,
                                        "pattern_means": props, "table": table})
    write_json(out / "replicates_raw.json", rows)
    with open(out / "replicate.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "parameter", "truth", "mean", "ase", "ese", "coverage",
                    "n_converged"])
        for t in table:
            w.writerow([t["model"], t["parameter"], repr(t["truth"]), repr(t["mean"]),
                        repr(t["ase"]), "" if t["ese"] is None else repr(t["ese"]),
                        repr(t["coverage"]), t["n_converged"]])
    for k in kinds:
        log.info("%s: %d/%d replicates converged", k, counts[k]["converged"], R)
    return EXIT_OK


def cmd_postfit(cfg: dict) -> int:
    out = _outdir(cfg)
    p = cfg["postfit"]
    if not p["fit"]:
        raise ConfigError("postfit.fit (--fit) is required")
    data = read_fit(p["fit"])
    try:
        spec = spec_from_dict(data["model"])
    except (TypeError, ValueError) as exc:
        raise DataError(f"fit file model: {exc}") from None
    theta = theta_from_fit(data, spec)
    records = load_records(cfg, spec)

    post = pf.posterior_probs(records, theta, spec)
    pf.write_posterior(post, out / "posterior.csv")
    with open(out / "posterior_classes.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        G = spec.n_classes
        w.writerow(["assigned", "n"] + [f"mean_p{g + 1}" for g in range(G)])
        for g in range(G):
            w.writerow([g + 1, int(post.counts[g])] + [repr(float(v)) for v in post.class_means[g]])
    rows = pf.gof_weighted_means(records, theta, spec, float(p["bin_width"]), posterior=post)
    pf.write_gof(rows, out / "gof.csv")

    a = p["ages"]
    ages = np.arange(float(a["start"]), float(a["stop"]) + 1e-9, float(a["step"]))
    covs = {n: 0.0 for rec in records for n in rec.covariates}
    covs.update({k: float(v) for k, v in p["covariates"].items()})
    curves = {g: pf.cumulative_incidence(theta, spec, g, covs, ages) for g in range(spec.n_classes)}
    pf.write_incidence(curves, ages, out / "incidence.csv")
    traj = {}
    for kind, age in p["conditions"]:
        try:
            cond = pf.Condition(kind, float(age), covs)
        except ValueError as exc:
            raise ConfigError(f"postfit.conditions: {exc}") from None
        traj[cond.label] = pf.conditional_trajectory(theta, spec, cond, ages)[0]
    pf.write_trajectories(traj, ages, out / "trajectories.csv")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "replicate": cmd_replicate,
    "postfit": cmd_postfit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jlcidm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML or JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. optimizer.eps_rdm=0.01")
        for flag, _, typ, hlp in FLAGS:
            conv = {"intlist": _intlist, "strlist": _strlist}.get(typ, typ)
            sp.add_argument(flag, dest=_dest_attr(flag), type=conv, help=hlp)
    return parser


def _intlist(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _strlist(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = _outdir(cfg)
        write_json(out / "config.json", {"command": args.command, **cfg})
        return COMMANDS[args.command](cfg)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
