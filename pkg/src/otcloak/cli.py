"""Command-line entry point: ``otcloak <command> [options]``.

Every command writes its artifacts under ``--out`` (default ``otcloak-out``)
and exits 0 on success. Failures print one JSON object to stderr and exit 1;
usage errors exit 2. Set ``OTCLOAK_LOG`` (e.g. ``INFO``) for progress logs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import cost_model
from .detector import MessagePassingDetector
from .errors import InvalidParams, OtCloakError
from .experiment import (ExperimentConfig, fit_detector, load_data, recount, run_editing_experiment,
                         run_injection_experiment)
from .geometry import boundary_candidates
from .io import save_dataset
from .training import train_geometry

DEFAULT_OUT = "otcloak-out"


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    # on subcommands the defaults are suppressed so the top-level value survives
    d = None if top else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=d, help="master seed (overrides the config file)")
    p.add_argument("--config", default=d, help="JSON experiment config; CLI flags win over it")
    p.add_argument("--out", default=d, help=f"output directory (default {DEFAULT_OUT})")


def _data_args(p):
    p.add_argument("--preset", help="synthetic preset when no dataset files are given")
    p.add_argument("--nodes", help="node file (JSON Lines)")
    p.add_argument("--edges", help="edge file (CSV src,dst,relation)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="otcloak", description="OT-guided bot cloaking experiments")
    _common(ap, top=True)
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p, top=False)
    p.add_argument("--preset", help="cresci-like, twibot-like or botsim-like")

    p = sub.add_parser("train-detector", help="train the message-passing detector")
    _common(p, top=False)
    _data_args(p)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("train-geometry", help="fit the OT ground cost")
    _common(p, top=False)
    _data_args(p)
    p.add_argument("--detector", help="trained detector file (trained in-run when absent)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("candidates", help="list boundary cloak candidates")
    _common(p, top=False)
    _data_args(p)
    p.add_argument("--detector", help="trained detector file (trained in-run when absent)")
    p.add_argument("--geometry", required=True, help="trained geometry file")

    for name, what in (("attack-edit", "edit sampled bots"), ("attack-inject", "inject new bots")):
        p = sub.add_parser(name, help=f"{what} and compare with the random baseline")
        _common(p, top=False)
        _data_args(p)
        p.add_argument("--detector")
        p.add_argument("--geometry")
        p.add_argument("--n-targets", type=int)
        p.add_argument("--budget", type=int, help="edge-add budget per trial")
        p.add_argument("--trials", type=int)
        p.add_argument("--epochs", type=int, help="geometry training epochs")
        p.add_argument("--parallel-targets", type=int)

    p = sub.add_parser("eval", help="aggregate one or more report.json files")
    _common(p, top=False)
    p.add_argument("reports", nargs="+")
    return ap


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        with open(args.config) as fh:
            cfg = ExperimentConfig.from_json(json.load(fh))
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "preset", None):
        changes["preset"] = args.preset
    if getattr(args, "nodes", None) or getattr(args, "edges", None):
        changes["nodes_path"], changes["edges_path"] = args.nodes, args.edges
    for flag, key in (("detector", "detector_path"), ("geometry", "geometry_path"), ("n_targets", "n_targets"),
                      ("parallel_targets", "parallel_targets")):
        if getattr(args, flag, None) is not None:
            changes[key] = getattr(args, flag)
    out = args.out if args.out is not None else (cfg.out_dir or DEFAULT_OUT)
    changes["out_dir"] = out
    cfg = replace(cfg, **changes)
    if getattr(args, "budget", None) is not None:
        cfg = replace(cfg, attack=replace(cfg.attack, budget_delta=args.budget))
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, attack=replace(cfg.attack, trials=args.trials))
    if getattr(args, "epochs", None) is not None:
        if args.command == "train-detector":
            cfg = replace(cfg, detector=replace(cfg.detector, epochs=args.epochs))
        else:
            cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    return cfg.effective()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _detector(cfg, g, labels):
    if cfg.detector_path:
        return MessagePassingDetector.load(cfg.detector_path)
    return fit_detector(g, labels, cfg.detector)


def cmd_gen(cfg, out: Path) -> dict:
    if cfg.nodes_path is not None:
        raise InvalidParams("gen takes a preset, not dataset files")
    g, labels = load_data(cfg)
    save_dataset(g, out / "nodes.jsonl", out / "edges.csv", labels)
    params = cfg.gen_params().to_json()
    _write_json(out / "gen.json", params)
    return {"nodes": str(out / "nodes.jsonl"), "edges": str(out / "edges.csv"), "n_nodes": len(g),
            "n_edges": g.n_edges}


def cmd_train_detector(cfg, out: Path) -> dict:
    g, labels = load_data(cfg)
    det = fit_detector(g, labels, cfg.detector)
    out.mkdir(parents=True, exist_ok=True)
    det.save(out / "detector.bin")
    meta = {k: det.meta[k] for k in ("train_accuracy", "test_accuracy", "epochs", "split_fraction")}
    _write_json(out / "detector.json", meta)
    return {"detector": str(out / "detector.bin"), **meta}


def cmd_train_geometry(cfg, out: Path) -> dict:
    g, labels = load_data(cfg)
    det = _detector(cfg, g, labels)
    out.mkdir(parents=True, exist_ok=True)
    res = train_geometry(g, labels, det.predict_all(g), cfg.train, log_path=out / "train_log.jsonl")
    cost_model.save(res.geometry, out / "geometry.bin")
    final = res.history[-1]["loss_total"] if res.history else None
    return {"geometry": str(out / "geometry.bin"), "epochs": len(res.history), "final_loss": final}


def cmd_candidates(cfg, out: Path) -> dict:
    g, labels = load_data(cfg)
    det = _detector(cfg, g, labels)
    geo = cost_model.load(cfg.geometry_path)
    a = cfg.attack
    cands = boundary_candidates(geo, g, labels, det.predict_all(g), a.tau_bdry, a.effective_degree_cap,
                                a.sinkhorn, top=a.top_boundary)
    rows = [c.to_json() for c in cands]
    _write_json(out / "candidates.json", rows)
    return {"candidates": len(rows), "path": str(out / "candidates.json")}


def _attack(cfg, run) -> dict:
    rep = run(cfg)
    s = rep.summary
    return {"report": str(Path(cfg.out_dir) / "report.json"), "n_targets": s["n_targets"],
            "misclassification_rate": s["misclassification_rate"], "random_rate": s["random_rate"]}


def cmd_eval(paths, out: Path) -> dict:
    rows = []
    for p in paths:
        with open(p) as fh:
            rep = json.load(fh)
        s = rep["summary"]
        row = {"report": str(p), "mode": rep["mode"], "seed": rep["config"]["seed"],
               "n_targets": s["n_targets"], "misclassification_rate": s["misclassification_rate"],
               "random_rate": s["random_rate"]}
        traces = Path(p).with_name("traces.jsonl")
        if traces.exists():
            won = recount(traces)
            row["recount_rate"] = sum(won.values()) / len(won) if won else 0.0
            row["recount_matches"] = abs(row["recount_rate"] - row["misclassification_rate"]) < 1e-12
        rows.append(row)

    def stats(key):
        xs = [r[key] for r in rows]
        m = sum(xs) / len(xs)
        sd = (sum((x - m) ** 2 for x in xs) / (len(xs) - 1)) ** 0.5 if len(xs) > 1 else 0.0
        return {"mean": m, "std": sd}

    result = {"reports": rows, "misclassification_rate": stats("misclassification_rate"),
              "random_rate": stats("random_rate")}
    _write_json(out / "eval.json", result)
    return result


def _setup_logging():
    level = os.environ.get("OTCLOAK_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        if args.command == "eval":
            result = cmd_eval(args.reports, Path(args.out or DEFAULT_OUT))
        else:
            cfg = _config(args)
            out = Path(cfg.out_dir)
            if args.command == "gen":
                result = cmd_gen(cfg, out)
            elif args.command == "train-detector":
                result = cmd_train_detector(cfg, out)
            elif args.command == "train-geometry":
                result = cmd_train_geometry(cfg, out)
            elif args.command == "candidates":
                result = cmd_candidates(cfg, out)
            elif args.command == "attack-edit":
                result = _attack(cfg, run_editing_experiment)
            else:
                result = _attack(cfg, run_injection_experiment)
    except (OtCloakError, OSError, ValueError, KeyError, TypeError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if getattr(exc, "line", None) is not None:
            err["line"] = exc.line
        print(json.dumps(err, sort_keys=True), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
