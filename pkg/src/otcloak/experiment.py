"""Editing and injection experiments over a sample of targets.

An experiment loads or generates a dataset, trains (or loads) the detector
and the OT geometry, samples correctly classified bots and attacks each of
them with BoCloak and with the constrained random baseline. The report is a
pure function of the effective configuration; wall-clock timings are kept
out of it and written to a separate file so reruns compare byte for byte.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cost_model
from .attack import BUDGET_EXCEEDED, SUCCESS, AttackConfig, BoCloak, random_attack
from .datagen import GenParams, class_mean_degrees, generate, preset
from .detector import MessagePassingDetector, accuracy, train_detector
from .errors import InvalidParams
from .graph import Label
from .io import load_dataset
from .training import TrainConfig, train_geometry

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    split_fraction: float = 0.7
    epochs: int = 200
    hidden: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 3e-2
    seed: int = 0


@dataclass
class ExperimentConfig:
    """Everything needed to rerun an experiment bit for bit.

    ``seed`` is the master seed: it overrides the seeds of the generator,
    detector, trainer and attack sub-configs (see :meth:`effective`).
    """

    preset: str | None = "cresci-like"
    gen_overrides: dict = field(default_factory=dict)
    nodes_path: str | None = None
    edges_path: str | None = None
    detector_path: str | None = None
    geometry_path: str | None = None
    detector: DetectorConfig = DetectorConfig()
    train: TrainConfig = TrainConfig()
    attack: AttackConfig = AttackConfig()
    n_targets: int = 50
    out_dir: str | None = None
    seed: int = 0
    parallel_targets: int = 1

    def __post_init__(self):
        if self.n_targets < 1:
            raise InvalidParams("n_targets must be >= 1")
        if self.parallel_targets < 1:
            raise InvalidParams("parallel_targets must be >= 1")
        if self.nodes_path is None and self.preset is None:
            raise InvalidParams("need a preset or a dataset path")
        if (self.nodes_path is None) != (self.edges_path is None):
            raise InvalidParams("nodes_path and edges_path go together")

    def effective(self) -> "ExperimentConfig":
        s = self.seed
        return replace(self, detector=replace(self.detector, seed=s), train=replace(self.train, seed=s),
                       attack=replace(self.attack, seed=s))

    def gen_params(self) -> GenParams:
        return preset(self.preset, **{**self.gen_overrides, "seed": self.seed})

    def to_json(self) -> dict:
        """Resolved configuration; feeding it back to from_json gives the same run."""
        e = self.effective()
        d = {
            "preset": e.preset,
            "gen_overrides": dict(sorted(e.gen_overrides.items())),
            "nodes_path": e.nodes_path,
            "edges_path": e.edges_path,
            "detector_path": e.detector_path,
            "geometry_path": e.geometry_path,
            "detector": asdict(e.detector),
            "train": e.train.to_json(),
            "attack": e.attack.resolved(),
            "n_targets": e.n_targets,
            "seed": e.seed,
        }
        if e.nodes_path is None:
            d["gen"] = e.gen_params().to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d.pop("gen", None)
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise InvalidParams(f"unknown config keys: {sorted(unknown)}")
        if isinstance(d.get("detector"), dict):
            d["detector"] = DetectorConfig(**d["detector"])
        if isinstance(d.get("train"), dict):
            d["train"] = TrainConfig.from_json(d["train"])
        if isinstance(d.get("attack"), dict):
            d["attack"] = AttackConfig.from_json(d["attack"])
        return cls(**d)


@dataclass
class ExperimentReport:
    mode: str
    config: dict
    summary: dict
    targets: list
    timing: dict = field(default_factory=dict)
    traces: list = field(default_factory=list, repr=False)  # (key, AttackTrace)
    random_traces: list = field(default_factory=list, repr=False)

    @property
    def misclassification_rate(self) -> float:
        return self.summary["misclassification_rate"]

    @property
    def random_rate(self) -> float:
        return self.summary["random_rate"]

    def to_json(self) -> dict:
        # timing is deliberately absent: it lives in timing.json
        return {"mode": self.mode, "config": self.config, "summary": self.summary, "targets": self.targets}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.dumps())
        (out / "timing.json").write_text(json.dumps(self.timing, sort_keys=True, indent=2) + "\n")
        write_traces(out / "traces.jsonl", self.traces)
        write_traces(out / "random_traces.jsonl", self.random_traces)


def write_traces(path, traces) -> None:
    """One JSON object per trial; ``key`` names the attacked target (or injection slot)."""
    with open(path, "w") as fh:
        for key, tr in traces:
            fh.write(json.dumps({"key": key, **tr.to_json()}, sort_keys=True) + "\n")


@dataclass
class Prepared:
    """Dataset, models and predictions an attack run works against."""

    g: object
    labels: dict
    detector: object
    predictions: dict
    geometry: object
    info: dict
    timing: dict


def load_data(cfg: ExperimentConfig):
    if cfg.nodes_path is not None:
        return load_dataset(cfg.nodes_path, cfg.edges_path)
    return generate(cfg.gen_params())


def fit_detector(g, labels, dc: DetectorConfig):
    return train_detector(g, labels, dc.split_fraction, dc.epochs, dc.seed, dc.hidden, dc.learning_rate,
                          dc.weight_decay)


def prepare(cfg: ExperimentConfig) -> Prepared:
    cfg = cfg.effective()
    timing = {}
    t0 = time.perf_counter()
    g, labels = load_data(cfg)
    timing["data_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if cfg.detector_path is not None:
        det = MessagePassingDetector.load(cfg.detector_path)
    else:
        det = fit_detector(g, labels, cfg.detector)
    predictions = det.predict_all(g)
    timing["detector_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    history = []
    if cfg.geometry_path is not None:
        geo = cost_model.load(cfg.geometry_path)
    else:
        res = train_geometry(g, labels, predictions, cfg.train)
        geo, history = res.geometry, res.history
    timing["geometry_s"] = time.perf_counter() - t0

    info = {
        "n_nodes": len(g),
        "n_edges": g.n_edges,
        "class_mean_degree": class_mean_degrees(g, labels),
        "detector_accuracy": accuracy(det, g, labels),
        "detector_test_accuracy": det.meta.get("test_accuracy"),
        "geometry_loss": [h["loss_total"] for h in history],
    }
    return Prepared(g, labels, det, predictions, geo, info, timing)


def sample_targets(labels, predictions, n: int, seed: int) -> list[int]:
    """Uniform sample of bots the detector gets right, returned sorted."""
    pool = sorted(v for v, lab in labels.items() if lab == Label.BOT and predictions.get(v) == Label.BOT)
    if len(pool) < n:
        log.warning("only %d correctly classified bots; shrinking the target set from %d", len(pool), n)
        n = len(pool)
    rng = np.random.default_rng([seed, 50])
    return sorted(int(x) for x in rng.choice(pool, size=n, replace=False)) if n else []


def _summarize(key, traces, rtraces) -> dict:
    won = [t for t in traces if t.outcome == SUCCESS]
    return {
        "target": key,
        "success": bool(won),
        "successes": len(won),
        "trials": len(traces),
        "first_success": won[0].trial if won else None,
        "budget_exceeded": sum(t.outcome == BUDGET_EXCEEDED for t in traces),
        "fallback": any(t.fallback for t in traces),
        "cloaks": sorted({t.cloak for t in traces if t.cloak is not None}),
        "random_success": any(t.outcome == SUCCESS for t in rtraces),
        "random_successes": sum(t.outcome == SUCCESS for t in rtraces),
    }


# worker state for --parallel-targets; each process owns its graph copy
_WORKER = {}


def _worker_init(g, labels, predictions, geo, det, acfg, mode):
    _WORKER["run"] = _Runner(g, labels, predictions, geo, det, acfg, mode)


def _worker_run(key):
    return _WORKER["run"](key)


class _Runner:
    def __init__(self, g, labels, predictions, geo, det, acfg: AttackConfig, mode: str):
        self.g, self.labels, self.det, self.acfg, self.mode = g, labels, det, acfg, mode
        self.bc = BoCloak(g, labels, predictions, geo, det, acfg)

    def __call__(self, key):
        if self.mode == "edit":
            tr = self.bc.attack(key, "edit")
            rt = random_attack(self.g, self.labels, self.det, key, self.acfg, "edit")
        else:
            tr = self.bc.attack(None, "inject", key)
            rt = random_attack(self.g, self.labels, self.det, None, self.acfg, "inject", key)
        return tr, rt


def _run(cfg: ExperimentConfig, mode: str, prepared: Prepared | None = None) -> ExperimentReport:
    cfg = cfg.effective()
    prep = prepare(cfg) if prepared is None else prepared
    timing = dict(prep.timing)
    g, labels = prep.g, prep.labels
    if mode == "edit":
        keys = sample_targets(labels, prep.predictions, cfg.n_targets, cfg.seed)
    else:
        keys = list(range(cfg.n_targets))

    t0 = time.perf_counter()
    args = (g, labels, prep.predictions, prep.geometry, prep.detector, cfg.attack, mode)
    runner = _Runner(*args)
    candidates = [c.to_json() for c in runner.bc.candidates]
    if cfg.parallel_targets > 1 and len(keys) > 1:
        with ProcessPoolExecutor(cfg.parallel_targets, initializer=_worker_init, initargs=args) as ex:
            results = list(ex.map(_worker_run, keys))
    else:
        results = [runner(k) for k in keys]
    timing["attack_s"] = time.perf_counter() - t0
    g.reset()

    targets, traces, rtraces = [], [], []
    for k, (tr, rt) in zip(keys, results):
        targets.append(_summarize(k, tr, rt))
        traces += [(k, t) for t in tr]
        rtraces += [(k, t) for t in rt]
    n = len(keys)
    wins = sum(t["success"] for t in targets)
    rwins = sum(t["random_success"] for t in targets)
    summary = {
        **prep.info,
        "n_targets": n,
        "successes": wins,
        "misclassification_rate": wins / n if n else 0.0,
        "random_successes": rwins,
        "random_rate": rwins / n if n else 0.0,
        "trial_success_rate": _trial_rate(traces),
        "random_trial_success_rate": _trial_rate(rtraces),
        "candidates": candidates,
    }
    timing["total_s"] = sum(timing.values())
    report = ExperimentReport(mode, cfg.to_json(), summary, targets, timing, traces, rtraces)
    if cfg.out_dir is not None:
        report.write(cfg.out_dir)
    return report


def _trial_rate(traces) -> float:
    return sum(t.outcome == SUCCESS for _, t in traces) / len(traces) if traces else 0.0


def run_editing_experiment(cfg: ExperimentConfig, prepared: Prepared | None = None) -> ExperimentReport:
    """Edit sampled bots in place; a target counts once any trial flips it."""
    return _run(cfg, "edit", prepared)


def run_injection_experiment(cfg: ExperimentConfig, prepared: Prepared | None = None) -> ExperimentReport:
    """Inject ``n_targets`` new bots; rate is the share that passes as human."""
    return _run(cfg, "inject", prepared)


def recount(traces_path) -> dict:
    """Per-target any-trial success recomputed from a traces file."""
    won: dict = {}
    with open(traces_path) as fh:
        for line in fh:
            if line.strip():
                t = json.loads(line)
                won[t["key"]] = won.get(t["key"], False) or t["outcome"] == SUCCESS
    return won
