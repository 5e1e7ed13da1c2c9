"""Optimal-transport guided bot cloaking on directed social graphs."""

from .attack import AttackConfig, AttackTrace, BoCloak, bocloak_edit, bocloak_inject, human_fallback, random_attack
from .cost_model import OtGeometry, ground_cost, init_geometry
from .datagen import GenParams, generate, preset
from .detector import CentroidDetector, MessagePassingDetector, train_detector
from .experiment import ExperimentConfig, ExperimentReport, run_editing_experiment, run_injection_experiment
from .features import MeasureParams, neighborhood_measure
from .geometry import boundary_candidates, ot_distance
from .graph import DirectedSocialGraph, EdgeEdit, Label, apply_edits
from .io import load_dataset, save_dataset
from .ot import SinkhornConfig, TransportPlan, sinkhorn
from .training import TrainConfig, train_geometry

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AttackTrace", "BoCloak", "CentroidDetector", "DirectedSocialGraph", "EdgeEdit",
    "ExperimentConfig", "ExperimentReport", "GenParams", "Label", "MeasureParams", "MessagePassingDetector",
    "OtGeometry", "SinkhornConfig", "TrainConfig", "TransportPlan", "apply_edits", "bocloak_edit",
    "bocloak_inject", "boundary_candidates", "generate", "ground_cost", "human_fallback", "init_geometry",
    "load_dataset", "neighborhood_measure", "ot_distance", "preset", "random_attack", "run_editing_experiment",
    "run_injection_experiment", "save_dataset", "sinkhorn", "train_detector", "train_geometry",
]
