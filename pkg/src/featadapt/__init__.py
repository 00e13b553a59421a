"""Training and evaluation toolkit for unsupervised domain adaptation over
frozen multi-layer encoder features: self-training hardened by class-aware
feature self-distillation, domain-alignment baselines, and discrepancy
diagnostics, reproducible at desk scale on synthetic domain-shifted data.
"""

from .datagen import SynthConfig, bayes_accuracy, exact_model, generate
from .fam import FamConfig, Model, fam_forward
from .feature_store import Dataset, FeatureRecord, Manifest, load_dataset, save_dataset, subset
from .self_training import PseudoLabelSet, Schedule
from .trainer import TrainConfig, TrainTrace, accuracy, predict, train

__version__ = "0.1.0"
