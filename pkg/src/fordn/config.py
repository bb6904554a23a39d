"""Experiment configuration: defaults, YAML file, flag overrides, hashing.

Every parameter of the workflow lives here so a single file reproduces a
whole experiment. The resolved scientific parameters are hashed (sha256 of
their canonical JSON) and the hash is embedded in every output sidecar;
``evaluate`` refuses to mix inputs with different hashes unless forced.
Paths and the worker count are excluded from the hash.
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import yaml

from .geometry import DEFAULT_LAMBDA1, DEFAULT_LAMBDA2
from .network import (DEFAULT_BATCH_SIZE, DEFAULT_DEPTH, DEFAULT_EPOCHS,
                      DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE,
                      DEFAULT_SAMPLES_PER_COMBO, DEFAULT_TAU)
from .pipeline import DEFAULT_BETA_CFARI, DEFAULT_BETA_L2L0
from .solvers import (DEFAULT_ALPHA, DEFAULT_BETA_GUIDED,
                      DEFAULT_REWEIGHT_EPS, DEFAULT_REWEIGHT_ROUNDS)

JOBS_ENV_VAR = "FORDN_JOBS"


@dataclass
class ExperimentConfig:
    # bases
    coarse_level: int = 6
    dense_level: int = 12
    lam1: float = DEFAULT_LAMBDA1
    lam2: float = DEFAULT_LAMBDA2
    # gradient scheme: explicit table file wins over generation parameters
    scheme_file: str | None = None
    scheme_k: int = 30
    scheme_b: float = 1000.0
    scheme_seed: int = 20
    # phantom
    phantom_dims: tuple = (40, 40, 40)
    phantom_radius: float = 4.0
    voxel_size_mm: float = 1.0
    snr: float = 20.0
    phantom_seed: int = 11
    noise_normalization: str = "clean"
    # network
    depth: int = DEFAULT_DEPTH
    net_lambda: float = DEFAULT_LAMBDA
    net_tau: float = DEFAULT_TAU
    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    train_seed: int = 7
    samples_per_combo: int = DEFAULT_SAMPLES_PER_COMBO
    min_config_count: int = 3
    # solvers
    alpha: float = DEFAULT_ALPHA
    beta_guided: float = DEFAULT_BETA_GUIDED
    beta_cfari: float = DEFAULT_BETA_CFARI
    beta_l2l0: float = DEFAULT_BETA_L2L0
    reweight_rounds: int = DEFAULT_REWEIGHT_ROUNDS
    reweight_eps: float = DEFAULT_REWEIGHT_EPS
    solver_max_iter: int = 2000
    solver_tol: float = 1e-6
    solver_kkt_tol: float = 1e-4
    # extraction
    fraction_threshold: float = 0.1
    theta_r_deg: float = 20.0
    # execution (not hashed)
    jobs: int = field(default_factory=lambda: int(os.environ.get(JOBS_ENV_VAR, "1")))

    UNHASHED = ("jobs", "scheme_file")

    def to_dict(self):
        d = asdict(self)
        d["phantom_dims"] = list(self.phantom_dims)
        return d

    def scientific_dict(self):
        d = self.to_dict()
        for key in self.UNHASHED:
            d.pop(key, None)
        return d

    def config_hash(self):
        blob = json.dumps(self.scientific_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def provenance(self):
        return {"config": self.scientific_dict(),
                "config_hash": self.config_hash()}


def load_config(path=None, overrides=None):
    """Build a config from defaults, an optional YAML file, and overrides.

    YAML keys mirror the dataclass fields; unknown keys are an error so
    typos do not silently fall back to defaults.
    """
    cfg = ExperimentConfig()
    values = {}
    if path:
        loaded = yaml.safe_load(open(path, encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"config file {path} must be a mapping")
        values.update(loaded)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    for key, val in values.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config key {key!r}")
        if key == "phantom_dims":
            val = tuple(int(v) for v in val)
        setattr(cfg, key, val)
    return cfg


def save_config(path, cfg):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
