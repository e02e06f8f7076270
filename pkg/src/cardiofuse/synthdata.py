"""Deterministic synthetic multimodal generator.

A shared latent factor vector u drives every modality of one synthetic
patient encounter:

* signal:     x[c, t] = sum_f u_f * A[c, f] * sin(2*pi * w_f * t / L + phi[c, f]) + sx * eps
* tabular:    m = Am @ u + sm * eps
* lab scores: s = Ap @ u + sp * eps, thresholded at the analytic
              (1 - prevalence)-quantile of each score's marginal Normal
* diagnoses:  y_k = 1[w_k . u + b_k > 0]  (deterministic, no label noise)

Frequencies are integers, so the sinusoid basis is orthogonal over the L
samples and the latent vector is recoverable from a noise-free signal;
cross-modal structure is therefore present by construction.

Randomness comes from per-record counter streams derived from
(seed, split, index) - see :mod:`cardiofuse.rng` - so any single record can
be regenerated in isolation, bitwise.  Draw order within a record is fixed:
latent factors, signal noise, tabular noise, lab noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError
from .rng import Stream, root_key
from .serialization import read_container, write_container

DATASET_MAGIC = b"CMDS"
DATASET_VERSION = 1

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class GeneratorConfig:
    latent_dim: int = 8
    lead_count: int = 4
    seq_len: int = 256
    routine_dim: int = 12
    n_diagnoses: int = 4
    n_labs: int = 6
    noise_signal: float = 0.3
    noise_tabular: float = 0.2
    noise_lab: float = 0.2
    lab_prevalence: float = 0.3
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 1000
    seed: int = 7

    def __post_init__(self):
        counts = {
            "latent_dim": self.latent_dim,
            "lead_count": self.lead_count,
            "seq_len": self.seq_len,
            "routine_dim": self.routine_dim,
            "n_diagnoses": self.n_diagnoses,
            "n_labs": self.n_labs,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {value}")
        for name, value in (
            ("noise_signal", self.noise_signal),
            ("noise_tabular", self.noise_tabular),
            ("noise_lab", self.noise_lab),
        ):
            if value < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {value}")
        if not 0.0 < self.lab_prevalence < 1.0:
            raise ConfigurationError(
                f"lab_prevalence must be in (0, 1), got {self.lab_prevalence}"
            )

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def to_dict(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "lead_count": self.lead_count,
            "seq_len": self.seq_len,
            "routine_dim": self.routine_dim,
            "n_diagnoses": self.n_diagnoses,
            "n_labs": self.n_labs,
            "noise_signal": self.noise_signal,
            "noise_tabular": self.noise_tabular,
            "noise_lab": self.noise_lab,
            "lab_prevalence": self.lab_prevalence,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


@dataclass
class WorldParams:
    """Per-seed ground-truth maps from latent factors to each modality."""

    amplitude: np.ndarray  # (C, F), uniform in [0.5, 1.5]
    frequency: np.ndarray  # (F,), integers in {2..12}
    phase: np.ndarray  # (C, F), uniform in [0, 2*pi)
    tabular_map: np.ndarray  # (D, F), standard normal
    lab_map: np.ndarray  # (P, F), standard normal
    diagnosis_weights: np.ndarray  # (K, F), standard normal
    diagnosis_bias: np.ndarray  # (K,), standard normal
    lab_thresholds: np.ndarray  # (P,), analytic quantiles
    _basis: np.ndarray = field(default=None, repr=False, compare=False)

    def signal_basis(self, seq_len: int) -> np.ndarray:
        """(C, L, F) array with basis[c, t, f] = A[c,f] sin(2 pi w_f t / L + phi[c,f])."""
        if self._basis is None or self._basis.shape[1] != seq_len:
            t = np.arange(seq_len, dtype=np.float64)
            angle = (
                2.0 * np.pi * self.frequency[None, None, :] * t[None, :, None] / seq_len
                + self.phase[:, None, :]
            )
            self._basis = self.amplitude[:, None, :] * np.sin(angle)
        return self._basis


@dataclass(frozen=True)
class Encounter:
    """One synthetic patient record."""

    signal: np.ndarray  # (C, L)
    tabular: np.ndarray  # (D,)
    labs: np.ndarray  # (P,), binary 0/1
    diagnoses: np.ndarray  # (K,), binary 0/1


@dataclass
class Dataset:
    config: GeneratorConfig
    world: WorldParams
    splits: Dict[str, List[Encounter]]

    @property
    def train(self) -> List[Encounter]:
        return self.splits["train"]

    @property
    def val(self) -> List[Encounter]:
        return self.splits["val"]

    @property
    def test(self) -> List[Encounter]:
        return self.splits["test"]


def lab_threshold(lab_map_row: np.ndarray, noise_lab: float, prevalence: float) -> float:
    """Analytic (1 - prevalence)-quantile of a lab score's marginal Normal.

    The score is a fixed linear map of iid standard normals plus Normal
    noise, so its marginal is Normal(0, sum(row^2) + noise^2).
    """
    std = float(np.sqrt(np.sum(lab_map_row**2) + noise_lab**2))
    return std * float(ndtri(1.0 - prevalence))


def world_from_config(cfg: GeneratorConfig) -> WorldParams:
    """Draw the per-seed world. Each field uses its own named substream."""
    world = Stream(root_key(cfg.seed)).named_child("world")
    c, f = cfg.lead_count, cfg.latent_dim
    amplitude = world.named_child("amplitude").uniform_range(0.5, 1.5, c * f).reshape(c, f)
    frequency = world.named_child("frequency").integers(2, 12, f).astype(np.float64)
    phase = world.named_child("phase").uniform_range(0.0, 2.0 * np.pi, c * f).reshape(c, f)
    tabular_map = world.named_child("tabular_map").normals(cfg.routine_dim * f).reshape(
        cfg.routine_dim, f
    )
    lab_map = world.named_child("lab_map").normals(cfg.n_labs * f).reshape(cfg.n_labs, f)
    diagnosis_weights = world.named_child("diagnosis_weights").normals(
        cfg.n_diagnoses * f
    ).reshape(cfg.n_diagnoses, f)
    diagnosis_bias = world.named_child("diagnosis_bias").normals(cfg.n_diagnoses)
    thresholds = np.array(
        [lab_threshold(lab_map[p], cfg.noise_lab, cfg.lab_prevalence) for p in range(cfg.n_labs)]
    )
    return WorldParams(
        amplitude=amplitude,
        frequency=frequency,
        phase=phase,
        tabular_map=tabular_map,
        lab_map=lab_map,
        diagnosis_weights=diagnosis_weights,
        diagnosis_bias=diagnosis_bias,
        lab_thresholds=thresholds,
    )


def encounter_stream(seed: int, split: str, index: int) -> Stream:
    """The record-level stream for (seed, split, index)."""
    if split not in SPLIT_NAMES:
        raise ConfigurationError(f"unknown split {split!r}")
    records = Stream(root_key(seed)).named_child("records")
    return records.child(SPLIT_NAMES.index(split)).child(index)


def encounter_from_latent(
    world: WorldParams,
    cfg: GeneratorConfig,
    latent: np.ndarray,
    eps_signal: np.ndarray,
    eps_tabular: np.ndarray,
    eps_lab: np.ndarray,
) -> Encounter:
    """Deterministic map from latent factors and noise draws to one record."""
    basis = world.signal_basis(cfg.seq_len)
    signal = basis @ latent + cfg.noise_signal * eps_signal
    tabular = world.tabular_map @ latent + cfg.noise_tabular * eps_tabular
    scores = world.lab_map @ latent + cfg.noise_lab * eps_lab
    labs = (scores > world.lab_thresholds).astype(np.float64)
    diagnoses = (
        world.diagnosis_weights @ latent + world.diagnosis_bias > 0.0
    ).astype(np.float64)
    return Encounter(signal=signal, tabular=tabular, labs=labs, diagnoses=diagnoses)


def generate_encounter(world: WorldParams, cfg: GeneratorConfig, stream: Stream) -> Encounter:
    """Draw one record from its stream (latent, then per-modality noise)."""
    latent = stream.normals(cfg.latent_dim)
    eps_signal = stream.normals(cfg.lead_count * cfg.seq_len).reshape(
        cfg.lead_count, cfg.seq_len
    )
    eps_tabular = stream.normals(cfg.routine_dim)
    eps_lab = stream.normals(cfg.n_labs)
    return encounter_from_latent(world, cfg, latent, eps_signal, eps_tabular, eps_lab)


def generate_dataset(cfg: GeneratorConfig) -> Dataset:
    world = world_from_config(cfg)
    splits: Dict[str, List[Encounter]] = {}
    for split in SPLIT_NAMES:
        n = cfg.split_size(split)
        splits[split] = [
            generate_encounter(world, cfg, encounter_stream(cfg.seed, split, i))
            for i in range(n)
        ]
    return Dataset(config=cfg, world=world, splits=splits)


# -- persistence -------------------------------------------------------------


def split_arrays(encounters: List[Encounter]) -> Dict[str, np.ndarray]:
    """Stack a split into contiguous arrays keyed by modality."""
    return {
        "signal": np.stack([e.signal for e in encounters]),
        "tabular": np.stack([e.tabular for e in encounters]),
        "labs": np.stack([e.labs for e in encounters]),
        "diagnoses": np.stack([e.diagnoses for e in encounters]),
    }


def _world_tensors(world: WorldParams) -> Dict[str, np.ndarray]:
    return {
        "world.amplitude": world.amplitude,
        "world.frequency": world.frequency,
        "world.phase": world.phase,
        "world.tabular_map": world.tabular_map,
        "world.lab_map": world.lab_map,
        "world.diagnosis_weights": world.diagnosis_weights,
        "world.diagnosis_bias": world.diagnosis_bias,
        "world.lab_thresholds": world.lab_thresholds,
    }


def dataset_tensors(dataset: Dataset) -> Dict[str, np.ndarray]:
    tensors = _world_tensors(dataset.world)
    for split in SPLIT_NAMES:
        for key, arr in split_arrays(dataset.splits[split]).items():
            tensors[f"{split}.{key}"] = arr
    return tensors


def save_dataset(path, dataset: Dataset) -> None:
    with open(path, "wb") as fh:
        write_container(
            fh,
            DATASET_MAGIC,
            DATASET_VERSION,
            {"generator_config": dataset.config.to_dict()},
            dataset_tensors(dataset),
        )


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        metadata, tensors = read_container(fh, DATASET_MAGIC, DATASET_VERSION)
    cfg = GeneratorConfig.from_dict(metadata["generator_config"])
    world = WorldParams(
        amplitude=tensors["world.amplitude"],
        frequency=tensors["world.frequency"],
        phase=tensors["world.phase"],
        tabular_map=tensors["world.tabular_map"],
        lab_map=tensors["world.lab_map"],
        diagnosis_weights=tensors["world.diagnosis_weights"],
        diagnosis_bias=tensors["world.diagnosis_bias"],
        lab_thresholds=tensors["world.lab_thresholds"],
    )
    splits: Dict[str, List[Encounter]] = {}
    for split in SPLIT_NAMES:
        n = cfg.split_size(split)
        signal = tensors[f"{split}.signal"]
        tabular = tensors[f"{split}.tabular"]
        labs = tensors[f"{split}.labs"]
        diagnoses = tensors[f"{split}.diagnoses"]
        splits[split] = [
            Encounter(
                signal=signal[i], tabular=tabular[i], labs=labs[i], diagnoses=diagnoses[i]
            )
            for i in range(n)
        ]
    return Dataset(config=cfg, world=world, splits=splits)
