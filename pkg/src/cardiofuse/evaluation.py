"""Ranking metrics and the paired-prediction explanation report.

AUROC uses the rank-sum formulation with midranks for ties, which is exact
and O(n log n).  Labels with a single class present are skipped and
reported, never scored; the macro average runs over the labels that admit
the metric.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (
    CapabilityError,
    ContractError,
    DimensionError,
    SingleClassLabelError,
    UndefinedMetricError,
)
from .tensor import Tensor, sigmoid


def auroc_binary(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Rank-sum form: (sum of positive midranks - n_pos(n_pos+1)/2) / (n_pos n_neg).
    Raises :class:`SingleClassLabelError` when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise DimensionError(
            f"scores and labels must be equal-length vectors, got {scores.shape} "
            f"and {labels.shape}"
        )
    n = scores.shape[0]
    if n < 2:
        raise ContractError(f"AUROC needs at least 2 samples, got {n}")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ContractError("labels must be binary")
    n_pos = int(labels.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassLabelError("only one class present")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], n]
    midranks = (starts + ends + 1) / 2.0  # 1-based midrank per tie group
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(midranks, ends - starts)
    rank_sum = float(ranks[labels == 1.0].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def macro_auroc(
    scores: np.ndarray, labels: np.ndarray
) -> Tuple[float, List[Optional[float]], List[int]]:
    """Mean per-label AUROC over labels with both classes present.

    Returns (macro, per-label values with None where skipped, skipped indices).
    Raises :class:`UndefinedMetricError` if every label is single-class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise DimensionError(
            f"scores and labels must be equal (n, T) matrices, got {scores.shape} "
            f"and {labels.shape}"
        )
    per_label: List[Optional[float]] = []
    skipped: List[int] = []
    values: List[float] = []
    for t in range(scores.shape[1]):
        try:
            value = auroc_binary(scores[:, t], labels[:, t])
        except SingleClassLabelError:
            per_label.append(None)
            skipped.append(t)
            continue
        per_label.append(value)
        values.append(value)
    if not values:
        raise UndefinedMetricError("every label is single-class; macro AUROC undefined")
    return float(np.mean(values)), per_label, skipped


@dataclass
class LabelFamilyMetrics:
    auroc_per_label: List[Optional[float]]
    macro_auroc: float
    skipped_labels: List[int]


@dataclass
class MetricsReport:
    split: str
    diagnoses: Optional[LabelFamilyMetrics]
    labs: Optional[LabelFamilyMetrics]

    def to_dict(self) -> dict:
        out: dict = {"split": self.split}
        for family_name in ("diagnoses", "labs"):
            family = getattr(self, family_name)
            if family is None:
                continue
            out[family_name] = {
                "auroc_per_label": family.auroc_per_label,
                "macro_auroc": family.macro_auroc,
                "skipped_labels": family.skipped_labels,
            }
        return out


# -- 17-significant-digit JSON ------------------------------------------------


def _emit(value, pieces: List[str]) -> None:
    if isinstance(value, dict):
        pieces.append("{")
        for i, (k, v) in enumerate(value.items()):
            if i:
                pieces.append(",")
            pieces.append(json.dumps(str(k)))
            pieces.append(":")
            _emit(v, pieces)
        pieces.append("}")
    elif isinstance(value, (list, tuple)):
        pieces.append("[")
        for i, v in enumerate(value):
            if i:
                pieces.append(",")
            _emit(v, pieces)
        pieces.append("]")
    elif isinstance(value, bool) or value is None:
        pieces.append(json.dumps(value))
    elif isinstance(value, (int, np.integer)):
        pieces.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        pieces.append(format(float(value), ".17g"))
    else:
        pieces.append(json.dumps(value))


def to_json(value) -> str:
    """Serialize a report structure with floats at 17 significant digits."""
    pieces: List[str] = []
    _emit(value, pieces)
    return "".join(pieces)


# -- model-level evaluation ----------------------------------------------------


def _sigmoid_np(logits: np.ndarray) -> np.ndarray:
    return sigmoid(Tensor(logits)).data


def _score_arrays(model, arrays: Dict[str, np.ndarray], batch: int = 256) -> Dict[str, np.ndarray]:
    """Sigmoid probabilities per available head, computed deterministically."""
    nets = model.nets
    if "signal_encoder" not in nets:
        raise CapabilityError("checkpoint has no signal encoder")
    out: Dict[str, np.ndarray] = {}
    n = arrays["signal"].shape[0]
    diag_chunks: List[np.ndarray] = []
    lab_chunks: List[np.ndarray] = []
    for start in range(0, n, batch):
        x = Tensor(arrays["signal"][start : start + batch])
        h = nets["signal_encoder"].forward(x)
        if "diagnosis_head" in nets:
            diag_chunks.append(_sigmoid_np(nets["diagnosis_head"].forward(h).data))
        elif "fusion_head" in nets:
            if "tabular_encoder" not in nets:
                raise CapabilityError("fusion checkpoint lacks a tabular encoder")
            m = Tensor(arrays["tabular"][start : start + batch])
            h_m = nets["tabular_encoder"].forward(m)
            from .tensor import concat_cols

            diag_chunks.append(
                _sigmoid_np(nets["fusion_head"].forward(concat_cols(h, h_m)).data)
            )
        if "lab_head" in nets:
            lab_chunks.append(_sigmoid_np(nets["lab_head"].forward(h).data))
    if diag_chunks:
        out["diagnoses"] = np.concatenate(diag_chunks, axis=0)
    if lab_chunks:
        out["labs"] = np.concatenate(lab_chunks, axis=0)
    if not out:
        raise CapabilityError("checkpoint exposes no prediction head")
    return out


def evaluate(checkpoint, dataset, split: str) -> MetricsReport:
    """Score one split with every head the checkpoint provides."""
    from .pipeline import LoadedModel, load_checkpoint
    from .synthdata import split_arrays

    model = checkpoint if isinstance(checkpoint, LoadedModel) else load_checkpoint(checkpoint)
    enc_cfg = model.nets["signal_encoder"].cfg
    gen = dataset.config
    if (enc_cfg.lead_count, enc_cfg.seq_len) != (gen.lead_count, gen.seq_len):
        raise DimensionError(
            f"checkpoint expects signals ({enc_cfg.lead_count}, {enc_cfg.seq_len}), "
            f"dataset has ({gen.lead_count}, {gen.seq_len})"
        )
    arrays = split_arrays(dataset.splits[split])
    scores = _score_arrays(model, arrays)
    families: Dict[str, Optional[LabelFamilyMetrics]] = {"diagnoses": None, "labs": None}
    for family in families:
        if family not in scores:
            continue
        macro, per_label, skipped = macro_auroc(scores[family], arrays[family])
        families[family] = LabelFamilyMetrics(
            auroc_per_label=per_label, macro_auroc=macro, skipped_labels=skipped
        )
    return MetricsReport(split=split, diagnoses=families["diagnoses"], labs=families["labs"])


def lab_name(index: int) -> str:
    return f"lab_{index}"


def explain(checkpoint, encounter, top_k: int) -> dict:
    """Diagnosis probabilities plus the top-k predicted lab abnormalities,
    both computed from one shared feature vector."""
    from .pipeline import LoadedModel, load_checkpoint

    model = checkpoint if isinstance(checkpoint, LoadedModel) else load_checkpoint(checkpoint)
    nets = model.nets
    for required in ("signal_encoder", "diagnosis_head", "lab_head"):
        if required not in nets:
            raise CapabilityError(f"explanation needs {required!r} in the checkpoint")
    n_labs = nets["lab_head"].out_dim
    if not 1 <= top_k <= n_labs:
        raise ContractError(f"top_k must be in [1, {n_labs}], got {top_k}")

    x = Tensor(encounter.signal[None, :, :])
    h = nets["signal_encoder"].forward(x)  # shared by both heads
    diag_probs = _sigmoid_np(nets["diagnosis_head"].forward(h).data)[0]
    lab_probs = _sigmoid_np(nets["lab_head"].forward(h).data)[0]
    ranked = sorted(range(n_labs), key=lambda p: (-lab_probs[p], p))[:top_k]
    return {
        "diagnosis_probabilities": [float(v) for v in diag_probs],
        "top_labs": [
            {"lab": lab_name(p), "probability": float(lab_probs[p])} for p in ranked
        ],
    }
