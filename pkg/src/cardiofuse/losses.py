"""Training objectives: redundancy-reduction alignment loss and multi-label BCE.

The alignment loss drives the cross-correlation matrix of two batches of
embeddings toward the identity; its invariance term lives on the diagonal
and the redundancy term on the off-diagonal.  Both the correlation and the
batch normalization it builds on are differentiated through completely,
statistics included.
"""

from __future__ import annotations

import warnings
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ContractError, DegenerateBatchWarning, DimensionError
from .tensor import Tensor, primitive

# Canonical redundancy/invariance trade-off weight.
DEFAULT_REDUNDANCY_WEIGHT = 0.005

# Population std below this, pre-stabilizer, counts as a degenerate column.
_DEGENERATE_STD = 1e-8
_VAR_STABILIZER = 1e-12


def _check_batch(z: Tensor, name: str) -> None:
    if z.data.ndim != 2:
        raise DimensionError(f"{name} must be (N, E), got shape {z.shape}")
    if z.shape[0] < 2:
        raise ContractError(f"{name} needs a batch of at least 2, got {z.shape[0]}")


def batch_normalize(z: Tensor) -> Tensor:
    """Standardize each embedding dimension to mean 0, population variance 1.

    Degenerate columns (population std < 1e-8) emit a
    :class:`DegenerateBatchWarning`; the 1e-12 variance stabilizer keeps the
    computation finite and such columns come out as zeros.
    """
    _check_batch(z, "batch_normalize input")
    col_mean = z.mean(axis=0)
    centered = T.add_rowvec(z, -col_mean)
    col_var = T.square(centered).mean(axis=0)
    degenerate = np.sqrt(col_var.data) < _DEGENERATE_STD
    if np.any(degenerate):
        warnings.warn(
            f"degenerate batch: {int(degenerate.sum())} embedding dimension(s) "
            "with near-zero spread",
            DegenerateBatchWarning,
            stacklevel=2,
        )
    inv_std = T.powc(col_var + _VAR_STABILIZER, -0.5)
    return T.mul_rowvec(centered, inv_std)


def cross_correlation(zx_norm: Tensor, zm_norm: Tensor) -> Tensor:
    """(E, E) matrix of per-dimension correlations between two normalized batches."""
    _check_batch(zx_norm, "cross_correlation first input")
    _check_batch(zm_norm, "cross_correlation second input")
    if zx_norm.shape != zm_norm.shape:
        raise DimensionError(
            f"cross_correlation shapes differ: {zx_norm.shape} vs {zm_norm.shape}"
        )
    n = zx_norm.shape[0]
    return (zx_norm.transpose() @ zm_norm) * (1.0 / n)


def barlow_twins(
    zx: Tensor, zm: Tensor, redundancy_weight: float = DEFAULT_REDUNDANCY_WEIGHT
) -> Tensor:
    """Alignment loss: sum_i (1 - C_ii)^2 + weight * sum_{i != j} C_ij^2."""
    if redundancy_weight < 0:
        raise ContractError(f"redundancy_weight must be >= 0, got {redundancy_weight}")
    _check_batch(zx, "zx")
    _check_batch(zm, "zm")
    if zx.shape != zm.shape:
        raise DimensionError(f"embedding batches differ: {zx.shape} vs {zm.shape}")
    corr = cross_correlation(batch_normalize(zx), batch_normalize(zm))
    e = corr.shape[0]
    eye = Tensor(np.eye(e))
    off_mask = Tensor(1.0 - np.eye(e))
    invariance = T.square(eye - corr * eye).sum()
    redundancy = T.square(corr * off_mask).sum()
    return invariance + redundancy * redundancy_weight


def bce_with_logits(targets: Union[Tensor, np.ndarray], logits: Tensor) -> Tensor:
    """Mean binary cross-entropy between {0,1} targets and raw logits.

    Fused numerically stable form: per element
    ``max(t, 0) - t*y + log(1 + exp(-|t|))``, averaged over every element
    (labels, and samples when batched).  The analytic gradient is
    ``(sigmoid(t) - y) / numel``.
    """
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise DimensionError(
            f"targets shape {y.shape} does not match logits shape {logits.shape}"
        )
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("BCE targets must be exactly 0 or 1")
    t = logits.data
    per_element = np.maximum(t, 0.0) - t * y + np.log1p(np.exp(-np.abs(t)))
    value = np.asarray(per_element.mean())
    numel = t.size

    def backward_rule(g: np.ndarray):
        # Stable sigmoid, same branch form as the elementwise primitive.
        s = np.empty_like(t)
        pos = t >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
        ex = np.exp(t[~pos])
        s[~pos] = ex / (1.0 + ex)
        return (float(g) * (s - y) / numel,)

    return primitive(value, (logits,), backward_rule, "bce_with_logits")
