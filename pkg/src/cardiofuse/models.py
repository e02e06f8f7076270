"""Network components: signal/tabular encoders, projectors, prediction heads.

The signal encoder is a strided 1-D convolution stack with global average
pooling behind a narrow interface, so a heavier sequence backbone can be
slotted in without touching the rest of the pipeline.  All parameters are
float64 leaf tensors addressed by dotted names ("signal_encoder.block0.weight"),
which is what freeze masks, optimizers and checkpoints key on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .rng import Stream, named_key, root_key
from .tensor import Tensor


@dataclass(frozen=True)
class SignalEncoderConfig:
    lead_count: int
    seq_len: int
    conv_blocks: Tuple[Tuple[int, int, int], ...]  # (out_channels, kernel_width, stride)
    feature_dim: int

    def __post_init__(self):
        if self.lead_count < 1 or self.seq_len < 1 or self.feature_dim < 1:
            raise ConfigurationError("signal encoder dims must be >= 1")
        length = self.seq_len
        for i, (out_ch, width, stride) in enumerate(self.conv_blocks):
            if out_ch < 1 or width < 1:
                raise ConfigurationError(f"conv block {i}: channels and width must be >= 1")
            if stride < 1:
                raise ConfigurationError(f"conv block {i}: stride must be >= 1, got {stride}")
            if width > length:
                raise ConfigurationError(
                    f"conv block {i}: kernel width {width} exceeds temporal length {length}"
                )
            length = (length - width) // stride + 1
        if length < 1:
            raise ConfigurationError("temporal length collapsed below 1 after conv blocks")

    @property
    def pooled_channels(self) -> int:
        return self.conv_blocks[-1][0] if self.conv_blocks else self.lead_count


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    hidden_dims: Tuple[int, ...]
    out_dim: int
    activation: str = "relu"

    def __post_init__(self):
        dims = (self.in_dim, *self.hidden_dims, self.out_dim)
        if any(d < 1 for d in dims):
            raise ConfigurationError(f"MLP dims must all be >= 1, got {dims}")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")


@dataclass(frozen=True)
class BundleConfig:
    signal_encoder: SignalEncoderConfig
    tabular_encoder: MlpConfig
    signal_projector: MlpConfig
    tabular_projector: MlpConfig
    diagnosis_head: MlpConfig
    lab_head: MlpConfig
    embed_dim: int

    def __post_init__(self):
        if self.signal_projector.out_dim != self.embed_dim:
            raise ConfigurationError(
                f"signal_projector.out_dim ({self.signal_projector.out_dim}) "
                f"!= embed_dim ({self.embed_dim})"
            )
        if self.tabular_projector.out_dim != self.embed_dim:
            raise ConfigurationError(
                f"tabular_projector.out_dim ({self.tabular_projector.out_dim}) "
                f"!= embed_dim ({self.embed_dim})"
            )
        feat = self.signal_encoder.feature_dim
        if self.signal_projector.in_dim != feat:
            raise ConfigurationError(
                f"signal_projector.in_dim ({self.signal_projector.in_dim}) "
                f"!= signal feature_dim ({feat})"
            )
        if self.tabular_projector.in_dim != self.tabular_encoder.out_dim:
            raise ConfigurationError(
                f"tabular_projector.in_dim ({self.tabular_projector.in_dim}) "
                f"!= tabular_encoder.out_dim ({self.tabular_encoder.out_dim})"
            )
        if self.diagnosis_head.in_dim != feat:
            raise ConfigurationError(
                f"diagnosis_head.in_dim ({self.diagnosis_head.in_dim}) "
                f"!= signal feature_dim ({feat})"
            )
        if self.lab_head.in_dim != feat:
            raise ConfigurationError(
                f"lab_head.in_dim ({self.lab_head.in_dim}) != signal feature_dim ({feat})"
            )

    def to_dict(self) -> dict:
        return {
            "signal_encoder": {
                "lead_count": self.signal_encoder.lead_count,
                "seq_len": self.signal_encoder.seq_len,
                "conv_blocks": [list(b) for b in self.signal_encoder.conv_blocks],
                "feature_dim": self.signal_encoder.feature_dim,
            },
            "tabular_encoder": _mlp_to_dict(self.tabular_encoder),
            "signal_projector": _mlp_to_dict(self.signal_projector),
            "tabular_projector": _mlp_to_dict(self.tabular_projector),
            "diagnosis_head": _mlp_to_dict(self.diagnosis_head),
            "lab_head": _mlp_to_dict(self.lab_head),
            "embed_dim": self.embed_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BundleConfig":
        enc = d["signal_encoder"]
        return cls(
            signal_encoder=SignalEncoderConfig(
                lead_count=enc["lead_count"],
                seq_len=enc["seq_len"],
                conv_blocks=tuple(tuple(b) for b in enc["conv_blocks"]),
                feature_dim=enc["feature_dim"],
            ),
            tabular_encoder=_mlp_from_dict(d["tabular_encoder"]),
            signal_projector=_mlp_from_dict(d["signal_projector"]),
            tabular_projector=_mlp_from_dict(d["tabular_projector"]),
            diagnosis_head=_mlp_from_dict(d["diagnosis_head"]),
            lab_head=_mlp_from_dict(d["lab_head"]),
            embed_dim=d["embed_dim"],
        )


def _mlp_to_dict(cfg: MlpConfig) -> dict:
    return {
        "in_dim": cfg.in_dim,
        "hidden_dims": list(cfg.hidden_dims),
        "out_dim": cfg.out_dim,
        "activation": cfg.activation,
    }


def _mlp_from_dict(d: dict) -> MlpConfig:
    return MlpConfig(
        in_dim=d["in_dim"],
        hidden_dims=tuple(d["hidden_dims"]),
        out_dim=d["out_dim"],
        activation=d["activation"],
    )


def default_bundle_config(
    lead_count: int = 4,
    seq_len: int = 256,
    routine_dim: int = 12,
    n_diagnoses: int = 4,
    n_labs: int = 6,
) -> BundleConfig:
    """Stock architecture: compact conv encoder, 32-dim features and embeddings."""
    feature_dim = 32
    embed_dim = 32
    return BundleConfig(
        signal_encoder=SignalEncoderConfig(
            lead_count=lead_count,
            seq_len=seq_len,
            conv_blocks=((8, 7, 2), (16, 5, 2), (32, 3, 2)),
            feature_dim=feature_dim,
        ),
        tabular_encoder=MlpConfig(in_dim=routine_dim, hidden_dims=(32,), out_dim=32),
        signal_projector=MlpConfig(in_dim=feature_dim, hidden_dims=(64,), out_dim=embed_dim),
        tabular_projector=MlpConfig(in_dim=32, hidden_dims=(64,), out_dim=embed_dim),
        diagnosis_head=MlpConfig(in_dim=feature_dim, hidden_dims=(16,), out_dim=n_diagnoses),
        lab_head=MlpConfig(in_dim=feature_dim, hidden_dims=(16,), out_dim=n_labs),
        embed_dim=embed_dim,
    )


@dataclass(frozen=True)
class FreezeMask:
    """Parameter-name prefixes excluded from optimizer updates.

    A prefix matches a parameter if it equals the full name or a leading
    dotted segment of it ("signal_encoder.block0" matches
    "signal_encoder.block0.weight").
    """

    frozen_param_names: Tuple[str, ...] = ()

    def matches(self, name: str) -> bool:
        return any(
            name == p or name.startswith(p + ".") for p in self.frozen_param_names
        )


class Mlp:
    """Stack of linear layers with ReLU between them.

    ``activate_output`` controls whether the last layer is followed by the
    activation too: encoders producing feature vectors use True, projectors
    and logit heads use False.
    """

    def __init__(self, cfg: MlpConfig, activate_output: bool = False):
        self.cfg = cfg
        self.activate_output = activate_output
        self.layers: List[Tuple[Tensor, Tensor]] = []
        dims = (cfg.in_dim, *cfg.hidden_dims, cfg.out_dim)
        for i in range(len(dims) - 1):
            w = Tensor(np.zeros((dims[i], dims[i + 1])), requires_grad=True)
            b = Tensor(np.zeros(dims[i + 1]), requires_grad=True)
            self.layers.append((w, b))

    @property
    def in_dim(self) -> int:
        return self.cfg.in_dim

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(self.layers):
            out[f"{prefix}.layer{i}.weight"] = w
            out[f"{prefix}.layer{i}.bias"] = b
        return out

    def forward(self, h: Tensor) -> Tensor:
        if h.data.ndim != 2 or h.shape[1] != self.cfg.in_dim:
            raise DimensionError(
                f"MLP expects (N, {self.cfg.in_dim}) input, got shape {h.shape}"
            )
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = T.add_rowvec(h @ w, b)
            if i < last or self.activate_output:
                h = T.relu(h)
        return h


class SignalEncoder:
    """Strided conv blocks with ReLU, mean pooling over time, linear head."""

    def __init__(self, cfg: SignalEncoderConfig):
        self.cfg = cfg
        self.kernels: List[Tensor] = []
        in_ch = cfg.lead_count
        for out_ch, width, _stride in cfg.conv_blocks:
            self.kernels.append(
                Tensor(np.zeros((out_ch, in_ch, width)), requires_grad=True)
            )
            in_ch = out_ch
        self.head_weight = Tensor(np.zeros((in_ch, cfg.feature_dim)), requires_grad=True)
        self.head_bias = Tensor(np.zeros(cfg.feature_dim), requires_grad=True)

    @property
    def feature_dim(self) -> int:
        return self.cfg.feature_dim

    def named_parameters(self, prefix: str) -> Dict[str, Tensor]:
        out = {}
        for i, k in enumerate(self.kernels):
            out[f"{prefix}.block{i}.weight"] = k
        out[f"{prefix}.head.weight"] = self.head_weight
        out[f"{prefix}.head.bias"] = self.head_bias
        return out

    def forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 3 or x.shape[1:] != (self.cfg.lead_count, self.cfg.seq_len):
            raise DimensionError(
                f"signal encoder expects (N, {self.cfg.lead_count}, {self.cfg.seq_len}), "
                f"got shape {x.shape}"
            )
        h = x
        for kernel, (_out_ch, _width, stride) in zip(self.kernels, self.cfg.conv_blocks):
            h = T.relu(T.conv1d(h, kernel, stride=stride))
        pooled = h.mean(axis=2)
        return T.add_rowvec(pooled @ self.head_weight, self.head_bias)


class ModelBundle:
    """The six networks plus the resolved set of frozen parameter names."""

    def __init__(self, cfg: BundleConfig):
        self.cfg = cfg
        self.signal_encoder = SignalEncoder(cfg.signal_encoder)
        self.tabular_encoder = Mlp(cfg.tabular_encoder, activate_output=True)
        self.signal_projector = Mlp(cfg.signal_projector, activate_output=False)
        self.tabular_projector = Mlp(cfg.tabular_projector, activate_output=False)
        self.diagnosis_head = Mlp(cfg.diagnosis_head, activate_output=False)
        self.lab_head = Mlp(cfg.lab_head, activate_output=False)
        self.frozen: set = set()

    @property
    def embed_dim(self) -> int:
        return self.cfg.embed_dim

    def named_parameters(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        out.update(self.signal_encoder.named_parameters("signal_encoder"))
        out.update(self.tabular_encoder.named_parameters("tabular_encoder"))
        out.update(self.signal_projector.named_parameters("signal_projector"))
        out.update(self.tabular_projector.named_parameters("tabular_projector"))
        out.update(self.diagnosis_head.named_parameters("diagnosis_head"))
        out.update(self.lab_head.named_parameters("lab_head"))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())


def _init_parameter(param: Tensor, name: str, seed_key: int, fan_in: int) -> None:
    if name.endswith(".bias"):
        param.data[...] = 0.0
        return
    bound = float(np.sqrt(1.0 / fan_in))
    stream = Stream(named_key(seed_key, name))
    draws = stream.uniform_range(-bound, bound, param.size)
    param.data[...] = draws.reshape(param.shape)


def _fan_in(name: str, param: Tensor) -> int:
    # Conv kernels (C_out, C_in, W) see C_in * W inputs; linear weights are (in, out).
    if param.data.ndim == 3:
        return param.shape[1] * param.shape[2]
    if param.data.ndim == 2:
        return param.shape[0]
    return param.shape[0]


def init_bundle(cfg: BundleConfig, seed: int) -> ModelBundle:
    """Build a bundle with uniform(-s, s) weights, s = sqrt(1/fan_in), zero biases."""
    bundle = ModelBundle(cfg)
    key = root_key(seed)
    for name, param in bundle.named_parameters().items():
        _init_parameter(param, name, key, _fan_in(name, param))
    return bundle


def init_network(network, prefix: str, seed: int) -> None:
    """Initialize one sub-network in place (fresh heads for fine-tuning stages)."""
    key = root_key(seed)
    for name, param in network.named_parameters(prefix).items():
        _init_parameter(param, name, key, _fan_in(name, param))


# -- forward surfaces --------------------------------------------------------


def _with_batch_dim(x: Tensor, ndim_single: int):
    if x.data.ndim == ndim_single:
        return T.reshape(x, (1, *x.shape)), True
    return x, False


def encode_signal(bundle: ModelBundle, x: Tensor) -> Tensor:
    """Signal (C, L) or (N, C, L) to feature vector(s) of length feature_dim."""
    xb, squeeze = _with_batch_dim(x, 2)
    h = bundle.signal_encoder.forward(xb)
    return T.reshape(h, (h.shape[1],)) if squeeze else h


def encode_tabular(bundle: ModelBundle, m: Tensor) -> Tensor:
    """Tabular vector (D,) or batch (N, D) to feature vector(s)."""
    mb, squeeze = _with_batch_dim(m, 1)
    h = bundle.tabular_encoder.forward(mb)
    return T.reshape(h, (h.shape[1],)) if squeeze else h


def project(bundle: ModelBundle, h: Tensor, side: str) -> Tensor:
    """Map features into the shared embedding space for the given side."""
    if side == "signal":
        projector = bundle.signal_projector
    elif side == "tabular":
        projector = bundle.tabular_projector
    else:
        raise ConfigurationError(f"unknown projection side {side!r}")
    hb, squeeze = _with_batch_dim(h, 1)
    z = projector.forward(hb)
    return T.reshape(z, (z.shape[1],)) if squeeze else z


def classify(bundle: ModelBundle, h_x: Tensor) -> Tensor:
    """Raw diagnosis logits (no sigmoid)."""
    hb, squeeze = _with_batch_dim(h_x, 1)
    logits = bundle.diagnosis_head.forward(hb)
    return T.reshape(logits, (logits.shape[1],)) if squeeze else logits


def predict_labs(bundle: ModelBundle, h_x: Tensor) -> Tensor:
    """Raw lab-abnormality logits (no sigmoid)."""
    hb, squeeze = _with_batch_dim(h_x, 1)
    logits = bundle.lab_head.forward(hb)
    return T.reshape(logits, (logits.shape[1],)) if squeeze else logits


def apply_freeze(bundle: ModelBundle, mask: FreezeMask) -> None:
    """Resolve the mask against the bundle and record the frozen names.

    Every prefix must match at least one parameter; unresolvable prefixes
    are reported together in the error.
    """
    names = list(bundle.named_parameters().keys())
    unresolved = [
        p
        for p in mask.frozen_param_names
        if not any(n == p or n.startswith(p + ".") for n in names)
    ]
    if unresolved:
        raise ConfigurationError(
            f"freeze mask entries match no parameter group: {unresolved}"
        )
    bundle.frozen = {n for n in names if mask.matches(n)}
