"""Finite-difference verification of every autodiff primitive and of the
three training losses composed through the default networks.

Each check perturbs inputs with central differences (h = 1e-5) and compares
against the recorded gradients; the reported error is
``max|fd - ad| / max(max|fd|, max|ad|, 1e-10)``.
"""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np

from . import models as M
from . import tensor as T
from .losses import barlow_twins, bce_with_logits
from .rng import Stream, root_key
from .tensor import Tensor, backward

FD_STEP = 1e-5
PRIMITIVE_TOL = 1e-4
LOSS_TOL = 1e-4
PROBES = 20


def fd_gradient(f: Callable[[np.ndarray], float], x0: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    base = x0.copy().reshape(-1)
    for i in range(base.size):
        keep = base[i]
        base[i] = keep + h
        up = f(base.reshape(x0.shape))
        base[i] = keep - h
        down = f(base.reshape(x0.shape))
        base[i] = keep
        flat[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(fd: np.ndarray, ad: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(fd))), float(np.max(np.abs(ad))), 1e-10)
    return float(np.max(np.abs(fd - ad))) / scale


def _check_inputs(
    build_loss: Callable[[List[Tensor]], Tensor], values: List[np.ndarray]
) -> float:
    """Autodiff-vs-FD error over every input of a scalar-valued composition."""
    tensors = [Tensor(v, requires_grad=True) for v in values]
    loss = build_loss(tensors)
    backward(loss)
    worst = 0.0
    for j, t in enumerate(tensors):
        def f(x, j=j):
            probe = [Tensor(v) for v in values]
            probe[j] = Tensor(x)
            return build_loss(probe).item()

        worst = max(worst, rel_error(fd_gradient(f, values[j]), t.grad))
    return worst


def _away_from_kinks(arr: np.ndarray, margin: float = 0.05) -> np.ndarray:
    """Push values away from zero so relu's kink cannot poison the FD probe."""
    return np.where(np.abs(arr) < margin, arr + np.sign(arr + 0.5) * margin, arr)


def _primitive_cases(stream: Stream) -> Dict[str, Callable[[], float]]:
    def draw(*shape, low=-2.0, high=2.0):
        n = int(np.prod(shape)) if shape else 1
        return stream.uniform_range(low, high, n).reshape(shape)

    def weighted_sum(t: Tensor, w: np.ndarray) -> Tensor:
        return (t * Tensor(w)).sum()

    def case_matmul() -> float:
        a, b = draw(3, 4), draw(4, 2)
        w = draw(3, 2)
        return _check_inputs(lambda ts: weighted_sum(ts[0] @ ts[1], w), [a, b])

    def case_add() -> float:
        a, b, w = draw(2, 3), draw(2, 3), draw(2, 3)
        return _check_inputs(lambda ts: weighted_sum(ts[0] + ts[1], w), [a, b])

    def case_sub() -> float:
        a, b, w = draw(2, 3), draw(2, 3), draw(2, 3)
        return _check_inputs(lambda ts: weighted_sum(ts[0] - ts[1], w), [a, b])

    def case_mul() -> float:
        a, b, w = draw(2, 3), draw(2, 3), draw(2, 3)
        return _check_inputs(lambda ts: weighted_sum(ts[0] * ts[1], w), [a, b])

    def case_scalar_mul() -> float:
        a, s, w = draw(2, 3), draw(), draw(2, 3)
        return _check_inputs(lambda ts: weighted_sum(ts[0] * ts[1], w), [a, s])

    def case_relu() -> float:
        a = _away_from_kinks(draw(3, 3))
        w = draw(3, 3)
        return _check_inputs(lambda ts: weighted_sum(T.relu(ts[0]), w), [a])

    def case_sigmoid() -> float:
        a, w = draw(7), draw(7)
        return _check_inputs(lambda ts: weighted_sum(T.sigmoid(ts[0]), w), [a])

    def case_log() -> float:
        a = draw(6, low=0.1, high=4.0)
        w = draw(6)
        return _check_inputs(lambda ts: weighted_sum(T.log(ts[0]), w), [a])

    def case_square() -> float:
        a, w = draw(5), draw(5)
        return _check_inputs(lambda ts: weighted_sum(T.square(ts[0]), w), [a])

    def case_powc() -> float:
        a = draw(5, low=0.2, high=3.0)
        w = draw(5)
        return _check_inputs(lambda ts: weighted_sum(T.powc(ts[0], -0.5), w), [a])

    def case_sum_axis() -> float:
        a = draw(3, 4)
        w = draw(4)
        return _check_inputs(lambda ts: weighted_sum(ts[0].sum(axis=0), w), [a])

    def case_sum_full() -> float:
        a = draw(3, 4)
        return _check_inputs(lambda ts: ts[0].sum(), [a])

    def case_mean_axis() -> float:
        a = draw(4, 3)
        w = draw(4)
        return _check_inputs(lambda ts: weighted_sum(ts[0].mean(axis=1), w), [a])

    def case_mean_full() -> float:
        a = draw(4, 3)
        return _check_inputs(lambda ts: ts[0].mean(), [a])

    def case_transpose() -> float:
        a = draw(3, 4)
        w = draw(4, 3)
        return _check_inputs(lambda ts: weighted_sum(ts[0].transpose(), w), [a])

    def case_reshape() -> float:
        a = draw(3, 4)
        w = draw(12)
        return _check_inputs(lambda ts: weighted_sum(ts[0].reshape((12,)), w), [a])

    def case_add_rowvec() -> float:
        a, v, w = draw(4, 3), draw(3), draw(4, 3)
        return _check_inputs(lambda ts: weighted_sum(T.add_rowvec(ts[0], ts[1]), w), [a, v])

    def case_mul_rowvec() -> float:
        a, v, w = draw(4, 3), draw(3), draw(4, 3)
        return _check_inputs(lambda ts: weighted_sum(T.mul_rowvec(ts[0], ts[1]), w), [a, v])

    def case_concat() -> float:
        a, b, w = draw(3, 2), draw(3, 4), draw(3, 6)
        return _check_inputs(lambda ts: weighted_sum(T.concat_cols(ts[0], ts[1]), w), [a, b])

    def case_conv1d() -> float:
        x = draw(2, 16)
        k = draw(3, 2, 4)
        w = draw(3, 7)  # L' = floor((16 - 4) / 2) + 1 = 7
        return _check_inputs(
            lambda ts: weighted_sum(T.conv1d(ts[0], ts[1], stride=2), w), [x, k]
        )

    def case_conv1d_batched() -> float:
        x = draw(2, 3, 10)
        k = draw(4, 3, 3)
        w = draw(2, 4, 8)
        return _check_inputs(
            lambda ts: weighted_sum(T.conv1d(ts[0], ts[1], stride=1), w), [x, k]
        )

    def case_bce() -> float:
        logits = draw(6)
        targets = (stream.uniforms(6) > 0.5).astype(np.float64)
        return _check_inputs(lambda ts: bce_with_logits(targets, ts[0]), [logits])

    return {
        "matmul": case_matmul,
        "add": case_add,
        "sub": case_sub,
        "mul": case_mul,
        "scalar_mul": case_scalar_mul,
        "relu": case_relu,
        "sigmoid": case_sigmoid,
        "log": case_log,
        "square": case_square,
        "powc": case_powc,
        "sum_axis": case_sum_axis,
        "sum_full": case_sum_full,
        "mean_axis": case_mean_axis,
        "mean_full": case_mean_full,
        "transpose": case_transpose,
        "reshape": case_reshape,
        "add_rowvec": case_add_rowvec,
        "mul_rowvec": case_mul_rowvec,
        "concat_cols": case_concat,
        "conv1d": case_conv1d,
        "conv1d_batched": case_conv1d_batched,
        "bce_with_logits": case_bce,
    }


def check_primitives(seed: int = 0, probes: int = PROBES) -> List[dict]:
    """Run every primitive check `probes` times with fresh random inputs."""
    results = []
    for name_index, (name, _) in enumerate(_primitive_cases(Stream(root_key(seed))).items()):
        worst = 0.0
        for probe in range(probes):
            stream = Stream(root_key(seed)).child(name_index).child(probe)
            case = _primitive_cases(stream)[name]
            worst = max(worst, case())
        results.append(
            {"check": f"primitive.{name}", "max_rel_error": worst,
             "tolerance": PRIMITIVE_TOL, "passed": bool(worst < PRIMITIVE_TOL)}
        )
    return results


# -- full-loss probes ---------------------------------------------------------


def _loss_setup(seed: int, bundle_cfg=None):
    cfg = bundle_cfg if bundle_cfg is not None else M.default_bundle_config()
    bundle = M.init_bundle(cfg, seed)
    stream = Stream(root_key(seed)).named_child("gradcheck.data")
    n = 4
    x = stream.normals(n * cfg.signal_encoder.lead_count * cfg.signal_encoder.seq_len).reshape(
        n, cfg.signal_encoder.lead_count, cfg.signal_encoder.seq_len
    )
    m = stream.normals(n * cfg.tabular_encoder.in_dim).reshape(n, cfg.tabular_encoder.in_dim)
    y = (stream.uniforms(n * cfg.diagnosis_head.out_dim) > 0.5).astype(np.float64).reshape(
        n, cfg.diagnosis_head.out_dim
    )
    labs = (stream.uniforms(n * cfg.lab_head.out_dim) > 0.5).astype(np.float64).reshape(
        n, cfg.lab_head.out_dim
    )
    return bundle, x, m, y, labs


def _loss_value(bundle: M.ModelBundle, which: str, x, m, y, labs) -> Tensor:
    if which == "joint_embedding":
        z_x = M.project(bundle, M.encode_signal(bundle, Tensor(x)), "signal")
        z_m = M.project(bundle, M.encode_tabular(bundle, Tensor(m)), "tabular")
        return barlow_twins(z_x, z_m, 0.005)
    h = M.encode_signal(bundle, Tensor(x))
    if which == "classification":
        return bce_with_logits(y, M.classify(bundle, h))
    if which == "reconstruction":
        return bce_with_logits(labs, M.predict_labs(bundle, h))
    raise ValueError(which)


_LOSS_NETS = {
    "joint_embedding": (
        "signal_encoder",
        "tabular_encoder",
        "signal_projector",
        "tabular_projector",
    ),
    "classification": ("signal_encoder", "diagnosis_head"),
    "reconstruction": ("signal_encoder", "lab_head"),
}


def check_losses(seed: int = 0, probes: int = PROBES, bundle_cfg=None) -> List[dict]:
    """FD-check `probes` random parameter coordinates per composed loss."""
    results = []
    for which in ("joint_embedding", "classification", "reconstruction"):
        bundle, x, m, y, labs = _loss_setup(seed, bundle_cfg)
        params = bundle.named_parameters()
        loss = _loss_value(bundle, which, x, m, y, labs)
        backward(loss)
        reachable = _LOSS_NETS[which]
        names = sorted(n for n in params if n.split(".")[0] in reachable)
        picker = Stream(root_key(seed)).named_child(f"gradcheck.probe.{which}")
        worst = 0.0
        for _ in range(probes):
            pname = names[int(picker.integers(0, len(names) - 1, 1)[0])]
            param = params[pname]
            index = int(picker.integers(0, param.size - 1, 1)[0])
            flat = param.data.reshape(-1)
            keep = flat[index]
            flat[index] = keep + FD_STEP
            up = _loss_value(bundle, which, x, m, y, labs).item()
            flat[index] = keep - FD_STEP
            down = _loss_value(bundle, which, x, m, y, labs).item()
            flat[index] = keep
            fd = (up - down) / (2.0 * FD_STEP)
            ad = param.grad.reshape(-1)[index]
            scale = max(abs(fd), abs(ad), 1e-6)
            worst = max(worst, abs(fd - ad) / scale)
        results.append(
            {"check": f"loss.{which}", "max_rel_error": worst,
             "tolerance": LOSS_TOL, "passed": bool(worst < LOSS_TOL)}
        )
    return results


def run_all(seed: int = 0, probes: int = PROBES, bundle_cfg=None) -> dict:
    checks = check_primitives(seed, probes) + check_losses(seed, probes, bundle_cfg)
    return {"checks": checks, "passed": all(c["passed"] for c in checks)}
