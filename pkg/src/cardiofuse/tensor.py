"""Dense float64 tensors with reverse-mode automatic differentiation.

Design constraints, in order: auditability of every backward rule,
bit-exact determinism, then speed.  Consequences:

* everything is float64;
* no broadcasting except scalar-with-tensor (plus two explicit row-vector
  primitives, ``add_rowvec`` and ``mul_rowvec``, whose backward rules are a
  plain pass-through and a column sum);
* the graph is built define-by-run; ``backward`` linearizes it into a
  :class:`Tape` and walks it exactly once.

Every value stored in a :class:`Tensor` (including gradients) must be
finite; a NaN or Inf anywhere raises :class:`~cardiofuse.errors.ContractError`
at the point it would have been stored.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, DomainError

Scalar = Union[int, float]


def _as_finite_f64(data, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"non-finite value in {what}")
    return arr


class Tensor:
    """N-dimensional float64 array, optionally tracked on the autodiff graph.

    ``grad`` is a plain numpy buffer of the same shape, allocated on first
    accumulation and cleared by :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_inputs", "_backward_rule", "op_name")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_finite_f64(data, "tensor data")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._inputs: tuple = ()
        self._backward_rule: Optional[Callable[[np.ndarray], Sequence[np.ndarray]]] = None
        self.op_name: Optional[str] = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def accumulate_grad(self, g: np.ndarray) -> None:
        g = _as_finite_f64(g, "gradient")
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        tag = f" op={self.op_name}" if self.op_name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_mean(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self) -> "Tensor":
        return transpose(self)

    def backward(self) -> None:
        backward(self)


def _lift(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def primitive(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_rule: Callable[[np.ndarray], Sequence[np.ndarray]],
    name: str,
) -> Tensor:
    """Record one primitive on the graph.

    ``backward_rule`` maps the output gradient to one gradient per input
    (entries for inputs with ``requires_grad=False`` may be ``None``).
    Extension point: loss primitives with fused analytic derivatives are
    built through this same helper.
    """
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._inputs = tuple(inputs)
        out._backward_rule = backward_rule
        out.op_name = name
    return out


class Tape:
    """Topologically ordered record of the primitives reachable from a root.

    Inputs always precede the operations that consume them; backward walks
    the list once, in reverse.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list = []
        seen: set = set()
        stack: list = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into every requires_grad ancestor.

    Gradients add across multiple uses of the same tensor and across
    repeated ``backward`` calls; callers clear them between steps.
    """
    if loss.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = Tape.trace(loss)
    loss.accumulate_grad(np.ones((), dtype=np.float64))
    for node in reversed(tape.nodes):
        if node._backward_rule is None or node.grad is None:
            continue
        input_grads = node._backward_rule(node.grad)
        for parent, g in zip(node._inputs, input_grads):
            if g is None or not parent.requires_grad:
                continue
            parent.accumulate_grad(g)


# -- binary elementwise ----------------------------------------------------


def _elementwise_pair(a, b, name: str):
    """Validate the same-shape-or-scalar contract and return lifted pair."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ and neither is scalar")
    return a, b


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Collapse a full-shape gradient onto a scalar operand.
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _elementwise_pair(a, b, "add")
    return primitive(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _elementwise_pair(a, b, "sub")
    return primitive(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _elementwise_pair(a, b, "mul")
    return primitive(
        a.data * b.data,
        (a, b),
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
        "mul",
    )


# -- unary elementwise -----------------------------------------------------


def relu(t: Tensor) -> Tensor:
    t = _lift(t)
    mask = t.data > 0.0
    return primitive(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,), "relu")


def sigmoid(t: Tensor) -> Tensor:
    """Logistic function in the branch form that never overflows."""
    t = _lift(t)
    x = t.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return primitive(out, (t,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log(t: Tensor) -> Tensor:
    t = _lift(t)
    if np.any(t.data <= 0.0):
        raise DomainError("log of non-positive value")
    return primitive(np.log(t.data), (t,), lambda g: (g / t.data,), "log")


def square(t: Tensor) -> Tensor:
    t = _lift(t)
    return primitive(t.data * t.data, (t,), lambda g: (g * 2.0 * t.data,), "square")


def powc(t: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    t = _lift(t)
    if exponent != int(exponent) and np.any(t.data < 0.0):
        raise DomainError("fractional power of negative value")
    if exponent < 0 and np.any(t.data == 0.0):
        raise DomainError("negative power of zero")
    out = np.power(t.data, exponent)
    return primitive(
        out,
        (t,),
        lambda g: (g * exponent * np.power(t.data, exponent - 1.0),),
        "powc",
    )


# -- reductions ------------------------------------------------------------


def _check_axis(t: Tensor, axis: Optional[int], name: str) -> None:
    if axis is not None and not (-t.data.ndim <= axis < t.data.ndim):
        raise DimensionError(f"{name}: axis {axis} invalid for shape {t.shape}")


def tensor_sum(t: Tensor, axis: Optional[int] = None) -> Tensor:
    t = _lift(t)
    _check_axis(t, axis, "sum")
    if axis is None:
        return primitive(
            np.asarray(t.data.sum()),
            (t,),
            lambda g: (np.full(t.shape, float(g), dtype=np.float64),),
            "sum",
        )
    return primitive(
        t.data.sum(axis=axis),
        (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), t.shape).copy(),),
        "sum",
    )


def tensor_mean(t: Tensor, axis: Optional[int] = None) -> Tensor:
    t = _lift(t)
    _check_axis(t, axis, "mean")
    if axis is None:
        n = t.data.size
        return primitive(
            np.asarray(t.data.mean()),
            (t,),
            lambda g: (np.full(t.shape, float(g) / n, dtype=np.float64),),
            "mean",
        )
    n = t.data.shape[axis]
    return primitive(
        t.data.mean(axis=axis),
        (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), t.shape).copy(),),
        "mean",
    )


# -- linear algebra and structure ------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    return primitive(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def transpose(t: Tensor) -> Tensor:
    t = _lift(t)
    if t.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got shape {t.shape}")
    return primitive(t.data.T.copy(), (t,), lambda g: (g.T.copy(),), "transpose")


def reshape(t: Tensor, shape) -> Tensor:
    t = _lift(t)
    shape = tuple(shape)
    if int(np.prod(shape, dtype=np.int64)) != t.data.size:
        raise DimensionError(f"cannot reshape {t.shape} to {shape}")
    return primitive(
        t.data.reshape(shape),
        (t,),
        lambda g: (g.reshape(t.shape),),
        "reshape",
    )


def add_rowvec(t: Tensor, v: Tensor) -> Tensor:
    """Add a length-F vector to every row of an (N, F) matrix."""
    t, v = _lift(t), _lift(v)
    if t.data.ndim != 2 or v.data.ndim != 1 or t.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: incompatible shapes {t.shape} and {v.shape}")
    return primitive(
        t.data + v.data[None, :],
        (t, v),
        lambda g: (g, g.sum(axis=0)),
        "add_rowvec",
    )


def mul_rowvec(t: Tensor, v: Tensor) -> Tensor:
    """Scale every column i of an (N, F) matrix by v[i]."""
    t, v = _lift(t), _lift(v)
    if t.data.ndim != 2 or v.data.ndim != 1 or t.shape[1] != v.shape[0]:
        raise DimensionError(f"mul_rowvec: incompatible shapes {t.shape} and {v.shape}")
    return primitive(
        t.data * v.data[None, :],
        (t, v),
        lambda g: (g * v.data[None, :], (g * t.data).sum(axis=0)),
        "mul_rowvec",
    )


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis (1-D vectors or 2-D row-aligned)."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim != b.data.ndim or a.data.ndim not in (1, 2):
        raise DimensionError(f"concat_cols: incompatible ranks {a.shape} and {b.shape}")
    if a.data.ndim == 2 and a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row counts differ: {a.shape} vs {b.shape}")
    k = a.shape[-1]
    return primitive(
        np.concatenate([a.data, b.data], axis=-1),
        (a, b),
        lambda g: (g[..., :k], g[..., k:]),
        "concat_cols",
    )


# -- convolution -----------------------------------------------------------


def conv1d(x: Tensor, kernels: Tensor, stride: int = 1) -> Tensor:
    """Valid (no-padding) cross-correlation along the last axis.

    ``x`` is (C_in, L) or batched (N, C_in, L); ``kernels`` is
    (C_out, C_in, W).  Output length is floor((L - W) / stride) + 1.
    """
    x, kernels = _lift(x), _lift(kernels)
    if kernels.data.ndim != 3:
        raise DimensionError(f"conv1d kernels must be 3-D, got shape {kernels.shape}")
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"conv1d input must be 2-D or 3-D, got shape {x.shape}")
    if not isinstance(stride, int) or stride < 1:
        raise ConfigurationError(f"conv1d stride must be an integer >= 1, got {stride!r}")

    batched = x.data.ndim == 3
    xb = x.data if batched else x.data[None, :, :]
    n, c_in, length = xb.shape
    c_out, kc_in, width = kernels.data.shape
    if kc_in != c_in:
        raise DimensionError(
            f"conv1d channel mismatch: input has {c_in} channels, kernels expect {kc_in}"
        )
    if width > length:
        raise ConfigurationError(
            f"conv1d kernel width {width} exceeds input length {length}"
        )
    out_len = (length - width) // stride + 1

    # Flatten strided windows to (N*L', C_in*W) so both passes are matmuls.
    windows = np.lib.stride_tricks.sliding_window_view(xb, width, axis=2)
    windows = windows[:, :, ::stride, :][:, :, :out_len, :]  # (N, C_in, L', W)
    flat_windows = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(
        n * out_len, c_in * width
    )
    flat_kernels = kernels.data.reshape(c_out, c_in * width)
    out = (
        (flat_windows @ flat_kernels.T).reshape(n, out_len, c_out).transpose(0, 2, 1)
    ).copy()

    def backward_rule(g: np.ndarray):
        gb = g if batched else g[None, :, :]
        flat_g = np.ascontiguousarray(gb.transpose(0, 2, 1)).reshape(n * out_len, c_out)
        grad_k = (flat_g.T @ flat_windows).reshape(c_out, c_in, width)
        grad_windows = (
            (flat_g @ flat_kernels)
            .reshape(n, out_len, c_in, width)
            .transpose(0, 2, 1, 3)
        )  # (N, C_in, L', W)
        grad_x = np.zeros_like(xb)
        for w in range(width):
            # Scatter into positions w, w+stride, ...; unique within one w.
            grad_x[:, :, w :: stride][:, :, :out_len] += grad_windows[:, :, :, w]
        return (grad_x if batched else grad_x[0], grad_k)

    return primitive(out if batched else out[0], (x, kernels), backward_rule, "conv1d")
