"""Network building blocks on top of the autodiff engine.

Dense / Conv2d / BatchNorm layers, a named parameter container with Adam
state, the plateau learning-rate schedule, and the binary checkpoint
format (magic ``JFPW``).
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import (
    ContractError,
    Tensor,
    add,
    conv2d,
    div,
    matmul,
    mul,
    relu,
    sqrt,
    square,
    sub,
    tmean,
)

__all__ = [
    "ModelParams",
    "Dense",
    "Conv2d",
    "BatchNorm",
    "adam_step",
    "plateau_scheduler",
    "glorot_uniform",
    "save_params",
    "load_params",
    "CheckpointError",
]

CHECKPOINT_MAGIC = b"JFPW"


class CheckpointError(IOError):
    """Malformed or mismatched checkpoint file."""


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Named trainable tensors plus per-parameter Adam state.

    Non-trainable state (batchnorm running statistics) is kept in
    `buffers`; both parameters and buffers go into checkpoints.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: dict[str, int] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self.adam_m[name] = np.zeros_like(t.data)
        self.adam_v[name] = np.zeros_like(t.data)
        self.adam_t[name] = 0
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise ValueError(f"duplicate parameter name: {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        self.buffers[name] = arr
        return arr

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def n_scalars(self) -> int:
        return sum(t.size for t in self.params.values())

    def state_items(self):
        """All named arrays that belong in a checkpoint, insertion order."""
        for name, t in self.params.items():
            yield name, t.data
        for name, arr in self.buffers.items():
            yield name, arr


def adam_step(params: ModelParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One Adam update over every parameter; clears gradients afterwards."""
    b1, b2 = betas
    for name, p in params.params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    for name, p in params.params.items():
        g = p.grad
        t = params.adam_t[name] + 1
        params.adam_t[name] = t
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None


def plateau_scheduler(
    history,
    lr: float,
    patience: int = 20,
    tol: float = 1e-4,
    factor: float = 0.5,
    min_lr: float = 1e-4,
) -> float:
    """Halve `lr` (floored at `min_lr`) once the loss has sat unchanged.

    `history` is the sequence of epoch losses since the learning rate was
    last changed. An epoch "improves" when it beats the running best by
    more than `tol`; once the current best value has persisted `patience`
    epochs the rate is halved. Callers should restart `history` after a
    halving, otherwise the plateau keeps firing every epoch.
    """
    best = np.inf
    persisted = 0
    for loss in history:
        if loss < best - tol:
            best = loss
            persisted = 1
        else:
            persisted += 1
    if persisted >= patience:
        return max(lr * factor, min_lr)
    return lr


# -- layers ------------------------------------------------------------------


class Dense:
    """Affine map y = x @ W + b over the last axis."""

    def __init__(self, params: ModelParams, name: str, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.w = params.add(f"{name}.w", glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)))
        self.b = params.add(f"{name}.b", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


class Conv2d:
    """3x3-style 2-D convolution, stride 1, zero padding, NCHW."""

    def __init__(
        self,
        params: ModelParams,
        name: str,
        in_ch: int,
        out_ch: int,
        kernel: int,
        rng: np.random.Generator,
        padding: int | None = None,
    ):
        fan_in = in_ch * kernel * kernel
        fan_out = out_ch * kernel * kernel
        self.w = params.add(f"{name}.w", glorot_uniform(rng, fan_in, fan_out, (out_ch, in_ch, kernel, kernel)))
        self.b = params.add(f"{name}.b", np.zeros(out_ch))
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, padding=self.padding)


class BatchNorm:
    """Batch normalization over the batch (and spatial) axes.

    `training` is a required call argument: True normalizes with batch
    statistics and updates the running estimates, False uses the stored
    running estimates (a deterministic affine map).
    """

    def __init__(self, params: ModelParams, name: str, dim: int, momentum: float = 0.9, eps: float = 1e-5):
        self.gamma = params.add(f"{name}.gamma", np.ones(dim))
        self.beta = params.add(f"{name}.beta", np.zeros(dim))
        self.running_mean = params.add_buffer(f"{name}.running_mean", np.zeros(dim))
        self.running_var = params.add_buffer(f"{name}.running_var", np.ones(dim))
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if x.ndim == 2:
            axes, pshape = (0,), (1, -1)
        elif x.ndim == 4:
            axes, pshape = (0, 2, 3), (1, -1, 1, 1)
        else:
            raise ContractError(f"BatchNorm expects 2-D or 4-D input, got {x.shape}")
        gamma = self.gamma.reshape(*pshape)
        beta = self.beta.reshape(*pshape)
        if training:
            mu = tmean(x, axis=axes, keepdims=True)
            var = tmean(square(sub(x, mu)), axis=axes, keepdims=True)
            m = self.momentum
            self.running_mean *= m
            self.running_mean += (1.0 - m) * mu.data.reshape(-1)
            self.running_var *= m
            self.running_var += (1.0 - m) * var.data.reshape(-1)
        else:
            mu = Tensor(self.running_mean.reshape(pshape))
            var = Tensor(self.running_var.reshape(pshape))
        xhat = div(sub(x, mu), sqrt(add(var, self.eps)))
        return add(mul(gamma, xhat), beta)


# -- checkpoint format ---------------------------------------------------------

# layout (little-endian):
#   magic "JFPW" | u32 record count | records...
#   record: u32 name length | utf-8 name | u32 rank | u32 dims[rank] | f64 payload


def save_params(params: ModelParams, path):
    records = list(params.state_items())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(params: ModelParams, path):
    """Load checkpoint values into an already-built parameter set, in place."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    seen = {}
    for _ in range(count):
        try:
            (nlen,) = struct.unpack_from("<I", blob, off)
            off += 4
            name = blob[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
            off += 8 * n
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated or corrupt record: {exc}") from exc
        seen[name] = payload
    expected = dict(params.state_items())
    if set(seen) != set(expected):
        missing = sorted(set(expected) - set(seen))
        extra = sorted(set(seen) - set(expected))
        raise CheckpointError(f"{path}: parameter names mismatch (missing {missing}, unexpected {extra})")
    for name, arr in seen.items():
        if name in params.params:
            target = params.params[name].data
        else:
            target = params.buffers[name]
        if target.shape != arr.shape:
            raise CheckpointError(f"{path}: shape mismatch for {name!r}: file {arr.shape}, model {target.shape}")
        target[...] = arr
