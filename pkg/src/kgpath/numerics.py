"""Tensor ops, parameter storage, Adam and checkpoint files on top of torch autograd.

Every op accepts leading batch dimensions.  Shape violations raise
:class:`DimensionError` naming both shapes.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F

DTYPES = {"float64": torch.float64, "float32": torch.float32}
_CODES = {torch.float64: "<f8", torch.float32: "<f4", torch.int64: "<i8"}
_MAGIC = b"KGPTNSR1"

_debug_finite = False


class DimensionError(ValueError):
    pass


def set_debug(enabled: bool) -> None:
    """Check every op output for NaN/inf (slow; used by the test suite)."""
    global _debug_finite
    _debug_finite = enabled


def _out(t: torch.Tensor) -> torch.Tensor:
    if _debug_finite and t.is_floating_point() and not torch.isfinite(t).all():
        raise FloatingPointError("non-finite value produced")
    return t


def _shape_error(op, a, b):
    return DimensionError(f"{op}: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}")


# ---------------------------------------------------------------- random streams

def stream(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``seed`` and any integer ``keys``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *keys])))


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(rng.integers(0, 2**62)))
    return g


# ---------------------------------------------------------------- forward ops

def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise _shape_error("matmul", a, b)
    return _out(a @ b)


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise _shape_error("linear", x, weight)
    return _out(F.linear(x, weight, bias))


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise _shape_error("add", a, b) from None
    return _out(a + b)


def concat(tensors: list[torch.Tensor], dim: int = -1) -> torch.Tensor:
    ref = tensors[0]
    for t in tensors[1:]:
        if t.dim() != ref.dim() or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape)) if i != dim % ref.dim()
        ):
            raise _shape_error("concat", ref, t)
    return _out(torch.cat(tensors, dim=dim))


def slice_(x: torch.Tensor, start: int, stop: int, dim: int = -1) -> torch.Tensor:
    return x.narrow(dim, start, stop - start)


def embedding_gather(table: torch.Tensor, ids) -> torch.Tensor:
    ids = torch.as_tensor(ids, dtype=torch.long)
    if ids.numel() and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.shape[0]} rows")
    return table[ids]


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return _out(torch.softmax(x, dim=dim))


def masked_log_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Log-softmax where ``mask == False`` entries get probability 0 (log = -inf)."""
    if mask.shape != logits.shape:
        raise _shape_error("masked_log_softmax", logits, mask)
    filled = logits.masked_fill(~mask, float("-inf"))
    return torch.log_softmax(filled, dim=dim)


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Softmax over unmasked entries; rows with nothing unmasked return all zeros."""
    if mask.shape != logits.shape:
        raise _shape_error("masked_softmax", logits, mask)
    filled = logits.masked_fill(~mask, float("-inf"))
    empty = ~mask.any(dim=dim, keepdim=True)
    filled = filled.masked_fill(empty, 0.0)
    return _out(torch.softmax(filled, dim=dim).masked_fill(empty, 0.0))


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return _out(torch.sigmoid(x))


def relu(x: torch.Tensor) -> torch.Tensor:
    return _out(torch.relu(x))


def leaky_relu(x: torch.Tensor, slope: float = 0.01) -> torch.Tensor:
    return _out(F.leaky_relu(x, negative_slope=slope))


def layer_norm(x: torch.Tensor, gain: torch.Tensor | None = None, bias: torch.Tensor | None = None,
               eps: float = 1e-5) -> torch.Tensor:
    """Normalise the last axis to zero mean / unit (biased) variance, then apply the affine."""
    if gain is not None and gain.shape[-1] != x.shape[-1]:
        raise _shape_error("layer_norm", x, gain)
    mean = x.mean(dim=-1, keepdim=True)
    var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
    y = (x - mean) / torch.sqrt(var + eps)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return _out(y)


def dropout(x: torch.Tensor, rate: float, generator: torch.Generator | None, train: bool) -> torch.Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not train or rate <= 0.0:
        return x
    if generator is None:
        raise ValueError("dropout in training mode needs an explicit generator")
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= rate
    return _out(x * keep / (1.0 - rate))


def conv2d(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None,
           padding: int = 0) -> torch.Tensor:
    """Stride-1 convolution. ``x``: (B, C_in, H, W); ``kernels``: (C_out, C_in, kh, kw)."""
    if x.dim() != 4 or kernels.dim() != 4 or x.shape[1] != kernels.shape[1]:
        raise _shape_error("conv2d", x, kernels)
    if x.shape[2] + 2 * padding < kernels.shape[2] or x.shape[3] + 2 * padding < kernels.shape[3]:
        raise _shape_error("conv2d", x, kernels)
    return _out(F.conv2d(x, kernels, bias, stride=1, padding=padding))


def lstm_cell(x: torch.Tensor, state: tuple[torch.Tensor, torch.Tensor],
              w_ih: torch.Tensor, w_hh: torch.Tensor, bias: torch.Tensor):
    """One LSTM step, gate order (input, forget, cell, output). Returns (h, c)."""
    h, c = state
    if x.shape[-1] != w_ih.shape[-1]:
        raise _shape_error("lstm_cell", x, w_ih)
    if h.shape[-1] != w_hh.shape[-1]:
        raise _shape_error("lstm_cell", h, w_hh)
    gates = F.linear(x, w_ih) + F.linear(h, w_hh) + bias
    i, f, g, o = gates.chunk(4, dim=-1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return _out(h_new), _out(c_new)


def lstm_stack(x: torch.Tensor, states: list[tuple[torch.Tensor, torch.Tensor]],
               weights: list[tuple[torch.Tensor, torch.Tensor, torch.Tensor]]):
    """Run ``x`` through stacked cells; returns (top h, new per-layer states)."""
    new_states = []
    inp = x
    for (w_ih, w_hh, b), st in zip(weights, states):
        h, c = lstm_cell(inp, st, w_ih, w_hh, b)
        new_states.append((h, c))
        inp = h
    return inp, new_states


def entropy_from_log_probs(log_probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    p = log_probs.exp()
    return -(p * log_probs.masked_fill(~mask, 0.0)).sum(dim=-1)


# ---------------------------------------------------------------- init

def xavier_normal(shape, rng: np.random.Generator, dtype=torch.float64,
                  fan: tuple[int, int] | None = None) -> torch.Tensor:
    """N(0, 2 / (fan_in + fan_out)); fans default to the last two dims of ``shape``."""
    if fan is None:
        fan_out, fan_in = (shape[0], shape[0]) if len(shape) == 1 else (shape[-2], shape[-1])
        if len(shape) > 2:
            receptive = int(np.prod(shape[2:]))
            fan_out, fan_in = shape[0] * receptive, shape[1] * receptive
    else:
        fan_in, fan_out = fan
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return torch.as_tensor(rng.normal(0.0, std, size=shape), dtype=dtype)


# ---------------------------------------------------------------- parameters

class ParamStore:
    """Named leaf tensors plus their Adam state."""

    def __init__(self, dtype=torch.float64):
        self.dtype = dtype
        self._params: dict[str, torch.Tensor] = {}
        self._optimizer: torch.optim.Adam | None = None
        self._opt_args: dict = {}

    def add(self, name: str, value) -> torch.Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = torch.as_tensor(value, dtype=self.dtype).clone().requires_grad_(True)
        self._params[name] = t
        self._optimizer = None
        return t

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]

    def grads(self) -> dict[str, torch.Tensor | None]:
        return {n: p.grad for n, p in self._params.items()}

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def set_values(self, values: Mapping[str, torch.Tensor]) -> None:
        with torch.no_grad():
            for name, v in values.items():
                p = self._params[name]
                if tuple(v.shape) != tuple(p.shape):
                    raise DimensionError(f"{name}: checkpoint shape {tuple(v.shape)} vs {tuple(p.shape)}")
                p.copy_(v)

    def snapshot(self) -> dict[str, torch.Tensor]:
        return {n: p.detach().clone() for n, p in self._params.items()}

    def optimizer(self, lr=0.001, betas=(0.9, 0.999), eps=1e-8) -> torch.optim.Adam:
        args = {"lr": lr, "betas": tuple(betas), "eps": eps}
        if self._optimizer is None or args != self._opt_args:
            self._optimizer = torch.optim.Adam(list(self._params.values()), foreach=False, **args)
            self._opt_args = args
        return self._optimizer

    def adam_steps(self) -> int:
        if self._optimizer is None:
            return 0
        steps = [int(s["step"]) for s in self._optimizer.state.values() if "step" in s]
        return max(steps, default=0)


def backward(loss: torch.Tensor, params: ParamStore) -> dict[str, torch.Tensor]:
    """Populate ``.grad`` of every parameter; unreachable parameters get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = list(params)
    tensors = [params[n] for n in names]
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    out = {}
    for name, p, g in zip(names, tensors, grads):
        p.grad = torch.zeros_like(p) if g is None else g.detach()
        out[name] = p.grad
    return out


def adam_step(params: ParamStore, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, clip_norm: float | None = None) -> None:
    """One bias-corrected Adam update from the gradients currently on ``params``."""
    tensors = [p for _, p in params.items()]
    for p in tensors:
        if p.grad is None:
            p.grad = torch.zeros_like(p)
    if clip_norm is not None:
        torch.nn.utils.clip_grad_norm_(tensors, clip_norm)
    params.optimizer(lr, (beta1, beta2), eps).step()


# ---------------------------------------------------------------- checkpoint container

def save_tensors(path, tensors: Mapping[str, torch.Tensor]) -> None:
    """Header (JSON, names/dtypes/shapes) followed by raw little-endian values."""
    entries, blobs = [], []
    for name, t in tensors.items():
        t = t.detach().cpu().contiguous()
        code = _CODES[t.dtype]
        arr = t.numpy().astype(code, copy=False)
        entries.append({"name": name, "dtype": code, "shape": list(t.shape)})
        blobs.append(arr.tobytes(order="C"))
    header = json.dumps(entries).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b)


def load_tensors(path) -> dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a tensor container")
    (hlen,) = struct.unpack("<Q", data[8:16])
    entries = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    out = {}
    for e in entries:
        dt = np.dtype(e["dtype"])
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arr = np.frombuffer(data, dtype=dt, count=count, offset=offset).reshape(e["shape"])
        offset += count * dt.itemsize
        out[e["name"]] = torch.from_numpy(arr.copy())
    return out


def write_manifest(path, **fields) -> None:
    Path(path).write_text(json.dumps(fields, indent=2, sort_keys=False))


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def flat(tensors: Iterable[torch.Tensor]) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for t in tensors])
