"""A small periodic-convolution network engine with explicit per-layer adjoints.

Public functions take channel-first arrays (``C x N`` or ``C x NX x NY``, with an
optional leading batch axis).  Internally activations are kept channels-last so
that every layer is one im2col gather followed by one matrix product.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import kernels

CHECKPOINT_MAGIC = b"MFSLCKP1"
ACTIVATIONS = ("identity", "relu")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    kernel: int
    activation: str = "relu"

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and positive, got {self.kernel}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def conv_stack(in_channels: int, out_channels: int, n_layers: int = 6, width: int = 32,
               kernel: int = 5) -> List[ConvLayerSpec]:
    """``n_layers`` convolutions: ReLU hidden layers of ``width`` filters, identity output."""
    chans = [in_channels] + [width] * (n_layers - 1) + [out_channels]
    return [ConvLayerSpec(chans[i], chans[i + 1], kernel,
                          "identity" if i == n_layers - 1 else "relu")
            for i in range(n_layers)]


@dataclass
class Network:
    specs: List[ConvLayerSpec]
    ndim: int
    weights: List[np.ndarray] = field(repr=False)  # (O, C, K[, K])
    biases: List[np.ndarray] = field(repr=False)

    def __post_init__(self):
        if self.ndim not in (1, 2):
            raise ValueError("networks are 1D or 2D")
        for a, b in zip(self.specs[:-1], self.specs[1:]):
            if a.out_channels != b.in_channels:
                raise ValueError("layer channel chain is inconsistent")
        for s, w, b in zip(self.specs, self.weights, self.biases):
            want = (s.out_channels, s.in_channels) + (s.kernel,) * self.ndim
            if w.shape != want or b.shape != (s.out_channels,):
                raise ValueError(f"parameter shape {w.shape} does not match spec {want}")

    @property
    def in_channels(self) -> int:
        return self.specs[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.specs[-1].out_channels

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Network":
        return Network(list(self.specs), self.ndim, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases])


def init_weights(specs: Sequence[ConvLayerSpec], seed: int, ndim: int = 1,
                 zero_final: bool = True) -> Network:
    """He-uniform init for ReLU layers; zero biases; zero final layer by default."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, s in enumerate(specs):
        shape = (s.out_channels, s.in_channels) + (s.kernel,) * ndim
        fan_in = s.in_channels * s.kernel ** ndim
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=shape)
        if zero_final and i == len(specs) - 1:
            w = np.zeros(shape)
        weights.append(w)
        biases.append(np.zeros(s.out_channels))
    return Network(list(specs), ndim, weights, biases)


def relu(x):
    return np.maximum(x, 0.0)


# --- channels-last primitives -------------------------------------------------

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    return kernels.im2col_1d(x, k) if x.ndim == 3 else kernels.im2col_2d(x, k)


def _wmat(w: np.ndarray) -> np.ndarray:
    """(O, C, K[, K]) -> (K^d * C, O) matching the im2col column order."""
    d = w.ndim - 2
    perm = tuple(range(2, 2 + d)) + (1, 0)
    return np.ascontiguousarray(w.transpose(perm)).reshape(-1, w.shape[0])


def _wmat_adjoint(w: np.ndarray) -> np.ndarray:
    """Matrix of the input-gradient correlation (flipped, channel-swapped kernel)."""
    d = w.ndim - 2
    flipped = w[(slice(None), slice(None)) + (slice(None, None, -1),) * d]
    return _wmat(np.swapaxes(flipped, 0, 1))


def _conv_cl(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray]) -> np.ndarray:
    k = w.shape[-1]
    y = _im2col(x, k) @ _wmat(w)
    if b is not None:
        y += b
    return y.reshape(x.shape[:-1] + (w.shape[0],))


def _to_cl(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, 1, -1))


def _to_cf(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.moveaxis(x, -1, 1))


def conv_periodic(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Circularly padded, centered cross-correlation.

    ``x`` is ``C x N`` (or ``C x NX x NY``), optionally batched; ``w`` is
    ``O x C x K`` (or ``O x C x K x K``).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    d = w.ndim - 2
    batched = x.ndim == d + 2
    if not batched:
        x = x[None]
    if x.ndim != d + 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"input shape {x.shape} incompatible with weights {w.shape}")
    if any(n < w.shape[-1] for n in x.shape[2:]):
        raise ValueError("grid smaller than the kernel")
    if b is not None and np.shape(b) != (w.shape[0],):
        raise ValueError("bias length must equal output channels")
    y = _to_cf(_conv_cl(_to_cl(x), w, b))
    return y if batched else y[0]


@dataclass
class ForwardCache:
    inputs: List[np.ndarray]   # channels-last input of every layer
    outputs: List[np.ndarray]  # channels-last output of every layer (post-activation)
    batched: bool


def forward_cl(net: Network, x: np.ndarray):
    """Channels-last forward pass; returns (output, cache)."""
    inputs, outputs = [], []
    h = x
    for s, w, b in zip(net.specs, net.weights, net.biases):
        if h.shape[-1] != s.in_channels:
            raise ValueError(f"expected {s.in_channels} input channels, got {h.shape[-1]}")
        inputs.append(h)
        h = _conv_cl(h, w, b)
        if s.activation == "relu":
            h = np.maximum(h, 0.0)
        outputs.append(h)
    return h, ForwardCache(inputs, outputs, True)


def backward_cl(net: Network, cache: Optional[ForwardCache], gy: np.ndarray,
                need_input_grad: bool = True):
    """Channels-last reverse pass; returns (param grads [dW0, db0, ...], input grad)."""
    if cache is None:
        raise ValueError("backward needs the cache from forward")
    grads = [None] * (2 * len(net.specs))
    g = gy
    for li in range(len(net.specs) - 1, -1, -1):
        s, w = net.specs[li], net.weights[li]
        if s.activation == "relu":
            g = g * (cache.outputs[li] > 0.0)
        gm = g.reshape(-1, s.out_channels)
        cols = _im2col(cache.inputs[li], s.kernel)
        gw = (cols.T @ gm).reshape(w.shape[2:] + (s.in_channels, s.out_channels))
        d = w.ndim - 2
        grads[2 * li] = np.ascontiguousarray(gw.transpose((d + 1, d) + tuple(range(d))))
        grads[2 * li + 1] = gm.sum(axis=0)
        if li > 0 or need_input_grad:
            g = (_im2col(g, s.kernel) @ _wmat_adjoint(w)).reshape(g.shape[:-1] + (s.in_channels,))
        else:
            g = None
    return grads, g


def forward(net: Network, x: np.ndarray):
    """Channel-first forward; returns (output, cache) with the batch axis optional."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == net.ndim + 2
    if not batched:
        x = x[None]
    y, cache = forward_cl(net, _to_cl(x))
    cache.batched = batched
    y = _to_cf(y)
    return (y if batched else y[0]), cache


def backward(net: Network, cache: Optional[ForwardCache], gy: np.ndarray):
    """Channel-first reverse pass; returns (param grads, input grad)."""
    if cache is None:
        raise ValueError("backward needs the cache from forward")
    gy = np.asarray(gy, dtype=np.float64)
    if not cache.batched:
        gy = gy[None]
    grads, gx = backward_cl(net, cache, _to_cl(gy))
    gx = _to_cf(gx)
    return grads, (gx if cache.batched else gx[0])


# --- Adam -----------------------------------------------------------------

@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], lr: float = 1e-3) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, lr)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState,
              lr: Optional[float] = None):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter / gradient / state counts differ")
    lr = state.lr if lr is None else lr
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --- checkpoint format ------------------------------------------------------

def _pack_f64(buf: io.BytesIO, arrs: Sequence[np.ndarray]) -> None:
    for a in arrs:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        st = struct.Struct(fmt)
        return st.unpack(self.take(st.size))

    def f64(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def checkpoint_bytes(nets: Sequence[Network], adam: Optional[AdamState] = None,
                     extra: Optional[dict] = None) -> bytes:
    """Serialize networks (+ optional Adam state and metadata) to the binary format.

    Layout: magic, net count, per-net spec table, parameter blocks, Adam flag and
    blocks, a JSON extra section, and a trailing CRC32 of everything before it.
    """
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(nets)))
    for net in nets:
        buf.write(struct.pack("<II", net.ndim, len(net.specs)))
        for s in net.specs:
            buf.write(struct.pack("<IIII", s.in_channels, s.out_channels, s.kernel,
                                  ACTIVATIONS.index(s.activation)))
    for net in nets:
        _pack_f64(buf, net.parameters())
    if adam is None:
        buf.write(struct.pack("<B", 0))
    else:
        buf.write(struct.pack("<BQdddd", 1, adam.step, adam.lr, adam.beta1, adam.beta2, adam.eps))
        _pack_f64(buf, adam.m)
        _pack_f64(buf, adam.v)
    blob = json.dumps(extra or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    data = buf.getvalue()
    return data + struct.pack("<I", zlib.crc32(data))


def checkpoint_from_bytes(data: bytes):
    if len(data) < len(CHECKPOINT_MAGIC) + 8:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if not body.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("bad checkpoint magic")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted)")
    r = _Reader(body)
    r.take(len(CHECKPOINT_MAGIC))
    (n_nets,) = r.unpack("<I")
    tables = []
    for _ in range(n_nets):
        ndim, n_layers = r.unpack("<II")
        specs = []
        for _ in range(n_layers):
            cin, cout, k, act = r.unpack("<IIII")
            specs.append(ConvLayerSpec(cin, cout, k, ACTIVATIONS[act]))
        tables.append((ndim, specs))
    nets = []
    for ndim, specs in tables:
        ws, bs = [], []
        for s in specs:
            ws.append(r.f64((s.out_channels, s.in_channels) + (s.kernel,) * ndim))
            bs.append(r.f64((s.out_channels,)))
        nets.append(Network(specs, ndim, ws, bs))
    (flag,) = r.unpack("<B")
    adam = None
    if flag:
        step, lr, b1, b2, eps = r.unpack("<Qdddd")
        shapes = [p.shape for net in nets for p in net.parameters()]
        m = [r.f64(s) for s in shapes]
        v = [r.f64(s) for s in shapes]
        adam = AdamState(m, v, step, lr, b1, b2, eps)
    (n_blob,) = r.unpack("<I")
    extra = json.loads(r.take(n_blob).decode())
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    return nets, adam, extra


def save_checkpoint(path, nets, adam=None, extra=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(nets, adam, extra))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
