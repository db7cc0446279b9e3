"""Fixed-architecture convolutional Q-network in plain numpy.

Layers (input is a 3 x F x F observation; shapes shown for F = 20)::

    conv1  3x3, 3->20, pad 1   -> 20 x 20 x 20
    conv2  4x4, 20->20         -> 17 x 17 x 20
    conv3  4x4, 20->5          -> 14 x 14 x 5
    fc1    980 -> 64
    fc2    64 -> 5             (no output nonlinearity)

Activations are stored channel-last internally; ``fc1`` consumes the conv3
output flattened in (row, column, channel) order.
"""

from __future__ import annotations

import hashlib
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

N_ACTIONS = 5
CONV_LAYERS = (
    # name, in_channels, out_channels, kernel, padding
    ("conv1", 3, 20, 3, 1),
    ("conv2", 20, 20, 4, 0),
    ("conv3", 20, 5, 4, 0),
)
HIDDEN = 64
LAYER_NAMES = ("conv1", "conv2", "conv3", "fc1", "fc2")


def conv_out_side(F: int) -> int:
    side = F
    for _, _, _, k, p in CONV_LAYERS:
        side = side + 2 * p - k + 1
    return side


def architecture_string(F: int) -> str:
    convs = "|".join(f"conv{k}x{k}x{cin}->{cout}/p{p}" for _, cin, cout, k, p in CONV_LAYERS)
    flat = conv_out_side(F) ** 2 * CONV_LAYERS[-1][2]
    return f"F{F}|{convs}|fc{flat}->{HIDDEN}|fc{HIDDEN}->{N_ACTIONS}|relu|nhwc"


def architecture_hash(F: int) -> bytes:
    return hashlib.sha256(architecture_string(F).encode()).digest()


class OpCounter:
    """Tallies multiplications, additions and activations per layer.

    A dense product of an ``n x k`` block with ``k x m`` weights plus bias and
    activation costs ``n*m*k`` multiplies, ``n*m*k`` adds and ``n*m`` activations.
    The identity on the output layer is charged as an activation as well.
    """

    def __init__(self):
        self.counts: dict[str, int] = {}

    def record(self, layer: str, n: int, k: int, m: int) -> None:
        self.counts[layer] = self.counts.get(layer, 0) + n * m * (2 * k + 1)

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _im2col(x: np.ndarray, k: int, pad: int):
    """(B, H, W, C) -> (B*oh*ow, k*k*C) patches, columns ordered (kh, kw, C)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # B, oh, ow, C, kh, kw
    B, oh, ow = win.shape[:3]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(B * oh * ow, -1), (B, oh, ow)


def _as_matrix(w: np.ndarray) -> np.ndarray:
    """(out, in, kh, kw) kernel -> (out, kh*kw*in) to match :func:`_im2col`."""
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


class QNetwork:
    def __init__(self, F: int = 20, rng: np.random.Generator | None = None, dtype=np.float32):
        if conv_out_side(F) < 1:
            raise ValueError(f"window F={F} too small for the conv stack")
        self.F = F
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self._cache = None
        rng = rng if rng is not None else np.random.default_rng(0)
        for name, cin, cout, k, _ in CONV_LAYERS:
            self._init_layer(name, (cout, cin, k, k), cin * k * k, rng)
        flat = conv_out_side(F) ** 2 * CONV_LAYERS[-1][2]
        self._init_layer("fc1", (HIDDEN, flat), flat, rng)
        self._init_layer("fc2", (N_ACTIONS, HIDDEN), HIDDEN, rng)

    def _init_layer(self, name, shape, fan_in, rng):
        bound = 1.0 / np.sqrt(fan_in)
        self.params[f"{name}.w"] = rng.uniform(-bound, bound, shape).astype(self.dtype)
        self.params[f"{name}.b"] = rng.uniform(-bound, bound, shape[0]).astype(self.dtype)

    # -- plumbing ----------------------------------------------------------

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.F, other.dtype, other._cache = self.F, self.dtype, None
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def load_state(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].shape}")
            self.params[k][...] = v

    def astype(self, dtype) -> "QNetwork":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        other.params = {k: v.astype(dtype) for k, v in other.params.items()}
        return other

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes as (side, side, channels) or (units,)."""
        shapes, side = [], self.F
        for _, _, cout, k, p in CONV_LAYERS:
            side = side + 2 * p - k + 1
            shapes.append((side, side, cout))
        return shapes + [(HIDDEN,), (N_ACTIONS,)]

    # -- forward / backward ------------------------------------------------

    def _prepare(self, obs) -> tuple[np.ndarray, bool]:
        x = np.asarray(obs, dtype=self.dtype)
        single = x.ndim == 3
        if single:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != (3, self.F, self.F):
            raise ValueError(f"observation must be (3, {self.F}, {self.F}) or batched, got {x.shape}")
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1)), single

    def forward(self, obs, counter: OpCounter | None = None, keep_cache: bool = False) -> np.ndarray:
        """Q-values: shape (5,) for one observation or (B, 5) for a batch."""
        h, single = self._prepare(obs)
        P = self.params
        cache = []
        for name, _, cout, k, pad in CONV_LAYERS:
            cols, (B, oh, ow) = _im2col(h, k, pad)
            w = _as_matrix(P[f"{name}.w"])
            z = cols @ w.T + P[f"{name}.b"]
            if counter is not None:
                counter.record(name, cols.shape[0], cols.shape[1], cout)
            h = np.maximum(z, 0).reshape(B, oh, ow, cout)
            cache.append((cols, z > 0, (B, oh, ow)))
        flat = h.reshape(h.shape[0], -1)
        z1 = flat @ P["fc1.w"].T + P["fc1.b"]
        a1 = np.maximum(z1, 0)
        q = a1 @ P["fc2.w"].T + P["fc2.b"]
        if counter is not None:
            counter.record("fc1", *flat.shape, HIDDEN)
            counter.record("fc2", *a1.shape, N_ACTIONS)
        if keep_cache:
            self._cache = (cache, flat, z1 > 0, a1)
        return q[0] if single else q

    def backward(self, dq: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the loss w.r.t. every parameter, given dL/dQ for the cached batch."""
        if self._cache is None:
            raise RuntimeError("backward needs a forward pass with keep_cache=True")
        cache, flat, mask1, a1 = self._cache
        P = self.params
        dq = np.asarray(dq, self.dtype).reshape(-1, N_ACTIONS)
        g = {"fc2.w": dq.T @ a1, "fc2.b": dq.sum(0)}
        dz1 = (dq @ P["fc2.w"]) * mask1
        g["fc1.w"] = dz1.T @ flat
        g["fc1.b"] = dz1.sum(0)
        dh = (dz1 @ P["fc1.w"]).reshape(-1, *self.layer_shapes()[2])
        for idx in range(len(CONV_LAYERS) - 1, -1, -1):
            name, cin, cout, k, pad = CONV_LAYERS[idx]
            cols, mask, (B, oh, ow) = cache[idx]
            dz = dh.reshape(-1, cout) * mask
            g[f"{name}.w"] = np.ascontiguousarray((dz.T @ cols).reshape(cout, k, k, cin).transpose(0, 3, 1, 2))
            g[f"{name}.b"] = dz.sum(0)
            if idx == 0:
                break
            # input gradient: full correlation with the flipped kernel
            dzp = dz.reshape(B, oh, ow, cout)
            dcols, (_, ih, iw) = _im2col(dzp, k, k - 1)
            wf = _as_matrix(P[f"{name}.w"][:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            dx = (dcols @ wf.T).reshape(B, ih, iw, cin)
            if pad:
                dx = dx[:, pad:-pad, pad:-pad, :]
            dh = dx
        return {k: g[k] for k in P}

    def loss_and_grads(self, obs, actions, targets) -> tuple[float, dict[str, np.ndarray]]:
        """Mean of 0.5 * (Q(o, a) - y)**2 over the batch and its gradients."""
        q = self.forward(obs, keep_cache=True)
        q = q.reshape(-1, N_ACTIONS)
        actions = np.asarray(actions, np.int64).reshape(-1)
        targets = np.asarray(targets, self.dtype).reshape(-1)
        B = len(actions)
        resid = q[np.arange(B), actions] - targets
        dq = np.zeros_like(q)
        dq[np.arange(B), actions] = resid / B
        loss = 0.5 * float(np.mean(resid.astype(np.float64) ** 2))
        return loss, self.backward(dq)


def backward(net: QNetwork, obs, action: int, td_target: float) -> dict[str, np.ndarray]:
    """Gradient of 0.5 * (Q(obs, action) - td_target)**2 for a single observation."""
    return net.loss_and_grads(np.asarray(obs)[None], [action], [td_target])[1]


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    """Rectified Adam (RAdam) state."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def rho_inf(self) -> float:
        return 2.0 / (1.0 - self.beta2) - 1.0

    def rectification(self, t: int) -> float | None:
        """Variance rectification factor at step ``t``; None while the variance is intractable."""
        b2t = self.beta2**t
        rho_t = self.rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        if rho_t <= 4.0:
            return None
        ri = self.rho_inf
        return float(np.sqrt((rho_t - 4) * (rho_t - 2) * ri / ((ri - 4) * (ri - 2) * rho_t)))


def apply_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: OptimizerState) -> None:
    """One RAdam step, in place."""
    opt.step += 1
    t = opt.step
    r = opt.rectification(t)
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for k, p in params.items():
        g = grads[k]
        if k not in opt.m:
            opt.m[k] = np.zeros_like(p)
            opt.v[k] = np.zeros_like(p)
        m, v = opt.m[k], opt.v[k]
        m *= opt.beta1
        m += (1 - opt.beta1) * g
        v *= opt.beta2
        v += (1 - opt.beta2) * g * g
        m_hat = m / bc1
        if r is None:
            p -= (opt.lr * m_hat).astype(p.dtype)
        else:
            adapt = np.sqrt(bc2) / (np.sqrt(v) + opt.eps)
            p -= (opt.lr * r * m_hat * adapt).astype(p.dtype)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------
#
# Little-endian throughout.
#
#   magic        8 bytes  b"UAVQNET\x00"
#   version      u16
#   arch_hash    32 bytes sha256 of architecture_string(F)
#   F            u32
#   rho          f64
#   opt_step     u64      optimiser step counter
#   grad_steps   u64      gradient steps taken by the trainer
#   episodes     u64      training episodes completed
#   lr, beta1, beta2, eps    4 x f64
#   n_arrays     u32
#   n_arrays x { name_len u16, name utf-8, dtype u8 (0=f32, 1=f64),
#                ndim u8, shape ndim x u32, raw data }
#   crc32        u32      over every preceding byte
#
# Array names: "<param>" for the update network, "target/<param>" for the
# target network (optional), "m/<param>" and "v/<param>" for RAdam moments.

MAGIC = b"UAVQNET\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_HEAD = struct.Struct("<8sH32sIdQQQddddI")


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


class IncompatibleCheckpointError(CheckpointError):
    """Checkpoint fingerprint does not match the requested configuration."""


@dataclass
class Checkpoint:
    net: QNetwork
    opt: OptimizerState
    rho: float
    target: QNetwork | None = None
    grad_steps: int = 0
    episodes: int = 0


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    arrays = dict(ck.net.params)
    if ck.target is not None:
        arrays.update({f"target/{k}": v for k, v in ck.target.params.items()})
    arrays.update({f"m/{k}": v for k, v in ck.opt.m.items()})
    arrays.update({f"v/{k}": v for k, v in ck.opt.v.items()})
    opt = ck.opt
    out = [
        _HEAD.pack(
            MAGIC, VERSION, architecture_hash(ck.net.F), ck.net.F, float(ck.rho), opt.step,
            ck.grad_steps, ck.episodes, opt.lr, opt.beta1, opt.beta2, opt.eps, len(arrays),
        )
    ]
    for name, arr in arrays.items():
        code = 0 if arr.dtype == np.float32 else 1
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(data: bytes, F: int | None = None, rho: float | None = None) -> Checkpoint:
    """Parse a checkpoint; ``F``/``rho`` when given must match the stored fingerprint."""
    if len(data) < _HEAD.size + 4:
        raise CheckpointError("checkpoint truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint corrupt or truncated (crc mismatch)")
    (magic, version, ahash, ck_F, ck_rho, step, gsteps, episodes, lr, b1, b2, eps, n) = _HEAD.unpack_from(body)
    if magic != MAGIC:
        raise CheckpointError("not a uavswarm checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if ahash != architecture_hash(ck_F):
        raise IncompatibleCheckpointError("architecture hash mismatch")
    if F is not None and F != ck_F:
        raise IncompatibleCheckpointError(f"checkpoint has F={ck_F}, expected F={F}")
    if rho is not None and rho != ck_rho:
        raise IncompatibleCheckpointError(f"checkpoint has rho={ck_rho}, expected rho={rho}")
    off = _HEAD.size
    arrays = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off : off + ln].decode()
            off += ln
            code, ndim = struct.unpack_from("<BB", body, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", body, off)
            off += 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape)) * dt.itemsize
            if off + size > len(body):
                raise CheckpointError("array data truncated")
            arrays[name] = np.frombuffer(body, dt, int(np.prod(shape)), off).reshape(shape).astype(dt.newbyteorder("="))
            off += size
    except (struct.error, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from exc
    if off != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    dtype = arrays["conv1.w"].dtype
    net = QNetwork(ck_F, dtype=dtype)
    net.load_state({k: v for k, v in arrays.items() if "/" not in k})
    target = None
    if "target/conv1.w" in arrays:
        target = net.copy()
        target.load_state({k[7:]: v for k, v in arrays.items() if k.startswith("target/")})
    opt = OptimizerState(lr, b1, b2, eps, step)
    opt.m = {k[2:]: v for k, v in arrays.items() if k.startswith("m/")}
    opt.v = {k[2:]: v for k, v in arrays.items() if k.startswith("v/")}
    return Checkpoint(net, opt, ck_rho, target, gsteps, episodes)


def save_checkpoint(path, ck: Checkpoint) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ck))
    tmp.replace(path)


def load_checkpoint(path, F: int | None = None, rho: float | None = None) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), F, rho)
