"""Hand-rolled differentiable Q-network.

Image branch: three stride-2 3x3 conv+ReLU stages, flattened into a dense
layer, concatenated with the pose and wrench vectors, followed by a two-layer
MLP trunk and dueling value/advantage heads.  All math is float32 numpy;
reverse-mode gradients are implemented per layer (no general autodiff).
"""

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"PEGDQNCK"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagic(CheckpointError):
    pass


class BadVersion(CheckpointError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


class ActionSetMismatch(CheckpointError):
    pass


class TruncatedCheckpoint(CheckpointError):
    pass


@dataclass
class Architecture:
    image_size: int = 64
    conv_channels: tuple = (8, 16, 32)
    image_dense: int = 128
    n_pose: int = 6
    n_wrench: int = 5
    trunk: tuple = (128, 64)
    n_actions: int = 27

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.trunk = tuple(self.trunk)
        if self.image_size % (2 ** len(self.conv_channels)) != 0:
            raise ValueError("image size must be divisible by the conv stride product")

    @property
    def conv_out_side(self) -> int:
        return self.image_size // (2 ** len(self.conv_channels))

    @property
    def flat_size(self) -> int:
        return self.conv_out_side ** 2 * self.conv_channels[-1]

    def to_json(self) -> str:
        return json.dumps({"image_size": self.image_size,
                           "conv_channels": list(self.conv_channels),
                           "image_dense": self.image_dense,
                           "n_pose": self.n_pose, "n_wrench": self.n_wrench,
                           "trunk": list(self.trunk), "n_actions": self.n_actions},
                          sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Architecture":
        d = json.loads(text)
        return cls(image_size=d["image_size"], conv_channels=tuple(d["conv_channels"]),
                   image_dense=d["image_dense"], n_pose=d["n_pose"],
                   n_wrench=d["n_wrench"], trunk=tuple(d["trunk"]),
                   n_actions=d["n_actions"])


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class NetworkParams:
    """Named parameter arrays in a fixed declaration order."""

    def __init__(self, arch: Architecture, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params

    @classmethod
    def layer_shapes(cls, arch: Architecture) -> list[tuple[str, tuple]]:
        shapes = []
        in_ch = 1
        for i, out_ch in enumerate(arch.conv_channels):
            shapes.append((f"conv{i}_w", (out_ch, in_ch, 3, 3)))
            shapes.append((f"conv{i}_b", (out_ch,)))
            in_ch = out_ch
        shapes.append(("img_dense_w", (arch.flat_size, arch.image_dense)))
        shapes.append(("img_dense_b", (arch.image_dense,)))
        width = arch.image_dense + arch.n_pose + arch.n_wrench
        for i, w in enumerate(arch.trunk):
            shapes.append((f"trunk{i}_w", (width, w)))
            shapes.append((f"trunk{i}_b", (w,)))
            width = w
        shapes.append(("val_w", (width, 1)))
        shapes.append(("val_b", (1,)))
        shapes.append(("adv_w", (width, arch.n_actions)))
        shapes.append(("adv_b", (arch.n_actions,)))
        return shapes

    @classmethod
    def init(cls, arch: Architecture, seed: int) -> "NetworkParams":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.layer_shapes(arch):
            if name.endswith("_b"):
                params[name] = np.zeros(shape, dtype=np.float32)
            elif name.startswith("conv"):
                fan_in = shape[1] * shape[2] * shape[3]
                params[name] = _fan_in_uniform(rng, shape, fan_in)
            else:
                params[name] = _fan_in_uniform(rng, shape, shape[0])
        return cls(arch, params)

    @classmethod
    def zeros(cls, arch: Architecture) -> "NetworkParams":
        return cls(arch, {name: np.zeros(shape, dtype=np.float32)
                          for name, shape in cls.layer_shapes(arch)})

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.params.items()})

    def names(self) -> list[str]:
        return [name for name, _ in self.layer_shapes(self.arch)]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]


# -- layer primitives ------------------------------------------------------

def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """3x3 convolution, stride 2, pad 1.  x: (B, C, H, W)."""
    bsz, _, h, wd = x.shape
    ho, wo = h // 2, wd // 2
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((bsz, x.shape[1], 3, 3, ho, wo), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, ki, kj] = xp[:, :, ki:ki + 2 * ho:2, kj:kj + 2 * wo:2]
    out = np.tensordot(cols, w, axes=([1, 2, 3], [1, 2, 3]))  # (B, Ho, Wo, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + b[None, :, None, None]
    return out, cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape):
    db = dout.sum(axis=(0, 2, 3))
    dw = np.tensordot(dout, cols, axes=([0, 2, 3], [0, 4, 5]))  # (O, C, 3, 3)
    dcols = np.tensordot(dout, w, axes=([1], [0]))  # (B, Ho, Wo, C, 3, 3)
    dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
    bsz, c, h, wd = x_shape
    ho, wo = h // 2, wd // 2
    dxp = np.zeros((bsz, c, h + 2, wd + 2), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki:ki + 2 * ho:2, kj:kj + 2 * wo:2] += dcols[:, :, ki, kj]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def dueling_combine(val: np.ndarray, adv: np.ndarray) -> np.ndarray:
    """Q = value + advantage - mean(advantage), broadcast over the batch."""
    val = np.asarray(val)
    adv = np.asarray(adv)
    if adv.ndim == 1:
        return val + adv - adv.mean()
    return val.reshape(-1, 1) + adv - adv.mean(axis=1, keepdims=True)


def forward(p: NetworkParams, images: np.ndarray, poses: np.ndarray,
            wrenches: np.ndarray, want_cache: bool = False):
    """Batch forward pass.  images: (B, H, W); returns q: (B, n_actions).

    Computation runs in the dtype of the parameter arrays (float32 in
    training; float64 copies make finite-difference checks meaningful)."""
    arch = p.arch
    dt = p["img_dense_w"].dtype
    x = np.asarray(images, dtype=dt).reshape(-1, 1, arch.image_size, arch.image_size)
    cache = {"x_shapes": [], "cols": [], "conv_pre": []}
    h = x
    for i in range(len(arch.conv_channels)):
        cache["x_shapes"].append(h.shape)
        h, cols = _conv_forward(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
        cache["cols"].append(cols)
        cache["conv_pre"].append(h)
        h = np.maximum(h, 0.0)
    flat = h.reshape(h.shape[0], -1)
    cache["flat"] = flat
    img_pre = flat @ p["img_dense_w"] + p["img_dense_b"]
    cache["img_pre"] = img_pre
    img_feat = np.maximum(img_pre, 0.0)
    vec = np.concatenate([img_feat,
                          np.asarray(poses, dtype=dt).reshape(flat.shape[0], -1),
                          np.asarray(wrenches, dtype=dt).reshape(flat.shape[0], -1)],
                         axis=1)
    cache["concat"] = vec
    acts = [vec]
    pres = []
    hcur = vec
    for i in range(len(arch.trunk)):
        pre = hcur @ p[f"trunk{i}_w"] + p[f"trunk{i}_b"]
        pres.append(pre)
        hcur = np.maximum(pre, 0.0)
        acts.append(hcur)
    cache["trunk_pre"] = pres
    cache["trunk_acts"] = acts
    val = hcur @ p["val_w"] + p["val_b"]      # (B, 1)
    adv = hcur @ p["adv_w"] + p["adv_b"]      # (B, A)
    cache["val"], cache["adv"] = val, adv
    q = dueling_combine(val[:, 0], adv)
    if want_cache:
        return q, cache
    return q


def loss(q_pre_a: np.ndarray, q_tar_a: np.ndarray) -> float:
    """Mean over the batch of 0.5 * (target - prediction)^2."""
    diff = np.asarray(q_tar_a, dtype=np.float64) - np.asarray(q_pre_a, dtype=np.float64)
    return float(np.mean(0.5 * diff * diff))


def backward(p: NetworkParams, cache: dict, actions: np.ndarray,
             q: np.ndarray, q_tar: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the mean squared-error loss taken on the chosen actions.

    Untaken advantage outputs receive gradient only through the mean term of
    the dueling combination.
    """
    arch = p.arch
    dt = p["img_dense_w"].dtype
    bsz, n_act = q.shape
    actions = np.asarray(actions, dtype=np.intp)
    q_a = q[np.arange(bsz), actions]
    dq_a = (q_a - np.asarray(q_tar, dtype=dt)) / bsz  # (B,)

    dval = dq_a.reshape(-1, 1)
    dadv = np.full((bsz, n_act), -1.0 / n_act, dtype=dt) * dq_a.reshape(-1, 1)
    dadv[np.arange(bsz), actions] += dq_a

    grads = {}
    hlast = cache["trunk_acts"][-1]
    grads["val_w"] = hlast.T @ dval
    grads["val_b"] = dval.sum(axis=0)
    grads["adv_w"] = hlast.T @ dadv
    grads["adv_b"] = dadv.sum(axis=0)
    dh = dval @ p["val_w"].T + dadv @ p["adv_w"].T

    for i in reversed(range(len(arch.trunk))):
        dpre = dh * (cache["trunk_pre"][i] > 0)
        grads[f"trunk{i}_w"] = cache["trunk_acts"][i].T @ dpre
        grads[f"trunk{i}_b"] = dpre.sum(axis=0)
        dh = dpre @ p[f"trunk{i}_w"].T

    dimg_feat = dh[:, :arch.image_dense]
    dimg_pre = dimg_feat * (cache["img_pre"] > 0)
    grads["img_dense_w"] = cache["flat"].T @ dimg_pre
    grads["img_dense_b"] = dimg_pre.sum(axis=0)
    dflat = dimg_pre @ p["img_dense_w"].T

    side = arch.conv_out_side
    dcur = dflat.reshape(bsz, arch.conv_channels[-1], side, side)
    for i in reversed(range(len(arch.conv_channels))):
        dpre = dcur * (cache["conv_pre"][i] > 0)
        dcur, dw, db = _conv_backward(dpre, cache["cols"][i], p[f"conv{i}_w"],
                                      cache["x_shapes"][i])
        grads[f"conv{i}_w"] = dw
        grads[f"conv{i}_b"] = db
    return {k: np.asarray(v, dtype=dt) for k, v in grads.items()}


# -- optimizer -------------------------------------------------------------

@dataclass
class NadamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def nadam_step(p: NetworkParams, grads: dict[str, np.ndarray],
               state: NadamState, lr: float) -> None:
    """In-place Nadam update: bias-corrected first moment with a Nesterov
    lookahead on the gradient, normalized by the second moment."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p[name])
            state.v[name] = np.zeros_like(p[name])
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        update = (b1 * m_hat + (1.0 - b1) * g / (1.0 - b1 ** t)) / (np.sqrt(v_hat) + state.eps)
        p.params[name] = (p[name] - lr * update).astype(np.float32)


# -- checkpoint ------------------------------------------------------------

def action_set_hash(enumeration: str) -> bytes:
    return hashlib.sha256(enumeration.encode()).digest()[:16]


def save_params(p: NetworkParams, action_enum: str) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    arch_bytes = p.arch.to_json().encode()
    buf.write(struct.pack("<I", len(arch_bytes)))
    buf.write(arch_bytes)
    buf.write(action_set_hash(action_enum))
    for name in p.names():
        buf.write(np.ascontiguousarray(p[name], dtype="<f4").tobytes())
    return buf.getvalue()


def load_params(data: bytes, action_enum: str) -> NetworkParams:
    buf = io.BytesIO(data)

    def read(n: int) -> bytes:
        chunk = buf.read(n)
        if len(chunk) != n:
            raise TruncatedCheckpoint(f"expected {n} bytes, got {len(chunk)}")
        return chunk

    if read(len(MAGIC)) != MAGIC:
        raise BadMagic("not a network checkpoint")
    version = struct.unpack("<I", read(4))[0]
    if version != FORMAT_VERSION:
        raise BadVersion(f"unsupported checkpoint version {version}")
    arch_len = struct.unpack("<I", read(4))[0]
    try:
        arch = Architecture.from_json(read(arch_len).decode())
    except (ValueError, KeyError) as exc:
        raise ArchitectureMismatch(f"bad architecture descriptor: {exc}") from exc
    stored_hash = read(16)
    if stored_hash != action_set_hash(action_enum):
        raise ActionSetMismatch("checkpoint was trained with a different action enumeration")
    params = {}
    for name, shape in NetworkParams.layer_shapes(arch):
        count = int(np.prod(shape))
        raw = read(count * 4)
        params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if buf.read(1):
        raise ArchitectureMismatch("trailing bytes after the declared layers")
    return NetworkParams(arch, params)
