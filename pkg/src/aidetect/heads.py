"""The two classifier heads over 512-d embeddings, as single trainable units.

MLP:  dense 512->256 -> ReLU -> dropout(0.2) -> dense 256->128 -> ReLU
      -> dense 128->1 logit.
CNN:  treat the embedding as one channel of length 512; conv(1->32, k=3,
      pad=1) -> ReLU -> maxpool(2) -> dropout(0.2) -> flatten (8192)
      -> dense 8192->128 -> ReLU -> dense 128->1 logit.

Widths are parameters with the above as defaults so verification harnesses can
run reduced-size stacks of identical structure.
"""

from __future__ import annotations

import struct
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimensionError, HeadFormatError
from .labels import Label
from .nn import (
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    ReLU,
    Stack,
    bce_with_logits,
    bce_with_logits_grad,
    sigmoid,
)

HEAD_MAGIC = b"AHD1"
DROPOUT_RATE = 0.2


class HeadKind(str, Enum):
    MLP = "mlp"
    CNN = "cnn"


class Head:
    """A classifier stack plus the embedding-dimension contract."""

    def __init__(self, kind: HeadKind, stack: Stack, in_dim: int):
        self.kind = kind
        self.stack = stack
        self.in_dim = in_dim
        self._last_batched: bool | None = None

    def forward(self, z: np.ndarray, train: bool = False):
        z = np.asarray(z)
        if z.ndim not in (1, 2) or z.shape[-1] != self.in_dim:
            raise DimensionError(
                f"head expects embeddings of length {self.in_dim}, "
                f"got shape {z.shape}"
            )
        batched = z.ndim == 2
        self._last_batched = batched
        x = z[:, None, :] if self.kind is HeadKind.CNN and batched else z
        if self.kind is HeadKind.CNN and not batched:
            x = z[None, :]
        out = self.stack.forward(x, train=train)
        if batched:
            return out[:, 0]
        return float(out[0])

    def backward(self, grad_logit) -> dict[str, np.ndarray]:
        g = np.asarray(grad_logit)
        if self._last_batched:
            g = g[:, None]
        else:
            g = g.reshape(1)
        return self.stack.backward(g)

    def parameters(self) -> dict[str, np.ndarray]:
        return self.stack.parameters()

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        self.stack.set_parameters(params)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters().items()}

    def parameter_count(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def astype(self, dtype) -> "Head":
        return Head(self.kind, self.stack.astype(dtype), self.in_dim)

    def freeze_dropout(self) -> None:
        self.stack.freeze_dropout()


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int):
    bound = float(np.sqrt(1.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _split_seed(seed: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence(seed)
    init_ss, dropout_ss = ss.spawn(2)
    return np.random.default_rng(init_ss), int(dropout_ss.generate_state(1)[0])


def mlp_head(
    seed: int,
    in_dim: int = 512,
    hidden1: int = 256,
    hidden2: int = 128,
    dropout_rate: float = DROPOUT_RATE,
) -> Head:
    rng, dropout_seed = _split_seed(seed)
    d1 = Dense(_uniform_init(rng, (hidden1, in_dim), in_dim), np.zeros(hidden1, np.float32))
    d2 = Dense(_uniform_init(rng, (hidden2, hidden1), hidden1), np.zeros(hidden2, np.float32))
    d3 = Dense(_uniform_init(rng, (1, hidden2), hidden2), np.zeros(1, np.float32))
    stack = Stack(
        [
            ("dense1", d1),
            ("relu1", ReLU()),
            ("dropout", Dropout(dropout_rate, dropout_seed)),
            ("dense2", d2),
            ("relu2", ReLU()),
            ("dense3", d3),
        ]
    )
    return Head(HeadKind.MLP, stack, in_dim)


def cnn_head(
    seed: int,
    in_dim: int = 512,
    channels: int = 32,
    kernel_size: int = 3,
    pool_window: int = 2,
    hidden: int = 128,
    dropout_rate: float = DROPOUT_RATE,
) -> Head:
    if kernel_size % 2 == 0:
        raise DimensionError(f"kernel width must be odd, got {kernel_size}")
    rng, dropout_seed = _split_seed(seed)
    padding = (kernel_size - 1) // 2
    conv_out = in_dim + 2 * padding - kernel_size + 1
    flat = channels * (conv_out // pool_window)
    conv = Conv1D(
        _uniform_init(rng, (channels, 1, kernel_size), kernel_size),
        np.zeros(channels, np.float32),
        padding=padding,
    )
    d1 = Dense(_uniform_init(rng, (hidden, flat), flat), np.zeros(hidden, np.float32))
    d2 = Dense(_uniform_init(rng, (1, hidden), hidden), np.zeros(1, np.float32))
    stack = Stack(
        [
            ("conv", conv),
            ("relu1", ReLU()),
            ("pool", MaxPool1D(pool_window)),
            ("dropout", Dropout(dropout_rate, dropout_seed)),
            ("flatten", Flatten(input_rank=2)),
            ("dense1", d1),
            ("relu2", ReLU()),
            ("dense2", d2),
        ]
    )
    return Head(HeadKind.CNN, stack, in_dim)


def head_init(kind: HeadKind, seed: int) -> Head:
    """Fresh head with the paper-sized architecture, deterministic per seed."""
    if kind is HeadKind.MLP:
        return mlp_head(seed)
    return cnn_head(seed)


def predict(head: Head, z: np.ndarray, threshold: float = 0.5):
    """(probability, label) at the decision threshold; Fake wins the boundary."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    logits = head.forward(z, train=False)
    prob = sigmoid(logits)
    if np.ndim(prob) == 0:
        return float(prob), (Label.FAKE if prob >= threshold else Label.REAL)
    labels = [Label.FAKE if p >= threshold else Label.REAL for p in prob]
    return prob, labels


def loss_and_gradients(
    head: Head, z: np.ndarray, targets: np.ndarray, train: bool = True
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BCE loss over the batch and its gradient bundle."""
    logits = head.forward(z, train=train)
    t = np.asarray(targets, dtype=np.float32).reshape(np.shape(logits))
    loss = float(np.mean(bce_with_logits(logits, t)))
    n = max(np.size(logits), 1)
    grad = np.asarray(bce_with_logits_grad(logits, t), dtype=np.float32) / n
    return loss, head.backward(grad)


# --- trained-head file format -------------------------------------------------
#
# magic "AHD1" | kind u8 (0 = mlp, 1 = cnn) | per parameter tensor, in stack
# order: rank u32 LE, extents u32 LE each, raw float32 LE values. Round-trips
# bit-exactly.

_KIND_BYTE = {HeadKind.MLP: 0, HeadKind.CNN: 1}
_BYTE_KIND = {v: k for k, v in _KIND_BYTE.items()}


def save_head(head: Head, path: str | Path) -> int:
    """Write the AHD1 container; returns bytes written."""
    chunks = [HEAD_MAGIC, struct.pack("<B", _KIND_BYTE[head.kind])]
    for value in head.parameters().values():
        arr = np.ascontiguousarray(value, dtype="<f4")
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    Path(path).write_bytes(blob)
    return len(blob)


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> tuple[bytes, int]:
    if offset + n > len(buf):
        raise HeadFormatError(
            f"truncated head file: needed {n} bytes for {what} at offset {offset}"
        )
    return buf[offset : offset + n], offset + n


def load_head(path: str | Path) -> Head:
    """Read an AHD1 container back into a Head (bit-exact parameters)."""
    buf = Path(path).read_bytes()
    if buf[:4] != HEAD_MAGIC:
        raise HeadFormatError(f"bad magic {buf[:4]!r}: not a trained-head file")
    offset = 4
    raw, offset = _read_exact(buf, offset, 1, "head kind")
    kind_byte = raw[0]
    if kind_byte not in _BYTE_KIND:
        raise HeadFormatError(f"unknown head kind byte {kind_byte}")
    kind = _BYTE_KIND[kind_byte]
    tensors: list[np.ndarray] = []
    while offset < len(buf):
        raw, offset = _read_exact(buf, offset, 4, "tensor rank")
        rank = struct.unpack("<I", raw)[0]
        if rank == 0 or rank > 8:
            raise HeadFormatError(f"implausible tensor rank {rank} at offset {offset - 4}")
        raw, offset = _read_exact(buf, offset, 4 * rank, "tensor extents")
        shape = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(shape))
        raw, offset = _read_exact(buf, offset, 4 * count, "tensor data")
        tensors.append(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    return _rebuild(kind, tensors)


def _rebuild(kind: HeadKind, tensors: list[np.ndarray]) -> Head:
    if len(tensors) != 6:
        raise HeadFormatError(f"expected 6 parameter tensors, found {len(tensors)}")
    if kind is HeadKind.MLP:
        w1, b1, w2, b2, w3, b3 = tensors
        for w, b in ((w1, b1), (w2, b2), (w3, b3)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise HeadFormatError("mlp head tensors have inconsistent shapes")
        head = mlp_head(0, in_dim=w1.shape[1], hidden1=w1.shape[0], hidden2=w2.shape[0])
        names = ["dense1.weights", "dense1.bias", "dense2.weights", "dense2.bias",
                 "dense3.weights", "dense3.bias"]
    else:
        k, kb, w1, b1, w2, b2 = tensors
        if k.ndim != 3 or k.shape[1] != 1:
            raise HeadFormatError("cnn head kernel tensor has inconsistent shape")
        channels, _, width = k.shape
        if w1.shape[1] % channels:
            raise HeadFormatError("cnn head dense input does not match channel count")
        in_dim = (w1.shape[1] // channels) * 2
        head = cnn_head(0, in_dim=in_dim, channels=channels, kernel_size=width,
                        hidden=w1.shape[0])
        names = ["conv.kernels", "conv.bias", "dense1.weights", "dense1.bias",
                 "dense2.weights", "dense2.bias"]
    try:
        head.set_parameters(dict(zip(names, tensors)))
    except DimensionError as exc:
        raise HeadFormatError(f"head tensors do not assemble: {exc}") from exc
    return head
