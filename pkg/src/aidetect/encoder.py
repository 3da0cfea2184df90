"""Frozen vision encoder: image preprocessing plus TorchScript graph execution.

The encoder is strictly frozen; this module only runs it. Preprocessing follows
the standard frozen-encoder recipe: bicubic resize of the shorter side to 224,
center crop, scale to [0,1], per-channel normalization. The normalization
constants default to the published CLIP statistics and live in PreprocessSpec
because the upstream checkpoint is a configuration input, not a constant.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, EncoderError
from .store import EMBED_DIM, DatasetManifest, EmbeddingRecord, read_cache, write_cache

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


@dataclass
class PreprocessSpec:
    target_size: int = 224
    mean: tuple[float, float, float] = CLIP_MEAN
    std: tuple[float, float, float] = CLIP_STD


def preprocess(image_bytes: bytes, spec: PreprocessSpec | None = None) -> np.ndarray:
    """Decode to a normalized [3 x target x target] float32 tensor (CHW, RGB)."""
    spec = spec or PreprocessSpec()
    size = spec.target_size
    try:
        image = Image.open(io.BytesIO(image_bytes))
        image.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc
    if image.width < 1 or image.height < 1:
        raise DecodeError(f"image has a zero dimension: {image.size}")
    image = image.convert("RGB")

    # shorter side -> target, preserving aspect ratio
    w, h = image.size
    scale = size / min(w, h)
    new_w, new_h = round(w * scale), round(h * scale)
    if (new_w, new_h) != (w, h):
        image = image.resize((new_w, new_h), Image.Resampling.BICUBIC)
    left = (image.width - size) // 2
    top = (image.height - size) // 2
    image = image.crop((left, top, left + size, top + size))

    chw = np.asarray(image, dtype=np.float32).transpose(2, 0, 1) / 255.0
    mean = np.asarray(spec.mean, dtype=np.float32)[:, None, None]
    std = np.asarray(spec.std, dtype=np.float32)[:, None, None]
    out = (chw - mean) / std
    if not np.all(np.isfinite(out)):
        raise DecodeError("preprocessing produced non-finite values")
    return out


@dataclass
class EncoderModel:
    module: object
    digest: str
    path: str

    def __repr__(self) -> str:  # keep the TorchScript dump out of logs
        return f"EncoderModel(path={self.path!r}, digest={self.digest[:12]})"


def load_encoder(path: str | Path) -> EncoderModel:
    """Load a serialized graph (TorchScript .pt or torch.export .pt2) and
    verify the [1x3x224x224] -> [1x512] contract with a probe forward."""
    import torch

    path = Path(path)
    if not path.exists():
        raise EncoderError(f"model file not found: {path}")
    digest = hashlib.sha256(path.read_bytes()).hexdigest()
    try:
        if path.suffix == ".pt2":
            module = torch.export.load(str(path)).module()
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DeprecationWarning)
                module = torch.jit.load(str(path), map_location="cpu")
    except Exception as exc:
        raise EncoderError(f"cannot load model {path} (sha256 {digest[:12]}): {exc}") from exc
    try:
        module.eval()
    except NotImplementedError:
        pass  # exported programs are already inference-only
    probe = torch.zeros(1, 3, 224, 224)
    try:
        with torch.inference_mode():
            out = module(probe)
    except Exception as exc:
        raise EncoderError(
            f"model probe forward failed (sha256 {digest[:12]}): {exc}"
        ) from exc
    if tuple(out.shape) != (1, EMBED_DIM):
        raise EncoderError(
            f"model output shape {tuple(out.shape)} != required (1, {EMBED_DIM}) "
            f"(sha256 {digest[:12]})"
        )
    return EncoderModel(module=module, digest=digest, path=str(path))


def embed(
    model: EncoderModel,
    image_bytes: bytes,
    spec: PreprocessSpec | None = None,
    normalize: bool = True,
) -> np.ndarray:
    """One 512-d embedding; L2-normalized unless `normalize` is False."""
    import torch

    x = preprocess(image_bytes, spec)
    with torch.inference_mode():
        try:
            out = model.module(torch.from_numpy(x[None]))
        except Exception as exc:
            raise EncoderError(
                f"inference failed (model sha256 {model.digest[:12]}): {exc}"
            ) from exc
    vec = out.numpy().astype(np.float32)
    if vec.shape != (1, EMBED_DIM):
        raise EncoderError(
            f"model produced shape {vec.shape}, expected (1, {EMBED_DIM}) "
            f"(sha256 {model.digest[:12]})"
        )
    vec = vec[0]
    if normalize:
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise EncoderError("zero-norm embedding cannot be normalized")
        vec = vec / norm
    return vec.astype(np.float32)


@dataclass
class BatchSummary:
    embedded: int = 0
    skipped: int = 0
    failures: list[tuple[str, str]] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "embedded": self.embedded,
            "skipped": self.skipped,
            "failures": [{"path": p, "error": e} for p, e in self.failures],
        }


def embed_batch(
    model: EncoderModel,
    manifest: DatasetManifest,
    cache_path: str | Path,
    spec: PreprocessSpec | None = None,
    normalize: bool = True,
    incremental: bool = True,
    root: str | Path | None = None,
) -> BatchSummary:
    """Embed every manifest image into a CLPE cache.

    Record ids are the manifest paths; cache record order equals manifest
    order. With `incremental`, ids already in an existing cache are reused
    rather than recomputed. Individual decode failures are collected, not
    fatal; they are simply absent from the cache.
    """
    cache_path = Path(cache_path)
    existing: dict[str, EmbeddingRecord] = {}
    if incremental and cache_path.exists():
        existing = {r.id: r for r in read_cache(cache_path)}

    summary = BatchSummary()
    records: list[EmbeddingRecord] = []
    base = Path(root) if root is not None else None
    for row in manifest.rows:
        if row.path in existing:
            records.append(existing[row.path])
            summary.skipped += 1
            continue
        file_path = Path(row.path)
        if base is not None and not file_path.is_absolute():
            file_path = base / file_path
        try:
            data = file_path.read_bytes()
        except OSError as exc:
            summary.failures.append((row.path, f"unreadable: {exc}"))
            continue
        try:
            vec = embed(model, data, spec, normalize=normalize)
        except DecodeError as exc:
            summary.failures.append((row.path, str(exc)))
            continue
        records.append(
            EmbeddingRecord(id=row.path, label=row.label, vector=vec,
                            category=row.category)
        )
        summary.embedded += 1
    write_cache(records, cache_path)
    return summary
