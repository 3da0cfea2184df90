"""Preprocessing geometry, TorchScript execution, and batch embedding."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from aidetect.encoder import (
    BatchSummary,
    PreprocessSpec,
    embed,
    embed_batch,
    load_encoder,
    preprocess,
)
from aidetect.errors import DecodeError, EncoderError
from aidetect.labels import Label
from aidetect.store import DatasetManifest, ManifestRow, read_cache

FIXTURES = Path(__file__).parent / "fixtures"
IMAGES = FIXTURES / "images"


@pytest.fixture(scope="module")
def encoder():
    return load_encoder(FIXTURES / "tiny_encoder.pt")


def tiny_tower_oracle(x: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Plain-numpy replica of the fixture graph: 4x4 average pool -> linear."""
    params = np.load(FIXTURES / "tiny_encoder_params.npz")
    pooled = x.reshape(3, 4, 56, 4, 56).mean(axis=(2, 4))
    vec = params["weight"] @ pooled.reshape(-1) + params["bias"]
    if normalize:
        vec = vec / np.linalg.norm(vec)
    return vec.astype(np.float32)


class TestPreprocess:
    def test_224_passthrough_geometry(self):
        out = preprocess((IMAGES / "grad_224.png").read_bytes())
        assert out.shape == (3, 224, 224)
        spec = PreprocessSpec()
        # red channel encodes the column index; no resize or crop happened
        expected_col_5 = (5 / 255.0 - spec.mean[0]) / spec.std[0]
        np.testing.assert_allclose(out[0, :, 5], expected_col_5, atol=1e-6)

    def test_mid_gray_fills_with_normalized_constant(self):
        out = preprocess((IMAGES / "gray_224.png").read_bytes())
        spec = PreprocessSpec()
        for c in range(3):
            expected = (128 / 255.0 - spec.mean[c]) / spec.std[c]
            np.testing.assert_allclose(out[c], expected, atol=1e-6)

    def test_wide_image_center_crop_offsets(self):
        # 448x224: shorter side is already 224, crop keeps columns 112..336
        out = preprocess((IMAGES / "wide_448x224.png").read_bytes())
        spec = PreprocessSpec()
        def undo(v, c=0):
            return v * spec.std[c] + spec.mean[c]
        # source pixel value was col // 2
        assert undo(out[0, 0, 0]) * 255 == pytest.approx(112 // 2, abs=0.5)
        assert undo(out[0, 0, 223]) * 255 == pytest.approx(335 // 2, abs=0.5)

    @pytest.mark.parametrize("name", ["noise_300x200.png", "tiny_8x8.png", "noise.jpg"])
    def test_any_aspect_ratio_gives_3x224x224(self, name):
        out = preprocess((IMAGES / name).read_bytes())
        assert out.shape == (3, 224, 224)
        assert np.all(np.isfinite(out))

    def test_undecodable_bytes(self):
        with pytest.raises(DecodeError):
            preprocess((IMAGES / "corrupt.png").read_bytes())

    def test_custom_normalization_constants(self):
        spec = PreprocessSpec(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))
        out = preprocess((IMAGES / "gray_224.png").read_bytes(), spec)
        np.testing.assert_allclose(out, (128 / 255.0 - 0.5) / 0.5, atol=1e-6)


class TestEncoderModel:
    def test_load_records_digest_and_verifies_shapes(self, encoder):
        assert len(encoder.digest) == 64
        assert encoder.path.endswith("tiny_encoder.pt")

    def test_missing_file(self):
        with pytest.raises(EncoderError, match="not found"):
            load_encoder(FIXTURES / "nope.pt")

    def test_garbage_file(self, tmp_path):
        bad = tmp_path / "bad.pt"
        bad.write_bytes(b"\x00" * 100)
        with pytest.raises(EncoderError, match="cannot load"):
            load_encoder(bad)

    @pytest.mark.filterwarnings("ignore::DeprecationWarning")
    def test_wrong_output_dim_refused(self, tmp_path):
        import torch
        from torch import nn

        class Wrong(nn.Module):
            def __init__(self):
                super().__init__()
                self.fc = nn.Linear(3 * 4 * 4, 256)
                self.pool = nn.AdaptiveAvgPool2d((4, 4))

            def forward(self, x):
                return self.fc(self.pool(x).flatten(1))

        path = tmp_path / "wrong.pt"
        torch.jit.trace(Wrong().eval(), torch.zeros(1, 3, 224, 224)).save(str(path))
        with pytest.raises(EncoderError, match="512"):
            load_encoder(path)

    def test_pt2_export_format_loads(self, tmp_path, encoder):
        import torch
        from torch import nn

        class Same(nn.Module):
            def __init__(self):
                super().__init__()
                self.pool = nn.AdaptiveAvgPool2d((4, 4))
                self.fc = nn.Linear(3 * 4 * 4, 512)

            def forward(self, x):
                return self.fc(self.pool(x).flatten(1))

        torch.manual_seed(0)
        path = tmp_path / "tower.pt2"
        ep = torch.export.export(Same().eval(), (torch.zeros(1, 3, 224, 224),))
        torch.export.save(ep, str(path))
        model = load_encoder(path)
        vec = embed(model, (IMAGES / "grad_224.png").read_bytes())
        assert vec.shape == (512,)


class TestEmbed:
    def test_normalized_to_unit_length(self, encoder):
        for name in ("grad_224.png", "noise_300x200.png", "tiny_8x8.png"):
            vec = embed(encoder, (IMAGES / name).read_bytes(), normalize=True)
            assert abs(np.linalg.norm(vec) - 1.0) <= 1e-5

    def test_deterministic_across_runs(self, encoder):
        data = (IMAGES / "noise_300x200.png").read_bytes()
        a = embed(encoder, data)
        b = embed(encoder, data)
        np.testing.assert_array_equal(a, b)

    def test_matches_numpy_reference_oracle(self, encoder):
        data = (IMAGES / "grad_224.png").read_bytes()
        vec = embed(encoder, data, normalize=True)
        expected = tiny_tower_oracle(preprocess(data), normalize=True)
        cosine = float(vec @ expected)
        assert cosine >= 0.999
        np.testing.assert_allclose(vec, expected, atol=1e-5)

    def test_raw_mode_skips_normalization(self, encoder):
        data = (IMAGES / "grad_224.png").read_bytes()
        raw = embed(encoder, data, normalize=False)
        expected = tiny_tower_oracle(preprocess(data), normalize=False)
        np.testing.assert_allclose(raw, expected, rtol=1e-4, atol=1e-4)
        assert abs(np.linalg.norm(raw) - 1.0) > 1e-3


def manifest_of(rows) -> DatasetManifest:
    return DatasetManifest(name="test", rows=rows)


class TestEmbedBatch:
    def test_all_valid(self, encoder, tmp_path):
        rows = [
            ManifestRow("grad_224.png", Label.REAL, ""),
            ManifestRow("gray_224.png", Label.FAKE, "gray"),
            ManifestRow("noise_300x200.png", Label.REAL, ""),
            ManifestRow("tiny_8x8.png", Label.FAKE, "tiny"),
        ]
        cache = tmp_path / "out.clpe"
        summary = embed_batch(encoder, manifest_of(rows), cache, root=IMAGES)
        assert summary.embedded == 4
        assert summary.skipped == 0
        assert summary.failures == []
        records = read_cache(cache)
        assert [r.id for r in records] == [r.path for r in rows]
        assert records[1].category == "gray"
        assert records[1].label is Label.FAKE

    def test_corrupt_file_collected_not_fatal(self, encoder, tmp_path):
        rows = [
            ManifestRow("grad_224.png", Label.REAL, ""),
            ManifestRow("corrupt.png", Label.FAKE, ""),
            ManifestRow("gray_224.png", Label.REAL, ""),
            ManifestRow("missing.png", Label.FAKE, ""),
        ]
        cache = tmp_path / "out.clpe"
        summary = embed_batch(encoder, manifest_of(rows), cache, root=IMAGES)
        assert summary.embedded == 2
        failed_paths = [p for p, _ in summary.failures]
        assert failed_paths == ["corrupt.png", "missing.png"]
        assert [r.id for r in read_cache(cache)] == ["grad_224.png", "gray_224.png"]

    def test_incremental_rerun_skips_existing(self, encoder, tmp_path):
        rows = [
            ManifestRow("grad_224.png", Label.REAL, ""),
            ManifestRow("gray_224.png", Label.FAKE, ""),
        ]
        cache = tmp_path / "out.clpe"
        first = embed_batch(encoder, manifest_of(rows), cache, root=IMAGES)
        assert (first.embedded, first.skipped) == (2, 0)
        second = embed_batch(encoder, manifest_of(rows), cache, root=IMAGES)
        assert (second.embedded, second.skipped) == (0, 2)
        # vectors byte-identical to the first run
        a, b = read_cache(cache), read_cache(cache)
        assert all(x.vector.tobytes() == y.vector.tobytes() for x, y in zip(a, b))

    def test_incremental_extends_with_new_rows(self, encoder, tmp_path):
        cache = tmp_path / "out.clpe"
        embed_batch(encoder, manifest_of([ManifestRow("grad_224.png", Label.REAL, "")]),
                    cache, root=IMAGES)
        rows = [
            ManifestRow("grad_224.png", Label.REAL, ""),
            ManifestRow("tiny_8x8.png", Label.FAKE, ""),
        ]
        summary = embed_batch(encoder, manifest_of(rows), cache, root=IMAGES)
        assert (summary.embedded, summary.skipped) == (1, 1)
        assert [r.id for r in read_cache(cache)] == ["grad_224.png", "tiny_8x8.png"]

    def test_summary_dict_shape(self):
        s = BatchSummary(embedded=2, skipped=1, failures=[("x.png", "boom")])
        assert s.as_dict() == {
            "embedded": 2,
            "skipped": 1,
            "failures": [{"path": "x.png", "error": "boom"}],
        }
