#!/usr/bin/env python3
"""Regenerate the committed binary test fixtures.

Run from the repo root: python3 tools/make_fixtures.py

Outputs (committed under tests/fixtures/):
  tiny_encoder.pt         TorchScript graph: avg-pool 4x4 grid -> linear -> 512
  tiny_encoder_params.npz weights/bias of that linear map, for numpy oracles
  images/*.png            deterministic test images
  images/corrupt.png      bytes that are not an image
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def make_tiny_encoder() -> None:
    import torch
    from torch import nn

    class TinyTower(nn.Module):
        def __init__(self):
            super().__init__()
            self.pool = nn.AdaptiveAvgPool2d((4, 4))
            self.fc = nn.Linear(3 * 4 * 4, 512)

        def forward(self, x):
            return self.fc(self.pool(x).flatten(1))

    torch.manual_seed(20240417)
    tower = TinyTower().eval()
    example = torch.zeros(1, 3, 224, 224)
    traced = torch.jit.trace(tower, example)
    out = FIXTURES / "tiny_encoder.pt"
    traced.save(str(out))
    np.savez(
        FIXTURES / "tiny_encoder_params.npz",
        weight=tower.fc.weight.detach().numpy(),
        bias=tower.fc.bias.detach().numpy(),
    )
    print(f"wrote {out} ({out.stat().st_size} bytes)")


def make_images() -> None:
    from PIL import Image

    images = FIXTURES / "images"
    images.mkdir(parents=True, exist_ok=True)

    # 224x224: column gradient in R, row gradient in G, checker in B
    cols, rows = np.meshgrid(np.arange(224), np.arange(224))
    rgb = np.stack(
        [cols % 256, rows % 256, ((cols // 8 + rows // 8) % 2) * 255], axis=-1
    ).astype(np.uint8)
    Image.fromarray(rgb, "RGB").save(images / "grad_224.png")

    # 448x224 wide image: pixel value encodes the source column
    cols, _ = np.meshgrid(np.arange(448), np.arange(224))
    wide = np.stack([cols // 2] * 3, axis=-1).astype(np.uint8)
    Image.fromarray(wide, "RGB").save(images / "wide_448x224.png")

    # mid-gray 224x224 (value 128 on all channels)
    Image.fromarray(np.full((224, 224, 3), 128, np.uint8), "RGB").save(
        images / "gray_224.png"
    )

    # small noise image with an odd aspect ratio, exercises resize+crop
    rng = np.random.default_rng(7)
    noise = rng.integers(0, 256, size=(200, 300, 3), dtype=np.uint8)
    Image.fromarray(noise, "RGB").save(images / "noise_300x200.png")

    # tiny image far below target size
    tiny = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    Image.fromarray(tiny, "RGB").save(images / "tiny_8x8.png")

    # JPEG variant for format coverage
    Image.fromarray(noise, "RGB").save(images / "noise.jpg", quality=90)

    (images / "corrupt.png").write_bytes(b"this is not an image at all\x00\x01")
    print(f"wrote {len(list(images.iterdir()))} files under {images}")


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    make_tiny_encoder()
    make_images()


if __name__ == "__main__":
    main()
