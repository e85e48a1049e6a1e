"""Image persistence: 8-bit PNG (fixed 2.2 gamma) and raw float32 dumps.

Images are held in memory as linear-light float64 arrays in [0,1], channel
last. The float dump format is: width u32, height u32, channels u32 (all
little-endian), then float32 samples in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

GAMMA = 2.2


def linear_to_srgb(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0) ** (1.0 / GAMMA)


def srgb_to_linear(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0) ** GAMMA


def encode_png(img: np.ndarray) -> bytes:
    """Linear [0,1] image -> PNG bytes (8-bit, gamma 2.2 encoded)."""
    import io

    u8 = np.round(linear_to_srgb(np.asarray(img, float)) * 255.0).astype(np.uint8)
    mode = "L" if u8.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(u8, mode).save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_png(img))


def load_png(path) -> np.ndarray:
    """PNG -> linear float RGB (H,W,3)."""
    with Image.open(path) as im:
        u8 = np.asarray(im.convert("RGB"), np.uint8)
    return srgb_to_linear(u8.astype(np.float64) / 255.0)


def save_float_image(path, img: np.ndarray) -> None:
    img = np.asarray(img, np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<III", w, h, c))
        f.write(img.astype("<f4").tobytes())


def load_float_image(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(), "<f4")
    if data.size != w * h * c:
        raise ValueError(f"float image payload is {data.size} samples, "
                         f"header promises {w * h * c}")
    return data.reshape(h, w, c).astype(np.float64)
