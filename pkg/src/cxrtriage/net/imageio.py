"""16-bit grayscale image I/O: binary PGM files with JSON sidecars.

Images travel as P5 PGM with a 16-bit maxval, big-endian sample order per
the format. A sidecar named like the image with a .json suffix may carry
{"study_id", "window_center", "window_width"}; when present the loader
windows raw values onto [0, 1], otherwise it min/max scales (a constant
image loads as zeros).
"""

import json
from pathlib import Path

import numpy as np

from .ops import normalize_intensity

MAXVAL = 65535


def write_pgm(path, pixels):
    """Write a (H, W) integer image as binary 16-bit PGM."""
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ValueError(f"expected an (H, W) image, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > MAXVAL:
        raise ValueError(
            f"pixel values {arr.min()}..{arr.max()} outside 0..{MAXVAL}")
    h, w = arr.shape
    header = f"P5\n{w} {h}\n{MAXVAL}\n".encode("ascii")
    Path(path).write_bytes(header + arr.astype(">u2").tobytes())


def _read_header_token(data, pos):
    # Skip whitespace and '#' comment lines between header tokens.
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < len(data) and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pgm(path):
    """Read a binary PGM back as a (H, W) uint16 array."""
    data = Path(path).read_bytes()
    magic, pos = _read_header_token(data, 0)
    if magic != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {magic!r})")
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(data, pos)
        if not token.isdigit():
            raise ValueError(f"{path}: malformed PGM header")
        fields.append(int(token))
    w, h, maxval = fields
    if maxval != MAXVAL:
        raise ValueError(f"{path}: expected maxval {MAXVAL}, got {maxval}")
    pos += 1  # single whitespace byte separates header from samples
    expected = h * w * 2
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise ValueError(f"{path}: truncated raster "
                         f"({len(raster)} of {expected} bytes)")
    return np.frombuffer(raster, dtype=">u2").reshape(h, w).astype(np.uint16)


def sidecar_path(image_path):
    return Path(image_path).with_suffix(".json")


def read_sidecar(image_path):
    """Windowing metadata for an image, or None when no sidecar exists."""
    path = sidecar_path(image_path)
    if not path.exists():
        return None
    meta = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(meta, dict):
        raise ValueError(f"{path}: sidecar must be a JSON object")
    for key in ("window_center", "window_width"):
        if key in meta and not isinstance(meta[key], (int, float)):
            raise ValueError(f"{path}: {key} must be a number")
    return meta


def write_sidecar(image_path, study_id, window_center, window_width):
    meta = {"study_id": study_id, "window_center": window_center,
            "window_width": window_width}
    sidecar_path(image_path).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_image(path):
    """A (1, H, W) float64 image in [0, 1], windowed per the sidecar.

    Without a sidecar the raw range is min/max scaled; a constant image
    becomes all zeros. Returns (image, metadata-or-None).
    """
    raw = read_pgm(path).astype(np.float64)
    meta = read_sidecar(path)
    if meta is not None and "window_center" in meta and "window_width" in meta:
        image = normalize_intensity(raw, meta["window_center"],
                                    meta["window_width"])
    else:
        low, high = raw.min(), raw.max()
        image = (raw - low) / (high - low) if high > low else np.zeros_like(raw)
    return image[None], meta


def save_image(path, image, study_id=None, window_center=None,
               window_width=None):
    """Quantize a [0, 1] float image to 16 bits and write it (plus an
    optional sidecar)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    write_pgm(path, np.round(np.clip(arr, 0.0, 1.0) * MAXVAL).astype(np.uint16))
    if window_center is not None and window_width is not None:
        write_sidecar(path, study_id, window_center, window_width)
