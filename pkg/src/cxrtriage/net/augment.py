"""Training-time image augmentation: small random rotation plus shift.

Draw order is fixed so runs are reproducible: one uniform decides whether
to transform at all, and only an applied transform consumes the three draws
for angle and shift. The geometric map is rotation about the image center
followed by translation, resampled bilinearly with zero fill outside.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentPolicy:
    max_rotation_deg: float = 10.0
    max_shift_frac: float = 0.10
    apply_probability: float = 0.80
    seed: int = 0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise ValueError("max_rotation_deg must be non-negative")
        if not 0.0 <= self.max_shift_frac <= 1.0:
            raise ValueError("max_shift_frac must lie in [0, 1]")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError("apply_probability must lie in [0, 1]")


def policy_rng(policy):
    """The stream a fresh training run derives from the policy seed."""
    return np.random.default_rng([policy.seed])


def sample_transform(policy, rng):
    """Draw (apply, angle_deg, shift_x, shift_y) for one image.

    A skipped transform consumes a single uniform, leaving the stream
    aligned regardless of the apply probability.
    """
    apply = bool(rng.random() < policy.apply_probability)
    if not apply:
        return False, 0.0, 0.0, 0.0
    angle = float(rng.uniform(-policy.max_rotation_deg,
                              policy.max_rotation_deg))
    shift_x = float(rng.uniform(-policy.max_shift_frac,
                                policy.max_shift_frac))
    shift_y = float(rng.uniform(-policy.max_shift_frac,
                                policy.max_shift_frac))
    return True, angle, shift_x, shift_y


def _bilinear_sample(image, rows, cols):
    h, w = image.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    out = np.zeros(rows.shape, dtype=np.float64)
    for dr, dc in ((0, 0), (0, 1), (1, 0), (1, 1)):
        rr = r0 + dr
        cc = c0 + dc
        weight = ((fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc))
        inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        out += np.where(inside, image[rr.clip(0, h - 1), cc.clip(0, w - 1)],
                        0.0) * weight
    return out


def _rotate_shift(image, angle_deg, shift_x, shift_y):
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty = shift_y * h
    tx = shift_x * w
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    # Invert rotate-then-shift: undo the shift, then rotate backwards
    # about the center.
    ry = rows - cy - ty
    rx = cols - cx - tx
    src_rows = cos_t * ry + sin_t * rx + cy
    src_cols = -sin_t * ry + cos_t * rx + cx
    return _bilinear_sample(image, src_rows, src_cols)


def augment(image, policy, rng):
    """Randomly rotate and shift one (H, W) image; zero fill outside.

    Channel-first (1, H, W) images are accepted and returned in kind.
    """
    arr = np.asarray(image, dtype=np.float64)
    channel_first = arr.ndim == 3 and arr.shape[0] == 1
    plane = arr[0] if channel_first else arr
    if plane.ndim != 2:
        raise ValueError(f"expected an (H, W) image, got shape {arr.shape}")
    apply, angle, shift_x, shift_y = sample_transform(policy, rng)
    if not apply or (angle == 0.0 and shift_x == 0.0 and shift_y == 0.0):
        out = plane.copy()
    else:
        out = _rotate_shift(plane, angle, shift_x, shift_y)
    return out[None] if channel_first else out
