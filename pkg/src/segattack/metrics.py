"""Attack diagnostics: mean IoU, pixel agreement, perturbation L2 norm."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ValidationError


@dataclass
class DiagnosticsRow:
    """One report record: percentages in [0,100], l2 >= 0."""
    label: str
    iou_pct: float
    pixel_accuracy_pct: float
    perturbation_l2: float


def _as_mask(m):
    arr = np.asarray(m)
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError("masks must be integer arrays")
    return arr


def mean_iou(a, b, num_classes):
    """Class-wise intersection-over-union averaged over the classes with a
    nonempty union; classes absent from both masks are excluded."""
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValidationError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    if a.size and (max(a.max(), b.max()) >= num_classes or min(a.min(), b.min()) < 0):
        raise ValidationError(f"mask labels must lie in [0, {num_classes})")
    total = 0.0
    present = 0
    for c in range(num_classes):
        in_a = a == c
        in_b = b == c
        union = np.logical_or(in_a, in_b).sum()
        if union == 0:
            continue
        total += np.logical_and(in_a, in_b).sum() / union
        present += 1
    return total / present if present else 1.0


def pixel_agreement(a, b):
    """Fraction of pixels where the two masks carry the same label."""
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValidationError(f"mask shape mismatch: {a.shape} vs {b.shape}")
    return float((a == b).mean())


def _as_array(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def perturbation_l2(original, adversarial):
    """sqrt of the summed squared differences over all entries."""
    a, b = _as_array(original), _as_array(adversarial)
    if a.shape != b.shape:
        raise ValidationError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))
