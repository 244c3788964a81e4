"""Deterministic synthetic segmentation scenes.

Each scene is a stack of colored rectangles/circles over a background,
painted back-to-front, plus mild uniform pixel noise. Class 0 is the
background; shape classes are drawn from [1, num_classes). A scene is
a pure function of (spec.seed, index).
"""

import colorsys
import json
import os
from dataclasses import dataclass

import numpy as np

from . import netpbm
from .autodiff import Tensor
from .errors import DataFormatError, ValidationError

NOISE_AMPLITUDE = 0.05


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 5
    shapes_min: int = 1
    shapes_max: int = 3
    kinds: tuple = ("rectangle", "circle")
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValidationError(
                f"scene must be at least 8x8, got {self.height}x{self.width}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if not (0 <= self.shapes_min <= self.shapes_max):
            raise ValidationError(
                f"bad shape count range [{self.shapes_min}, {self.shapes_max}]")
        kinds = tuple(self.kinds)
        if not kinds or any(k not in ("rectangle", "circle") for k in kinds):
            raise ValidationError(f"kinds must be a nonempty subset of "
                                  f"rectangle/circle, got {kinds!r}")
        object.__setattr__(self, "kinds", kinds)

    def to_dict(self):
        return {
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "shapes_min": self.shapes_min,
            "shapes_max": self.shapes_max,
            "kinds": list(self.kinds),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            height=int(d.get("height", 64)),
            width=int(d.get("width", 64)),
            num_classes=int(d.get("num_classes", 5)),
            shapes_min=int(d.get("shapes_min", 1)),
            shapes_max=int(d.get("shapes_max", 3)),
            kinds=tuple(d.get("kinds", ("rectangle", "circle"))),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class LabeledImage:
    image: Tensor          # (3,H,W), values in [0,1]
    mask: np.ndarray       # (H,W) int class labels


def class_palette():
    """Fixed 256-entry RGB palette for rendering masks; index 0 is a dark
    background gray, the rest are vivid golden-angle hues."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    palette[0] = (45, 45, 45)
    for c in range(1, 256):
        hue = (c * 0.61803398875) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
        palette[c] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


_COLOR_CENTER = np.array([0.5, 0.5, 0.5])
_COLOR_RADIUS = 0.13
# orthonormal chroma plane, so ring colors keep the same channel mean
_COLOR_U = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
_COLOR_V = np.array([1.0, 1.0, -2.0]) / np.sqrt(6.0)


def class_color(c, num_classes=5):
    """Base scene color of class c, as float RGB.

    The background is mid-gray and the shape classes sit on a small
    chroma ring around it, so every pair of classes is far enough apart
    to stay separable under the +-0.05 rendering noise, yet close
    enough that small-budget attacks can cross the class boundaries of
    a model keyed to these colors.
    """
    if c == 0:
        return _COLOR_CENTER.copy()
    angle = 2.0 * np.pi * (c - 1) / max(1, num_classes - 1) + 0.5
    return (_COLOR_CENTER + _COLOR_RADIUS * (np.cos(angle) * _COLOR_U +
                                             np.sin(angle) * _COLOR_V))


_PALETTE = class_palette()


def _scene_rng(spec, index):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, index]))


def _sample_shapes(spec, rng):
    h, w = spec.height, spec.width
    count = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
    shapes = []
    for _ in range(count):
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        cls = int(rng.integers(1, spec.num_classes))
        if kind == "rectangle":
            rh = int(rng.integers(h // 5, max(h // 5 + 1, h // 2)))
            rw = int(rng.integers(w // 5, max(w // 5 + 1, w // 2)))
            r0 = int(rng.integers(0, h - rh))
            c0 = int(rng.integers(0, w - rw))
            shapes.append(("rectangle", cls, r0, c0, r0 + rh, c0 + rw))
        else:
            radius = float(rng.uniform(min(h, w) / 8.0, min(h, w) / 4.0))
            cy = float(rng.uniform(radius, h - radius))
            cx = float(rng.uniform(radius, w - radius))
            shapes.append(("circle", cls, cy, cx, radius))
    return shapes


def sample_shapes(spec, index):
    """The shape list generate_scene(spec, index) rasterizes, in paint order.

    Rectangles are ("rectangle", cls, r0, c0, r1, c1) with half-open
    pixel bounds; circles are ("circle", cls, cy, cx, radius).
    """
    return _sample_shapes(spec, _scene_rng(spec, index))


def rasterize_shape(shape, height, width):
    """Boolean coverage of one shape on the pixel grid."""
    region = np.zeros((height, width), dtype=bool)
    if shape[0] == "rectangle":
        _, _, r0, c0, r1, c1 = shape
        region[r0:r1, c0:c1] = True
    else:
        _, _, cy, cx, radius = shape
        rr, cc = np.mgrid[0:height, 0:width]
        region = (rr - cy) ** 2 + (cc - cx) ** 2 <= radius ** 2
    return region


def generate_scene(spec, index):
    """Render scene `index`: bit-identical for identical (spec.seed, index)."""
    rng = _scene_rng(spec, index)
    h, w = spec.height, spec.width
    shapes = _sample_shapes(spec, rng)

    image = np.empty((3, h, w), dtype=np.float64)
    image[:] = class_color(0, spec.num_classes)[:, None, None]
    mask = np.zeros((h, w), dtype=np.int64)
    for shape in shapes:
        region = rasterize_shape(shape, h, w)
        image[:, region] = class_color(shape[1], spec.num_classes)[:, None]
        mask[region] = shape[1]
    noise = rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, size=(3, h, w))
    image = np.clip(image + noise, 0.0, 1.0)
    return LabeledImage(image=Tensor(image), mask=mask)


def generate_dataset(spec, count, start_index=0):
    return [generate_scene(spec, start_index + i) for i in range(count)]


def write_dataset(images, spec, out_dir, start_index=0):
    """Write PPM/PGM pairs plus the manifest (a JSON list of entries)."""
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    manifest = []
    for i, labeled in enumerate(images):
        index = start_index + i
        image_rel = os.path.join("images", f"image_{index:04d}.ppm")
        mask_rel = os.path.join("masks", f"mask_{index:04d}.pgm")
        netpbm.write_image_ppm(labeled.image, os.path.join(out_dir, image_rel))
        netpbm.write_mask_pgm(labeled.mask, os.path.join(out_dir, mask_rel))
        manifest.append({
            "image_path": image_rel,
            "mask_path": mask_rel,
            "seed": spec.seed,
            "index": index,
        })
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "scene.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return os.path.join(out_dir, "manifest.json")


def load_dataset(data_dir):
    """Read a dataset written by write_dataset back into memory."""
    manifest_path = os.path.join(data_dir, "manifest.json")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"no manifest.json under {data_dir}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{manifest_path}: bad JSON: {exc}") from exc
    if not isinstance(manifest, list):
        raise DataFormatError(f"{manifest_path}: manifest must be a JSON list")
    dataset = []
    for entry in manifest:
        image = netpbm.read_image_ppm(os.path.join(data_dir, entry["image_path"]))
        mask = netpbm.read_mask_pgm(os.path.join(data_dir, entry["mask_path"]))
        dataset.append(LabeledImage(image=image, mask=mask))
    return dataset
