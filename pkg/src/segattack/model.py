"""The victim segmentation network: a stack of dilated 3x3 convolutions
with relu, closed by a 1x1 classifier head ("ASPP-lite").

Hidden layers are given as (out_channels, kernel_size, dilation)
triples; a 1x1 convolution to num_classes channels is always appended
as the head. Training is plain SGD on pixelwise cross-entropy.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensorfile
from .autodiff import Tape, Tensor, backward, conv2d, cross_entropy, relu
from .errors import DataFormatError, ValidationError

DEFAULT_HIDDEN_LAYERS = ((16, 3, 1), (16, 3, 2), (16, 3, 4))

MODEL_FORMAT = "segattack-model"
MODEL_VERSION = 1

# Masks are plain integer arrays: (H,W) for one image, (B,H,W) batched.
SegMask = np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    in_channels: int = 3
    hidden_layers: tuple = DEFAULT_HIDDEN_LAYERS
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.in_channels < 1:
            raise ValidationError(f"in_channels must be >= 1, got {self.in_channels}")
        layers = tuple(tuple(spec) for spec in self.hidden_layers)
        object.__setattr__(self, "hidden_layers", layers)
        for out_ch, k, dil in layers:
            if out_ch < 1:
                raise ValidationError(f"layer channels must be >= 1, got {out_ch}")
            if k < 1 or k % 2 != 1:
                raise ValidationError(f"kernel sizes must be odd, got {k}")
            if dil < 1:
                raise ValidationError(f"dilations must be positive, got {dil}")

    def full_layers(self):
        """Hidden layers plus the implied 1x1 head to num_classes channels."""
        return self.hidden_layers + ((self.num_classes, 1, 1),)

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "hidden_layers": [list(spec) for spec in self.hidden_layers],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            num_classes=int(d["num_classes"]),
            in_channels=int(d.get("in_channels", 3)),
            hidden_layers=tuple(tuple(int(v) for v in spec)
                                for spec in d.get("hidden_layers", DEFAULT_HIDDEN_LAYERS)),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class ModelParams:
    config: ModelConfig
    kernels: list = field(default_factory=list)
    biases: list = field(default_factory=list)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 40
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")


def init_model(config):
    """Seed-deterministic init: kernels ~ uniform(-s, s) with
    s = sqrt(1/(Cin*k*k)), biases zero."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    params = ModelParams(config=config)
    cin = config.in_channels
    for out_ch, k, _ in config.full_layers():
        s = np.sqrt(1.0 / (cin * k * k))
        params.kernels.append(Tensor(rng.uniform(-s, s, size=(out_ch, cin, k, k))))
        params.biases.append(Tensor(np.zeros(out_ch)))
        cin = out_ch
    return params


def forward(params, images):
    """Full-resolution class logits (B,M,H,W) for images (B,C,H,W)."""
    if images.data.ndim != 4:
        raise ValidationError(f"images must be (B,C,H,W), got shape {images.shape}")
    if images.shape[1] != params.config.in_channels:
        raise ValidationError(
            f"images have {images.shape[1]} channels, model expects "
            f"{params.config.in_channels}")
    layers = params.config.full_layers()
    h = images
    for idx, (_, _, dilation) in enumerate(layers):
        h = conv2d(h, params.kernels[idx], params.biases[idx], dilation)
        if idx < len(layers) - 1:
            h = relu(h)
    return h


def predict_mask(logits):
    """Per-pixel argmax over the class axis; ties go to the lowest index."""
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if data.ndim != 4 or data.shape[1] < 2:
        raise ValidationError(f"logits must be (B,M,H,W) with M>=2, got {data.shape}")
    return np.argmax(data, axis=1)


def _as_image_array(image):
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"dataset image must be (C,H,W), got shape {arr.shape}")
    return arr


def train(params, dataset, cfg):
    """SGD on cross-entropy; returns (new ModelParams, per-epoch mean loss).

    Shuffling is fixed by cfg.seed; the input params are not mutated.
    """
    if not dataset:
        raise ValidationError("training dataset is empty")
    images = []
    masks = []
    m = params.config.num_classes
    for image, mask in dataset:
        images.append(_as_image_array(image))
        mask = np.asarray(mask)
        if mask.size and (mask.min() < 0 or mask.max() >= m):
            raise ValidationError(f"mask labels must lie in [0, {m})")
        masks.append(mask)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    current = ModelParams(config=params.config,
                          kernels=list(params.kernels),
                          biases=list(params.biases))
    n = len(images)
    loss_trace = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            x = Tensor(np.stack([images[i] for i in batch]))
            y = np.stack([masks[i] for i in batch])
            tape = Tape()
            watched_k = [tape.watch(t.copy()) for t in current.kernels]
            watched_b = [tape.watch(t.copy()) for t in current.biases]
            working = ModelParams(config=current.config,
                                  kernels=watched_k, biases=watched_b)
            loss = cross_entropy(forward(working, x), y)
            grads = backward(loss, tape)
            lr = cfg.learning_rate
            current = ModelParams(
                config=current.config,
                kernels=[Tensor(t.data - lr * grads[t.tape_id].data)
                         for t in watched_k],
                biases=[Tensor(t.data - lr * grads[t.tape_id].data)
                        for t in watched_b])
            epoch_loss += loss.item() * len(batch)
        loss_trace.append(epoch_loss / n)
    return current, loss_trace


def clean_pixel_accuracy(params, dataset):
    """Fraction of pixels the model labels like the dataset masks."""
    correct = 0
    total = 0
    for image, mask in dataset:
        logits = forward(params, Tensor(_as_image_array(image)[None]))
        pred = predict_mask(logits)[0]
        correct += int((pred == np.asarray(mask)).sum())
        total += pred.size
    return correct / total


def save_model(params, path):
    """JSON header line, then one SGT1 block per kernel/bias in layer order."""
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "config": params.config.to_dict(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for kernel, bias in zip(params.kernels, params.biases):
            tensorfile.write_tensor_block(fh, kernel.data)
            tensorfile.write_tensor_block(fh, bias.data)


def load_model(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.endswith(b"\n"):
            raise DataFormatError("model file: missing header line")
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"model file: bad JSON header: {exc}") from exc
        if header.get("format") != MODEL_FORMAT:
            raise DataFormatError(
                f"model file: unexpected format {header.get('format')!r}")
        if header.get("version") != MODEL_VERSION:
            raise DataFormatError(
                f"model file: unsupported version {header.get('version')!r}")
        config = ModelConfig.from_dict(header["config"])
        params = ModelParams(config=config)
        cin = config.in_channels
        for layer_idx, (out_ch, k, _) in enumerate(config.full_layers()):
            kernel = tensorfile.read_tensor_block(fh)
            bias = tensorfile.read_tensor_block(fh)
            if kernel.shape != (out_ch, cin, k, k):
                raise DataFormatError(
                    f"model file: layer {layer_idx} kernel shape {kernel.shape} "
                    f"does not match config {(out_ch, cin, k, k)}")
            if bias.shape != (out_ch,):
                raise DataFormatError(
                    f"model file: layer {layer_idx} bias shape {bias.shape} "
                    f"does not match config ({out_ch},)")
            params.kernels.append(Tensor(kernel))
            params.biases.append(Tensor(bias))
            cin = out_ch
        trailing = fh.read(1)
        if trailing:
            raise DataFormatError(
                f"model file: trailing data after last tensor at byte {fh.tell() - 1}")
    return params
