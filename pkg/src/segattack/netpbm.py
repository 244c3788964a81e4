"""Binary PPM (P6) and PGM (P5) readers/writers, maxval 255.

Images are float64 (3,H,W) in [0,1], quantized with round(v*255) on
write and mapped back as v/255 on read. Masks are integer (H,W) class
maps stored one byte per pixel. Header parsing accepts '#' comments
and arbitrary whitespace, as produced by common netpbm tools.
"""

import numpy as np

from .autodiff import Tensor
from .errors import DataFormatError, ValidationError


def _tokenize_header(data, n_tokens, path):
    """Return (tokens, payload_offset) for a netpbm header."""
    tokens = []
    i = 0
    while len(tokens) < n_tokens:
        if i >= len(data):
            raise DataFormatError(f"{path}: truncated header")
        ch = data[i:i + 1]
        if ch == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            i += 1
        elif ch.isspace():
            i += 1
        else:
            start = i
            while i < len(data) and not data[i:i + 1].isspace() and data[i:i + 1] != b"#":
                i += 1
            tokens.append(data[start:i])
    # exactly one whitespace byte separates the maxval from the payload
    if i >= len(data) or not data[i:i + 1].isspace():
        raise DataFormatError(f"{path}: missing separator before payload")
    return tokens, i + 1


def _parse_dims(tokens, path):
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric header field") from exc
    if width < 1 or height < 1:
        raise DataFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise DataFormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    return width, height


def write_image_ppm(image, path):
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"PPM image must be (3,H,W), got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError("PPM image values must lie in [0,1]")
    h, w = arr.shape[1], arr.shape[2]
    payload = np.rint(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(payload.tobytes())


def read_image_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _tokenize_header(data, 4, path)
    if tokens[0] != b"P6":
        raise DataFormatError(f"{path}: expected P6 magic, got {tokens[0]!r}")
    width, height = _parse_dims(tokens, path)
    expected = width * height * 3
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise DataFormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Tensor(pixels.transpose(2, 0, 1).astype(np.float64) / 255.0)


def write_mask_pgm(mask, path):
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValidationError(f"PGM mask must be (H,W), got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError("PGM mask labels must be integers")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValidationError("PGM mask labels must lie in [0, 256)")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.astype(np.uint8).tobytes())


def read_mask_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, offset = _tokenize_header(data, 4, path)
    if tokens[0] != b"P5":
        raise DataFormatError(f"{path}: expected P5 magic, got {tokens[0]!r}")
    width, height = _parse_dims(tokens, path)
    expected = width * height
    payload = data[offset:offset + expected]
    if len(payload) < expected:
        raise DataFormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).astype(np.int64)
