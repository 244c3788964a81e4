"""Dense float64 tensors with reverse-mode autodiff.

The operation set is exactly what the segmentation network and the
attacks need: dilated same-padded convolution, relu, pixelwise softmax,
cross-entropy against an integer mask, elementwise add/mul, full sum,
and a masked sum used to build attack objectives.

A Tape records a Wengert list of nodes. Only tensors watched on a tape
(or derived from watched tensors) are tracked; constants flow through
untracked, so e.g. an attack that watches the image never pays for
parameter gradients. No operation mutates its inputs.
"""

import numpy as np

from . import backend
from .errors import ValidationError


class Tensor:
    """Row-major float64 array, optionally linked into a gradient tape."""

    __slots__ = ("data", "tape", "tape_id")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr)
        self.tape = None
        self.tape_id = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ValidationError(f"item() on tensor of shape {self.shape}")
        return float(self.data)

    def copy(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tracked = "" if self.tape_id is None else f", tape_id={self.tape_id}"
        return f"Tensor(shape={tuple(self.shape)}{tracked})"


class _Node:
    __slots__ = ("kind", "inputs", "out", "ctx")

    def __init__(self, kind, inputs, out, ctx):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.ctx = ctx


class Tape:
    """Ordered record of tracked operations plus the last gradient map."""

    def __init__(self):
        self.nodes = []
        self.gradients = {}
        self._next_id = 0

    def _fresh_id(self):
        i = self._next_id
        self._next_id += 1
        return i

    def watch(self, tensor):
        """Mark `tensor` as a differentiable input of this tape."""
        if tensor.tape is self:
            return tensor
        if tensor.tape is not None:
            raise ValidationError("tensor is already attached to another tape")
        tensor.tape = self
        tensor.tape_id = self._fresh_id()
        return tensor


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValidationError("operands belong to different tapes")
            tape = t.tape
    return tape


def _emit(tape, kind, inputs, ctx, data):
    out = Tensor(data)
    if tape is not None:
        out.tape = tape
        out.tape_id = tape._fresh_id()
        ids = tuple(t.tape_id for t in inputs)
        tape.nodes.append(_Node(kind, ids, out.tape_id, ctx))
    return out


def _require_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValidationError(f"{what}: shape {a.shape} vs {b.shape}")


def add(a, b):
    _require_same_shape(a, b, "add")
    return _emit(_tape_of(a, b), "add", (a, b), (), a.data + b.data)


def mul(a, b):
    """Elementwise product."""
    _require_same_shape(a, b, "mul")
    return _emit(_tape_of(a, b), "mul", (a, b), (a.data, b.data),
                 a.data * b.data)


def sum_all(a):
    """Sum of all entries, as a scalar tensor."""
    return _emit(_tape_of(a), "sum", (a,), (a.data.shape,),
                 np.asarray(a.data.sum()))


def relu(a):
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    mask = a.data > 0.0
    return _emit(_tape_of(a), "relu", (a,), (mask,), np.where(mask, a.data, 0.0))


def conv2d(x, kernel, bias, dilation=1):
    """Same-padded, stride-1 2D convolution with integer dilation.

    x is (B,Cin,H,W), kernel (Cout,Cin,k,k) with odd k, bias (Cout,).
    Output keeps the input's spatial size; zero padding of width
    dilation*(k-1)/2 on each side.
    """
    if x.data.ndim != 4:
        raise ValidationError(f"conv2d input must be 4D, got shape {x.shape}")
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ValidationError(
            f"conv2d kernel must be (Cout,Cin,k,k), got shape {kernel.shape}")
    k = kernel.shape[2]
    if k % 2 != 1:
        raise ValidationError(f"kernel size must be odd, got {k}")
    if not isinstance(dilation, (int, np.integer)) or dilation < 1:
        raise ValidationError(f"dilation must be a positive integer, got {dilation!r}")
    if x.shape[1] != kernel.shape[1]:
        raise ValidationError(
            f"conv2d channel mismatch: input has {x.shape[1]} channels, "
            f"kernel expects {kernel.shape[1]}")
    if bias.data.shape != (kernel.shape[0],):
        raise ValidationError(
            f"bias must have shape ({kernel.shape[0]},), got {bias.shape}")
    out = backend.kernels().conv2d_forward(x.data, kernel.data, bias.data,
                                           int(dilation))
    return _emit(_tape_of(x, kernel, bias), "conv2d", (x, kernel, bias),
                 (x.data, kernel.data, int(dilation)), out)


def pixelwise_softmax(logits):
    """Softmax over the class axis of a (B,M,H,W) tensor, per pixel."""
    if logits.data.ndim != 4 or logits.shape[1] < 2:
        raise ValidationError(
            f"pixelwise_softmax needs (B,M,H,W) with M>=2, got {logits.shape}")
    probs = _softmax(logits.data)
    return _emit(_tape_of(logits), "softmax", (logits,), (probs,), probs)


def _softmax(z):
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(target, num_classes, what="target"):
    target = np.asarray(target)
    if not np.issubdtype(target.dtype, np.integer):
        raise ValidationError(f"{what} labels must be integers")
    if target.size and (target.min() < 0 or target.max() >= num_classes):
        raise ValidationError(
            f"{what} labels must lie in [0, {num_classes}), "
            f"got range [{target.min()}, {target.max()}]")
    return target


def cross_entropy(logits, target):
    """Mean over all pixels of -log softmax(logits)[target class].

    logits is (B,M,H,W); target an integer (B,H,W) mask with labels in
    [0, M). Differentiable w.r.t. logits.
    """
    if logits.data.ndim != 4:
        raise ValidationError(f"logits must be 4D, got shape {logits.shape}")
    b, m, h, w = logits.shape
    target = _check_labels(target, m)
    if target.shape != (b, h, w):
        raise ValidationError(
            f"target shape {target.shape} does not match logits {logits.shape}")
    z = logits.data
    zmax = z.max(axis=1)
    lse = zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))
    picked = np.take_along_axis(z, target[:, None], axis=1)[:, 0]
    npix = b * h * w
    loss = (lse - picked).sum() / npix
    probs = np.exp(z - lse[:, None])
    return _emit(_tape_of(logits), "cross_entropy", (logits,),
                 (probs, target, npix), np.asarray(loss))


def masked_sum(a, mask):
    """Sum of entries of `a` where `mask` is nonzero (mask is a constant)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.data.shape:
        raise ValidationError(
            f"mask shape {mask.shape} does not match tensor {a.shape}")
    return _emit(_tape_of(a), "masked_sum", (a,), (mask,),
                 np.asarray((a.data * mask).sum()))


def _bwd_add(g, node):
    return (g, g)


def _bwd_mul(g, node):
    a, b = node.ctx
    return (g * b if node.inputs[0] is not None else None,
            g * a if node.inputs[1] is not None else None)


def _bwd_sum(g, node):
    (shape,) = node.ctx
    return (np.full(shape, float(g)),)


def _bwd_relu(g, node):
    (mask,) = node.ctx
    return (np.where(mask, g, 0.0),)


def _bwd_conv2d(g, node):
    x, w, dilation = node.ctx
    kern = backend.kernels()
    gx = gw = gb = None
    if node.inputs[0] is not None:
        gx = kern.conv2d_grad_input(g, w, dilation)
    if node.inputs[1] is not None:
        gw = kern.conv2d_grad_kernel(g, x, w.shape[2], dilation)
    if node.inputs[2] is not None:
        gb = g.sum(axis=(0, 2, 3))
    return (gx, gw, gb)


def _bwd_softmax(g, node):
    (probs,) = node.ctx
    inner = (g * probs).sum(axis=1, keepdims=True)
    return (probs * (g - inner),)


def _bwd_cross_entropy(g, node):
    probs, target, npix = node.ctx
    onehot = (target[:, None] == np.arange(probs.shape[1])[None, :, None, None])
    return ((probs - onehot) * (float(g) / npix),)


def _bwd_masked_sum(g, node):
    (mask,) = node.ctx
    return (mask * float(g),)


_BACKWARD = {
    "add": _bwd_add,
    "mul": _bwd_mul,
    "sum": _bwd_sum,
    "relu": _bwd_relu,
    "conv2d": _bwd_conv2d,
    "softmax": _bwd_softmax,
    "cross_entropy": _bwd_cross_entropy,
    "masked_sum": _bwd_masked_sum,
}


def backward(loss, tape):
    """Reverse sweep from a scalar loss; returns {tape_id: gradient Tensor}.

    Gradients accumulate by addition at fan-out. Every watched tensor
    reachable from the loss ends up with a gradient of its own shape.
    """
    if loss.data.size != 1:
        raise ValidationError(f"loss must be scalar, got shape {loss.shape}")
    if loss.tape is not tape or loss.tape_id is None:
        raise ValidationError("loss was not produced through this tape")
    grads = {loss.tape_id: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.get(node.out)
        if g is None:
            continue
        for input_id, ig in zip(node.inputs, _BACKWARD[node.kind](g, node)):
            if input_id is None or ig is None:
                continue
            if input_id in grads:
                grads[input_id] = grads[input_id] + ig
            else:
                grads[input_id] = ig
    result = {tid: Tensor(arr) for tid, arr in grads.items()}
    tape.gradients = result
    return result


def grad_of(grads, tensor):
    """Look up a watched tensor's gradient in a backward() result."""
    if tensor.tape_id is None:
        raise ValidationError("tensor was never watched on a tape")
    return grads.get(tensor.tape_id)


def finite_diff_check(f, x, step=1e-5):
    """Max relative error between tape and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor built from tape ops. The
    relative error per coordinate uses max(|analytic|, |numeric|, 1e-8)
    as denominator.
    """
    if step <= 0:
        raise ValidationError(f"step must be positive, got {step}")
    tape = Tape()
    xt = Tensor(x.data.copy())
    tape.watch(xt)
    loss = f(xt)
    grads = backward(loss, tape)
    g = grads.get(xt.tape_id)
    analytic = g.data if g is not None else np.zeros_like(xt.data)

    numeric = np.zeros_like(xt.data)
    flat = numeric.reshape(-1)
    base = x.data.copy().reshape(-1)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        hi = f(Tensor(base.reshape(x.data.shape))).item()
        base[i] = orig - step
        lo = f(Tensor(base.reshape(x.data.shape))).item()
        base[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())
