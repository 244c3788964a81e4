"""Targeted white-box attacks against the segmentation network.

Both attacks drive the model's prediction toward a chosen target mask
Y_t and never mutate their inputs.

pgd_attack descends the pixelwise cross-entropy toward Y_t with steps
of -alpha * gradient (optionally -alpha * sign(gradient)), projects the
perturbation into the L-infinity epsilon ball after every step, and
clamps the perturbed image to [0,1]. The gradient is evaluated at the
clamped image, i.e. the image actually fed to the model.

asma_attack ascends the summed class scores of exactly those pixels
whose prediction does not yet match the target class: per class c, the
class-c score map contributes only where Y_t == c and argmax != c.
Pixels already correct contribute nothing, so a fully matching
prediction is a fixed point. The step size adapts to progress:
alpha_n = beta * IoU(Y_t, prediction_n) + tau. There is no epsilon
constraint; the perturbation norm is tracked as a diagnostic instead.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import (Tape, Tensor, backward, cross_entropy, masked_sum,
                       pixelwise_softmax)
from .errors import ValidationError
from .metrics import DiagnosticsRow, mean_iou, perturbation_l2, pixel_agreement
from .model import forward, predict_mask

TRACE_HEADER = ("iter", "loss", "iou_to_target", "pixacc_to_target", "alpha_n")


@dataclass(frozen=True)
class PgdConfig:
    epsilon: float = 0.1
    alpha: float = 100.0
    iterations: int = 300
    use_sign_step: bool = False
    early_stop: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.alpha <= 0:
            raise ValidationError(f"alpha must be > 0, got {self.alpha}")
        if self.iterations < 0:
            raise ValidationError(f"iterations must be >= 0, got {self.iterations}")


@dataclass(frozen=True)
class AsmaConfig:
    beta: float = 3e-6
    tau: float = 1e-5
    iterations: int = 500
    use_probabilities: bool = False
    early_stop: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if self.tau <= 0:
            raise ValidationError(f"tau must be > 0, got {self.tau}")
        if self.iterations < 0:
            raise ValidationError(f"iterations must be >= 0, got {self.iterations}")


@dataclass
class TraceRow:
    iteration: int
    loss: float
    iou_to_target: float
    pixacc_to_target: float
    alpha_n: Optional[float] = None


@dataclass
class AttackResult:
    adversarial_image: Tensor
    perturbation: Tensor
    trace: list
    diagnostics: DiagnosticsRow


def project_linf(perturbation, epsilon):
    """Clamp every entry of the perturbation to [-epsilon, +epsilon]."""
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")
    return Tensor(np.clip(perturbation.data, -epsilon, epsilon))


def adaptive_alpha(beta, tau, iou):
    """Step multiplier beta * iou + tau."""
    if not 0.0 <= iou <= 1.0:
        raise ValidationError(f"iou must lie in [0,1], got {iou}")
    return beta * iou + tau


def _validate_attack_inputs(params, x, y_t, check_range=True):
    if x.data.ndim != 4:
        raise ValidationError(f"attack input must be (B,C,H,W), got shape {x.shape}")
    if x.shape[1] != params.config.in_channels:
        raise ValidationError(
            f"input has {x.shape[1]} channels, model expects "
            f"{params.config.in_channels}")
    if check_range and (x.data.min() < 0.0 or x.data.max() > 1.0):
        raise ValidationError("attack input values must lie in [0,1]")
    y_t = np.asarray(y_t)
    b, _, h, w = x.shape
    if y_t.shape != (b, h, w):
        raise ValidationError(
            f"target mask shape {y_t.shape} does not match input {(b, h, w)}")
    if not np.issubdtype(y_t.dtype, np.integer):
        raise ValidationError("target mask labels must be integers")
    m = params.config.num_classes
    if y_t.size and (y_t.min() < 0 or y_t.max() >= m):
        raise ValidationError(f"target labels must lie in [0, {m})")
    return y_t


def _ce_input_grad(params, x_arr, y_t):
    """Loss value, its input gradient, and the logits at x_arr."""
    tape = Tape()
    x = tape.watch(Tensor(x_arr))
    logits = forward(params, x)
    loss = cross_entropy(logits, y_t)
    grads = backward(loss, tape)
    return loss.item(), grads[x.tape_id].data, logits.data


def _masked_score_grad(params, x_arr, y_t, use_probabilities):
    """Input gradient of the masked score sum, plus the logits."""
    tape = Tape()
    x = tape.watch(Tensor(x_arr))
    logits = forward(params, x)
    scores = pixelwise_softmax(logits) if use_probabilities else logits
    pred = predict_mask(logits)
    m = params.config.num_classes
    classes = np.arange(m)[None, :, None, None]
    wanted = y_t[:, None] == classes
    not_there = pred[:, None] != classes
    mask = np.logical_and(wanted, not_there).astype(np.float64)
    objective = masked_sum(scores, mask)
    grads = backward(objective, tape)
    grad = grads.get(x.tape_id)
    grad_arr = grad.data if grad is not None else np.zeros_like(x_arr)
    return grad_arr, logits.data


def asma_gradient(params, x_n, y_t, use_probabilities=False):
    """One masked-score gradient step direction at the current image."""
    y_t = _validate_attack_inputs(params, x_n, y_t, check_range=False)
    grad, _ = _masked_score_grad(params, x_n.data, y_t, use_probabilities)
    return Tensor(grad)


def _ce_value(logits_arr, y_t):
    zmax = logits_arr.max(axis=1)
    lse = zmax + np.log(np.exp(logits_arr - zmax[:, None]).sum(axis=1))
    picked = np.take_along_axis(logits_arr, y_t[:, None], axis=1)[:, 0]
    return float((lse - picked).mean())


def _final_diagnostics(params, label, x0, x_adv, num_classes):
    clean_pred = predict_mask(forward(params, Tensor(x0)))
    adv_pred = predict_mask(forward(params, Tensor(x_adv)))
    return DiagnosticsRow(
        label=label,
        iou_pct=100.0 * mean_iou(adv_pred, clean_pred, num_classes),
        pixel_accuracy_pct=100.0 * pixel_agreement(adv_pred, clean_pred),
        perturbation_l2=perturbation_l2(x0, x_adv),
    )


def pgd_attack(params, x, y_t, cfg, on_iterate=None):
    """Targeted projected gradient descent within the epsilon ball.

    on_iterate, if given, is called as on_iterate(n, x_adv, perturbation)
    with the image evaluated at each iteration and once more with the
    final image; both arrays are copies.
    """
    y_t = _validate_attack_inputs(params, x, y_t, check_range=True)
    m = params.config.num_classes
    x0 = x.data.copy()
    pert = np.zeros_like(x0)
    trace = []
    for n in range(cfg.iterations):
        x_adv = np.clip(x0 + pert, 0.0, 1.0)
        loss, grad, logits = _ce_input_grad(params, x_adv, y_t)
        pred = np.argmax(logits, axis=1)
        pix = pixel_agreement(pred, y_t)
        trace.append(TraceRow(
            iteration=n,
            loss=loss,
            iou_to_target=mean_iou(y_t, pred, m),
            pixacc_to_target=pix,
        ))
        if on_iterate is not None:
            on_iterate(n, x_adv.copy(), pert.copy())
        if cfg.early_stop and pix == 1.0:
            break
        step = cfg.alpha * (np.sign(grad) if cfg.use_sign_step else grad)
        pert = np.clip(pert - step, -cfg.epsilon, cfg.epsilon)
    x_final = np.clip(x0 + pert, 0.0, 1.0)
    if on_iterate is not None:
        on_iterate(len(trace), x_final.copy(), pert.copy())
    return AttackResult(
        adversarial_image=Tensor(x_final),
        perturbation=Tensor(pert),
        trace=trace,
        diagnostics=_final_diagnostics(params, "pgd", x0, x_final, m),
    )


def asma_attack(params, x, y_t, cfg, on_iterate=None):
    """Adaptive masked-gradient attack; the result's perturbation is
    the raw difference between the final and original image."""
    y_t = _validate_attack_inputs(params, x, y_t, check_range=True)
    m = params.config.num_classes
    x0 = x.data.copy()
    x_n = x0.copy()
    trace = []
    for n in range(cfg.iterations):
        grad, logits = _masked_score_grad(params, x_n, y_t, cfg.use_probabilities)
        pred = np.argmax(logits, axis=1)
        iou = mean_iou(y_t, pred, m)
        pix = pixel_agreement(pred, y_t)
        alpha_n = adaptive_alpha(cfg.beta, cfg.tau, iou)
        trace.append(TraceRow(
            iteration=n,
            loss=_ce_value(logits, y_t),
            iou_to_target=iou,
            pixacc_to_target=pix,
            alpha_n=alpha_n,
        ))
        if on_iterate is not None:
            on_iterate(n, x_n.copy(), x_n - x0)
        if cfg.early_stop and pix == 1.0:
            break
        x_n = np.clip(x_n + alpha_n * grad, 0.0, 1.0)
    if on_iterate is not None:
        on_iterate(len(trace), x_n.copy(), x_n - x0)
    return AttackResult(
        adversarial_image=Tensor(x_n.copy()),
        perturbation=Tensor(x_n - x0),
        trace=trace,
        diagnostics=_final_diagnostics(params, "asma", x0, x_n, m),
    )


def write_trace_csv(trace, path):
    """Per-iteration attack trace; alpha_n is empty for PGD rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow([
                row.iteration,
                format(row.loss, ".10g"),
                format(row.iou_to_target, ".10g"),
                format(row.pixacc_to_target, ".10g"),
                "" if row.alpha_n is None else format(row.alpha_n, ".10g"),
            ])


def read_trace_csv(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != TRACE_HEADER:
            raise ValidationError(f"{path}: unexpected trace header {header!r}")
        trace = []
        for rec in reader:
            trace.append(TraceRow(
                iteration=int(rec[0]),
                loss=float(rec[1]),
                iou_to_target=float(rec[2]),
                pixacc_to_target=float(rec[3]),
                alpha_n=float(rec[4]) if rec[4] else None,
            ))
    return trace
