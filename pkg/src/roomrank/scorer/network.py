"""Perceptual scorer network: conv stack -> dense -> sigmoid, written in numpy.

Default architecture for a 96 x 500 log-mel input:
    5 x [conv 7x7, stride 5 on both axes, ceil-mode "same" padding, 16 filters, ReLU, dropout]
    flatten -> dense 256, ReLU, dropout -> 1 unit, sigmoid
Spatial shapes: 96x500 -> 20x100 -> 4x20 -> 1x4 -> 1x1 -> 1x1.

Dropout is inverted (kept units scale by 1 / (1 - rate)) and only active in
train mode. Parameters are kept at float32 precision (stored as float64) so a
saved model reloads bit-exactly.

Usage as library:
    from roomrank.scorer.network import ScorerArchitecture, init_model, forward
    model = init_model(ScorerArchitecture(), seed=42)
    score = forward(model, mel)                      # infer mode
    result = backward(model, mel, target=0.9, rng=rng)
"""

import math
from dataclasses import dataclass, field

import numpy as np

from roomrank.features import MelSpectrogram

MODEL_VERSION = 1
LOGIT_CLIP = 35.0
MODES = ("train", "infer")


class ModelError(Exception):
    """Input shape or parameter layout does not match the architecture."""
    pass


@dataclass(frozen=True)
class ScorerArchitecture:
    input_shape: tuple = (96, 500)
    conv_filters: tuple = (16, 16, 16, 16, 16)
    kernel: int = 7
    stride: int = 5
    dense_units: int = 256
    dropout_rate: float = 0.5

    def conv_shapes(self):
        """(in_h, in_w, in_c, out_h, out_w, out_c) per conv layer."""
        shapes = []
        h, w = self.input_shape
        c = 1
        for filters in self.conv_filters:
            oh, ow = math.ceil(h / self.stride), math.ceil(w / self.stride)
            shapes.append((h, w, c, oh, ow, filters))
            h, w, c = oh, ow, filters
        return shapes

    def flat_size(self):
        h, w, c = self.input_shape[0], self.input_shape[1], 1
        if self.conv_filters:
            _, _, _, h, w, c = self.conv_shapes()[-1]
        return h * w * c

    def param_shapes(self):
        """Ordered {name: shape} for every weight and bias."""
        shapes = {}
        for i, (_, _, cin, _, _, cout) in enumerate(self.conv_shapes()):
            shapes[f"conv{i}.w"] = (self.kernel, self.kernel, cin, cout)
            shapes[f"conv{i}.b"] = (cout,)
        shapes["dense.w"] = (self.flat_size(), self.dense_units)
        shapes["dense.b"] = (self.dense_units,)
        shapes["head.w"] = (self.dense_units, 1)
        shapes["head.b"] = (1,)
        return shapes


@dataclass
class ScorerModel:
    """Weights plus the fixed input standardization (x - shift) / scale."""

    architecture: ScorerArchitecture
    params: dict
    input_shift: float = 0.0
    input_scale: float = 1.0
    version: int = MODEL_VERSION

    @property
    def n_params(self):
        return int(sum(p.size for p in self.params.values()))

    def copy(self):
        return ScorerModel(
            architecture=self.architecture,
            params={k: v.copy() for k, v in self.params.items()},
            input_shift=self.input_shift,
            input_scale=self.input_scale,
            version=self.version,
        )

    def validate(self):
        expected = self.architecture.param_shapes()
        if list(expected) != list(self.params):
            raise ModelError(f"Parameter names {list(self.params)} do not match architecture")
        for name, shape in expected.items():
            if self.params[name].shape != tuple(shape):
                raise ModelError(
                    f"Parameter {name} has shape {self.params[name].shape}, expected {shape}"
                )
            if not np.all(np.isfinite(self.params[name])):
                raise ModelError(f"Parameter {name} has non-finite values")


def to_float32_precision(array):
    """Round to the nearest float32 value, keep float64 storage."""
    return np.asarray(array, dtype=np.float32).astype(np.float64)


def init_model(architecture=None, seed=42, rng=None):
    """Fan-in scaled uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    architecture = architecture or ScorerArchitecture()
    rng = rng if rng is not None else np.random.default_rng(seed)
    params = {}
    for name, shape in architecture.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
            continue
        fan_in = int(np.prod(shape[:-1]))
        limit = math.sqrt(6.0 / fan_in)
        params[name] = to_float32_precision(rng.uniform(-limit, limit, size=shape))
    return ScorerModel(architecture=architecture, params=params)


def zero_model(architecture=None):
    """All weights and biases zero."""
    architecture = architecture or ScorerArchitecture()
    params = {name: np.zeros(shape) for name, shape in architecture.param_shapes().items()}
    return ScorerModel(architecture=architecture, params=params)


# --- Layers ---

def _same_padding(n, kernel, stride):
    out = math.ceil(n / stride)
    total = max((out - 1) * stride + kernel - n, 0)
    return out, total // 2, total - total // 2


def _conv_forward(a, w, b, stride):
    kh, kw, cin, cout = w.shape
    h, wd, _ = a.shape
    oh, ph0, ph1 = _same_padding(h, kh, stride)
    ow, pw0, pw1 = _same_padding(wd, kw, stride)
    padded = np.pad(a, ((ph0, ph1), (pw0, pw1), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    windows = windows[::stride, ::stride][:oh, :ow]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(oh * ow, kh * kw * cin)
    z = cols @ w.reshape(kh * kw * cin, cout) + b
    geometry = (padded.shape, ph0, pw0, h, wd, oh, ow)
    return z.reshape(oh, ow, cout), cols, geometry


def _conv_backward(dz, cols, w, stride, geometry, need_input_grad=True):
    kh, kw, cin, cout = w.shape
    padded_shape, ph0, pw0, h, wd, oh, ow = geometry
    dz_flat = dz.reshape(oh * ow, cout)
    dw = (cols.T @ dz_flat).reshape(w.shape)
    db = dz_flat.sum(axis=0)
    if not need_input_grad:
        return None, dw, db

    dcols = (dz_flat @ w.reshape(kh * kw * cin, cout).T).reshape(oh, ow, kh, kw, cin)
    dpadded = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            dpadded[i:i + stride * (oh - 1) + 1:stride,
                    j:j + stride * (ow - 1) + 1:stride, :] += dcols[:, :, i, j, :]
    return dpadded[ph0:ph0 + h, pw0:pw0 + wd, :], dw, db


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


# --- Forward / backward ---

@dataclass
class BackwardResult:
    loss: float
    score: float
    grads: dict = field(default_factory=dict)


def draw_dropout_masks(model, rng):
    """One inverted-dropout mask per conv layer plus one for the dense layer."""
    arch = model.architecture
    keep = 1.0 - arch.dropout_rate
    masks = []
    for _, _, _, oh, ow, cout in arch.conv_shapes():
        masks.append((rng.random((oh, ow, cout)) < keep) / keep)
    masks.append((rng.random(arch.dense_units) < keep) / keep)
    return masks


def _as_input(model, spec):
    values = spec.values if isinstance(spec, MelSpectrogram) else np.asarray(spec, dtype=np.float64)
    if values.shape != tuple(model.architecture.input_shape):
        raise ModelError(
            f"shape mismatch: expected {tuple(model.architecture.input_shape)}, got {values.shape}"
        )
    return ((values - model.input_shift) / model.input_scale)[:, :, None]


def _forward(model, spec, masks):
    p = model.params
    stride = model.architecture.stride
    n_conv = len(model.architecture.conv_filters)
    a = _as_input(model, spec)
    cache = {"conv": []}
    for i in range(n_conv):
        z, cols, geometry = _conv_forward(a, p[f"conv{i}.w"], p[f"conv{i}.b"], stride)
        out = _relu(z)
        if masks is not None:
            out = out * masks[i]
        cache["conv"].append((z, cols, geometry))
        a = out

    flat = a.reshape(-1)
    zd = flat @ p["dense.w"] + p["dense.b"]
    hidden = _relu(zd)
    if masks is not None:
        hidden = hidden * masks[-1]
    logit = float(hidden @ p["head.w"][:, 0] + p["head.b"][0])
    clipped = min(max(logit, -LOGIT_CLIP), LOGIT_CLIP)
    score = _sigmoid(clipped)
    cache.update(last_shape=a.shape, flat=flat, zd=zd, hidden=hidden, logit=logit)
    return score, cache


def _resolve_masks(model, mode, rng, masks):
    if mode not in MODES:
        raise ModelError(f"Unknown mode '{mode}'. Use 'train' or 'infer'.")
    if mode == "infer":
        return None
    if masks is not None:
        return masks
    if rng is None:
        raise ModelError("train mode needs an rng (or explicit dropout masks)")
    return draw_dropout_masks(model, rng)


def forward(model, spec, mode="infer", rng=None, masks=None):
    """Score a mel spectrogram.

    Args:
        model: ScorerModel.
        spec: MelSpectrogram or array with the architecture's input shape.
        mode: "infer" (deterministic, no dropout) or "train".
        rng: numpy Generator for train-mode dropout masks.
        masks: Explicit dropout masks (train mode), e.g. from draw_dropout_masks.

    Returns:
        Score strictly inside (0, 1).

    Raises:
        ModelError on shape mismatch.
    """
    masks = _resolve_masks(model, mode, rng, masks)
    score, _ = _forward(model, spec, masks)
    return score


def huber_loss(pred, target, delta=1.0):
    """Huber loss on e = pred - target and its derivative with respect to pred.

    Returns:
        (loss, grad): 0.5 e^2 and e inside |e| <= delta; delta (|e| - delta / 2)
        and delta sign(e) outside.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    e = float(pred) - float(target)
    if abs(e) <= delta:
        return 0.5 * e * e, e
    return delta * (abs(e) - 0.5 * delta), delta * math.copysign(1.0, e)


def backward(model, spec, target, mode="train", rng=None, masks=None, delta=1.0):
    """Exact gradients of huber_loss(forward(model, spec), target).

    In train mode the dropout masks (drawn from `rng` unless given) are held
    fixed through the pass.

    Returns:
        BackwardResult(loss, score, grads) with grads keyed like model.params.
    """
    masks = _resolve_masks(model, mode, rng, masks)
    score, cache = _forward(model, spec, masks)
    loss, dloss = huber_loss(score, target, delta)

    p = model.params
    arch = model.architecture
    grads = {}

    dlogit = dloss * score * (1.0 - score) if abs(cache["logit"]) < LOGIT_CLIP else 0.0
    grads["head.w"] = cache["hidden"][:, None] * dlogit
    grads["head.b"] = np.array([dlogit])

    dhidden = p["head.w"][:, 0] * dlogit
    if masks is not None:
        dhidden = dhidden * masks[-1]
    dzd = dhidden * (cache["zd"] > 0)
    grads["dense.w"] = np.outer(cache["flat"], dzd)
    grads["dense.b"] = dzd
    da = (p["dense.w"] @ dzd).reshape(cache["last_shape"])

    for i in reversed(range(len(arch.conv_filters))):
        z, cols, geometry = cache["conv"][i]
        if masks is not None:
            da = da * masks[i]
        dz = da * (z > 0)
        da, dw, db = _conv_backward(dz, cols, p[f"conv{i}.w"], arch.stride, geometry,
                                    need_input_grad=i > 0)
        grads[f"conv{i}.w"] = dw
        grads[f"conv{i}.b"] = db

    ordered = {name: grads[name] for name in p}
    return BackwardResult(loss=loss, score=score, grads=ordered)


def accumulate(grad_dicts):
    """Sum gradient dicts in the given order."""
    grad_dicts = list(grad_dicts)
    total = {k: np.zeros_like(v) for k, v in grad_dicts[0].items()}
    for grads in grad_dicts:
        for k, v in grads.items():
            total[k] += v
    return total


# --- Adam ---

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def init_adam_state(weights):
    return AdamState(
        m={k: np.zeros_like(np.asarray(w, dtype=np.float64)) for k, w in weights.items()},
        v={k: np.zeros_like(np.asarray(w, dtype=np.float64)) for k, w in weights.items()},
        step=0,
    )


def adam_step(weights, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Inputs are left untouched.

    Returns:
        (new_weights, new_state)
    """
    step = state.step + 1
    new_weights, new_m, new_v = {}, {}, {}
    for name, w in weights.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        new_weights[name] = np.asarray(w, dtype=np.float64) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_weights, AdamState(m=new_m, v=new_v, step=step)
