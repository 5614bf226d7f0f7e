"""The compact encoder-decoder binarization network.

Encoder: ``levels`` stages of two 3x3 convolutions (stride 1 then stride 2),
ReLU after each. The output of every stride-2 convolution is projected to the
two class channels by a 1x1 convolution. Decoder: stride-2 transposed 3x3
convolutions; the first consumes the deepest projection, each later one the
channel concatenation of the previous decoder output with the projection of the
matching resolution. The last decoder output is softmax-normalized per pixel.

With the default architecture (5 levels, width 32, 224x224 gray input) the
feature maps are::

    CONV1_1 224x224x32   CONV1_2 112x112x32   ...   CONV5_2 7x7x32
    DECONV1 14x14x2      DECONV2 28x28x2      ...   DECONV5 224x224x2
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import conv_backward, conv_forward, cross_entropy, deconv_backward, deconv_forward, relu, relu_backward, softmax

NUM_CLASSES = 2
FOREGROUND = 1
BACKGROUND = 0


@dataclass(frozen=True)
class Architecture:
    levels: int = 5
    width: int = 32
    in_channels: int = 1
    block: int = 224

    def __post_init__(self):
        if self.levels < 1 or self.width < 1 or self.in_channels not in (1, 3):
            raise ValueError(f"invalid architecture {self}")
        if self.block % (2 ** self.levels):
            raise ValueError(f"block side {self.block} is not divisible by 2**{self.levels}")

    def layers(self) -> list["LayerSpec"]:
        specs = []
        cin = self.in_channels
        for i in range(1, self.levels + 1):
            specs.append(LayerSpec(f"conv{i}_1", "conv", (3, 3, self.width), 1, "relu", cin))
            specs.append(LayerSpec(f"conv{i}_2", "conv", (3, 3, self.width), 2, "relu", self.width))
            cin = self.width
        for i in range(1, self.levels + 1):
            specs.append(LayerSpec(f"reduce{i}", "reduce", (1, 1, NUM_CLASSES), 1, "none", self.width))
        for j in range(1, self.levels + 1):
            cin = NUM_CLASSES if j == 1 else 2 * NUM_CLASSES
            act = "none" if j == self.levels else "relu"
            specs.append(LayerSpec(f"deconv{j}", "deconv", (3, 3, NUM_CLASSES), 2, act, cin))
        return specs

    def fingerprint(self) -> str:
        desc = [asdict(s) for s in self.layers()]
        blob = json.dumps({"block": self.block, "layers": desc}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # conv | reduce | deconv
    kernel: tuple[int, int, int]  # (h, w, out_channels)
    stride: int
    activation: str  # relu | none
    in_channels: int

    def weight_shape(self) -> tuple[int, ...]:
        kh, kw, cout = self.kernel
        if self.kind == "deconv":
            return (self.in_channels, kh, kw, cout)
        return (kh, kw, self.in_channels, cout)

    def parameter_count(self) -> int:
        return int(np.prod(self.weight_shape())) + self.kernel[2]


@dataclass
class Model:
    arch: Architecture
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def parameter_names(self) -> list[str]:
        names = []
        for spec in self.arch.layers():
            names += [f"{spec.name}.w", f"{spec.name}.b"]
        return names

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Model":
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()})

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def equals(self, other: "Model") -> bool:
        return self.arch == other.arch and all(np.array_equal(self.params[k], other.params[k]) for k in self.params)


def build_model(seed: int = 0, arch: Architecture = Architecture()) -> Model:
    """He-initialized weights (unit-gain for linear layers), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for spec in arch.layers():
        shape = spec.weight_shape()
        fan_in = spec.in_channels * spec.kernel[0] * spec.kernel[1]
        gain = 2.0 if spec.activation == "relu" else 1.0
        params[f"{spec.name}.w"] = rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)
        params[f"{spec.name}.b"] = np.zeros(spec.kernel[2])
    return Model(arch, params)


def _cast(model: Model, dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype, copy=False) for k, v in model.params.items()}


def forward(model: Model, x: np.ndarray, dtype=np.float64, trace: list | None = None):
    """Class probabilities for a batch ``(N, S, S, C)`` or a single ``(S, S, C)`` block.

    Returns ``(probs, cache)``; ``cache`` feeds :func:`backward`. When ``trace`` is a
    list, ``(layer name, per-sample shape)`` is appended for every conv and deconv.
    """
    arch = model.arch
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != (arch.block, arch.block, arch.in_channels):
        raise ValueError(f"expected input (N, {arch.block}, {arch.block}, {arch.in_channels}), got {x.shape}")
    p = _cast(model, dtype)
    h = x.astype(dtype, copy=False)
    caches = {}
    reduced = []
    for i in range(1, arch.levels + 1):
        for name, stride in ((f"conv{i}_1", 1), (f"conv{i}_2", 2)):
            z, c = conv_forward(h, p[f"{name}.w"], p[f"{name}.b"], stride)
            h = relu(z)
            caches[name] = (c, h)
            if trace is not None:
                trace.append((name, h.shape[1:]))
        r, c = conv_forward(h, p[f"reduce{i}.w"], p[f"reduce{i}.b"], 1)
        caches[f"reduce{i}"] = (c, None)
        reduced.append(r)

    d = reduced[-1]
    for j in range(1, arch.levels + 1):
        name = f"deconv{j}"
        inp = d if j == 1 else np.concatenate([d, reduced[arch.levels - j]], axis=-1)
        z, c = deconv_forward(inp, p[f"{name}.w"], p[f"{name}.b"])
        d = z if j == arch.levels else relu(z)
        caches[name] = (c, None if j == arch.levels else d)
        if trace is not None:
            trace.append((name, d.shape[1:]))
    probs = softmax(d)
    return (probs[0] if single else probs), caches


def backward(model: Model, caches, dlogits: np.ndarray, dtype=np.float64) -> dict[str, np.ndarray]:
    """Parameter gradients given the loss gradient w.r.t. the final logits."""
    arch = model.arch
    if dlogits.ndim == 3:
        dlogits = dlogits[None]
    p = _cast(model, dtype)
    grads = {}
    dreduced = [None] * arch.levels
    d = dlogits
    for j in range(arch.levels, 0, -1):
        name = f"deconv{j}"
        c, out = caches[name]
        if out is not None:
            d = relu_backward(d, out)
        dinp, grads[f"{name}.w"], grads[f"{name}.b"] = deconv_backward(d, p[f"{name}.w"], c)
        if j == 1:
            dreduced[-1] = dinp if dreduced[-1] is None else dreduced[-1] + dinp
        else:
            d = dinp[..., :NUM_CLASSES]
            dreduced[arch.levels - j] = dinp[..., NUM_CLASSES:]

    dh = None
    for i in range(arch.levels, 0, -1):
        c, _ = caches[f"reduce{i}"]
        de, grads[f"reduce{i}.w"], grads[f"reduce{i}.b"] = conv_backward(dreduced[i - 1], p[f"reduce{i}.w"], c)
        dh = de if dh is None else dh + de
        for name in (f"conv{i}_2", f"conv{i}_1"):
            c, out = caches[name]
            dz = relu_backward(dh, out)
            dh, grads[f"{name}.w"], grads[f"{name}.b"] = conv_backward(dz, p[f"{name}.w"], c)
    return {k: grads[k].astype(np.float64) for k in model.params}


def target_indices(truth: np.ndarray) -> np.ndarray:
    return np.where(truth, FOREGROUND, BACKGROUND).astype(np.intp)


def loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean cross-entropy between per-pixel class probabilities and a boolean truth block."""
    if pred.shape[:-1] != target.shape or pred.shape[-1] != NUM_CLASSES:
        raise ValueError(f"prediction {pred.shape} does not match target {target.shape}")
    return cross_entropy(pred, target_indices(target))[0]


def loss_and_gradients(model: Model, block: np.ndarray, truth: np.ndarray, dtype=np.float64):
    probs, caches = forward(model, block, dtype)
    if probs.shape[:-1] != truth.shape:
        raise ValueError(f"prediction {probs.shape} does not match target {truth.shape}")
    value, dlogits = cross_entropy(probs, target_indices(truth))
    return value, backward(model, caches, dlogits, dtype)
