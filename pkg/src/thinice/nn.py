"""Masked feed-forward networks, attack surrogate losses and checkpoints."""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng, tnsr
from .errors import CheckpointError, ShapeError, UnsupportedError
from .tensor import Tensor, add, conv2d, matmul, mul, neg, pick, relu, reshape, softmax_cross_entropy, div, sub


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: tuple = ()

    def __post_init__(self):
        arity = {"dense": 2, "conv": 6, "relu": 0, "flatten": 0}
        if self.kind not in arity:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) != arity[self.kind]:
            raise ShapeError(f"{self.kind} layer takes {arity[self.kind]} dims, got {self.dims}")

    @classmethod
    def dense(cls, n_in, n_out):
        return cls("dense", (n_in, n_out))

    @classmethod
    def conv(cls, c_in, c_out, kh, kw, stride=1, pad=0):
        return cls("conv", (c_in, c_out, kh, kw, stride, pad))

    def to_json(self):
        return {"kind": self.kind, "dims": list(self.dims)}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["kind"], tuple(obj.get("dims", ())))


def _output_shape(layers, input_shape):
    """Walk the layer list and return every intermediate shape (excluding batch)."""
    shape = tuple(input_shape)
    shapes = [shape]
    for i, layer in enumerate(layers):
        if layer.kind == "dense":
            n_in, n_out = layer.dims
            if shape != (n_in,):
                raise ShapeError(f"layer {i}: dense expects input ({n_in},), got {shape}")
            shape = (n_out,)
        elif layer.kind == "conv":
            c_in, c_out, kh, kw, stride, pad = layer.dims
            if len(shape) != 3 or shape[0] != c_in:
                raise ShapeError(f"layer {i}: conv expects {c_in} input channels, got shape {shape}")
            _, h, w = shape
            if kh > h + 2 * pad or kw > w + 2 * pad or stride < 1:
                raise ShapeError(f"layer {i}: kernel does not fit input {shape}")
            shape = (c_out, (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        shapes.append(shape)
    if len(shape) != 1:
        raise ShapeError(f"network must end in a vector of logits, got {shape}")
    return shapes


@dataclass
class Network:
    layers: list
    input_shape: tuple
    params: list
    masks: list
    seed: int = 0
    arch: str | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def classes(self):
        return _output_shape(self.layers, self.input_shape)[-1][0]

    @property
    def weight_indices(self):
        return [i for i, m in enumerate(self.masks) if m is not None]

    def weights(self):
        return [self.params[i] for i in self.weight_indices]

    def apply_masks(self):
        """Zero pruned weights in place. Idempotent."""
        for p, m in zip(self.params, self.masks):
            if m is not None:
                p.data *= m.data

    def set_masks(self, weight_masks):
        """Install one binary array per weight tensor (in ``weight_indices`` order)."""
        idx = self.weight_indices
        if len(weight_masks) != len(idx):
            raise ShapeError(f"expected {len(idx)} masks, got {len(weight_masks)}")
        for i, m in zip(idx, weight_masks):
            m = np.asarray(m, dtype=np.float32)
            if m.shape != self.params[i].shape:
                raise ShapeError(f"mask shape {m.shape} does not match weight {self.params[i].shape}")
            if not np.isin(m, (0.0, 1.0)).all():
                raise ValueError("masks must be binary")
            self.masks[i] = Tensor(m)
        self.apply_masks()

    def copy(self):
        return Network(
            layers=list(self.layers),
            input_shape=tuple(self.input_shape),
            params=[p.detach() for p in self.params],
            masks=[None if m is None else m.detach() for m in self.masks],
            seed=self.seed,
            arch=self.arch,
            metadata=dict(self.metadata),
        )


# ---------------------------------------------------------------- construction

def preset(name, classes, input_shape=None):
    """Layer list and input shape for a named reference architecture.

    ``mlp-2x64``: 2 -> 64 -> 64 -> C with ReLU.
    ``cnn-tiny``: conv3x3x8 stride 2, conv3x3x16 stride 2, dense; no pooling.
    """
    if name == "mlp-2x64":
        d = int(np.prod(input_shape)) if input_shape else 2
        layers = [LayerSpec.dense(d, 64), LayerSpec("relu"), LayerSpec.dense(64, 64), LayerSpec("relu"),
                  LayerSpec.dense(64, classes)]
        return layers, (d,)
    if name == "cnn-tiny":
        c, h, w = input_shape or (1, 8, 8)
        h1, w1 = (h + 2 - 3) // 2 + 1, (w + 2 - 3) // 2 + 1
        h2, w2 = (h1 + 2 - 3) // 2 + 1, (w1 + 2 - 3) // 2 + 1
        layers = [LayerSpec.conv(c, 8, 3, 3, 2, 1), LayerSpec("relu"), LayerSpec.conv(8, 16, 3, 3, 2, 1),
                  LayerSpec("relu"), LayerSpec("flatten"), LayerSpec.dense(16 * h2 * w2, classes)]
        return layers, (c, h, w)
    raise ValueError(f"unknown preset {name!r}")


def build_network(layers, seed, input_shape=None, arch=None, dtype=np.float32):
    """He-initialised network (normal, std sqrt(2/fan_in)), zero biases, all-ones masks.

    Parameters are float32 unless ``dtype`` asks for float64 (used by gradient checks).
    """
    layers = [l if isinstance(l, LayerSpec) else LayerSpec.from_json(l) for l in layers]
    if input_shape is None:
        first = next((l for l in layers if l.kind in ("dense", "conv")), None)
        if first is None or first.kind != "dense":
            raise ShapeError("input_shape is required when the first parametric layer is not dense")
        input_shape = (first.dims[0],)
    _output_shape(layers, input_shape)
    params, masks = [], []
    for li, layer in enumerate(layers):
        if layer.kind == "dense":
            n_in, n_out = layer.dims
            wshape, fan_in, bshape = (n_in, n_out), n_in, (n_out,)
        elif layer.kind == "conv":
            c_in, c_out, kh, kw, _, _ = layer.dims
            wshape, fan_in, bshape = (c_out, c_in, kh, kw), c_in * kh * kw, (c_out, 1, 1)
        else:
            continue
        g = rng.stream(seed, rng.INIT, li)
        params.append(Tensor(g.standard_normal(wshape) * np.sqrt(2.0 / fan_in), dtype=dtype))
        masks.append(Tensor(np.ones(wshape), dtype=dtype))
        params.append(Tensor(np.zeros(bshape), dtype=dtype))
        masks.append(None)
    return Network(layers, tuple(input_shape), params, masks, seed=seed, arch=arch)


def build_preset(name, classes, seed, input_shape=None, dtype=np.float32):
    layers, shape = preset(name, classes, input_shape)
    return build_network(layers, seed, shape, arch=name, dtype=dtype)


# ---------------------------------------------------------------- inference

def forward(net, batch, params=None):
    """Logits [n, C] using effective weights theta * mask.

    ``params`` optionally replaces ``net.params`` (same order); trainers pass
    leaf tensors that require gradients here.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, dtype=np.float32))
    if tuple(x.shape[1:]) != tuple(net.input_shape):
        raise ShapeError(f"batch shape {x.shape} does not match network input {net.input_shape}")
    params = net.params if params is None else params
    k = 0
    for layer in net.layers:
        if layer.kind in ("dense", "conv"):
            w, b, m = params[k], params[k + 1], net.masks[k]
            w_eff = mul(w, m) if m is not None else w
            if layer.kind == "dense":
                x = add(matmul(x, w_eff), b)
            else:
                x = add(conv2d(x, w_eff, stride=layer.dims[4], pad=layer.dims[5]), b)
            k += 2
        elif layer.kind == "relu":
            x = relu(x)
        elif layer.kind == "flatten":
            x = reshape(x, (x.shape[0], -1))
    return x


def logits_of(net, batch):
    return forward(net, batch).data


def predict(net, batch):
    """argmax of the logits; ties go to the smallest class index."""
    return predict_logits(logits_of(net, batch))


def predict_logits(logits):
    return np.argmax(np.asarray(logits), axis=-1)


def accuracy(net, x, y):
    return float(np.mean(predict(net, x) == np.asarray(y)))


# ---------------------------------------------------------------- losses

def _runner_up(z, label):
    """Index of the largest logit excluding ``label`` (smallest index on ties)."""
    masked = np.array(z, dtype=np.float64, copy=True)
    if masked.ndim == 1:
        masked[label] = -np.inf
    else:
        masked[np.arange(len(masked)), label] = -np.inf
    return np.argmax(masked, axis=-1)


def margin_values(logits, labels):
    """Logit loss z_y - max_{j != y} z_j as a float64 array (no tape)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    other = _runner_up(z, y)
    if z.ndim == 1:
        return z[y] - z[other]
    rows = np.arange(len(z))
    return z[rows, y] - z[rows, other]


def surrogate_loss(kind, logits, label, target=None):
    """Per-sample surrogate loss with gradient support.

    * ``ce``: cross-entropy of the label (or of ``target`` negated, targeted).
    * ``margin``: z_y - max_{j != y} z_j; targeted: z_y - z_t.
    * ``dlr``: -(z_y - max_{j != y} z_j) / (z_(1) - z_(3)), with z_(i) the
      i-th largest logit. Targeted: -(z_y - z_t) / (z_(1) - (z_(3) + z_(4)) / 2),
      falling back to z_(1) - z_(3) when only three classes exist.

    ``logits`` may be [C] (scalar result) or [n, C] (vector result).
    """
    z = logits if isinstance(logits, Tensor) else Tensor(np.asarray(logits, dtype=np.float32))
    c = z.shape[-1]
    y = np.asarray(label, dtype=np.int64)
    t = None if target is None else np.asarray(target, dtype=np.int64)
    if kind == "ce":
        if t is None:
            return softmax_cross_entropy(z, y, reduction="none")
        return neg(softmax_cross_entropy(z, t, reduction="none"))
    if c < 2:
        raise UnsupportedError("surrogate losses need at least two classes")
    zy = pick(z, y)
    other = pick(z, t if t is not None else _runner_up(z.data, y))
    if kind == "margin":
        return sub(zy, other)
    if kind == "dlr":
        if c < 3:
            raise UnsupportedError("dlr loss needs at least three classes")
        order = np.argsort(-z.data.astype(np.float64), axis=-1, kind="stable")
        top = pick(z, order[..., 0])
        if t is not None and c >= 4:
            third = div(add(pick(z, order[..., 2]), pick(z, order[..., 3])), 2.0)
        else:
            third = pick(z, order[..., 2])
        denom = add(sub(top, third), 1e-12)
        return neg(div(sub(zy, other), denom))
    raise ValueError(f"unknown surrogate loss {kind!r}")


def attack_objective(kind, logits, label, target=None):
    """Quantity an attack ascends: ce and dlr as-is, margin negated."""
    loss = surrogate_loss(kind, logits, label, target)
    return neg(loss) if kind == "margin" else loss


# ---------------------------------------------------------------- sparsity

def mask_counts(net):
    zeros = sum(int((m.data == 0).sum()) for m in net.masks if m is not None)
    total = sum(m.size for m in net.masks if m is not None)
    return zeros, total


def sparsity(net, exact=False):
    """Fraction of masked-out weight entries. Biases are not counted."""
    zeros, total = mask_counts(net)
    frac = Fraction(zeros, total)
    return frac if exact else float(frac)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(net, path, provenance=""):
    """Write ``manifest.json`` plus one TNSR file per parameter and per weight mask."""
    path = os.fspath(path)
    tmp = path.rstrip("/") + ".partial"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    try:
        for i, p in enumerate(net.params):
            if p.dtype != np.float32:
                raise CheckpointError(f"param {i} is {p.dtype}; checkpoints hold float32")
            tnsr.save(os.path.join(tmp, f"param_{i}.tnsr"), p.data)
        for i, m in enumerate(net.masks):
            if m is not None:
                tnsr.save(os.path.join(tmp, f"mask_{i}.tnsr"), m.data)
        manifest = {
            "arch": {
                "preset": net.arch,
                "layers": [l.to_json() for l in net.layers],
                "input_shape": list(net.input_shape),
            },
            "seed": net.seed,
            "classes": net.classes,
            "sparsity": sparsity(net),
            "provenance": provenance,
            "metadata": net.metadata,
        }
        with open(os.path.join(tmp, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        if os.path.exists(path):
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path):
    path = os.fspath(path)
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        arch = manifest["arch"]
        layers = [LayerSpec.from_json(l) for l in arch["layers"]]
        input_shape = tuple(arch["input_shape"])
        seed = int(manifest["seed"])
        classes = int(manifest["classes"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt or missing manifest ({exc})") from None
    # shapes come from a freshly built skeleton; data is replaced below
    skeleton = build_network(layers, 0, input_shape)
    if skeleton.classes != classes:
        raise CheckpointError(f"{path}: manifest classes {classes} disagree with architecture")
    params, masks = [], []
    try:
        for i, (p, m) in enumerate(zip(skeleton.params, skeleton.masks)):
            data = tnsr.load(os.path.join(path, f"param_{i}.tnsr"), np.float32)
            if data.shape != p.shape:
                raise CheckpointError(f"param_{i}: shape {data.shape} != {p.shape}")
            params.append(Tensor(data))
            if m is None:
                masks.append(None)
                continue
            mdata = tnsr.load(os.path.join(path, f"mask_{i}.tnsr"), np.float32)
            if mdata.shape != p.shape or not np.isin(mdata, (0.0, 1.0)).all():
                raise CheckpointError(f"mask_{i}: bad shape or non-binary values")
            masks.append(Tensor(mdata))
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: missing tensor file {exc.filename}") from None
    except CheckpointError:
        raise
    return Network(layers, input_shape, params, masks, seed=seed, arch=arch.get("preset"),
                   metadata=dict(manifest.get("metadata", {})))
