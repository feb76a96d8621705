"""The three-section classifier: frozen mapping projection, 3-D
convolution/pooling stack, and a fully connected head.

Configs are validated at construction by symbolic shape propagation, so an
inconsistent layer chain fails before any compute with a message naming
the offending layer.  Checkpoints use the "MCNN1" container: a canonical
JSON config block, the embedded mapping stack, then every trainable array
with a shape header (f64, little-endian).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import data as data_mod
from . import mapping as mapping_mod
from . import nn
from .data import TRAIN, VAL, LabeledPatchSet
from .mapping import MappingStack
from .metrics import confusion, oa
from .optim import AdamConfig, adam_step

_CKPT_MAGIC = b"MCNN1"
CONV_INIT_STDDEV = 0.05


@dataclass(frozen=True)
class ConvSpec:
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    channels: int = 64
    padding: str = "same"


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: str = "valid"


@dataclass
class McnnConfig:
    patch_size: int
    bands: int
    ranks: tuple[int, int, int]
    class_count: int
    conv_specs: list[ConvSpec] = field(default_factory=list)
    pool_specs: list[PoolSpec] = field(default_factory=list)
    dense_widths: list[int] = field(default_factory=lambda: [128])
    batch_size: int = 30
    learning_rate: float = 0.001
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd and positive")
        if self.class_count < 2:
            raise ValueError("class_count must be at least 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        dims = (self.patch_size, self.patch_size, self.bands)
        if any(r > d or r < 1 for r, d in zip(self.ranks, dims)):
            raise ValueError(f"ranks {self.ranks} exceed input dims {dims}")
        if len(self.pool_specs) > len(self.conv_specs):
            raise ValueError("more pool specs than conv layers")
        propagate_shapes(self)  # raises on an inconsistent chain


def _conv_out_shape(shape, spec: ConvSpec, name: str):
    kx, ky, kz = spec.kernel
    pads = nn._pad_amounts(shape, spec.kernel, spec.stride, spec.padding)
    padded = (shape[0] + pads[0] + pads[1], shape[1] + pads[2] + pads[3], shape[2])
    for axis, (d, k) in enumerate(zip(padded, (kx, ky, kz))):
        if k > d:
            raise ValueError(
                f"{name}: kernel {spec.kernel} exceeds input {shape} "
                f"(padded {padded}) on axis {axis}"
            )
    out = tuple(
        nn.output_extent(d, k, s) for d, k, s in zip(padded, spec.kernel, spec.stride)
    )
    return out + (spec.channels,)


def _pool_out_shape(shape, spec: PoolSpec, name: str):
    pads = nn._pad_amounts(shape, spec.window, spec.stride, spec.padding)
    padded = (shape[0] + pads[0] + pads[1], shape[1] + pads[2] + pads[3], shape[2])
    for axis, (d, w) in enumerate(zip(padded, spec.window)):
        if w > d:
            raise ValueError(
                f"{name}: window {spec.window} exceeds input {shape} "
                f"(padded {padded}) on axis {axis}"
            )
    out = tuple(
        nn.output_extent(d, w, s) for d, w, s in zip(padded, spec.window, spec.stride)
    )
    return out + (shape[3],)


def propagate_shapes(config: McnnConfig) -> list[tuple[str, tuple]]:
    """Symbolically walk the layer chain; returns [(layer name, shape)].

    The first entry is the mapping output, the last is the logits vector.
    """
    shapes: list[tuple[str, tuple]] = []
    shape = config.ranks + (1,)
    shapes.append(("mapping", shape))
    for i, conv in enumerate(config.conv_specs):
        shape = _conv_out_shape(shape[:3], conv, f"conv{i}")
        shapes.append((f"conv{i}", shape))
        if i < len(config.pool_specs):
            shape = _pool_out_shape(shape, config.pool_specs[i], f"pool{i}")
            shapes.append((f"pool{i}", shape))
    flat = int(np.prod(shape))
    shapes.append(("flatten", (flat,)))
    width = flat
    for i, w in enumerate(config.dense_widths):
        if w < 1:
            raise ValueError(f"dense{i}: width must be positive, got {w}")
        shapes.append((f"dense{i}", (int(w),)))
        width = int(w)
    shapes.append(("output", (config.class_count,)))
    return shapes


@dataclass
class McnnModel:
    mapping: MappingStack
    conv_layers: list[nn.Conv3DLayer]
    pool_layers: list[Optional[nn.MaxPool3DLayer]]
    dense_layers: list[nn.DenseLayer]
    config: McnnConfig

    def trainable(self) -> list[tuple[str, nn.LayerParams]]:
        """Named trainable parameter buffers in a fixed order."""
        out = []
        for i, layer in enumerate(self.conv_layers):
            out.append((f"conv{i}.kernels", layer.kernels))
            out.append((f"conv{i}.biases", layer.biases))
        for i, layer in enumerate(self.dense_layers):
            out.append((f"dense{i}.weights", layer.weights))
            out.append((f"dense{i}.biases", layer.biases))
        return out


def _conv_shape_error(config, mapping):
    dims = (config.patch_size, config.patch_size, config.bands)
    if tuple(mapping.input_dims) != dims:
        raise ValueError(
            f"mapping stack dims {mapping.input_dims} do not match config {dims}"
        )
    if tuple(mapping.ranks) != config.ranks:
        raise ValueError(
            f"mapping stack ranks {mapping.ranks} do not match config {config.ranks}"
        )


def build(config: McnnConfig, mapping: MappingStack, seed: Optional[int] = None) -> McnnModel:
    """Assemble a model with Gaussian-initialized trainable layers around
    the frozen mapping stack."""
    _conv_shape_error(config, mapping)
    seed = config.seed if seed is None else int(seed)
    shapes = propagate_shapes(config)
    shape_by_name = dict(shapes)
    layer_seeds = np.random.SeedSequence((seed, 1)).generate_state(
        len(config.conv_specs) + len(config.dense_widths) + 1
    )

    conv_layers = []
    channels_in = 1
    for i, spec in enumerate(config.conv_specs):
        conv_layers.append(
            nn.new_conv3d(
                kernel=spec.kernel,
                channels_in=channels_in,
                channels_out=spec.channels,
                stride=spec.stride,
                padding=spec.padding,
                activation="relu",
                seed=int(layer_seeds[i]),
                stddev=CONV_INIT_STDDEV,
            )
        )
        channels_in = spec.channels
    pool_layers: list[Optional[nn.MaxPool3DLayer]] = []
    for i in range(len(config.conv_specs)):
        if i < len(config.pool_specs):
            p = config.pool_specs[i]
            pool_layers.append(
                nn.MaxPool3DLayer(window=p.window, stride=p.stride, padding=p.padding)
            )
        else:
            pool_layers.append(None)

    dense_layers = []
    width_in = shape_by_name["flatten"][0]
    for i, width in enumerate(config.dense_widths):
        dense_layers.append(
            nn.new_dense(width_in, width, "relu", int(layer_seeds[len(config.conv_specs) + i]))
        )
        width_in = width
    dense_layers.append(
        nn.new_dense(width_in, config.class_count, "identity", int(layer_seeds[-1]))
    )
    return McnnModel(
        mapping=mapping,
        conv_layers=conv_layers,
        pool_layers=pool_layers,
        dense_layers=dense_layers,
        config=config,
    )


def _forward_cached(model: McnnModel, patch: np.ndarray):
    """Forward pass keeping every intermediate needed by backward."""
    mapped = mapping_mod.project(model.mapping, patch)
    x = mapped.reshape(mapped.shape + (1,))
    conv_inputs, conv_caches, pool_caches = [], [], []
    for conv, pool in zip(model.conv_layers, model.pool_layers):
        conv_inputs.append(x)
        scratch: list = []
        x = nn.conv3d_forward(conv, x, cache=scratch)
        conv_caches.append(scratch[0])
        if pool is not None:
            x, pc = nn.maxpool3d_forward(pool, x)
            pool_caches.append(pc)
        else:
            pool_caches.append(None)
    conv_out_shape = x.shape
    vec = np.ascontiguousarray(x).reshape(-1)
    dense_inputs = []
    for layer in model.dense_layers:
        dense_inputs.append(vec)
        vec = nn.dense_forward(layer, vec)
    probs = nn.softmax(vec)
    cache = (conv_inputs, conv_caches, pool_caches, conv_out_shape, dense_inputs, vec)
    return probs, cache


def forward(model: McnnModel, patch: np.ndarray) -> np.ndarray:
    """Class-probability vector for one patch (sums to 1)."""
    probs, _ = _forward_cached(model, patch)
    return probs


def forward_trace(model: McnnModel, patch: np.ndarray):
    """Forward pass recording the shape at every layer boundary.

    Returns (probabilities, [(layer name, shape)]) in the same order as
    `propagate_shapes`.
    """
    trace: list[tuple[str, tuple]] = []
    mapped = mapping_mod.project(model.mapping, patch)
    x = mapped.reshape(mapped.shape + (1,))
    trace.append(("mapping", x.shape))
    for i, (conv, pool) in enumerate(zip(model.conv_layers, model.pool_layers)):
        x = nn.conv3d_forward(conv, x)
        trace.append((f"conv{i}", x.shape))
        if pool is not None:
            x, _ = nn.maxpool3d_forward(pool, x)
            trace.append((f"pool{i}", x.shape))
    vec = np.ascontiguousarray(x).reshape(-1)
    trace.append(("flatten", vec.shape))
    for i, layer in enumerate(model.dense_layers):
        vec = nn.dense_forward(layer, vec)
        name = f"dense{i}" if i < len(model.dense_layers) - 1 else "output"
        trace.append((name, vec.shape))
    return nn.softmax(vec), trace


def _backward(model: McnnModel, cache, label: int):
    """Loss and gradients for one sample, reusing the forward cache."""
    conv_inputs, conv_caches, pool_caches, conv_out_shape, dense_inputs, logits = cache
    loss, g_vec = nn.softmax_cross_entropy(logits, label)
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(model.dense_layers))):
        g_vec, layer_grads = nn.dense_backward(
            model.dense_layers[i], dense_inputs[i], g_vec
        )
        grads[f"dense{i}.weights"] = layer_grads["weights"]
        grads[f"dense{i}.biases"] = layer_grads["biases"]
    g = g_vec.reshape(conv_out_shape)
    for i in reversed(range(len(model.conv_layers))):
        if pool_caches[i] is not None:
            g = nn.maxpool3d_backward(pool_caches[i], g)
        g, layer_grads = nn.conv3d_backward(
            model.conv_layers[i], conv_inputs[i], g, cache=conv_caches[i]
        )
        grads[f"conv{i}.kernels"] = layer_grads["kernels"]
        grads[f"conv{i}.biases"] = layer_grads["biases"]
    return loss, grads


def sample_loss(model: McnnModel, patch: np.ndarray, label: int) -> float:
    """Cross-entropy loss of one sample (used by gradient checks)."""
    probs, cache = _forward_cached(model, patch)
    logits = cache[5]
    loss, _ = nn.softmax_cross_entropy(logits, int(label))
    return loss


def sample_gradients(model: McnnModel, patch: np.ndarray, label: int):
    probs, cache = _forward_cached(model, patch)
    return _backward(model, cache, int(label))


# --- batched training path -------------------------------------------------


def _project_batch(model: McnnModel, patches: np.ndarray) -> np.ndarray:
    """Apply the frozen mapping to a (batch, S, S, bands) stack."""
    s = model.mapping
    u1 = s.u1.astype(patches.dtype, copy=False)
    u2 = s.u2.astype(patches.dtype, copy=False)
    u3 = s.u3.astype(patches.dtype, copy=False)
    out = np.einsum("bijk,ir->brjk", patches, u1, optimize=True)
    out = np.einsum("brjk,js->brsk", out, u2, optimize=True)
    return np.einsum("brsk,kt->brst", out, u3, optimize=True)


def _grad_chunk_size(model: McnnModel, batch_size: int) -> int:
    """Bound the im2col working-set size for big configurations."""
    shapes = dict(propagate_shapes(model.config))
    worst = 1
    channels_in = 1
    for i, spec in enumerate(model.config.conv_specs):
        out = shapes[f"conv{i}"]
        positions = out[0] * out[1] * out[2]
        k = int(np.prod(spec.kernel)) * channels_in
        worst = max(worst, positions * k)
        channels_in = spec.channels
    return max(1, min(batch_size, int(12_000_000 // worst)))


def _forward_batch(model: McnnModel, patches: np.ndarray, keep_caches: bool):
    x = _project_batch(model, patches)
    x = x.reshape(x.shape + (1,))
    conv_caches, pool_records = [], []
    for conv, pool in zip(model.conv_layers, model.pool_layers):
        x, cache = nn._conv3d_forward_batch(conv, x, keep_caches)
        conv_caches.append(cache)
        if pool is not None:
            x, record = nn._maxpool3d_forward_batch(pool, x)
            pool_records.append(record)
        else:
            pool_records.append(None)
    conv_out_shape = x.shape
    flat = x.reshape(x.shape[0], -1)
    dense_inputs, dense_pres = [], []
    for layer in model.dense_layers:
        dense_inputs.append(flat)
        flat, pre = nn._dense_forward_batch(layer, flat, keep_caches)
        dense_pres.append(pre)
    logits = flat
    if not keep_caches:
        return logits, None
    return logits, (conv_caches, pool_records, conv_out_shape, dense_inputs, dense_pres)


def _batch_gradients(model: McnnModel, patches: np.ndarray, labels: np.ndarray):
    """Per-sample losses and gradients summed over the batch chunk."""
    logits, caches = _forward_batch(model, patches, keep_caches=True)
    conv_caches, pool_records, conv_out_shape, dense_inputs, dense_pres = caches
    losses, g = nn._softmax_cross_entropy_batch(logits, labels)
    grads: dict[str, np.ndarray] = {}
    for i in reversed(range(len(model.dense_layers))):
        g, layer_grads = nn._dense_backward_batch(
            model.dense_layers[i], dense_inputs[i], dense_pres[i], g
        )
        grads[f"dense{i}.weights"] = layer_grads["weights"]
        grads[f"dense{i}.biases"] = layer_grads["biases"]
    g = g.reshape(conv_out_shape)
    for i in reversed(range(len(model.conv_layers))):
        if pool_records[i] is not None:
            g = nn._maxpool3d_backward_batch(pool_records[i], g)
        g, layer_grads = nn._conv3d_backward_batch(
            model.conv_layers[i], conv_caches[i], g
        )
        grads[f"conv{i}.kernels"] = layer_grads["kernels"]
        grads[f"conv{i}.biases"] = layer_grads["biases"]
    return losses, grads


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    val_oa: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["epoch\tmean_loss\tval_oa"]
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.mean_loss:.6f}\t{e.val_oa:.6f}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainSettings:
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    epochs: Optional[int] = None
    eval_every: int = 1  # validation OA cadence, in epochs


def _val_oa(model: McnnModel, dataset: LabeledPatchSet) -> float:
    idx = dataset.indices(VAL)
    if idx.size == 0:
        return float("nan")
    preds = predict(model, dataset.patches[idx])
    cm = confusion(dataset.labels[idx], preds, model.config.class_count)
    return oa(cm)


def train_epochs(
    model: McnnModel,
    dataset: LabeledPatchSet,
    settings: Optional[TrainSettings] = None,
) -> TrainingLog:
    """Mini-batch Adam training on the train split.

    Batches are reshuffled each epoch from a seeded stream; gradients are
    averaged over each batch in index order, so runs are bit-reproducible
    for a fixed seed.  Only conv and dense parameters are updated; the
    mapping stack is never touched.
    """
    settings = settings or TrainSettings()
    cfg = model.config
    batch_size = settings.batch_size or cfg.batch_size
    lr = settings.learning_rate or cfg.learning_rate
    n_epochs = settings.epochs or cfg.epochs
    train_idx = dataset.indices(TRAIN)
    if train_idx.size == 0:
        raise ValueError("dataset has no training split")
    adam = AdamConfig(learning_rate=lr)
    params = dict(model.trainable())
    chunk = _grad_chunk_size(model, batch_size)
    log = TrainingLog()
    for epoch in range(1, n_epochs + 1):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 2, epoch)))
        order = train_idx[rng.permutation(train_idx.size)]
        losses = []
        for start in range(0, order.size, batch_size):
            batch = order[start : start + batch_size]
            acc: dict[str, np.ndarray] = {}
            for cstart in range(0, batch.size, chunk):
                piece = batch[cstart : cstart + chunk]
                # Mini-batch arithmetic runs in f32 (parameters stay f64);
                # the cast is deterministic, so runs remain reproducible.
                chunk_losses, grads = _batch_gradients(
                    model,
                    dataset.patches[piece].astype(np.float32),
                    dataset.labels[piece],
                )
                losses.extend(float(l) for l in chunk_losses)
                for name, g in grads.items():
                    if name in acc:
                        acc[name] += g
                    else:
                        acc[name] = g
            scale = 1.0 / batch.size
            for name, g in acc.items():
                adam_step(params[name], g * scale, adam)
        val = (
            _val_oa(model, dataset)
            if (epoch % settings.eval_every == 0 or epoch == n_epochs)
            else float("nan")
        )
        log.epochs.append(
            EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), val_oa=val)
        )
    return log


def predict(model: McnnModel, patches) -> np.ndarray:
    """Argmax class per patch; ties resolve to the lower class index."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.size == 0:
        return np.zeros(0, dtype=np.int64)
    if patches.ndim == 3:
        patches = patches[None]
    chunk = _grad_chunk_size(model, 256)
    out = np.empty(patches.shape[0], dtype=np.int64)
    for start in range(0, patches.shape[0], chunk):
        piece = patches[start : start + chunk].astype(np.float32)
        logits, _ = _forward_batch(model, piece, False)
        out[start : start + chunk] = logits.argmax(axis=1)
    return out


# --- configuration (de)serialization -----------------------------------

def config_to_dict(config: McnnConfig) -> dict:
    return {
        "patch_size": config.patch_size,
        "bands": config.bands,
        "ranks": list(config.ranks),
        "class_count": config.class_count,
        "conv_specs": [
            {
                "kernel": list(s.kernel),
                "stride": list(s.stride),
                "channels": s.channels,
                "padding": s.padding,
            }
            for s in config.conv_specs
        ],
        "pool_specs": [
            {
                "window": list(s.window),
                "stride": list(s.stride),
                "padding": s.padding,
            }
            for s in config.pool_specs
        ],
        "dense_widths": list(config.dense_widths),
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "epochs": config.epochs,
        "seed": config.seed,
    }


def config_from_dict(d: dict) -> McnnConfig:
    return McnnConfig(
        patch_size=int(d["patch_size"]),
        bands=int(d["bands"]),
        ranks=tuple(d["ranks"]),
        class_count=int(d["class_count"]),
        conv_specs=[
            ConvSpec(
                kernel=tuple(s["kernel"]),
                stride=tuple(s.get("stride", (1, 1, 1))),
                channels=int(s.get("channels", 64)),
                padding=s.get("padding", "same"),
            )
            for s in d.get("conv_specs", [])
        ],
        pool_specs=[
            PoolSpec(
                window=tuple(s["window"]),
                stride=tuple(s.get("stride", (1, 1, 1))),
                padding=s.get("padding", "valid"),
            )
            for s in d.get("pool_specs", [])
        ],
        dense_widths=[int(w) for w in d.get("dense_widths", [128])],
        batch_size=int(d.get("batch_size", 30)),
        learning_rate=float(d.get("learning_rate", 0.001)),
        epochs=int(d.get("epochs", 30)),
        seed=int(d.get("seed", 0)),
    )


# --- checkpoint container ------------------------------------------------

def save_checkpoint(model: McnnModel, path, extra: Optional[dict] = None) -> None:
    """Write config JSON, the mapping stack, and all trainable arrays."""
    blob = io.BytesIO()
    blob.write(_CKPT_MAGIC)
    doc = {"config": config_to_dict(model.config)}
    if extra:
        doc["extra"] = extra
    config_bytes = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    blob.write(struct.pack("<I", len(config_bytes)))
    blob.write(config_bytes)

    map_bytes = data_mod.mapping_to_bytes(model.mapping)
    blob.write(struct.pack("<I", len(map_bytes)))
    blob.write(map_bytes)

    named = model.trainable()
    blob.write(struct.pack("<I", len(named)))
    for name, params in named:
        encoded = name.encode()
        blob.write(struct.pack("<I", len(encoded)))
        blob.write(encoded)
        arr = params.values
        blob.write(struct.pack("<I", arr.ndim))
        blob.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        blob.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(blob.getvalue())


def load_checkpoint(path) -> tuple[McnnModel, dict]:
    """Rebuild a model from an MCNN1 file; returns (model, extra dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:5] != _CKPT_MAGIC:
        raise data_mod.FormatError(
            f"bad magic {raw[:5]!r}, expected {_CKPT_MAGIC!r}", 0
        )
    offset = 5
    (config_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    doc = json.loads(raw[offset : offset + config_len].decode())
    offset += config_len
    config = config_from_dict(doc["config"])
    extra = doc.get("extra", {})

    (map_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    stack = data_mod.mapping_from_bytes(raw[offset : offset + map_len])
    offset += map_len

    model = build(config, stack, seed=config.seed)
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    params = dict(model.trainable())
    if count != len(params):
        raise data_mod.FormatError(
            f"checkpoint holds {count} arrays, model expects {len(params)}", offset - 4
        )
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        name = raw[offset : offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        n = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        if name not in params:
            raise data_mod.FormatError(f"unknown parameter block {name!r}", offset)
        if params[name].values.shape != arr.shape:
            raise data_mod.FormatError(
                f"parameter {name!r} has shape {arr.shape}, expected "
                f"{params[name].values.shape}",
                offset,
            )
        params[name].values[...] = arr
    return model, extra
