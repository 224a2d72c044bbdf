"""Binary scorer model files (little-endian).

Layout:
    magic        b"RRSC"
    version      u32 (= 1)
    layer_count  u32
    input_h      u32
    input_w      u32
    stride       u32
    dropout      f32
    input_shift  f32
    input_scale  f32
    layer_count x:
        kind     u8   (1 conv, 2 dense, 3 head)
        ndim     u32
        dims     u32 x ndim
        weights  f32 x prod(dims), row-major
        biases   f32 x dims[-1]

Every stored value is already float32-representable, so save -> load is bit-exact.

Usage as library:
    from roomrank.scorer.serialize import save_model, load_model
    save_model(model, "scorer.rrsc")
    model = load_model("scorer.rrsc")
"""

import struct

import numpy as np

from roomrank.scorer.network import (
    MODEL_VERSION,
    ModelError,
    ScorerArchitecture,
    ScorerModel,
)

MAGIC = b"RRSC"
HEADER = struct.Struct("<4sIIIIIfff")
LAYER_HEAD = struct.Struct("<BI")

KIND_CONV = 1
KIND_DENSE = 2
KIND_HEAD = 3


class ModelFormatError(Exception):
    """File is not a scorer model, has an unsupported version, or is truncated."""
    pass


def _layers(model):
    n_conv = len(model.architecture.conv_filters)
    layers = [(KIND_CONV, f"conv{i}") for i in range(n_conv)]
    layers += [(KIND_DENSE, "dense"), (KIND_HEAD, "head")]
    return layers


def model_to_bytes(model):
    model.validate()
    arch = model.architecture
    layers = _layers(model)
    parts = [HEADER.pack(
        MAGIC, MODEL_VERSION, len(layers),
        arch.input_shape[0], arch.input_shape[1], arch.stride,
        arch.dropout_rate, model.input_shift, model.input_scale,
    )]
    for kind, prefix in layers:
        w = model.params[f"{prefix}.w"]
        b = model.params[f"{prefix}.b"]
        parts.append(LAYER_HEAD.pack(kind, w.ndim))
        parts.append(struct.pack(f"<{w.ndim}I", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def save_model(model, path):
    """Write `model` to `path`. OSError propagates."""
    data = model_to_bytes(model)
    with open(path, "wb") as f:
        f.write(data)
    return path


class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, n):
        if self.offset + n > len(self.data):
            raise ModelFormatError("truncated model file")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))

    def floats(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)


def model_from_bytes(data):
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError("not a scorer model")
    reader = _Reader(data)
    if len(data) >= len(MAGIC) + 4:
        (version,) = struct.unpack_from("<I", data, len(MAGIC))
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported version {version}")
    (_, version, layer_count, input_h, input_w, stride,
     dropout, input_shift, input_scale) = reader.unpack(HEADER)

    params = {}
    conv_filters = []
    kernel = None
    dense_units = None
    n_conv = 0
    for _ in range(layer_count):
        kind, ndim = reader.unpack(LAYER_HEAD)
        dims = struct.unpack(f"<{ndim}I", reader.take(4 * ndim))
        if not dims:
            raise ModelFormatError("layer with no dimensions")
        w = reader.floats(int(np.prod(dims))).reshape(dims)
        b = reader.floats(dims[-1])
        if kind == KIND_CONV:
            if ndim != 4:
                raise ModelFormatError(f"conv layer must have 4 dims, got {ndim}")
            prefix = f"conv{n_conv}"
            n_conv += 1
            conv_filters.append(dims[3])
            kernel = dims[0]
        elif kind == KIND_DENSE:
            prefix = "dense"
            dense_units = dims[-1]
        elif kind == KIND_HEAD:
            prefix = "head"
        else:
            raise ModelFormatError(f"unknown layer kind {kind}")
        params[f"{prefix}.w"] = w
        params[f"{prefix}.b"] = b

    if reader.offset != len(data):
        raise ModelFormatError("trailing data after last layer")
    if dense_units is None or "head.w" not in params:
        raise ModelFormatError("model file lacks dense or head layer")

    architecture = ScorerArchitecture(
        input_shape=(input_h, input_w),
        conv_filters=tuple(conv_filters),
        kernel=kernel if kernel is not None else ScorerArchitecture.kernel,
        stride=stride,
        dense_units=dense_units,
        dropout_rate=float(dropout),
    )
    ordered = {}
    try:
        for name in architecture.param_shapes():
            ordered[name] = params[name]
        model = ScorerModel(
            architecture=architecture,
            params=ordered,
            input_shift=float(input_shift),
            input_scale=float(input_scale),
            version=version,
        )
        model.validate()
    except (KeyError, ModelError) as e:
        raise ModelFormatError(f"inconsistent layer layout: {e}")
    return model


def load_model(path):
    """Read a model file.

    Raises:
        ModelFormatError on bad magic, unsupported version, or truncation.
        OSError if the file cannot be opened.
    """
    with open(path, "rb") as f:
        data = f.read()
    return model_from_bytes(data)
