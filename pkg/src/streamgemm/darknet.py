"""Darknet-style network description and weight-file frontend.

parse_cfg turns `[section]` / `key=value` text into a validated
NetworkGraph with derived per-layer output dims.  load_weights binds a
graph to the binary weight format (little-endian header plus raw FP32
parameters in file order) and folds batch normalization into the
convolution weights on the spot, so downstream code only ever sees
plain weights and biases.
"""

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BadHeader,
    EmptyConfig,
    InvalidDimension,
    MissingNetHeader,
    MissingRequiredKey,
    NegativeVariance,
    NonIntegralOutputDim,
    TrailingBytes,
    TruncatedFile,
    UnknownActivation,
    UnknownSection,
)
from .tensor import ACTIVATIONS

log = logging.getLogger(__name__)

BN_EPS = np.float32(1e-6)

NET_SECTIONS = ("net", "network")

SUPPORTED_KINDS = (
    "convolutional",
    "deconvolutional",
    "maxpool",
    "connected",
    "avgpool",
    "softmax",
)

# Training-schedule keys are legal in [net] but irrelevant to inference.
_NET_IGNORED = {
    "batch", "subdivisions", "momentum", "decay", "learning_rate",
    "max_batches", "policy", "steps", "scales", "burn_in", "angle",
    "saturation", "exposure", "hue", "time_steps", "adam",
}

_KNOWN_KEYS = {
    "net": {"channels", "height", "width"} | _NET_IGNORED,
    "convolutional": {"filters", "size", "stride", "pad", "activation", "batch_normalize"},
    "deconvolutional": {"filters", "size", "stride", "pad", "activation", "batch_normalize"},
    "maxpool": {"size", "stride", "pad"},
    "connected": {"output", "activation"},
    "avgpool": set(),
    "softmax": set(),
}

_REQUIRED = object()


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dims: tuple
    out_dims: tuple
    filters: int = 0
    size: int = 0
    stride: int = 1
    pad: int = 0
    output: int = 0
    activation: str = "linear"
    batch_normalize: bool = False
    line: int = 0


@dataclass(frozen=True)
class NetworkGraph:
    input_dims: tuple  # (c, h, w)
    layers: tuple


@dataclass(frozen=True)
class _Section:
    name: str
    line: int
    values: dict  # key -> (raw value, line)


def _scan_sections(text):
    sections = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            sections.append(_Section(line[1:-1].strip().lower(), lineno, {}))
            continue
        if "=" not in line:
            log.warning("line %d: ignoring malformed line %r", lineno, raw)
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        if not sections:
            log.warning("line %d: key '%s' before any section, ignored", lineno, key)
            continue
        sections[-1].values[key] = (value, lineno)
    return sections


def _get_int(section, key, default=_REQUIRED, minimum=0):
    entry = section.values.get(key)
    if entry is not None:
        raw, lineno = entry
        try:
            value = int(raw)
        except ValueError:
            log.warning(
                "line %d: [%s] %s=%r is not an integer, treating as absent",
                lineno, section.name, key, raw,
            )
            entry = None
        else:
            if value < minimum:
                raise InvalidDimension(
                    f"[{section.name}] {key}={value} must be >= {minimum}", lineno
                )
            return value
    if default is _REQUIRED:
        raise MissingRequiredKey(section.name, key, section.line)
    return default


def _get_activation(section):
    entry = section.values.get("activation")
    if entry is None:
        return "linear"
    raw, lineno = entry
    name = raw.lower()
    if name not in ACTIVATIONS:
        raise UnknownActivation(name, lineno)
    return name


def _warn_unknown_keys(section):
    known = _KNOWN_KEYS[section.name if section.name != "network" else "net"]
    for key, (_, lineno) in section.values.items():
        if key not in known:
            log.warning("line %d: [%s] ignoring unknown key '%s'", lineno, section.name, key)


def parse_cfg(text):
    """Parse config text into a NetworkGraph; see module docstring for grammar."""
    sections = _scan_sections(text)
    if not sections:
        raise EmptyConfig()
    head = sections[0]
    if head.name not in NET_SECTIONS:
        raise MissingNetHeader(head.name, head.line)
    _warn_unknown_keys(head)
    channels = _get_int(head, "channels", minimum=1)
    height = _get_int(head, "height", minimum=1)
    width = _get_int(head, "width", minimum=1)
    input_dims = (channels, height, width)

    layers = []
    dims = input_dims
    for section in sections[1:]:
        if section.name in NET_SECTIONS:
            raise UnknownSection(section.name, section.line)
        if section.name not in SUPPORTED_KINDS:
            raise UnknownSection(section.name, section.line)
        _warn_unknown_keys(section)
        layers.append(_build_layer(section, len(layers), dims))
        dims = layers[-1].out_dims
    if not layers:
        raise EmptyConfig("layers")
    return NetworkGraph(input_dims, tuple(layers))


def _build_layer(section, index, in_dims):
    kind = section.name
    c, h, w = in_dims
    if kind in ("convolutional", "deconvolutional"):
        filters = _get_int(section, "filters", minimum=1)
        size = _get_int(section, "size", minimum=1)
        stride = _get_int(section, "stride", default=1, minimum=1)
        pad = _get_int(section, "pad", default=0, minimum=0)
        activation = _get_activation(section)
        bn = bool(_get_int(section, "batch_normalize", default=0, minimum=0))
        if kind == "convolutional":
            out_h = _conv_dim(h, size, stride, pad, index, section.line)
            out_w = _conv_dim(w, size, stride, pad, index, section.line)
        else:
            out_h = (h - 1) * stride + size - 2 * pad
            out_w = (w - 1) * stride + size - 2 * pad
            if out_h < 1 or out_w < 1:
                raise NonIntegralOutputDim(
                    index, f"deconv output {out_h}x{out_w} < 1", section.line
                )
        return LayerSpec(
            kind, in_dims, (filters, out_h, out_w),
            filters=filters, size=size, stride=stride, pad=pad,
            activation=activation, batch_normalize=bn, line=section.line,
        )
    if kind == "maxpool":
        size = _get_int(section, "size", minimum=1)
        stride = _get_int(section, "stride", minimum=1)
        pad = _get_int(section, "pad", default=0, minimum=0)
        if pad > size:
            raise InvalidDimension(
                f"[maxpool] pad={pad} > size={size} leaves empty windows", section.line
            )
        out_h = (h + pad - size) // stride + 1
        out_w = (w + pad - size) // stride + 1
        if out_h < 1 or out_w < 1:
            raise NonIntegralOutputDim(
                index, f"maxpool window {size} does not fit {h}x{w}", section.line
            )
        return LayerSpec(
            kind, in_dims, (c, out_h, out_w),
            size=size, stride=stride, pad=pad, line=section.line,
        )
    if kind == "connected":
        outputs = _get_int(section, "output", minimum=1)
        activation = _get_activation(section)
        return LayerSpec(
            kind, in_dims, (outputs, 1, 1),
            output=outputs, activation=activation, line=section.line,
        )
    if kind == "avgpool":
        return LayerSpec(kind, in_dims, (c, 1, 1), line=section.line)
    # softmax flattens whatever it is given
    return LayerSpec(kind, in_dims, (c * h * w, 1, 1), line=section.line)


def _conv_dim(in_dim, size, stride, pad, index, line):
    span = in_dim + 2 * pad - size
    if span < 0 or span % stride != 0:
        raise NonIntegralOutputDim(
            index, f"(in={in_dim} + 2*{pad} - {size}) not divisible by stride {stride}",
            line,
        )
    return span // stride + 1


# --- weights ---------------------------------------------------------------

@dataclass(frozen=True)
class LayerWeights:
    """Folded parameters for one layer; None for layers without any."""
    weights: np.ndarray = None
    bias: np.ndarray = None


@dataclass(frozen=True)
class WeightedNetwork:
    graph: NetworkGraph
    layers: tuple  # LayerWeights per graph layer
    version: tuple = (0, 2, 0)
    seen: int = 0


def parameter_counts(layer):
    """(bias_count, weight_count) read from the file for this layer, or None."""
    if layer.kind in ("convolutional", "deconvolutional"):
        return layer.filters, layer.filters * layer.in_dims[0] * layer.size ** 2
    if layer.kind == "connected":
        inputs = layer.in_dims[0] * layer.in_dims[1] * layer.in_dims[2]
        return layer.output, layer.output * inputs
    return None


def fold_batchnorm(filter_weights, biases, gamma, beta, mean, var, eps):
    """Fold a batchnorm that follows a convolution into its weights and bias.

    w'[f,...] = w[f,...] * gamma[f] / sqrt(var[f] + eps)
    b'[f] = beta[f] + (b[f] - mean[f]) * gamma[f] / sqrt(var[f] + eps)
    """
    w = np.asarray(filter_weights, dtype=np.float32)
    b = np.asarray(biases, dtype=np.float32)
    gamma = np.asarray(gamma, dtype=np.float32)
    beta = np.asarray(beta, dtype=np.float32)
    mean = np.asarray(mean, dtype=np.float32)
    var = np.asarray(var, dtype=np.float32)
    bad = np.nonzero(var < 0)[0]
    if bad.size:
        raise NegativeVariance(float(var[bad[0]]))
    scale = gamma / np.sqrt(var + np.float32(eps))
    shape = (len(scale),) + (1,) * (w.ndim - 1)
    folded_w = w * scale.reshape(shape)
    folded_b = beta + (b - mean) * scale
    return folded_w.astype(np.float32), folded_b.astype(np.float32)


def load_weights(blob, graph):
    """Bind a weight blob to a parsed graph, folding batchnorm as it goes.

    Header: three u32-LE version ints (major, minor, revision), then a
    seen-images counter that is 64-bit when major*10 + minor >= 2 and
    32-bit otherwise.  Payload: per layer, bias vector (which holds the
    batchnorm beta when the layer is normalized), then gamma, mean and
    var if normalized, then the raw filter weights.
    """
    blob = bytes(blob)
    if len(blob) < 12:
        raise TruncatedFile(12, len(blob))
    major, minor, revision = struct.unpack_from("<3i", blob)
    if not (0 <= major < 1000 and 0 <= minor < 1000 and revision >= 0):
        raise BadHeader(f"implausible version {(major, minor, revision)}")
    seen_fmt = "<Q" if major * 10 + minor >= 2 else "<I"
    header_size = 12 + struct.calcsize(seen_fmt)
    if len(blob) < header_size:
        raise TruncatedFile(header_size, len(blob))
    (seen,) = struct.unpack_from(seen_fmt, blob, 12)

    total_floats = 0
    for layer in graph.layers:
        counts = parameter_counts(layer)
        if counts is None:
            continue
        n_bias, n_weights = counts
        total_floats += n_bias + n_weights
        if layer.batch_normalize:
            total_floats += 3 * n_bias
    expected = header_size + 4 * total_floats
    if len(blob) < expected:
        raise TruncatedFile(expected, len(blob))
    if len(blob) > expected:
        raise TrailingBytes(len(blob) - expected)

    floats = np.frombuffer(blob, dtype="<f4", offset=header_size)
    cursor = 0

    def take(count):
        nonlocal cursor
        out = floats[cursor : cursor + count]
        cursor += count
        return np.array(out, dtype=np.float32)

    bound = []
    folded_specs = []
    for index, layer in enumerate(graph.layers):
        counts = parameter_counts(layer)
        if counts is None:
            bound.append(LayerWeights())
            folded_specs.append(layer)
            continue
        n_bias, n_weights = counts
        if layer.batch_normalize:
            beta = take(n_bias)
            gamma = take(n_bias)
            mean = take(n_bias)
            var = take(n_bias)
            w = take(n_weights)
            try:
                w, bias = fold_batchnorm(
                    w.reshape(_weight_shape(layer)),
                    np.zeros(n_bias, dtype=np.float32),
                    gamma, beta, mean, var, BN_EPS,
                )
            except NegativeVariance as err:
                raise NegativeVariance(err.value, index) from None
            folded_specs.append(replace(layer, batch_normalize=False))
        else:
            bias = take(n_bias)
            w = take(n_weights).reshape(_weight_shape(layer))
            folded_specs.append(layer)
        bound.append(LayerWeights(weights=w, bias=bias))

    folded_graph = NetworkGraph(graph.input_dims, tuple(folded_specs))
    return WeightedNetwork(folded_graph, tuple(bound), (major, minor, revision), seen)


def _weight_shape(layer):
    if layer.kind in ("convolutional", "deconvolutional"):
        return (layer.filters, layer.in_dims[0], layer.size, layer.size)
    inputs = layer.in_dims[0] * layer.in_dims[1] * layer.in_dims[2]
    return (layer.output, inputs)


def save_weights(net):
    """Serialize a WeightedNetwork back to the binary weight format."""
    major, minor, revision = net.version
    out = [struct.pack("<3i", major, minor, revision)]
    seen_fmt = "<Q" if major * 10 + minor >= 2 else "<I"
    out.append(struct.pack(seen_fmt, net.seen))
    for params in net.layers:
        if params.bias is None:
            continue
        out.append(np.ascontiguousarray(params.bias, dtype="<f4").tobytes())
        out.append(np.ascontiguousarray(params.weights, dtype="<f4").tobytes())
    return b"".join(out)


def load_network(cfg_path, weights_path):
    """Convenience: parse a .cfg file and bind its .weights file."""
    with open(cfg_path, "r", encoding="ascii", errors="replace") as fh:
        graph = parse_cfg(fh.read())
    with open(weights_path, "rb") as fh:
        return load_weights(fh.read(), graph)
