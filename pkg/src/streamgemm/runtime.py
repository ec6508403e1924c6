"""Layer lowering and the end-to-end forward pass.

Every convolutional, deconvolutional and connected layer becomes
exactly one streamed-engine GEMM: convolution as filter-matrix x
im2col columns, deconvolution as the transpose formulation (weights
rearranged to (filters*size*size, in_c)) followed by col2im, connected
as a plain matrix-vector product.  Bias is added after the GEMM and
before the activation.  Pooling and softmax execute directly on
tensors.  Intermediate activations are materialized per layer.
"""

from dataclasses import dataclass

import numpy as np

from .engine import GemmShape, gemm_streamed
from .errors import DimMismatch, UnsupportedLayer
from .tensor import (
    Matrix,
    Tensor,
    activate,
    avgpool,
    col2im,
    im2col,
    maxpool,
    softmax,
)

GEMM_KINDS = ("convolutional", "deconvolutional", "connected")
DIRECT_KINDS = ("maxpool", "avgpool", "softmax")


@dataclass(frozen=True)
class PlanStep:
    layer_index: int
    kind: str
    lowering: str  # "im2col-gemm" | "gemm-col2im" | "direct"
    gemm: GemmShape = None


@dataclass(frozen=True)
class ExecutionPlan:
    config: object
    steps: tuple


def lower(network, config):
    """Map every layer of a weighted network onto an engine step."""
    steps = []
    for index, layer in enumerate(network.graph.layers):
        c_in, h_in, w_in = layer.in_dims
        if layer.kind == "convolutional":
            _, oh, ow = layer.out_dims
            shape = GemmShape(layer.filters, c_in * layer.size ** 2, oh * ow)
            steps.append(PlanStep(index, layer.kind, "im2col-gemm", shape))
        elif layer.kind == "deconvolutional":
            shape = GemmShape(layer.filters * layer.size ** 2, c_in, h_in * w_in)
            steps.append(PlanStep(index, layer.kind, "gemm-col2im", shape))
        elif layer.kind == "connected":
            shape = GemmShape(layer.output, c_in * h_in * w_in, 1)
            steps.append(PlanStep(index, layer.kind, "im2col-gemm", shape))
        elif layer.kind in DIRECT_KINDS:
            steps.append(PlanStep(index, layer.kind, "direct"))
        else:
            raise UnsupportedLayer(f"layer {index}: no execution path for '{layer.kind}'")
    return ExecutionPlan(config, tuple(steps))


def forward(network, x, config):
    """Run the network on a 1xCxHxW tensor via the streamed engine."""
    expected = (1,) + tuple(network.graph.input_dims)
    if tuple(x.dims) != expected:
        raise DimMismatch(f"input dims {tuple(x.dims)} != network input {expected}")
    plan = lower(network, config)
    for step in plan.steps:
        layer = network.graph.layers[step.layer_index]
        params = network.layers[step.layer_index]
        x = _run_layer(step, layer, params, x, config)
    return x


def _run_layer(step, layer, params, x, config):
    if layer.kind == "convolutional":
        return _conv(layer, params, x, config)
    if layer.kind == "deconvolutional":
        return _deconv(layer, params, x, config)
    if layer.kind == "connected":
        return _connected(layer, params, x, config)
    if layer.kind == "maxpool":
        return maxpool(x, layer.size, layer.stride, layer.pad)
    if layer.kind == "avgpool":
        return avgpool(x)
    if layer.kind == "softmax":
        flat = Tensor(x.data.reshape(1, x.c * x.h * x.w, 1, 1))
        return softmax(flat)
    raise UnsupportedLayer(f"layer {step.layer_index}: '{layer.kind}'")


def _conv(layer, params, x, config):
    f, oh, ow = layer.out_dims
    wm = Matrix(params.weights.reshape(f, -1))
    cols = im2col(x, layer.size, layer.stride, layer.pad)
    g = gemm_streamed(wm, cols, config).data
    g = g + params.bias[:, None]
    return activate(Tensor(g.reshape(1, f, oh, ow)), layer.activation)


def _deconv(layer, params, x, config):
    f, oh, ow = layer.out_dims
    c_in = layer.in_dims[0]
    # (f, c, ky, kx) -> (f, ky, kx, c) -> rows ordered (f, ky, kx)
    wm = Matrix(
        params.weights.transpose(0, 2, 3, 1).reshape(f * layer.size ** 2, c_in)
    )
    xm = Matrix(x.data.reshape(c_in, x.h * x.w))
    g = gemm_streamed(wm, xm, config)
    t = col2im(g, f, oh, ow, layer.size, layer.stride, layer.pad)
    shifted = t.data + params.bias.reshape(1, f, 1, 1)
    return activate(Tensor(shifted), layer.activation)


def _connected(layer, params, x, config):
    inputs = x.c * x.h * x.w
    wm = Matrix(params.weights)
    xv = Matrix(x.data.reshape(inputs, 1))
    g = gemm_streamed(wm, xv, config).data
    g = g + params.bias[:, None]
    return activate(Tensor(g.reshape(1, layer.output, 1, 1)), layer.activation)
