import numpy as np
import pytest

from streamgemm.darknet import (
    LayerSpec,
    LayerWeights,
    NetworkGraph,
    WeightedNetwork,
    parse_cfg,
)
from streamgemm.engine import EngineConfig, GemmShape
from streamgemm.errors import DimMismatch, UnsupportedLayer
from streamgemm.runtime import forward, lower
from streamgemm.tensor import Tensor

from oracles import direct_conv, direct_deconv, rel_close

CFG = EngineConfig(tile_m=16, tile_k=16, tile_n=16)


def netcfg(c, h, w, body):
    return f"[net]\nchannels={c}\nheight={h}\nwidth={w}\n\n{body}\n"


def bind_random(graph, rng, scale=0.5):
    """Attach small random parameters to every parameterized layer."""
    layers = []
    for layer in graph.layers:
        if layer.kind in ("convolutional", "deconvolutional"):
            shape = (layer.filters, layer.in_dims[0], layer.size, layer.size)
        elif layer.kind == "connected":
            inputs = layer.in_dims[0] * layer.in_dims[1] * layer.in_dims[2]
            shape = (layer.output, inputs)
        else:
            layers.append(LayerWeights())
            continue
        w = (rng.random(shape, dtype=np.float32) - np.float32(0.5)) * np.float32(scale)
        b = (rng.random(shape[0], dtype=np.float32) - np.float32(0.5)) * np.float32(scale)
        layers.append(LayerWeights(weights=w, bias=b))
    return WeightedNetwork(graph, tuple(layers))


def rand_input(graph, rng):
    c, h, w = graph.input_dims
    return Tensor(rng.random((1, c, h, w), dtype=np.float32) - np.float32(0.5))


class TestLower:
    def test_conv_shape(self):
        graph = parse_cfg(netcfg(
            3, 32, 32,
            "[convolutional]\nfilters=16\nsize=3\nstride=1\npad=1\nactivation=linear",
        ))
        plan = lower(WeightedNetwork(graph, (LayerWeights(),)), CFG)
        step = plan.steps[0]
        assert step.lowering == "im2col-gemm"
        assert step.gemm == GemmShape(16, 27, 1024)

    def test_deconv_shape(self):
        graph = parse_cfg(netcfg(
            4, 6, 6,
            "[deconvolutional]\nfilters=3\nsize=2\nstride=2\nactivation=linear",
        ))
        plan = lower(WeightedNetwork(graph, (LayerWeights(),)), CFG)
        step = plan.steps[0]
        assert step.lowering == "gemm-col2im"
        assert step.gemm == GemmShape(12, 4, 36)

    def test_connected_shape(self):
        graph = parse_cfg(netcfg(4, 5, 5, "[connected]\noutput=10"))
        plan = lower(WeightedNetwork(graph, (LayerWeights(),)), CFG)
        assert plan.steps[0].gemm == GemmShape(10, 100, 1)

    def test_direct_kinds_have_no_gemm(self):
        graph = parse_cfg(netcfg(
            2, 8, 8,
            "[maxpool]\nsize=2\nstride=2\n\n[avgpool]\n\n[softmax]",
        ))
        plan = lower(WeightedNetwork(graph, (LayerWeights(),) * 3), CFG)
        assert [s.lowering for s in plan.steps] == ["direct"] * 3
        assert all(s.gemm is None for s in plan.steps)

    def test_every_layer_planned_once_in_order(self, datadir):
        graph = parse_cfg((datadir / "cfg" / "all-kinds.cfg").read_text())
        net = WeightedNetwork(graph, (LayerWeights(),) * len(graph.layers))
        plan = lower(net, CFG)
        assert [s.layer_index for s in plan.steps] == list(range(len(graph.layers)))

    def test_unknown_kind_rejected(self):
        route = LayerSpec(kind="route", in_dims=(1, 4, 4), out_dims=(1, 4, 4))
        graph = NetworkGraph((1, 4, 4), (route,))
        with pytest.raises(UnsupportedLayer):
            lower(WeightedNetwork(graph, (LayerWeights(),)), CFG)


class TestConvForward:
    def test_identity_conv_is_bitwise_identity(self):
        c = 3
        graph = parse_cfg(netcfg(
            c, 7, 5,
            "[convolutional]\nfilters=3\nsize=1\nstride=1\npad=0\nactivation=linear",
        ))
        eye = np.zeros((c, c, 1, 1), dtype=np.float32)
        for i in range(c):
            eye[i, i, 0, 0] = 1.0
        net = WeightedNetwork(
            graph, (LayerWeights(eye, np.zeros(c, dtype=np.float32)),)
        )
        x = rand_input(graph, np.random.default_rng(0))
        y = forward(net, x, CFG)
        assert y.data.tobytes() == x.data.tobytes()

    def test_matches_direct_convolution(self):
        rng = np.random.default_rng(1)
        geometries = [
            (1, 5, 5, 2, 3, 1, 1),
            (3, 8, 8, 4, 3, 1, 0),
            (2, 9, 9, 3, 3, 2, 1),
            (4, 6, 6, 8, 2, 2, 0),
            (3, 11, 7, 5, 1, 1, 0),
            (2, 10, 10, 3, 5, 1, 2),
        ]
        for c, h, w, f, size, stride, pad in geometries:
            graph = parse_cfg(netcfg(
                c, h, w,
                f"[convolutional]\nfilters={f}\nsize={size}\nstride={stride}"
                f"\npad={pad}\nactivation=linear",
            ))
            net = bind_random(graph, rng)
            x = rand_input(graph, rng)
            got = forward(net, x, CFG)
            params = net.layers[0]
            want = direct_conv(x.data, params.weights, params.bias, size, stride, pad)
            assert got.data.shape == want.shape
            assert rel_close(got.data, want), (c, h, w, f, size, stride, pad)

    def test_relu_applied_after_bias(self):
        rng = np.random.default_rng(2)
        graph = parse_cfg(netcfg(
            2, 6, 6,
            "[convolutional]\nfilters=3\nsize=3\nstride=1\npad=1\nactivation=relu",
        ))
        net = bind_random(graph, rng)
        x = rand_input(graph, rng)
        got = forward(net, x, CFG)
        params = net.layers[0]
        pre = direct_conv(x.data, params.weights, params.bias, 3, 1, 1)
        assert rel_close(got.data, np.maximum(pre, 0.0))
        assert got.data.min() >= 0.0

    def test_two_layer_chain(self):
        rng = np.random.default_rng(3)
        graph = parse_cfg(netcfg(
            2, 8, 8,
            "[convolutional]\nfilters=4\nsize=3\nstride=1\npad=1\nactivation=linear\n\n"
            "[convolutional]\nfilters=3\nsize=3\nstride=1\npad=0\nactivation=linear",
        ))
        net = bind_random(graph, rng)
        x = rand_input(graph, rng)
        got = forward(net, x, CFG)
        p0, p1 = net.layers
        mid = direct_conv(x.data, p0.weights, p0.bias, 3, 1, 1)
        want = direct_conv(mid, p1.weights, p1.bias, 3, 1, 0)
        assert rel_close(got.data, want)


class TestDeconvForward:
    def test_hand_case_stride_matches_size(self):
        # all-ones 2x2 kernel at stride 2 tiles each input value into
        # its own 2x2 output block
        graph = parse_cfg(netcfg(
            1, 2, 2,
            "[deconvolutional]\nfilters=1\nsize=2\nstride=2\nactivation=linear",
        ))
        w = np.ones((1, 1, 2, 2), dtype=np.float32)
        net = WeightedNetwork(graph, (LayerWeights(w, np.zeros(1, dtype=np.float32)),))
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]], dtype=np.float32))
        y = forward(net, x, CFG)
        want = np.array(
            [[[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]]],
            dtype=np.float32,
        )
        assert y.data.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(y.data, want)

    def test_matches_direct_deconvolution(self):
        rng = np.random.default_rng(4)
        geometries = [
            (1, 3, 3, 2, 2, 2, 0),
            (2, 4, 4, 3, 3, 1, 0),
            (3, 5, 5, 2, 3, 2, 1),
            (2, 6, 4, 4, 2, 1, 0),
            (4, 3, 5, 1, 3, 3, 0),
        ]
        for c, h, w, f, size, stride, pad in geometries:
            graph = parse_cfg(netcfg(
                c, h, w,
                f"[deconvolutional]\nfilters={f}\nsize={size}\nstride={stride}"
                f"\npad={pad}\nactivation=linear",
            ))
            net = bind_random(graph, rng)
            x = rand_input(graph, rng)
            got = forward(net, x, CFG)
            params = net.layers[0]
            want = direct_deconv(x.data, params.weights, params.bias, size, stride, pad)
            assert got.data.shape == want.shape
            assert rel_close(got.data, want), (c, h, w, f, size, stride, pad)


class TestConnectedForward:
    def test_matches_matvec(self):
        rng = np.random.default_rng(5)
        graph = parse_cfg(netcfg(3, 4, 4, "[connected]\noutput=7"))
        net = bind_random(graph, rng)
        x = rand_input(graph, rng)
        got = forward(net, x, CFG)
        params = net.layers[0]
        want = (
            params.weights.astype(np.float64) @ x.data.reshape(-1).astype(np.float64)
            + params.bias.astype(np.float64)
        ).reshape(1, 7, 1, 1)
        assert got.data.shape == (1, 7, 1, 1)
        assert rel_close(got.data, want)

    def test_softmax_head_sums_to_one(self):
        rng = np.random.default_rng(6)
        graph = parse_cfg(netcfg(
            1, 4, 4, "[connected]\noutput=5\n\n[softmax]",
        ))
        net = bind_random(graph, rng)
        y = forward(net, rand_input(graph, rng), CFG)
        assert y.data.shape == (1, 5, 1, 1)
        assert y.data.sum() == pytest.approx(1.0, rel=1e-6)
        assert (y.data > 0).all()

    def test_softmax_flattens_spatial_dims(self):
        rng = np.random.default_rng(7)
        graph = parse_cfg(netcfg(
            2, 3, 3,
            "[convolutional]\nfilters=2\nsize=1\nstride=1\npad=0\nactivation=linear\n\n"
            "[softmax]",
        ))
        net = bind_random(graph, rng)
        y = forward(net, rand_input(graph, rng), CFG)
        assert y.data.shape == (1, 18, 1, 1)
        assert y.data.sum() == pytest.approx(1.0, rel=1e-6)


class TestWholeNetworks:
    def test_all_kinds_network_runs(self, datadir):
        rng = np.random.default_rng(8)
        graph = parse_cfg((datadir / "cfg" / "all-kinds.cfg").read_text())
        net = bind_random(graph, rng)
        y = forward(net, rand_input(graph, rng), CFG)
        assert y.data.shape == (1, 5, 1, 1)
        assert y.data.sum() == pytest.approx(1.0, rel=1e-6)

    def test_maxpool_layer_matches_window_maximum(self):
        rng = np.random.default_rng(9)
        graph = parse_cfg(netcfg(2, 6, 6, "[maxpool]\nsize=2\nstride=2"))
        net = WeightedNetwork(graph, (LayerWeights(),))
        x = rand_input(graph, rng)
        y = forward(net, x, CFG)
        blocks = x.data.reshape(1, 2, 3, 2, 3, 2)
        np.testing.assert_array_equal(y.data, blocks.max(axis=(3, 5)))

    def test_avgpool_layer_is_global_mean(self):
        rng = np.random.default_rng(10)
        graph = parse_cfg(netcfg(3, 5, 5, "[avgpool]"))
        net = WeightedNetwork(graph, (LayerWeights(),))
        x = rand_input(graph, rng)
        y = forward(net, x, CFG)
        want = x.data.mean(axis=(2, 3), keepdims=True)
        assert rel_close(y.data, want)


class TestEngineIndependence:
    def test_forward_bitwise_stable_across_engine_configs(self):
        rng = np.random.default_rng(11)
        graph = parse_cfg(netcfg(
            3, 10, 10,
            "[convolutional]\nfilters=6\nsize=3\nstride=1\npad=1\nactivation=leaky\n\n"
            "[maxpool]\nsize=2\nstride=2\n\n"
            "[connected]\noutput=4\nactivation=linear\n\n"
            "[softmax]",
        ))
        net = bind_random(graph, rng)
        x = rand_input(graph, rng)
        configs = [
            EngineConfig(tile_m=8, tile_k=8, tile_n=8, n_banks=1, stream_depth=1),
            EngineConfig(tile_m=16, tile_k=32, tile_n=16, n_banks=2, stream_depth=2),
            EngineConfig(tile_m=64, tile_k=64, tile_n=64, n_banks=4, stream_depth=4),
        ]
        outputs = [forward(net, x, cfg).data.tobytes() for cfg in configs]
        assert outputs[0] == outputs[1] == outputs[2]


class TestInputValidation:
    def test_wrong_input_dims(self):
        graph = parse_cfg(netcfg(3, 4, 4, "[avgpool]"))
        net = WeightedNetwork(graph, (LayerWeights(),))
        bad = Tensor(np.zeros((1, 3, 4, 5), dtype=np.float32))
        with pytest.raises(DimMismatch):
            forward(net, bad, CFG)

    def test_batch_dim_required(self):
        graph = parse_cfg(netcfg(3, 4, 4, "[avgpool]"))
        net = WeightedNetwork(graph, (LayerWeights(),))
        with pytest.raises(DimMismatch):
            forward(net, Tensor(np.zeros((2, 3, 4, 4), dtype=np.float32)), CFG)
