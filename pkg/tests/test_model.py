import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficgcn import autodiff as ad
from trafficgcn.autodiff import Tensor
from trafficgcn.model import (FilterKind, GcnnParams, ModelConfig, ModelShapeError, ThetaCombine,
                              forward, graph_convolution, init_params, load_model,
                              predict_flows, propagation_operator, save_model)
from trafficgcn.network import build_graph_matrices

from conftest import make_network, random_strong_network, two_way
from oracles import central_difference, conv_loops, gcnn_loops, relative_error


@pytest.fixture
def tiny():
    # 3 nodes, 3 links (a directed ring)
    return make_network(3, [(0, 1, 2), (1, 2, 3), (2, 0, 4)], name="Tiny")


def fitted(params, xs=1000.0, fs=5000.0):
    return dataclasses.replace(params, config=dataclasses.replace(params.config, input_scale=xs,
                                                                   output_scale=fs))


class TestInit:
    def test_sioux_shapes(self, sioux_net):
        p = init_params(sioux_net, ModelConfig())
        assert p.theta.shape == (24, 24) and p.w_q.shape == (24, 76) and p.w_f.shape == (24,)

    def test_seeded(self, sioux_net):
        a, b = init_params(sioux_net, ModelConfig(seed=3)), init_params(sioux_net, ModelConfig(seed=3))
        for x, y in zip(a.tensors().values(), b.tensors().values()):
            np.testing.assert_array_equal(x.value, y.value)
        c = init_params(sioux_net, ModelConfig(seed=4))
        assert not np.array_equal(a.theta.value, c.theta.value)

    def test_glorot_bounds(self, sioux_net):
        p = init_params(sioux_net, ModelConfig())
        for t, (fi, fo) in ((p.theta, (24, 24)), (p.w_q, (24, 76)), (p.w_f, (24, 1))):
            assert np.max(np.abs(t.value)) <= np.sqrt(6 / (fi + fo))

    @pytest.mark.parametrize("kw", [{"input_scale": 0.0}, {"output_scale": -1.0},
                                    {"init": "normal"}, {"filter": "chebyshev"}])
    def test_config_rejects(self, kw):
        with pytest.raises(ValueError):
            ModelConfig(**kw)

    def test_config_dict_round_trip(self):
        cfg = ModelConfig(filter="spectral", theta_combine="matmul", input_scale=2.0, seed=9)
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestConvolution:
    @pytest.mark.parametrize("combine", list(ThetaCombine))
    def test_zero_input(self, combine):
        rng = np.random.default_rng(0)
        out = graph_convolution(rng.normal(size=(4, 4)), Tensor(rng.normal(size=(4, 4))),
                                Tensor(np.zeros((4, 4))), combine)
        assert not out.value.any()

    def test_ones_mask_is_plain_propagation(self):
        rng = np.random.default_rng(1)
        p, x = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        out = graph_convolution(p, Tensor(np.ones((5, 5))), Tensor(x), "hadamard")
        np.testing.assert_array_equal(out.value, p @ x)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["hadamard", "matmul"]))
    def test_matches_loops(self, seed, combine):
        rng = np.random.default_rng(seed)
        theta, p, x = (rng.normal(size=(3, 3)) for _ in range(3))
        out = graph_convolution(p, Tensor(theta), Tensor(x), combine)
        np.testing.assert_allclose(out.value, conv_loops(theta, p, x, combine), rtol=1e-12, atol=1e-12)


class TestForward:
    @pytest.mark.parametrize("combine", ["hadamard", "matmul"])
    @pytest.mark.parametrize("filt", list(FilterKind))
    def test_matches_loops(self, tiny, filt, combine):
        params = init_params(tiny, ModelConfig(filter=filt, theta_combine=combine, seed=2))
        p = propagation_operator(tiny, params.config)
        x = np.random.default_rng(3).uniform(0, 1, (3, 3))
        got = forward(params, p, x).value
        want = gcnn_loops(params.theta.value, params.w_q.value, params.w_f.value, p, x, combine)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)

    def test_sioux_shapes(self, sioux_net):
        params = init_params(sioux_net, ModelConfig())
        p = propagation_operator(sioux_net, params.config)
        out, h1, h2 = forward(params, p, np.random.default_rng(0).uniform(0, 1, (24, 24)),
                              return_hidden=True)
        assert h1.shape == (24, 24) and h2.shape == (24, 76) and out.shape == (76,)

    def test_batch_matches_single(self, sioux_net):
        params = init_params(sioux_net, ModelConfig())
        p = propagation_operator(sioux_net, params.config)
        xs = np.random.default_rng(0).uniform(0, 1, (3, 24, 24))
        batch = forward(params, p, xs).value
        for k in range(3):
            np.testing.assert_allclose(batch[k], forward(params, p, xs[k]).value, rtol=1e-13, atol=1e-15)

    def test_shape_mismatch(self, sioux_net):
        params = init_params(sioux_net, ModelConfig())
        with pytest.raises(ModelShapeError):
            forward(params, propagation_operator(sioux_net, params.config), np.zeros((5, 5)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.sampled_from(list(FilterKind)),
           st.sampled_from(list(ThetaCombine)))
    def test_zero_fixed_point_and_ranges(self, seed, n, filt, combine):
        rng = np.random.default_rng(seed)
        net = random_strong_network(rng, n, extra=n)
        params = init_params(net, ModelConfig(filter=filt, theta_combine=combine, seed=seed % 1000))
        for t in params.tensors().values():
            t.value *= rng.uniform(0.1, 20)
        p = propagation_operator(net, params.config)
        zero = forward(params, p, np.zeros((n, n))).value
        assert np.all(zero == 0)
        _, h1, h2 = forward(params, p, rng.uniform(0, 1, (n, n)), return_hidden=True)
        assert np.all(np.abs(h1.value) <= 1) and np.all(np.abs(h2.value) <= 1)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(3, 8), st.integers(1, 9))
    def test_filter_coincidence_on_regular_graph(self, seed, n, t):
        net = two_way(n, [(i, (i + 1) % n, t) for i in range(n)])
        params = init_params(net, ModelConfig(seed=seed % 1000))
        g = build_graph_matrices(net)
        x = np.random.default_rng(seed).uniform(0, 1, (n, n))
        np.testing.assert_allclose(forward(params, g.spectral, x).value,
                                   forward(params, g.random_walk, x).value, rtol=0, atol=1e-12)


class TestGradientIntegrity:
    @pytest.mark.parametrize("combine", ["hadamard", "matmul"])
    @pytest.mark.parametrize("filt", list(FilterKind))
    def test_end_to_end(self, filt, combine):
        net = two_way(4, [(0, 1, 2), (1, 2, 1), (2, 3, 3), (3, 0, 2)])
        params = init_params(net, ModelConfig(filter=filt, theta_combine=combine, seed=1))
        p = propagation_operator(net, params.config)
        rng = np.random.default_rng(7)
        x, y = rng.uniform(0, 1, (3, 4, 4)), rng.normal(size=(3, net.link_count))
        ad.backward(ad.mse_loss(forward(params, p, x), y))
        for name, t in params.tensors().items():
            def loss_at(v, name=name):
                trial = params.copy()
                trial.tensors()[name].value[...] = v
                with ad.no_grad():
                    return float(ad.mse_loss(forward(trial, p, x), y).value)
            fd = central_difference(loss_at, t.value.copy(), 1e-5)
            assert relative_error(t.grad, fd) <= 1e-5, name


class TestPredict:
    def test_zero_demand(self, sioux_net):
        params = fitted(init_params(sioux_net, ModelConfig()))
        flows, clamped = predict_flows(params, sioux_net, np.zeros((24, 24)))
        assert not flows.any() and clamped == 0

    def test_clamps_negatives(self, sioux_net, sioux_trips):
        params = fitted(init_params(sioux_net, ModelConfig()))
        raw = forward(params, propagation_operator(sioux_net, params.config),
                      sioux_trips / 1000.0).value * 5000.0
        flows, clamped = predict_flows(params, sioux_net, sioux_trips)
        assert clamped == int(np.sum(raw < 0)) > 0
        np.testing.assert_array_equal(flows, np.maximum(raw, 0))

    def test_needs_fitted_scales(self, sioux_net, sioux_trips):
        with pytest.raises(ValueError, match="scales"):
            predict_flows(init_params(sioux_net, ModelConfig()), sioux_net, sioux_trips)

    def test_scaling_inverse_pairs(self, sioux_net, sioux_trips):
        # powers of two keep every product exact, so predictions agree bit for bit
        base = fitted(init_params(sioux_net, ModelConfig()))
        want = predict_flows(base, sioux_net, sioux_trips)[0]
        wider_in = fitted(base.copy(), xs=2000.0)
        wider_in.theta.value *= 2.0
        np.testing.assert_array_equal(predict_flows(wider_in, sioux_net, sioux_trips)[0], want)
        wider_out = fitted(base.copy(), fs=10000.0)
        wider_out.w_f.value *= 0.5
        np.testing.assert_array_equal(predict_flows(wider_out, sioux_net, sioux_trips)[0], want)

    def test_network_mismatch(self, sioux_net, tiny):
        params = fitted(init_params(sioux_net, ModelConfig()))
        with pytest.raises(ModelShapeError):
            predict_flows(params, tiny, np.zeros((3, 3)))


class TestCheckpoint:
    def test_round_trip(self, sioux_net, tmp_path):
        params = fitted(init_params(sioux_net, ModelConfig(filter="laplacian", seed=5)))
        save_model(tmp_path / "m.json", params, sioux_net, iteration=12, extra={"k": 1})
        back = load_model(tmp_path / "m.json", sioux_net)
        assert back.config == params.config
        for a, b in zip(back.tensors().values(), params.tensors().values()):
            np.testing.assert_array_equal(a.value, b.value)

    def test_other_network_named(self, sioux_net, tiny, tmp_path):
        save_model(tmp_path / "m.json", fitted(init_params(sioux_net, ModelConfig())), sioux_net)
        with pytest.raises(ModelShapeError, match="SiouxFalls.*Tiny"):
            load_model(tmp_path / "m.json", tiny)
