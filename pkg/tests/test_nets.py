import time

import numpy as np
import pytest

from filmpol import autodiff as ad
from filmpol.errors import ConfigError, ShapeError, StateError
from filmpol.nets import (ANGLE_SCALE, FilmRemovalModel, HeadKind, NetDescriptor, PipelineMode,
                          batch_features, build_anet, build_rdn, build_rnet, param_count)


def count_by_hand(c_in, F=16, G=8, C=4, D=3):
    conv = lambda i, o, k: o * i * k * k + o
    total = conv(c_in, F, 3) + conv(F, F, 3)
    for _ in range(D):
        for j in range(C):
            total += conv(F + j * G, G, 3)
        total += conv(F + C * G, F, 1)
    return total + conv(D * F, F, 1) + conv(F, F, 3) + conv(F, 1, 3)


def test_param_counts():
    anet, rnet = build_anet(), build_rnet()
    assert anet.desc.in_channels == 6 and rnet.desc.in_channels == 5
    assert anet.num_params() == param_count(anet.desc) == count_by_hand(6) == 33089
    assert rnet.num_params() == param_count(rnet.desc) == count_by_hand(5) == 32945
    for d in [NetDescriptor(3, blocks=2, convs=3, growth=5, features=7),
              NetDescriptor(1, blocks=1, convs=1, growth=1, features=1)]:
        assert build_rdn(d).num_params() == param_count(d)


def test_layer_graph_consistent():
    net = build_rnet()
    layers = net.layers()
    assert layers[0][2] == 5 and layers[-1][3] == 1
    for name, _, c_in, c_out in layers:
        w = net.params[name + ".weight"].data
        assert w.shape[:2] == (c_out, c_in)


def test_output_ranges():
    r = np.random.default_rng(0)
    x6 = r.standard_normal((2, 6, 16, 16)).astype(np.float32) * 5
    x5 = r.standard_normal((2, 5, 16, 16)).astype(np.float32) * 5
    a = build_anet(head_init="kaiming")(x6).data
    assert a.min() >= 0 and a.max() < np.pi
    rec = build_rnet()(x5).data
    assert rec.min() >= 0 and rec.max() <= 1
    assert ANGLE_SCALE < np.pi


def test_zero_head_gives_constant():
    d = NetDescriptor(5, HeadKind.UNIT, head_init="zero")
    out = build_rdn(d)(np.random.default_rng(1).random((1, 5, 8, 8)).astype(np.float32)).data
    assert np.all(out == 0.5)


def test_identity_pointwise_stack():
    x = ad.Tensor(np.random.default_rng(2).standard_normal((2, 4, 5, 5)))
    eye = ad.Tensor(np.eye(4).reshape(4, 4, 1, 1))
    y = x
    for _ in range(3):
        y = ad.conv2d(y, eye, ad.Tensor(np.zeros(4)))
    assert np.array_equal(y.data, x.data)


def test_forward_deterministic():
    x = np.random.default_rng(3).random((1, 6, 16, 16)).astype(np.float32)
    a = build_anet(seed=5)(x).data
    b = build_anet(seed=5)(x).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, build_anet(seed=6)(x).data)


def test_input_shape_error():
    with pytest.raises(ShapeError):
        build_rnet()(np.zeros((1, 4, 8, 8), dtype=np.float32))


def test_descriptor_validation():
    with pytest.raises(ConfigError):
        NetDescriptor(0)
    with pytest.raises(ConfigError):
        NetDescriptor(5, head_init="ones")


def test_backward_contract():
    net = build_rnet(dtype=np.float64)
    with pytest.raises(StateError):
        net.backward(ad.Tensor(1.0))
    x = np.random.default_rng(4).random((1, 5, 8, 8))
    out = net(ad.Tensor(x))
    grads = net.backward(ad.Tensor(3.0))   # detached constant
    assert all(np.all(g == 0) for g in grads.values())
    grads = net.backward(ad.mean(out))
    assert set(grads) == set(net.params)
    assert any(np.any(g != 0) for g in grads.values())


def test_anet_smoke_speed():
    net = build_anet()
    x = np.random.default_rng(5).random((1, 6, 64, 64)).astype(np.float32)
    with ad.no_grad():
        net(x)
        t0 = time.perf_counter()
        net(x)
        dt = time.perf_counter() - t0
    assert dt < 0.05


@pytest.mark.parametrize("mode,a_in,r_in", [
    (PipelineMode.FULL, 6, 5), (PipelineMode.NO_AOP_DOP, 4, 5),
    (PipelineMode.NO_PRIOR, None, 4), (PipelineMode.NO_POLAR, None, 1)])
def test_pipeline_wiring(mode, a_in, r_in):
    m = FilmRemovalModel(mode, seed=0)
    assert (m.anet is None) == (a_in is None)
    if a_in is not None:
        assert m.anet.desc.in_channels == a_in
    assert m.rnet.desc.in_channels == r_in
    feats = batch_features(np.random.default_rng(6).random((2, 4, 8, 8)))
    rec, angle, prior = m(feats)
    assert rec.shape == (2, 1, 8, 8)
    assert (angle is None) == (a_in is None) and (prior is None) == (a_in is None)


def test_ablation_parameter_names():
    full = set(FilmRemovalModel(PipelineMode.FULL, seed=1).params)
    nop = set(FilmRemovalModel(PipelineMode.NO_PRIOR, seed=1).params)
    assert nop < full
    assert full - nop == {k for k in full if k.startswith("anet.")}
    assert nop == {k for k in full if k.startswith("rnet.")}


def test_state_dict_roundtrip():
    a = FilmRemovalModel(seed=3)
    b = FilmRemovalModel(seed=4)
    b.load_state_dict(a.state_dict())
    feats = batch_features(np.random.default_rng(7).random((1, 4, 8, 8)))
    with ad.no_grad():
        assert np.array_equal(a(feats)[0].data, b(feats)[0].data)
    with pytest.raises(ShapeError):
        b.load_state_dict({**a.state_dict(), "rnet.extra.weight": np.zeros(1)})


def test_batch_features():
    r = np.random.default_rng(8)
    caps = r.random((2, 4, 6, 6))
    f = batch_features(caps)
    assert set(f) == {"captures", "aop", "dop", "imax", "imin"}
    for k in ("aop", "dop", "imax", "imin"):
        assert f[k].shape == (2, 1, 6, 6)
    assert f["aop"].min() >= 0 and f["aop"].max() < 1
    assert np.all(f["imax"] >= f["imin"])
    with pytest.raises(ShapeError):
        batch_features(caps[:, :3])
