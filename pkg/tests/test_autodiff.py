import numpy as np
import pytest

from filmpol import autodiff as ad
from filmpol.errors import DataError, ShapeError, StateError
from filmpol.gradcheck import check_op, rel_error, sampled_param_check
from filmpol.nets import FilmRemovalModel, PipelineMode, batch_features, plm_tensor

rng = np.random.default_rng(0)


def away_from_zero(shape, seed):
    r = np.random.default_rng(seed)
    x = r.uniform(0.05, 1.0, shape)
    return x * r.choice([-1.0, 1.0], shape)


OPS = {
    "add": (ad.add, [(2, 3, 4, 4), (2, 3, 4, 4)]),
    "add_broadcast": (ad.add, [(2, 3, 4, 4), (1, 3, 1, 1)]),
    "sub": (lambda a, b: a - b, [(2, 3, 4, 4), (2, 3, 4, 4)]),
    "neg": (ad.neg, [(2, 3, 4, 4)]),
    "mul": (ad.mul, [(2, 3, 4, 4), (2, 3, 4, 4)]),
    "mul_broadcast": (ad.mul, [(2, 3, 4, 4), (2, 1, 4, 4)]),
    "square": (ad.square, [(2, 3, 4, 4)]),
    "relu": (ad.relu, [(2, 3, 4, 4)]),
    "sigmoid": (ad.sigmoid, [(2, 3, 4, 4)]),
    "cos": (ad.cos, [(2, 3, 4, 4)]),
    "sin": (ad.sin, [(2, 3, 4, 4)]),
    "abs": (ad.abs_, [(2, 3, 4, 4)]),
    "mean": (ad.mean, [(2, 3, 4, 4)]),
    "sum": (ad.sum_, [(2, 3, 4, 4)]),
    "concat": (lambda a, b: ad.concat([a, b]), [(2, 3, 4, 4), (2, 2, 4, 4)]),
    "conv3x3": (ad.conv2d, [(2, 3, 5, 6), (4, 3, 3, 3), (4,)]),
    "conv3x3_nobias": (ad.conv2d, [(1, 2, 4, 4), (3, 2, 3, 3)]),
    "conv1x1": (ad.conv2d, [(2, 3, 5, 6), (4, 3, 1, 1), (4,)]),
    "l1_loss": (lambda a, b: ad.l1_loss(a, b), [(2, 1, 4, 4), (2, 1, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    op, shapes = OPS[name]
    inputs = [away_from_zero(s, i + 10) for i, s in enumerate(shapes)]
    if name == "l1_loss":  # keep |pred - gt| away from the kink
        inputs[1] = inputs[0] + np.where(inputs[1] > 0, 0.3, -0.3)
    assert check_op(op, inputs, h=1e-3) <= 1e-6


def test_single_conv_layer_fd():
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((5, 3, 3, 3))
    b = rng.standard_normal(5)
    assert check_op(ad.conv2d, [x, w, b], h=1e-3) <= 1e-6


def test_conv_against_direct_loop():
    x = rng.standard_normal((1, 2, 4, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for o in range(3):
        for y in range(4):
            for xx in range(5):
                ref = b[o] + sum(w[o, c, ky, kx] * xp[0, c, y + ky, xx + kx]
                                 for c in range(2) for ky in range(3) for kx in range(3))
                assert abs(out[0, o, y, xx] - ref) <= 1e-12


def test_l1_loss_examples():
    a = rng.random((2, 1, 5, 5))
    assert ad.l1_loss(ad.Tensor(a), ad.Tensor(a)).item() == 0.0
    assert abs(ad.l1_loss(ad.Tensor(a + 0.1), ad.Tensor(a)).item() - 0.1) <= 1e-12
    b = rng.random(a.shape)
    ref = 0.0
    for v, t in zip(a.ravel(), b.ravel()):
        ref += abs(float(v) - float(t))
    assert abs(ad.l1_loss(ad.Tensor(a), ad.Tensor(b)).item() - ref / a.size) <= 1e-12
    with pytest.raises(ShapeError):
        ad.l1_loss(ad.Tensor(a), ad.Tensor(b[:, :, :4]))


def test_backward_errors_and_accumulation():
    x = ad.Tensor(np.ones(3))
    with pytest.raises(StateError):
        x.backward()
    p = ad.Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.sum_(ad.mul(p, p))
    y.backward()
    assert p.grad.tolist() == [2.0, 4.0]
    ad.sum_(p).backward()
    assert p.grad.tolist() == [3.0, 5.0]


def test_no_grad_records_nothing():
    p = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.sum_(ad.square(p))
    assert not y.requires_grad


def test_debug_mode_catches_non_finite():
    prev = ad.set_debug(True)
    try:
        with pytest.raises(DataError), np.errstate(invalid="ignore"):
            ad.mul(ad.Tensor(np.array([np.inf])), ad.Tensor(np.array([0.0])))
    finally:
        ad.set_debug(prev)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        ad.conv2d(ad.Tensor(np.zeros((1, 2, 4, 4))), ad.Tensor(np.zeros((3, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ad.conv2d(ad.Tensor(np.zeros((1, 2, 4, 4))), ad.Tensor(np.zeros((3, 2, 5, 5))))


def test_plm_angle_derivative_matches_closed_form():
    r = np.random.default_rng(3)
    imax = r.uniform(0.3, 1.0, (2, 1, 6, 6))
    imin = imax * r.uniform(0.0, 1.0, imax.shape)
    a = ad.Tensor(r.uniform(0, np.pi, imax.shape), requires_grad=True)
    p = plm_tensor(ad.Tensor(imax), ad.Tensor(imin), a)
    ad.sum_(p).backward()
    expect = (imin - imax) * np.sin(2 * a.data)
    assert np.max(np.abs(a.grad - expect)) <= 1e-9


def e2e_setup(seed=0, arch=None):
    r = np.random.default_rng(seed)
    caps = r.uniform(0.05, 0.6, (1, 4, 8, 8))
    feats = batch_features(caps)
    arch = arch or {}
    model = FilmRemovalModel(PipelineMode.FULL, dict(arch, head_init="kaiming"), arch,
                             seed=seed, dtype=np.float64)
    target = ad.Tensor(np.full((1, 1, 8, 8), -1.0))   # keeps L1 away from its kink
    return model, feats, target


def test_end_to_end_gradients():
    model, feats, target = e2e_setup()

    def loss():
        rec, _, _ = model(feats)
        return ad.l1_loss(rec, target)

    err, an, nu, picked = sampled_param_check(model.params, loss, n=100, h=1e-6, seed=1)
    assert err <= 1e-4
    assert np.max(np.abs(nu)) > 0
    # gradient reaches A-Net through the Malus prior
    assert np.any(model.params["anet.head.weight"].grad != 0)


def test_anet_alone_gradients():
    model, feats, _ = e2e_setup(seed=2)
    x = np.concatenate([feats["captures"], feats["aop"], feats["dop"]], axis=1)
    anet = model.anet
    w = ad.Tensor(np.random.default_rng(3).standard_normal((1, 1, 8, 8)))

    def loss():
        return ad.sum_(ad.mul(anet(ad.Tensor(x)), w))

    err, _, _, _ = sampled_param_check(anet.params, loss, n=100, h=1e-6, seed=4)
    assert err <= 1e-4


def test_rel_error_helper():
    assert rel_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert abs(rel_error([1.0, 2.1], [1.0, 2.0]) - 0.05) <= 1e-12
