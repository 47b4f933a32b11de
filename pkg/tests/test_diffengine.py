import numpy as np
import pytest

import seqda.diffengine as de
from conftest import check_gradients, max_rel_err, numerical_grad, analytic_grad


def _bags(rng, shape):
    return rng.normal(size=shape)


# one entry per op kind: (name, builder of scalar Tensor from Tensor args, shapes)
OP_CASES = [
    ("affine", lambda x, w, b: de.tsum(de.square(de.affine(x, w, b))),
     [(3, 4), (4, 5), (5,)]),
    ("conv1d", lambda x, w, b: de.tsum(de.square(de.conv1d(x, w, b))),
     [(2, 6, 3), (5, 3, 4), (4,)]),
    ("conv1d_stride2", lambda x, w, b: de.tsum(de.square(de.conv1d(x, w, b, stride=2))),
     [(2, 6, 3), (3, 3, 4), (4,)]),
    ("lstm_seq", lambda x, wx, wh, b: de.tsum(de.square(de.lstm_seq(x, wx, wh, b))),
     [(2, 5, 3), (3, 12), (3, 12), (12,)]),
    ("lstm_seq_rev",
     lambda x, wx, wh, b: de.tsum(de.square(de.lstm_seq(x, wx, wh, b, reverse_time=True))),
     [(2, 5, 3), (3, 12), (3, 12), (12,)]),
    ("lstm_cell",
     lambda x, h, c, wx, wh, b: de.tsum(de.square(
         de.add(*de.lstm_cell(x, h, c, wx, wh, b)))),
     [(3, 4), (3, 2), (3, 2), (4, 8), (2, 8), (8,)]),
    ("reverse", lambda x: de.tsum(de.square(de.reverse(x, 1))), [(3, 5)]),
    ("concat", lambda a, b: de.tsum(de.square(de.concat([a, b], axis=1))),
     [(3, 2), (3, 4)]),
    ("tanh", lambda x: de.tsum(de.square(de.tanh(x))), [(3, 4)]),
    ("sigmoid", lambda x: de.tsum(de.square(de.sigmoid(x))), [(3, 4)]),
    ("relu", lambda x: de.tsum(de.square(de.relu(x))), [(3, 4)]),
    ("maxpool", lambda x: de.tsum(de.square(de.adaptive_max_pool_time(x, 3))),
     [(2, 7, 4)]),
    ("mean", lambda x: de.square(de.tmean(x)), [(3, 5)]),
    ("mean_axis", lambda x: de.tsum(de.square(de.tmean(x, axis=0))), [(4, 3)]),
    ("sum", lambda x: de.square(de.tsum(x)), [(3, 5)]),
    ("matmul", lambda a, b: de.tsum(de.square(de.matmul(a, b))), [(3, 4), (4, 2)]),
    ("transpose", lambda x: de.tsum(de.square(de.matmul(de.transpose(x), x))), [(3, 4)]),
    ("sub_mul_square",
     lambda a, b: de.tsum(de.square(de.mul(de.sub(a, b), a))), [(3, 4), (3, 4)]),
    ("div", lambda a, b: de.tsum(de.div(a, b)), [(3, 4), (3, 4)]),
    ("exp_log", lambda x: de.tsum(de.log(de.exp(x))), [(3, 4)]),
    ("sqrt", lambda x: de.tsum(de.sqrt(de.square(x))), [(3, 4)]),
    ("softmax", lambda x: de.tsum(de.square(de.log_softmax(x))), [(3, 5)]),
    ("mean_center", lambda x: de.tsum(de.square(de.mean_center(x, 0))), [(4, 3)]),
    ("outer_power_3", lambda x: de.tsum(de.square(de.outer_power_mean(x, 3))), [(4, 3)]),
    ("monomial", lambda x: de.tsum(de.square(de.monomial_features(
        x, np.array([[0, 1], [2, 2], [1, 0]])))), [(4, 3)]),
    ("matinv", lambda x: de.tsum(de.square(de.matinv(x))), [(3, 3)]),
    ("logdet", lambda x: de.logdet(de.add(de.matmul(de.transpose(x), x),
                                          np.eye(3))), [(4, 3)]),
    ("narrow", lambda x: de.tsum(de.square(de.narrow(x, 1, 1, 2))), [(3, 4)]),
    ("take_flat", lambda x: de.tsum(de.square(de.take_flat(x, [0, 3, 5, 3]))), [(3, 4)]),
]


@pytest.mark.parametrize("name,fn,shapes", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_op_gradients_match_finite_differences(name, fn, shapes):
    # >= 20 random instances per op kind
    for trial in range(20):
        rng = np.random.default_rng([hash(name) % 2 ** 31, trial])
        arrs = [0.3 + rng.normal(size=s) * 0.7 if name in ("div", "sqrt", "exp_log")
                else rng.normal(size=s) for s in shapes]
        check_gradients(fn, arrs, tol=1e-4)


def test_forward_is_pure(rng):
    x = rng.normal(size=(2, 8, 3))
    w = rng.normal(size=(3, 3, 4))
    b = rng.normal(size=4)
    r1 = de.conv1d(de.as_tensor(x), de.as_tensor(w), de.as_tensor(b)).data
    r2 = de.conv1d(de.as_tensor(x), de.as_tensor(w), de.as_tensor(b)).data
    assert np.array_equal(r1, r2)


def test_gradient_linearity(rng):
    x = rng.normal(size=(3, 4))

    def obj_a(t):
        return de.tsum(de.square(t))

    def obj_b(t):
        return de.tsum(de.tanh(t))

    ga = analytic_grad(obj_a, [x])[0]
    gb = analytic_grad(obj_b, [x])[0]
    gsum = analytic_grad(lambda t: de.add(obj_a(t), obj_b(t)), [x])[0]
    assert np.max(np.abs(gsum - (ga + gb))) < 1e-10


def test_graph_affine_identity():
    g = de.Graph(lambda p, i: {"y": de.affine(i["x"], p["w"], p["b"])},
                 params={"w": np.eye(2), "b": np.zeros(2)},
                 input_shapes={"x": (1, 2)})
    out = de.forward(g, {"x": [[1.0, 2.0]]})
    assert np.allclose(out["y"], [[1.0, 2.0]])


def test_graph_tanh_and_softmax_fixed_points():
    g = de.Graph(lambda p, i: {"t": de.tanh(i["x"]), "s": de.softmax(i["z"])})
    out = de.forward(g, {"x": [0.0], "z": [0.0, 0.0, 0.0]})
    assert out["t"][0] == 0.0
    assert np.allclose(out["s"], [1 / 3] * 3, atol=1e-12)


def test_graph_shape_mismatch_names_input():
    g = de.Graph(lambda p, i: {"y": i["x"]}, input_shapes={"x": (2, 2)})
    with pytest.raises(ValueError, match="'x'"):
        de.forward(g, {"x": np.zeros((3, 2))})


def test_graph_grad_sum_of_squares():
    g = de.Graph(lambda p, i: {"objective": de.tsum(de.square(p["x"]))},
                 params={"x": np.array([1.0, 2.0, 3.0])})
    grads = de.grad(g, {})
    assert np.allclose(grads["x"], [2.0, 4.0, 6.0])


def test_graph_grad_constant_objective_is_zero():
    g = de.Graph(lambda p, i: {"objective": de.as_tensor(5.0) + 0.0 * de.tsum(p["x"])},
                 params={"x": np.ones(4)})
    grads = de.grad(g, {})
    assert np.allclose(grads["x"], 0.0)


def test_graph_rejects_non_scalar_objective():
    g = de.Graph(lambda p, i: {"objective": p["x"]}, params={"x": np.ones(3)})
    with pytest.raises(ValueError, match="not scalar"):
        de.grad(g, {})


def test_three_layer_net_gradient_oracle(rng):
    """Random 3-layer net vs central finite differences (step 1e-6)."""
    x = rng.normal(size=(2, 5))
    params = {
        "w1": rng.normal(size=(5, 6)) * 0.5, "b1": rng.normal(size=6) * 0.1,
        "w2": rng.normal(size=(6, 4)) * 0.5, "b2": rng.normal(size=4) * 0.1,
        "w3": rng.normal(size=(4, 3)) * 0.5, "b3": rng.normal(size=3) * 0.1,
    }
    names = list(params)

    def net(*ws):
        p = dict(zip(names, ws))
        h = de.tanh(de.affine(de.as_tensor(x), p["w1"], p["b1"]))
        h = de.relu(de.affine(h, p["w2"], p["b2"]))
        return de.tsum(de.square(de.affine(h, p["w3"], p["b3"])))

    check_gradients(net, [params[n] for n in names], tol=1e-4)
