import json

import numpy as np
import pytest

from mhect import (PiecewiseSignal, SystemModel, as_box, batch_reactor, box_clip,
                   box_contains, get_model, model_from_dict, zero_signal)
from mhect.errors import ConfigurationError, DomainError
from mhect.rng import SplitMix64
from mhect.sysmodel import (as_grid_index, box_grid_axes, box_vertices,
                            finite_difference_jacobian)


# ---------------------------------------------------------------------------
# boxes

def test_as_box_normalization():
    b = as_box([(0.1, 5.0), (None, 2.0)])
    assert b.shape == (2, 2)
    assert b[0, 0] == 0.1 and b[0, 1] == 5.0
    assert b[1, 0] == -np.inf and b[1, 1] == 2.0

    unbounded = as_box(None, dim=3)
    assert unbounded.shape == (3, 2)
    assert np.all(np.isinf(unbounded))

    with pytest.raises(ConfigurationError):
        as_box([(1.0, 0.0)])
    with pytest.raises(ConfigurationError):
        as_box([(0.0, 1.0)], dim=2)
    with pytest.raises(ConfigurationError):
        as_box(None)


def test_box_membership_and_clip():
    b = as_box([(0.0, 1.0), (-1.0, 1.0)])
    assert box_contains(b, [0.5, 0.0])
    assert box_contains(b, [0.0, 1.0])
    assert not box_contains(b, [1.0 + 1e-6, 0.0])
    assert box_contains(b, [1.0 + 1e-6, 0.0], tol=1e-5)
    assert np.allclose(box_clip(b, [2.0, -3.0]), [1.0, -1.0])


def test_box_vertices_order():
    # bit i of the mask selects the side on axis i
    b = as_box([(0.0, 1.0), (2.0, 3.0)])
    vs = box_vertices(b)
    assert len(vs) == 4
    expected = [[0.0, 2.0], [1.0, 2.0], [0.0, 3.0], [1.0, 3.0]]
    for v, e in zip(vs, expected):
        assert np.array_equal(v, e)
    with pytest.raises(ConfigurationError):
        box_vertices(as_box([(0.0, None)]))
    assert len(box_vertices(np.zeros((0, 2)))) == 1  # degenerate: one empty corner


def test_box_grid_axes():
    b = as_box([(0.0, 1.0), (0.0, 2.0)])
    axes = box_grid_axes(b, 3)
    assert np.allclose(axes[0], [0.0, 0.5, 1.0])
    assert np.allclose(axes[1], [0.0, 1.0, 2.0])
    axes = box_grid_axes(b, [1, 2])
    assert np.allclose(axes[0], [0.5])
    assert np.allclose(axes[1], [0.0, 2.0])
    with pytest.raises(ConfigurationError):
        box_grid_axes(b, [3])
    with pytest.raises(ConfigurationError):
        box_grid_axes(as_box([(0.0, None)]), 2)


# ---------------------------------------------------------------------------
# Jacobians

def test_finite_difference_jacobian_on_smooth_map():
    def fun(v):
        return np.array([np.sin(v[0]) * v[1], v[0] ** 2 + np.exp(v[1])])

    x = np.array([0.7, -0.3])
    J = finite_difference_jacobian(fun, x, 2)
    J_true = np.array([[np.cos(0.7) * (-0.3), np.sin(0.7)],
                       [2 * 0.7, np.exp(-0.3)]])
    assert np.abs(J - J_true).max() < 1e-8


def test_fd_fallback_matches_analytic_jacobians():
    analytic = batch_reactor()
    plain = SystemModel(2, 0, 3, 1, analytic.f, analytic.h,
                        X=[[0.1, 5.0]] * 2, U=[], W=[[-0.1, 0.1]] * 3)
    rng = SplitMix64(42)
    for _ in range(30):
        x = 0.1 + 4.9 * rng.uniforms((2,))
        w = -0.1 + 0.2 * rng.uniforms((3,))
        u = np.zeros(0)
        for which in ("jac_f_x", "jac_f_w", "jac_h_x", "jac_h_w"):
            Ja = getattr(analytic, which)(x, u, w)
            Jf = getattr(plain, which)(x, u, w)
            assert np.abs(Ja - Jf).max() < 1e-6 * max(1.0, np.abs(Ja).max())


# ---------------------------------------------------------------------------
# the bundled reactor model

def test_reactor_vector_field_values():
    m = batch_reactor()
    x = np.array([3.0, 1.0])
    w0 = np.zeros(3)
    # -2*0.16*9 + 2*0.0064*1 = -2.8672 ; 0.16*9 - 0.0064*1 = 1.4336
    assert np.allclose(m.f(x, None, w0), [-2.8672, 1.4336], atol=1e-15)
    assert np.allclose(m.h(x, None, np.array([0.0, 0.0, 0.05])), [4.05])
    assert np.allclose(m.jac_f_x(x, None, w0), [[-1.92, 0.0128], [0.96, -0.0064]])
    assert np.allclose(m.jac_f_w(x, None, w0), [[1, 0, 0], [0, 1, 0]])
    assert np.allclose(m.jac_h_x(x, None, w0), [[1.0, 1.0]])
    assert np.allclose(m.jac_h_w(x, None, w0), [[0, 0, 1]])
    assert m.output_affine
    assert (m.n, m.m, m.q, m.p) == (2, 0, 3, 1)
    assert np.array_equal(m.X, [[0.1, 5.0], [0.1, 5.0]])
    assert np.array_equal(m.W, [[-0.1, 0.1]] * 3)


def test_model_registry():
    m = get_model("batch_reactor")
    assert m.name == "batch_reactor"
    with pytest.raises(ConfigurationError):
        get_model("no_such_model")


def test_dimension_validation():
    with pytest.raises(ConfigurationError):
        SystemModel(0, 0, 1, 1, lambda x, u, w: x, lambda x, u, w: x)


# ---------------------------------------------------------------------------
# piecewise-constant signals

def test_signal_eval_boundaries():
    sig = PiecewiseSignal(0.0, 0.01, np.arange(10.0).reshape(10, 1))
    assert sig.eval(0.0)[0] == 0.0
    assert sig.eval(0.005)[0] == 0.0
    assert sig.eval(0.01)[0] == 1.0          # right-continuous at the seam
    assert sig.eval(0.03 - 1e-12)[0] == 3.0  # float dust snaps to the seam
    assert sig.eval(0.0999999999)[0] == 9.0
    assert sig.end == pytest.approx(0.1)
    with pytest.raises(DomainError):
        sig.eval(0.1)
    with pytest.raises(DomainError):
        sig.eval(-1e-6)
    assert sig.piece_index(0.07) == 7


def test_signal_accumulated_grid_times():
    # times built by repeated addition carry representation error ~1e-16*k
    sig = PiecewiseSignal(0.0, 0.1, np.arange(100.0).reshape(100, 1))
    t = 0.0
    for k in range(100):
        assert sig.eval(t)[0] == float(k)
        t += 0.1


def test_signal_slice():
    sig = PiecewiseSignal(0.0, 0.01, np.arange(20.0).reshape(20, 1))
    sub = sig.slice(0.05, 0.12)
    assert sub.t0 == 0.0 and sub.n_pieces == 7
    assert sub.values[0, 0] == 5.0 and sub.values[-1, 0] == 11.0
    kept = sig.slice(0.05, 0.12, rebase=False)
    assert kept.t0 == 0.05
    with pytest.raises(DomainError):
        sig.slice(0.0, 0.21)
    with pytest.raises(ConfigurationError):
        sig.slice(0.005, 0.05)


def test_signal_validation():
    with pytest.raises(ConfigurationError):
        PiecewiseSignal(0.0, 0.01, np.zeros(5))
    with pytest.raises(ConfigurationError):
        PiecewiseSignal(0.0, 0.0, np.zeros((5, 1)))
    z = zero_signal(3, 0.1, 4)
    assert z.values.shape == (4, 3) and not z.values.any()


def test_as_grid_index():
    assert as_grid_index(0.3, 0.01) == 30
    assert as_grid_index(3 * 0.1, 0.01) == 30   # 0.30000000000000004
    assert as_grid_index(0.0, 0.01) == 0
    with pytest.raises(ConfigurationError):
        as_grid_index(0.305, 0.01)


# ---------------------------------------------------------------------------
# file-based polynomial models

REACTOR_SPEC = {
    "name": "reactor_from_file",
    "state_dim": 2, "dist_dim": 3, "output_dim": 1,
    "f": [
        [{"coeff": -0.32, "x_exp": [2, 0]}, {"coeff": 0.0128, "x_exp": [0, 1]},
         {"coeff": 1.0, "w_exp": [1, 0, 0]}],
        [{"coeff": 0.16, "x_exp": [2, 0]}, {"coeff": -0.0064, "x_exp": [0, 1]},
         {"coeff": 1.0, "w_exp": [0, 1, 0]}],
    ],
    "h": [
        [{"coeff": 1.0, "x_exp": [1, 0]}, {"coeff": 1.0, "x_exp": [0, 1]},
         {"coeff": 1.0, "w_exp": [0, 0, 1]}],
    ],
    "output_affine": True,
    "X": [[0.1, 5.0], [0.1, 5.0]],
    "W": [[-0.1, 0.1], [-0.1, 0.1], [-0.1, 0.1]],
}


def test_polynomial_model_matches_builtin():
    filed = model_from_dict(REACTOR_SPEC)
    built = batch_reactor()
    rng = SplitMix64(7)
    for _ in range(25):
        x = 0.1 + 4.9 * rng.uniforms((2,))
        w = -0.1 + 0.2 * rng.uniforms((3,))
        assert np.abs(filed.f(x, None, w) - built.f(x, None, w)).max() < 1e-13
        assert np.abs(filed.h(x, None, w) - built.h(x, None, w)).max() < 1e-13
        assert np.abs(filed.jac_f_x(x, None, w) - built.jac_f_x(x, None, w)).max() < 1e-13
        assert np.abs(filed.jac_f_w(x, None, w) - built.jac_f_w(x, None, w)).max() < 1e-13
        assert np.abs(filed.jac_h_x(x, None, w) - built.jac_h_x(x, None, w)).max() < 1e-13
    assert filed.output_affine
    assert np.array_equal(filed.X, built.X)


def test_polynomial_model_round_trip(tmp_path):
    from mhect import load_model
    path = tmp_path / "reactor.json"
    path.write_text(json.dumps(REACTOR_SPEC))
    filed = load_model(str(path))
    assert filed.name == "reactor_from_file"
    x = np.array([2.0, 0.5])
    assert np.allclose(filed.f(x, None, np.zeros(3)),
                       batch_reactor().f(x, None, np.zeros(3)))


def test_polynomial_model_validation():
    bad = dict(REACTOR_SPEC)
    bad["input_dim"] = 1
    with pytest.raises(ConfigurationError):
        model_from_dict(bad)

    quadratic_output = dict(REACTOR_SPEC)
    quadratic_output["h"] = [[{"coeff": 1.0, "x_exp": [2, 0]}]]
    with pytest.raises(ConfigurationError):
        model_from_dict(quadratic_output)

    missing = {k: v for k, v in REACTOR_SPEC.items() if k != "state_dim"}
    with pytest.raises(ConfigurationError):
        model_from_dict(missing)

    neg_exp = dict(REACTOR_SPEC)
    neg_exp["f"] = [[{"coeff": 1.0, "x_exp": [-1, 0]}], [{"coeff": 1.0}]]
    with pytest.raises(ConfigurationError):
        model_from_dict(neg_exp)
