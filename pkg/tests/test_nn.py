"""Core network engine: layouts, init, forward, losses, exact gradients."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reinit_lab.errors import ConfigurationError, DataError, NumericalError, ShapeError
from reinit_lab.nn import (
    FrozenNormLayer,
    InitDistribution,
    NetworkSpec,
    ParamVector,
    activations_after_block,
    block_norms,
    build_layout,
    forward,
    init_params,
    kl_divergence,
    log_softmax,
    loss_and_grad,
    loss_grad_logits,
    softmax,
    softmax_cross_entropy,
    weight_norm,
)
from conftest import fd_check


def manual_forward(spec, params, x):
    """Loop-and-dot reference forward pass, no vectorized matmul."""
    views = []
    segs = params.layout.segments
    for lid in range(spec.num_layers):
        wseg, bseg = segs[2 * lid], segs[2 * lid + 1]
        w = params.values[wseg.offset : wseg.offset + wseg.length].reshape(wseg.fan_in, wseg.fan_out)
        b = params.values[bseg.offset : bseg.offset + bseg.length]
        views.append((w, b))
    out = np.zeros((x.shape[0], spec.num_classes))
    for r in range(x.shape[0]):
        h = x[r].astype(np.float64)
        for lid, (w, b) in enumerate(views):
            z = np.array([sum(h[i] * w[i, j] for i in range(w.shape[0])) + b[j] for j in range(w.shape[1])])
            h = np.maximum(z, 0) if lid != spec.num_layers - 1 else z
        out[r] = h
    return out


def test_layout_tiles_the_vector():
    spec = NetworkSpec(input_dim=4, hidden_dims=(5, 6), num_classes=3, block_boundaries=(1, 2))
    layout = build_layout(spec)
    assert layout.total_len == (4 * 5 + 5) + (5 * 6 + 6) + (6 * 3 + 3)
    assert layout.num_blocks == 3
    assert [layout.block_of(i) for i in range(3)] == [1, 2, 3]
    covered = np.zeros(layout.total_len, dtype=bool)
    for b in range(1, 4):
        idx = layout.block_param_indices(b)
        assert not covered[idx].any()
        covered[idx] = True
    assert covered.all()


def test_layout_single_block_by_default():
    spec = NetworkSpec(input_dim=4, hidden_dims=(5, 6), num_classes=3)
    layout = build_layout(spec)
    assert layout.num_blocks == 1
    assert layout.last_layer_of_block(1) == 2


def test_spec_rejects_bad_boundaries():
    with pytest.raises(ConfigurationError):
        NetworkSpec(input_dim=4, hidden_dims=(5,), num_classes=3, block_boundaries=(2,))
    with pytest.raises(ConfigurationError):
        NetworkSpec(input_dim=4, hidden_dims=(5, 6), num_classes=3, block_boundaries=(2, 1))
    with pytest.raises(ConfigurationError):
        NetworkSpec(input_dim=0, hidden_dims=(5,), num_classes=3)


def test_spec_dict_round_trip():
    spec = NetworkSpec(input_dim=7, hidden_dims=(9, 4), num_classes=5, block_boundaries=(2,))
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_init_is_deterministic_and_bounded():
    spec = NetworkSpec(input_dim=30, hidden_dims=(40,), num_classes=10)
    a = init_params(spec, InitDistribution(seed=123))
    b = init_params(spec, InitDistribution(seed=123))
    c = init_params(spec, InitDistribution(seed=124))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert a.dtype == np.float32
    for seg in a.layout.segments:
        chunk = a.values[seg.offset : seg.offset + seg.length]
        if seg.role == "bias":
            assert np.all(chunk == 0)
        else:
            bound = 1.0 / math.sqrt(seg.fan_in)
            assert np.all(np.abs(chunk) <= bound)
            # a uniform draw this size should fill most of the interval
            assert chunk.max() > 0.8 * bound and chunk.min() < -0.8 * bound


def test_init_weight_distribution_moments():
    spec = NetworkSpec(input_dim=100, hidden_dims=(500,), num_classes=10)
    params = init_params(spec, InitDistribution(seed=5), dtype=np.float64)
    wseg = params.layout.segments[0]
    w = params.values[wseg.offset : wseg.offset + wseg.length]
    bound = 1.0 / math.sqrt(100)
    # uniform(-b, b): mean 0, variance b^2/3
    assert abs(w.mean()) < 0.01 * bound
    assert w.var() == pytest.approx(bound * bound / 3, rel=0.05)


def test_param_vector_validation():
    spec = NetworkSpec(input_dim=4, hidden_dims=(5,), num_classes=3)
    layout = build_layout(spec)
    with pytest.raises(ShapeError):
        ParamVector(np.zeros(layout.total_len - 1), layout)
    bad = np.zeros(layout.total_len)
    bad[3] = np.nan
    with pytest.raises(NumericalError):
        ParamVector(bad, layout)


def test_forward_matches_manual_oracle():
    spec = NetworkSpec(input_dim=2, hidden_dims=(3,), num_classes=2)
    params = init_params(spec, InitDistribution(seed=11), dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(0))
    x = rng.normal(size=(6, 2))
    got = forward(spec, params, x)
    want = manual_forward(spec, params, x)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_forward_shape_errors():
    spec = NetworkSpec(input_dim=4, hidden_dims=(5,), num_classes=3)
    params = init_params(spec, InitDistribution(seed=1))
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros((2, 5)))
    with pytest.raises(ShapeError):
        forward(spec, params, np.zeros(4))


def test_softmax_rows_sum_to_one_and_survive_extremes():
    z = np.array([[1e4, 0.0, -1e4], [3.0, 3.0, 3.0]])
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p[1], [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(z)), p, atol=1e-12)


def test_cross_entropy_uniform_logits_is_log_c():
    for c in (2, 5, 10):
        z = np.zeros((4, c))
        y = np.arange(4) % c
        assert softmax_cross_entropy(z, y) == pytest.approx(math.log(c), abs=1e-12)


def test_cross_entropy_matches_elementwise_oracle():
    rng = np.random.Generator(np.random.PCG64(3))
    z = rng.normal(size=(8, 5), scale=4.0)
    y = rng.integers(0, 5, size=8)
    want = 0.0
    for r in range(8):
        e = np.exp(z[r] - z[r].max())
        p = e / e.sum()
        want -= math.log(p[y[r]])
    want /= 8
    assert softmax_cross_entropy(z, y) == pytest.approx(want, rel=1e-12)


def test_cross_entropy_rejects_bad_labels():
    z = np.zeros((3, 4))
    with pytest.raises(DataError):
        softmax_cross_entropy(z, np.array([0, 1, 4]))
    with pytest.raises(DataError):
        softmax_cross_entropy(z, np.array([0, -1, 2]))


def test_kl_matches_elementwise_oracle():
    rng = np.random.Generator(np.random.PCG64(9))
    p = rng.dirichlet(np.ones(6), size=5)
    z = rng.normal(size=(5, 6), scale=2.0)
    q = softmax(z)
    want = np.mean([sum(p[r, j] * math.log(p[r, j] / q[r, j]) for j in range(6) if p[r, j] > 0) for r in range(5)])
    assert kl_divergence(p, z) == pytest.approx(want, rel=1e-12)


def test_kl_zero_when_teacher_equals_student():
    z = np.array([[0.3, -1.2, 2.0], [5.0, 5.0, -5.0]])
    p = softmax(z)
    assert kl_divergence(p, z) == 0.0


def test_kl_ignores_zero_probability_teacher_entries():
    p = np.array([[0.5, 0.5, 0.0]])
    z = np.array([[0.0, 0.0, -100.0]])
    q = softmax(z)
    want = 0.5 * math.log(0.5 / q[0, 0]) + 0.5 * math.log(0.5 / q[0, 1])
    assert kl_divergence(p, z) == pytest.approx(want, rel=1e-12)


def test_kl_rejects_malformed_teacher_rows():
    z = np.zeros((2, 3))
    with pytest.raises(DataError):
        kl_divergence(np.array([[0.5, 0.4, 0.2], [1.0, 0.0, 0.0]]), z)
    with pytest.raises(DataError):
        kl_divergence(np.array([[0.5, 0.6, -0.1], [1.0, 0.0, 0.0]]), z)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_kl_nonnegative_property(seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    p = rng.dirichlet(np.ones(4) * rng.uniform(0.2, 5.0), size=3)
    z = rng.normal(size=(3, 4), scale=rng.uniform(0.1, 10.0))
    assert kl_divergence(p, z) >= 0.0


def test_gradient_matches_finite_differences(tiny_net):
    spec, params = tiny_net
    rng = np.random.Generator(np.random.PCG64(21))
    x = rng.normal(size=(7, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=7)
    assert fd_check(spec, params, x, y) < 1e-6


def test_gradient_with_distillation_matches_finite_differences(tiny_net):
    spec, params = tiny_net
    rng = np.random.Generator(np.random.PCG64(22))
    x = rng.normal(size=(7, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=7)
    teacher = rng.dirichlet(np.ones(spec.num_classes), size=7)
    assert fd_check(spec, params, x, y, teacher=teacher, beta=1.7) < 1e-6


def test_gradient_through_frozen_norm(tiny_net):
    spec, _ = tiny_net
    spec = NetworkSpec(spec.input_dim, spec.hidden_dims, spec.num_classes, block_boundaries=(1,))
    params = init_params(spec, InitDistribution(seed=7), dtype=np.float64)
    fn = FrozenNormLayer(insert_after_block=1, mean=np.full(5, 0.3), std=np.full(5, 1.7))
    rng = np.random.Generator(np.random.PCG64(23))
    x = rng.normal(size=(6, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=6)
    assert fd_check(spec, params, x, y, frozen_norm=fn) < 1e-6


def test_distill_loss_is_additive_in_beta(tiny_net):
    spec, params = tiny_net
    rng = np.random.Generator(np.random.PCG64(31))
    x = rng.normal(size=(9, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=9)
    teacher = rng.dirichlet(np.ones(spec.num_classes), size=9)
    base, _, logits = loss_grad_logits(spec, params, x, y)
    kl = kl_divergence(teacher, logits)
    for beta in (0.5, 1.0, 2.0):
        combined, _ = loss_and_grad(spec, params, x, y, teacher=teacher, beta_distill=beta)
        assert abs(combined - base - beta * kl) < 1e-12


def test_zero_beta_ignores_teacher_bitwise(tiny_net):
    spec, params = tiny_net
    rng = np.random.Generator(np.random.PCG64(32))
    x = rng.normal(size=(5, spec.input_dim))
    y = rng.integers(0, spec.num_classes, size=5)
    teacher = rng.dirichlet(np.ones(spec.num_classes), size=5)
    l0, g0 = loss_and_grad(spec, params, x, y)
    l1, g1 = loss_and_grad(spec, params, x, y, teacher=teacher, beta_distill=0.0)
    assert l0 == l1
    assert np.array_equal(g0, g1)


def test_frozen_norm_forward_standardizes():
    spec = NetworkSpec(input_dim=3, hidden_dims=(4, 4), num_classes=2, block_boundaries=(1,))
    params = init_params(spec, InitDistribution(seed=2), dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(4))
    x = rng.normal(size=(50, 3))
    acts = activations_after_block(spec, params, x, block=1)
    fn = FrozenNormLayer(1, acts.mean(axis=0), np.maximum(acts.std(axis=0), 1e-5))
    normed = activations_after_block(spec, params, x, block=1, frozen_norm=fn)
    np.testing.assert_allclose(normed.mean(axis=0), 0.0, atol=1e-10)
    # plain logits shift by the same transform end to end
    with_fn = forward(spec, params, x, frozen_norm=fn)
    manual = forward(spec, params, x)
    assert not np.allclose(with_fn, manual)


def test_frozen_norm_rejects_nonpositive_std():
    with pytest.raises(NumericalError):
        FrozenNormLayer(1, np.zeros(3), np.array([1.0, 0.0, 1.0]))


def test_weight_norm_matches_float64_oracle():
    spec = NetworkSpec(input_dim=6, hidden_dims=(8,), num_classes=4)
    params = init_params(spec, InitDistribution(seed=13))
    want = math.sqrt(sum(float(v) ** 2 for v in params.values))
    assert weight_norm(params) == pytest.approx(want, rel=1e-12)


def test_block_norms_partition_total_norm():
    spec = NetworkSpec(input_dim=6, hidden_dims=(8, 8), num_classes=4, block_boundaries=(1, 2))
    params = init_params(spec, InitDistribution(seed=14))
    norms = block_norms(params)
    assert norms.shape == (3,)
    assert math.sqrt(float((norms**2).sum())) == pytest.approx(weight_norm(params), rel=1e-12)
