import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import eivreg as ev
from eivreg.model_core import EigenStructure

INTERCEPT = ev.ModelKind.INTERCEPT
NO_INTERCEPT = ev.ModelKind.NO_INTERCEPT


def dsb():
    return ev.ObservedData(x1=[[0.0, 1.0, 2.0]], x2=[[1.0, 3.0, 5.0]])


def dsa():
    return ev.ObservedData(x1=[[1.0, 2.0, 3.0]], x2=[[2.0, 4.0, 6.0]])


def dsb_eigenstructure():
    return ev.signal_eigenstructure(ev.scatter_matrix(dsb(), INTERCEPT), p=1)


def noisy_instance(seed=42, index=0, kind=INTERCEPT):
    truth = ev.random_truth(seed, index, kind)
    return truth, ev.generate_dataset(truth)


# ---------------------------------------------------------------------------
# slope and intercept
# ---------------------------------------------------------------------------

def test_estimate_b_golden():
    np.testing.assert_allclose(ev.estimate_b(dsb_eigenstructure()), [[2.0]], atol=1e-12)


def test_estimate_b_identity_basis_gives_zero():
    es = EigenStructure.from_decomposition(
        np.diag([3.0, 2.0, 1.0]), [3.0, 2.0, 1.0], np.eye(3), p=2
    )
    np.testing.assert_array_equal(ev.estimate_b(es), np.zeros((1, 2)))


def test_estimate_b_invariant_to_signal_basis_rotation():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(5, 11))
    w = a @ a.T
    p = 2
    es = ev.signal_eigenstructure(w, p)
    o, _ = np.linalg.qr(rng.normal(size=(p, p)))
    rotated = es.g.copy()
    rotated[:, :p] = rotated[:, :p] @ o
    es_rot = EigenStructure.from_decomposition(w, es.eigenvalues, rotated, p)
    np.testing.assert_allclose(ev.estimate_b(es), ev.estimate_b(es_rot), atol=1e-9)


def test_estimate_b_rejects_ill_conditioned_block():
    es = EigenStructure.from_decomposition(
        np.diag([0.0, 2.0]), [2.0, 0.0], np.eye(2)[:, ::-1], p=1
    )
    with pytest.raises(ev.UnidentifiableError):
        ev.estimate_b(es)


def test_estimate_alpha_no_intercept_is_zero():
    _, data = noisy_instance(kind=NO_INTERCEPT)
    alpha = ev.estimate_alpha(np.ones((data.r, data.p)), data, NO_INTERCEPT)
    np.testing.assert_array_equal(alpha, np.zeros(data.r))


def test_estimate_alpha_golden():
    np.testing.assert_allclose(
        ev.estimate_alpha([[2.0]], dsb(), INTERCEPT), [1.0], atol=1e-12
    )


def test_estimate_alpha_constant_rows_zero_slope():
    data = ev.ObservedData(x1=[[1.0, 2.0, 3.0]], x2=[[4.0, 4.0, 4.0]])
    np.testing.assert_allclose(
        ev.estimate_alpha(np.zeros((1, 1)), data, INTERCEPT), [4.0], atol=1e-12
    )


# ---------------------------------------------------------------------------
# mean vectors: corrected, projection, legacy
# ---------------------------------------------------------------------------

def test_u1_corrected_golden_intercept():
    u1 = ev.estimate_u1_corrected(dsb(), dsb_eigenstructure(), INTERCEPT)
    np.testing.assert_allclose(u1, [[0.0, 1.0, 2.0]], atol=1e-12)


def test_u1_corrected_no_intercept_recovers_collinear():
    data = dsa()
    es = ev.signal_eigenstructure(ev.scatter_matrix(data, NO_INTERCEPT), p=1)
    np.testing.assert_allclose(
        ev.estimate_u1_corrected(data, es, NO_INTERCEPT), [[1.0, 2.0, 3.0]], atol=1e-12
    )


def test_corrected_minus_legacy_is_mean_shift():
    _, data = noisy_instance(seed=1, index=4)
    es = ev.signal_eigenstructure(ev.scatter_matrix(data, INTERCEPT), data.p)
    corrected = ev.estimate_u1_corrected(data, es, INTERCEPT)
    legacy = ev.legacy_u1(data, es, INTERCEPT)
    shift = np.broadcast_to(data.x1.mean(axis=1, keepdims=True), data.x1.shape)
    np.testing.assert_allclose(corrected - legacy, shift, atol=1e-12, rtol=0)


def test_u1_projection_golden():
    u1 = ev.estimate_u1_projection(dsb(), [1.0], [[2.0]])
    np.testing.assert_allclose(u1, [[0.0, 1.0, 2.0]], atol=1e-12)


def test_u1_projection_zero_slope_returns_x1():
    _, data = noisy_instance(seed=9, index=2)
    u1 = ev.estimate_u1_projection(data, np.zeros(data.r), np.zeros((data.r, data.p)))
    np.testing.assert_allclose(u1, data.x1, atol=1e-12)


@pytest.mark.parametrize("kind", [INTERCEPT, NO_INTERCEPT])
def test_projection_equals_corrected(kind):
    for index in range(10):
        _, data = noisy_instance(seed=77, index=index, kind=kind)
        result = ev.fit(data, ev.ModelSpec(kind=kind))
        projected = ev.estimate_u1_projection(data, result.alpha_hat, result.b_hat)
        scale = max(1.0, float(np.max(np.abs(result.u1_hat))))
        np.testing.assert_allclose(projected, result.u1_hat, atol=1e-9 * scale, rtol=0)


def test_legacy_golden_intercept_shows_defect():
    legacy = ev.legacy_u1(dsb(), dsb_eigenstructure(), INTERCEPT)
    np.testing.assert_allclose(legacy, [[-1.0, 0.0, 1.0]], atol=1e-12)


def test_legacy_correct_without_intercept():
    data = dsa()
    es = ev.signal_eigenstructure(ev.scatter_matrix(data, NO_INTERCEPT), p=1)
    np.testing.assert_allclose(
        ev.legacy_u1(data, es, NO_INTERCEPT), [[1.0, 2.0, 3.0]], atol=1e-12
    )


def test_no_intercept_corrected_and_legacy_coincide():
    for index in range(10):
        _, data = noisy_instance(seed=13, index=index, kind=NO_INTERCEPT)
        es = ev.signal_eigenstructure(ev.scatter_matrix(data, NO_INTERCEPT), data.p)
        corrected = ev.estimate_u1_corrected(data, es, NO_INTERCEPT)
        legacy = ev.legacy_u1(data, es, NO_INTERCEPT)
        np.testing.assert_allclose(corrected, legacy, atol=1e-12, rtol=0)


def test_legacy_means_routes_like_fit():
    _, data = noisy_instance(seed=21, index=1)
    spec = ev.ModelSpec(kind=INTERCEPT)
    es = ev.signal_eigenstructure(ev.scatter_matrix(data, INTERCEPT), data.p)
    np.testing.assert_array_equal(
        ev.legacy_means(data, spec), ev.legacy_u1(data, es, INTERCEPT)
    )


# ---------------------------------------------------------------------------
# response means and residuals
# ---------------------------------------------------------------------------

def test_estimate_u2_golden():
    np.testing.assert_allclose(
        ev.estimate_u2([[0.0, 1.0, 2.0]], [1.0], [[2.0]]), [[1.0, 3.0, 5.0]], atol=1e-12
    )


def test_estimate_u2_zero_slope_repeats_alpha():
    u2 = ev.estimate_u2(np.zeros((2, 4)), [3.0, -1.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(u2, [[3.0] * 4, [-1.0] * 4])


def test_estimate_u2_identity_map():
    u1 = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ev.estimate_u2(u1, np.zeros(2), np.eye(2)), u1)


def test_residual_zero_at_exact_fit():
    res = ev.residual_matrix(dsb(), [1.0], [[2.0]], [[0.0, 1.0, 2.0]])
    np.testing.assert_allclose(res, np.zeros((2, 3)), atol=1e-12)


def test_residual_direct_substitution():
    _, data = noisy_instance(seed=2, index=0)
    res = ev.residual_matrix(
        data, np.zeros(data.r), np.zeros((data.r, data.p)), data.x1
    )
    np.testing.assert_array_equal(res[: data.p], np.zeros((data.p, data.n)))
    np.testing.assert_array_equal(res[data.p :], data.x2)


def test_glse_residual_zero_slope():
    _, data = noisy_instance(seed=3, index=1)
    alpha = np.arange(float(data.r))
    q = ev.glse_residual(data, alpha, np.zeros((data.r, data.p)))
    np.testing.assert_allclose(q, data.x2 - alpha[:, None], atol=1e-12)


def test_glse_residual_exact_relation_vanishes():
    q = ev.glse_residual(dsb(), [1.0], [[2.0]])
    np.testing.assert_allclose(q, np.zeros((1, 3)), atol=1e-12)


def test_glse_residual_scalar_value():
    data = ev.ObservedData(x1=[[1.0]], x2=[[7.0]])
    q = ev.glse_residual(data, [0.0], [[2.0]])
    np.testing.assert_allclose(q, [[np.sqrt(5.0)]], atol=1e-12)


def test_residual_pair_consistency():
    _, data = noisy_instance(seed=30, index=3)
    result = ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    pair = ev.residual_pair(data, result.alpha_hat, result.b_hat, result.u1_hat)
    assert pair.r_matrix.shape == (data.p + data.r, data.n)
    assert pair.q_matrix.shape == (data.r, data.n)
    assert float(np.sum(pair.r_matrix**2)) == pytest.approx(result.olse_objective)
    assert float(np.sum(pair.q_matrix**2)) == pytest.approx(result.glse_objective)


def test_residual_scale_examples():
    assert ev.residual_scale(np.zeros((3, 4)), 2, 1, 4) == 0.0
    assert ev.residual_scale(np.ones((3, 5)), 1, 2, 5) == pytest.approx(1.0)
    result = ev.fit(dsb(), ev.ModelSpec(kind=INTERCEPT))
    assert result.residual_scale == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# the full fit
# ---------------------------------------------------------------------------

def test_fit_golden_intercept():
    result = ev.fit(dsb(), ev.ModelSpec(kind=INTERCEPT))
    np.testing.assert_allclose(result.b_hat, [[2.0]], atol=1e-10)
    np.testing.assert_allclose(result.alpha_hat, [1.0], atol=1e-10)
    np.testing.assert_allclose(result.u1_hat, [[0.0, 1.0, 2.0]], atol=1e-10)
    assert result.olse_objective == pytest.approx(0.0, abs=1e-10)
    assert result.kind is INTERCEPT
    assert not result.diagnostics.degenerate


def test_fit_golden_no_intercept():
    result = ev.fit(dsa(), ev.ModelSpec(kind=NO_INTERCEPT))
    np.testing.assert_allclose(result.b_hat, [[2.0]], atol=1e-10)
    np.testing.assert_array_equal(result.alpha_hat, [0.0])
    np.testing.assert_allclose(result.u1_hat, [[1.0, 2.0, 3.0]], atol=1e-10)


def test_fit_u2_consistency_invariant():
    for kind in (INTERCEPT, NO_INTERCEPT):
        _, data = noisy_instance(seed=55, index=1, kind=kind)
        result = ev.fit(data, ev.ModelSpec(kind=kind))
        expected = result.alpha_hat[:, None] + result.b_hat @ result.u1_hat
        np.testing.assert_allclose(result.u2_hat, expected, atol=1e-12, rtol=0)


def test_fit_identity_sigma0_matches_plain_path():
    _, data = noisy_instance(seed=14, index=6)
    plain = ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    white = ev.fit(data, ev.ModelSpec(kind=INTERCEPT, sigma0=np.eye(data.p + data.r)))
    np.testing.assert_allclose(white.b_hat, plain.b_hat, atol=1e-10)
    np.testing.assert_allclose(white.alpha_hat, plain.alpha_hat, atol=1e-10)
    np.testing.assert_allclose(white.u1_hat, plain.u1_hat, atol=1e-10)
    assert white.olse_objective == pytest.approx(plain.olse_objective, abs=1e-10)
    assert white.glse_objective == pytest.approx(plain.glse_objective, abs=1e-10)


def random_spd(rng, m, lo=0.5, hi=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    return (q * rng.uniform(lo, hi, m)) @ q.T


@pytest.mark.parametrize("kind", [INTERCEPT, NO_INTERCEPT])
def test_fit_sigma0_noise_free_recovery(kind):
    rng = np.random.default_rng(100)
    truth = ev.random_truth(100, 0, kind, p=2, r=2, n=25, sigma=0.0)
    sigma0 = random_spd(rng, 4)
    data = ev.generate_dataset(truth)
    result = ev.fit(data, ev.ModelSpec(kind=kind, sigma0=sigma0))
    np.testing.assert_allclose(result.b_hat, truth.b, atol=1e-8)
    np.testing.assert_allclose(result.alpha_hat, truth.alpha, atol=1e-8)
    np.testing.assert_allclose(result.u1_hat, truth.u1, atol=1e-8)


def test_fit_validation_errors():
    with pytest.raises(ev.ValidationError):
        ev.fit(ev.ObservedData(x1=[[1.0]], x2=[[2.0]]), ev.ModelSpec(kind=INTERCEPT))
    data = ev.ObservedData(x1=[[1.0, 2.0], [3.0, 4.0]], x2=[[5.0, 6.0]])
    with pytest.raises(ev.ValidationError):
        # intercept model needs n >= p + 1
        ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    with pytest.raises(ev.ValidationError):
        ev.fit(dsb(), ev.ModelSpec(kind=INTERCEPT, sigma0=np.eye(3)))


def test_fit_unidentifiable_constant_predictor():
    data = ev.ObservedData(x1=[[1.0, 1.0, 1.0]], x2=[[1.0, 2.0, 3.0]])
    with pytest.raises(ev.UnidentifiableError):
        ev.fit(data, ev.ModelSpec(kind=INTERCEPT))


# ---------------------------------------------------------------------------
# optimality and equivariance properties
# ---------------------------------------------------------------------------

def test_olse_minimality_under_mean_perturbations():
    _, data = noisy_instance(seed=17, index=5)
    result = ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    base = result.olse_objective
    slack = 1e-12 * max(1.0, base)
    scale = 1e-3 * np.linalg.norm(result.u1_hat)
    rng = np.random.default_rng(99)
    for _ in range(100):
        delta = rng.normal(size=result.u1_hat.shape) * scale
        perturbed = ev.residual_matrix(
            data, result.alpha_hat, result.b_hat, result.u1_hat + delta
        )
        assert float(np.sum(perturbed**2)) >= base - slack


def test_glse_stationarity_at_fit():
    _, data = noisy_instance(seed=23, index=7)
    result = ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    gradient = ev.glse_gradient_check(data, result.alpha_hat, result.b_hat, step=1e-6)
    assert np.max(np.abs(gradient)) <= 1e-5 * max(1.0, result.glse_objective)


def test_u1_corrected_invariant_to_basis_rotation():
    _, data = noisy_instance(seed=31, index=2)
    es = ev.signal_eigenstructure(ev.scatter_matrix(data, INTERCEPT), data.p)
    rng = np.random.default_rng(4)
    o, _ = np.linalg.qr(rng.normal(size=(data.p, data.p)))
    rotated = es.g.copy()
    rotated[:, : data.p] = rotated[:, : data.p] @ o
    es_rot = EigenStructure.from_decomposition(es.w, es.eigenvalues, rotated, data.p)
    np.testing.assert_allclose(
        ev.estimate_u1_corrected(data, es, INTERCEPT),
        ev.estimate_u1_corrected(data, es_rot, INTERCEPT),
        atol=1e-9,
    )


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10.0))
def test_fit_scale_equivariance(c):
    _, data = noisy_instance(seed=41, index=3)
    base = ev.fit(data, ev.ModelSpec(kind=INTERCEPT))
    scaled_data = ev.ObservedData(x1=c * data.x1, x2=c * data.x2)
    scaled = ev.fit(scaled_data, ev.ModelSpec(kind=INTERCEPT))
    np.testing.assert_allclose(scaled.b_hat, base.b_hat, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(scaled.alpha_hat, c * base.alpha_hat, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(scaled.u1_hat, c * base.u1_hat, rtol=1e-9, atol=1e-9)


def test_slope_gram_identity():
    for index in range(10):
        _, data = noisy_instance(seed=67, index=index)
        es = ev.signal_eigenstructure(ev.scatter_matrix(data, INTERCEPT), data.p)
        b = ev.estimate_b(es)
        gram = b.T @ b
        inverse_g11 = np.linalg.solve(es.g11, np.eye(data.p))
        identity_form = inverse_g11.T @ inverse_g11 - np.eye(data.p)
        scale = max(1.0, float(np.max(np.abs(gram))))
        np.testing.assert_allclose(gram, identity_form, atol=1e-9 * scale, rtol=0)


def test_sigma0_roots_invert_each_other():
    rng = np.random.default_rng(6)
    s = random_spd(rng, 4)
    root, inv_root = ev.sigma0_symmetric_roots(s)
    np.testing.assert_allclose(root @ root, s, atol=1e-12)
    np.testing.assert_allclose(root @ inv_root, np.eye(4), atol=1e-12)
    with pytest.raises(ev.NotPositiveDefiniteError):
        ev.sigma0_symmetric_roots(np.diag([1.0, -1.0]))


def test_whiten_shapes_and_identity():
    _, data = noisy_instance(seed=71, index=0)
    white = ev.whiten(data, np.eye(data.p + data.r))
    np.testing.assert_allclose(white.stacked(), data.stacked(), atol=1e-12)
