"""Oracle tests for the Gaussian math layer.

Closed-form oracles: affine transforms, hand-computed products and updates,
direct mixture-moment sums, and scipy densities.
"""

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from mpslam.gaussmath import (
    DegenerateMixtureError,
    FactorizationError,
    GaussianBelief,
    ShapeError,
    UTParams,
    fuse_with_common_prior,
    gaussian_product,
    kf_predict,
    kf_update_stacked,
    moment_match,
    sigma_points,
    unscented_transform,
    wrap_angle,
)


def random_spd(rng, dim, scale=1.0):
    a = rng.standard_normal((dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def test_wrap_angle_interval():
    vals = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -3 * np.pi, 2 * np.pi, 7.0, -7.0])
    w = wrap_angle(vals)
    assert np.all(w > -np.pi - 1e-15)
    assert np.all(w <= np.pi + 1e-15)
    assert w[1] == pytest.approx(np.pi)
    assert w[2] == pytest.approx(np.pi)  # -pi maps to the closed end
    assert np.allclose(np.exp(1j * w), np.exp(1j * vals))


def test_belief_validation():
    with pytest.raises(ShapeError):
        GaussianBelief(np.zeros(2), np.zeros((3, 3)))
    with pytest.raises(FactorizationError):
        GaussianBelief(np.zeros(2), np.array([[1.0, 0.5], [-0.5, 1.0]]))
    with pytest.raises(FactorizationError):
        GaussianBelief(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))
    g = GaussianBelief(np.zeros(2), np.zeros((2, 2)))  # pinned belief is legal
    assert g.dim == 2


def test_sigma_points_unit_1d():
    # lambda = 0 makes the 1-D unit-variance points {0, +1, -1}.
    g = GaussianBelief([0.0], [[1.0]])
    sp = sigma_points(g, UTParams(alpha=1.0, beta=2.0, kappa=0.0))
    assert np.allclose(np.sort(sp.points.ravel()), [-1.0, 0.0, 1.0])
    assert sp.mean_weights.sum() == pytest.approx(1.0)


def test_sigma_points_reconstruct_moments():
    rng = np.random.default_rng(7)
    for dim in range(1, 7):
        for _ in range(5):
            g = GaussianBelief(rng.standard_normal(dim), random_spd(rng, dim))
            sp = sigma_points(g, UTParams())
            mean = sp.mean_weights @ sp.points
            assert np.allclose(mean, g.mean, atol=1e-10)
            d = sp.points - mean
            cov = (d.T * sp.cov_weights) @ d
            assert np.allclose(cov, g.cov, rtol=1e-9, atol=1e-12)


def test_sigma_points_zero_variance_directions():
    # A zero block collapses the corresponding points onto the mean.
    cov = np.diag([2.0, 0.0])
    g = GaussianBelief([1.0, -1.0], cov)
    sp = sigma_points(g, UTParams())
    assert np.allclose(sp.points[:, 1], -1.0)
    d = sp.points - g.mean
    assert np.allclose((d.T * sp.cov_weights) @ d, cov, atol=1e-12)


def test_unscented_transform_affine_exact():
    rng = np.random.default_rng(12)
    for _ in range(60):
        dim = rng.integers(1, 6)
        out = rng.integers(1, 5)
        g = GaussianBelief(rng.standard_normal(dim), random_spd(rng, dim))
        a = rng.standard_normal((out, dim))
        b = rng.standard_normal(out)
        mean, cov, cross = unscented_transform(g, lambda s: a @ s + b, UTParams())
        assert np.allclose(mean, a @ g.mean + b, atol=1e-10)
        assert np.allclose(cov, a @ g.cov @ a.T, atol=1e-10)
        assert np.allclose(cross, g.cov @ a.T, atol=1e-10)


def test_unscented_transform_square():
    # E[s^2] = 1 for N(0,1); the transform is exact for quadratics.
    g = GaussianBelief([0.0], [[1.0]])
    mean, _, _ = unscented_transform(g, lambda s: np.array([s[0] ** 2]), UTParams())
    assert mean[0] == pytest.approx(1.0, abs=1e-12)


def test_unscented_transform_angle_recentring():
    # Outputs straddling the branch cut near pi must not average to ~0.
    g = GaussianBelief([np.pi - 0.01], [[0.05 ** 2]])
    f = lambda s: np.array([float(wrap_angle(s[0]))])
    mean_raw, cov_raw, _ = unscented_transform(g, f)
    mean_fix, cov_fix, _ = unscented_transform(g, f, angle_dims=(0,))
    assert abs(float(wrap_angle(mean_fix[0] - (np.pi - 0.01)))) < 1e-9
    assert cov_fix[0, 0] == pytest.approx(0.05 ** 2, rel=1e-6)
    assert cov_raw[0, 0] > 10 * cov_fix[0, 0]  # unwrapped version is corrupted


def test_unscented_transform_output_dim_mismatch():
    g = GaussianBelief(np.zeros(2), np.eye(2))
    f = lambda s: np.zeros(2 if s[0] > 0 else 3)
    with pytest.raises(ShapeError):
        unscented_transform(g, f)


def test_moment_match_single_component_identity():
    g = GaussianBelief([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
    m = moment_match([(0.7, g)])
    assert np.allclose(m.mean, g.mean)
    assert np.allclose(m.cov, g.cov)


def test_moment_match_two_points():
    # Equal-weight means at +-1 with unit variances: cov = 1 + 1 = 2.
    ga = GaussianBelief([1.0], [[1.0]])
    gb = GaussianBelief([-1.0], [[1.0]])
    m = moment_match([(0.5, ga), (0.5, gb)])
    assert m.mean[0] == pytest.approx(0.0, abs=1e-12)
    assert m.cov[0, 0] == pytest.approx(2.0, rel=1e-12)


def test_moment_match_matches_direct_sums():
    rng = np.random.default_rng(3)
    for _ in range(40):
        dim = rng.integers(1, 5)
        n = rng.integers(1, 5)
        comps = []
        for _ in range(n):
            comps.append(
                (float(rng.uniform(0.05, 2.0)),
                 GaussianBelief(rng.standard_normal(dim), random_spd(rng, dim)))
            )
        m = moment_match(comps)
        w = np.array([c[0] for c in comps])
        w = w / w.sum()
        mean = sum(wi * c.mean for wi, (_, c) in zip(w, comps))
        cov = sum(
            wi * (c.cov + np.outer(c.mean - mean, c.mean - mean))
            for wi, (_, c) in zip(w, comps)
        )
        assert np.allclose(m.mean, mean, rtol=1e-12, atol=1e-13)
        assert np.allclose(m.cov, cov, rtol=1e-12, atol=1e-13)


def test_moment_match_zero_mass():
    g = GaussianBelief([0.0], [[1.0]])
    with pytest.raises(DegenerateMixtureError):
        moment_match([(0.0, g), (0.0, g)])


def test_gaussian_product_1d():
    a = GaussianBelief([0.0], [[1.0]])
    b = GaussianBelief([2.0], [[1.0]])
    p = gaussian_product([a, b])
    assert p.mean[0] == pytest.approx(1.0, abs=1e-12)
    assert p.cov[0, 0] == pytest.approx(0.5, rel=1e-12)


def test_gaussian_product_flat_factor():
    a = GaussianBelief([1.0, -1.0], np.diag([0.5, 0.25]))
    flat = GaussianBelief([100.0, 100.0], np.diag([1e12, 1e12]))
    p = gaussian_product([a, flat])
    assert np.allclose(p.mean, a.mean, atol=1e-6)
    assert np.allclose(p.cov, a.cov, rtol=1e-6)


def test_gaussian_product_identical_factors():
    rng = np.random.default_rng(5)
    g = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
    for k in (2, 3, 5):
        p = gaussian_product([g] * k)
        assert np.allclose(p.mean, g.mean, atol=1e-10)
        assert np.allclose(p.cov, g.cov / k, rtol=1e-9)


def test_gaussian_product_order_invariant():
    rng = np.random.default_rng(11)
    gs = [GaussianBelief(rng.standard_normal(2), random_spd(rng, 2)) for _ in range(4)]
    p1 = gaussian_product(gs)
    p2 = gaussian_product(gs[::-1])
    assert np.allclose(p1.mean, p2.mean, atol=1e-10)
    assert np.allclose(p1.cov, p2.cov, atol=1e-12)


def test_gaussian_product_singular_factor():
    g = GaussianBelief(np.zeros(2), np.zeros((2, 2)))
    with pytest.raises(FactorizationError):
        gaussian_product([g, g])


def _linear_update(g, h, r_cov, z):
    s = h @ g.cov @ h.T + r_cov
    k = g.cov @ h.T @ np.linalg.inv(s)
    mean = g.mean + k @ (z - h @ g.mean)
    cov = (np.eye(g.dim) - k @ h) @ g.cov
    return GaussianBelief(mean, 0.5 * (cov + cov.T))


def test_fuse_with_common_prior_matches_stacked_update():
    # Two separate linear updates of one prior, recombined, must equal the
    # single update with both measurement blocks stacked.
    rng = np.random.default_rng(31)
    for _ in range(20):
        g = GaussianBelief(rng.standard_normal(4), random_spd(rng, 4))
        h1 = rng.standard_normal((2, 4))
        h2 = rng.standard_normal((3, 4))
        r1 = random_spd(rng, 2, 0.5)
        r2 = random_spd(rng, 3, 0.5)
        z1 = rng.standard_normal(2)
        z2 = rng.standard_normal(3)
        p1 = _linear_update(g, h1, r1, z1)
        p2 = _linear_update(g, h2, r2, z2)
        fused = fuse_with_common_prior(g, [p1, p2])
        h = np.vstack([h1, h2])
        r = np.zeros((5, 5))
        r[:2, :2], r[2:, 2:] = r1, r2
        joint = _linear_update(g, h, r, np.concatenate([z1, z2]))
        assert np.allclose(fused.mean, joint.mean, atol=1e-8)
        assert np.allclose(fused.cov, joint.cov, atol=1e-8)


def test_fuse_with_common_prior_single_posterior_plain():
    rng = np.random.default_rng(32)
    g = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
    p = _linear_update(g, rng.standard_normal((2, 3)),
                       random_spd(rng, 2, 0.5), rng.standard_normal(2))
    fused = fuse_with_common_prior(g, [p])
    assert np.allclose(fused.mean, p.mean, atol=1e-10)
    assert np.allclose(fused.cov, p.cov, atol=1e-10)
    assert fuse_with_common_prior(g, []) is g


def test_fuse_with_common_prior_uninformative_posterior():
    # A posterior identical to the prior adds nothing, however many times.
    rng = np.random.default_rng(33)
    g = GaussianBelief(rng.standard_normal(3), random_spd(rng, 3))
    p = _linear_update(g, rng.standard_normal((2, 3)),
                       random_spd(rng, 2, 0.5), rng.standard_normal(2))
    fused = fuse_with_common_prior(g, [p, g, g, g])
    assert np.allclose(fused.mean, p.mean, atol=1e-9)
    assert np.allclose(fused.cov, p.cov, atol=1e-9)


def test_fuse_with_common_prior_angle_chart():
    # Posterior means a full turn apart are the same angle and must not
    # drag the fused mean.
    g = GaussianBelief([0.0, np.pi - 0.05], np.diag([1.0, 0.04]))
    p1 = GaussianBelief([0.1, np.pi - 0.01], np.diag([0.5, 0.02]))
    p2 = GaussianBelief([0.1, -np.pi - 0.01], np.diag([0.5, 0.02]))  # -2pi rep
    f1 = fuse_with_common_prior(g, [p1], angle_dims=(1,))
    f2 = fuse_with_common_prior(g, [p2], angle_dims=(1,))
    assert wrap_angle(f1.mean[1] - f2.mean[1]) == pytest.approx(0.0, abs=1e-9)


def test_kf_predict_matches_closed_form():
    rng = np.random.default_rng(21)
    g = GaussianBelief(rng.standard_normal(4), random_spd(rng, 4))
    a = rng.standard_normal((4, 4))
    q = random_spd(rng, 4, 0.1)
    out = kf_predict(g, a, q)
    assert np.allclose(out.mean, a @ g.mean, atol=1e-12)
    assert np.allclose(out.cov, a @ g.cov @ a.T + q, atol=1e-10)


def test_kf_update_identity_1d():
    # Prior N(0,1), measurement z=1 with unit noise: posterior N(0.5, 0.5).
    g = GaussianBelief([0.0], [[1.0]])
    ut = unscented_transform(g, lambda s: s, UTParams())
    post, evidence = kf_update_stacked(g, np.array([1.0]), np.array([[1.0]]), ut)
    assert post.mean[0] == pytest.approx(0.5, abs=1e-10)
    assert post.cov[0, 0] == pytest.approx(0.5, rel=1e-10)
    assert evidence == pytest.approx(multivariate_normal.pdf(1.0, 0.0, 2.0), rel=1e-10)


def test_kf_update_matches_linear_kf():
    rng = np.random.default_rng(42)
    for _ in range(25):
        dim = rng.integers(2, 6)
        out = rng.integers(1, 4)
        g = GaussianBelief(rng.standard_normal(dim), random_spd(rng, dim))
        h = rng.standard_normal((out, dim))
        b = rng.standard_normal(out)
        r = random_spd(rng, out, 0.5)
        z = rng.standard_normal(out)
        ut = unscented_transform(g, lambda s: h @ s + b, UTParams())
        post, evidence = kf_update_stacked(g, z, r, ut)

        s = h @ g.cov @ h.T + r
        gain = g.cov @ h.T @ np.linalg.inv(s)
        mean = g.mean + gain @ (z - h @ g.mean - b)
        cov = g.cov - gain @ s @ gain.T
        assert np.allclose(post.mean, mean, atol=1e-10)
        assert np.allclose(post.cov, cov, atol=1e-10)
        expected = multivariate_normal.pdf(z, h @ g.mean + b, s)
        assert evidence == pytest.approx(expected, rel=1e-9)


def test_kf_update_wraps_angle_innovation():
    g = GaussianBelief([np.pi - 0.05], [[0.01]])
    ut = unscented_transform(g, lambda s: s, UTParams(), angle_dims=(0,))
    z = np.array([-np.pi + 0.05])  # 0.1 rad away across the cut
    post, _ = kf_update_stacked(g, z, np.array([[0.01]]), ut, angle_dims=(0,))
    # Posterior mean moves toward the short way around, not across the circle.
    assert post.mean[0] == pytest.approx(np.pi, abs=1e-9)


def test_kf_update_uninformative_measurement():
    g = GaussianBelief([1.0, 2.0], np.diag([0.5, 0.5]))
    ut = unscented_transform(g, lambda s: s, UTParams())
    post, _ = kf_update_stacked(g, np.array([50.0, -50.0]), 1e12 * np.eye(2), ut)
    assert np.allclose(post.mean, g.mean, atol=1e-6)
    assert np.allclose(post.cov, g.cov, rtol=1e-6)
