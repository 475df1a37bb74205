"""Training: E/M steps against naive transcriptions, loop behavior, BIC."""
import math

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from hgllim import (ContractError, DegenerateInputError, GeneratorSpec,
                    InternalConsistencyError, InverseModel, LatentSpec,
                    LatentPosterior, Responsibilities, TrainingConfig,
                    TrainingSet, bic, derive_forward, e_step_w, e_step_z,
                    init_params, m_step_gmm, m_step_mapping, predict_mean,
                    random_model, sample, sweep_components, train)
from hgllim.em import default_noise_floor, free_parameter_count


def fixture(k=3, d=6, lt=2, lw=1, n=400, seed=0, **kwargs):
    model = random_model(k, d, lt, lw, seed=seed, **kwargs)
    draw = sample(GeneratorSpec(model=model, n_samples=n, seed=seed + 1))
    return model, draw


# ---------------------------------------------------------------------------
# Naive reference implementations (dense, loop-based, no shared code paths)
# ---------------------------------------------------------------------------

def naive_e_step_w(model, data):
    lt = model.latent.observed_dim
    lw = model.latent.latent_dim
    n = data.n_samples
    k = model.n_components
    covs = np.empty((k, lw, lw))
    mus = np.empty((n, k, lw))
    for i in range(k):
        a_t = model.maps[i][:, :lt]
        a_w = model.maps[i][:, lt:]
        sig_inv = np.diag(1.0 / model.noise_vars[i])
        covs[i] = np.linalg.inv(np.eye(lw) + a_w.T @ sig_inv @ a_w)
        for j in range(n):
            u = data.features[j] - a_t @ data.targets[j] - model.offsets[i]
            mus[j, i] = covs[i] @ a_w.T @ sig_inv @ u
    return covs, mus


def naive_e_step_z(model, data):
    lt = model.latent.observed_dim
    n = data.n_samples
    k = model.n_components
    logs = np.empty((n, k))
    for i in range(k):
        a_t = model.maps[i][:, :lt]
        a_w = model.maps[i][:, lt:]
        phi = a_w @ a_w.T + np.diag(model.noise_vars[i])
        for j in range(n):
            log_t = multivariate_normal.logpdf(
                data.targets[j], model.means[i][:lt],
                model.covariances[i][:lt, :lt])
            mean_y = a_t @ data.targets[j] + model.offsets[i]
            log_y = multivariate_normal.logpdf(data.features[j], mean_y, phi)
            logs[j, i] = np.log(model.priors[i]) + log_t + log_y
    norms = logsumexp(logs, axis=1)
    return np.exp(logs - norms[:, None]), float(norms.sum())


def naive_m_step_gmm(data, r):
    n, k = r.shape
    lt = data.target_dim
    counts = r.sum(axis=0)
    priors = counts / n
    means = np.empty((k, lt))
    covs = np.empty((k, lt, lt))
    for i in range(k):
        rho = r[:, i] / counts[i]
        means[i] = sum(rho[j] * data.targets[j] for j in range(n))
        acc = np.zeros((lt, lt))
        for j in range(n):
            diff = data.targets[j] - means[i]
            acc += rho[j] * np.outer(diff, diff)
        covs[i] = acc
    return priors, means, covs


def naive_m_step_mapping(data, r, covs_w, mus, floor):
    n, k = r.shape
    lt = data.target_dim
    lw = mus.shape[2]
    d = data.feature_dim
    low = lt + lw
    maps = np.empty((k, d, low))
    offsets = np.empty((k, d))
    noise = np.empty((k, d))
    for i in range(k):
        rho = r[:, i] / r[:, i].sum()
        x = np.hstack((data.targets, mus[:, i, :]))
        xbar = sum(rho[j] * x[j] for j in range(n))
        ybar = sum(rho[j] * data.features[j] for j in range(n))
        sx = np.zeros((low, low))
        if lw:
            sx[lt:, lt:] = covs_w[i]
        xx = np.zeros((low, low))
        yx = np.zeros((d, low))
        for j in range(n):
            xc = math.sqrt(rho[j]) * (x[j] - xbar)
            yc = math.sqrt(rho[j]) * (data.features[j] - ybar)
            xx += np.outer(xc, xc)
            yx += np.outer(yc, xc)
        a = yx @ np.linalg.inv(sx + xx)
        offsets[i] = sum(rho[j] * (data.features[j] - a @ x[j])
                         for j in range(n))
        acc = np.zeros(d)
        for j in range(n):
            resid = data.features[j] - a @ x[j] - offsets[i]
            acc += rho[j] * resid ** 2
        if lw:
            acc += np.diag(a[:, lt:] @ covs_w[i] @ a[:, lt:].T)
        maps[i] = a
        noise[i] = np.maximum(acc, floor)
    return maps, offsets, noise


# ---------------------------------------------------------------------------
# Step-level agreement
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("lw", [1, 2])
def test_e_step_w_matches_naive(lw):
    model, draw = fixture(k=2, d=5, lt=1, lw=lw, n=60, seed=3,
                          noise_scale=0.5)
    lat = e_step_w(model, draw.training)
    covs, mus = naive_e_step_w(model, draw.training)
    np.testing.assert_allclose(lat.covariances, covs, atol=1e-10)
    np.testing.assert_allclose(lat.means, mus, atol=1e-10)


@pytest.mark.parametrize("lw", [0, 1, 2])
def test_e_step_z_matches_naive(lw):
    model, draw = fixture(k=3, d=5, lt=2, lw=lw, n=80, seed=4,
                          noise_scale=0.5)
    resp, ll = e_step_z(model, draw.training)
    r_ref, ll_ref = naive_e_step_z(model, draw.training)
    np.testing.assert_allclose(resp.r, r_ref, atol=1e-10)
    assert abs(ll - ll_ref) <= 1e-8 * abs(ll_ref)
    np.testing.assert_allclose(resp.r.sum(axis=1), 1.0, atol=1e-12)


def test_m_steps_match_naive():
    model, draw = fixture(k=2, d=5, lt=2, lw=1, n=50, seed=5,
                          noise_scale=0.5)
    resp, _ = e_step_z(model, draw.training)
    lat = e_step_w(model, draw.training)
    priors, means, covs = m_step_gmm(draw.training, resp)
    p_ref, m_ref, c_ref = naive_m_step_gmm(draw.training, resp.r)
    np.testing.assert_allclose(priors, p_ref, atol=1e-12)
    np.testing.assert_allclose(means, m_ref, atol=1e-10)
    np.testing.assert_allclose(covs, c_ref, atol=1e-10)
    floor = max(1e-7, 1e-7 * np.mean(np.var(draw.training.features, axis=0)))
    maps, offsets, noise = m_step_mapping(draw.training, resp, lat,
                                          noise_floor=floor)
    a_ref, b_ref, s_ref = naive_m_step_mapping(
        draw.training, resp.r, lat.covariances, lat.means, floor)
    np.testing.assert_allclose(maps, a_ref, atol=1e-9)
    np.testing.assert_allclose(offsets, b_ref, atol=1e-9)
    np.testing.assert_allclose(noise, s_ref, atol=1e-9)


def test_latent_free_steps_bitwise_equal_plain_transcription():
    # With no latent coordinates the latent-aware code paths must not touch
    # the numbers at all: byte-for-byte equality, not tolerance equality.
    model, draw = fixture(k=2, d=4, lt=2, lw=0, n=64, seed=6)
    t, y = draw.training.targets, draw.training.features
    resp, ll = e_step_z(model, draw.training)
    from scipy.linalg import solve_triangular
    from hgllim import linalg as la
    lt = 2
    logs = np.empty((t.shape[0], 2))
    for i in range(2):
        chol_t = np.linalg.cholesky(model.covariances[i][:lt, :lt])
        log_t = la.gauss_logpdf(t, model.means[i][:lt], chol_t)
        resid = y - t @ model.maps[i][:, :lt].T - model.offsets[i]
        isig = 1.0 / model.noise_vars[i]
        quad = np.einsum("nd,d->n", resid * resid, isig)
        logdet = float(np.sum(np.log(model.noise_vars[i])))
        logs[:, i] = (float(np.log(model.priors[i])) + log_t
                      - 0.5 * (4 * la.LOG_2PI + logdet + quad))
    norms = logsumexp(logs, axis=1)
    plain_r = np.exp(logs - norms[:, None])
    assert resp.r.tobytes() == plain_r.tobytes()
    assert ll == math.fsum(norms.tolist())
    lat = LatentPosterior.empty(t.shape[0], 2)
    maps, offsets, noise = m_step_mapping(draw.training, resp, lat,
                                          noise_floor=1e-7)
    plain_maps = np.empty_like(maps)
    plain_offsets = np.empty_like(offsets)
    plain_noise = np.empty_like(noise)
    for i in range(2):
        rho = resp.rho[:, i]
        sqrt_rho = np.sqrt(rho)
        xbar = rho @ t
        ybar = rho @ y
        xc = (t - xbar) * sqrt_rho[:, None]
        yc = (y - ybar) * sqrt_rho[:, None]
        gxx = xc.T @ xc
        gxy = xc.T @ yc
        a = la.chol_solve(np.linalg.cholesky(gxx), gxy).T
        b = ybar - a @ xbar
        resid = y - t @ a.T - b
        plain_maps[i] = a
        plain_offsets[i] = b
        plain_noise[i] = np.maximum(rho @ (resid * resid), 1e-7)
    assert maps.tobytes() == plain_maps.tobytes()
    assert offsets.tobytes() == plain_offsets.tobytes()
    assert noise.tobytes() == plain_noise.tobytes()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def test_single_component_init_matches_least_squares():
    model, draw = fixture(k=1, d=5, lt=2, lw=0, n=200, seed=7)
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(2, 0), seed=0)
    init, resp = init_params(draw.training, cfg)
    t1 = np.hstack((draw.training.targets,
                    np.ones((draw.training.n_samples, 1))))
    coef, *_ = np.linalg.lstsq(t1, draw.training.features, rcond=None)
    a_ls, b_ls = coef[:2].T, coef[2]
    assert np.linalg.norm(init.maps[0] - a_ls) <= 1e-8
    assert np.linalg.norm(init.offsets[0] - b_ls) <= 1e-8
    np.testing.assert_allclose(resp.r, np.ones((200, 1)), atol=0)


def test_init_separates_well_separated_clusters():
    model, draw = fixture(k=3, d=6, lt=2, lw=0, n=300, seed=8,
                          separation=8.0, noise_scale=0.05)
    cfg = TrainingConfig(n_components=3, latent=LatentSpec(2, 0), seed=1)
    init, resp = init_params(draw.training, cfg)
    hard = resp.r.argmax(axis=1)
    # responsibilities should be a relabeling of the true components
    contingency = np.zeros((3, 3))
    for a, b in zip(hard, draw.components):
        contingency[a, b] += 1
    assert contingency.max(axis=0).sum() / 300 > 0.95


def test_init_rejects_more_components_than_samples():
    _, draw = fixture(k=1, d=4, lt=1, lw=0, n=5, seed=9)
    cfg = TrainingConfig(n_components=6, latent=LatentSpec(1, 0))
    with pytest.raises(ContractError):
        init_params(draw.training, cfg)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def test_single_component_training_converges_immediately():
    model, draw = fixture(k=1, d=5, lt=2, lw=0, n=150, seed=10)
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(2, 0),
                         max_iterations=50, seed=0)
    result = train(draw.training, cfg)
    assert result.converged
    assert len(result.history) <= 3
    t1 = np.hstack((draw.training.targets, np.ones((150, 1))))
    coef, *_ = np.linalg.lstsq(t1, draw.training.features, rcond=None)
    assert np.linalg.norm(result.model.maps[0] - coef[:2].T) <= 1e-8


@pytest.mark.parametrize("lw", [0, 1])
def test_log_likelihood_is_monotone(lw):
    _, draw = fixture(k=3, d=6, lt=2, lw=lw, n=300, seed=11 + lw)
    cfg = TrainingConfig(n_components=3, latent=LatentSpec(2, lw),
                         max_iterations=40, tolerance=1e-12, seed=2)
    result = train(draw.training, cfg)
    lls = [rec.log_likelihood for rec in result.history]
    for prev, cur in zip(lls, lls[1:]):
        assert cur >= prev - 1e-8 * max(1.0, abs(prev))


def test_training_is_invariant_to_sample_permutation():
    _, draw = fixture(k=2, d=5, lt=2, lw=1, n=240, seed=13)
    cfg = TrainingConfig(n_components=2, latent=LatentSpec(2, 1),
                         max_iterations=30, seed=3)
    result = train(draw.training, cfg)
    rng = np.random.default_rng(99)
    perm = rng.permutation(240)
    shuffled = TrainingSet(features=draw.training.features[perm],
                           targets=draw.training.targets[perm])
    result2 = train(shuffled, cfg)
    assert result.model.maps.tobytes() == result2.model.maps.tobytes()
    assert result.model.priors.tobytes() == result2.model.priors.tobytes()
    assert result.model.noise_vars.tobytes() == result2.model.noise_vars.tobytes()
    ll1 = [rec.log_likelihood for rec in result.history]
    ll2 = [rec.log_likelihood for rec in result2.history]
    assert ll1 == ll2


def test_training_is_invariant_to_worker_count():
    _, draw = fixture(k=2, d=4, lt=1, lw=1, n=5000, seed=14)
    cfg = TrainingConfig(n_components=2, latent=LatentSpec(1, 1),
                         max_iterations=15, seed=4)
    result1 = train(draw.training, cfg, workers=1)
    result4 = train(draw.training, cfg, workers=4)
    for name in ("priors", "means", "covariances", "maps", "offsets",
                 "noise_vars"):
        assert getattr(result1.model, name).tobytes() == \
            getattr(result4.model, name).tobytes()


def test_e_step_z_flags_degenerate_samples():
    base = random_model(2, 4, 1, 0, seed=15)
    tiny = InverseModel(priors=base.priors, means=base.means,
                        covariances=base.covariances, maps=base.maps,
                        offsets=base.offsets,
                        noise_vars=np.full_like(base.noise_vars, 1e-300),
                        latent=base.latent)
    data = TrainingSet(features=np.full((3, 4), 1e8), targets=np.zeros((3, 1)))
    with pytest.raises(DegenerateInputError):
        e_step_z(tiny, data)


def test_empty_component_is_recycled_or_dropped():
    # Data with two tight clusters but three requested components: one
    # component will starve; training must survive and stay normalized.
    rng = np.random.default_rng(16)
    t = np.vstack((rng.normal(-4, 0.05, (80, 1)), rng.normal(4, 0.05, (80, 1))))
    y = np.hstack((3.0 * t, -t + 1.0)) + rng.normal(0, 0.05, (160, 2))
    data = TrainingSet(features=y, targets=t)
    cfg = TrainingConfig(n_components=3, latent=LatentSpec(1, 0),
                         max_iterations=60, seed=5)
    result = train(data, cfg)
    assert result.model.n_components <= 3
    assert abs(result.model.priors.sum() - 1.0) <= 1e-9
    counts = result.history[-1].counts
    assert all(c > 0.5 for c in counts)


def test_latent_training_recovers_structured_residual_covariance():
    # Features share one strong unobserved factor; a latent-aware fit must
    # explain it with close to the true loading magnitudes and noise scale.
    truth = random_model(1, 8, 1, 1, seed=17, map_scale=2.0, noise_scale=0.1)
    draw = sample(GeneratorSpec(model=truth, n_samples=2000, seed=18))
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(1, 1),
                         max_iterations=200, seed=6)
    result = train(draw.training, cfg)
    got = result.model.maps[0][:, 1:]
    want = truth.maps[0][:, 1:]
    # loadings are recoverable up to sign
    align = float(np.sign((got * want).sum())) or 1.0
    cos = float((got * want).sum()) * align \
        / float(np.linalg.norm(got) * np.linalg.norm(want))
    assert cos > 0.98
    assert np.linalg.norm(got) == pytest.approx(np.linalg.norm(want), rel=0.1)
    assert result.model.noise_vars.mean() == pytest.approx(
        truth.noise_vars.mean(), rel=0.5)


def test_responsibility_validation():
    with pytest.raises(ContractError):
        Responsibilities(r=np.array([[0.5, 0.4]]))
    with pytest.raises(ContractError):
        Responsibilities(r=np.array([[1.2, -0.2]]))
    resp = Responsibilities(r=np.array([[0.25, 0.75], [1.0, 0.0]]))
    np.testing.assert_allclose(resp.rho.sum(axis=0), [1.0, 1.0])


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

def test_free_parameter_count_minimal_case():
    assert free_parameter_count(1, 1, LatentSpec(1, 0)) == 5


def test_free_parameter_count_scales_with_latent_dim():
    base = free_parameter_count(3, 10, LatentSpec(2, 0))
    more = free_parameter_count(3, 10, LatentSpec(2, 2))
    assert more == base + 3 * 10 * 2


def test_bic_penalizes_added_components_on_simple_data():
    _, draw = fixture(k=1, d=5, lt=1, lw=0, n=400, seed=19)
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(1, 0),
                         max_iterations=60, seed=7)
    records = sweep_components(draw.training, cfg, [1, 2, 3])
    assert all(rec.error is None for rec in records)
    scores = [rec.bic.score for rec in records]
    assert scores[0] == min(scores)


def test_bic_selects_true_component_count():
    truth = random_model(3, 6, 1, 0, seed=20, separation=7.0,
                         noise_scale=0.08)
    draw = sample(GeneratorSpec(model=truth, n_samples=900, seed=21))
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(1, 0),
                         max_iterations=80, seed=8)
    records = sweep_components(draw.training, cfg, [1, 2, 3, 4, 5])
    ok = [rec for rec in records if rec.error is None]
    best = min(ok, key=lambda rec: rec.bic.score)
    assert best.n_components == 3


def test_bic_normalization_is_a_fixed_rescale():
    _, draw = fixture(k=2, d=5, lt=2, lw=0, n=300, seed=22)
    cfg = TrainingConfig(n_components=2, latent=LatentSpec(2, 0),
                         max_iterations=40, seed=9)
    result = train(draw.training, cfg)
    score = bic(result.model, draw.training)
    n, d, lt = 300, 5, 2
    assert score.normalized == pytest.approx(score.score / (n * (d + lt)))
    assert score.score == pytest.approx(
        -2.0 * score.log_likelihood + score.free_parameters * math.log(n))


def test_sweep_records_failures_and_continues():
    _, draw = fixture(k=1, d=4, lt=1, lw=0, n=30, seed=23)
    cfg = TrainingConfig(n_components=1, latent=LatentSpec(1, 0),
                         max_iterations=20, seed=10)
    records = sweep_components(draw.training, cfg, [1, 500])
    assert records[0].error is None
    assert records[1].error is not None and records[1].bic is None


# ---------------------------------------------------------------------------
# End-to-end estimation quality
# ---------------------------------------------------------------------------

def test_trained_model_predicts_held_out_targets():
    truth = random_model(3, 12, 2, 0, seed=24, separation=5.0,
                         noise_scale=0.15)
    train_draw = sample(GeneratorSpec(model=truth, n_samples=1500, seed=25))
    test_draw = sample(GeneratorSpec(model=truth, n_samples=400, seed=26))
    cfg = TrainingConfig(n_components=3, latent=LatentSpec(2, 0),
                         max_iterations=100, seed=11)
    result = train(train_draw.training, cfg)
    fwd_hat = derive_forward(result.model)
    fwd_true = derive_forward(truth)
    pred = predict_mean(fwd_hat, test_draw.training.features)
    oracle = predict_mean(fwd_true, test_draw.training.features)
    mae = np.abs(pred - test_draw.training.targets).mean()
    mae_oracle = np.abs(oracle - test_draw.training.targets).mean()
    assert mae <= 1.2 * mae_oracle
