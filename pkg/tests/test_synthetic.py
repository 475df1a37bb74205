"""Sampler determinism and moments; quadrature oracle behavior."""
import numpy as np
import pytest

from hgllim import (ContractError, GeneratorSpec, GridResolutionError,
                    e_step_w, e_step_z, oracle_posterior, random_model,
                    sample)


def test_sampler_is_deterministic_per_spec():
    model = random_model(3, 5, 2, 1, seed=0)
    spec = GeneratorSpec(model=model, n_samples=200, seed=42)
    one, two = sample(spec), sample(spec)
    assert one.training.features.tobytes() == two.training.features.tobytes()
    assert one.training.targets.tobytes() == two.training.targets.tobytes()
    assert one.components.tobytes() == two.components.tobytes()
    assert one.latents.tobytes() == two.latents.tobytes()
    other = sample(GeneratorSpec(model=model, n_samples=200, seed=43))
    assert one.training.features.tobytes() != other.training.features.tobytes()


def test_sampler_component_frequencies_match_priors():
    model = random_model(4, 4, 1, 0, seed=1)
    draw = sample(GeneratorSpec(model=model, n_samples=40000, seed=2))
    freq = np.bincount(draw.components, minlength=4) / 40000
    np.testing.assert_allclose(freq, model.priors, atol=0.01)


def test_sampler_conditional_moments():
    model = random_model(2, 6, 2, 1, seed=3, noise_scale=0.3)
    draw = sample(GeneratorSpec(model=model, n_samples=60000, seed=4))
    for k in range(2):
        pick = draw.components == k
        x = draw.outputs[pick]
        np.testing.assert_allclose(x.mean(axis=0), model.means[k], atol=0.05)
        emp_cov = np.cov(x, rowvar=False)
        np.testing.assert_allclose(emp_cov, model.covariances[k], atol=0.08)
        # feature residuals around the affine map should match the noise
        resid = (draw.training.features[pick]
                 - x @ model.maps[k].T - model.offsets[k])
        np.testing.assert_allclose(resid.mean(axis=0), 0.0, atol=0.02)
        np.testing.assert_allclose(resid.var(axis=0), model.noise_vars[k],
                                   rtol=0.1)


def test_sampled_latents_are_standard_normal():
    model = random_model(3, 5, 1, 2, seed=5)
    draw = sample(GeneratorSpec(model=model, n_samples=50000, seed=6))
    np.testing.assert_allclose(draw.latents.mean(axis=0), 0.0, atol=0.03)
    np.testing.assert_allclose(np.cov(draw.latents, rowvar=False), np.eye(2),
                               atol=0.03)


def test_generator_spec_validation():
    model = random_model(1, 3, 1, 0, seed=7)
    with pytest.raises(ContractError):
        GeneratorSpec(model=model, n_samples=0)


@pytest.mark.parametrize("lw", [1, 2])
def test_oracle_agrees_with_closed_form_posteriors(lw):
    model = random_model(2, 5 - lw, 1, lw, seed=8 + lw, noise_scale=0.8,
                         map_scale=0.6)
    draw = sample(GeneratorSpec(model=model, n_samples=6, seed=9))
    resp, _ = e_step_z(model, draw.training)
    lat = e_step_w(model, draw.training)
    for i in range(6):
        got = oracle_posterior(model, draw.training.features[i],
                               draw.training.targets[i], resolution=161)
        np.testing.assert_allclose(got.responsibilities, resp.r[i], atol=1e-4)
        np.testing.assert_allclose(got.latent_means, lat.means[i], atol=1e-4)


def test_oracle_without_latent_part_needs_no_grid():
    model = random_model(3, 4, 2, 0, seed=10)
    draw = sample(GeneratorSpec(model=model, n_samples=4, seed=11))
    resp, _ = e_step_z(model, draw.training)
    for i in range(4):
        got = oracle_posterior(model, draw.training.features[i],
                               draw.training.targets[i])
        np.testing.assert_allclose(got.responsibilities, resp.r[i], atol=1e-10)
        assert got.latent_means.shape == (3, 0)
        assert got.refinement_error == 0.0


def test_oracle_refuses_an_under_resolved_grid():
    # Small noise makes the latent posterior far narrower than the default
    # grid spacing; the refinement check must refuse rather than mislead.
    model = random_model(2, 6, 2, 1, seed=12, noise_scale=0.05)
    draw = sample(GeneratorSpec(model=model, n_samples=1, seed=13))
    with pytest.raises(GridResolutionError) as info:
        oracle_posterior(model, draw.training.features[0],
                         draw.training.targets[0], resolution=41)
    assert "resolution" in str(info.value)


def test_oracle_rejects_out_of_scope_problems():
    big_d = random_model(1, 9, 1, 1, seed=14)
    draw = sample(GeneratorSpec(model=big_d, n_samples=1, seed=15))
    with pytest.raises(ContractError):
        oracle_posterior(big_d, draw.training.features[0],
                         draw.training.targets[0])
    wide_w = random_model(1, 4, 1, 3, seed=16)
    draw_w = sample(GeneratorSpec(model=wide_w, n_samples=1, seed=17))
    with pytest.raises(ContractError):
        oracle_posterior(wide_w, draw_w.training.features[0],
                         draw_w.training.targets[0])
    ok = random_model(1, 4, 1, 1, seed=18)
    draw_ok = sample(GeneratorSpec(model=ok, n_samples=1, seed=19))
    with pytest.raises(ContractError):
        oracle_posterior(ok, draw_ok.training.features[0],
                         draw_ok.training.targets[0], resolution=40)


def test_oracle_reports_its_refinement_error():
    model = random_model(1, 4, 1, 1, seed=20, noise_scale=0.9)
    draw = sample(GeneratorSpec(model=model, n_samples=1, seed=21))
    got = oracle_posterior(model, draw.training.features[0],
                           draw.training.targets[0], resolution=161)
    assert 0.0 <= got.refinement_error <= 1e-3
    assert np.isfinite(got.log_evidence)
