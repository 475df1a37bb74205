"""Synthetic data generation and brute-force reference computations.

The sampler draws datasets from a known :class:`InverseModel` with full
hidden records (component labels, latent coordinates), and the quadrature
oracle evaluates posterior quantities by direct numerical integration over
the latent coordinate. Both are shipped, not test-only: they back the
``synth`` command and any downstream validation of trained models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import linalg
from .errors import ContractError, GridResolutionError
from .model import InverseModel, LatentSpec, TrainingSet

__all__ = [
    "GeneratorSpec", "SyntheticDraw", "sample", "random_model",
    "OraclePosterior", "oracle_posterior",
]


@dataclass(frozen=True)
class GeneratorSpec:
    """A generating model plus the draw size and seed."""

    model: InverseModel
    n_samples: int
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ContractError("n_samples must be >= 1")


@dataclass(frozen=True)
class SyntheticDraw:
    """A sampled dataset with its hidden records.

    ``training`` holds the observable pairs (y, t); ``components``, ``latents``
    and ``outputs`` record which component produced each sample, the latent
    coordinates, and the full output vectors x = [t; w].
    """

    training: TrainingSet
    components: np.ndarray   # (N,) int
    latents: np.ndarray      # (N, L_w)
    outputs: np.ndarray      # (N, L)


def sample(spec: GeneratorSpec) -> SyntheticDraw:
    """Draw a dataset from the generating model.

    All randomness comes from one Generator seeded with ``spec.seed``; the
    draw order is fixed (components, then output deviates, then noise), so a
    given spec always produces the same arrays.
    """
    model = spec.model
    n = spec.n_samples
    rng = np.random.default_rng(spec.seed)
    low = model.latent.total_dim
    high = model.feature_dim
    z = rng.choice(model.n_components, size=n, p=model.priors)
    eps_x = rng.standard_normal((n, low))
    eps_y = rng.standard_normal((n, high))
    x = model.means[z] + np.einsum("nij,nj->ni", model._chol_cov[z], eps_x)
    y = (np.einsum("ndl,nl->nd", model.maps[z], x) + model.offsets[z]
         + np.sqrt(model.noise_vars[z]) * eps_y)
    lt = model.latent.observed_dim
    training = TrainingSet(features=y, targets=x[:, :lt])
    return SyntheticDraw(training=training, components=z,
                         latents=x[:, lt:].copy(), outputs=x)


def random_model(n_components: int, feature_dim: int, observed_dim: int,
                 latent_dim: int = 0, seed: int = 0, *,
                 separation: float = 3.0, noise_scale: float = 0.1,
                 map_scale: float = 1.0) -> InverseModel:
    """A reproducible, well-conditioned model for experiments and fixtures.

    Component centers are spread by ``separation``; affine maps are dense
    Gaussian draws scaled so the feature magnitudes stay comparable across
    dimensions; noise variances sit near ``noise_scale ** 2``.
    """
    rng = np.random.default_rng(seed)
    k, high = n_components, feature_dim
    low = observed_dim + latent_dim
    priors = rng.uniform(0.5, 1.5, size=k)
    priors /= priors.sum()
    means = np.zeros((k, low))
    means[:, :observed_dim] = separation * rng.standard_normal((k, observed_dim))
    covariances = np.zeros((k, low, low))
    for i in range(k):
        basis = rng.standard_normal((observed_dim, observed_dim))
        block = basis @ basis.T / observed_dim + 0.5 * np.eye(observed_dim)
        covariances[i, :observed_dim, :observed_dim] = block
        covariances[i, observed_dim:, observed_dim:] = np.eye(latent_dim)
    maps = map_scale * rng.standard_normal((k, high, low)) / np.sqrt(low)
    offsets = rng.standard_normal((k, high))
    noise_vars = noise_scale ** 2 * rng.uniform(0.5, 1.5, size=(k, high))
    return InverseModel(priors=priors, means=means, covariances=covariances,
                        maps=maps, offsets=offsets, noise_vars=noise_vars,
                        latent=LatentSpec(observed_dim, latent_dim))


@dataclass(frozen=True)
class OraclePosterior:
    """Posterior quantities for one (y, t) pair from direct evaluation."""

    responsibilities: np.ndarray   # (K,)
    latent_means: np.ndarray       # (K, L_w)
    log_evidence: float
    refinement_error: float


# The grid oracle is only meant for small problems; anything bigger should
# use the closed-form code paths it exists to validate.
_MAX_FEATURE_DIM = 8
_MAX_LATENT_DIM = 2


def oracle_posterior(model: InverseModel, features, targets, *,
                     half_width: float = 8.0, resolution: int = 81,
                     max_refinement_error: float = 1e-3) -> OraclePosterior:
    """Posterior over components and latent coordinates by quadrature.

    Evaluates the joint density on a regular grid over the latent coordinate
    in ``[-half_width, half_width]`` per axis (trapezoid weights) and
    normalizes. The same quantity is recomputed on the half-resolution
    subgrid; if the relative disagreement of the two evidence estimates
    exceeds ``max_refinement_error`` the grid is declared too coarse and a
    :class:`GridResolutionError` is raised with the numbers.
    """
    if model.feature_dim > _MAX_FEATURE_DIM:
        raise ContractError(
            f"oracle is restricted to feature_dim <= {_MAX_FEATURE_DIM}")
    lw = model.latent.latent_dim
    if lw > _MAX_LATENT_DIM:
        raise ContractError(
            f"oracle is restricted to latent_dim <= {_MAX_LATENT_DIM}")
    if resolution < 9 or resolution % 2 == 0:
        raise ContractError("resolution must be an odd integer >= 9")
    y = np.asarray(features, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if y.shape[0] != model.feature_dim:
        raise ContractError("features have the wrong dimension")
    if t.shape[0] != model.latent.observed_dim:
        raise ContractError("targets have the wrong dimension")

    k = model.n_components
    lt = model.latent.observed_dim
    log_t = np.array([
        float(linalg.gauss_logpdf(t, model.means[i][:lt],
                                  model.chol_observed_cov(i)))
        for i in range(k)])
    log_pi = np.log(model.priors)

    if lw == 0:
        # No integral: the joint at (t, y) is already the unnormalized
        # component posterior.
        logs = np.empty(k)
        for i in range(k):
            mean_y = model.maps[i][:, :lt] @ t + model.offsets[i]
            logs[i] = log_pi[i] + log_t[i] + float(
                linalg.gauss_logpdf_diag(y, mean_y, model.noise_vars[i]))
        evidence = float(logsumexp(logs))
        resp = np.exp(logs - evidence)
        return OraclePosterior(responsibilities=resp,
                               latent_means=np.zeros((k, 0)),
                               log_evidence=evidence, refinement_error=0.0)

    axis = np.linspace(-half_width, half_width, resolution)
    axes = [axis] * lw
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)   # (G, L_w)
    # Trapezoid weights: product over axes of (h, h, ..., h) with h/2 at ends.
    step = axis[1] - axis[0]
    w1 = np.full(resolution, step)
    w1[0] = w1[-1] = 0.5 * step
    weights = w1.copy()
    for _ in range(lw - 1):
        weights = np.multiply.outer(weights, w1)
    weights = weights.ravel()
    log_weights = np.log(weights)

    def log_joint_at(grid_points: np.ndarray) -> np.ndarray:
        out = np.empty((k, grid_points.shape[0]))
        prior_w = -0.5 * (lw * linalg.LOG_2PI
                          + np.einsum("gj,gj->g", grid_points, grid_points))
        for i in range(k):
            mean_y = (grid_points @ model.maps[i][:, lt:].T
                      + (model.maps[i][:, :lt] @ t + model.offsets[i]))
            like = linalg.gauss_logpdf_diag(y, mean_y, model.noise_vars[i])
            out[i] = log_pi[i] + log_t[i] + prior_w + like
        return out

    # Full grid.
    log_joint = log_joint_at(points)
    log_mass = logsumexp(log_joint + log_weights[None, :], axis=1)
    log_evidence = float(logsumexp(log_mass))

    # Coarseness checks. A nested half-resolution trapezoid catches slow
    # convergence; a midpoint rule on cell centers catches mass hiding
    # between grid points (where nested grids can agree and both be wrong).
    sub = np.zeros(resolution, dtype=bool)
    sub[::2] = True
    sub_res = int(sub.sum())
    sub_step = 2.0 * step
    sw1 = np.full(sub_res, sub_step)
    sw1[0] = sw1[-1] = 0.5 * sub_step
    sub_weights = sw1.copy()
    mask = sub.copy()
    for _ in range(lw - 1):
        sub_weights = np.multiply.outer(sub_weights, sw1)
        mask = np.multiply.outer(mask, sub)
    mask = np.asarray(mask).ravel().astype(bool)
    coarse = log_joint[:, mask] + np.log(sub_weights.ravel())[None, :]
    log_evidence_coarse = float(logsumexp(coarse))

    mid_axis = 0.5 * (axis[:-1] + axis[1:])
    mid_grids = np.meshgrid(*([mid_axis] * lw), indexing="ij")
    mid_points = np.stack([g.ravel() for g in mid_grids], axis=1)
    mid_log_joint = log_joint_at(mid_points)
    log_evidence_mid = float(logsumexp(mid_log_joint)
                             + lw * np.log(step))

    refinement = max(abs(np.expm1(log_evidence_coarse - log_evidence)),
                     abs(np.expm1(log_evidence_mid - log_evidence)))
    if refinement > max_refinement_error:
        raise GridResolutionError(
            f"quadrature grid too coarse: evidence changed by {refinement:.3e} "
            f"under refinement (> {max_refinement_error:.1e}); resolution="
            f"{resolution}, half_width={half_width}")

    resp = np.exp(log_mass - log_evidence)
    latent_means = np.empty((k, lw))
    for i in range(k):
        scaled = np.exp(log_joint[i] - log_joint[i].max()) * weights
        total = scaled.sum()
        latent_means[i] = (scaled @ points) / total
    return OraclePosterior(responsibilities=resp, latent_means=latent_means,
                           log_evidence=log_evidence,
                           refinement_error=refinement)
