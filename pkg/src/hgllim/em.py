"""Expectation-maximization training of the inverse mixture.

The trainer estimates the low-to-high parameters from (feature, target)
pairs. When the output has a latent part, each EM iteration carries two
E-steps (posterior over the latent coordinates given assignments, posterior
over assignments with the latent part marginalized out) and two M-steps
(Gaussian-mixture update of the output prior, weighted-least-squares update
of the affine maps and noise).

Determinism contract: all randomness flows from the config seed, training
internally canonicalizes sample order, and chunked accumulations combine
partial results in fixed chunk order, so the trained model is byte-identical
for any worker count and any permutation of the input rows.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import linalg, parallel
from .errors import (ContractError, DegenerateInputError,
                     InternalConsistencyError, TrainingFailedError)
from .model import InverseModel, LatentSpec, TrainingSet

__all__ = [
    "TrainingConfig", "Responsibilities", "LatentPosterior", "IterationRecord",
    "TrainResult", "BicResult", "SweepRecord", "default_noise_floor",
    "init_params", "e_step_w", "e_step_z", "m_step_gmm", "m_step_mapping",
    "train", "bic", "sweep_components",
]

# A component whose effective sample count stays below the threshold is
# reinitialized at most this many times before being dropped.
MAX_REINITS = 3


@dataclass(frozen=True)
class TrainingConfig:
    """Knobs of one training run; everything random derives from ``seed``."""

    n_components: int
    latent: LatentSpec
    max_iterations: int = 200
    tolerance: float = 1e-6
    jitter_floor: float = 1e-7
    empty_threshold: float = 1.0
    seed: int = 0
    init_gmm_iterations: int = 30

    def __post_init__(self):
        if self.n_components < 1:
            raise ContractError("n_components must be >= 1")
        if self.max_iterations < 1:
            raise ContractError("max_iterations must be >= 1")
        if self.tolerance <= 0.0:
            raise ContractError("tolerance must be > 0")
        if self.jitter_floor <= 0.0:
            raise ContractError("jitter_floor must be > 0")


@dataclass(frozen=True)
class Responsibilities:
    """Posterior assignment probabilities r_nk; rows sum to one.

    ``rho`` is the per-component normalization r_nk / sum_n r_nk used by the
    weighted M-step formulas.
    """

    r: np.ndarray
    _rho: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.ascontiguousarray(self.r, dtype=np.float64)
        if r.ndim != 2:
            raise ContractError("responsibilities must be a 2-d array")
        if np.any(r < 0.0) or not np.all(np.isfinite(r)):
            raise ContractError("responsibilities must be finite and >= 0")
        row_sums = r.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-6):
            raise ContractError("responsibility rows must sum to 1")
        counts = r.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.where(counts > 0.0, r / counts, 0.0)
        r.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "_rho", rho)

    @property
    def rho(self) -> np.ndarray:
        return self._rho

    @property
    def counts(self) -> np.ndarray:
        return self.r.sum(axis=0)

    @property
    def n_components(self) -> int:
        return self.r.shape[1]


@dataclass(frozen=True)
class LatentPosterior:
    """Per-component latent posteriors q(w | y, t, Z=k) = N(mu_nk, S_k)."""

    covariances: np.ndarray   # (K, L_w, L_w), shared across samples
    means: np.ndarray         # (N, K, L_w)

    @classmethod
    def empty(cls, n_samples: int, n_components: int) -> "LatentPosterior":
        return cls(covariances=np.zeros((n_components, 0, 0)),
                   means=np.zeros((n_samples, n_components, 0)))

    @property
    def latent_dim(self) -> int:
        return self.covariances.shape[1]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    log_likelihood: float
    counts: tuple[float, ...]


@dataclass(frozen=True)
class TrainResult:
    model: InverseModel
    history: tuple[IterationRecord, ...]
    converged: bool


@dataclass(frozen=True)
class BicResult:
    score: float
    normalized: float
    log_likelihood: float
    free_parameters: int


@dataclass(frozen=True)
class SweepRecord:
    n_components: int
    bic: BicResult | None
    seconds: float
    error: str | None = None


def default_noise_floor(features: np.ndarray, scale: float = 1e-7) -> float:
    """Lower bound for noise variances: max(scale, scale * mean feature variance)."""
    mean_var = float(np.mean(np.var(features, axis=0)))
    return max(scale, scale * mean_var)


# ---------------------------------------------------------------------------
# E-steps
# ---------------------------------------------------------------------------

def _component_terms(model: InverseModel):
    """Per-component constants shared by both E-steps."""
    lt = model.latent.observed_dim
    lw = model.latent.latent_dim
    terms = []
    for k in range(model.n_components):
        a = model.maps[k]
        sig = model.noise_vars[k]
        isig = 1.0 / sig
        entry = {
            "log_pi": float(np.log(model.priors[k])),
            "mean_t": model.means[k][:lt],
            "chol_t": model.chol_observed_cov(k),
            "map_t": a[:, :lt],
            "offset": model.offsets[k],
            "isig": isig,
            "log_sig_sum": float(np.sum(np.log(sig))),
        }
        if lw:
            loading = a[:, lt:]                       # A^w, (D, L_w)
            scaled = loading * isig[:, None]          # Sigma^-1 A^w
            m = np.eye(lw) + loading.T @ scaled       # I + A^w^T Sigma^-1 A^w
            chol_m = linalg.chol_spd(m, context="latent precision", component=k)
            entry["scaled_loading"] = scaled
            entry["chol_m"] = chol_m
            entry["logdet_m"] = linalg.chol_logdet(chol_m)
        terms.append(entry)
    return terms


def e_step_z(model: InverseModel, data: TrainingSet, *,
             workers: int = 1) -> tuple[Responsibilities, float]:
    """Posterior assignments and the observed-data log-likelihood.

    The latent part is marginalized analytically: the feature likelihood per
    component is Gaussian with covariance A^w A^w^T + Sigma_k, evaluated
    through the (L_w x L_w) capacitance matrix so the cost stays linear in D.
    Returns the responsibilities and sum_n log p(y_n, t_n).
    """
    resp, ll, _ = _e_step_z_full(model, data, workers=workers)
    return resp, ll


def _e_step_z_full(model: InverseModel, data: TrainingSet, *,
                   workers: int = 1):
    if data.target_dim != model.latent.observed_dim:
        raise ContractError("data target dimension does not match the model")
    if data.feature_dim != model.feature_dim:
        raise ContractError("data feature dimension does not match the model")
    targets, features = data.targets, data.features
    n, d = features.shape
    k = model.n_components
    lw = model.latent.latent_dim
    terms = _component_terms(model)

    def block(sl: slice) -> np.ndarray:
        t_blk = targets[sl]
        y_blk = features[sl]
        out = np.empty((y_blk.shape[0], k))
        for i, tm in enumerate(terms):
            log_t = linalg.gauss_logpdf(t_blk, tm["mean_t"], tm["chol_t"])
            resid = y_blk - t_blk @ tm["map_t"].T - tm["offset"]
            quad = np.einsum("nd,d->n", resid * resid, tm["isig"])
            logdet = tm["log_sig_sum"]
            if lw:
                v = resid @ tm["scaled_loading"]          # (n, L_w)
                half = solve_triangular(tm["chol_m"], v.T, lower=True)
                quad = quad - np.einsum("ln,ln->n", half, half)
                logdet = logdet + tm["logdet_m"]
            out[:, i] = (tm["log_pi"] + log_t
                         - 0.5 * (d * linalg.LOG_2PI + logdet + quad))
        return out

    blocks = parallel.map_chunks(block, n, workers)
    log_joint = blocks[0] if len(blocks) == 1 else np.vstack(blocks)
    per_sample = logsumexp(log_joint, axis=1)
    bad = np.where(~np.isfinite(per_sample))[0]
    if bad.size:
        raise DegenerateInputError(
            f"non-finite log-density for sample indices {bad[:10].tolist()}"
            + ("..." if bad.size > 10 else ""))
    r = np.exp(log_joint - per_sample[:, None])
    total = math.fsum(per_sample.tolist())
    return Responsibilities(r=r), float(total), per_sample


def e_step_w(model: InverseModel, data: TrainingSet) -> LatentPosterior:
    """Latent posterior per component: S_k and mu_nk.

    S_k = (I + A^w^T Sigma^-1 A^w)^-1 and
    mu_nk = S_k A^w^T Sigma^-1 (y_n - A^t t_n - b_k).
    """
    lw = model.latent.latent_dim
    if lw == 0:
        raise ContractError("model has no latent coordinates")
    if data.target_dim != model.latent.observed_dim:
        raise ContractError("data target dimension does not match the model")
    targets, features = data.targets, data.features
    n, k = features.shape[0], model.n_components
    terms = _component_terms(model)
    covariances = np.empty((k, lw, lw))
    means = np.empty((n, k, lw))
    for i, tm in enumerate(terms):
        s = linalg.inv_spd(tm["chol_m"])
        covariances[i] = s
        resid = features - targets @ tm["map_t"].T - tm["offset"]
        means[:, i, :] = resid @ tm["scaled_loading"] @ s
    return LatentPosterior(covariances=covariances, means=means)


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------

def m_step_gmm(data: TrainingSet, resp: Responsibilities):
    """Weighted update of the observed output prior: priors, means, covariances."""
    targets = data.targets
    n = targets.shape[0]
    if resp.r.shape[0] != n:
        raise ContractError("responsibilities do not match the data")
    k = resp.n_components
    lt = targets.shape[1]
    priors = resp.r.sum(axis=0) / n
    means = resp.rho.T @ targets
    covariances = np.empty((k, lt, lt))
    for i in range(k):
        diff = targets - means[i]
        covariances[i] = linalg.symmetrize(
            (resp.rho[:, i][:, None] * diff).T @ diff)
    return priors, means, covariances


def m_step_mapping(data: TrainingSet, resp: Responsibilities,
                   lat: LatentPosterior, *, noise_floor: float | None = None,
                   workers: int = 1):
    """Weighted-least-squares update of the affine maps, offsets and noise.

    Per component the completed inputs x_nk = [t_n ; mu_nk] are centered with
    weights rho_nk; the normal equations gain the latent posterior covariance
    (zero-padded over the observed block) as a regularizer, and the noise
    picks up the propagated latent uncertainty diag(A^w S_k A^w^T).
    """
    targets, features = data.targets, data.features
    n, d = features.shape
    if resp.r.shape[0] != n or lat.means.shape[0] != n:
        raise ContractError("responsibilities/latent posterior do not match the data")
    if noise_floor is None:
        noise_floor = default_noise_floor(features)
    k = resp.n_components
    lt = targets.shape[1]
    lw = lat.latent_dim
    low = lt + lw
    maps = np.empty((k, d, low))
    offsets = np.empty((k, d))
    noise_vars = np.empty((k, d))
    for i in range(k):
        rho = resp.rho[:, i]
        sqrt_rho = np.sqrt(rho)
        x = np.hstack((targets, lat.means[:, i, :])) if lw else targets
        xbar = rho @ x
        ybar = rho @ features

        def gram(sl: slice, x=x, xbar=xbar, ybar=ybar, sqrt_rho=sqrt_rho):
            xc = (x[sl] - xbar) * sqrt_rho[sl, None]
            yc = (features[sl] - ybar) * sqrt_rho[sl, None]
            return xc.T @ xc, xc.T @ yc

        gxx, gxy = parallel.sum_chunks(parallel.map_chunks(gram, n, workers))
        if lw:
            gxx[lt:, lt:] += lat.covariances[i]
        chol_g = linalg.chol_spd(gxx, context="mapping normal equations",
                                 component=i)
        a = linalg.chol_solve(chol_g, gxy).T          # (D, L)
        b = ybar - a @ xbar
        maps[i] = a
        offsets[i] = b

        def sq_resid(sl: slice, x=x, a=a, b=b, rho=rho):
            resid = features[sl] - x[sl] @ a.T - b
            return rho[sl] @ (resid * resid)

        sig = parallel.sum_chunks(parallel.map_chunks(sq_resid, n, workers))
        if lw:
            loading = a[:, lt:]
            sig = sig + np.einsum("di,ij,dj->d", loading,
                                  lat.covariances[i], loading)
        noise_vars[i] = np.maximum(sig, noise_floor)
    return maps, offsets, noise_vars


def _rescue_covariance(matrix: np.ndarray, rel: float = 1e-9) -> np.ndarray:
    """Clip vanishing eigenvalues of a collapsed output-space scatter.

    A component concentrated on a handful of near-identical targets produces
    a singular covariance whose likelihood diverges; clipping its spectrum at
    ``rel`` times the top eigenvalue keeps the fit finite and invertible.
    Healthy matrices are returned unchanged (same object), so the exact
    M-step is untouched whenever the scatter has full rank.
    """
    eigvals, eigvecs = np.linalg.eigh(matrix)
    top = float(eigvals[-1])
    if top <= 0.0:
        return np.eye(matrix.shape[0])
    floor = top * rel
    if float(eigvals[0]) >= floor:
        return matrix
    clipped = np.maximum(eigvals, floor)
    return linalg.symmetrize((eigvecs * clipped) @ eigvecs.T)


def _rescue_covariances(covs_t: np.ndarray) -> tuple[np.ndarray, bool]:
    rescued = False
    for i in range(covs_t.shape[0]):
        original = covs_t[i]
        fixed = _rescue_covariance(original)
        if fixed is not original:
            covs_t[i] = fixed
            rescued = True
    return covs_t, rescued


def _assemble(priors, means_t, covs_t, maps, offsets, noise_vars,
              latent: LatentSpec) -> InverseModel:
    k = priors.shape[0]
    low = latent.total_dim
    lt = latent.observed_dim
    means = np.zeros((k, low))
    means[:, :lt] = means_t
    covariances = np.zeros((k, low, low))
    covariances[:, :lt, :lt] = covs_t
    if latent.latent_dim:
        covariances[:, lt:, lt:] = np.eye(latent.latent_dim)
    return InverseModel(priors=priors, means=means, covariances=covariances,
                        maps=maps, offsets=offsets, noise_vars=noise_vars,
                        latent=latent)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _kmeanspp_centers(points: np.ndarray, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    dist2 = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = float(dist2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))     # all remaining points coincide
        else:
            idx = int(rng.choice(n, p=dist2 / total))
        centers[j] = points[idx]
        dist2 = np.minimum(dist2, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def _init_gmm_responsibilities(joint: np.ndarray, cfg: TrainingConfig,
                               attempt: int) -> np.ndarray:
    """Diagonal-covariance GMM on standardized joint vectors; returns r_nk."""
    n, dim = joint.shape
    rng = np.random.default_rng([cfg.seed, attempt])
    scale = joint.std(axis=0)
    scale[scale == 0.0] = 1.0
    z = (joint - joint.mean(axis=0)) / scale
    k = cfg.n_components
    means = _kmeanspp_centers(z, k, rng)
    variances = np.ones((k, dim))
    log_w = np.full(k, -np.log(k))
    r = None
    for _ in range(cfg.init_gmm_iterations):
        logs = np.empty((n, k))
        for i in range(k):
            logs[:, i] = log_w[i] + linalg.gauss_logpdf_diag(
                z, means[i], variances[i])
        norm = logsumexp(logs, axis=1)
        r = np.exp(logs - norm[:, None])
        counts = r.sum(axis=0)
        if np.any(counts < 1e-9):
            raise TrainingFailedError("initial clustering collapsed")
        log_w = np.log(counts / n)
        means = (r.T @ z) / counts[:, None]
        second = (r.T @ (z * z)) / counts[:, None]
        variances = np.maximum(second - means ** 2, 1e-6)
    return r


def init_params(data: TrainingSet,
                cfg: TrainingConfig) -> tuple[InverseModel, Responsibilities]:
    """Deterministic starting point: clustering, then one closed-form M pass.

    A diagonal GMM (k-means++ seeded from ``cfg.seed``) on the joint [t; y]
    vectors yields initial responsibilities; the standard M-steps then give
    the output prior and per-component affine fits of y on t alone. Latent
    loadings start from the leading singular directions of the weighted
    regression residuals (scaled by the singular values), and the matching
    share of the residual variance is moved out of the noise. Collapsed
    clusterings are retried with a reseeded generator a few times before
    failing.
    """
    if cfg.latent.observed_dim != data.target_dim:
        raise ContractError("config latent spec does not match the target dimension")
    if cfg.n_components > data.n_samples:
        raise ContractError("more components than samples")
    joint = np.hstack((data.targets, data.features))
    last_error: Exception | None = None
    r = None
    for attempt in range(4):
        try:
            r = _init_gmm_responsibilities(joint, cfg, attempt)
            break
        except TrainingFailedError as exc:
            last_error = exc
    if r is None:
        raise TrainingFailedError(
            f"initial clustering failed after retries: {last_error}")
    resp = Responsibilities(r=r)
    floor = default_noise_floor(data.features, cfg.jitter_floor)
    priors, means_t, covs_t = m_step_gmm(data, resp)
    covs_t, _ = _rescue_covariances(covs_t)
    lat0 = LatentPosterior.empty(data.n_samples, cfg.n_components)
    maps_t, offsets, noise = m_step_mapping(data, resp, lat0,
                                            noise_floor=floor)
    lw = cfg.latent.latent_dim
    if lw == 0:
        model = _assemble(priors, means_t, covs_t, maps_t, offsets, noise,
                          cfg.latent)
        return model, resp

    d = data.feature_dim
    maps = np.empty((cfg.n_components, d, cfg.latent.total_dim))
    maps[:, :, :data.target_dim] = maps_t
    for i in range(cfg.n_components):
        resid = data.features - data.targets @ maps_t[i].T - offsets[i]
        weighted = np.sqrt(resp.rho[:, i])[:, None] * resid
        _, svals, vt = np.linalg.svd(weighted, full_matrices=False)
        loading = vt[:lw].T * svals[:lw]
        maps[i, :, data.target_dim:] = loading
        noise[i] = np.maximum(noise[i] - np.sum(loading ** 2, axis=1), floor)
    model = _assemble(priors, means_t, covs_t, maps, offsets, noise,
                      cfg.latent)
    return model, resp


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _canonical_order(data: TrainingSet) -> np.ndarray:
    """A content-determined total order of the samples.

    Rows are compared as raw byte strings of [t ; y]; any fixed total order
    works, it only has to be independent of how the caller enumerated the
    samples. Stable sort keeps duplicates deterministic too.
    """
    joint = np.ascontiguousarray(np.hstack((data.targets, data.features)))
    rows = joint.view(np.dtype((np.void, joint.dtype.itemsize * joint.shape[1])))
    return np.argsort(rows.ravel(), kind="stable")


def _reinit_weak_components(model: InverseModel, weak: np.ndarray,
                            data: TrainingSet,
                            per_sample_ll: np.ndarray) -> InverseModel:
    """Move starved components onto the lowest-density samples."""
    targets, features = data.targets, data.features
    n = targets.shape[0]
    lt = model.latent.observed_dim
    priors = model.priors.copy()
    means = model.means.copy()
    covariances = model.covariances.copy()
    maps = model.maps.copy()
    offsets = model.offsets.copy()
    noise_vars = model.noise_vars.copy()
    t_cov = linalg.symmetrize(np.cov(targets, rowvar=False, bias=True)
                              .reshape(lt, lt))
    t_cov += 1e-6 * (np.trace(t_cov) / lt + 1.0) * np.eye(lt)
    y_var = np.maximum(np.var(features, axis=0), 1e-6)
    order = np.argsort(per_sample_ll, kind="stable")
    strongest = int(np.argmax(priors))
    for j, k in enumerate(weak):
        target_idx = int(order[j % n])
        means[k, :lt] = targets[target_idx]
        covariances[k, :lt, :lt] = t_cov
        maps[k] = maps[strongest]
        offsets[k] = features[target_idx] - maps[strongest][:, :lt] @ targets[target_idx]
        noise_vars[k] = y_var
        priors[k] = 1.0 / n
    priors /= priors.sum()
    return InverseModel(priors=priors, means=means, covariances=covariances,
                        maps=maps, offsets=offsets, noise_vars=noise_vars,
                        latent=model.latent)


def _drop_components(model: InverseModel, drop: np.ndarray) -> InverseModel:
    keep = np.setdiff1d(np.arange(model.n_components), drop)
    if keep.size == 0:
        raise TrainingFailedError("all mixture components collapsed")
    priors = model.priors[keep]
    priors = priors / priors.sum()
    return InverseModel(priors=priors, means=model.means[keep],
                        covariances=model.covariances[keep],
                        maps=model.maps[keep], offsets=model.offsets[keep],
                        noise_vars=model.noise_vars[keep], latent=model.latent)


def train(data: TrainingSet, cfg: TrainingConfig, *,
          workers: int = 1) -> TrainResult:
    """Fit the inverse mixture by EM.

    Stops when the relative observed-data log-likelihood improvement falls
    below ``cfg.tolerance`` or after ``cfg.max_iterations``. Components whose
    effective count drops below ``cfg.empty_threshold`` are reinitialized at
    the lowest-density sample, and dropped (with priors renormalized) after
    three reinitializations. A log-likelihood decrease beyond numerical
    tolerance raises :class:`InternalConsistencyError`, except on the
    iteration right after such a surgery.
    """
    order = _canonical_order(data)
    data = TrainingSet(features=data.features[order],
                       targets=data.targets[order])
    model, _ = init_params(data, cfg)
    floor = default_noise_floor(data.features, cfg.jitter_floor)
    lw = cfg.latent.latent_dim
    reinit_counts = np.zeros(cfg.n_components, dtype=int)
    history: list[IterationRecord] = []
    prev_ll = -np.inf
    guard_suspended = False
    converged = False
    for iteration in range(1, cfg.max_iterations + 1):
        resp, ll, per_sample = _e_step_z_full(model, data, workers=workers)
        counts = resp.counts
        history.append(IterationRecord(iteration=iteration,
                                       log_likelihood=ll,
                                       counts=tuple(float(c) for c in counts)))
        if np.isfinite(prev_ll) and not guard_suspended:
            scale = max(1.0, abs(prev_ll))
            if ll < prev_ll - 1e-6 * scale:
                raise InternalConsistencyError(
                    f"log-likelihood decreased from {prev_ll:.10g} to "
                    f"{ll:.10g} at iteration {iteration}")
            if abs(ll - prev_ll) <= cfg.tolerance * scale:
                converged = True
                break
        prev_ll = ll
        guard_suspended = False

        weak = np.where(counts < cfg.empty_threshold)[0]
        if weak.size:
            reinit_counts[weak] += 1
            exhausted = weak[reinit_counts[weak] > MAX_REINITS]
            if exhausted.size:
                model = _drop_components(model, exhausted)
                keep = np.setdiff1d(np.arange(reinit_counts.shape[0]), exhausted)
                reinit_counts = reinit_counts[keep]
            else:
                model = _reinit_weak_components(model, weak, data, per_sample)
            guard_suspended = True
            continue

        lat = (e_step_w(model, data) if lw
               else LatentPosterior.empty(data.n_samples, model.n_components))
        priors, means_t, covs_t = m_step_gmm(data, resp)
        covs_t, rescued = _rescue_covariances(covs_t)
        if rescued:
            guard_suspended = True     # the clipped step is not the exact argmax
        maps, offsets, noise = m_step_mapping(data, resp, lat,
                                              noise_floor=floor,
                                              workers=workers)
        model = _assemble(priors, means_t, covs_t, maps, offsets, noise,
                          cfg.latent)
    return TrainResult(model=model, history=tuple(history),
                       converged=converged)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

def free_parameter_count(n_components: int, feature_dim: int,
                         latent: LatentSpec) -> int:
    """Number of free scalar parameters of the inverse mixture.

    Per component: observed mean (L_t), observed covariance (L_t(L_t+1)/2),
    affine map (D * L), offset (D) and noise diagonal (D); plus K - 1 free
    mixture weights. The pinned latent prior contributes nothing.
    """
    lt = latent.observed_dim
    low = latent.total_dim
    per = lt + lt * (lt + 1) // 2 + feature_dim * low + 2 * feature_dim
    return (n_components - 1) + n_components * per


def bic(model: InverseModel, data: TrainingSet, *,
        workers: int = 1) -> BicResult:
    """Bayesian information criterion of a trained model on a dataset.

    ``score`` is -2 log L + M log N; ``normalized`` divides by N (D + L_t) so
    values stay comparable across dataset sizes. Selection by argmin over K
    gives the same answer for both on a fixed dataset.
    """
    _, ll = e_step_z(model, data, workers=workers)
    m = free_parameter_count(model.n_components, model.feature_dim,
                             model.latent)
    n = data.n_samples
    score = -2.0 * ll + m * math.log(n)
    normalized = score / (n * (model.feature_dim + model.latent.observed_dim))
    return BicResult(score=score, normalized=normalized, log_likelihood=ll,
                     free_parameters=m)


def sweep_components(data: TrainingSet, cfg: TrainingConfig,
                     k_values, *, workers: int = 1) -> list[SweepRecord]:
    """Train once per candidate K and score each fit with BIC.

    A failure at one K is recorded on its row and the sweep continues.
    """
    records = []
    for k in k_values:
        start = time.perf_counter()
        try:
            result = train(data, replace(cfg, n_components=int(k)),
                           workers=workers)
            score = bic(result.model, data, workers=workers)
            records.append(SweepRecord(n_components=int(k), bic=score,
                                       seconds=time.perf_counter() - start))
        except Exception as exc:   # recorded, not raised: sweep must finish
            records.append(SweepRecord(n_components=int(k), bic=None,
                                       seconds=time.perf_counter() - start,
                                       error=f"{type(exc).__name__}: {exc}"))
    return records
