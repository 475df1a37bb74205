"""Mixture-of-affine regression model: parameters, conversion, prediction.

The generative story is low-to-high: a low-dimensional output vector
``x = [t; w]`` (observed part ``t``, optionally a latent part ``w``) is mapped
into a high-dimensional feature vector ``y`` by one of K affine components,

    y = A_k x + b_k + e_k,      e_k ~ N(0, Sigma_k)  (Sigma_k diagonal),
    x | Z=k ~ N(c_k, Gamma_k),  P(Z=k) = pi_k.

Training estimates these inverse (low-to-high) parameters, because D-by-L
affine maps are far cheaper to estimate than L-by-D maps when D >> L. For
prediction the mixture is converted in closed form into the forward
(high-to-low) conditional p(x | y), another mixture of affine experts; the
predictor is its mean. When ``w`` is present, identifiability is fixed by
pinning its prior to N(0, I), so all scale/rotation of the latent part lives
in the corresponding columns of A_k.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import linalg
from .errors import ContractError, DegenerateInputError, IllConditionedModelError

__all__ = [
    "LatentSpec", "OutputLayout", "TrainingSet", "InverseModel",
    "ForwardModel", "derive_forward", "forward_weights", "predict_mean",
    "joint_log_density",
]


@dataclass(frozen=True)
class LatentSpec:
    """Split of the output vector into observed and latent coordinates."""

    observed_dim: int
    latent_dim: int = 0

    def __post_init__(self):
        if self.observed_dim < 1:
            raise ContractError("observed_dim must be >= 1")
        if self.latent_dim < 0:
            raise ContractError("latent_dim must be >= 0")

    @property
    def total_dim(self) -> int:
        return self.observed_dim + self.latent_dim

    @property
    def observed(self) -> slice:
        return slice(0, self.observed_dim)

    @property
    def latent(self) -> slice:
        return slice(self.observed_dim, self.total_dim)


@dataclass(frozen=True)
class OutputLayout:
    """Partition of the observed output into pose angles and a box shift.

    The observed part of the output vector is laid out as
    ``[angles (n_angles) | shift (2 if has_shift)]``. Models trained without
    box-shift targets use ``has_shift=False``.
    """

    n_angles: int
    has_shift: bool = False

    def __post_init__(self):
        if self.n_angles < 0:
            raise ContractError("n_angles must be >= 0")
        if self.observed_dim < 1:
            raise ContractError("layout describes an empty observed vector")

    @property
    def observed_dim(self) -> int:
        return self.n_angles + (2 if self.has_shift else 0)

    @property
    def angles(self) -> slice:
        return slice(0, self.n_angles)

    @property
    def shift(self) -> slice:
        return slice(self.n_angles, self.n_angles + 2)


def _as_float_matrix(value, name: str, ndim: int) -> np.ndarray:
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


@dataclass(frozen=True)
class TrainingSet:
    """Paired feature/target arrays plus optional per-sample metadata.

    ``features`` is the high-dimensional side (N, D); ``targets`` the observed
    low-dimensional side (N, L_t). ``person_ids`` and ``sources`` are opaque
    per-sample labels used by the evaluation pipeline (leave-one-out folds,
    reporting); the trainer ignores them.
    """

    features: np.ndarray
    targets: np.ndarray
    person_ids: tuple | None = None
    sources: tuple | None = None

    def __post_init__(self):
        features = _as_float_matrix(self.features, "features", 2)
        targets = _as_float_matrix(self.targets, "targets", 2)
        if features.shape[0] != targets.shape[0]:
            raise ContractError(
                f"features ({features.shape[0]} rows) and targets "
                f"({targets.shape[0]} rows) disagree on sample count")
        if features.shape[0] == 0:
            raise ContractError("training set is empty")
        for name in ("person_ids", "sources"):
            meta = getattr(self, name)
            if meta is not None and len(meta) != features.shape[0]:
                raise ContractError(f"{name} length does not match sample count")
        features.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]


def _freeze_stack(value, name: str, ndim: int) -> np.ndarray:
    arr = _as_float_matrix(value, name, ndim)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class InverseModel:
    """Estimated low-to-high mixture parameters.

    Arrays are stacked over the K components:

    ==============  ===========  =====================================
    field           shape        meaning
    ==============  ===========  =====================================
    priors          (K,)         mixture weights pi_k
    means           (K, L)       output means c_k
    covariances     (K, L, L)    output covariances Gamma_k
    maps            (K, D, L)    affine maps A_k
    offsets         (K, D)       affine offsets b_k
    noise_vars      (K, D)       diagonals of the noise covariances
    ==============  ===========  =====================================

    When ``latent.latent_dim > 0`` the latent block is pinned: the latent part
    of every mean is exactly zero, the latent-latent covariance block is
    exactly the identity and the cross block exactly zero. Instances are
    immutable and validated on construction; Cholesky factors of the
    covariances are cached.
    """

    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    maps: np.ndarray
    offsets: np.ndarray
    noise_vars: np.ndarray
    latent: LatentSpec
    _chol_cov: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        priors = _freeze_stack(self.priors, "priors", 1)
        means = _freeze_stack(self.means, "means", 2)
        covariances = _freeze_stack(self.covariances, "covariances", 3)
        maps = _freeze_stack(self.maps, "maps", 3)
        offsets = _freeze_stack(self.offsets, "offsets", 2)
        noise_vars = _freeze_stack(self.noise_vars, "noise_vars", 2)
        k = priors.shape[0]
        if k < 1:
            raise ContractError("model needs at least one component")
        low = self.latent.total_dim
        high = maps.shape[1]
        expected = (
            ("means", means, (k, low)),
            ("covariances", covariances, (k, low, low)),
            ("maps", maps, (k, high, low)),
            ("offsets", offsets, (k, high)),
            ("noise_vars", noise_vars, (k, high)),
        )
        for name, arr, shape in expected:
            if arr.shape != shape:
                raise ContractError(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(priors <= 0.0):
            raise ContractError("priors must be strictly positive")
        if abs(float(priors.sum()) - 1.0) > 1e-8:
            raise ContractError("priors must sum to 1")
        if np.any(noise_vars <= 0.0):
            raise ContractError("noise variances must be strictly positive")
        lw = self.latent.latent_dim
        if lw > 0:
            lt = self.latent.observed_dim
            eye = np.eye(lw)
            if not (np.all(means[:, lt:] == 0.0)
                    and all(np.array_equal(covariances[i, lt:, lt:], eye)
                            for i in range(k))
                    and np.all(covariances[:, :lt, lt:] == 0.0)
                    and np.all(covariances[:, lt:, :lt] == 0.0)):
                raise ContractError(
                    "latent block must be pinned: zero mean, identity "
                    "covariance, zero cross-covariance")
        chols = np.empty_like(covariances)
        for i in range(k):
            chols[i] = linalg.chol_spd(covariances[i], context="output covariance",
                                       component=i)
        chols.setflags(write=False)
        for name, arr in (("priors", priors), ("means", means),
                          ("covariances", covariances), ("maps", maps),
                          ("offsets", offsets), ("noise_vars", noise_vars),
                          ("_chol_cov", chols)):
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.priors.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.maps.shape[1]

    # Observed-block views used by the trainer and densities.
    @property
    def observed_means(self) -> np.ndarray:
        return self.means[:, self.latent.observed]

    @property
    def observed_covariances(self) -> np.ndarray:
        return self.covariances[:, self.latent.observed, self.latent.observed]

    @property
    def observed_maps(self) -> np.ndarray:
        return self.maps[:, :, self.latent.observed]

    @property
    def latent_maps(self) -> np.ndarray:
        return self.maps[:, :, self.latent.latent]

    def chol_observed_cov(self, k: int) -> np.ndarray:
        # Gamma_k is block-diagonal, so the leading block of its Cholesky
        # factor is the factor of the observed block.
        lt = self.latent.observed_dim
        return self._chol_cov[k][:lt, :lt]


@dataclass(frozen=True)
class ForwardModel:
    """Closed-form high-to-low predictive mixture derived from an inverse model.

    p(x | y) = sum_k nu_k(y) N(x; A*_k y + b*_k, Sigma*_k), with gate weights
    nu_k(y) proportional to pi*_k N(y; c*_k, Gamma*_k). Shapes mirror
    :class:`InverseModel` with the roles of the two spaces swapped.
    """

    priors: np.ndarray        # (K,)
    means: np.ndarray         # (K, D)   feature-space centers c*_k
    covariances: np.ndarray   # (K, D, D) feature-space covariances Gamma*_k
    maps: np.ndarray          # (K, L, D) forward maps A*_k
    offsets: np.ndarray       # (K, L)    forward offsets b*_k
    noise_covs: np.ndarray    # (K, L, L) forward conditional covariances
    latent: LatentSpec
    _chol_cov: np.ndarray = field(init=False, repr=False, compare=False)
    _cov_logdet: np.ndarray = field(init=False, repr=False, compare=False)
    _log_priors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        priors = _freeze_stack(self.priors, "priors", 1)
        means = _freeze_stack(self.means, "means", 2)
        covariances = _freeze_stack(self.covariances, "covariances", 3)
        maps = _freeze_stack(self.maps, "maps", 3)
        offsets = _freeze_stack(self.offsets, "offsets", 2)
        noise_covs = _freeze_stack(self.noise_covs, "noise_covs", 3)
        k = priors.shape[0]
        if np.any(priors <= 0.0) or abs(float(priors.sum()) - 1.0) > 1e-8:
            raise ContractError("priors must be positive and sum to 1")
        chols = np.empty_like(covariances)
        logdets = np.empty(k)
        for i in range(k):
            chols[i] = linalg.chol_spd(covariances[i], context="feature covariance",
                                       component=i)
            logdets[i] = linalg.chol_logdet(chols[i])
        for arr in (chols, logdets):
            arr.setflags(write=False)
        log_priors = np.log(priors)
        log_priors.setflags(write=False)
        for name, arr in (("priors", priors), ("means", means),
                          ("covariances", covariances), ("maps", maps),
                          ("offsets", offsets), ("noise_covs", noise_covs),
                          ("_chol_cov", chols), ("_cov_logdet", logdets),
                          ("_log_priors", log_priors)):
            object.__setattr__(self, name, arr)

    @property
    def n_components(self) -> int:
        return self.priors.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[1]

    @property
    def output_dim(self) -> int:
        return self.maps.shape[1]


def derive_forward(model: InverseModel, *,
                   condition_cap: float = 1e12) -> ForwardModel:
    """Convert inverse (low-to-high) parameters to the forward predictive mixture.

    Per component, with S = Sigma_k (diagonal), G = Gamma_k, A = A_k:

        c*      = A c + b
        Gamma*  = S + A G A^T
        Sigma*  = (G^-1 + A^T S^-1 A)^-1
        A*      = Sigma* A^T S^-1
        b*      = Sigma* (G^-1 c - A^T S^-1 b)

    Raises :class:`IllConditionedModelError` when Gamma_k or Sigma_k has a
    condition number above ``condition_cap``, naming the component.
    """
    k, high = model.n_components, model.feature_dim
    low = model.latent.total_dim
    means = np.empty((k, high))
    covariances = np.empty((k, high, high))
    maps = np.empty((k, low, high))
    offsets = np.empty((k, low))
    noise_covs = np.empty((k, low, low))
    for i in range(k):
        sig = model.noise_vars[i]
        if float(sig.max() / sig.min()) > condition_cap:
            raise IllConditionedModelError(
                "noise covariance condition number exceeds the cap", i)
        gamma = model.covariances[i]
        if linalg.condition_number_spd(gamma) > condition_cap:
            raise IllConditionedModelError(
                "output covariance condition number exceeds the cap", i)
        a = model.maps[i]
        b = model.offsets[i]
        c = model.means[i]
        chol_g = model._chol_cov[i]
        at_sinv = a.T / sig                      # A^T S^-1, (L, D)
        gram = linalg.symmetrize(at_sinv @ a)    # A^T S^-1 A
        precision = linalg.inv_spd(chol_g) + gram
        chol_p = linalg.chol_spd(precision, context="forward precision",
                                 component=i)
        star = linalg.inv_spd(chol_p)
        noise_covs[i] = star
        maps[i] = star @ at_sinv
        offsets[i] = star @ (linalg.chol_solve(chol_g, c) - at_sinv @ b)
        means[i] = a @ c + b
        covariances[i] = linalg.symmetrize(a @ gamma @ a.T)
        covariances[i][np.diag_indices(high)] += sig
    return ForwardModel(priors=model.priors.copy(), means=means,
                        covariances=covariances, maps=maps, offsets=offsets,
                        noise_covs=noise_covs, latent=model.latent)


def _check_features(fwd_or_dim, points) -> tuple[np.ndarray, bool]:
    dim = fwd_or_dim if isinstance(fwd_or_dim, int) else fwd_or_dim.feature_dim
    arr = np.asarray(points, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ContractError(
            f"feature vectors must have dimension {dim}, got shape "
            f"{np.asarray(points).shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError("feature vectors contain non-finite values")
    return arr, single


def forward_log_weights(fwd: ForwardModel, features) -> np.ndarray:
    """Unnormalized-then-normalized log gate weights log nu_k(y)."""
    pts, single = _check_features(fwd, features)
    n, k = pts.shape[0], fwd.n_components
    logs = np.empty((n, k))
    for i in range(k):
        logs[:, i] = fwd._log_priors[i] + linalg.gauss_logpdf(
            pts, fwd.means[i], fwd._chol_cov[i])
    norm = logsumexp(logs, axis=1)
    if not np.all(np.isfinite(norm)):
        raise DegenerateInputError(
            "all mixture weights underflowed for at least one feature vector")
    out = logs - norm[:, None]
    return out[0] if single else out


def forward_weights(fwd: ForwardModel, features) -> np.ndarray:
    """Posterior gate weights nu_k(y); rows sum to 1."""
    return np.exp(forward_log_weights(fwd, features))


def predict_mean(fwd: ForwardModel, features) -> np.ndarray:
    """Posterior mean E[x | y] = sum_k nu_k(y) (A*_k y + b*_k)."""
    pts, single = _check_features(fwd, features)
    weights = np.exp(forward_log_weights(fwd, pts))
    experts = np.einsum("kld,nd->nkl", fwd.maps, pts) + fwd.offsets[None]
    out = np.einsum("nk,nkl->nl", weights, experts)
    return out[0] if single else out


def joint_log_density(model: InverseModel, outputs, features) -> np.ndarray:
    """log p(x, y) under the inverse parameterization.

    ``outputs`` are full output vectors x = [t; w] of dimension L;
    ``features`` the matching y. Accepts single vectors or row-stacked
    batches of equal length.
    """
    x = np.asarray(outputs, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    y, _ = _check_features(model.feature_dim, features)
    if x.shape[1] != model.latent.total_dim:
        raise ContractError(
            f"output vectors must have dimension {model.latent.total_dim}, "
            f"got shape {np.asarray(outputs).shape}")
    if x.shape[0] != y.shape[0]:
        raise ContractError("outputs and features disagree on batch size")
    if not np.all(np.isfinite(x)):
        raise ContractError("output vectors contain non-finite values")
    n, k = x.shape[0], model.n_components
    logs = np.empty((n, k))
    for i in range(k):
        mean_y = x @ model.maps[i].T + model.offsets[i]
        diff = y - mean_y
        quad = np.einsum("nd,d->n", diff * diff, 1.0 / model.noise_vars[i])
        log_y = -0.5 * (model.feature_dim * linalg.LOG_2PI
                        + float(np.sum(np.log(model.noise_vars[i]))) + quad)
        log_x = linalg.gauss_logpdf(x, model.means[i], model._chol_cov[i])
        logs[:, i] = np.log(model.priors[i]) + log_x + log_y
    out = logsumexp(logs, axis=1)
    return out[0] if single else out
