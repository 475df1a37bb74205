"""
Two directions of one mixture of affine maps
============================================

The library models a high-dimensional feature vector y as an affine
function of a low-dimensional output x, picked per mixture component:
y = A_k x + b_k + noise. That direction is cheap to estimate because
each regression goes from few to many coordinates. The direction we
actually want at prediction time, x given y, comes out in closed form:
the same mixture, with every Gaussian block converted analytically.

This script builds a small random model, derives its forward twin, and
checks on sampled points that both parameterizations describe the same
joint density.
"""
import numpy as np

from hgllim import (GeneratorSpec, derive_forward, forward_log_weights,
                    joint_log_density, predict_mean, random_model, sample)

# ------- an inverse (low-to-high) model with one latent output
# 3 components, 6 feature dimensions, 2 observed outputs, 1 latent output
model = random_model(3, 6, 2, 1, seed=4)
print("inverse model:")
print("  components:", model.n_components)
print("  feature dim:", model.feature_dim)
print("  output dim :", model.latent.total_dim,
      f"({model.latent.observed_dim} observed + "
      f"{model.latent.latent_dim} latent)")

# ------- the analytic conversion
fwd = derive_forward(model)
print("\nforward model (same mixture, roles swapped):")
print("  gate centers shape   :", fwd.means.shape)
print("  forward maps shape   :", fwd.maps.shape)
print("  posterior covariances:", fwd.noise_covs.shape)

# ------- both directions integrate to the same joint density
draw = sample(GeneratorSpec(model=model, n_samples=5, seed=11))
x, y = draw.outputs, draw.training.features

log_joint = joint_log_density(model, x, y)
print("\nlog p(x, y) from the inverse parameterization:")
print(" ", np.array2string(log_joint, precision=4))

# the forward factorization p(y) * p(x | y), assembled by hand
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

gates = forward_log_weights(fwd, y)
log_py = np.full(5, -np.inf)
log_pxy = np.full((5, fwd.n_components), -np.inf)
for k in range(fwd.n_components):
    marginal = multivariate_normal(mean=fwd.means[k], cov=fwd.covariances[k])
    log_py = np.logaddexp(log_py, np.log(fwd.priors[k]) + marginal.logpdf(y))
    centered = x - (y @ fwd.maps[k].T + fwd.offsets[k])
    conditional = multivariate_normal(mean=np.zeros(x.shape[1]),
                                      cov=fwd.noise_covs[k])
    log_pxy[:, k] = gates[:, k] + conditional.logpdf(centered)
factored = log_py + logsumexp(log_pxy, axis=1)
print("log p(y) + log p(x|y) from the forward parameterization:")
print(" ", np.array2string(factored, precision=4))
print("max abs difference:", float(np.abs(factored - log_joint).max()))

# ------- prediction is the forward mixture's mean
predicted = predict_mean(fwd, y)
print("\nposterior-mean prediction vs the sampled outputs:")
for n in range(5):
    shown = np.array2string(x[n], precision=3, suppress_small=True)
    guess = np.array2string(predicted[n], precision=3, suppress_small=True)
    print(f"  true {shown:28s} predicted {guess}")
