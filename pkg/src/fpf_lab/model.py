"""State-space model and particle-ensemble containers.

The continuous-time model is

    dX_t = a(X_t) dt + sigma_b dB_t        (state, R^d)
    dZ_t = h(X_t) dt + dW_t                (scalar observation path)

with observations delivered in sampled form y_n = h(X_{t_n}) + w_n,
w_n ~ N(0, 1/dt), and increment dz_n = y_n * dt (so Var(dz) = dt and the
continuum limit is recovered as dt -> 0).

All model callables are vectorized over an ensemble: drift maps (N, d) ->
(N, d) and the observation function maps (N, d) -> (N,).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng


class ModelValidationError(ValueError):
    """A model or ensemble precondition does not hold."""


@dataclass
class SdeModel:
    """Diffusion state model with a scalar observation function.

    Attributes:
        dim: state dimension d >= 1
        drift: a(x), maps (N, d) -> (N, d)
        diffusion: constant matrix sigma_b, shape (d, d)
        obs: h(x), maps (N, d) -> (N,)
        obs_grad: optional gradient of h, maps (N, d) -> (N, d); when absent
            a central finite difference with per-component step
            1e-5 * max(1, |x_i|) is used
        drift_matrix: F for affine drift a(x) = F x, when the model is linear
            (enables the closed-form reference filter); None otherwise
        obs_vector: H for affine observation h(x) = H^T x + obs_offset, when
            applicable (enables the closed-form gain); None otherwise
        obs_offset: scalar offset of an affine observation function
        name: registry label, informational only
    """

    dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: np.ndarray
    obs: Callable[[np.ndarray], np.ndarray]
    obs_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    drift_matrix: Optional[np.ndarray] = None
    obs_vector: Optional[np.ndarray] = None
    obs_offset: float = 0.0
    name: str = ""

    def drift_at(self, states: np.ndarray) -> np.ndarray:
        out = np.asarray(self.drift(states), dtype=float)
        if out.shape != states.shape:
            raise ModelValidationError(
                f"drift returned shape {out.shape}, expected {states.shape}")
        return out

    def obs_at(self, states: np.ndarray) -> np.ndarray:
        out = np.asarray(self.obs(states), dtype=float).reshape(-1)
        if out.shape[0] != states.shape[0]:
            raise ModelValidationError(
                f"obs returned {out.shape[0]} values for {states.shape[0]} states")
        return out

    def obs_grad_at(self, states: np.ndarray) -> np.ndarray:
        """Gradient of h at each state, shape (N, d)."""
        if self.obs_grad is not None:
            out = np.asarray(self.obs_grad(states), dtype=float)
            if out.ndim == 1:
                out = out.reshape(-1, 1)
            if out.shape != states.shape:
                raise ModelValidationError(
                    f"obs_grad returned shape {out.shape}, expected {states.shape}")
            return out
        grad = np.empty_like(states)
        for i in range(self.dim):
            step = 1e-5 * np.maximum(1.0, np.abs(states[:, i]))
            hi = states.copy()
            lo = states.copy()
            hi[:, i] += step
            lo[:, i] -= step
            grad[:, i] = (self.obs_at(hi) - self.obs_at(lo)) / (2.0 * step)
        return grad


@dataclass
class ParticleEnsemble:
    """Equally-weighted particle cloud plus its noise-stream bookkeeping.

    Attributes:
        states: (N, d) particle positions
        time: current simulation time
        seed: base seed of the noise streams
        streams: (N,) per-particle stream ids (relabel together with states)
        draw_step: index of the next noise block to consume
    """

    states: np.ndarray
    time: float
    seed: int
    streams: np.ndarray
    draw_step: int = 0

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def draw_normals(self, n_slots: int) -> np.ndarray:
        """Consume one noise block: (N, n_slots) standard normals."""
        z = rng.standard_normal(self.seed, self.streams, self.draw_step, n_slots)
        self.draw_step += 1
        return z


@dataclass
class PosteriorStats:
    """Empirical summary of an ensemble under an observation function."""

    mean: np.ndarray          # (d,)
    cov: np.ndarray           # (d, d), unbiased (N-1) normalization
    h_hat: float              # mean of h over particles
    h_vals: np.ndarray        # (N,)


def validate_model(model: SdeModel) -> None:
    """Raise ModelValidationError unless the model is usable.

    Checks shapes and finiteness of drift/obs/diffusion at a fixed probe set
    (origin plus a few seeded points in [-1, 1]^d).
    """
    d = model.dim
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ModelValidationError(f"dim must be a positive integer, got {d!r}")
    sig = np.asarray(model.diffusion, dtype=float)
    if sig.shape != (d, d):
        raise ModelValidationError(
            f"diffusion must have shape ({d}, {d}), got {sig.shape}")
    if not np.all(np.isfinite(sig)):
        raise ModelValidationError("diffusion contains non-finite entries")

    probes = np.vstack([np.zeros((1, d)),
                        rng.standard_normal(2024, np.arange(4), 0, d) * 0.5])
    a = model.drift_at(probes)
    if not np.all(np.isfinite(a)):
        raise ModelValidationError("drift is non-finite at probe points")
    h = model.obs_at(probes)
    if not np.all(np.isfinite(h)):
        raise ModelValidationError("obs is non-finite at probe points")
    g = model.obs_grad_at(probes)
    if not np.all(np.isfinite(g)):
        raise ModelValidationError("obs gradient is non-finite at probe points")

    if model.drift_matrix is not None:
        F = np.asarray(model.drift_matrix, dtype=float)
        if F.shape != (d, d):
            raise ModelValidationError(
                f"drift_matrix must have shape ({d}, {d}), got {F.shape}")
    if model.obs_vector is not None:
        H = np.asarray(model.obs_vector, dtype=float).reshape(-1)
        if H.shape != (d,):
            raise ModelValidationError(
                f"obs_vector must have shape ({d},), got {H.shape}")


def covariance_sqrt(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Accepts rank-deficient covariances (a zero matrix yields a zero factor,
    so degenerate initial ensembles collapse onto the mean exactly).
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 0:
        cov = cov.reshape(1, 1)
    if not np.allclose(cov, cov.T, atol=1e-12):
        raise ModelValidationError("covariance must be symmetric")
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.min(w) < -1e-10 * max(1.0, np.max(np.abs(w))):
        raise ModelValidationError("covariance must be positive semidefinite")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def sample_initial_ensemble(dim: int, n: int, mean, cov, seed: int) -> ParticleEnsemble:
    """Gaussian ensemble at time 0 with per-particle noise streams 0..N-1."""
    if n < 2:
        raise ModelValidationError(f"need at least 2 particles, got {n}")
    mean = np.broadcast_to(np.asarray(mean, dtype=float).reshape(-1), (dim,))
    root = covariance_sqrt(cov)
    if root.shape != (dim, dim):
        raise ModelValidationError(
            f"init covariance must have shape ({dim}, {dim}), got {root.shape}")
    streams = np.arange(n, dtype=np.uint64)
    z = rng.standard_normal(seed, streams, 0, dim)
    states = mean + z @ root.T
    return ParticleEnsemble(states=states, time=0.0, seed=seed,
                            streams=streams, draw_step=1)


def ensemble_stats(ensemble: ParticleEnsemble,
                   obs_fn: Callable[[np.ndarray], np.ndarray]) -> PosteriorStats:
    """Mean, unbiased covariance, and observation average of an ensemble."""
    x = ensemble.states
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    h_vals = np.asarray(obs_fn(x), dtype=float).reshape(-1)
    return PosteriorStats(mean=mean, cov=cov, h_hat=float(h_vals.mean()),
                          h_vals=h_vals)
