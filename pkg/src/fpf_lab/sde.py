"""Euler-Maruyama propagation, truth paths, and sampled observations.

File formats (all CSV with header row, values formatted with %.12g):

    truth:        t,x_1,...,x_d       one row per time 0, dt, ..., T
    observations: t,y,dz              one row per observation time dt, ..., T

The sampled observation at t_n is y_n = h(x(t_n)) + w_n with
w_n ~ N(0, 1/dt); the filter-facing increment is dz_n = y_n * dt.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .model import ParticleEnsemble, SdeModel

_FMT = "%.12g"


@dataclass
class TruthPath:
    """A single state trajectory on the uniform grid t_k = k * dt."""

    times: np.ndarray   # (M+1,)
    states: np.ndarray  # (M+1, d)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass
class ObservationSet:
    """Sampled observations y_n and increments dz_n at times dt..T."""

    times: np.ndarray  # (M,)
    y: np.ndarray      # (M,)
    dz: np.ndarray     # (M,)

    def __len__(self) -> int:
        return len(self.times)


def euler_maruyama_step(model: SdeModel, ensemble: ParticleEnsemble,
                        dt: float) -> ParticleEnsemble:
    """Propagate every particle by one Euler-Maruyama step (in place).

    X <- X + a(X) dt + sigma_b dB,  dB ~ N(0, dt I) independently per particle.
    """
    x = ensemble.states
    dw = ensemble.draw_normals(ensemble.dim) * np.sqrt(dt)
    ensemble.states = x + model.drift_at(x) * dt + dw @ np.asarray(
        model.diffusion, dtype=float).T
    ensemble.time += dt
    return ensemble


def simulate_truth(model: SdeModel, x0, dt: float, t_final: float,
                   seed: int) -> TruthPath:
    """Simulate one Euler-Maruyama path of the state equation."""
    if dt <= 0 or t_final <= 0:
        raise ValueError("dt and t_final must be positive")
    n_steps = int(round(t_final / dt))
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (model.dim,):
        raise ValueError(f"x0 must have shape ({model.dim},), got {x0.shape}")

    path = ParticleEnsemble(states=x0.reshape(1, -1).copy(), time=0.0,
                            seed=seed, streams=np.zeros(1, dtype=np.uint64))
    states = np.empty((n_steps + 1, model.dim))
    states[0] = x0
    for k in range(n_steps):
        euler_maruyama_step(model, path, dt)
        states[k + 1] = path.states[0]
    times = np.arange(n_steps + 1) * dt
    return TruthPath(times=times, states=states)


def synthesize_observations(model: SdeModel, truth: TruthPath,
                            seed: int) -> ObservationSet:
    """Draw y_n = h(x(t_n)) + w_n, w_n ~ N(0, 1/dt), at t_n = dt..T."""
    dt = truth.dt
    h = model.obs_at(truth.states[1:])
    w = rng.normal_scalar_stream(seed, stream_id=0, step=0, n=len(h))
    y = h + w / np.sqrt(dt)
    return ObservationSet(times=truth.times[1:].copy(), y=y, dz=y * dt)


def write_truth_csv(path: str, truth: TruthPath) -> None:
    d = truth.states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(d)])
        for t, x in zip(truth.times, truth.states):
            writer.writerow([_FMT % t] + [_FMT % xi for xi in x])


def read_truth_csv(path: str) -> TruthPath:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return TruthPath(times=data[:, 0], states=data[:, 1:])


def write_observations_csv(path: str, obs: ObservationSet) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y", "dz"])
        for t, y, dz in zip(obs.times, obs.y, obs.dz):
            writer.writerow([_FMT % t, _FMT % y, _FMT % dz])


def read_observations_csv(path: str) -> ObservationSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return ObservationSet(times=data[:, 0], y=data[:, 1], dz=data[:, 2])
