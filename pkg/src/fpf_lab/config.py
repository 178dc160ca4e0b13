"""Experiment configuration files.

Format: flat key = value pairs under bracketed section headers (INI). A
minimal run configuration looks like

    [model]
    name = linear1d

    [time]
    dt = 0.01
    t_end = 5.0

    [filter]
    n_particles = 1000
    gain = exact_gaussian

    [seeds]
    truth = 11
    observation = 12
    filter = 13

    [output]
    dir = out

Instead of a registry name, a model can be given inline as polynomials in
x1..xd (terms joined by + / -, factors by *, powers by ^):

    [model]
    dimension = 2
    drift_1 = -1.0*x1 + 0.5*x2
    drift_2 = -0.5*x1 - 1.0*x2
    obs = x1
    sigma = 1.0

Inline models automatically recover their affine metadata (drift matrix,
observation vector/offset) when every term has total degree <= 1, which
enables the closed-form gain and the Kalman-Bucy reference.

Seeds are mandatory: every run is a deterministic function of its
configuration file.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .fields import Polynomial, PolyScalarField, PolyVectorField
from .filter import FilterConfig
from .model import SdeModel
from .registry import available_models, default_prior, make_model

__all__ = ["ConfigError", "ExperimentConfig", "load_config",
           "parse_polynomial"]


class ConfigError(ValueError):
    """The configuration file is missing, unparsable, or inconsistent."""


# ---------------------------------------------------------------------------
# polynomial expressions
# ---------------------------------------------------------------------------

_FACTOR_RE = re.compile(r"^x(\d+)(?:\^(\d+))?$")


def parse_polynomial(text: str, dim: int) -> Polynomial:
    """Parse e.g. '-1.2*x1 + 0.5*x1*x2^2 - 3' into a Polynomial.

    Terms are separated by top-level + or -, factors within a term by *;
    a factor is either a float literal or x<i> with an optional integer
    power. Scientific notation is fine ('1e-3*x1').
    """
    cleaned = text.replace("**", "^").replace(" ", "")
    if not cleaned:
        raise ConfigError("empty polynomial expression")
    terms: dict = {}
    for piece in re.split(r"(?<![eE])(?=[+-])", cleaned):
        if piece == "":
            continue
        sign = 1.0
        body = piece
        while body[:1] in ("+", "-"):
            if body[0] == "-":
                sign = -sign
            body = body[1:]
        if not body:
            raise ConfigError(f"dangling sign in polynomial {text!r}")
        coef = sign
        alpha = [0] * dim
        for factor in body.split("*"):
            m = _FACTOR_RE.match(factor)
            if m:
                idx = int(m.group(1))
                if not 1 <= idx <= dim:
                    raise ConfigError(
                        f"variable x{idx} out of range for dimension {dim}")
                alpha[idx - 1] += int(m.group(2) or 1)
            else:
                try:
                    coef *= float(factor)
                except ValueError:
                    raise ConfigError(
                        f"cannot parse factor {factor!r} in polynomial term "
                        f"{piece!r}") from None
        key = tuple(alpha)
        terms[key] = terms.get(key, 0.0) + coef
    return Polynomial(dim, terms)


def _affine_parts(poly: Polynomial) -> Optional[Tuple[np.ndarray, float]]:
    """(coefficient vector, offset) when the polynomial is affine, else None."""
    vec = np.zeros(poly.dim)
    offset = 0.0
    for alpha, c in poly.terms.items():
        total = sum(alpha)
        if total == 0:
            offset = c
        elif total == 1:
            vec[alpha.index(1)] = c
        else:
            return None
    return vec, offset


# ---------------------------------------------------------------------------
# value parsing helpers
# ---------------------------------------------------------------------------

def _get(cp: configparser.ConfigParser, section: str, key: str,
         required: bool = True, default=None) -> Optional[str]:
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"missing field `{key}` in section [{section}]")
        return default
    return cp.get(section, key)


def _as_float(raw: str, section: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(
            f"field `{key}` in [{section}]: expected a number, got {raw!r}"
        ) from None


def _as_int(raw: str, section: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(
            f"field `{key}` in [{section}]: expected an integer, got {raw!r}"
        ) from None


def _as_vector(raw: str, dim: int, section: str, key: str) -> np.ndarray:
    parts = raw.replace(",", " ").split()
    vals = np.array([_as_float(v, section, key) for v in parts])
    if vals.size == 1:
        return np.full(dim, vals[0])
    if vals.size != dim:
        raise ConfigError(
            f"field `{key}` in [{section}]: expected {dim} entries, "
            f"got {vals.size}")
    return vals


def _as_matrix(raw: str, dim: int, section: str, key: str) -> np.ndarray:
    """Scalar -> scalar * I; otherwise semicolon-separated rows."""
    rows = [r for r in raw.split(";") if r.strip()]
    if len(rows) == 1 and len(rows[0].replace(",", " ").split()) == 1:
        return _as_float(rows[0].strip(), section, key) * np.eye(dim)
    mat = np.array([[_as_float(v, section, key)
                     for v in r.replace(",", " ").split()] for r in rows])
    if mat.shape != (dim, dim):
        raise ConfigError(
            f"field `{key}` in [{section}]: expected a {dim}x{dim} matrix, "
            f"got shape {mat.shape}")
    return mat


_BOOLEANS = {"1": True, "true": True, "yes": True, "on": True,
             "0": False, "false": False, "no": False, "off": False}


def _as_bool(raw: str, section: str, key: str) -> bool:
    try:
        return _BOOLEANS[raw.strip().lower()]
    except KeyError:
        raise ConfigError(
            f"field `{key}` in [{section}]: expected a boolean, got {raw!r}"
        ) from None


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

_GAIN_METHODS = ("exact_gaussian", "exact", "constant", "galerkin")


@dataclass
class ExperimentConfig:
    """Fully resolved run configuration (model objects, not strings)."""

    model: SdeModel
    model_name: str
    dt: float
    t_end: float
    n_particles: int
    filter_cfg: FilterConfig
    seed_truth: int
    seed_observation: int
    seed_filter: int
    out_dir: str
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    x0: np.ndarray
    compare_seeds: Tuple[int, ...] = ()
    grid_halfwidth: float = 8.0
    grid_points: int = 1601


def _build_inline_model(cp: configparser.ConfigParser) -> SdeModel:
    dim = _as_int(_get(cp, "model", "dimension"), "model", "dimension")
    if dim < 1:
        raise ConfigError("field `dimension` in [model]: must be >= 1")

    drift_polys = []
    for i in range(dim):
        key = f"drift_{i + 1}"
        drift_polys.append(parse_polynomial(_get(cp, "model", key), dim))
    obs_poly = parse_polynomial(_get(cp, "model", "obs"), dim)
    sigma = _as_matrix(_get(cp, "model", "sigma", required=False,
                            default="1.0"), dim, "model", "sigma")

    drift_field = PolyVectorField(drift_polys)
    obs_field = PolyScalarField(obs_poly)

    drift_matrix = None
    rows = [_affine_parts(p) for p in drift_polys]
    if all(r is not None and r[1] == 0.0 for r in rows):
        drift_matrix = np.vstack([r[0] for r in rows])

    obs_vector = None
    obs_offset = 0.0
    obs_affine = _affine_parts(obs_poly)
    if obs_affine is not None:
        obs_vector, obs_offset = obs_affine

    return SdeModel(
        dim=dim,
        drift=drift_field.value,
        diffusion=sigma,
        obs=lambda pts: obs_field.value(pts),
        obs_grad=lambda pts: obs_field.grad(pts),
        drift_matrix=drift_matrix,
        obs_vector=obs_vector,
        obs_offset=float(obs_offset),
        name="inline",
    )


def load_config(path: str) -> ExperimentConfig:
    """Parse and resolve an experiment configuration file.

    Raises ConfigError for anything wrong with the file itself (missing
    fields, unknown names, unparsable values).
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from None

    for section in ("model", "time", "filter", "seeds"):
        if not cp.has_section(section):
            raise ConfigError(f"missing section [{section}]")

    if cp.has_option("model", "name"):
        if cp.has_option("model", "dimension"):
            raise ConfigError(
                "[model] gives both `name` and an inline polynomial "
                "definition; use one")
        model_name = cp.get("model", "name")
        try:
            model = make_model(model_name)
        except KeyError:
            raise ConfigError(
                f"unknown model {model_name!r}; available: "
                f"{', '.join(available_models())}") from None
        prior_mean, prior_cov = default_prior(model_name)
    else:
        model = _build_inline_model(cp)
        model_name = model.name
        prior_mean, prior_cov = np.zeros(model.dim), np.eye(model.dim)

    if cp.has_section("prior"):
        if cp.has_option("prior", "mean"):
            prior_mean = _as_vector(cp.get("prior", "mean"), model.dim,
                                    "prior", "mean")
        if cp.has_option("prior", "cov"):
            prior_cov = _as_matrix(cp.get("prior", "cov"), model.dim,
                                   "prior", "cov")

    dt = _as_float(_get(cp, "time", "dt"), "time", "dt")
    t_end = _as_float(_get(cp, "time", "t_end"), "time", "t_end")
    if dt <= 0:
        raise ConfigError("field `dt` in [time]: must be positive")
    if t_end < dt:
        raise ConfigError("field `t_end` in [time]: must be >= dt")

    n_particles = _as_int(_get(cp, "filter", "n_particles"),
                          "filter", "n_particles")
    if n_particles < 2:
        raise ConfigError("field `n_particles` in [filter]: must be >= 2")
    gain = _get(cp, "filter", "gain")
    if gain not in _GAIN_METHODS:
        raise ConfigError(
            f"field `gain` in [filter]: unknown method {gain!r}; choose "
            f"from {', '.join(_GAIN_METHODS)}")
    ridge_raw = _get(cp, "filter", "galerkin_ridge", required=False)
    filter_cfg = FilterConfig(
        gain_method=gain,
        galerkin_degree=_as_int(
            _get(cp, "filter", "galerkin_degree", required=False,
                 default="3"), "filter", "galerkin_degree"),
        galerkin_ridge=(None if ridge_raw is None
                        else _as_float(ridge_raw, "filter", "galerkin_ridge")),
        admissibility_eps=_as_float(
            _get(cp, "filter", "admissibility_eps", required=False,
                 default="1e-8"), "filter", "admissibility_eps"),
        abort_on_inadmissible=_as_bool(
            _get(cp, "filter", "abort_on_inadmissible", required=False,
                 default="false"), "filter", "abort_on_inadmissible"),
    )

    seeds = {}
    for key in ("truth", "observation", "filter"):
        seeds[key] = _as_int(_get(cp, "seeds", key), "seeds", key)
        if seeds[key] < 0:
            raise ConfigError(f"field `{key}` in [seeds]: must be >= 0")

    out_dir = _get(cp, "output", "dir", required=False, default=".") \
        if cp.has_section("output") else "."

    x0 = prior_mean.copy()
    if cp.has_option("model", "x0"):
        x0 = _as_vector(cp.get("model", "x0"), model.dim, "model", "x0")

    compare_seeds: Tuple[int, ...] = (seeds["filter"],)
    grid_halfwidth = 8.0
    grid_points = 1601
    if cp.has_section("compare"):
        if cp.has_option("compare", "seeds"):
            raw = cp.get("compare", "seeds").replace(",", " ").split()
            if not raw:
                raise ConfigError("field `seeds` in [compare]: empty list")
            compare_seeds = tuple(_as_int(v, "compare", "seeds") for v in raw)
        if cp.has_option("compare", "grid_halfwidth"):
            grid_halfwidth = _as_float(cp.get("compare", "grid_halfwidth"),
                                       "compare", "grid_halfwidth")
        if cp.has_option("compare", "grid_points"):
            grid_points = _as_int(cp.get("compare", "grid_points"),
                                  "compare", "grid_points")
            if grid_points < 16:
                raise ConfigError(
                    "field `grid_points` in [compare]: too few points")

    return ExperimentConfig(
        model=model,
        model_name=model_name,
        dt=dt,
        t_end=t_end,
        n_particles=n_particles,
        filter_cfg=filter_cfg,
        seed_truth=seeds["truth"],
        seed_observation=seeds["observation"],
        seed_filter=seeds["filter"],
        out_dir=out_dir,
        prior_mean=prior_mean,
        prior_cov=prior_cov,
        x0=x0,
        compare_seeds=compare_seeds,
        grid_halfwidth=grid_halfwidth,
        grid_points=grid_points,
    )
