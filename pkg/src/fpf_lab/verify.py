"""Bulk verification suites over the identity checks.

Each suite evaluates one family of checks at seeded probe configurations
and reports rows of (check, point, residual, tolerance, pass). A row
passes iff residual <= tolerance; convergence rows compare a halved-step
residual against max(residual / factor, floor), the floor absorbing
probes whose truncation error is already at roundoff.

The same drivers back the `fpf-lab verify` command and the acceptance
tests, so the tolerances frozen here are the single source of truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from .fields import (ExpPolyDensity, Polynomial, PolyScalarField,
                     PolyVectorField)
from .identities import (
    QUADRATIC_IDENTITY_IDS,
    bounded_slope_grad_log,
    double_divergence_expansion_check,
    el_bracket_residual,
    el_generator_invariance,
    dt_order_residual,
    dz_order_residual,
    piola_residual,
    poincare_ratio_sweep,
    quadratic_term_identity,
    weighted_poisson_derivative_check,
)

__all__ = ["CheckRow", "SUITE_NAMES", "run_suite", "write_suite_csv"]

_FMT = "%.12g"

SUITE_NAMES = ("piola", "appendixB", "lm2", "el-invariance", "poincare",
               "lemmaD", "taylor")


@dataclass
class CheckRow:
    check: str
    point: str
    residual: float
    tolerance: float
    passed: bool


def _row(check: str, point, residual: float, tolerance: float) -> CheckRow:
    residual = float(residual)
    return CheckRow(check, str(point), residual, tolerance,
                    residual <= tolerance)


def _convergence_row(check: str, point, gap: float, gap_half: float,
                     factor: float = 3.0, floor: float = 1e-12) -> CheckRow:
    """Row asserting gap_half <= max(gap / factor, floor)."""
    return _row(check, point, gap_half, max(abs(gap) / factor, floor))


# ---------------------------------------------------------------------------
# piola
# ---------------------------------------------------------------------------

def suite_piola(n_fields: int = 100, fd_step: float = 1e-4,
                tol: float = 1e-6) -> List[CheckRow]:
    """Divergence-free cofactor columns for random cubic displacements.

    The halved-step rows sit below a 1e-10 floor instead of the factor-3
    reduction whenever truncation is already exhausted (cubic fields have
    many probes with near-zero third-derivative content).
    """
    rng = np.random.default_rng(1003)
    rows: List[CheckRow] = []
    for i in range(n_fields):
        d = 2 if i % 2 == 0 else 3
        v = PolyVectorField.random(d, 3, rng, scale=0.4)
        x = rng.uniform(-0.8, 0.8, size=d)
        r = float(np.max(np.abs(piola_residual(v, x, fd_step))))
        r_half = float(np.max(np.abs(piola_residual(v, x, fd_step / 2))))
        rows.append(_row("piola", i, r, tol))
        rows.append(_convergence_row("piola-halved", i, r, r_half,
                                     floor=1e-10))
    return rows


# ---------------------------------------------------------------------------
# appendixB / lm2 probe family
# ---------------------------------------------------------------------------

def _quadratic_probe(rng: np.random.Generator):
    d = int(rng.integers(1, 4))
    p = ExpPolyDensity.random_gaussian(d, rng)
    k = PolyVectorField.random(d, 3, rng, scale=0.4)
    x = rng.uniform(-0.6, 0.6, size=d)
    return p, k, x


def suite_appendix_b(n_probes: int = 50, fd_step: float = 1e-4,
                     tol: float = 1e-5) -> List[CheckRow]:
    """Eight cancellation identities, one row per (identity, probe)."""
    rows: List[CheckRow] = []
    for ident in QUADRATIC_IDENTITY_IDS:
        rng = np.random.default_rng(2000 + ident)
        for i in range(n_probes):
            p, k, x = _quadratic_probe(rng)
            lhs, rhs = quadratic_term_identity(ident, p, k, x, fd_step)
            gap = float(np.max(np.abs(lhs - rhs)))
            rows.append(_row(f"identity-{ident}", i, gap, tol))
    return rows


def suite_lm2(n_probes: int = 50, fd_step: float = 1e-4,
              tol: float = 1e-5) -> List[CheckRow]:
    """Double-divergence product-rule expansion plus FD convergence.

    The gap rows run at fd_step=1e-4 where truncation is tiny; the
    convergence rows run at 1e-2 -> 5e-3 because second differences at
    1e-4 already sit on the roundoff floor eps/h^2 ~ 1e-8, where halving
    the step measures noise rather than order.
    """
    rng = np.random.default_rng(2112)
    rows: List[CheckRow] = []
    for i in range(n_probes):
        p, k, x = _quadratic_probe(rng)
        lhs, rhs = double_divergence_expansion_check(p, k, x, fd_step)
        rows.append(_row("lm2", i, abs(lhs - rhs), tol))
        lhs_c, rhs_c = double_divergence_expansion_check(p, k, x, 1e-2)
        lhs_h, rhs_h = double_divergence_expansion_check(p, k, x, 5e-3)
        rows.append(_convergence_row("lm2-halved", i, abs(lhs_c - rhs_c),
                                     abs(lhs_h - rhs_h)))
    return rows


# ---------------------------------------------------------------------------
# el-invariance
# ---------------------------------------------------------------------------

def _pairwise_rel(res: Dict[str, np.ndarray]) -> List[tuple]:
    names = sorted(res)
    out = []
    for a_i, a in enumerate(names):
        for b in names[a_i + 1:]:
            scale = max(float(np.linalg.norm(res[a])),
                        float(np.linalg.norm(res[b])), 1e-30)
            out.append((f"{a}~{b}",
                        float(np.linalg.norm(res[a] - res[b])) / scale))
    return out


def suite_el_invariance(n_probes: int = 50,
                        tol: float = 1e-6) -> List[CheckRow]:
    """Generator-independence of normalized stationarity residuals,
    plus the bracket check at the closed-form optimal displacement."""
    rng = np.random.default_rng(3001)
    rows: List[CheckRow] = []
    dt = 0.01
    for i in range(n_probes):
        d = 1 + i % 2
        p = ExpPolyDensity.random_gaussian(d, rng)
        h_field = PolyScalarField(Polynomial.random(d, 2, rng, scale=0.5))
        v = PolyVectorField.random(d, 2, rng, scale=0.05)
        x = rng.uniform(-0.4, 0.4, size=d)
        y = float(0.3 * rng.standard_normal())
        res = el_generator_invariance(p, h_field, v, x, y, dt)
        for pair, rel in _pairwise_rel(res):
            rows.append(_row(f"invariance-{pair}", i, rel, tol))

    # bracket at the optimal coupling: Gaussian prior, h = x,
    # v = K dz + u dt with K = var, u = -K(x + mean)/2
    for j, (mean, var, x0) in enumerate(
            [(0.0, 1.0, 0.3), (0.2, 0.8, -0.4), (-0.3, 1.3, 0.1)]):
        p = ExpPolyDensity.gaussian([mean], [[var]])
        h_field = PolyScalarField(Polynomial(1, {(1,): 1.0}))
        y = 1.0
        dz = y * dt
        v = PolyVectorField([Polynomial(
            1, {(0,): var * dz - 0.5 * var * mean * dt,
                (1,): -0.5 * var * dt})])
        r = float(np.max(np.abs(el_bracket_residual(
            p, h_field, v, np.array([x0]), y, dt))))
        rows.append(_row("el-bracket", j, r, 1e-3))
    return rows


# ---------------------------------------------------------------------------
# poincare
# ---------------------------------------------------------------------------

def suite_poincare() -> List[CheckRow]:
    """Growth of the norm ratio over balls of doubling radius, plus
    rejection of a density violating the bounded-slope hypothesis."""
    radii = [1.0, 2.0, 4.0, 8.0]
    ratios = poincare_ratio_sweep(2, bounded_slope_grad_log, radii)
    rows: List[CheckRow] = []
    for r, ratio in zip(radii, ratios):
        rows.append(_row("poincare-ratio", f"r={r:g}", ratio, np.inf))
    for i in range(1, len(radii)):
        rows.append(_row("poincare-monotone",
                         f"r={radii[i - 1]:g}->{radii[i]:g}",
                         ratios[i - 1] / ratios[i], 1.0 - 1e-12))
    rows.append(_row("poincare-growth", "r=1->8",
                     ratios[0] / ratios[-1], 1.0 / 3.0))
    try:
        poincare_ratio_sweep(2, lambda x: -x, radii)
        rejected = False
    except ValueError:
        rejected = True
    rows.append(_row("poincare-gaussian-reject", "N(0,1)",
                     0.0 if rejected else 1.0, 0.5))
    return rows


# ---------------------------------------------------------------------------
# lemmaD
# ---------------------------------------------------------------------------

def suite_lemma_d() -> List[CheckRow]:
    """Weighted-Poisson solve and its differentiated identity on a grid.

    phi' comparisons are restricted to |x| <= 3: the operator -(p phi')'
    is nearly singular where p ~ 1e-15 near the domain ends, so boundary
    values of phi' amplify rounding of the right-hand side by 1/p.
    """
    x = np.linspace(-8.0, 8.0, 2001)
    p = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    interior = np.abs(x) <= 3.0
    rows: List[CheckRow] = []

    res, phi_p = weighted_poisson_derivative_check(
        x, p, x, h_grad_vals=np.ones_like(x), log_p_hess_vals=-np.ones_like(x))
    rows.append(_row("lemmaD-residual", "h=x", res, 1e-3))
    rows.append(_row("lemmaD-gain", "h=x,K=1",
                     np.max(np.abs(phi_p[interior] - 1.0)), 1e-3))

    res2, phi_p2 = weighted_poisson_derivative_check(
        x, p, x * x, h_grad_vals=2.0 * x, log_p_hess_vals=-np.ones_like(x))
    rows.append(_row("lemmaD-residual", "h=x^2", res2, 1e-3))
    # quadrature oracle: phi'(x) = (1/p) int_x^inf (h - h_hat) p ds
    h_hat = _trapz(x * x * p, x) / _trapz(p, x)
    tail = _reverse_cumtrapz((x * x - h_hat) * p, x)
    oracle = tail / p
    rows.append(_row("lemmaD-gain", "h=x^2,quadrature",
                     np.max(np.abs(phi_p2[interior] - oracle[interior])),
                     1e-2))
    idx = int(np.argmin(np.abs(x - 2.0)))
    rows.append(_row("lemmaD-gain", "h=x^2,x=2",
                     abs(phi_p2[idx] - 2.0), 1e-3))

    res3, phi_p3 = weighted_poisson_derivative_check(
        x, p, np.full_like(x, 3.0), h_grad_vals=np.zeros_like(x),
        log_p_hess_vals=-np.ones_like(x))
    rows.append(_row("lemmaD-residual", "h=const", res3, 1e-9))
    rows.append(_row("lemmaD-gain", "h=const,interior",
                     np.max(np.abs(phi_p3[interior])), 1e-10))
    return rows


def _trapz(y: np.ndarray, x: np.ndarray) -> float:
    from .grid import trapezoid
    return float(trapezoid(y, x))


def _reverse_cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    from scipy.integrate import cumulative_trapezoid
    full = cumulative_trapezoid(y, x, initial=0.0)
    return full[-1] - full


# ---------------------------------------------------------------------------
# taylor
# ---------------------------------------------------------------------------

def suite_taylor(n_probes: int = 50, tol: float = 1e-10) -> List[CheckRow]:
    """Leading-order expansion equations on closed-form solution families.

    dz order: Gaussian prior with affine h; K = cov @ H solves the gain
    equation, so the residual is identically zero. dt order: the pair
    (K = 1, u = -x/2) on the standard Gaussian with h = x.
    """
    rng = np.random.default_rng(4001)
    rows: List[CheckRow] = []
    for i in range(n_probes):
        d = 1 + i % 3
        mean = 0.3 * rng.standard_normal(d)
        a = 0.3 * rng.standard_normal((d, d))
        cov = np.eye(d) + a @ a.T
        hvec = rng.standard_normal(d)
        offset = float(rng.standard_normal())
        p = ExpPolyDensity.gaussian(mean, cov)
        h_terms = {tuple(int(j == l) for l in range(d)): float(hvec[j])
                   for j in range(d)}
        h_terms[(0,) * d] = offset
        h_field = PolyScalarField(Polynomial(d, h_terms))
        gain = cov @ hvec
        k = PolyVectorField([Polynomial(d, {(0,) * d: float(gain[j])})
                             for j in range(d)])
        x = rng.uniform(-0.7, 0.7, size=d)
        r = float(np.max(np.abs(dz_order_residual(p, h_field, k, x))))
        rows.append(_row("taylor-dz", i, r, tol))

    p1 = ExpPolyDensity.gaussian([0.0], [[1.0]])
    h1 = PolyScalarField(Polynomial(1, {(1,): 1.0}))
    k1 = PolyVectorField([Polynomial(1, {(0,): 1.0})])
    u1 = PolyVectorField([Polynomial(1, {(1,): -0.5})])
    for i, x0 in enumerate(np.linspace(-2.0, 2.0, n_probes)):
        r = float(np.max(np.abs(dt_order_residual(
            p1, h1, k1, u1, np.array([x0])))))
        rows.append(_row("taylor-dt", i, r, tol))
    return rows


# ---------------------------------------------------------------------------
# dispatch and serialization
# ---------------------------------------------------------------------------

_SUITES: Dict[str, Callable[[], List[CheckRow]]] = {
    "piola": suite_piola,
    "appendixB": suite_appendix_b,
    "lm2": suite_lm2,
    "el-invariance": suite_el_invariance,
    "poincare": suite_poincare,
    "lemmaD": suite_lemma_d,
    "taylor": suite_taylor,
}


def run_suite(name: str) -> List[CheckRow]:
    try:
        fn = _SUITES[name]
    except KeyError:
        raise KeyError(
            f"unknown suite {name!r}; available: {', '.join(SUITE_NAMES)}"
        ) from None
    return fn()


def write_suite_csv(path: str, rows: List[CheckRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "point", "residual", "tolerance", "pass"])
        for row in rows:
            writer.writerow([row.check, row.point, _FMT % row.residual,
                             _FMT % row.tolerance,
                             "1" if row.passed else "0"])
