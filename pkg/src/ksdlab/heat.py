"""Analytic 1D semilinear-heat toy: explicit profile, operator, and coercivity.

The model blowup profile ``U_*(y) = (1 + c y^{2m})^{-1}`` solves

    -U - (1/(2m)) y U' + U^2 = 0,

and its linearization ``L e = -e - (1/(2m)) y e' + 2 U_* e`` is coercive in the
weighted space with ``Theta(y) = y^{-4m-4}`` (plus a small flat part kappa).
Everything here is closed-form, which makes the module an oracle for the
integral identities used by the full nonlocal operator probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergentIntegrand, DomainError, GridMismatch
from .linops import PolyGauss, RadialQuad, SampledRadial


@dataclass(frozen=True)
class HeatParams:
    """(m, c): vanishing order and profile parameter; weight Theta = y^{-4m-4}."""

    m: int
    c: float = 1.0

    def __post_init__(self):
        if self.m < 2:
            raise DomainError("m must be an integer >= 2")
        if self.c <= 0:
            raise DomainError("c must be positive")

    @property
    def theta_exponent(self) -> int:
        return 4 * self.m + 4

    @property
    def min_vanish_order(self) -> int:
        """Least vanishing order keeping e^2 (y Theta)' integrable near 0."""
        return 2 * self.m + 2


def heat_profile(p: HeatParams, y):
    """Closed-form profile ``U_*(y) = (1 + c y^{2m})^{-1}``."""
    y = np.asarray(y, dtype=float)
    return 1.0 / (1.0 + p.c * y ** (2 * p.m))


def heat_profile_dy(p: HeatParams, y):
    """Exact derivative ``U_*'(y) = -2 m c y^{2m-1} U_*^2``."""
    y = np.asarray(y, dtype=float)
    U = heat_profile(p, y)
    return -2.0 * p.m * p.c * y ** (2 * p.m - 1) * U * U


def heat_profile_residual(p: HeatParams, y):
    """Residual of the profile ODE ``-U - y U'/(2m) + U^2`` (zero analytically)."""
    y = np.asarray(y, dtype=float)
    U = heat_profile(p, y)
    return -U - y * heat_profile_dy(p, y) / (2.0 * p.m) + U * U


def heat_apply_L(
    p: HeatParams,
    eps: PolyGauss | SampledRadial,
    quad: RadialQuad,
) -> SampledRadial:
    """Sample ``L e = -e - (1/(2m)) y e' + 2 U_* e`` on the quadrature grid."""
    y = quad.r
    if isinstance(eps, PolyGauss):
        ev = eps(y)
        dv = eps.deriv()(y)
        p_ord = eps.vanish_order
    else:
        if eps.r.shape != y.shape or not np.allclose(eps.r, y):
            raise GridMismatch("sampled function not on the quadrature grid")
        ev = eps.vals
        dv = np.gradient(eps.vals, quad.u) / y
        p_ord = eps.vanish_order
    U = heat_profile(p, y)
    vals = -ev - y * dv / (2.0 * p.m) + 2.0 * U * ev
    return SampledRadial(r=y, vals=vals, vanish_order=p_ord)


def heat_weighted_inner(
    p: HeatParams,
    a: PolyGauss | SampledRadial,
    b: PolyGauss | SampledRadial,
    kappa: float,
    quad: RadialQuad,
) -> float:
    """``\\int_0^inf a b (y^{-4m-4} + kappa) dy`` on the log grid.

    The singular factor is split between the inputs to dodge underflow.
    """

    def sample(x):
        if isinstance(x, PolyGauss):
            return x(quad.r), x.vanish_order
        return x.vals, x.vanish_order

    av, pa = sample(a)
    bv, pb = sample(b)
    if pa + pb < p.theta_exponent - 1:
        raise DivergentIntegrand(
            f"vanishing order {pa}+{pb} below {p.theta_exponent - 1}"
        )
    half = np.float_power(quad.r, -p.theta_exponent / 2.0)
    integrand = (av * half) * (bv * half) + kappa * av * bv
    return quad.integrate(integrand, power=0)


def heat_multiplier_route(
    p: HeatParams,
    eps: PolyGauss,
    kappa: float,
    quad: RadialQuad,
) -> float:
    """Integration-by-parts route to ``(L e, e)_{Theta+kappa}``.

    Using ``-(1/(2m)) \\int y e' e W = (1/(4m)) \\int e^2 (y W)'`` with
    ``(y Theta)' = -(4m+3) Theta``:

        (L e, e) = \\int e^2 [ (-1 + 2 U_*)(Theta+kappa)
                              - ((4m+3)/(4m)) Theta + kappa/(4m) ].
    """
    y = quad.r
    ev = eps(y)
    U = heat_profile(p, y)
    half = np.float_power(y, -p.theta_exponent / 2.0)
    e2s = (ev * half) ** 2
    e2 = ev * ev
    integrand = (
        (-1.0 + 2.0 * U) * (e2s + kappa * e2)
        - (4.0 * p.m + 3.0) / (4.0 * p.m) * e2s
        + kappa / (4.0 * p.m) * e2
    )
    return quad.integrate(integrand, power=0)


def make_heat_suite(p: HeatParams, count: int = 50, seed: int = 777) -> list[PolyGauss]:
    """Randomized admissible 1D probe functions (same family as the 3D suite)."""
    rng = np.random.default_rng(seed)
    scales = (0.5, 1.0, 2.0, 4.0)
    p0 = p.min_vanish_order
    suite = []
    for i in range(count):
        pv = p0 if i % 2 == 0 else p0 + 2
        s = scales[i % len(scales)]
        coeffs = np.zeros(pv + 13)
        coeffs[pv::2] = rng.uniform(-1.0, 1.0, size=7)
        suite.append(PolyGauss(coeffs, s))
    return suite


def heat_coercivity(
    p: HeatParams,
    suite: list[PolyGauss],
    quad: RadialQuad | None = None,
    kappas: tuple[float, ...] = tuple(10.0**-k for k in range(1, 7)),
) -> dict:
    """Rayleigh quotients under Theta+kappa; keeps the largest admissible kappa.

    Returns the chosen kappa and per-function records; every quotient at the
    accepted kappa is <= -1/(4m) + 1e-3.
    """
    if quad is None:
        quad = RadialQuad.make()
    bound = -1.0 / (4.0 * p.m) + 1e-3
    chosen = None
    records = None
    for kappa in kappas:
        recs = []
        ok = True
        for idx, g in enumerate(suite):
            Lg = heat_apply_L(p, g, quad)
            num = heat_weighted_inner(p, Lg, g, kappa, quad)
            den = heat_weighted_inner(p, g, g, kappa, quad)
            quot = num / den
            recs.append({"index": idx, "s": g.s, "quotient": quot,
                         "flagged": bool(quot > bound)})
            if quot > bound:
                ok = False
        if ok:
            chosen = kappa
            records = recs
            break
    if chosen is None:
        chosen = kappas[-1]
        records = recs
    return {"kappa": chosen, "records": records,
            "all_pass": all(not r["flagged"] for r in records)}
