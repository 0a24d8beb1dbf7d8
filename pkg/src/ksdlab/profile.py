"""Self-similar profile construction for aggregation-diffusion blowup.

The radial profile ``Q`` solves, with ``f(r) = r^{-3} \\int_0^r Q s^2 ds``,

    Q + beta*r*Q' = r*f*Q' + (1-mu)*Q^2,
    f' = (Q - 3 f)/r,

starting at the stagnation point ``P0 = (Q0, f0) = (1/(1-mu), 1/(3(1-mu)))``.
The solution is seeded by an even Taylor series at the origin (the leading
correction enters at order ``r^{2 j0}``) and continued outward by adaptive
integration in ``s = ln r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp

from .errors import (
    DomainError,
    NoConvergence,
    OutOfRange,
    RecurrenceDegenerate,
    RegionExitScenario1,
    RegionExitScenario2,
    StepSizeUnderflow,
)

#: hard cap on the number of stored Taylor coefficients
N_MAX = 400

#: working precision (decimal digits) for the coefficient recurrence
SERIES_DPS = 40


def compute_admissibility(mu: float) -> tuple[float, int]:
    """Return ``(J, j0_min)``: the admissibility threshold and least integer above it.

    ``J = 3(1-mu)/(1-3mu) + 1``; a vanishing order ``j0 >= J`` guarantees the
    similarity exponent ``beta = 1/(3(1-mu)) + 1/(2 j0)`` stays below 1/2.
    """
    if not (0.0 <= mu < 1.0 / 3.0):
        raise DomainError(f"mu={mu} outside [0, 1/3)")
    J = 3.0 * (1.0 - mu) / (1.0 - 3.0 * mu) + 1.0
    # guard against float noise pushing an exactly-integer J up by one
    j0_min = math.ceil(J - 1e-9)
    return J, j0_min


@dataclass(frozen=True)
class ProfileParams:
    """Parameter tuple (mu, j0, beta, q_j0) fixing one profile problem.

    ``beta`` is stored but not free: it must equal ``1/(3(1-mu)) + 1/(2 j0)``.
    ``q_j0`` is the leading Taylor coefficient of ``Q - Q0`` (negative for the
    decreasing profile; 0 is accepted and yields the constant solution).
    """

    mu: float
    j0: int
    beta: float
    q_j0: float = -1.0

    def __post_init__(self):
        J, j0_min = compute_admissibility(self.mu)
        if self.j0 < max(2, j0_min):
            raise DomainError(f"j0={self.j0} below admissibility threshold J={J}")
        expected = self.f0 + 1.0 / (2.0 * self.j0)
        if abs(self.beta - expected) > 1e-12:
            raise DomainError(f"beta={self.beta} != 1/(3(1-mu)) + 1/(2 j0) = {expected}")
        if not (self.f0 < self.beta < 0.5):
            raise DomainError(f"beta={self.beta} outside ({self.f0}, 1/2)")
        if self.q_j0 > 0:
            raise DomainError(f"q_j0={self.q_j0} must be <= 0")

    @property
    def q0(self) -> float:
        """Profile value at the origin, ``Q0 = 1/(1-mu)``."""
        return 1.0 / (1.0 - self.mu)

    @property
    def f0(self) -> float:
        """Averaged-mass value at the origin, ``f0 = Q0/3``."""
        return 1.0 / (3.0 * (1.0 - self.mu))

    @classmethod
    def make(cls, mu: float, j0: int, q_j0: float = -1.0) -> "ProfileParams":
        """Build params with the similarity exponent derived from (mu, j0)."""
        beta = 1.0 / (3.0 * (1.0 - mu)) + 1.0 / (2.0 * j0)
        return cls(mu=mu, j0=j0, beta=beta, q_j0=q_j0)


def series_recurrence(
    mu: float,
    beta: float,
    n: int,
    j0: int | None = None,
    q_j0: float = -1.0,
):
    """Run the Taylor recurrence in extended precision; return mpmath Q_j list.

    For ``1 <= j != j0`` the coefficient is forced:

        Q_j = S_j / (2j (beta - 1/(2j) - f0)),
        S_j = sum_{i=1}^{j-1} (2i/(2(j-i)+3) + (1-mu)) Q_i Q_{j-i}.

    At the resonant index ``j == j0`` the denominator vanishes and ``q_j0`` is
    injected as the free datum.  With ``j0=None`` (probe mode, arbitrary beta)
    no injection happens; a vanishing denominator raises RecurrenceDegenerate.
    """
    with mp.workdps(SERIES_DPS):
        one_m_mu = mp.mpf(1) - mp.mpf(mu)
        f0 = 1 / (3 * one_m_mu)
        b = mp.mpf(beta)
        Q = [1 / one_m_mu] + [mp.mpf(0)] * n
        for j in range(1, n + 1):
            if j0 is not None and j == j0:
                Q[j] = mp.mpf(q_j0)
                continue
            den_factor = b - mp.mpf(1) / (2 * j) - f0
            if j0 is not None:
                # exact cancellation form: beta - f0 = 1/(2 j0) by construction
                den_factor = mp.mpf(1) / (2 * j0) - mp.mpf(1) / (2 * j)
            if abs(den_factor) < mp.mpf("1e-12"):
                raise RecurrenceDegenerate(
                    f"recurrence denominator vanishes at off-resonance index j={j}"
                )
            S = mp.mpf(0)
            for i in range(1, j):
                if Q[i] == 0 or Q[j - i] == 0:
                    continue
                S += (mp.mpf(2 * i) / (2 * (j - i) + 3) + one_m_mu) * Q[i] * Q[j - i]
            Q[j] = S / (2 * j * den_factor)
        return Q


@dataclass(frozen=True)
class PowerSeries:
    """Even Taylor coefficients of (Q, f) at the origin, with a growth certificate.

    ``Q(r) = sum_j q_coeffs[j] r^{2j}``; ``f_coeffs[j] = q_coeffs[j]/(2j+3)``.
    The certificate asserts ``|Q_j| <= bound_K^(j-bound_alpha)/j^2`` for every
    stored ``j >= 1``.
    """

    q_coeffs: np.ndarray
    f_coeffs: np.ndarray
    radius_estimate: float
    truncation: int
    bound_K: float
    bound_alpha: float
    stride: int = 1

    def eval_q(self, r):
        x = np.square(np.asarray(r, dtype=float))
        out = np.zeros_like(x)
        for c in self.q_coeffs[::-1]:
            out = out * x + c
        return out

    def eval_f(self, r):
        x = np.square(np.asarray(r, dtype=float))
        out = np.zeros_like(x)
        for c in self.f_coeffs[::-1]:
            out = out * x + c
        return out

    def eval_dq(self, r):
        """Term-wise derivative dQ/dr."""
        r = np.asarray(r, dtype=float)
        x = np.square(r)
        out = np.zeros_like(x)
        n = len(self.q_coeffs) - 1
        for j in range(n, 0, -1):
            out = out * x + 2 * j * self.q_coeffs[j]
        return out * r

    def remainder_bound(self, r: float) -> float:
        """Geometric estimate of the truncation remainder |sum_{j>N} Q_j r^{2j}|."""
        t = (r / self.radius_estimate) ** 2
        if t >= 1.0:
            return np.inf
        # nonzero coefficients appear every `stride` indices; the first omitted
        # term sits `stride` slots past the stored truncation
        u = t**self.stride
        lead = abs(self.q_coeffs[self.truncation]) * r ** (2 * self.truncation)
        return lead * u / (1.0 - u)


def _growth_certificate(q: np.ndarray) -> tuple[float, float]:
    """Smallest K (at alpha=1) with |Q_j| <= K^(j-alpha)/j^2 over stored j>=1."""
    alpha = 1.0
    K = 1.0
    for j in range(1, len(q)):
        if q[j] == 0.0:
            continue
        val = (j * j * abs(q[j])) ** (1.0 / (j - alpha)) if j > alpha else np.inf
        K = max(K, val)
    return float(K * (1.0 + 1e-12)), alpha


def build_series(
    params: ProfileParams,
    tol: float,
    n_coeffs: int | None = None,
) -> PowerSeries:
    """Construct the origin Taylor series certified to tolerance ``tol``.

    Coefficients are generated to N_MAX in extended precision; the stored
    truncation N is the shortest prefix whose geometric remainder estimate at
    the planned handoff radius (80% of the fitted convergence radius) is below
    ``tol``.  ``n_coeffs`` forces a minimum number of stored coefficients.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    Qmp = series_recurrence(params.mu, params.beta, N_MAX, j0=params.j0, q_j0=params.q_j0)
    q = np.array([float(c) for c in Qmp])

    nz = np.nonzero(q[1:])[0] + 1
    if len(nz) >= 4:
        # geometric-ratio fit of log|Q_j| over the last half of nonzero indices
        js = nz[len(nz) // 2:]
        slope = np.polyfit(js, np.log(np.abs(q[js])), 1)[0]
        growth = math.exp(slope)
        radius = 1.0 / math.sqrt(growth)
    else:
        radius = 1.0

    # truncate on the sparsity stride: nonzero coefficients sit at multiples of
    # j0, so the remainder after keeping q[n] starts at index n + j0
    stride = params.j0
    r_h_plan = 0.8 * radius
    u = (r_h_plan / radius) ** (2 * stride)
    n_trunc = None
    for n in range(2 * stride, N_MAX - stride + 1, stride):
        lead = abs(q[n + stride]) * r_h_plan ** (2 * (n + stride))
        if lead / (1.0 - u) < tol:
            n_trunc = n
            break
    if n_trunc is None:
        raise NoConvergence(
            f"series remainder not below tol={tol} within {N_MAX} coefficients"
        )
    if n_coeffs is not None:
        n_trunc = max(n_trunc, min(n_coeffs, N_MAX))

    qk = q[: n_trunc + 1].copy()
    fk = qk / (2 * np.arange(n_trunc + 1) + 3)
    K, alpha = _growth_certificate(qk)
    return PowerSeries(
        q_coeffs=qk,
        f_coeffs=fk,
        radius_estimate=radius,
        truncation=n_trunc,
        bound_K=K,
        bound_alpha=alpha,
        stride=stride,
    )


class ProfileEvaluator:
    """Piecewise spectral evaluator: Taylor series inside, dense ODE output outside."""

    def __init__(self, params: ProfileParams, series: PowerSeries, r_h: float, sol, r_max: float):
        self.params = params
        self.series = series
        self.r_h = r_h
        self.sol = sol  # scipy OdeSolution in s = ln r, or None (constant case)
        self.r_max = r_max

    def _check(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.r_max * (1 + 1e-12)):
            raise OutOfRange(f"radius outside [0, {self.r_max}]")
        return r

    def _qf(self, r):
        r = self._check(r)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        q = np.empty_like(r)
        f = np.empty_like(r)
        inner = r <= self.r_h
        q[inner] = self.series.eval_q(r[inner])
        f[inner] = self.series.eval_f(r[inner])
        outer = ~inner
        if np.any(outer):
            if self.sol is None:
                q[outer] = self.params.q0
                f[outer] = self.params.f0
            else:
                y = self.sol(np.log(r[outer]))
                q[outer] = y[0]
                f[outer] = y[1]
        if scalar:
            return q[0], f[0]
        return q, f

    def q(self, r):
        return self._qf(r)[0]

    def f(self, r):
        return self._qf(r)[1]

    def dq(self, r):
        """dQ/dr: series derivative inside, ODE right-hand side outside."""
        r = self._check(r)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.empty_like(r)
        inner = r <= self.r_h
        out[inner] = self.series.eval_dq(r[inner])
        outer = ~inner
        if np.any(outer):
            qo, fo = self._qf(r[outer])
            mu, beta = self.params.mu, self.params.beta
            out[outer] = ((1.0 - mu) * qo * qo - qo) / ((beta - fo) * r[outer])
        if scalar:
            return out[0]
        return out


@dataclass(frozen=True)
class RadialProfile:
    """Sampled profile on a graded grid (node r=0, then 64 log nodes/decade).

    ``evaluator`` carries the spectral representation used to build the samples;
    it is excluded from equality/serialization.
    """

    grid: np.ndarray
    q_vals: np.ndarray
    f_vals: np.ndarray
    dq_vals: np.ndarray
    handoff_radius: float
    tail_exponent: float
    residual_max: float
    decay_const: float
    evaluator: ProfileEvaluator | None = field(default=None, compare=False, repr=False)

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])


def _fd_stencil(offsets: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for d^order/ds^order on the given offsets."""
    n = len(offsets)
    A = np.vander(offsets, n, increasing=True).T
    b = np.zeros(n)
    b[order] = math.factorial(order)
    return np.linalg.solve(A, b)


def _dense_dq_ds(sol, s: np.ndarray, s_lo: float, s_hi: float, h: float = 0.01) -> np.ndarray:
    """8th-order finite difference of the dense-output Q component in s = ln r.

    Used as a derivative route independent of the ODE right-hand side so the
    sampled residual measures genuine integration error.
    """
    out = np.empty_like(s)
    base = np.arange(-4, 5, dtype=float)
    for k, sk in enumerate(s):
        offs = base.copy()
        # shift the stencil inward near the ends of the integration interval
        lo_room = (sk - s_lo) / h
        hi_room = (s_hi - sk) / h
        shift = max(0.0, math.ceil(4 - lo_room)) - max(0.0, math.ceil(4 - hi_room))
        offs = offs + shift
        w = _fd_stencil(offs, 1)
        vals = sol(sk + offs * h)[0]
        out[k] = np.dot(w, vals) / h
    return out


def make_grid(r_max: float, r_min: float = 0.05, per_decade: int = 64) -> np.ndarray:
    """Graded radial grid: node at 0, then log-spaced nodes to r_max."""
    n_dec = math.log10(r_max / r_min)
    n = int(round(n_dec * per_decade))
    rs = r_min * 10 ** (np.arange(n + 1) / per_decade)
    rs[-1] = r_max
    return np.concatenate(([0.0], rs))


def solve_profile(
    params: ProfileParams,
    series: PowerSeries,
    r_max: float = 1.0e4,
    tol: float = 1.0e-10,
) -> RadialProfile:
    """Continue the series solution to ``r_max`` and sample it on the graded grid.

    The handoff radius is the largest scanned radius where the series remainder
    estimate is below ``tol`` and ``beta - f`` retains at least half its origin
    value (keeps the ODE right-hand side well conditioned).  Integration runs in
    ``s = ln r`` with a high-order adaptive embedded pair at tolerance 1e-12,
    tighter than the contract so the sampled residual meets ``10*tol``.
    """
    if r_max < 1.0e3:
        raise DomainError("r_max must be >= 1e3")
    mu, beta = params.mu, params.beta
    gap0 = beta - params.f0

    # --- handoff radius ---
    scan = np.linspace(0.95 * series.radius_estimate, 0.05, 400)
    r_h = None
    for r in scan:
        if series.remainder_bound(r) < tol and (beta - series.eval_f(r)) > 0.5 * gap0:
            r_h = float(r)
            break
    if r_h is None:
        raise NoConvergence("no handoff radius certifies the series remainder")

    # --- ODE continuation in s = ln r ---
    def rhs(s, y):
        Q, f = y
        return (((1.0 - mu) * Q * Q - Q) / (beta - f), Q - 3.0 * f)

    def exit_f(s, y):  # f - Q/3 hits 0 => scenario 1
        return y[1] - y[0] / 3.0

    def exit_q(s, y):  # Q hits 0 first => scenario 2
        return y[0]

    exit_f.terminal = True
    exit_q.terminal = True

    s_lo, s_hi = math.log(r_h), math.log(r_max)
    q_h = float(series.eval_q(r_h))
    f_h = float(series.eval_f(r_h))
    constant = params.q_j0 == 0.0
    sol = None
    if not constant:
        res = solve_ivp(
            rhs,
            (s_lo, s_hi),
            (q_h, f_h),
            method="DOP853",
            rtol=1e-12,
            atol=1e-14,
            dense_output=True,
            events=(exit_f, exit_q),
        )
        if res.status == 1:  # a terminal event fired
            if len(res.t_events[0]):
                raise RegionExitScenario1(
                    f"trajectory crossed f = Q/3 at r={math.exp(res.t_events[0][0]):.4g}"
                )
            raise RegionExitScenario2(
                f"Q crossed 0 at r={math.exp(res.t_events[1][0]):.4g}"
            )
        if not res.success:
            if beta - res.y[1, -1] < 0.05 * gap0:
                raise StepSizeUnderflow("beta - f collapsed near the handoff")
            raise NoConvergence(f"integrator failed: {res.message}")
        sol = res.sol

    ev = ProfileEvaluator(params, series, r_h, sol, r_max)

    grid = make_grid(r_max)
    q_vals = ev.q(grid)
    f_vals = ev.f(grid)
    dq_vals = ev.dq(grid)

    # --- sampled ODE residual, independent derivative routes ---
    inner = (grid > 0) & (grid <= r_h)
    outer = grid > r_h
    ri = grid[inner]
    dq_i = series.eval_dq(ri)
    res_i = (
        q_vals[inner]
        + beta * ri * dq_i
        - ri * f_vals[inner] * dq_i
        - (1.0 - mu) * q_vals[inner] ** 2
    )
    residual = float(np.max(np.abs(res_i))) if len(ri) else 0.0
    if np.any(outer) and sol is not None:
        ro = grid[outer]
        so = np.log(ro)
        dqds = _dense_dq_ds(sol, so, s_lo, s_hi)
        qo, fo = q_vals[outer], f_vals[outer]
        res_q = qo + (beta - fo) * dqds - (1.0 - mu) * qo * qo
        # f-equation residual via the same finite-difference route
        h = 0.01
        dfds = np.empty_like(so)
        base = np.arange(-4, 5, dtype=float)
        for k, sk in enumerate(so):
            offs = base.copy()
            lo_room = (sk - s_lo) / h
            hi_room = (s_hi - sk) / h
            offs = offs + max(0.0, math.ceil(4 - lo_room)) - max(0.0, math.ceil(4 - hi_room))
            w = _fd_stencil(offs, 1)
            dfds[k] = np.dot(w, sol(sk + offs * h)[1]) / h
        res_f = dfds - (qo - 3.0 * fo)
        residual = max(residual, float(np.max(np.abs(res_q))), float(np.max(np.abs(res_f))))

    if residual > 10.0 * tol:
        raise NoConvergence(f"sampled residual {residual:.3g} exceeds 10*tol")

    # --- tail exponent over the last decade ---
    if constant:
        tail_exp = 0.0
    else:
        tail = grid >= r_max / 10.0
        tail_exp = float(np.polyfit(np.log(grid[tail]), np.log(q_vals[tail]), 1)[0])

    decay_const = float(np.max(q_vals * (1.0 + grid**2)))

    if not constant:
        pos = grid > 0
        if np.any(q_vals <= 0) or np.any(f_vals <= 0):
            raise RegionExitScenario2("sampled profile not positive")
        # near r=0 the margin is O(r^{2 j0}) against f = O(1), so allow the
        # cancellation roundoff of the subtraction
        margin = f_vals[pos] - q_vals[pos] / 3.0
        if np.any(margin < -1e-13 * f_vals[pos]):
            raise RegionExitScenario1("sampled profile left the trapping region")

    return RadialProfile(
        grid=grid,
        q_vals=q_vals,
        f_vals=f_vals,
        dq_vals=dq_vals,
        handoff_radius=r_h,
        tail_exponent=tail_exp,
        residual_max=residual,
        decay_const=decay_const,
        evaluator=ev,
    )


def partial_mass(profile: RadialProfile, r: float) -> float:
    """Mass of the ball of radius r, ``4 pi \\int_0^r Q s^2 ds``, by cumulative Simpson.

    Independent quadrature route; consistent with ``4 pi r^3 f(r)`` to the
    quadrature tolerance of the graded grid.
    """
    if r < 0 or r > profile.r_max * (1 + 1e-12):
        raise OutOfRange(f"r={r} outside [0, {profile.r_max}]")
    if r == 0.0:
        return 0.0
    g = profile.grid
    integrand = profile.q_vals * g * g
    cum = cumulative_simpson(y=integrand, x=g, initial=0.0)
    k = int(np.searchsorted(g, r, side="right")) - 1
    val = cum[k]
    if r > g[k] and profile.evaluator is not None:
        # local Simpson correction on the partial segment [g_k, r]
        m = 0.5 * (g[k] + r)
        fa = integrand[k]
        fm = profile.evaluator.q(m) * m * m
        fb = profile.evaluator.q(r) * r * r
        val += (r - g[k]) / 6.0 * (fa + 4.0 * fm + fb)
    return float(4.0 * math.pi * val)


def classify_beta(mu: float, beta: float, tol: float = 1e-9) -> tuple[str, int | None]:
    """Phase-portrait classification of a candidate similarity exponent.

    Returns ``(label, j0)`` with label in {"Trivial", "Nontrivial", "Degenerate"}.
    Below or at ``f0`` the stagnation point sits above/on the critical line and
    only the constant solution exists; above it a nontrivial branch requires the
    resonance ``beta - f0 = 1/(2 j0)`` with integer ``j0 >= 2`` and ``beta < 1/2``.
    """
    if not (0.0 < beta < 0.5):
        raise DomainError(f"beta={beta} outside (0, 1/2)")
    f0 = 1.0 / (3.0 * (1.0 - mu))
    gap = beta - f0
    if gap <= tol:
        return "Trivial", None
    j0_real = 1.0 / (2.0 * gap)
    j0 = int(round(j0_real))
    if abs(j0_real - j0) < 1e-6 * j0_real:
        _, j0_min = compute_admissibility(mu)
        if j0 >= max(2, j0_min):
            return "Nontrivial", j0
        return "Degenerate", j0
    return "Trivial", None
