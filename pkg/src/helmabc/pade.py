"""Padé-family absorbing boundary conditions for the Helmholtz equation.

The boundary condition on the truncation boundary is

    q(-k^-2 Δ_Γ) (k^-1 ∂_n v) - i p(-k^-2 Δ_Γ) v = 0,

where p/q is the [M, N] Padé approximant at t = 0 of sqrt(1 - t) and
t = |ξ'|² = sin²θ is the squared tangential frequency of a ray hitting the
boundary at angle θ to the normal.  M = N = 0 is the impedance condition
∂_n v - ikv = 0.

Everything in this module is a pure function of the coefficients.  Where the
low-order behaviour matters (orders, reflection coefficients near normal
incidence, Υ scaling) the computations go through the polynomial

    Q(t) = q(t)² (1 - t) - p(t)²  =  (q sqrt(1-t) - p)(q sqrt(1-t) + p),

whose low-order coefficients vanish exactly in rational arithmetic, so that
q sqrt(1-t) - p = Q / (q sqrt(1-t) + p) is evaluated without cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from helmabc.exceptions import InadmissiblePadeError

__all__ = [
    "PadeAbc",
    "ReflectionProfile",
    "AdmissibilityReport",
    "sqrt_taylor",
    "compute_pade",
    "impedance",
    "pade_order",
    "find_zeros",
    "reflection_coefficient",
    "reflection_profile",
    "admissibility_check",
    "upsilon_circle",
]

_MAX_ORDER_TERMS = 400


# ---------------------------------------------------------------------------
# Exact polynomial helpers (coefficient lists, lowest degree first)
# ---------------------------------------------------------------------------
def _pmul(a: Sequence, b: Sequence) -> list:
    out = [0 * a[0]] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            out[i + j] = out[i + j] + ai * bj
    return out


def _psub(a: Sequence, b: Sequence) -> list:
    n = max(len(a), len(b))
    a = list(a) + [0] * (n - len(a))
    b = list(b) + [0] * (n - len(b))
    return [x - y for x, y in zip(a, b)]


def _ptrim(a: Sequence) -> list:
    a = list(a)
    while len(a) > 1 and a[-1] == 0:
        a.pop()
    return a


def _pderiv(a: Sequence) -> list:
    if len(a) == 1:
        return [0 * a[0]]
    return [i * a[i] for i in range(1, len(a))]


def _pdivmod(a: Sequence[Fraction], b: Sequence[Fraction]):
    a = _ptrim(a)
    b = _ptrim(b)
    if len(b) == 1 and b[0] == 0:
        raise ZeroDivisionError("polynomial division by zero")
    quot = [Fraction(0)] * max(len(a) - len(b) + 1, 1)
    rem = list(a)
    while len(rem) >= len(b) and not (len(rem) == 1 and rem[0] == 0):
        shift = len(rem) - len(b)
        coef = rem[-1] / b[-1]
        quot[shift] = coef
        for i, bi in enumerate(b):
            rem[i + shift] -= coef * bi
        rem = _ptrim(rem[:-1]) if len(rem) > 1 else [Fraction(0)]
        if len(rem) < len(b):
            break
    return _ptrim(quot), _ptrim(rem)


def _pgcd(a: Sequence[Fraction], b: Sequence[Fraction]) -> list[Fraction]:
    a, b = _ptrim(a), _ptrim(b)
    while not (len(b) == 1 and b[0] == 0):
        _, r = _pdivmod(a, b)
        a, b = b, r
    lead = a[-1]
    return [c / lead for c in a]


def _square_free_factors(poly: Sequence[Fraction]) -> list[tuple[list[Fraction], int]]:
    """Yun's square-free decomposition over the rationals: [(factor, multiplicity), ...]."""
    f = _ptrim(poly)
    out = []
    df = _pderiv(f)
    g = _pgcd(f, df)
    c, _ = _pdivmod(f, g)
    d = _psub(_pdivmod(df, g)[0], _pderiv(c))
    mult = 1
    while len(_ptrim(c)) > 1:
        a = _pgcd(c, d)
        if len(a) > 1:
            out.append((a, mult))
        c, _ = _pdivmod(c, a)
        y, _ = _pdivmod(d, a)
        d = _psub(y, _pderiv(c))
        mult += 1
    return out


def sqrt_taylor(n_terms: int) -> list[Fraction]:
    """Exact Taylor coefficients of sqrt(1 - t) at t = 0: c_0 = 1, c_n = c_{n-1} (n - 3/2) / n."""
    c = [Fraction(1)]
    for n in range(1, n_terms):
        c.append(c[-1] * Fraction(2 * n - 3, 2 * n))
    return c[:n_terms]


def _solve_rational(A: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    """Gaussian elimination with exact pivoting; raises on a singular system."""
    n = len(b)
    M = [row[:] + [rhs] for row, rhs in zip(A, b)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise InadmissiblePadeError("singular Padé system")
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col] / M[col][col]
                M[r] = [x - f * y for x, y in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PadeAbc:
    """Coefficients of a Padé-family boundary condition.

    Attributes
    ----------
    M, N : int
        Degrees of the numerator p and denominator q (in t = |ξ'|²).
    p, q : tuple of float
        Coefficients, lowest degree first; ``q[0] == 1`` for genuine
        Padé approximants.
    p_exact, q_exact : tuple of Fraction or None
        Exact rational coefficients when known.  Used for orders and
        zero finding.
    """

    M: int
    N: int
    p: tuple[float, ...]
    q: tuple[float, ...]
    p_exact: tuple[Fraction, ...] | None = field(default=None, repr=False, compare=False)
    q_exact: tuple[Fraction, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.p) != self.M + 1 or len(self.q) != self.N + 1:
            raise ValueError("coefficient lengths must be M+1 and N+1")

    @classmethod
    def from_coefficients(cls, p: Sequence, q: Sequence = (1,)) -> "PadeAbc":
        """Build from explicit coefficients (exact if all entries are int/Fraction)."""
        exact = all(isinstance(c, (int, Fraction)) for c in list(p) + list(q))
        return cls(
            M=len(p) - 1,
            N=len(q) - 1,
            p=tuple(float(c) for c in p),
            q=tuple(float(c) for c in q),
            p_exact=tuple(Fraction(c) for c in p) if exact else None,
            q_exact=tuple(Fraction(c) for c in q) if exact else None,
        )

    def scaled(self, factor) -> "PadeAbc":
        """Multiply p and q by the same constant; the rational function p/q is unchanged."""
        exact = self.p_exact is not None and isinstance(factor, (int, Fraction))
        return PadeAbc(
            self.M,
            self.N,
            tuple(float(factor) * c for c in self.p),
            tuple(float(factor) * c for c in self.q),
            tuple(factor * c for c in self.p_exact) if exact else None,
            tuple(factor * c for c in self.q_exact) if exact else None,
        )

    @property
    def is_exact(self) -> bool:
        return self.p_exact is not None and self.q_exact is not None

    @property
    def label(self) -> str:
        return f"({self.M},{self.N})"

    @cached_property
    def m_ord(self) -> int:
        return pade_order(self)

    @cached_property
    def zeros(self) -> tuple[tuple[float, int], ...]:
        return tuple(find_zeros(self))

    @property
    def psi(self) -> tuple[float, ...]:
        """Vanishing angles asin(sqrt(t_j)) of the reflection coefficient."""
        return tuple(math.asin(math.sqrt(t)) for t, _ in self.zeros)

    @property
    def m_vanish(self) -> int:
        return len(self.zeros)

    @property
    def m_mult(self) -> int:
        return max((m for _, m in self.zeros), default=0)

    @cached_property
    def _Q(self) -> np.ndarray:
        # Q(t) = q^2 (1 - t) - p^2, exact where possible so that low-order
        # coefficients are exactly zero.
        if self.is_exact:
            p, q = list(self.p_exact), list(self.q_exact)
        else:
            p, q = list(self.p), list(self.q)
        Q = _psub(_pmul(_pmul(q, q), [1, -1]), _pmul(p, p))
        return np.array([float(c) for c in Q])

    def eval_p(self, t):
        return np.polynomial.polynomial.polyval(t, self.p)

    def eval_q(self, t):
        return np.polynomial.polynomial.polyval(t, self.q)

    def mismatch(self, t):
        """q(t) sqrt(1-t) - p(t), evaluated without cancellation near t = 0."""
        t = np.asarray(t, dtype=float)
        s = np.sqrt(1.0 - t)
        return np.polynomial.polynomial.polyval(t, self._Q) / (self.eval_q(t) * s + self.eval_p(t))


@dataclass(frozen=True)
class ReflectionProfile:
    abc: PadeAbc
    samples: tuple[tuple[float, float], ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.samples, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class AdmissibilityReport:
    passed: bool
    p_roots_in_interval: tuple[float, ...]
    q_roots_in_interval: tuple[float, ...]
    min_ratio: float
    interlacing: bool
    message: str


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------
def compute_pade(M: int, N: int) -> PadeAbc:
    """[M, N] Padé approximant at t = 0 of sqrt(1 - t), with q(0) = 1.

    Only the pairs M = N and M = N + 1 are accepted; for these the
    truncated problem is well posed.

    Examples
    --------
    >>> compute_pade(1, 1).p, compute_pade(1, 1).q
    ((1.0, -0.75), (1.0, -0.25))
    """
    if M < 0 or N < 0 or int(M) != M or int(N) != N:
        raise InadmissiblePadeError(f"M and N must be nonnegative integers, got ({M}, {N})")
    if not (M == N or M == N + 1):
        raise InadmissiblePadeError(
            f"inadmissible Padé pair ({M}, {N}): well-posedness requires M = N or M = N + 1"
        )
    c = sqrt_taylor(M + N + 1)
    cc = lambda n: c[n] if n >= 0 else Fraction(0)  # noqa: E731
    # Denominator: sum_{j=0}^{N} q_j c_{i-j} = 0 for i = M+1..M+N, q_0 = 1.
    if N > 0:
        A = [[cc(i - j) for j in range(1, N + 1)] for i in range(M + 1, M + N + 1)]
        rhs = [-cc(i) for i in range(M + 1, M + N + 1)]
        q = [Fraction(1)] + _solve_rational(A, rhs)
    else:
        q = [Fraction(1)]
    p = [sum((q[j] * cc(i - j) for j in range(min(i, N) + 1)), Fraction(0)) for i in range(M + 1)]
    if p[M] == 0 or q[N] == 0:
        raise InadmissiblePadeError(f"degenerate Padé approximant for ({M}, {N})")
    return PadeAbc(M, N, tuple(map(float, p)), tuple(map(float, q)), tuple(p), tuple(q))


def impedance() -> PadeAbc:
    """The impedance condition ∂_n v - ikv = 0, i.e. p = q = 1."""
    return compute_pade(0, 0)


def pade_order(abc: PadeAbc) -> int:
    """Order of contact m_ord: sqrt(1 - t) - p/q = O(t^m_ord), m_ord exact.

    Rational coefficients are used when available; otherwise the series is
    computed in floating point and a coefficient counts as zero below a
    relative tolerance of 1e-12.
    """
    exact = abc.is_exact
    p = list(abc.p_exact) if exact else [float(x) for x in abc.p]
    q = list(abc.q_exact) if exact else [float(x) for x in abc.q]
    n_terms = max(abc.M + abc.N + 4, 8)
    while n_terms <= _MAX_ORDER_TERMS:
        c = sqrt_taylor(n_terms)
        if not exact:
            c = [float(x) for x in c]
        # q * sqrt(1-t) - p has the same order as sqrt(1-t) - p/q since q(0) != 0
        d = _psub(_pmul(q, c)[:n_terms], p)
        scale = max(abs(float(x)) for x in q) if not exact else 1
        for n, dn in enumerate(d[:n_terms]):
            if exact and dn != 0:
                return n
            if not exact and abs(dn) > 1e-12 * scale * max(1.0, abs(c[n])):
                return n
        n_terms *= 2
    raise ArithmeticError("order of contact not found within series budget")


def find_zeros(abc: PadeAbc) -> list[tuple[float, int]]:
    """Zeros of q(t) sqrt(1-t) - p(t) on (0, 1] with their multiplicities.

    Zeros are roots of Q(t) = q²(1-t) - p² at which q sqrt(1-t) and p have
    the same sign.  Multiplicities come from the square-free decomposition
    of Q (gcd with its derivative), roots of each square-free factor from
    companion-matrix eigenvalues polished by bracketed root finding.
    """
    if abc.is_exact:
        p, q = list(abc.p_exact), list(abc.q_exact)
    else:
        p = [Fraction(x) for x in abc.p]
        q = [Fraction(x) for x in abc.q]
    Q = _ptrim(_psub(_pmul(_pmul(q, q), [Fraction(1), Fraction(-1)]), _pmul(p, p)))
    # strip the t^m factor: the root at t = 0 is excluded
    while len(Q) > 1 and Q[0] == 0:
        Q = Q[1:]
    zeros: list[tuple[float, int]] = []
    if len(Q) <= 1:
        return zeros
    for factor, mult in _square_free_factors(Q):
        fl = np.array([float(x) for x in factor])
        roots = np.roots(fl[::-1]) if len(fl) > 1 else np.array([])
        for r in roots:
            if abs(r.imag) > 1e-8 or not (-1e-9 < r.real <= 1 + 1e-9):
                continue
            t0 = float(r.real)
            t0 = _polish_root(fl, t0)
            if t0 <= 0.0 or t0 > 1.0:
                continue
            lhs = abc.eval_q(t0) * math.sqrt(max(1.0 - t0, 0.0))
            rhs = abc.eval_p(t0)
            if t0 < 1.0 and np.sign(lhs) != np.sign(rhs):
                continue
            zeros.append((t0, mult))
    return sorted(zeros)


def _polish_root(coeffs: np.ndarray, t0: float) -> float:
    f = lambda t: np.polynomial.polynomial.polyval(t, coeffs)  # noqa: E731
    for width in (1e-10, 1e-8, 1e-6, 1e-4):
        a, b = t0 - width, min(t0 + width, 1.0)
        fa, fb = f(a), f(b)
        if fa == 0:
            return a
        if fb == 0:
            return b
        if fa * fb < 0:
            return brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    if abs(f(t0)) < 1e-12:
        return t0
    raise ArithmeticError(
        f"root polish failed near t={t0!r}: no sign change in brackets up to ±1e-4"
    )


def _alpha_from_t(abc: PadeAbc, t: np.ndarray) -> np.ndarray:
    s = np.sqrt(1.0 - t)
    den = abc.eval_q(t) * s + abc.eval_p(t)
    if np.any(den == 0):
        raise ZeroDivisionError("q sqrt(r) + p vanishes; coefficients are not admissible")
    Qv = np.polynomial.polynomial.polyval(t, abc._Q)
    return (Qv / den**2) ** 2


def reflection_coefficient(abc: PadeAbc, theta):
    """Energy reflection coefficient α_ref(θ) = ((√r q - p)/(√r q + p))², t = sin²θ, r = 1 - t.

    Accepts a scalar or array of angles in [0, π/2).
    """
    th = np.asarray(theta, dtype=float)
    if np.any(th < 0) or np.any(th >= np.pi / 2):
        raise ValueError("θ must lie in [0, π/2); glancing incidence has no reflection coefficient")
    out = _alpha_from_t(abc, np.sin(th) ** 2)
    return float(out) if out.ndim == 0 else out


def reflection_profile(abc: PadeAbc, thetas) -> ReflectionProfile:
    thetas = np.asarray(thetas, dtype=float)
    alphas = np.atleast_1d(reflection_coefficient(abc, thetas))
    return ReflectionProfile(abc, tuple(zip(thetas.tolist(), alphas.tolist())))


def admissibility_check(abc: PadeAbc, n_samples: int = 2001) -> AdmissibilityReport:
    """Check that p and q have no roots in [-1, 1] and p/q > 0 there.

    Also reports whether the zeros and poles of p(s²)/(s q(s²)) are real,
    simple and interlacing, the characterisation of admissible pairs.
    """
    def roots_in(coeffs):
        c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
        if len(c) <= 1:
            return (), np.array([])
        r = np.roots(c[::-1])
        real = r[np.abs(r.imag) < 1e-10].real
        return tuple(sorted(float(x) for x in real if -1.0 <= x <= 1.0)), r

    p_in, p_all = roots_in(abc.p)
    q_in, q_all = roots_in(abc.q)
    t = np.linspace(-1.0, 1.0, n_samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = abc.eval_p(t) / abc.eval_q(t)
    min_ratio = float(np.nanmin(ratio)) if np.all(np.isfinite(ratio)) else float("-inf")
    interlacing = _interlacing(p_all, q_all)
    passed = not p_in and not q_in and min_ratio > 0
    if passed:
        msg = "pass"
    else:
        parts = []
        if p_in:
            parts.append(f"p has roots {list(p_in)} in [-1, 1]")
        if q_in:
            parts.append(f"q has roots {list(q_in)} in [-1, 1]")
        if min_ratio <= 0:
            parts.append(f"p/q not positive on [-1, 1] (min {min_ratio:.3g})")
        msg = "fail: " + "; ".join(parts)
    return AdmissibilityReport(passed, p_in, q_in, min_ratio, interlacing, msg)


def _interlacing(p_roots: np.ndarray, q_roots: np.ndarray) -> bool:
    # zeros/poles of p(s^2) / (s q(s^2)) in the variable s
    pts = []
    for roots, kind in ((p_roots, 0), (q_roots, 1)):
        for r in roots:
            if abs(r.imag) > 1e-10 or r.real <= 0:
                return False
            s = math.sqrt(r.real)
            pts += [(s, kind), (-s, kind)]
    pts.append((0.0, 1))
    pts.sort()
    vals = [v for v, _ in pts]
    if np.any(np.diff(vals) < 1e-12):
        return False
    kinds = [k for _, k in pts]
    return all(a != b for a, b in zip(kinds, kinds[1:]))


def _upsilon_integrand(abc: PadeAbc, theta: np.ndarray) -> np.ndarray:
    # |q cosθ - p| + 2 sinθ |d/dθ (q cosθ - p)|, with (.)(θ) = g(sin²θ) and
    # g = Q / (q s + p), s = sqrt(1 - t), evaluated without cancellation.
    P = np.polynomial.polynomial
    t = np.sin(theta) ** 2
    s = np.cos(theta)
    pv, qv = abc.eval_p(t), abc.eval_q(t)
    dp = P.polyval(t, P.polyder(abc.p)) if abc.M > 0 else 0.0 * t
    dq = P.polyval(t, P.polyder(abc.q)) if abc.N > 0 else 0.0 * t
    Qv = P.polyval(t, abc._Q)
    dQ = P.polyval(t, P.polyder(abc._Q))
    den = qv * s + pv
    g = Qv / den
    dden = dq * s - qv / (2.0 * s) + dp
    dg_dt = dQ / den - Qv * dden / den**2
    dg_dtheta = dg_dt * 2.0 * np.sin(theta) * s
    return np.abs(g) + 2.0 * np.sin(theta) * np.abs(dg_dtheta)


def upsilon_circle(abc: PadeAbc, R: float, cone_constant: float = 1.0, n_samples: int = 10001) -> float:
    """Υ(R) for Γ_tr = ∂B(0, R): sup of the symbol mismatch over |cosθ - 1| ≤ C/R².

    Dense sampling followed by golden-section refinement around the best
    sample.
    """
    if R < 1:
        raise ValueError("R must be >= 1")
    if cone_constant <= 0:
        raise ValueError("cone constant must be positive")
    c = 1.0 - cone_constant / R**2
    theta_max = math.acos(max(c, -1.0))
    theta_max = min(theta_max, math.pi / 2 - 1e-9)
    th = np.linspace(0.0, theta_max, n_samples)
    vals = _upsilon_integrand(abc, th)
    i = int(np.argmax(vals))
    best = float(vals[i])
    if 0 < i < n_samples - 1:
        res = minimize_scalar(
            lambda x: -float(_upsilon_integrand(abc, np.array([x]))[0]),
            bracket=(th[i - 1], th[i], th[i + 1]),
            method="golden",
        )
        if 0 <= res.x <= theta_max:
            best = max(best, -float(res.fun))
    return best
