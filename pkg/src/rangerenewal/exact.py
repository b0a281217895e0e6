"""Exact expectations, leading-order asymptotics and limit constants.

Every series over atoms is split into the materialized head (summed directly)
and the analytic tail beyond ``M``.  The tail is handled by an Euler-Maclaurin
step on each smooth piece of the density plus a far part where the summand is
linear (or negligible) in ``pi_x``.  Each evaluator returns ``(value, err)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import special

from .dist import DistributionSpec, Regularity

_GL_HI = np.polynomial.legendre.leggauss(20)
_GL_LO = np.polynomial.legendre.leggauss(10)
EPS = np.finfo(float).eps


class Regime(str, Enum):
    NONCRITICAL = "noncritical"
    SUPCRITICAL = "supcritical"
    SUBCRITICAL = "subcritical"


class Which(str, Enum):
    E = "E"
    E_ELL = "E_ell"
    E_ELL_PLUS = "E_ell_plus"


def log_binom(n, k):
    """log C(n, k); exact summation for scalar k, since gammaln loses digits at large n."""
    if np.ndim(n) == 0 and np.ndim(k) == 0:
        n, k = int(n), int(k)
        k = min(k, n - k)
        if k <= 10_000:
            return math.fsum(np.log(np.arange(n - k + 1, n + 1, dtype=float))) - math.lgamma(k + 1)
    return special.gammaln(np.add(n, 1)) - special.gammaln(np.add(k, 1)) - special.gammaln(np.subtract(n, k) + 1)


# ---------------------------------------------------------------------------
# generic series  sum_x h(pi_x)

def _gauss(f: Callable, lo: float, hi: float) -> tuple[float, float]:
    """Integral of f(x) dx over [lo, hi], substituting x = e^t; composite Gauss."""
    if hi <= lo:
        return 0.0, 0.0
    tl, th = math.log(lo), math.log(hi)
    pieces = max(1, int(math.ceil((th - tl) / math.log(2.0))))
    edges = np.linspace(tl, th, pieces + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    out = []
    for nodes, weights in (_GL_HI, _GL_LO):
        t = mid + half * nodes[None, :]
        x = np.exp(t)
        out.append(float(np.sum(half * weights[None, :] * f(x) * x)))
    return out[0], abs(out[0] - out[1])


def _far_point(spec: DistributionSpec, scale: float) -> float:
    """A point b > M beyond which scale * pi_x <= 1e-12."""
    b = float(spec.M + 1)
    while scale * float(spec.density(b)) > 1e-12 and b < 1e300:
        b *= 2.0
    return b


def series(spec: DistributionSpec, h: Callable[[np.ndarray], np.ndarray], *,
           scale: float = 1.0, lead_power: int = 1, lead_coef: float = 1.0) -> tuple[float, float]:
    """sum_{x>=1} h(pi_x) with an error bound for the analytic tail.

    ``h(p) ~ lead_coef * p**lead_power`` must hold once ``scale * p`` is tiny;
    for ``lead_power == 1`` the far part is added as ``lead_coef * survival``,
    otherwise it is bounded and reported in the error only.
    """
    # numpy sums pairwise: error O(eps log M) on these non-negative terms
    head = float(np.sum(np.asarray(h(spec.head), dtype=float)))
    if spec.finite or spec.tail_mass == 0.0:
        return head, 64 * EPS * abs(head)
    b = _far_point(spec, scale)
    f = lambda x: h(spec.density(x))
    cuts = [float(spec.M + 1)] + [c for c in spec.breakpoints if spec.M + 1 < c < b] + [b]
    mid, err = 0.0, 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        a, c = lo, hi - 1.0       # integer atoms a..c belong to this smooth piece
        if c < a:
            continue
        integral, qerr = _gauss(f, a, c)
        fa, fc = float(f(a)), float(f(c))
        corr = (float(f(c + 0.5)) - float(f(c - 0.5)) - float(f(a + 0.5)) + float(f(a - 0.5))) / 12.0
        mid += integral + 0.5 * (fa + fc) + corr
        # next Euler-Maclaurin term is far smaller than the derivative term
        err += qerr + abs(corr) * 0.1 + 64 * EPS * abs(integral)
    surv = float(spec.survival(b))
    if lead_power == 1:
        far = lead_coef * surv
        err += abs(far) * scale * float(spec.density(b)) * 10
    else:
        far = 0.0
        err += abs(lead_coef) * float(spec.density(b)) ** (lead_power - 1) * surv
    total = head + mid + far
    return total, err + 64 * EPS * abs(total)


# ---------------------------------------------------------------------------
# expectations

def _check_n(n):
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")


def expected_range(spec: DistributionSpec, n: int) -> tuple[float, float]:
    """E R_n = sum_x [1 - (1 - pi_x)^n]."""
    _check_n(n)
    def h(p):
        with np.errstate(divide="ignore"):
            return -np.expm1(n * np.log1p(-p))
    return series(spec, h, scale=n, lead_coef=float(n))


def S_series(spec: DistributionSpec, ell: int, n: int) -> tuple[float, float]:
    """S_ell(n) = sum_x pi_x^ell (1 - pi_x)^(n - ell)."""
    _check_ell(ell, n)
    h = lambda p: _pow_terms(p, ell, n, 0.0)
    return series(spec, h, scale=n, lead_power=ell)


def _pow_terms(p, ell, n, log_c):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        lg = log_c + ell * np.log(p) + (n - ell) * np.log1p(-np.minimum(p, 1.0))
    out = np.exp(lg)
    return np.where(p > 0, out, 0.0) if ell > 0 else out


def _check_ell(ell, n):
    _check_n(n)
    if not 1 <= ell <= n:
        raise ValueError(f"need 1 <= ell <= n, got ell={ell}, n={n}")


def expected_count(spec: DistributionSpec, ell: int, n: int) -> tuple[float, float]:
    """E R_{n,ell} = C(n, ell) S_ell(n), binomial kept in log space."""
    _check_ell(ell, n)
    lc = float(log_binom(n, ell))
    # 1 - pi can be exactly 1 - 1 = 0 for a one-atom law; n - ell = 0 is fine there
    h = lambda p: _pow_terms(p, ell, n, lc)
    return series(spec, h, scale=n, lead_power=ell, lead_coef=math.exp(min(lc, 700)))


def expected_count_plus(spec: DistributionSpec, ell: int, n: int) -> tuple[float, float]:
    """E R_{n,ell+} = sum_x P(Bin(n, pi_x) >= ell)."""
    _check_ell(ell, n)
    if ell == 1:
        return expected_range(spec, n)
    h = lambda p: special.betainc(ell, n - ell + 1, np.minimum(p, 1.0))
    return series(spec, h, scale=n, lead_power=ell, lead_coef=math.exp(min(float(log_binom(n, ell)), 700)))


def derivative_series(spec: DistributionSpec, ell: int, k: int, n: int) -> float:
    """k-th derivative in n of E(n) (ell == 0) or of S_ell(n) (ell >= 1)."""
    if k < 1:
        raise ValueError("derivative order k must be at least 1")
    _check_n(n)
    if ell == 0:
        h = lambda p: -np.exp(n * np.log1p(-p)) * np.log1p(-p) ** k
        value, _ = series(spec, h, scale=n, lead_power=k, lead_coef=-(-1.0) ** k)
    else:
        h = lambda p: _pow_terms(p, ell, n, 0.0) * np.log1p(-p) ** k
        value, _ = series(spec, h, scale=n, lead_power=ell + k, lead_coef=(-1.0) ** k)
    return value


# ---------------------------------------------------------------------------
# non-critical limit fractions

def _check_gamma(gamma):
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def r_limits(gamma: float, L: int) -> np.ndarray:
    """Array with r_ell(gamma) at index ell = 1..L (index 0 unused, set to 0)."""
    _check_gamma(gamma)
    ell = np.arange(1, L + 1, dtype=float)
    logs = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, L, dtype=float) - gamma))])
    out = np.exp(math.log(gamma) + logs - special.gammaln(ell + 1))
    return np.concatenate([[0.0], out])


def r_limit(gamma: float, ell: int) -> float:
    """r_ell(gamma) = gamma * prod_{j<ell} (j - gamma) / ell!."""
    if ell < 1:
        raise ValueError("ell must be at least 1")
    return float(r_limits(gamma, ell)[ell])


def r_tail(gamma: float, ell: int) -> float:
    """sum_{j >= ell} r_j(gamma) = prod_{j<ell} (j - gamma) / (ell - 1)!, in closed form."""
    _check_gamma(gamma)
    if ell <= 1:
        return 1.0
    s = np.sum(np.log(np.arange(1, ell, dtype=float) - gamma)) - special.gammaln(ell)
    return float(np.exp(s))


# ---------------------------------------------------------------------------
# occupancy probabilities S_{k, ell}

@lru_cache(maxsize=None)
def _log_stirling2(kmax: int, L: int) -> np.ndarray:
    out = np.full((kmax + 1, L + 1), -np.inf)
    row = [1] + [0] * kmax          # S2(j, m) for the current j, m = 0..kmax
    for j in range(1, L + 1):
        new = [0] * (kmax + 1)
        for m in range(1, kmax + 1):
            new[m] = m * row[m] + row[m - 1]
        row = new
        for m in range(1, kmax + 1):
            if row[m]:
                out[m, j] = math.log(row[m])
    return out


def _power_sums(spec: DistributionSpec, rest: np.ndarray, L: int) -> tuple[np.ndarray, float]:
    """P_j = sum of pi^j over the non-DP atoms for j = 0..L, plus an error bound."""
    P = np.zeros(L + 1)
    err = 0.0
    r = np.sort(rest)[::-1]
    P[1] = math.fsum(r) + spec.tail_mass
    tail_on = not spec.finite and spec.tail_mass > 0
    p_edge = float(spec.density(spec.M + 1.0)) if tail_on else 0.0
    cur = r.copy()
    for j in range(2, L + 1):
        if cur.size:
            cur *= r[:cur.size]
            P[j] = cur.sum()
            if cur[0] > 0:
                # drop atoms whose power is below roundoff of the running sum
                keep = np.searchsorted(-cur, -1e-20 * cur[0], side="right")
                err += float(cur[keep:].sum()) if keep < cur.size and j == 2 else 0.0
                cur = cur[:keep]
        if tail_on:
            bound = p_edge ** (j - 1) * spec.tail_mass
            if bound > 1e-20 * max(P[j], 1e-300):
                t, e = series(_TailOnly(spec), lambda p, j=j: p**j, lead_power=j)
                P[j] += t
                err += e
    return P, err


class _TailOnly:
    """View of a law whose head is zeroed; used to sum tail-only series."""

    def __init__(self, spec):
        self._s = spec
        self.head = np.zeros(0)
        self.M = spec.M
        self.finite = spec.finite
        self.tail_mass = spec.tail_mass
        self.breakpoints = spec.breakpoints

    def density(self, x):
        return self._s.density(x)

    def survival(self, x):
        return self._s.survival(x)


def _scaled_poly(logabs: np.ndarray, sign, log_lam: float) -> np.ndarray:
    j = np.arange(logabs.size)
    with np.errstate(invalid="ignore"):
        v = np.exp(logabs + j * log_lam - special.gammaln(j + 1))
    return np.where(np.isfinite(logabs), sign * v, 0.0)


@lru_cache(maxsize=64)
def _occupancy_table_cached(spec: DistributionSpec, kmax: int, L: int):
    lam = max(L, 1) / (2 * math.e)
    log_lam = math.log(lam)
    head = spec.head
    thr = 1.0 / (4.0 * kmax)
    big = head[head > thr]
    rest = head[head <= thr]
    size = L + 1

    def conv(a, b):
        return np.convolve(a, b)[:size]

    # direct DP over heavy atoms: each contributes u (e^{p z} - 1)
    T = [np.zeros(size) for _ in range(kmax + 1)]
    T[0][0] = 1.0
    j = np.arange(size, dtype=float)
    for p in big:
        with np.errstate(divide="ignore"):
            la = np.where(j > 0, j * math.log(p), -np.inf)
        A = _scaled_poly(la, 1.0, log_lam)
        for k in range(kmax, 0, -1):
            T[k] = T[k] + conv(A, T[k - 1])

    # light atoms enter through power sums: log prod (1 + u(e^{pz}-1)) = sum_m u^m G_m(z)
    P, err = _power_sums(spec, rest, L)
    ls2 = _log_stirling2(kmax, L)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
    G = [None]
    for m in range(1, kmax + 1):
        la = special.gammaln(m) + ls2[m] + logP
        la[0] = -np.inf
        G.append(_scaled_poly(la, (-1.0) ** (m + 1), log_lam))
    F = [np.zeros(size) for _ in range(kmax + 1)]
    F[0][0] = 1.0
    for k in range(1, kmax + 1):
        acc = np.zeros(size)
        for m in range(1, k + 1):
            acc += m * conv(G[m], F[k - m])
        F[k] = acc / k

    S = np.zeros((kmax + 1, size))
    log_unscale = special.gammaln(j + 1) - j * log_lam
    for k in range(1, kmax + 1):
        acc = np.zeros(size)
        for i in range(0, k + 1):
            acc += conv(T[i], F[k - i])
        with np.errstate(divide="ignore", over="ignore"):
            S[k] = np.where(acc > 0, np.exp(np.log(np.abs(acc)) + log_unscale), 0.0)
    S[:, 0] = 0.0
    for k in range(1, kmax + 1):
        S[k, :k] = 0.0
    np.clip(S, 0.0, 1.0, out=S)
    S.setflags(write=False)
    return S, err + 64 * EPS


def occupancy_table(spec: DistributionSpec, kmax: int, L: int) -> tuple[np.ndarray, float]:
    """Table S[k, ell] of S_{k,ell}(pi) for 1 <= k <= kmax, 0 <= ell <= L."""
    if kmax < 1 or L < 1:
        raise ValueError("kmax and L must be at least 1")
    return _occupancy_table_cached(spec, int(kmax), int(L))


def S_distinct(spec: DistributionSpec, k: int, ell: int) -> tuple[float, float]:
    """Probability that ell i.i.d. draws occupy exactly k distinct atoms."""
    if not 1 <= k <= ell:
        raise ValueError(f"need 1 <= k <= ell, got k={k}, ell={ell}")
    S, err = occupancy_table(spec, k, ell)
    return float(S[k, ell]), err


# ---------------------------------------------------------------------------
# out-degree / degree limit constants

_REGIME_OF = {
    Regularity.NONCRITICAL: Regime.NONCRITICAL,
    Regularity.SUPCRITICAL: Regime.SUPCRITICAL,
    Regularity.SUBCRITICAL: Regime.SUBCRITICAL,
}


def f_limit(spec: DistributionSpec, k: int, regime=None, L_max: int = 512,
            undirected: bool = False) -> tuple[float, float]:
    """Limit constant for the out-degree (or undirected degree) fraction at k.

    noncritical: sum_ell r_ell S_{k,ell}         (denominator R_n)
    supcritical: sum_ell S_{k,ell} / (ell(ell-1)) (denominator R_{n,2+}, ell >= 2)
    subcritical: sum_ell S_{k,ell} / ell          (multiplies phi0'; directed only)
    ``undirected`` replaces S_{k,ell} by S_{k,2 ell}.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if (2 * L_max if undirected else L_max) < k:
        raise ValueError("L_max too small for this k")
    expected = _REGIME_OF.get(spec.regularity)
    regime = expected if regime is None else Regime(regime)
    if expected is None or regime != expected:
        raise ValueError(f"regime {regime} does not match a {spec.regularity.value} law")
    if undirected and regime == Regime.SUBCRITICAL:
        raise ValueError("no undirected limit constant exists for sub-critical laws")
    span = 2 * L_max if undirected else L_max
    # round the row count up so neighbouring k share one cached table
    S, s_err = occupancy_table(spec, min(span, max(8, 1 << (k - 1).bit_length())), span)
    ell = np.arange(L_max + 1)
    idx = 2 * ell if undirected else ell
    s = S[k, idx]
    # Q: probability that the draws occupy at most k atoms; non-increasing in the draw count
    Q = float(S[1:k + 1, idx[-1]].sum())
    if undirected:
        start = (k + 1) // 2
    else:
        start = k
    if regime == Regime.NONCRITICAL:
        w = r_limits(spec.gamma, L_max)
        remainder = Q * r_tail(spec.gamma, L_max + 1)
    elif regime == Regime.SUPCRITICAL:
        start = max(start, 2)
        w = np.zeros(L_max + 1)
        w[2:] = 1.0 / (ell[2:] * (ell[2:] - 1.0))
        remainder = Q / L_max
    else:
        w = np.zeros(L_max + 1)
        w[1:] = 1.0 / ell[1:]
        remainder = _subcritical_remainder(spec, k, L_max)
    value = float(np.sum(w[start:] * s[start:]))
    return value, remainder + s_err * float(np.sum(w[start:]))


def _subcritical_remainder(spec, k, L):
    # P(at most k atoms among ell draws) <= C(ell, k) rho^(ell - k), rho = top-k mass
    rho = float(np.sort(spec.head)[::-1][:k].sum())
    if rho >= 1.0:
        return 0.0
    ell = np.arange(L + 1, L + 20000, dtype=float)
    terms = np.exp(log_binom(ell, k) + (ell - k) * math.log(rho)) / ell
    return float(terms.sum())


def expected_outdegree_leading(spec: DistributionSpec, k: int, ell: int, n: int) -> float:
    """Leading term S_{k,ell} * C(n, ell) S_ell(n) of E R~_{n,k,ell}."""
    s, _ = S_distinct(spec, k, ell)
    e, _ = expected_count(spec, ell, n)
    return s * e


# ---------------------------------------------------------------------------
# leading-order asymptotics

def asymptotic_expectation(spec: DistributionSpec, n: int, which="E", ell: Optional[int] = None) -> float:
    """Leading term of E R_n, E R_{n,ell} or E R_{n,ell+} for a regular law."""
    which = Which(which)
    meta = spec.meta
    if spec.regularity == Regularity.IRREGULAR or meta is None:
        raise ValueError("asymptotics are only defined for regular laws")
    if which != Which.E and (ell is None or ell < 1):
        raise ValueError("ell >= 1 required")
    if which == Which.E_ELL_PLUS and ell == 1:
        which = Which.E
    base = meta.phi_inv(float(n))
    reg, g = spec.regularity, spec.gamma
    if reg == Regularity.NONCRITICAL:
        if which == Which.E:
            return math.gamma(1 - g) * base
        if which == Which.E_ELL:
            return g * math.exp(special.gammaln(ell - g) - special.gammaln(ell + 1)) * base
        return math.exp(special.gammaln(ell - g) - special.gammaln(ell)) * base
    if reg == Regularity.SUBCRITICAL:
        if which == Which.E_ELL:
            return meta.phi0_prime(math.log(n)) / ell
        return base
    # sup-critical
    if which == Which.E or (which == Which.E_ELL and ell == 1):
        return meta.g_norm * base * meta.psi(math.log(n))
    if which == Which.E_ELL:
        return base / (ell * (ell - 1))
    return base / (ell - 1)


def order_exponents(spec: DistributionSpec, n: float) -> tuple[float, float]:
    """(log phi^-1(n) / log n, log psi(log n) / log n) for a sup-critical law; both tend to (1, 0)."""
    if spec.regularity != Regularity.SUPCRITICAL:
        raise ValueError("order exponents are stated for sup-critical laws")
    ln = math.log(n)
    return math.log(spec.meta.phi_inv(float(n))) / ln, math.log(spec.meta.psi(ln)) / ln


# ---------------------------------------------------------------------------
# report

@dataclass
class TheoryReport:
    """Flat collection of theory values with truncation-error bounds."""

    spec_key: dict
    rows: list = field(default_factory=list)

    def add(self, name: str, params: dict, value: float, trunc_err: float = 0.0):
        self.rows.append((name, dict(params), float(value), float(trunc_err)))

    def get(self, name: str, **params) -> float:
        for nm, p, v, _ in self.rows:
            if nm == name and p == params:
                return v
        raise KeyError((name, params))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["name", "params", "value", "trunc_err"])
        for nm, p, v, e in self.rows:
            w.writerow([nm, ";".join(f"{k}={p[k]}" for k in p), repr(v), repr(e)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"distribution": self.spec_key,
               "entries": [{"name": nm, "params": p, "value": v, "trunc_err": e}
                           for nm, p, v, e in self.rows]}
        return json.dumps(doc, indent=2, sort_keys=True)


def theory_report(spec: DistributionSpec, ns: Iterable[int], ells: Iterable[int] = (1, 2, 3),
                  ks: Iterable[int] = (1, 2), L_max: int = 512) -> TheoryReport:
    ells, ks, ns = list(ells), list(ks), [int(n) for n in ns]
    rep = TheoryReport(spec.to_config())
    regular = spec.regularity != Regularity.IRREGULAR and spec.meta is not None
    for n in ns:
        v, e = expected_range(spec, n)
        rep.add("E", {"n": n}, v, e)
        if regular:
            rep.add("E_asymptotic", {"n": n}, asymptotic_expectation(spec, n, "E"))
        for ell in ells:
            if ell > n:
                continue
            v, e = S_series(spec, ell, n)
            rep.add("S_ell", {"ell": ell, "n": n}, v, e)
            v, e = expected_count(spec, ell, n)
            rep.add("E_ell", {"ell": ell, "n": n}, v, e)
            v, e = expected_count_plus(spec, ell, n)
            rep.add("E_ell_plus", {"ell": ell, "n": n}, v, e)
            if regular:
                rep.add("E_ell_asymptotic", {"ell": ell, "n": n},
                        asymptotic_expectation(spec, n, "E_ell", ell))
                if ell >= 2 or spec.regularity == Regularity.NONCRITICAL:
                    rep.add("E_ell_plus_asymptotic", {"ell": ell, "n": n},
                            asymptotic_expectation(spec, n, "E_ell_plus", ell))
    if spec.regularity == Regularity.NONCRITICAL:
        for ell in ells:
            rep.add("r_ell", {"ell": ell}, r_limit(spec.gamma, ell))
    kmax = max(ks) if ks else 1
    lmax = max(ells + [kmax])
    S, err = occupancy_table(spec, kmax, lmax)
    for k in ks:
        for ell in ells:
            if k <= ell:
                rep.add("S_kl", {"k": k, "ell": ell}, S[k, ell], err)
    if regular:
        for k in ks:
            v, e = f_limit(spec, k, L_max=L_max)
            rep.add("f_tilde_k" if spec.regularity == Regularity.SUBCRITICAL else "f_k", {"k": k}, v, e)
            if spec.regularity != Regularity.SUBCRITICAL:
                v, e = f_limit(spec, k, L_max=L_max, undirected=True)
                rep.add("f_hat_k", {"k": k}, v, e)
    return rep
