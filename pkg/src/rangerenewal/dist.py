"""Discrete laws on {1, 2, ...} with regularity metadata.

Every law materializes its first ``M`` atoms exactly; the mass beyond ``M`` is
carried analytically (survival function, continuous density and its integral)
so that both the exact series in :mod:`rangerenewal.exact` and the sampler in
:mod:`rangerenewal.engine` see the full, untruncated law.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

DEFAULT_M = 2**20

# Atoms at or beyond this index cannot be represented exactly as float64
# integers; the sampler hands them out as fresh identities instead.
ATOM_CAP = 2**53


class Regularity(str, Enum):
    NONCRITICAL = "noncritical"
    SUBCRITICAL = "subcritical"
    SUPCRITICAL = "supcritical"
    IRREGULAR = "irregular"


@dataclass(frozen=True)
class RegularityMeta:
    """The functions that describe how fast the law's tail decays.

    ``phi`` is ``x -> 1/pi_x`` continued to real ``x``; ``phi_inv`` is its
    inverse on the eventually monotone range.  ``phi0_prime`` is only set for
    sub-critical laws, ``psi``/``g``/``g_norm`` only for sup-critical ones.
    """

    phi: Callable[[float], float]
    phi_inv: Callable[[float], float]
    phi0_prime: Optional[Callable[[float], float]] = None
    psi: Optional[Callable[[float], float]] = None
    g: Optional[Callable[[float], float]] = None
    g_norm: Optional[float] = None
    log_offset: float = 0.0


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class DistributionSpec:
    """Base class: an immutable law with materialized head ``pi_1..pi_M``.

    Subclasses provide the continuous density, the analytic survival beyond
    ``M`` and an approximate inverse of it; everything else is shared.
    """

    M: int
    family: str = field(init=False, default="")
    regularity: Regularity = field(init=False, default=Regularity.IRREGULAR)
    gamma: Optional[float] = field(init=False, default=None)

    # -- subclass hooks -------------------------------------------------
    def density(self, x):
        """Continuous extension x -> pi(x) for real x >= 1 (vectorized)."""
        raise NotImplementedError

    def _tail_from(self, x: np.ndarray) -> np.ndarray:
        """Normalized sum of pi_y over y >= x, for integer-valued x > M."""
        raise NotImplementedError

    def _tail_inverse_guess(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tail_integral(self, b: float) -> float:
        """Integral of the continuous density over [b, inf)."""
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError

    @property
    def meta(self) -> Optional[RegularityMeta]:
        return None

    @property
    def breakpoints(self) -> tuple:
        """Points where the continuous density is discontinuous."""
        return ()

    @property
    def finite(self) -> bool:
        return False

    # -- shared machinery -----------------------------------------------
    def _set_head(self, head: np.ndarray, tail_mass: float) -> None:
        head = np.ascontiguousarray(head, dtype=float)
        head.setflags(write=False)
        # suffix[i] = sum of head[i:] + tail_mass, i.e. survival(i + 1)
        suffix = np.concatenate([np.cumsum(head[::-1])[::-1], [0.0]]) + tail_mass
        suffix.setflags(write=False)
        object.__setattr__(self, "_head", head)
        object.__setattr__(self, "_tail_mass", float(tail_mass))
        object.__setattr__(self, "_suffix", suffix)

    @property
    def head(self) -> np.ndarray:
        """pi_1 .. pi_M as a read-only array (index 0 is atom 1)."""
        return self._head

    @property
    def tail_mass(self) -> float:
        """Total mass of the atoms M+1, M+2, ..."""
        return self._tail_mass

    @property
    def key(self) -> tuple:
        return (self.family, tuple(sorted(self.params().items())), self.M)

    @property
    def pi_max(self) -> float:
        return float(self._head.max())

    def mass(self, x: int) -> float:
        """pi_x for a single atom x >= 1."""
        if x < 1:
            raise ValueError(f"atoms are positive integers, got {x}")
        if x <= self.M:
            return float(self._head[x - 1])
        if self.finite:
            return 0.0
        return float(self.density(float(x)))

    def survival(self, x) -> np.ndarray:
        """P(X >= x) for integer-valued x (vectorized)."""
        x = _as_array(x)
        out = np.empty_like(x)
        low = x <= 1
        out[low] = 1.0
        inside = (~low) & (x <= self.M + 1)
        out[inside] = self._suffix[x[inside].astype(np.int64) - 1]
        beyond = x > self.M + 1
        if beyond.any():
            out[beyond] = 0.0 if self.finite else self._tail_from(x[beyond])
        return out

    def inverse_survival(self, v) -> np.ndarray:
        """Largest integer x > M with survival(x) >= v, for 0 < v <= tail_mass.

        Results at or above :data:`ATOM_CAP` are returned as floats without the
        integer correction step (they are only used as fresh identities).
        """
        v = _as_array(v)
        shape = v.shape
        v = np.atleast_1d(v)
        x = np.floor(self._tail_inverse_guess(v))
        x = np.where(np.isfinite(x), x, np.inf)
        x = np.maximum(x, self.M + 1.0)
        fix = x < ATOM_CAP
        if fix.any():
            k, vv = x[fix], v[fix]
            for _ in range(200):
                bad = self.survival(k) < vv
                if not bad.any():
                    break
                k[bad] -= 1
            for _ in range(200):
                move = self.survival(k + 1) >= vv
                if not move.any():
                    break
                k[move] += 1
            x[fix] = k
        return x.reshape(shape)

    def phi(self, x):
        return 1.0 / self.density(x)

    def phi_inv(self, y: float) -> float:
        if self.meta is None:
            raise ValueError(f"{self.family} law has no phi^-1")
        return self.meta.phi_inv(y)

    @property
    def x0(self) -> Optional[int]:
        """First atom from which pi is strictly decreasing (None for finite laws)."""
        return None if self.finite else 1

    def to_config(self) -> dict:
        return {"family": self.family, **self.params(), "M": self.M}


# ---------------------------------------------------------------------------
# power law

def _em_tail(f0: float, f1: float, f3: float, integral: float) -> float:
    """Euler-Maclaurin tail: sum_{x>=a} f(x) from f(a), f'(a), f'''(a), int_a^inf f."""
    return integral + f0 / 2 - f1 / 12 + f3 / 720


@dataclass(frozen=True, eq=False)
class PowerLaw(DistributionSpec):
    alpha: float = 2.0

    def __post_init__(self):
        a, M = self.alpha, self.M
        x = np.arange(1, M + 1, dtype=float)
        w = x ** -a
        b = M + 1.0
        tail = _em_tail(b**-a, -a * b ** (-a - 1), -a * (a + 1) * (a + 2) * b ** (-a - 3),
                        b ** (1 - a) / (a - 1))
        Z = math.fsum(w[::-1]) + tail
        object.__setattr__(self, "family", "power_law")
        object.__setattr__(self, "regularity", Regularity.NONCRITICAL)
        object.__setattr__(self, "gamma", 1.0 / a)
        object.__setattr__(self, "Z", Z)
        self._set_head(w / Z, tail / Z)

    def density(self, x):
        return _as_array(x) ** -self.alpha / self.Z

    def _tail_from(self, x):
        return special.zeta(self.alpha, x) / self.Z

    def _tail_inverse_guess(self, v):
        a = self.alpha
        with np.errstate(over="ignore", divide="ignore"):
            return ((a - 1) * v * self.Z) ** (-1 / (a - 1)) + 0.5

    def tail_integral(self, b):
        return b ** (1 - self.alpha) / ((self.alpha - 1) * self.Z)

    def params(self):
        return {"alpha": self.alpha}

    @property
    def meta(self):
        a, C = self.alpha, 1.0 / self.Z
        return RegularityMeta(phi=lambda x: x**a / C, phi_inv=lambda y: (C * y) ** (1 / a))


def make_power_law(alpha: float, M: int = DEFAULT_M) -> PowerLaw:
    """pi_x = x^-alpha / zeta(alpha); non-critical with index 1/alpha."""
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1 for a summable power law, got {alpha}")
    if M < 2:
        raise ValueError("M must be at least 2")
    return PowerLaw(M=int(M), alpha=float(alpha))


# ---------------------------------------------------------------------------
# geometric

@dataclass(frozen=True, eq=False)
class Geometric(DistributionSpec):
    a: float = math.log(2)

    def __post_init__(self):
        a, M = self.a, self.M
        C = math.expm1(a)
        x = np.arange(1, M + 1, dtype=float)
        object.__setattr__(self, "family", "geometric")
        object.__setattr__(self, "regularity", Regularity.SUBCRITICAL)
        object.__setattr__(self, "gamma", 0.0)
        object.__setattr__(self, "C", C)
        self._set_head(C * np.exp(-a * x), math.exp(-a * M))

    def density(self, x):
        return self.C * np.exp(-self.a * _as_array(x))

    def _tail_from(self, x):
        return np.exp(-self.a * (x - 1))

    def _tail_inverse_guess(self, v):
        # exact: largest x with exp(-a (x - 1)) >= v
        return 1.0 + np.floor(-np.log(v) / self.a)

    def tail_integral(self, b):
        return self.C * math.exp(-self.a * b) / self.a

    def params(self):
        return {"a": self.a}

    @property
    def meta(self):
        a, C = self.a, self.C
        return RegularityMeta(
            phi=lambda x: np.exp(a * x) / C,
            phi_inv=lambda y: math.log(C * y) / a,
            # phi0(x) = phi^-1(e^x) = (x + log C) / a
            phi0_prime=lambda x: 1.0 / a,
        )


def make_geometric(a: float, M: Optional[int] = None) -> Geometric:
    """pi_x = (e^a - 1) e^{-a x}; sub-critical (index 0)."""
    if not a > 0:
        raise ValueError(f"geometric rate must be positive, got {a}")
    if M is None:
        # materialize until the tail mass drops below ~1e-17
        M = max(2, int(math.ceil(40.0 / a)))
    return Geometric(M=int(M), a=float(a))


# ---------------------------------------------------------------------------
# log-power:  pi_x ∝ 1 / ((x + 2) log(x + 2)^beta)

LOG_OFFSET = 2.0


@dataclass(frozen=True, eq=False)
class LogPower(DistributionSpec):
    beta: float = 2.0

    def _w(self, x):
        y = _as_array(x) + LOG_OFFSET
        return 1.0 / (y * np.log(y) ** self.beta)

    def _tail_raw(self, x):
        # unnormalized sum_{y >= x} w(y) by Euler-Maclaurin
        b = self.beta
        y = _as_array(x) + LOG_OFFSET
        L = np.log(y)
        w = 1.0 / (y * L**b)
        w1 = -w * (1 + b / L) / y
        return L ** (1 - b) / (b - 1) + w / 2 - w1 / 12

    def __post_init__(self):
        M = self.M
        w = self._w(np.arange(1, M + 1, dtype=float))
        tail = float(self._tail_raw(M + 1.0))
        Z = math.fsum(w[::-1]) + tail
        object.__setattr__(self, "family", "log_power")
        object.__setattr__(self, "regularity", Regularity.SUPCRITICAL)
        object.__setattr__(self, "gamma", 1.0)
        object.__setattr__(self, "Z", Z)
        self._set_head(w / Z, tail / Z)

    def density(self, x):
        return self._w(x) / self.Z

    def _tail_from(self, x):
        return self._tail_raw(x) / self.Z

    def _tail_inverse_guess(self, v):
        b = self.beta
        with np.errstate(over="ignore", divide="ignore"):
            L = ((b - 1) * v * self.Z) ** (-1 / (b - 1))
            return np.where(L < 700, np.exp(np.minimum(L, 700)) - LOG_OFFSET + 0.5, np.inf)

    def tail_integral(self, b):
        return math.log(b + LOG_OFFSET) ** (1 - self.beta) / ((self.beta - 1) * self.Z)

    def params(self):
        return {"beta": self.beta}

    def _phi_inv(self, y: float) -> float:
        # solve (x+2) log(x+2)^beta = y / Z in s = log(x+2): s + beta log s = log(y/Z)
        c = math.log(y / self.Z)
        s = max(c, 1.0)
        for _ in range(100):
            f = s + self.beta * math.log(s) - c
            s_new = s - f / (1 + self.beta / s)
            s_new = max(s_new, 1e-3)
            if abs(s_new - s) <= 1e-15 * s:
                s = s_new
                break
            s = s_new
        return math.exp(s) - LOG_OFFSET

    @property
    def meta(self):
        b = self.beta
        return RegularityMeta(
            phi=lambda x: 1.0 / self.density(x),
            phi_inv=self._phi_inv,
            psi=lambda x: x,
            g=lambda lam: (1.0 + lam) ** -b,
            g_norm=1.0 / (b - 1),
            log_offset=LOG_OFFSET,
        )


def make_log_power(beta: float, M: int = DEFAULT_M) -> LogPower:
    """pi_x ∝ 1/((x+2) log(x+2)^beta); sup-critical (index 1)."""
    if not beta > 1:
        raise ValueError(f"beta must exceed 1 for a summable law, got {beta}")
    if M < 3:
        raise ValueError("M must be at least 3")
    return LogPower(M=int(M), beta=float(beta))


# ---------------------------------------------------------------------------
# explicit finite support

@dataclass(frozen=True, eq=False)
class Explicit(DistributionSpec):
    weights: tuple = ()

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "family", "explicit")
        self._set_head(w / math.fsum(w), 0.0)

    @property
    def finite(self):
        return True

    def density(self, x):
        x = _as_array(x)
        idx = np.clip(np.floor(x).astype(np.int64), 1, self.M)
        return np.where((x >= 1) & (x < self.M + 1), self._head[idx - 1], 0.0)

    def _tail_from(self, x):
        return np.zeros_like(x)

    def tail_integral(self, b):
        return 0.0

    def params(self):
        return {"weights": list(self.weights)}


def make_explicit(weights: Sequence[float]) -> Explicit:
    """Finite-support law on atoms 1..len(weights); weights are renormalized."""
    w = [float(v) for v in weights]
    if not w or any(v < 0 for v in w) or sum(w) <= 0:
        raise ValueError("explicit weights must be non-negative with positive sum")
    return Explicit(M=len(w), weights=tuple(w))


# ---------------------------------------------------------------------------
# glued power law (oscillating index)

@dataclass(frozen=True, eq=False)
class Glued(DistributionSpec):
    """Piecewise power law: exponent ``alphas[j]`` on ``[starts[j], starts[j+1])``.

    Each new segment is scaled so that the mass it replaces is preserved, so
    pi agrees exactly with the previous stage below the switch atom.
    """

    gamma1: float = 0.4
    gamma2: float = 0.8
    switch_points: tuple = ()

    def __post_init__(self):
        a1, a2 = 1.0 / self.gamma1, 1.0 / self.gamma2
        starts = [1.0] + [float(m) for _, m in self.switch_points]
        alphas = [a1 if j % 2 == 0 else a2 for j in range(len(starts))]
        consts = [1.0 / float(special.zeta(a1, 1.0))]
        for j in range(1, len(starts)):
            m = starts[j]
            consts.append(consts[-1] * special.zeta(alphas[j - 1], m) / special.zeta(alphas[j], m))
        # seg_tail[j] = mass at or beyond starts[j]
        seg_tail = [0.0] * (len(starts) + 1)
        for j in range(len(starts) - 1, -1, -1):
            nxt = special.zeta(alphas[j], starts[j + 1]) if j + 1 < len(starts) else 0.0
            seg_tail[j] = consts[j] * (special.zeta(alphas[j], starts[j]) - nxt) + seg_tail[j + 1]
        object.__setattr__(self, "family", "glued")
        object.__setattr__(self, "starts", np.array(starts))
        object.__setattr__(self, "alphas", np.array(alphas))
        object.__setattr__(self, "consts", np.array(consts))
        object.__setattr__(self, "seg_tail", np.array(seg_tail))
        head = self.density(np.arange(1, self.M + 1, dtype=float))
        tail = float(self._tail_from(np.array([self.M + 1.0]))[0])
        self._set_head(head, tail)

    def _segment(self, x):
        return np.searchsorted(self.starts, _as_array(x), side="right") - 1

    def density(self, x):
        x = _as_array(x)
        j = self._segment(x)
        return self.consts[j] * x ** -self.alphas[j]

    def _tail_from(self, x):
        x = _as_array(x)
        j = self._segment(x)
        out = np.empty_like(x)
        for s in np.unique(j):
            sel = j == s
            nxt = special.zeta(self.alphas[s], self.starts[s + 1]) if s + 1 < len(self.starts) else 0.0
            out[sel] = self.consts[s] * (special.zeta(self.alphas[s], x[sel]) - nxt) + self.seg_tail[s + 1]
        return out

    def _tail_inverse_guess(self, v):
        v = _as_array(v)
        # segment s holds survival values in (seg_tail[s+1], seg_tail[s]]
        s = np.clip(np.searchsorted(-self.seg_tail[:-1], -v, side="left") - 1, 0, len(self.starts) - 1)
        out = np.empty_like(v)
        for j in np.unique(s):
            sel = s == j
            a = self.alphas[j]
            nxt = special.zeta(a, self.starts[j + 1]) if j + 1 < len(self.starts) else 0.0
            z = (v[sel] - self.seg_tail[j + 1]) / self.consts[j] + nxt
            with np.errstate(over="ignore", divide="ignore"):
                out[sel] = ((a - 1) * z) ** (-1 / (a - 1)) + 0.5
        return out

    def tail_integral(self, b):
        j = int(self._segment(b))
        total = 0.0
        lo = b
        for s in range(j, len(self.starts)):
            a, c = self.alphas[s], self.consts[s]
            hi = self.starts[s + 1] if s + 1 < len(self.starts) else math.inf
            upper = hi ** (1 - a) if math.isfinite(hi) else 0.0
            total += c * (lo ** (1 - a) - upper) / (a - 1)
            lo = hi
        return total

    @property
    def breakpoints(self):
        return tuple(self.starts[1:])

    @property
    def x0(self):
        x0 = 1
        for m in self.starts[1:]:
            m = int(m)
            if self.mass(m) >= self.mass(m - 1):
                x0 = m
        return x0

    def params(self):
        return {"gamma1": self.gamma1, "gamma2": self.gamma2,
                "switch_points": [list(p) for p in self.switch_points]}

    @property
    def meta(self):
        def phi_inv(y):
            # largest segment whose local inverse lands inside it
            for j in range(len(self.starts) - 1, -1, -1):
                x = (self.consts[j] * y) ** (1 / self.alphas[j])
                hi = self.starts[j + 1] if j + 1 < len(self.starts) else math.inf
                if self.starts[j] <= x < hi:
                    return float(x)
            return float((self.consts[0] * y) ** (1 / self.alphas[0]))

        return RegularityMeta(phi=lambda x: 1.0 / self.density(x), phi_inv=phi_inv)

    @property
    def stage_count(self) -> int:
        return len(self.starts)


def make_glued_counterexample(gamma1: float, gamma2: float,
                              stage_switch_points: Sequence[Sequence[int]] = (),
                              M: int = DEFAULT_M) -> Glued:
    """Law whose singleton fraction R_{n,1}/R_n is steered between gamma1 and gamma2.

    ``stage_switch_points`` is a list of ``(n_j, m_j)``: from atom ``m_j`` on the
    exponent flips between ``1/gamma1`` and ``1/gamma2``; ``n_j`` is the
    checkpoint at which the corresponding stage is read off.
    """
    if not 0 < gamma1 < gamma2 < 1:
        raise ValueError("need 0 < gamma1 < gamma2 < 1")
    pts = [(int(n), int(m)) for n, m in stage_switch_points]
    for (n0, m0), (n1, m1) in zip(pts, pts[1:]):
        if not (n1 > n0 and m1 > m0):
            raise ValueError("switch points must increase strictly in both coordinates")
    if pts and pts[0][1] < 2:
        raise ValueError("first switch atom must be at least 2")
    return Glued(M=int(M), gamma1=float(gamma1), gamma2=float(gamma2), switch_points=tuple(pts))


def from_config(cfg: dict) -> DistributionSpec:
    """Build a law from a ``{family: ..., <params>, M: ...}`` mapping."""
    cfg = dict(cfg)
    family = cfg.pop("family")
    M = cfg.pop("M", None)
    kw = {} if M is None else {"M": int(M)}
    if family == "power_law":
        return make_power_law(cfg.pop("alpha"), **kw)
    if family == "geometric":
        return make_geometric(cfg.pop("a"), **kw)
    if family == "log_power":
        return make_log_power(cfg.pop("beta"), **kw)
    if family == "explicit":
        return make_explicit(cfg.pop("weights"))
    if family == "glued":
        return make_glued_counterexample(cfg.pop("gamma1"), cfg.pop("gamma2"),
                                         cfg.pop("switch_points", ()), **kw)
    raise ValueError(f"unknown family {family!r}")


def mass(spec: DistributionSpec, x: int) -> float:
    return spec.mass(x)
