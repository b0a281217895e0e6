"""Streaming simulation of i.i.d. samples and the statistics of their trace graph.

Samples are drawn in vectorized chunks and pushed through a set of sinks
(range counters, trace graph, return gaps).  Sinks keep only per-atom and
per-edge state, so memory grows with the range and the edge count, never
with ``n``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .dist import ATOM_CAP, DistributionSpec

CHUNK = 2**20
_ALIAS_CACHE: dict = {}


# ---------------------------------------------------------------------------
# sampling

def _vose(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(weights)
    scaled = (weights * (n / weights.sum())).tolist()
    prob = [1.0] * n
    alias = list(range(n))
    small = [i for i, v in enumerate(scaled) if v < 1.0]
    large = [i for i, v in enumerate(scaled) if v >= 1.0]
    while small and large:
        s = small.pop()
        l = large[-1]
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = (scaled[l] + scaled[s]) - 1.0
        if scaled[l] < 1.0:
            large.pop()
            small.append(l)
    return np.array(prob), np.array(alias, dtype=np.int64)


def alias_table(spec: DistributionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Shared, read-only alias table over the materialized atoms of ``spec``."""
    key = id(spec)
    hit = _ALIAS_CACHE.get(key)
    if hit is None or hit[0] is not spec:
        prob, alias = _vose(np.asarray(spec.head))
        prob.setflags(write=False)
        alias.setflags(write=False)
        hit = (spec, prob, alias)
        _ALIAS_CACHE[key] = hit
    return hit[1], hit[2]


class SamplerState:
    """Seeded i.i.d. sampler for the full law: alias table head, inverse-survival tail.

    Tail draws at or beyond 2^53 cannot be told apart as float64 integers; each
    becomes a fresh negative identity.  Two such draws coincide with probability
    at most ``pi(2^53)`` per pair, reported by :meth:`collision_bound`.
    """

    BLOCK = 2**18
    FIRST_BLOCK = 64

    def __init__(self, spec: DistributionSpec, seed: int):
        self.spec = spec
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self.prob, self.alias = alias_table(spec)
        self.tail_mass = 0.0 if spec.finite else spec.tail_mass
        self._fresh = 0
        self._buf = np.zeros(0, dtype=np.int64)
        self._next = self.FIRST_BLOCK

    def _block(self) -> np.ndarray:
        # a fixed block-size schedule keeps the stream independent of how draws are requested
        rng, M, size = self.rng, self.spec.M, self._next
        self._next = min(2 * self._next, self.BLOCK)
        idx = rng.integers(0, M, size)
        coin = rng.random(size)
        out = np.where(coin < self.prob[idx], idx, self.alias[idx]) + 1
        if self.tail_mass > 0:
            u = rng.random(size)
            tail = u < self.tail_mass
            if tail.any():
                x = self.spec.inverse_survival(self.tail_mass - u[tail])
                huge = ~(x < ATOM_CAP)
                if huge.any():
                    k = int(huge.sum())
                    x[huge] = -(self._fresh + 1.0 + np.arange(k))
                    self._fresh += k
                out[tail] = x.astype(np.int64)
        return out

    def draw(self, size: int) -> np.ndarray:
        parts, have = [self._buf], self._buf.size
        while have < size:
            b = self._block()
            parts.append(b)
            have += b.size
        buf = np.concatenate(parts) if len(parts) > 1 else self._buf
        out, self._buf = buf[:size], buf[size:]
        return out

    def collision_bound(self, n: int) -> float:
        """Upper bound on the chance that two of n draws share an atom beyond 2^53."""
        if self.spec.finite:
            return 0.0
        cap = float(ATOM_CAP)
        return 0.5 * n * n * float(self.spec.density(cap)) * float(self.spec.survival(cap))


def replica_seeds(base_seed: int, replicas: int) -> list[int]:
    return [int(base_seed) + r for r in range(replicas)]


def duplicate_seeds(seeds: Iterable[int]) -> list[int]:
    seen, dup = set(), []
    for s in seeds:
        if s in seen:
            dup.append(s)
        seen.add(s)
    return dup


# ---------------------------------------------------------------------------
# sinks

class RangeCounters:
    """Visit counts N_n(x), kept as parallel sorted arrays of atoms and counts."""

    def __init__(self, spec_key=None):
        self.spec_key = spec_key
        self.n = 0
        self.atoms = np.zeros(0, dtype=np.int64)
        self.counts = np.zeros(0, dtype=np.int64)

    def consume(self, chunk: np.ndarray, offset: int = 0) -> None:
        u, c = np.unique(chunk, return_counts=True)
        pos = np.searchsorted(self.atoms, u)
        known = pos < self.atoms.size
        known[known] = self.atoms[pos[known]] == u[known]
        np.add.at(self.counts, pos[known], c[known])
        if (~known).any():
            self.atoms = np.insert(self.atoms, pos[~known], u[~known])
            self.counts = np.insert(self.counts, pos[~known], c[~known])
        self.n += chunk.size

    @property
    def R(self) -> int:
        return int(self.atoms.size)

    @property
    def visits(self) -> dict:
        return dict(zip(self.atoms.tolist(), self.counts.tolist()))

    def count(self, x) -> int:
        i = np.searchsorted(self.atoms, x)
        return int(self.counts[i]) if i < self.atoms.size and self.atoms[i] == x else 0

    def hist_array(self) -> np.ndarray:
        """h[ell] = R_{n,ell}; index 0 is always 0."""
        return np.bincount(self.counts, minlength=2)

    @property
    def hist(self) -> dict:
        h = self.hist_array()
        nz = np.flatnonzero(h)
        return {int(l): int(h[l]) for l in nz}

    def R_ell(self, ell: int) -> int:
        h = self.hist_array()
        return int(h[ell]) if ell < h.size else 0

    def R_plus(self, ell: int) -> int:
        if ell <= 1:
            return self.R
        return int(np.count_nonzero(self.counts >= ell))

    def copy(self) -> "RangeCounters":
        out = RangeCounters(self.spec_key)
        out.n, out.atoms, out.counts = self.n, self.atoms.copy(), self.counts.copy()
        return out

    def __eq__(self, other):
        return (isinstance(other, RangeCounters) and self.n == other.n
                and np.array_equal(self.atoms, other.atoms) and np.array_equal(self.counts, other.counts))

    @classmethod
    def from_hist(cls, hist: dict) -> "RangeCounters":
        """Counters with the given count-of-counts (atoms are labelled 1, 2, ...)."""
        counts = np.array([l for l, m in sorted(hist.items()) for _ in range(m)], dtype=np.int64)
        out = cls()
        out.atoms = np.arange(1, counts.size + 1, dtype=np.int64)
        out.counts = counts
        out.n = int(counts.sum())
        return out


def merge(a: RangeCounters, b: RangeCounters) -> RangeCounters:
    """Sum the visit maps of two independent streams of the same law."""
    if a.spec_key is not None and b.spec_key is not None and a.spec_key != b.spec_key:
        raise ValueError("cannot merge counters from different laws")
    atoms = np.concatenate([a.atoms, b.atoms])
    counts = np.concatenate([a.counts, b.counts])
    u, inv = np.unique(atoms, return_inverse=True)
    out = RangeCounters(a.spec_key if a.spec_key is not None else b.spec_key)
    out.atoms = u
    out.counts = np.bincount(inv, weights=counts, minlength=u.size).astype(np.int64)
    out.n = a.n + b.n
    return out


class TraceGraph:
    """Directed multigraph with an edge xi_i -> xi_{i+1} for every consecutive pair."""

    def __init__(self):
        self.n = 0
        self.first = None
        self.last = None
        self._ids = np.zeros(0, dtype=np.int64)      # sorted atoms
        self._dense = np.zeros(0, dtype=np.int64)    # dense id of each sorted atom
        self._atom_of = []                            # dense id -> atom chunks
        self._size = 0
        self.edge_keys = np.zeros(0, dtype=np.int64)  # sorted src << 32 | dst
        self.edge_mult = np.zeros(0, dtype=np.int64)
        self._counts = None

    def _densify(self, chunk: np.ndarray) -> np.ndarray:
        u = np.unique(chunk)
        pos = np.searchsorted(self._ids, u)
        known = pos < self._ids.size
        known[known] = self._ids[pos[known]] == u[known]
        new = u[~known]
        if new.size:
            ids = np.arange(self._size, self._size + new.size, dtype=np.int64)
            self._atom_of.append(new)
            self._size += new.size
            self._ids = np.insert(self._ids, pos[~known], new)
            self._dense = np.insert(self._dense, pos[~known], ids)
        return self._dense[np.searchsorted(self._ids, chunk)]

    def consume(self, chunk: np.ndarray, offset: int = 0) -> None:
        if chunk.size == 0:
            return
        d = self._densify(chunk)
        if self.last is not None:
            d = np.concatenate([[self._last_dense], d])
        else:
            self.first = int(chunk[0])
        if d.size >= 2:
            keys = (d[:-1] << 32) | d[1:]
            u, c = np.unique(keys, return_counts=True)
            pos = np.searchsorted(self.edge_keys, u)
            known = pos < self.edge_keys.size
            known[known] = self.edge_keys[pos[known]] == u[known]
            np.add.at(self.edge_mult, pos[known], c[known])
            if (~known).any():
                self.edge_keys = np.insert(self.edge_keys, pos[~known], u[~known])
                self.edge_mult = np.insert(self.edge_mult, pos[~known], c[~known])
        self._last_dense = int(d[-1])
        self.last = int(chunk[-1])
        self.n += chunk.size

    # -- views ----------------------------------------------------------
    @property
    def vertex_count(self) -> int:
        return self._size

    def atoms(self) -> np.ndarray:
        """Atom of every dense vertex id."""
        return np.concatenate(self._atom_of) if self._atom_of else np.zeros(0, dtype=np.int64)

    def dense_id(self, x) -> int:
        i = np.searchsorted(self._ids, x)
        if i < self._ids.size and self._ids[i] == x:
            return int(self._dense[i])
        raise KeyError(x)

    @property
    def edges(self) -> dict:
        """(x, y) -> d_n(x, y) keyed by atoms."""
        at = self.atoms()
        src, dst = self.edge_keys >> 32, self.edge_keys & 0xFFFFFFFF
        return {(int(at[s]), int(at[t])): int(m) for s, t, m in zip(src, dst, self.edge_mult)}

    def out_degree(self) -> np.ndarray:
        """D_n per dense vertex id."""
        return np.bincount(self.edge_keys >> 32, minlength=self._size)

    def _undirected_pairs(self) -> np.ndarray:
        src, dst = self.edge_keys >> 32, self.edge_keys & 0xFFFFFFFF
        lo, hi = np.minimum(src, dst), np.maximum(src, dst)
        return np.unique((lo << 32) | hi)

    def undirected_degree(self) -> np.ndarray:
        """D-hat_n per dense vertex id (a self-loop makes x its own neighbour)."""
        p = self._undirected_pairs()
        lo, hi = p >> 32, p & 0xFFFFFFFF
        loop = lo == hi
        deg = np.bincount(lo[~loop], minlength=self._size) + np.bincount(hi[~loop], minlength=self._size)
        return deg + np.bincount(lo[loop], minlength=self._size)

    def dense_counts(self, counters: RangeCounters) -> np.ndarray:
        """N_n per dense vertex id, read from counters at the same position."""
        return counters.counts[np.searchsorted(counters.atoms, self.atoms())]


class ReturnGapTracker:
    """Gaps between successive visits to a fixed anchor atom (time 0 counts as a visit)."""

    def __init__(self, anchor: int):
        self.anchor = int(anchor)
        self.n = 0
        self.visits = 0
        self.last_visit = 0
        self.max_complete = 0
        self.gap_hist: dict = {}
        self.first_gap: Optional[int] = None

    def consume(self, chunk: np.ndarray, offset: int = 0) -> None:
        t = np.flatnonzero(chunk == self.anchor) + self.n + 1
        if t.size:
            gaps = np.diff(np.concatenate([[self.last_visit], t]))
            if self.first_gap is None:
                self.first_gap = int(gaps[0])
            self.max_complete = max(self.max_complete, int(gaps.max()))
            u, c = np.unique(gaps, return_counts=True)
            for g, m in zip(u.tolist(), c.tolist()):
                self.gap_hist[g] = self.gap_hist.get(g, 0) + m
            self.visits += t.size
            self.last_visit = int(t[-1])
        self.n += chunk.size

    @property
    def censored_gap(self) -> int:
        return self.n - self.last_visit

    @property
    def tau_max(self) -> int:
        """Largest of the N_n(x0) complete gaps and the final censored one."""
        return max(self.max_complete, self.censored_gap)

    @property
    def never_visited(self) -> bool:
        return self.visits == 0


def return_gaps(tracker: ReturnGapTracker) -> tuple[int, int]:
    return tracker.tau_max, tracker.visits


# ---------------------------------------------------------------------------
# snapshots

def _check_empty(counters: RangeCounters):
    if counters.R == 0:
        raise ValueError("counters are empty")


def snapshot_ratios(counters: RangeCounters, ells: Sequence[int]) -> dict:
    """ell -> (R_{n,l}/R_n, R_{n,l}/R_{n,l+}, R_{n,l}/R_{n,2+}); nan where a denominator is 0."""
    _check_empty(counters)
    h = counters.hist_array()
    plus = np.cumsum(h[::-1])[::-1]
    R = counters.R
    R2p = R - (int(h[1]) if h.size > 1 else 0)
    out = {}
    for ell in ells:
        r = int(h[ell]) if ell < h.size else 0
        rp = int(plus[ell]) if ell < plus.size else 0
        out[ell] = (r / R, r / rp if rp else math.nan, r / R2p if R2p else math.nan)
    return out


@dataclass(frozen=True)
class DegreeSnapshot:
    """Joint (degree, intensity) tables at one stream position."""

    n: int
    R: int
    R_prev: int
    R_2plus: int
    hist: dict                 # ell -> R_{n,ell}
    joint_out: dict            # (k, ell) -> R~_{n,k,ell}, ell = N_{n-1}(x)
    out_hist: dict             # k -> R~_{n,k}
    joint_undir: dict          # (k, ell) -> R^_{n,k,ell}, ell = N_x([2, n-1])
    undir_hist: dict           # k -> R^_{n,k}
    hist_prev: dict            # ell -> R_{n-1,ell}
    hist_interior: dict        # ell -> number of atoms with N_x([2, n-1]) = ell

    def out_ratio(self, k: int, ell: int) -> float:
        """R~_{n,k,ell} / R_{n,ell}."""
        d = self.hist.get(ell, 0)
        return self.joint_out.get((k, ell), 0) / d if d else math.nan

    def undir_ratio(self, k: int, ell: int) -> float:
        """R^_{n,k,ell} / R_{n,ell}."""
        d = self.hist.get(ell, 0)
        return self.joint_undir.get((k, ell), 0) / d if d else math.nan

    def out_fraction(self, k: int, denominator: str = "R") -> float:
        return self.out_hist.get(k, 0) / self._denom(denominator)

    def undir_fraction(self, k: int, denominator: str = "R") -> float:
        return self.undir_hist.get(k, 0) / self._denom(denominator)

    def _denom(self, which):
        d = {"R": self.R, "R2plus": self.R_2plus}[which]
        return d if d else math.nan


def _table(a: np.ndarray, b: np.ndarray) -> dict:
    if a.size == 0:
        return {}
    key = (a.astype(np.int64) << 32) | b.astype(np.int64)
    u, c = np.unique(key, return_counts=True)
    return {(int(k >> 32), int(k & 0xFFFFFFFF)): int(m) for k, m in zip(u, c)}


def _hist(a: np.ndarray) -> dict:
    a = a[a > 0]
    u, c = np.unique(a, return_counts=True)
    return {int(k): int(m) for k, m in zip(u, c)}


def degree_snapshot(graph: TraceGraph, counters: RangeCounters) -> DegreeSnapshot:
    """Out-degree and undirected degree tables for graph and counters at the same n."""
    if graph.n != counters.n:
        raise ValueError(f"stream positions differ: graph at {graph.n}, counters at {counters.n}")
    _check_empty(counters)
    N = graph.dense_counts(counters)
    at = graph.atoms()
    is_last = at == graph.last
    is_first = at == graph.first
    prev = N - is_last
    interior = N - is_last - is_first if graph.n >= 2 else np.zeros_like(N)
    interior = np.maximum(interior, 0)
    D = graph.out_degree()
    Dh = graph.undirected_degree()
    has_out = D > 0
    has_deg = Dh > 0
    h = counters.hist
    R1 = h.get(1, 0)
    return DegreeSnapshot(
        n=graph.n, R=counters.R, R_prev=int(np.count_nonzero(prev)), R_2plus=counters.R - R1,
        hist=h,
        joint_out=_table(D[has_out], prev[has_out]),
        out_hist=_hist(D),
        joint_undir=_table(Dh[has_deg & (interior > 0)], interior[has_deg & (interior > 0)]),
        undir_hist=_hist(Dh),
        hist_prev=_hist(prev),
        hist_interior=_hist(interior),
    )


def diameter(graph: TraceGraph, block: int = 256) -> int:
    """Diameter of the undirected trace graph (0 for fewer than two vertices)."""
    V = graph.vertex_count
    if V < 2:
        return 0
    p = graph._undirected_pairs()
    lo, hi = p >> 32, p & 0xFFFFFFFF
    keep = lo != hi
    A = coo_matrix((np.ones(int(keep.sum())), (lo[keep], hi[keep])), shape=(V, V)).tocsr()
    best = 0
    for start in range(0, V, block):
        d = shortest_path(A, directed=False, unweighted=True, indices=np.arange(start, min(V, start + block)))
        fin = d[np.isfinite(d)]
        if fin.size:
            best = max(best, int(fin.max()))
    return best


@dataclass(frozen=True)
class SmallWorldStats:
    n: int
    L_n: int
    R_n: int
    tau_max: Optional[int] = None
    anchor: Optional[int] = None
    anchor_visits: Optional[int] = None
    censored: bool = False

    @property
    def L_over_log_n(self) -> float:
        return self.L_n / math.log(self.n) if self.n > 1 else math.nan

    @property
    def L_over_log_R(self) -> float:
        return self.L_n / math.log(self.R_n) if self.R_n > 1 else math.nan

    @property
    def tau_over_log_n(self) -> float:
        return self.tau_max / math.log(self.n) if self.tau_max is not None and self.n > 1 else math.nan


# ---------------------------------------------------------------------------
# driver

@dataclass
class StreamResult:
    counters: RangeCounters
    graph: Optional[TraceGraph] = None
    gaps: Optional[ReturnGapTracker] = None
    snapshots: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    collision_bound: float = 0.0


def run_sequence(seq, graph: bool = True, anchor=None) -> StreamResult:
    """Push a given sequence through fresh sinks in one chunk (testing aid)."""
    seq = np.asarray(seq, dtype=np.int64)
    res = StreamResult(RangeCounters(), TraceGraph() if graph else None,
                       ReturnGapTracker(anchor) if anchor is not None else None)
    for s in (res.counters, res.graph, res.gaps):
        if s is not None:
            s.consume(seq)
    return res


def sample_stream(state: SamplerState, n: int, sinks: Iterable[str] = ("range", "graph"), *,
                  anchor: Optional[int] = None, checkpoints: Sequence[int] = (),
                  on_checkpoint=None, chunk: int = CHUNK, used_seeds: Optional[set] = None) -> StreamResult:
    """Draw n samples and push them, in order, through the requested sinks.

    ``sinks`` may contain "range", "graph" and "gaps" (the latter needs
    ``anchor``).  At every checkpoint ``on_checkpoint(m, result)`` is called and
    its return value stored in ``result.snapshots[m]``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    sinks = set(sinks)
    res = StreamResult(RangeCounters(state.spec.key))
    if "graph" in sinks:
        res.graph = TraceGraph()
    if "gaps" in sinks:
        if anchor is None:
            raise ValueError("gap tracking needs an anchor atom")
        if state.spec.mass(int(anchor)) <= 0:
            raise ValueError("anchor must have positive mass")
        res.gaps = ReturnGapTracker(anchor)
    if used_seeds is not None:
        if state.rng_seed in used_seeds:
            res.flags.append(f"seed {state.rng_seed} reused across replicas")
        used_seeds.add(state.rng_seed)
    active = [s for s in (res.counters, res.graph, res.gaps) if s is not None]
    stops = sorted({int(c) for c in checkpoints if 1 <= c <= n} | {n})
    done = 0
    for stop in stops:
        while done < stop:
            size = min(chunk, stop - done)
            xs = state.draw(size)
            for s in active:
                s.consume(xs, done)
            done += size
        if stop in checkpoints and on_checkpoint is not None:
            res.snapshots[stop] = on_checkpoint(stop, res)
    if res.gaps is not None and res.gaps.never_visited:
        res.flags.append("anchor never visited; tau_max censored at n")
    res.collision_bound = state.collision_bound(n)
    return res


def small_world(res: StreamResult) -> SmallWorldStats:
    g = res.gaps
    return SmallWorldStats(
        n=res.counters.n, L_n=diameter(res.graph) if res.graph is not None else 0, R_n=res.counters.R,
        tau_max=g.tau_max if g else None, anchor=g.anchor if g else None,
        anchor_visits=g.visits if g else None, censored=bool(g and g.never_visited))


# ---------------------------------------------------------------------------
# export

def snapshot_rows(n: int, counters: RangeCounters, degrees: Optional[DegreeSnapshot] = None) -> list:
    """Long-format rows (n, statistic, key, value) for one checkpoint."""
    rows = [(n, "R", "", counters.R)]
    rows += [(n, "R_ell", str(l), v) for l, v in sorted(counters.hist.items())]
    if degrees is not None:
        rows += [(n, "R_out_k", str(k), v) for k, v in sorted(degrees.out_hist.items())]
        rows += [(n, "R_out_k_ell", f"{k}:{l}", v) for (k, l), v in sorted(degrees.joint_out.items())]
        rows += [(n, "R_deg_k", str(k), v) for k, v in sorted(degrees.undir_hist.items())]
        rows += [(n, "R_deg_k_ell", f"{k}:{l}", v) for (k, l), v in sorted(degrees.joint_undir.items())]
    return rows


def snapshots_to_csv(rows: Sequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["n", "statistic", "key", "value"])
    w.writerows(rows)
    return buf.getvalue()


def replica_json(seed: int, rows: Sequence, flags: Sequence[str] = ()) -> str:
    doc = {"seed": seed, "flags": list(flags),
           "rows": [{"n": n, "statistic": s, "key": k, "value": v} for n, s, k, v in rows]}
    return json.dumps(doc, indent=2, sort_keys=True)
