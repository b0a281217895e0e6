"""Command-line driver: one YAML config in, CSV/JSON/summary files out.

Config grammar (YAML, three top-level sections, unknown keys are errors)::

    distribution:            # family plus its parameters
      family: power_law      # power_law(alpha) | geometric(a) | log_power(beta)
      alpha: 2.0             # | explicit(weights) | glued(gamma1, gamma2, switch_points)
      M: 1048576             # optional head size
    experiment:
      mode: exact            # simulate | exact | verify | counterexample
      n_schedule: [1000000]
      replicas: 1
      seed: 0
      ells: [1, 2, 3]
      ks: [1, 2]
      L_max: 512
      graph: false           # simulate: also build the trace graph
      fit_range: [2, 20]
      claims: default        # verify: "default" or a list of claim mappings
      calibration: {gamma1: 0.4, gamma2: 0.8, stages: 4, budget: 100000000}
    output:
      directory: out
      formats: [csv, json]
      plot_data: true

A claim mapping takes ``claim_id``, ``estimator``, ``tolerance`` and optionally
``n_schedule``, ``replicas``, ``ell``, ``k``, ``slack``, ``anchor``, ``L_max``,
``bound_constant``, ``delta`` and a ``distribution`` section of its own.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import exact, verify
from .dist import DistributionSpec, from_config, make_glued_counterexample
from .engine import SamplerState, degree_snapshot, diameter, replica_seeds, sample_stream

MODES = ("simulate", "exact", "verify", "counterexample")
FORMATS = ("csv", "json")

_FAMILY_KEYS = {
    "power_law": {"alpha"},
    "geometric": {"a"},
    "log_power": {"beta"},
    "explicit": {"weights"},
    "glued": {"gamma1", "gamma2"},
}
_FAMILY_OPTIONAL = {"glued": {"switch_points"}}


class ConfigError(ValueError):
    pass


def _check_keys(section: str, got: dict, allowed: set, required: set = frozenset()):
    if not isinstance(got, dict):
        raise ConfigError(f"{section}: expected a mapping")
    extra = set(got) - allowed
    if extra:
        raise ConfigError(f"{section}: unknown keys {sorted(extra)}")
    missing = set(required) - set(got)
    if missing:
        raise ConfigError(f"{section}: missing keys {sorted(missing)}")


def _build_distribution(section: str, raw) -> DistributionSpec:
    if not isinstance(raw, dict) or "family" not in raw:
        raise ConfigError(f"{section}: needs a family")
    fam = raw["family"]
    if fam not in _FAMILY_KEYS:
        raise ConfigError(f"{section}: unknown family {fam!r}")
    _check_keys(section, raw, {"family", "M"} | _FAMILY_KEYS[fam] | _FAMILY_OPTIONAL.get(fam, set()),
                {"family"} | _FAMILY_KEYS[fam])
    try:
        return from_config(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


@dataclass
class ClaimConfig:
    claim_id: str
    estimator: str
    tolerance: float
    n_schedule: Optional[list] = None
    replicas: Optional[int] = None
    ell: Optional[int] = None
    k: Optional[int] = None
    slack: float = 0.15
    anchor: Optional[int] = None
    L_max: int = 512
    bound_constant: float = 1.0
    delta: float = 0.5
    distribution: Optional[dict] = None


@dataclass
class CalibrationConfig:
    gamma1: float = 0.4
    gamma2: float = 0.8
    stages: int = 4
    budget: int = 10**8
    replicas: int = 10
    tolerance: float = 0.1


@dataclass
class ExperimentConfig:
    mode: str = "exact"
    n_schedule: list = field(default_factory=lambda: [10**6])
    replicas: int = 1
    seed: int = 0
    ells: list = field(default_factory=lambda: [1, 2, 3])
    ks: list = field(default_factory=lambda: [1, 2])
    L_max: int = 512
    graph: bool = False
    fit_range: list = field(default_factory=lambda: [2, 20])
    claims: object = "default"
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: list = field(default_factory=lambda: list(FORMATS))
    plot_data: bool = True


@dataclass
class RunConfig:
    distribution: dict
    experiment: ExperimentConfig
    output: OutputConfig
    spec: Optional[DistributionSpec] = None
    claims: list = field(default_factory=list)

    def resolved(self) -> dict:
        exp = asdict(self.experiment)
        return {"distribution": dict(self.distribution), "experiment": exp, "output": asdict(self.output)}


def _dataclass_from(cls, section: str, raw: dict):
    names = {f.name for f in fields(cls)}
    _check_keys(section, raw or {}, names)
    missing = [f.name for f in fields(cls)
               if f.name not in (raw or {}) and f.default is MISSING and f.default_factory is MISSING]
    if missing:
        raise ConfigError(f"{section}: missing required keys {missing}")
    return cls(**(raw or {}))


def _int_list(section, xs, positive=True):
    if not isinstance(xs, list) or not xs or not all(isinstance(x, (int, float)) and float(x).is_integer() for x in xs):
        raise ConfigError(f"{section}: expected a non-empty list of integers")
    xs = [int(x) for x in xs]
    if positive and min(xs) < 1:
        raise ConfigError(f"{section}: entries must be at least 1")
    return xs


def load_config(raw: dict, *, mode: Optional[str] = None, seed: Optional[int] = None,
                out: Optional[str] = None) -> RunConfig:
    """Validate a parsed config mapping; every problem raises ConfigError before any work."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping")
    _check_keys("config", raw, {"distribution", "experiment", "output"}, {"distribution"})
    exp_raw = dict(raw.get("experiment") or {})
    cal_raw = exp_raw.pop("calibration", None)
    exp = _dataclass_from(ExperimentConfig, "experiment", exp_raw)
    exp.calibration = _dataclass_from(CalibrationConfig, "experiment.calibration", cal_raw)
    outc = _dataclass_from(OutputConfig, "output", raw.get("output"))
    if mode is not None:
        exp.mode = mode
    if seed is not None:
        exp.seed = seed
    if out is not None:
        outc.directory = out
    if exp.mode not in MODES:
        raise ConfigError(f"experiment.mode: expected one of {MODES}")
    if not isinstance(exp.seed, int) or not 0 <= exp.seed < 2**64:
        raise ConfigError("experiment.seed: expected an unsigned 64-bit integer")
    exp.n_schedule = _int_list("experiment.n_schedule", exp.n_schedule)
    if any(b <= a for a, b in zip(exp.n_schedule, exp.n_schedule[1:])):
        raise ConfigError("experiment.n_schedule: must be strictly increasing")
    exp.ells = _int_list("experiment.ells", exp.ells)
    exp.ks = _int_list("experiment.ks", exp.ks)
    exp.fit_range = _int_list("experiment.fit_range", exp.fit_range)
    if len(exp.fit_range) != 2 or exp.fit_range[1] <= exp.fit_range[0]:
        raise ConfigError("experiment.fit_range: expected [ell_min, ell_max] with ell_min < ell_max")
    if not isinstance(exp.replicas, int) or exp.replicas < 1:
        raise ConfigError("experiment.replicas: must be a positive integer")
    if not isinstance(exp.graph, bool) or not isinstance(outc.plot_data, bool):
        raise ConfigError("experiment.graph and output.plot_data must be booleans")
    if not isinstance(outc.formats, list) or not set(outc.formats) <= set(FORMATS):
        raise ConfigError(f"output.formats: expected a subset of {FORMATS}")
    spec = _build_distribution("distribution", raw["distribution"])
    cfg = RunConfig(dict(raw["distribution"]), exp, outc, spec)
    if exp.mode == "verify":
        cfg.claims = _build_claims(exp, spec)
    return cfg


def _build_claims(exp: ExperimentConfig, spec: DistributionSpec) -> list:
    if exp.claims == "default":
        return verify.default_claims(exp.seed)
    if not isinstance(exp.claims, list) or not exp.claims:
        raise ConfigError('experiment.claims: expected "default" or a non-empty list')
    out, seen = [], set()
    for i, raw in enumerate(exp.claims):
        sec = f"experiment.claims[{i}]"
        cc = _dataclass_from(ClaimConfig, sec, raw)
        _check_keys(sec, raw, {f.name for f in fields(ClaimConfig)}, {"claim_id", "estimator", "tolerance"})
        if cc.claim_id in seen:
            raise ConfigError(f"{sec}: duplicate claim_id {cc.claim_id!r}")
        seen.add(cc.claim_id)
        law = _build_distribution(sec + ".distribution", cc.distribution) if cc.distribution else spec
        try:
            claim = verify.ClaimSpec(
                cc.claim_id, law, cc.n_schedule or exp.n_schedule, cc.replicas or exp.replicas,
                float(cc.tolerance), cc.estimator, cc.ell, cc.k, cc.slack, exp.seed, cc.anchor,
                cc.L_max, cc.bound_constant, cc.delta)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{sec}: {e}") from e
        out.append(claim)
    return out


# ---------------------------------------------------------------------------
# outputs

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def emit_plot_data(report: dict, out_dir) -> list:
    """Two-column CSVs: power law, range convergence and diameter growth.

    ``report`` may hold ``hist`` (ell -> R_{n,ell}) with ``fit_range``,
    ``convergence`` [(n, R_n/E(n))] and ``small_world`` [(n, L_n/log n)];
    missing parts give header-only files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    hist = report.get("hist") or {}
    lo, hi = report.get("fit_range", (2, 20))
    pl = [(math.log(l), math.log(hist[l])) for l in range(lo, hi + 1) if hist.get(l, 0) > 0]
    files = {
        "plot_power_law.csv": (("log_ell", "log_R_n_ell"), pl),
        "plot_convergence.csv": (("n", "R_n_over_E"), report.get("convergence") or []),
        "plot_small_world.csv": (("n", "L_n_over_log_n"), report.get("small_world") or []),
    }
    written = []
    for name, (header, rows) in files.items():
        (out_dir / name).write_text(_csv(header, rows), newline="")
        written.append(out_dir / name)
    return written


def _write(out_dir: Path, name: str, text: str):
    (out_dir / name).write_text(text, newline="")


def _run_exact(cfg: RunConfig, out_dir: Path) -> tuple[int, list]:
    exp = cfg.experiment
    rep = exact.theory_report(cfg.spec, exp.n_schedule, exp.ells, exp.ks, exp.L_max)
    if "csv" in cfg.output.formats:
        _write(out_dir, "theory.csv", rep.to_csv())
    if "json" in cfg.output.formats:
        _write(out_dir, "theory.json", rep.to_json())
    lines = [f"{nm} {';'.join(f'{k}={p[k]}' for k in p)} = {v:.10g} (err {e:.2g})" for nm, p, v, e in rep.rows]
    if cfg.output.plot_data:
        emit_plot_data({}, out_dir)
    return 0, lines


def _simulate_one(args):
    spec, seed, ns, graph = args
    sinks = {"range", "graph"} if graph else {"range"}

    def snap(m, res):
        c = res.counters
        row = {"R": c.R, "hist": c.hist}
        if graph:
            d = degree_snapshot(res.graph, c)
            row["out_hist"], row["undir_hist"] = d.out_hist, d.undir_hist
            if m <= 10**5:
                row["L_n"] = diameter(res.graph)
        return row

    res = sample_stream(SamplerState(spec, seed), max(ns), sinks, checkpoints=ns, on_checkpoint=snap)
    return res.snapshots, res.flags, res.collision_bound


def _run_simulate(cfg: RunConfig, out_dir: Path, jobs: int) -> tuple[int, list]:
    exp, spec = cfg.experiment, cfg.spec
    seeds = replica_seeds(exp.seed, exp.replicas)
    tasks = [(spec, s, exp.n_schedule, exp.graph) for s in seeds]
    if jobs > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_simulate_one, tasks))
    else:
        results = [_simulate_one(t) for t in tasks]
    header = ["replica", "seed", "n", "R", "E_R"] + [f"R_{l}" for l in exp.ells] + \
             [f"R_{l}_over_R" for l in exp.ells] + [f"R_{l}_over_R_{l}plus" for l in exp.ells]
    if exp.graph:
        header += [f"out_{k}_over_R" for k in exp.ks] + [f"undir_{k}_over_R" for k in exp.ks] + ["L_n"]
    rows, doc = [], []
    E = {n: exact.expected_range(spec, n)[0] for n in exp.n_schedule}
    for r, (seed, (snaps, flags, cb)) in enumerate(zip(seeds, results)):
        for n in exp.n_schedule:
            s = snaps[n]
            h, R = s["hist"], s["R"]
            plus = lambda l: sum(v for ll, v in h.items() if ll >= l)
            row = [r, seed, n, R, E[n]] + [h.get(l, 0) for l in exp.ells] + \
                  [h.get(l, 0) / R for l in exp.ells] + \
                  [h.get(l, 0) / plus(l) if plus(l) else math.nan for l in exp.ells]
            if exp.graph:
                row += [s["out_hist"].get(k, 0) / R for k in exp.ks] + \
                       [s["undir_hist"].get(k, 0) / R for k in exp.ks] + [s.get("L_n", "")]
            rows.append(row)
        doc.append({"replica": r, "seed": seed, "flags": flags, "collision_bound": cb,
                    "snapshots": {str(n): {"R": snaps[n]["R"], "hist": {str(k): v for k, v in sorted(snaps[n]["hist"].items())}}
                                  for n in exp.n_schedule}})
    if "csv" in cfg.output.formats:
        _write(out_dir, "simulate.csv", _csv(header, rows))
    if "json" in cfg.output.formats:
        _write(out_dir, "simulate.json", json.dumps({"distribution": spec.to_config(), "replicas": doc},
                                                    indent=2, sort_keys=True))
    last = exp.n_schedule[-1]
    fit = verify.fit_power_law(results[0][0][last]["hist"], exp.fit_range)
    if cfg.output.plot_data:
        conv = [(n, float(np.mean([res[0][n]["R"] for res in results])) / E[n]) for n in exp.n_schedule]
        sw = [(n, float(np.mean([res[0][n]["L_n"] for res in results])) / math.log(n))
              for n in exp.n_schedule if exp.graph and n <= 10**5 and n > 1]
        emit_plot_data({"hist": results[0][0][last]["hist"], "fit_range": exp.fit_range,
                        "convergence": conv, "small_world": sw}, out_dir)
    lines = [f"n={n}: mean R_n/E(n) = {np.mean([res[0][n]['R'] for res in results]) / E[n]:.6f}"
             for n in exp.n_schedule]
    lines.append(f"log-log slope over ell in {exp.fit_range} at n={last} (replica 0): {fit.slope:.4f}"
                 f" (R^2 {fit.r2:.4f}){' [' + fit.note + ']' if fit.flagged else ''}")
    return 0, lines


def _write_verify(rep: verify.VerifyReport, cfg: RunConfig, out_dir: Path) -> list:
    if "csv" in cfg.output.formats:
        _write(out_dir, "verify.csv", rep.to_csv())
    if "json" in cfg.output.formats:
        _write(out_dir, "verify.json", rep.to_json())
    lines = [f"{cid}: {v}" for cid, v in rep.verdicts.items()]
    lines.append(f"overall: {'pass' if rep.passed else 'fail'}")
    return lines


def _run_verify(cfg: RunConfig, out_dir: Path, jobs: int) -> tuple[int, list]:
    rep = verify.run_claims(cfg.claims, jobs)
    lines = _write_verify(rep, cfg, out_dir)
    if cfg.output.plot_data:
        conv = [(r.n, r.estimate) for r in rep.records if r.claim_id == "THM1-slln"]
        sw = [(r.n, r.estimate) for r in rep.records if r.claim_id == "SW-diameter"]
        emit_plot_data({"convergence": conv, "small_world": sw}, out_dir)
    return (0 if rep.passed else 1), lines


def _run_counterexample(cfg: RunConfig, out_dir: Path, jobs: int) -> tuple[int, list]:
    cal = cfg.experiment.calibration
    c = verify.calibrate_switch_points(cal.gamma1, cal.gamma2, cal.stages, cal.budget, seed=cfg.experiment.seed)
    spec = make_glued_counterexample(cal.gamma1, cal.gamma2, c.points)
    rep = verify.check_counterexample(spec, [n for n, _ in c.points], cal.replicas, cal.tolerance,
                                      cfg.experiment.seed, calibrated=not c.inconclusive, jobs=jobs)
    cal_rows = [(j + 1, n, m, e, s, p) for j, ((n, m), e, s, p) in
                enumerate(zip(c.points, c.expected_ratios, c.simulated_ratios or [math.nan] * len(c.points),
                              c.confinement))]
    _write(out_dir, "calibration.csv", _csv(("stage", "n_j", "m_j", "expected_ratio", "simulated_ratio",
                                             "confinement_probability"), cal_rows))
    lines = [f"stage {j}: n={n} m={m} E-ratio={e:.4f} simulated={s:.4f}" for j, n, m, e, s, _ in cal_rows]
    lines.append(f"calibration samples: {c.samples_used} of {cal.budget}")
    if c.note:
        lines.append(c.note)
    lines += _write_verify(rep, cfg, out_dir)
    return (0 if rep.passed else 1), lines


def run(config_path, *, out: Optional[str] = None, jobs: Optional[int] = None, seed: Optional[int] = None,
        mode: Optional[str] = None) -> int:
    """Execute one config; returns the exit status (0 pass, 1 claim failure, 2 bad config)."""
    try:
        with open(config_path) as fh:
            raw = yaml.safe_load(fh)
        cfg = load_config(raw, mode=mode, seed=seed, out=out)
    except (OSError, yaml.YAMLError, ConfigError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    jobs = jobs or verify.default_jobs()
    out_dir = Path(cfg.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write(out_dir, "resolved_config.yaml", yaml.safe_dump(cfg.resolved(), sort_keys=True))
    m = cfg.experiment.mode
    if m == "exact":
        status, lines = _run_exact(cfg, out_dir)
    elif m == "simulate":
        status, lines = _run_simulate(cfg, out_dir, jobs)
    elif m == "verify":
        status, lines = _run_verify(cfg, out_dir, jobs)
    else:
        status, lines = _run_counterexample(cfg, out_dir, jobs)
    head = [f"mode: {m}", f"distribution: {json.dumps(cfg.spec.to_config(), sort_keys=True)}", ""]
    _write(out_dir, "summary.txt", "\n".join(head + lines) + "\n")
    print("\n".join(lines))
    return status


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="rangerenewal", description=__doc__.split("\n")[0])
    p.add_argument("--config", required=True, help="YAML run config")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides experiment.seed)")
    p.add_argument("--mode", choices=MODES, default=None, help="overrides experiment.mode")
    a = p.parse_args(argv)
    if a.jobs is not None and a.jobs < 1:
        p.error("--jobs must be at least 1")
    return run(a.config, out=a.out, jobs=a.jobs, seed=a.seed, mode=a.mode)


if __name__ == "__main__":
    sys.exit(main())
