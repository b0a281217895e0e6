"""Calibrate switch points for the glued counterexample and write them as a CLI config."""
import argparse
from pathlib import Path

import yaml

from rangerenewal.verify import calibrate_switch_points


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--gamma1", type=float, default=0.4)
    ap.add_argument("--gamma2", type=float, default=0.8)
    ap.add_argument("--stages", type=int, default=4)
    ap.add_argument("--budget", type=float, default=1e8)
    ap.add_argument("--write", type=Path, help="write a verify config using the calibrated glue")
    a = ap.parse_args()
    cal = calibrate_switch_points(a.gamma1, a.gamma2, stages=a.stages, budget=int(a.budget))
    print(f"inconclusive={cal.inconclusive} samples_used={cal.samples_used}")
    for (n, m), e, s, c in zip(cal.points, cal.expected_ratios, cal.simulated_ratios, cal.confinement):
        print(f"n={n:>10d} m={m:>8d} E1/E={e:.4f} simulated={s:.4f} confinement={c:.3g}")
    if cal.note:
        print(cal.note)
    if a.write:
        doc = {"distribution": {"family": "glued", "gamma1": a.gamma1, "gamma2": a.gamma2,
                                "switch_points": [list(p) for p in cal.points]},
               "experiment": {"mode": "verify", "n_schedule": [n for n, _ in cal.points], "replicas": 10,
                              "claims": [{"claim_id": "oscillation", "estimator": "counterexample",
                                          "tolerance": 0.1}]}}
        a.write.write_text(yaml.safe_dump(doc, sort_keys=False))
        print(f"wrote {a.write}")


if __name__ == "__main__":
    main()
