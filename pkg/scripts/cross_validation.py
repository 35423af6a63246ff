#!/usr/bin/env python3
"""Cross-validation experiment.

With --input, runs hold-out evaluation on a complete dense 0/1 answer matrix
(sample d1 students, give each d2 training questions, score both rules
against full-row accuracy) and reports the smallest winning d2 per d1.
Without --input, runs the synthetic counterpart with prior-drawn merits.
"""

import argparse
import json
from pathlib import Path

import numpy as np

from fairgrade import PriorSpec, simulated_cross_validate
from fairgrade import io as fio
from fairgrade.simulation import cross_validate, cv_threshold_table


def load_matrix(path):
    g = fio.ingest(path, fio.DENSE_CSV)
    n, q = g.roster.n_students, g.roster.n_questions
    if g.assignment.n_edges != n * q:
        raise SystemExit("cross-validation needs a complete matrix (no NA cells)")
    full = np.zeros((n, q), dtype=np.uint8)
    s_idx, q_idx = g.assignment.edge_arrays
    full[s_idx, q_idx] = g.w
    return full


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--input", help="dense 0/1 CSV; omit for the synthetic run")
    ap.add_argument("--students", type=int, default=35)
    ap.add_argument("--questions", type=int, default=22)
    ap.add_argument("--d2", default="2..22")
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--out", default="cross_validation.json")
    args = ap.parse_args()

    lo, hi = args.d2.split("..") if ".." in args.d2 else (args.d2, args.d2)
    d2_values = list(range(int(lo), int(hi) + 1))
    summary = {"points": []}
    if args.input:
        answers = load_matrix(args.input)
        n = answers.shape[0]
        for d2 in d2_values:
            res = cross_validate(answers, n, d2, args.reps, seed=args.seed + d2)
            summary["points"].append({"d1": n, "d2": d2, "mse": res.mse_per_rule})
            print(f"d2={d2:>2}: ours={res.mse_per_rule['ours']:.4f} "
                  f"avg={res.mse_per_rule['avg']:.4f}")
        d1_values = sorted({max(2, n // k) for k in (1, 2, 3, 5)})
        summary["threshold_table"] = {
            str(k): v for k, v in cv_threshold_table(
                answers, d1_values, d2_values, args.reps, seed=args.seed
            ).items()
        }
        print("threshold table:", summary["threshold_table"])
    else:
        prior = PriorSpec(0.0, 0.76, 0.0, 1.50)
        for res in simulated_cross_validate(
            prior, args.students, d2_values, args.reps, args.seed,
            n_questions=args.questions,
        ):
            summary["points"].append({"d2": res.d2, "mse": res.mse_per_rule})
            print(f"d2={res.d2:>2}: ours={res.mse_per_rule['ours']:.4f} "
                  f"avg={res.mse_per_rule['avg']:.4f}")
    Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
