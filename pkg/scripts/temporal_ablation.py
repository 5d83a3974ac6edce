"""Motion-only ablation over seeds: STA k=2, STA with beta frozen at 0, and AIM.

Writes a key=value line per run and a mean per arm. Each run takes about a
minute on one CPU thread.
"""

import argparse

import numpy as np
import torch

from phaseadapt.harness.desk import DeskRun, run_desk

ARMS = {
    "sta": dict(scheme="sta"),
    "sta_beta0": dict(scheme="sta", beta_zero=True),
    "aim": dict(scheme="aim"),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--arms", nargs="+", default=list(ARMS), choices=list(ARMS))
    args = ap.parse_args()
    torch.set_num_threads(1)
    summary = {}
    for arm in args.arms:
        accs = []
        for seed in args.seeds:
            res = run_desk(DeskRun(signal="motion", epochs=args.epochs, lr=args.lr, seed=seed, **ARMS[arm]))
            accs.append(res.test_accuracy)
            print(f"arm={arm} seed={seed} test_accuracy={res.test_accuracy:.2f} seconds={res.seconds:.0f}", flush=True)
        summary[arm] = accs
    for arm, accs in summary.items():
        print(f"arm={arm} mean={np.mean(accs):.2f} std={np.std(accs, ddof=1) if len(accs) > 1 else 0.0:.2f}")


if __name__ == "__main__":
    main()
