"""One desk-scale training run on synthetic two-phase videos.

Example: compare STA with its temporal branch switched off on the
motion-only signal.

    python scripts/desk_run.py --signal motion --epochs 6 --lr 2e-3
    python scripts/desk_run.py --signal motion --epochs 6 --lr 2e-3 --beta-zero
"""

import argparse

import torch

from phaseadapt.harness.desk import DeskRun, run_desk


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--signal", choices=["appearance", "motion"], default="appearance")
    ap.add_argument("--scheme", default="sta")
    ap.add_argument("--beta-zero", action="store_true", help="freeze the temporal router weight at 0")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--T", type=int, default=8)
    ap.add_argument("--R", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    torch.set_num_threads(args.threads)
    run = DeskRun(signal=args.signal, scheme=args.scheme, beta_zero=args.beta_zero, epochs=args.epochs,
                  lr=args.lr, T=args.T, R=args.R, seed=args.seed)
    res = run_desk(run)
    for key, value in vars(run).items():
        print(f"{key}={value}")
    print(f"test_accuracy={res.test_accuracy:.2f}")
    print(f"train_accuracy={res.train_accuracy:.2f}")
    print(f"final_loss={res.final_loss:.4f}")
    print(f"seconds={res.seconds:.1f}")


if __name__ == "__main__":
    main()
