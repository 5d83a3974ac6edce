"""Tuned/all parameter counts for every scheme at ViT-B and ViT-L.

Counts exclude the decoder head; published figures are shown alongside.
"""

import argparse

from phaseadapt.blocks import count_model
from phaseadapt.core import ModelConfig

PUBLISHED = {
    ("ViT-B", "aim", (2,)): "10.66M/96.46M",
    ("ViT-B", "st-adapter", (2,)): "14.23M/100.03M",
    ("ViT-B", "dual-path", (2,)): "18.06M/103.68M",
    ("ViT-B", "sta", (2,)): "15.99M/101.79M",
    ("ViT-B", "sta", (2, 4)): "21.32M/107.12M",
    ("ViT-B", "sta", (2, 8)): "21.32M/107.12M",
    ("ViT-L", "aim", (2,)): "37.86M/341.16M",
    ("ViT-L", "st-adapter", (2,)): "37.90M/341.20M",
    ("ViT-L", "dual-path", (2,)): "63.48M/366.50M",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--k", nargs="*", default=["2", "2,4", "2,8"], help="STA window-count variants")
    args = ap.parse_args()
    rows = []
    for scale in ("ViT-B", "ViT-L"):
        for scheme in ("aim", "st-adapter", "dual-path"):
            rows.append((scale, scheme, (2,)))
        for k in args.k:
            rows.append((scale, "sta", tuple(int(v) for v in k.split(","))))
    print(f"{'scale':<6} {'scheme':<11} {'k':<5} {'adapters':>12} {'tuned/all':>16} {'published':>16}")
    for scale, scheme, ks in rows:
        part = count_model(ModelConfig(scale=scale, scheme=scheme, sta_k_values=list(ks)))
        k = "/".join(map(str, ks)) if scheme == "sta" else "-"
        pub = PUBLISHED.get((scale, scheme, ks), "")
        print(f"{scale:<6} {scheme:<11} {k:<5} {part.adapter_count:>12,d} {part.summary():>16} {pub:>16}")


if __name__ == "__main__":
    main()
