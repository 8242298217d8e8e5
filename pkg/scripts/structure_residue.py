#!/usr/bin/env python3
"""Residual-structure sweep: mean structural component between original and
regenerated images after scrambling K of the four latent channels, for the
random-basis and sign-flip mechanisms."""

import argparse

from midas.experiments import structure_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--corpus-size", type=int, default=8)
    parser.add_argument("--corpus-seed", type=int, default=3000)
    args = parser.parse_args()
    table = structure_sweep(corpus_size=args.corpus_size, corpus_seed=args.corpus_seed)
    print("encrypted channels:   " + "  ".join(f"K={k}" for k in range(5)))
    for method in ("noise_flip", "random_basis"):
        row = "  ".join(f"{v:.3f}" for v in table[method])
        print(f"{method:>18}:  {row}")


if __name__ == "__main__":
    main()
