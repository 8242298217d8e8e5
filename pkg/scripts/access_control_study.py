#!/usr/bin/env python3
"""Run the access-control trial battery on the toy backend and print the
correct-key versus wrong-key separation."""

import argparse

from midas.experiments import access_control_study


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--trials", type=int, default=20)
    parser.add_argument("--prompt", default="a quiet mountain lake at dawn")
    parser.add_argument("--pub-seed", type=int, default=777)
    args = parser.parse_args()
    res = access_control_study(trials=args.trials, prompt=args.prompt, pub_seed=args.pub_seed)
    print(f"trials            : {args.trials}")
    print(f"correct-key psnr  : {res.correct_psnr:7.3f} dB")
    print(f"wrong-key psnr    : {res.wrong_psnr:7.3f} dB   (gap {res.psnr_gap:+.3f} dB)")
    print(f"correct-key corr  : {res.correct_corr:7.4f}")
    print(f"wrong-key corr    : {res.wrong_corr:7.4f}   (gap {res.corr_gap:+.4f})")


if __name__ == "__main__":
    main()
