"""End-to-end demo: synthesize pairs, train a toy model, match and evaluate.

Writes everything under --workdir (default ./demo_run) and prints the
homography evaluation summary for both inference modes at the end. Takes a
few minutes with the default 300 steps.

Usage: python3 scripts/run_demo.py [--steps 300] [--pairs 80] [--workdir DIR]
"""
import argparse
import os

from semimatch.cli import main as cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="demo_run")
    parser.add_argument("--pairs", type=int, default=80)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    data = os.path.join(args.workdir, "pairs")
    weights = os.path.join(args.workdir, "toy.smw")
    curve = os.path.join(args.workdir, "loss_curve.csv")

    steps = [
        ["synth", "--count", str(args.pairs), "--size", "64",
         "--seed", str(args.seed), "--out", data],
        ["train-toy", "--data", data, "--out", weights,
         "--steps", str(args.steps), "--seed", str(args.seed), "--curve", curve],
        ["match", "--image-a", os.path.join(data, "pair0000_A.pgm"),
         "--image-b", os.path.join(data, "pair0000_B.pgm"), "--weights", weights,
         "--out", os.path.join(args.workdir, "matches.csv"),
         "--viz", os.path.join(args.workdir, "matches.ppm")],
        ["eval-homography", "--data", data, "--weights", weights, "--mode", "full"],
        ["eval-homography", "--data", data, "--weights", weights, "--mode", "optimized"],
        ["bench", "--image-a", os.path.join(data, "pair0000_A.pgm"),
         "--image-b", os.path.join(data, "pair0000_B.pgm"), "--weights", weights],
    ]
    for argv in steps:
        print(f"\n$ semimatch {' '.join(argv)}")
        code = cli(argv)
        if code != 0:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
