"""Per-stage timing of full vs optimized inference on one synthetic pair.

Prints the same five-stage breakdown the `semimatch bench` subcommand
emits, side by side for both modes, plus the coarse-matching speedup.

Usage: python3 scripts/bench_inference_modes.py [--size 256] [--reps 5]
"""
import argparse

from semimatch.bench import STAGES, bench_pipeline
from semimatch.pipeline import Matcher, MatcherConfig
from semimatch.synth import SynthConfig, render_pair


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--reps", type=int, default=5)
    parser.add_argument("--warmup", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    matcher = Matcher(MatcherConfig.toy(), seed=args.seed)
    image_a, image_b, _ = render_pair(args.seed, 0, SynthConfig(size=args.size))

    timings = {
        mode: bench_pipeline(matcher, image_a, image_b, mode=mode,
                             repetitions=args.reps, warmup=args.warmup)
        for mode in ("full", "optimized")
    }
    print(f"{args.size}x{args.size} pair, toy model, median of {args.reps} reps (ms)")
    print(f"{'stage':<14} {'full':>9} {'optimized':>10}")
    for stage in (*STAGES, "total"):
        full_ms = 1e3 * timings["full"].median[stage]
        opt_ms = 1e3 * timings["optimized"].median[stage]
        print(f"{stage:<14} {full_ms:>9.2f} {opt_ms:>10.2f}")
    speedup = timings["full"].median["coarse_match"] / timings["optimized"].median["coarse_match"]
    print(f"\ncoarse-matching speedup from skipping dual-softmax: {speedup:.2f}x")


if __name__ == "__main__":
    main()
