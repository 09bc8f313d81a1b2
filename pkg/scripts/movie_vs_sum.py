"""Defocus from frame-averaged spectra versus the frame sum on synthetic movies."""

import argparse
import math

import numpy as np

from ctfkit.ctf_model import DefocusParams
from ctfkit.pipeline import PipelineConfig, run_pipeline
from ctfkit.synth import SynthSpec, synth_movie


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--movies", type=int, default=5)
    parser.add_argument("--frames", type=int, default=20)
    parser.add_argument("--size", type=int, default=2048)
    parser.add_argument("--snr", type=float, default=0.1, help="per-frame SNR")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    common = dict(pixel_size=1.34, block_sizes=(512,), tapers=(4,), drop_first_frame=False)
    movie_cfg = PipelineConfig(movie=True, **common)
    sum_cfg = PipelineConfig(movie=False, **common)
    rng = np.random.default_rng(args.seed)
    print("i  true_mean  movie_mean  sum_mean  |movie-sum|  movie_s  sum_s")
    for i in range(args.movies):
        mean, ratio, ang = rng.uniform(10000, 30000), rng.uniform(0, 0.05), rng.uniform(0, math.pi)
        d = DefocusParams(mean * (1 + ratio), mean * (1 - ratio), ang)
        stack = np.stack(synth_movie(SynthSpec(movie_cfg.mic, d, size=args.size, snr=args.snr,
                                               seed=args.seed * 100 + i), args.frames))
        movie = run_pipeline(movie_cfg, [stack])[0]
        summed = run_pipeline(sum_cfg, [stack])[0]
        print(f"{i}  {d.mean_defocus:9.1f}  {movie.mean_defocus:10.1f}  {summed.mean_defocus:8.1f}"
              f"  {abs(movie.mean_defocus - summed.mean_defocus):11.1f}  {movie.timing_s:7.1f}  {summed.timing_s:5.1f}")


if __name__ == "__main__":
    main()
