"""Relative error of the {0, +-2} steerable reconstruction of |H| versus astigmatism ratio."""

import argparse

import numpy as np

from ctfkit.ctf_model import DefocusParams, MicroscopeParams, ctf_grid, polar_grid
from ctfkit.steerable import build_basis, denoise_spectrum


def reconstruction_error(mic, defocus, basis):
    r, _ = polar_grid(basis.size)
    disk = r <= basis.cutoff
    target = np.abs(ctf_grid(mic, defocus, basis.size)) * disk
    recon = np.sqrt(denoise_spectrum(target**2, basis))
    return float(np.linalg.norm((recon - target)[disk]) / np.linalg.norm(target[disk]))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--block", type=int, default=512)
    parser.add_argument("--pixel-size", type=float, default=1.34)
    parser.add_argument("--cs", type=float, default=2.0, help="mm")
    parser.add_argument("--defocus", type=float, nargs="+", default=[3000, 8000, 15000, 30000])
    parser.add_argument("--ratios", type=float, nargs="+", default=[0, 1 / 60, 1 / 30, 1 / 20, 1 / 15])
    args = parser.parse_args(argv)

    mic = MicroscopeParams.from_settings(300, args.cs, 0.1, args.pixel_size)
    basis = build_basis(args.block, (-2, 0, 2), 3 / 8)
    print("defocus  " + "  ".join(f"r={r:.4f}" for r in args.ratios))
    for mean in args.defocus:
        errs = [reconstruction_error(mic, DefocusParams(mean * (1 + q), mean * (1 - q), 0.4), basis)
                for q in args.ratios]
        print(f"{mean:7.0f}  " + "  ".join(f"{e:8.4f}" for e in errs))


if __name__ == "__main__":
    main()
