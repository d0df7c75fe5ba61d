"""Print parameter counts and FLOP estimates for every variant and scale.

    python demos/parameter_audit.py [--size 1024 1024]
"""

import argparse

from adsrnet.model import SCALES, VARIANTS, ModelConfig, build_variant, count_parameters, estimate_flops


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, nargs=2, default=(1024, 1024), metavar=("H", "W"))
    args = parser.parse_args()
    h, w = args.size

    print(f"variant\tscale\tparameters\tconv_depth\tgflops_{h}x{w}")
    for variant in VARIANTS:
        for scale in SCALES:
            config = ModelConfig(scale=scale, variant=variant)
            depth = build_variant(config).conv_depth()
            gflops = estimate_flops(config, h, w) / 1e9
            print(f"{variant}\t{scale}\t{count_parameters(config)}\t{depth}\t{gflops:.2f}")


if __name__ == "__main__":
    main()
