"""Empirical order of every sampler on the rotation field against its closed-form endpoint."""
import argparse
import math

from flowsmooth import SamplerConfig, exact_endpoint, make_time_grid, run_sampler
from flowsmooth.diagnostics import endpoint_error
from flowsmooth.fields import LinearMatrixField, rotation_matrix

SAMPLERS = {
    "euler": SamplerConfig("euler"),
    "look_ahead": SamplerConfig("look_ahead", tau_curv=1.0, gamma_interp=0.9),
    "look_back": SamplerConfig("look_back", lambda_blend=0.1),
    "momentum": SamplerConfig("momentum", beta1=0.8),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--grid", choices=["uniform", "sigma_shift"], default="uniform")
    parser.add_argument("--shift", type=float, default=3.0)
    args = parser.parse_args()

    field = LinearMatrixField(rotation_matrix(math.pi / 2))
    z1 = [1.0, 0.0]
    oracle = exact_endpoint(field, z1)
    steps = [25, 50, 100, 200, 400]
    print("sampler     " + "".join(f"K={k:<10d}" for k in steps) + "order")
    for name, cfg in SAMPLERS.items():
        errs = [endpoint_error(run_sampler(cfg, field, make_time_grid(k, args.grid, args.shift), z1), oracle)
                for k in steps]
        order = math.log2(errs[-2] / errs[-1]) if errs[-1] > 0 else float("nan")
        print(f"{name:<12}" + "".join(f"{e:<12.3e}" for e in errs) + f"{order:.3f}")


if __name__ == "__main__":
    main()
