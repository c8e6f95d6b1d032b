"""Per-step curvature and gate decisions of Look-Ahead on a shifted grid."""
import argparse
import math

from flowsmooth import SamplerConfig, make_time_grid, run_sampler
from flowsmooth.fields import LinearMatrixField, rotation_matrix


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=25)
    parser.add_argument("--shift", type=float, default=3.0)
    parser.add_argument("--tau", type=float, default=1.0)
    parser.add_argument("--gamma", type=float, default=0.9)
    parser.add_argument("--peek-mode", choices=["finite_difference", "model_eval"], default="finite_difference")
    args = parser.parse_args()

    grid = make_time_grid(args.steps, "sigma_shift", args.shift)
    field = LinearMatrixField(rotation_matrix(math.pi / 2))
    cfg = SamplerConfig("look_ahead", tau_curv=args.tau, gamma_interp=args.gamma, peek_mode=args.peek_mode)
    traj = run_sampler(cfg, field, grid, [1.0, 0.0])
    print(" k  t_k       delta     eta       kappa       step")
    for k, rec in enumerate(traj.step_records):
        step = "full" if rec.accepted_full_step else "interp"
        print(f"{k:2d}  {grid.times[k]:.5f}  {grid.deltas[k]:.5f}  {grid.step_sizes[k]:.5f}  {rec.kappa:10.4e}  {step}")
    n_full = sum(r.accepted_full_step for r in traj.step_records)
    print(f"{n_full} full steps, {traj.n_steps - n_full} interpolated, {traj.total_calls} model calls")


if __name__ == "__main__":
    main()
