"""Oscillation energy of Look-Back against Euler on the stiff tracking field, swept over lambda."""
import argparse

import numpy as np

from flowsmooth import SamplerConfig, StiffTrackingField, make_time_grid, oscillation_energy, run_sampler
from flowsmooth.diagnostics import endpoint_error
from flowsmooth.fields import reference_endpoint


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--stiffness", type=float, default=50.0)
    parser.add_argument("--steps", type=int, default=25)
    parser.add_argument("--xi-star", type=float, default=0.0)
    args = parser.parse_args()

    field = StiffTrackingField(args.stiffness, dim=2)
    grid = make_time_grid(args.steps)
    z1 = [2.0, 2.0]
    ref = reference_endpoint(field, z1)
    euler = run_sampler(SamplerConfig("euler"), field, grid, z1)
    base = oscillation_energy(euler)
    print(f"euler          energy={base:.4e} error={endpoint_error(euler, ref):.4e}")
    for lam in np.round(np.linspace(0.0, 1.0, 11), 2):
        cfg = SamplerConfig("look_back", lambda_blend=float(lam), xi_star=args.xi_star)
        traj = run_sampler(cfg, field, grid, z1)
        energy = oscillation_energy(traj)
        print(f"look_back {lam:4.2f} energy={energy:.4e} error={endpoint_error(traj, ref):.4e}"
              f" ratio={energy / base:.3e}")


if __name__ == "__main__":
    main()
