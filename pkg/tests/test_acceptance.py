"""Acceptance gate.

One test (or parametrized family) per criterion, tagged with
``@pytest.mark.criterion``; ``conftest.py`` prints a PASS/FAIL line for each
in the terminal summary.  Runtime budgets are measured with ``perf_counter``.
"""
import math
import time

import numpy as np
import pytest

from flowsmooth.core import (
    SamplerConfig,
    StepRecord,
    Trajectory,
    make_time_grid,
)
from flowsmooth.diagnostics import (
    endpoint_error,
    ensemble_moments,
    oscillation_energy,
    verify_call_budget,
)
from flowsmooth.experiment import load_config, run_experiment
from flowsmooth.fields import (
    CustomField,
    GaussianRfField,
    LinearMatrixField,
    StiffTrackingField,
    exact_endpoint,
    reference_endpoint,
    rotation_matrix,
)
from flowsmooth.rng import ensemble_normals
from flowsmooth.samplers import (
    curvature,
    ema_update,
    estimate_peek_velocity,
    euler_step,
    momentum_step,
    peek_blend,
    run_sampler,
    scheduler_step,
    SamplerState,
)
from flowsmooth.schedules import RECTIFIED_FLOW, log_snr, lookback_decay

ROTATION = LinearMatrixField(rotation_matrix(math.pi / 2))
criterion = pytest.mark.criterion


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


# 1 ---------------------------------------------------------------------------

@criterion(1, "reductions match euler within 1e-12 on the rotation field")
def test_exact_euler_reductions(detail):
    grid = make_time_grid(25)
    z0 = [1.0, 0.0]

    def run():
        base = run_sampler(SamplerConfig("euler"), ROTATION, grid, z0).as_array()
        variants = {
            "look_ahead tau=inf": SamplerConfig("look_ahead", tau_curv="inf"),
            "look_ahead gamma=1": SamplerConfig("look_ahead", tau_curv=1e-300, gamma_interp=1.0),
            "look_back lambda=0": SamplerConfig("look_back", lambda_blend=0.0, gamma_max=0.9),
            "momentum beta1=0": SamplerConfig("momentum", beta1=0.0),
        }
        return base, {k: run_sampler(c, ROTATION, grid, z0).as_array() for k, c in variants.items()}

    (base, others), elapsed = _timed(run)
    worst = max(float(np.max(np.abs(arr - base))) for arr in others.values())
    detail(f"max deviation {worst:.1e}, {elapsed:.3f}s")
    assert base.shape == (26, 2)
    for name, arr in others.items():
        assert arr.shape == base.shape
        assert np.max(np.abs(arr - base)) <= 1e-12, name
    assert elapsed < 1.0


# 2 ---------------------------------------------------------------------------

@criterion(2, "call budget is K per trajectory, 2K for model_eval look-ahead")
def test_call_budget(detail):
    configs = [
        (SamplerConfig("euler"), 1),
        (SamplerConfig("look_ahead"), 1),
        (SamplerConfig("look_ahead", tau_curv=10.0, gamma_interp=0.9), 1),
        (SamplerConfig("look_back"), 1),
        (SamplerConfig("momentum"), 1),
        (SamplerConfig("look_ahead", peek_mode="model_eval"), 2),
    ]

    def run():
        checks = []
        for n in (1, 25, 200):
            grid = make_time_grid(n)
            for config, per_step in configs:
                traj = run_sampler(config, ROTATION, grid, [1.0, 0.0])
                checks.append(verify_call_budget(traj, per_step) and traj.total_calls == per_step * n)
        return checks

    checks, elapsed = _timed(run)
    detail(f"{sum(checks)}/{len(checks)} budgets exact, {elapsed:.3f}s")
    assert all(checks)
    assert elapsed < 1.0


# 3 ---------------------------------------------------------------------------

@criterion(3, "euler error halves from K=200 to K=400")
def test_euler_convergence_order(detail):
    z1 = [1.0, 0.0]
    oracle = exact_endpoint(ROTATION, z1)

    def run():
        return [endpoint_error(run_sampler(SamplerConfig("euler"), ROTATION, make_time_grid(n), z1), oracle)
                for n in (200, 400)]

    (e200, e400), elapsed = _timed(run)
    ratio = e200 / e400
    detail(f"ratio {ratio:.4f}, {elapsed:.3f}s")
    assert 1.8 <= ratio <= 2.2
    assert elapsed < 1.0


# 4 ---------------------------------------------------------------------------

@criterion(4, "gaussian transport recovers scale s0=2")
def test_gaussian_transport(detail):
    field = GaussianRfField(s0=2.0, dim=4)
    grid = make_time_grid(200)
    config = SamplerConfig("euler")

    def run():
        latents = ensemble_normals(seed=20240, size=512, dim=4)
        return ensemble_moments(run_sampler(config, field, grid, z).endpoint for z in latents)

    (mean, std), elapsed = _timed(run)
    detail(f"std {np.round(std, 3).tolist()}, max|mean| {np.max(np.abs(mean)):.3f}, {elapsed:.2f}s")
    assert np.all((std >= 1.8) & (std <= 2.2))
    assert np.all(np.abs(mean) < 0.2)
    assert elapsed < 5.0


# 5 ---------------------------------------------------------------------------

@criterion(5, "look-back lowers oscillation energy on the stiff field")
def test_look_back_smoothing(detail):
    field = StiffTrackingField(stiffness=50.0, dim=2)
    grid = make_time_grid(25)
    z1 = [2.0, 2.0]

    def run():
        reference = reference_endpoint(field, z1)
        euler = run_sampler(SamplerConfig("euler"), field, grid, z1)
        look_back = run_sampler(
            SamplerConfig("look_back", lambda_blend=0.1, gamma_max=0.9, beta_steepness=1.0, xi_star=0.0),
            field, grid, z1)
        return reference, euler, look_back

    (reference, euler, look_back), elapsed = _timed(run)
    e_euler, e_lb = oscillation_energy(euler), oscillation_energy(look_back)
    err_euler, err_lb = endpoint_error(euler, reference), endpoint_error(look_back, reference)
    detail(f"energy look_back {e_lb:.3e} vs euler {e_euler:.3e}, {elapsed:.3f}s")
    assert e_lb < e_euler
    assert math.isfinite(err_euler) and math.isfinite(err_lb)
    assert elapsed < 1.0


# 6 ---------------------------------------------------------------------------

@criterion(6, "curvature gate both accepts and rejects on a shifted grid")
def test_curvature_gate_activation(detail):
    grid = make_time_grid(25, "sigma_shift", 3.0)
    config = SamplerConfig("look_ahead", tau_curv=1.0, gamma_interp=0.9)

    traj, elapsed = _timed(lambda: run_sampler(config, ROTATION, grid, [1.0, 0.0]))
    kappas = [r.kappa for r in traj.step_records]
    accepted = [r.accepted_full_step for r in traj.step_records]
    detail(f"{sum(accepted)} accepted, {len(accepted) - sum(accepted)} interpolated, {elapsed:.3f}s")
    assert any(accepted) and not all(accepted)
    assert all(k is not None and k >= 0 for k in kappas)
    assert elapsed < 1.0


# 7 ---------------------------------------------------------------------------

@criterion(7, "decay schedule limits, monotonicity and midpoint value")
def test_decay_schedule(detail):
    ts = np.linspace(0.0, 1.0, 1000)
    gammas = np.array([lookback_decay(RECTIFIED_FLOW, t) for t in ts])
    assert np.all((gammas >= 0.0) & (gammas <= 0.9))
    # t increases means log-SNR decreases, so gamma must not decrease
    assert np.all(np.diff(gammas) >= 0.0)
    low = ts < 0.5
    assert np.all(np.diff(gammas[low]) >= 0.0)
    assert lookback_decay(RECTIFIED_FLOW, 1e-6) < 1e-10
    assert lookback_decay(RECTIFIED_FLOW, 1.0) == pytest.approx(0.9, abs=1e-10)
    assert all(lookback_decay(RECTIFIED_FLOW, t, gamma_max=0.0) == 0.0 for t in ts[::50])
    mid = lookback_decay(RECTIFIED_FLOW, 0.5)
    detail(f"gamma(0.5)={mid!r}")
    assert abs(mid - 0.45) <= 1e-12


# 8 ---------------------------------------------------------------------------

@criterion(8, "same config and seed give byte-identical summary.csv")
def test_determinism(tmp_path, detail):
    path = tmp_path / "cfg.json"
    path.write_text("""{
  "field": {"name": "gaussian_rf", "params": {"s0": 2.0, "dim": 4}},
  "grid": {"n_steps": 25, "kind": "sigma_shift", "shift": 3.0},
  "samplers": [
    {"algorithm": "euler"},
    {"algorithm": "look_ahead", "tau_curv": 1.0, "gamma_interp": 0.95},
    {"algorithm": "look_back", "lambda_blend": 0.1, "xi_star": 0.25},
    {"algorithm": "momentum"}
  ],
  "ensemble_size": 64,
  "seed": 7
}""")
    config = load_config(path)

    def run():
        a = run_experiment(config.with_overrides(output_dir=tmp_path / "a")).summary_path.read_bytes()
        b = run_experiment(config.with_overrides(output_dir=tmp_path / "b")).summary_path.read_bytes()
        return a, b

    (a, b), elapsed = _timed(run)
    detail(f"{len(a)} bytes, {elapsed:.3f}s")
    assert a == b
    assert elapsed < 5.0


# 9 ---------------------------------------------------------------------------

def _zero_field(dim):
    return CustomField(lambda z, t: np.zeros_like(z), dim)


def _const_field(value):
    value = np.asarray(value, dtype=np.float64)
    return CustomField(lambda z, t: np.broadcast_to(value, np.shape(z)).copy(), value.size)


def _approx(got, want, tol=1e-12):
    return np.allclose(np.asarray(got, dtype=np.float64), np.asarray(want, dtype=np.float64), rtol=0, atol=tol)


def _grid_examples():
    g2 = make_time_grid(2)
    g1 = make_time_grid(1)
    gs = make_time_grid(2, "sigma_shift", 3.0)
    return (_approx(g2.times, [1, 0.5, 0]) and _approx(g2.deltas, [0.5, 0.5]) and _approx(g2.step_sizes, [0.5, 0.5])
            and _approx(g1.times, [1, 0]) and _approx(g1.deltas, [1]) and _approx(g1.step_sizes, [1])
            and _approx(gs.step_sizes, [0.25, 0.75]) and _approx(gs.deltas, [0.5, 0.5]))


def _field_examples():
    unit_rot = LinearMatrixField(np.array([[0.0, -1.0], [1.0, 0.0]]))
    g = GaussianRfField(1.0, 1)
    stiff = StiffTrackingField(50.0, 1)
    stiff2 = StiffTrackingField(100.0, 1)
    t = 0.3
    z = stiff.target(t) + 0.1
    return (_approx(unit_rot.velocity([1.0, 0.0], 0.7), [0, 1])
            and _approx(GaussianRfField(2.0, 3).velocity(np.zeros(3), 0.4), 0)
            and _approx(g.velocity([5.0], 0.5), [0])
            and _approx(g.velocity([1.0], 0.8), [0.6 / 0.68])
            and _approx(stiff.velocity(stiff.target(t), t), [0])
            and _approx(stiff.velocity(z, t), [-5.0])
            and _approx(np.linalg.norm(stiff2.velocity(z, t)), 2 * np.linalg.norm(stiff.velocity(z, t))))


def _oracle_examples():
    return (_approx(exact_endpoint(ROTATION, [1.0, 0.0]), [0, -1])
            and _approx(exact_endpoint(GaussianRfField(2.0, 2), [1.0, 1.0]), [2, 2])
            and _approx(exact_endpoint(LinearMatrixField(np.zeros((2, 2))), [0.3, -0.7]), [0.3, -0.7]))


def _schedule_examples():
    return (abs(log_snr(RECTIFIED_FLOW, 0.5)) <= 1e-12
            and abs(log_snr(RECTIFIED_FLOW, 0.1) - 2 * math.log(9)) <= 1e-12
            and abs(log_snr(RECTIFIED_FLOW, 0.9) + 2 * math.log(9)) <= 1e-12
            and abs(lookback_decay(RECTIFIED_FLOW, 0.5, 0.9, 1.0, 0.0) - 0.45) <= 1e-12
            and lookback_decay(RECTIFIED_FLOW, 1e-6, 0.9, 1.0, 0.0) < 1e-10
            and lookback_decay(RECTIFIED_FLOW, 0.37, gamma_max=0.0) == 0.0)


def _step_examples():
    unit_rot = LinearMatrixField(np.array([[0.0, -1.0], [1.0, 0.0]]))
    g2 = make_time_grid(2)
    gs = make_time_grid(2, "sigma_shift", 3.0)
    z_tilde, t_tilde = scheduler_step([0.0], [1.0], 0, g2)
    zs_tilde, ts_tilde = scheduler_step([0.0], [1.0], 0, gs)
    z_still, t_still = scheduler_step([0.4], [0.0], 0, g2)
    return (_approx(euler_step([0.3, 0.2], 1.0, 0.5, _zero_field(2)), [0.3, 0.2])
            and _approx(euler_step([1.0, 0.0], 1.0, 0.1, unit_rot), [1, -0.1])
            and _approx(euler_step([0.0], 1.0, 1.0, _const_field([2.0])), [-2])
            and _approx(z_tilde, [-0.5]) and t_tilde == 0.5
            and _approx(z_still, [0.4]) and t_still == 0.5
            and _approx(zs_tilde, [-0.25]) and ts_tilde == 0.5)


def _peek_examples():
    return (_approx(estimate_peek_velocity([2.0], [1.0], 0.5), [2])
            and _approx(estimate_peek_velocity([3.0], [3.0], 0.5), [0])
            and _approx(estimate_peek_velocity([0.0, 0.0], [-1.0, 2.0], 1.0), [1, -2])
            and curvature([1.0], [1.0], [0.0], [1.0]) == 0.0
            and abs(curvature([-1.0, 0.0], [-2.0, 0.0], [0.0, 0.0], [1.0, 0.0], 1e-8) - 1 / (1 + 1e-8)) <= 1e-12
            and abs(curvature([0.0], [0.5], [1.0], [1.0], 1e-8) - 5e7) <= 1e-12 * 5e7)


def _look_ahead_interp_example():
    # one step from z=0 with v(t=1)=-2 and eta=1 predicts z~=2; v(t=0)=3 gives kappa=2.5 > tau
    field = CustomField(lambda z, t: np.full_like(z, 3.0 - 5.0 * t), 1)
    config = SamplerConfig("look_ahead", tau_curv=1.0, gamma_interp=0.9, peek_mode="model_eval")
    traj = run_sampler(config, field, make_time_grid(1), [0.0])
    return _approx(traj.endpoint, [1.8]) and traj.step_records[0].accepted_full_step is False


def _look_back_examples():
    return (_approx(peek_blend([10.0], [0.0], 1.0), [0])
            and _approx(peek_blend([10.0], [0.0], 0.1), [9])
            and _approx(ema_update([1.0], [3.0], 0.5), [2]))


def _momentum_examples():
    grid = make_time_grid(1)
    state = SamplerState(z=np.array([0.0]), momentum=np.array([0.0]))
    nxt, _ = momentum_step(state, 0, grid, SamplerConfig("momentum", beta1=0.5), _const_field([-2.0]))
    still, _ = momentum_step(SamplerState(z=np.array([0.7]), momentum=np.array([0.0])), 0, grid,
                             SamplerConfig("momentum"), _zero_field(1))
    return _approx(nxt.momentum, [1]) and _approx(nxt.z, [1]) and _approx(still.z, [0.7])


def _sampler_examples():
    traj = run_sampler(SamplerConfig("euler"), _const_field([1.0]), make_time_grid(1), [0.0])
    return _approx(traj.as_array(), [[0.0], [-1.0]])


def _diagnostic_examples():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=5), rng.normal(size=5)
    perm = rng.permutation(5)
    line = np.outer(np.arange(6.0), [1.0, -2.0])
    states = rng.normal(size=(7, 3))
    mean, std = ensemble_moments([[0.0], [2.0]])
    m_same, s_same = ensemble_moments([[1.5, 2.0]] * 4)
    pts = rng.normal(size=(6, 2))
    m_shift, _ = ensemble_moments(pts + [3.0, -1.0])
    return (endpoint_error(np.array([0.3, 0.1]), [0.3, 0.1]) == 0.0
            and endpoint_error(np.zeros(2), [3.0, 4.0]) == 5.0
            and abs(endpoint_error(a[perm], b[perm]) - endpoint_error(a, b)) <= 1e-12
            and oscillation_energy(line) <= 1e-12
            and oscillation_energy(np.array([0.0, 1.0, 0.0])) == 4.0
            and abs(oscillation_energy(3.0 * states) - 9.0 * oscillation_energy(states)) <= 1e-12 * oscillation_energy(states) * 9
            and _approx(mean, [1]) and _approx(std, [math.sqrt(2)])
            and _approx(s_same, [0, 0])
            and _approx(m_shift, pts.mean(axis=0) + [3.0, -1.0]))


def _budget_examples():
    grid = make_time_grid(25)
    euler = run_sampler(SamplerConfig("euler"), ROTATION, grid, [1.0, 0.0])
    la = run_sampler(SamplerConfig("look_ahead", peek_mode="model_eval"), ROTATION, grid, [1.0, 0.0])
    empty = Trajectory(states=[np.zeros(2)], times=np.array([1.0]), step_records=[])
    return (verify_call_budget(euler, 1) and verify_call_budget(la, 2) and not verify_call_budget(la, 1)
            and verify_call_budget(empty, 1) and isinstance(StepRecord(1), StepRecord))


def _rerun_example(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"field": {"name": "linear_matrix", "params": {"rotation_rate": 1.0}},'
                    ' "grid": {"n_steps": 5}, "samplers": [{"algorithm": "momentum"}],'
                    ' "ensemble_size": 3, "seed": 1}')
    config = load_config(path)
    a = run_experiment(config.with_overrides(output_dir=tmp_path / "a")).summary_path.read_bytes()
    b = run_experiment(config.with_overrides(output_dir=tmp_path / "b")).summary_path.read_bytes()
    return a == b


UNIT_EXAMPLES = {
    "time grids": _grid_examples,
    "velocity fields": _field_examples,
    "closed-form endpoints": _oracle_examples,
    "log-SNR and decay": _schedule_examples,
    "euler and scheduler steps": _step_examples,
    "peek velocity and curvature": _peek_examples,
    "look-ahead interpolation": _look_ahead_interp_example,
    "look-back blend and average": _look_back_examples,
    "momentum step": _momentum_examples,
    "single euler trajectory": _sampler_examples,
    "diagnostics": _diagnostic_examples,
    "call budget": _budget_examples,
}


@criterion(9, "unit-level example values")
@pytest.mark.parametrize("group", list(UNIT_EXAMPLES))
def test_unit_examples(group):
    assert UNIT_EXAMPLES[group]()


@criterion(9, "unit-level example values")
def test_unit_example_rerun(tmp_path):
    assert _rerun_example(tmp_path)
