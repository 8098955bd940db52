import numpy as np
import pytest

from tampkit.dmp import (
    DmpError,
    Trajectory,
    load_model,
    min_jerk,
    modulate_via,
    rollout,
    save_model,
    train_dmp,
)


@pytest.fixture(scope="module")
def line_model():
    return train_dmp(min_jerk([0.0], [1.0], 1.0))


@pytest.fixture(scope="module")
def jerk3_model():
    return train_dmp(min_jerk([0.0, 0.0, 0.0], [0.2, 0.3, 0.1], 1.5))


def resample(traj: Trajectory, times, dof=0):
    return np.interp(times, traj.times, traj.positions[:, dof])


class TestTraining:
    def test_line_reproduction_under_one_percent(self, line_model):
        demo = min_jerk([0.0], [1.0], 1.0)
        r = rollout(line_model)
        ref = resample(demo, r.times)
        rmse = np.sqrt(np.mean((r.positions[:, 0] - ref) ** 2))
        assert rmse < 0.01  # path length is 1

    def test_constant_demo_yields_zero_motion(self):
        model = train_dmp(min_jerk([0.4], [0.4], 1.0))
        r = rollout(model)
        assert np.abs(r.positions - 0.4).max() < 1e-9

    def test_min_jerk_3d_reproduction(self, jerk3_model):
        demo = min_jerk([0.0, 0.0, 0.0], [0.2, 0.3, 0.1], 1.5)
        r = rollout(jerk3_model)
        path_len = np.linalg.norm([0.2, 0.3, 0.1])
        ref = np.stack([resample(demo, r.times, d) for d in range(3)], axis=1)
        rmse = np.sqrt(np.mean(np.sum((r.positions - ref) ** 2, axis=1)))
        assert rmse < 0.02 * path_len

    def test_too_short_demo_rejected(self):
        with pytest.raises(DmpError):
            train_dmp(min_jerk([0.0], [1.0], 1.0, n=10))

    def test_fit_exact_for_phase_scaled_forcing(self):
        # A forcing target proportional to the phase lies in the span of
        # every basis; the per-basis regression recovers it exactly.
        from tampkit.dmp import _basis_activations

        model = train_dmp(min_jerk([0.0], [1.0], 1.0))
        x = np.exp(-model.alpha_x * np.linspace(0, 1, 300))
        f_target = 3.7 * x
        psi = _basis_activations(x, model.centers, model.widths)
        xi = x[:, None] * psi
        w = (xi * f_target[:, None]).sum(0) / np.maximum((xi * x[:, None]).sum(0), 1e-12)
        f_fit = (psi @ w) * x / psi.sum(axis=1)
        assert np.abs(f_fit - f_target).max() < 1e-9


class TestRollout:
    def test_identity_generalization(self, line_model):
        r = rollout(line_model, [0.0], [1.0], 1.0)
        assert abs(r.positions[-1, 0] - 1.0) < 1e-3

    def test_shifted_goal_endpoint(self, line_model):
        r = rollout(line_model, [0.0], [1.3], 1.0)
        assert abs(r.positions[-1, 0] - 1.3) < 1e-3

    def test_goal_convergence_across_models(self, jerk3_model):
        for shift in (0.1, -0.2, 0.3):
            goal = np.array([0.2, 0.3, 0.1]) + shift
            r = rollout(jerk3_model, [0.0, 0.0, 0.0], goal, 1.5)
            assert np.abs(r.positions[-1] - goal).max() < 1e-3

    def test_duration_scaling_preserves_shape(self, line_model):
        r1 = rollout(line_model, duration=1.0)
        r2 = rollout(line_model, duration=2.0)
        ref = np.interp(r2.times / 2.0, r1.times, r1.positions[:, 0])
        assert np.abs(r2.positions[:, 0] - ref).max() < 0.01

    def test_dt_must_be_positive(self, line_model):
        with pytest.raises(DmpError):
            rollout(line_model, dt=0.0)

    def test_acceleration_bound(self, line_model):
        r = rollout(line_model, [0.0], [1.0], 1.0)
        acc = np.diff(r.positions[:, 0], 2) / 0.002**2
        bound = line_model.alpha_z * line_model.beta_z * 1.0 * 5.0
        assert np.abs(acc).max() < bound


class TestViaPoint:
    def test_collinear_via_keeps_line(self, jerk3_model):
        # A via point on the straight start-goal line must leave the
        # geometric path on that line.
        start = np.zeros(3)
        goal = np.array([0.2, 0.3, 0.1])
        v = modulate_via(jerk3_model, goal / 2, 0.5, new_start=start, new_goal=goal)
        direction = goal / np.linalg.norm(goal)
        offsets = v.positions - start
        dist = np.linalg.norm(offsets - np.outer(offsets @ direction, direction), axis=1)
        assert dist.max() < 0.01

    def test_via_attained_exactly_at_split(self, jerk3_model):
        via = np.array([0.05, 0.2, 0.25])
        v = modulate_via(jerk3_model, via, 0.6)
        split_t = 1.5 * 0.6
        idx = int(np.argmin(np.abs(v.times - split_t)))
        assert np.abs(v.positions[idx] - via).max() == 0.0

    def test_junction_continuity(self, jerk3_model):
        v = modulate_via(jerk3_model, [0.1, 0.1, 0.3], 0.5)
        gaps = np.linalg.norm(np.diff(v.positions, axis=0), axis=1)
        assert gaps.max() < 0.01  # no jumps anywhere
        assert np.all(np.diff(v.times) > 0)

    def test_ratio_bounds(self, line_model):
        with pytest.raises(DmpError):
            modulate_via(line_model, [0.5], 0.0)
        with pytest.raises(DmpError):
            modulate_via(line_model, [0.5], 1.0)


def test_model_json_roundtrip(tmp_path, jerk3_model):
    path = tmp_path / "model.json"
    save_model(jerk3_model, str(path))
    loaded = load_model(str(path))
    r1 = rollout(jerk3_model)
    r2 = rollout(loaded)
    assert np.array_equal(r1.positions, r2.positions)


def test_trajectory_csv_export(jerk3_model):
    demo = min_jerk([0, 0, 0, 0], [0.1, 0.1, 0.1, 0.5], 1.0)
    csv = demo.to_csv()
    header = csv.splitlines()[0]
    assert header == "t,q0,q1,q2,q3"
    assert len(csv.splitlines()) == len(demo.times) + 1


def test_trajectory_validation():
    with pytest.raises(DmpError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)))  # non-increasing
    with pytest.raises(DmpError):
        Trajectory(np.array([0.0, 1.0]), np.array([[0.0], [float("inf")]]))
