"""Discrete dynamic movement primitives.

One second-order attractor per degree of freedom:

    tau^2 * ydd = alpha_z * (beta_z * (g - y) - tau * yd) + f(x) * (g - y0)
    tau * xd  = -alpha_x * x

with a forcing term f(x) = sum_i(psi_i(x) * w_i) * x / sum_i(psi_i(x))
over Gaussian bases on the canonical phase x.  Weights are fit from one
demonstrated trajectory by locally weighted regression; rollouts
generalize the shape to new start/goal pairs and durations.  When the
demo's displacement is near zero the amplitude scale (g - y0) is
replaced by 1 so the forcing term stays well-defined.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scene import Pose

_EPS_AMPLITUDE = 1e-6


class DmpError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped samples, one row per step, columns are DoFs."""

    times: np.ndarray  # (T,)
    positions: np.ndarray  # (T, D)

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.positions, dtype=float)
        if t.ndim != 1 or y.ndim != 2 or len(t) != len(y):
            raise DmpError("trajectory needs times (T,) and positions (T, D)")
        if len(t) >= 2 and not np.all(np.diff(t) > 0):
            raise DmpError("timestamps must be strictly increasing")
        if not (np.isfinite(t).all() and np.isfinite(y).all()):
            raise DmpError("trajectory contains non-finite samples")

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def dofs(self) -> int:
        return int(self.positions.shape[1])

    def poses(self) -> list[Pose]:
        if self.dofs != 4:
            raise DmpError("pose export needs 4 DoFs (x, y, z, yaw)")
        return [Pose(float(r[0]), float(r[1]), float(max(r[2], 0.0)), float(r[3])) for r in self.positions]

    def to_csv(self) -> str:
        header = "t," + ",".join(f"q{d}" for d in range(self.dofs))
        rows = [header]
        for t, row in zip(self.times, self.positions):
            rows.append(",".join(f"{v:.9f}" for v in (t, *row)))
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class DmpModel:
    weights: np.ndarray  # (D, n_basis)
    centers: np.ndarray  # (n_basis,)
    widths: np.ndarray  # (n_basis,)
    alpha_z: float
    beta_z: float
    alpha_x: float
    duration: float
    y0: np.ndarray  # (D,)
    goal: np.ndarray  # (D,)

    @property
    def n_basis(self) -> int:
        return int(self.weights.shape[1])

    @property
    def dofs(self) -> int:
        return int(self.weights.shape[0])

    def to_json(self) -> dict:
        return {
            "alpha_z": self.alpha_z,
            "beta_z": self.beta_z,
            "alpha_x": self.alpha_x,
            "duration": self.duration,
            "centers": self.centers.tolist(),
            "widths": self.widths.tolist(),
            "weights": self.weights.tolist(),
            "y0": self.y0.tolist(),
            "goal": self.goal.tolist(),
        }

    @staticmethod
    def from_json(data: dict) -> "DmpModel":
        return DmpModel(
            weights=np.asarray(data["weights"], dtype=float),
            centers=np.asarray(data["centers"], dtype=float),
            widths=np.asarray(data["widths"], dtype=float),
            alpha_z=float(data["alpha_z"]),
            beta_z=float(data["beta_z"]),
            alpha_x=float(data["alpha_x"]),
            duration=float(data["duration"]),
            y0=np.asarray(data["y0"], dtype=float),
            goal=np.asarray(data["goal"], dtype=float),
        )


def _basis_activations(x: np.ndarray, centers: np.ndarray, widths: np.ndarray) -> np.ndarray:
    # x: (T,) -> (T, n_basis)
    return np.exp(-widths[None, :] * (x[:, None] - centers[None, :]) ** 2)


def _amplitude(y0: np.ndarray, goal: np.ndarray) -> np.ndarray:
    amp = goal - y0
    amp = np.where(np.abs(amp) < _EPS_AMPLITUDE, 1.0, amp)
    return amp


def train_dmp(
    demo: Trajectory,
    n_basis: int = 20,
    alpha_z: float = 25.0,
    beta_z: float = 25.0 / 4.0,
    alpha_x: float = 25.0 / 3.0,
) -> DmpModel:
    """Fit per-DoF forcing weights to reproduce one demonstration."""
    if len(demo.times) < n_basis + 2:
        raise DmpError(f"demo too short: {len(demo.times)} samples for {n_basis} bases")
    duration = demo.duration
    if duration <= 0:
        raise DmpError("demo duration must be positive")

    t = (demo.times - demo.times[0]) / duration  # normalized [0, 1]
    y = demo.positions
    y0 = y[0].copy()
    goal = y[-1].copy()

    # Resample onto a uniform grid so finite differences are clean.
    n = max(len(t), 400)
    tu = np.linspace(0.0, 1.0, n)
    yu = np.stack([np.interp(tu, t, y[:, d]) for d in range(demo.dofs)], axis=1)
    dt = tu[1] - tu[0]
    yd = np.gradient(yu, dt, axis=0, edge_order=2)
    ydd = np.gradient(yd, dt, axis=0, edge_order=2)

    # Canonical phase over the normalized timeline (tau = 1).  Centers are
    # evenly spaced in time; the width factor keeps neighboring bases
    # narrow enough for the per-basis regression to track sharp forcing.
    x = np.exp(-alpha_x * tu)
    centers = np.exp(-alpha_x * np.linspace(0.0, 1.0, n_basis))
    widths = np.empty(n_basis)
    widths[:-1] = 6.0 / np.diff(centers) ** 2
    widths[-1] = widths[-2]

    amp = _amplitude(y0, goal)
    # Required forcing, per DoF: f = ydd - alpha_z*(beta_z*(g - y) - yd)
    f_target = (ydd - alpha_z * (beta_z * (goal[None, :] - yu) - yd)) / amp[None, :]

    psi = _basis_activations(x, centers, widths)  # (T, B)
    xi = x[:, None] * psi  # regressors scaled by phase
    weights = np.empty((demo.dofs, n_basis))
    for d in range(demo.dofs):
        num = (xi * f_target[:, d : d + 1]).sum(axis=0)
        den = (xi * x[:, None]).sum(axis=0)
        weights[d] = num / np.maximum(den, 1e-12)

    return DmpModel(
        weights=weights,
        centers=centers,
        widths=widths,
        alpha_z=alpha_z,
        beta_z=beta_z,
        alpha_x=alpha_x,
        duration=duration,
        y0=y0,
        goal=goal,
    )


def rollout(
    model: DmpModel,
    new_start: Sequence[float] | np.ndarray | None = None,
    new_goal: Sequence[float] | np.ndarray | None = None,
    duration: float | None = None,
    dt: float = 0.002,
) -> Trajectory:
    """Integrate the attractor from a new start to a new goal."""
    if dt <= 0:
        raise DmpError("dt must be positive")
    y0 = np.asarray(new_start if new_start is not None else model.y0, dtype=float)
    goal = np.asarray(new_goal if new_goal is not None else model.goal, dtype=float)
    tau = float(duration if duration is not None else model.duration)
    if tau <= 0:
        raise DmpError("duration must be positive")

    amp = _amplitude(y0, goal)
    n_steps = int(math.ceil(tau / dt))
    y = y0.copy()
    yd = np.zeros_like(y0)
    times = [0.0]
    out = [y.copy()]
    for k in range(n_steps):
        # Closed-form canonical phase; only the transformation system is
        # integrated numerically (forward Euler).
        x = math.exp(-model.alpha_x * (k * dt) / tau)
        psi = np.exp(-model.widths * (x - model.centers) ** 2)
        denom = psi.sum()
        force = (model.weights @ psi) * x / denom if denom > 1e-10 else np.zeros_like(y0)
        ydd = (model.alpha_z * (model.beta_z * (goal - y) - tau * yd) + force * amp) / tau**2
        y = y + yd * dt
        yd = yd + ydd * dt
        times.append((k + 1) * dt)
        out.append(y.copy())
    return Trajectory(np.asarray(times), np.asarray(out))


def modulate_via(
    model: DmpModel,
    via: Sequence[float] | np.ndarray,
    t_ratio: float,
    new_start: Sequence[float] | np.ndarray | None = None,
    new_goal: Sequence[float] | np.ndarray | None = None,
    duration: float | None = None,
    dt: float = 0.002,
) -> Trajectory:
    """Route the motion through ``via`` at fraction ``t_ratio`` of the time.

    The motion splits into two chained rollouts (goal of the first and
    start of the second are the via point), so the result passes through
    the via point exactly and is positionally continuous.
    """
    if not 0.0 < t_ratio < 1.0:
        raise DmpError("t_ratio must lie strictly between 0 and 1")
    y0 = np.asarray(new_start if new_start is not None else model.y0, dtype=float)
    goal = np.asarray(new_goal if new_goal is not None else model.goal, dtype=float)
    via_arr = np.asarray(via, dtype=float)
    tau = float(duration if duration is not None else model.duration)

    first = rollout(model, y0, via_arr, tau * t_ratio, dt)
    second = rollout(model, via_arr, goal, tau * (1.0 - t_ratio), dt)
    # Pin the junction sample to the via point exactly.
    pos1 = first.positions.copy()
    pos1[-1] = via_arr
    times = np.concatenate([first.times, second.times[1:] + first.times[-1]])
    positions = np.concatenate([pos1, second.positions[1:]], axis=0)
    return Trajectory(times, positions)


def min_jerk(start: Sequence[float], goal: Sequence[float], duration: float = 1.0, n: int = 240) -> Trajectory:
    """Closed-form minimum-jerk trajectory, used as a synthetic demo."""
    s = np.asarray(start, dtype=float)
    g = np.asarray(goal, dtype=float)
    t = np.linspace(0.0, duration, n)
    u = t / duration
    shape = 10 * u**3 - 15 * u**4 + 6 * u**5
    pos = s[None, :] + (g - s)[None, :] * shape[:, None]
    return Trajectory(t, pos)


def save_model(model: DmpModel, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=1, sort_keys=True)


def load_model(path: str) -> DmpModel:
    with open(path) as fh:
        return DmpModel.from_json(json.load(fh))
