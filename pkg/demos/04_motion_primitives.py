"""Movement primitives: learn one trajectory, generalize it, detour it.

A single minimum-jerk demonstration trains a per-axis attractor whose
forcing term reproduces the shape; rollouts then retarget the motion to
new goals, stretch it in time, and thread it through a via point.
"""

import numpy as np

from tampkit.dmp import min_jerk, modulate_via, rollout, train_dmp

demo = min_jerk([0.0, -0.3, 0.25, 0.0], [0.25, 0.15, 0.05, 0.0], duration=1.0)
model = train_dmp(demo)

r = rollout(model)
ref = np.stack([np.interp(r.times, demo.times, demo.positions[:, d]) for d in range(4)], axis=1)
rmse = np.sqrt(np.mean(np.sum((r.positions - ref) ** 2, axis=1)))
print(f"reproduction RMSE: {rmse * 1000:.2f} mm")

goal = np.array([0.4, -0.1, 0.05, 0.0])
shifted = rollout(model, new_goal=goal)
print(f"shifted goal endpoint error: {np.abs(shifted.positions[-1] - goal).max() * 1000:.2f} mm")

slow = rollout(model, duration=2.0)
print(f"stretched duration: {slow.duration:.1f}s over {len(slow.times)} samples")

via = np.array([0.1, 0.0, 0.25, 0.0])  # lift high mid-motion
detour = modulate_via(model, via, t_ratio=0.5, new_goal=goal)
split = int(np.argmin(np.abs(detour.times - detour.times[-1] * 0.5)))
print(f"via point error at split: {np.abs(detour.positions[split] - via).max():.1e}")
print(f"peak height without via {r.positions[:, 2].max():.3f} m, "
      f"with via {detour.positions[:, 2].max():.3f} m")
