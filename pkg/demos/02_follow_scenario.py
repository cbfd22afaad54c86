"""Closed-loop run of a bundled scenario, with a coarse timeline of what the robot saw.

Usage: python demos/02_follow_scenario.py [scenario] [seed]
(default: straight_tunnel, seed 1). Try camera_fov_exit to watch the mode drop
to LidarOnly while the target is outside the camera view and recover.
"""
import sys
import time

from subt_beacon.harness.config import parse_scenario, resolve_scenario
from subt_beacon.simulator.episode import run_episode

name = sys.argv[1] if len(sys.argv) > 1 else "straight_tunnel"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1
spec = parse_scenario(resolve_scenario(name))

t = time.perf_counter()
res = run_episode(spec.episode_config(), seed)
print(f"{name}, seed {seed}: {len(res.ticks)} ticks in {time.perf_counter() - t:.1f} s wall\n")

print("   t (s)  mode         range (m)   v (m/s)  psi (rad/s)")
for r in res.ticks[::5]:
    rng = "" if r.dist_to_target is None else f"{r.dist_to_target:9.2f}"
    print(f"{r.t_us * 1e-6:8.1f}  {r.mode.value:<11}  {rng:>9}  {r.control[0]:8.2f}  {r.control[1]:11.2f}")

m = res.metrics
print(f"\ndetection rate {m.detect_rate:.3f}, longest loss {m.max_loss_s:.1f} s, closest {m.min_dist_m:.2f} m, "
      f"median localization error {m.median_loc_err_m:.3f} m, collided {m.collided}")
