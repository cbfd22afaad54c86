"""One target, one tunnel, every stage of the pipeline printed in turn.

A person wearing a reflective vest stands 4 m ahead. The LiDAR sweeps it ten
times a second; each sweep makes the vest stripes flash in the event camera.
We run the stages by hand: frequency map and pixel clusters, bright LiDAR
points and k-means, bearing pairing, then one NMPC solve toward the standoff.
"""
import numpy as np

from subt_beacon.core import Pose2D
from subt_beacon.events import EventDetector, EventDetectorConfig, cluster_centroids, sort_events
from subt_beacon.fusion import pair_clusters
from subt_beacon.harness.config import data_path, load_world
from subt_beacon.lidar import kmeans_cluster, select_m
from subt_beacon.simulator.sensors import SensorSim, background_events, simulate_scan, synthesize_events
from subt_beacon.simulator.world import TargetModel
from subt_beacon.tracker import NmpcConfig, classify_scenario, make_reference, nmpc_solve

world = load_world(data_path("worlds", "straight_tunnel.toml"))
target = TargetModel([(4.0, 0.5)])
sim = SensorSim()
intr = sim.camera.intrinsics()
robot = Pose2D(0.0, 0.0, 0.0)
rng = np.random.default_rng(0)
period = sim.lidar.period_us

# Three revolutions: the event detector needs two flashes per pixel to measure a frequency.
detector = EventDetector(intr.width, intr.height, EventDetectorConfig())
for k in range(3):
    t0, t1 = k * period, (k + 1) * period
    scan, truth = simulate_scan(world, target, target.position(0.0), robot, sim, t0, rng)
    refl = truth.reflective
    ev = synthesize_events(truth.points[refl], truth.fire_t[refl], intr, sim.extrinsics, sim.noise.pulse_width_us,
                           sim.lidar.half_width(), z_span=truth.z_span[refl])
    ev = sort_events(np.concatenate([ev, background_events(intr, t0, t1, sim.noise.background_rate_hz, rng)]))
    detector.ingest(ev[ev["t"] < t1])
    print(f"revolution {k}: {len(scan)} LiDAR returns, {len(ev)} events")

clusters = detector.detect(t1)
centroids = cluster_centroids(clusters)
print(f"\nevent clusters at 8-12 Hz: {len(clusters)}")
for c in clusters:
    print(f"  {c.size:4d} px around ({c.centroid[0]:.1f}, {c.centroid[1]:.1f}), {c.mean_frequency:.2f} Hz")

bright = scan.points[scan.points[:, 3] >= 1000.0]
lidar = kmeans_cluster(bright, select_m(len(centroids)), np.random.default_rng(1))
print(f"\nbright LiDAR points: {len(bright)} of {len(scan)}, k-means clusters: {len(lidar)}")
for c in lidar:
    print(f"  {c.size:4d} pts, centroid ({c.centroid[0]:.2f}, {c.centroid[1]:.2f}, {c.centroid[2]:.2f})")

frame = pair_clusters(centroids, intr, [c.centroid for c in lidar], 0.15, t1)
mode = classify_scenario(frame)
print(f"\nmode {mode}, {len(frame.pairs)} pair(s)")
for p in frame.pairs:
    print(f"  camera bearing {p.theta_n:+.3f} rad, LiDAR bearing {p.theta_m:+.3f} rad, range {p.range_xy:.2f} m")

cfg = NmpcConfig()
ref = make_reference(mode, frame, robot, cfg, intr, sim.extrinsics)
sol = nmpc_solve(robot, ref, None, cfg)
print(f"\nreference ({ref.x_ref:.2f}, {ref.y_ref:.2f}), first control v={sol.controls[0, 0]:.2f} m/s, "
      f"psi={sol.controls[0, 1]:.2f} rad/s after {sol.iterations} iterations")
