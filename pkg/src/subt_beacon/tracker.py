"""Scenario-dependent reference generation and the NMPC follower.

The NMPC is single shooting over a unicycle model,

    p[k+1] = p[k] + dt * v[k] * (cos th[k], sin th[k]),   th[k+1] = th[k] + dt * psi[k],

with cost on the predicted states k = 1..N (the initial state is fixed), an
input penalty on k = 0..N-1, a terminal position weight and a soft standoff
penalty around the tracked target. It is minimised by projected gradient
descent with adjoint (reverse-accumulated) gradients and Armijo backtracking.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .core import CameraIntrinsics, Extrinsics, Pose2D, lidar_to_world, wrap_angle
from .fusion import DetectionFrame, TrackedTarget, select_target


class ScenarioMode(str, enum.Enum):
    BOTH = "BothDetect"
    EVENT_ONLY = "EventOnly"
    LIDAR_ONLY = "LidarOnly"
    NONE = "NoneDetect"

    def __str__(self):
        return self.value


def classify_scenario(frame: DetectionFrame) -> ScenarioMode:
    if frame.pairs:
        return ScenarioMode.BOTH
    if frame.unpaired_event_centroids:
        return ScenarioMode.EVENT_ONLY
    if frame.unpaired_lidar_centroids:
        return ScenarioMode.LIDAR_ONLY
    return ScenarioMode.NONE


@dataclass
class NmpcConfig:
    horizon: int = 20
    dt: float = 0.1
    v_min: float = -0.3
    v_max: float = 1.0
    psi_min: float = -1.0
    psi_max: float = 1.0
    q_p: float = 4.0
    q_yaw: float = 1.0
    r_v: float = 0.5
    r_psi: float = 0.5
    q_pT: float = 8.0
    w_c: float = 50.0
    d_safe: float = 1.5
    r_nom: float = 3.0
    max_iters: int = 50
    grad_tol: float = 1e-6

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon must be >= 1 and dt > 0")
        if not (self.v_min < self.v_max and self.psi_min < self.psi_max):
            raise ValueError("input bounds must satisfy min < max")
        if min(self.q_p, self.q_yaw, self.r_v, self.r_psi, self.q_pT, self.w_c) < 0:
            raise ValueError("weights must be non-negative")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.v_min, self.psi_min])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.v_max, self.psi_max])


@dataclass(frozen=True)
class TrackingReference:
    x_ref: float
    y_ref: float
    yaw_ref: float
    mode: ScenarioMode
    target_world: tuple[float, float] | None = None


def make_reference(mode: ScenarioMode, frame: DetectionFrame, robot: Pose2D, cfg: NmpcConfig,
                   intr: CameraIntrinsics, ext: Extrinsics,
                   target: TrackedTarget | None = None) -> TrackingReference:
    """Reference pose for one tick.

    ``target`` is the tracked detection; when omitted the detection nearest
    straight ahead is used.
    """
    if target is None and mode is not ScenarioMode.NONE:
        target = select_target(frame, intr, 0.0)
    if mode is ScenarioMode.NONE or target is None:
        return TrackingReference(robot.x, robot.y, robot.yaw, ScenarioMode.NONE)

    if mode is ScenarioMode.BOTH:
        tx, ty = lidar_to_world(target.point_lidar, robot, ext)
        dx, dy = robot.x - tx, robot.y - ty
        dist = math.hypot(dx, dy)
        if dist > 0:
            ux, uy = dx / dist, dy / dist
        else:
            ux, uy = -math.cos(robot.yaw), -math.sin(robot.yaw)
        rx, ry = tx + cfg.d_safe * ux, ty + cfg.d_safe * uy
        return TrackingReference(rx, ry, math.atan2(-uy, -ux), mode, (tx, ty))

    heading = wrap_angle(robot.yaw + target.bearing)
    if mode is ScenarioMode.EVENT_ONLY:
        reach = cfg.r_nom
        target_world = None
    else:
        target_world = lidar_to_world(target.point_lidar, robot, ext)
        rng = math.hypot(target_world[0] - robot.x, target_world[1] - robot.y)
        reach = min(max(rng - cfg.d_safe, 0.0), cfg.r_nom)
    return TrackingReference(robot.x + reach * math.cos(heading), robot.y + reach * math.sin(heading),
                             heading, mode, target_world)


@dataclass
class NmpcSolution:
    controls: np.ndarray  # (N, 2): v, psi
    states: np.ndarray  # (N + 1, 3): x, y, yaw
    cost: float
    iterations: int = 0
    converged: bool = False
    cost_history: list[float] = field(default_factory=list)


def rollout(state: Pose2D, controls: np.ndarray, dt: float) -> np.ndarray:
    v, psi = controls[:, 0], controls[:, 1]
    n = len(v)
    out = np.empty((n + 1, 3))
    out[0] = state.x, state.y, state.yaw
    th = out[:, 2]
    np.cumsum(psi * dt, out=th[1:])
    th[1:] += state.yaw
    np.cumsum(dt * v * np.cos(th[:-1]), out=out[1:, 0])
    np.cumsum(dt * v * np.sin(th[:-1]), out=out[1:, 1])
    out[1:, 0] += state.x
    out[1:, 1] += state.y
    return out


def _check_inputs(state: Pose2D, ref: TrackingReference):
    vals = [state.x, state.y, state.yaw, ref.x_ref, ref.y_ref, ref.yaw_ref]
    if ref.target_world is not None:
        vals += list(ref.target_world)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite state or reference")


def _cost_and_grad(state: Pose2D, ref: TrackingReference, u: np.ndarray, cfg: NmpcConfig, want_grad: bool = True):
    dt = cfg.dt
    v, psi = u[:, 0], u[:, 1]
    n = len(v)
    th = np.empty(n + 1)
    th[0] = state.yaw
    np.cumsum(psi * dt, out=th[1:])
    th[1:] += state.yaw
    c, s = np.cos(th[:-1]), np.sin(th[:-1])
    dx, dy = dt * v * c, dt * v * s
    ex = np.cumsum(dx) + (state.x - ref.x_ref)  # position errors of states 1..N
    ey = np.cumsum(dy) + (state.y - ref.y_ref)
    eyaw = wrap_angle(th[1:] - ref.yaw_ref)
    cost = (cfg.q_p * (ex @ ex + ey @ ey) + cfg.q_yaw * (eyaw @ eyaw) + cfg.r_v * (v @ v)
            + cfg.r_psi * (psi @ psi) + cfg.q_pT * (ex[-1] ** 2 + ey[-1] ** 2))
    if want_grad:
        gx, gy = 2.0 * cfg.q_p * ex, 2.0 * cfg.q_p * ey
        gx[-1] += 2.0 * cfg.q_pT * ex[-1]
        gy[-1] += 2.0 * cfg.q_pT * ey[-1]
    if ref.target_world is not None and cfg.w_c > 0:
        tx = ex + (ref.x_ref - ref.target_world[0])
        ty = ey + (ref.y_ref - ref.target_world[1])
        dist = np.sqrt(tx * tx + ty * ty)
        viol = cfg.d_safe - dist
        pos = viol > 0
        if pos.any():
            vp = viol[pos]
            cost += cfg.w_c * (vp @ vp)
            if want_grad:
                active = pos & (dist > 0)
                k = 2.0 * cfg.w_c * viol[active] / dist[active]
                gx[active] -= k * tx[active]
                gy[active] -= k * ty[active]
    if not want_grad:
        return float(cost), None
    # G[j] = sum of position gradients of states j+1..N
    Gx = np.cumsum(gx[::-1])[::-1]
    Gy = np.cumsum(gy[::-1])[::-1]
    grad = np.empty((n, 2))
    grad[:, 0] = dt * (c * Gx + s * Gy) + 2.0 * cfg.r_v * v
    # sensitivity of the cost to th[k], k = 1..N
    a = 2.0 * cfg.q_yaw * eyaw
    a[:-1] += dx[1:] * Gy[1:] - dy[1:] * Gx[1:]
    grad[:, 1] = dt * np.cumsum(a[::-1])[::-1] + 2.0 * cfg.r_psi * psi
    return float(cost), grad


def nmpc_cost(state: Pose2D, ref: TrackingReference, controls, cfg: NmpcConfig) -> float:
    return _cost_and_grad(state, ref, np.asarray(controls, dtype=float), cfg, want_grad=False)[0]


def nmpc_gradient(state: Pose2D, ref: TrackingReference, controls, cfg: NmpcConfig) -> np.ndarray:
    """Gradient of the horizon cost with respect to the (N, 2) control sequence."""
    _check_inputs(state, ref)
    return _cost_and_grad(state, ref, np.asarray(controls, dtype=float), cfg)[1]


def shift_warm_start(prev: NmpcSolution) -> np.ndarray:
    u = prev.controls
    return np.vstack([u[1:], u[-1:]])


def nmpc_solve(state: Pose2D, ref: TrackingReference, warm: NmpcSolution | None, cfg: NmpcConfig) -> NmpcSolution:
    _check_inputs(state, ref)
    lo, hi = cfg.lower, cfg.upper
    if warm is not None and warm.controls.shape == (cfg.horizon, 2):
        u = np.clip(shift_warm_start(warm), lo, hi)
    else:
        u = np.zeros((cfg.horizon, 2))
        u = np.clip(u, lo, hi)
    cost, g = _cost_and_grad(state, ref, u, cfg)
    history = [cost]
    step = None
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        pg = u - np.clip(u - g, lo, hi)
        if np.linalg.norm(pg) < cfg.grad_tol:
            converged = True
            it -= 1
            break
        if step is None:
            step = 1.0 / max(1.0, float(np.max(np.abs(g))))
        alpha = step
        accepted = False
        for _ in range(40):
            u_new = np.clip(u - alpha * g, lo, hi)
            cost_new, g_new = _cost_and_grad(state, ref, u_new, cfg)
            if cost_new <= cost + 1e-4 * float(np.sum(g * (u_new - u))):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        s_vec = (u_new - u).ravel()
        y_vec = (g_new - g).ravel()
        sy = float(s_vec @ y_vec)
        # Barzilai-Borwein trial step for the next iteration
        step = float(s_vec @ s_vec) / sy if sy > 1e-12 else alpha * 2.0
        step = min(max(step, 1e-6), 10.0)
        u, cost, g = u_new, cost_new, g_new
        history.append(cost)
    return NmpcSolution(u, rollout(state, u, cfg.dt), cost, it, converged, history)


class NmpcController:
    """Receding-horizon wrapper holding the warm start between solves."""

    def __init__(self, cfg: NmpcConfig):
        self.cfg = cfg
        self.last: NmpcSolution | None = None

    def reset(self):
        self.last = None

    def __call__(self, state: Pose2D, ref: TrackingReference) -> tuple[float, float]:
        self.last = nmpc_solve(state, ref, self.last, self.cfg)
        v, psi = self.last.controls[0]
        return float(v), float(psi)
