"""Low-level joint velocity controllers, gripper release delay, command noise.

Two controllers turn a velocity reference for the four actuated joints into
torques: an inverse-dynamics (computed-torque) tracker used for training and
a PID tracker with gravity feedforward used to evaluate trained policies
under different low-level dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import MachineState, gravity_forces, hybrid_dynamics, mass_matrix
from .kinematics import hanging_configuration
from .model import ACTUATED, MachineModel

_A = list(ACTUATED)


@dataclass
class VelocityCommand:
    dq_ref: np.ndarray  # (..., 4): rad/s, m/s for the telescope
    timestamp: float = 0.0


def clamp_command(model: MachineModel, dq_ref) -> np.ndarray:
    lim = model.velocity_limits[_A]
    return np.clip(dq_ref, -lim, lim)


@lru_cache(maxsize=8)
def default_torque_limits(model: MachineModel, factor: float = 3.0) -> np.ndarray:
    """Per-joint torque bounds: ``factor`` times the largest static gravity load.

    The cabin turn carries no gravity load, so its bound is ``factor`` times
    the largest yaw inertia times 1 rad/s^2.
    """
    lo, hi = model.lower[_A], model.upper[_A]
    grid = np.stack(
        np.meshgrid(
            [0.0],
            np.linspace(lo[1], hi[1], 9),
            np.linspace(lo[2], hi[2], 9),
            np.linspace(lo[3], hi[3], 3),
            indexing="ij",
        ),
        axis=-1,
    ).reshape(-1, 4)
    q = hanging_configuration(grid)
    g = np.abs(gravity_forces(model, q))[:, _A].max(axis=0)
    g[0] = mass_matrix(model, q)[:, 0, 0].max()
    return factor * g


def id_velocity_control(
    model: MachineModel,
    state: MachineState,
    cmd: VelocityCommand,
    k_v: float = 15.0,
    tau_passive=None,
    torque_limit=None,
    m: np.ndarray | None = None,
    b: np.ndarray | None = None,
) -> np.ndarray:
    """Computed-torque velocity tracking for the actuated joints.

    Desired accelerations ``k_v (dq_ref - dq_a)`` are turned into torques by
    the hybrid dynamics, with ``tau_passive`` (default zero) acting on the
    free gripper joints. Torques are clipped to ``torque_limit`` if given.
    """
    dq = np.asarray(state.dq, dtype=float)
    ddq_des = k_v * (np.asarray(cmd.dq_ref, dtype=float) - dq[..., _A])
    if tau_passive is None:
        tau_passive = np.zeros(dq.shape[:-1] + (2,))
    tau, _ = hybrid_dynamics(model, state.q, dq, ddq_des, tau_passive, m=m, b=b)
    if torque_limit is not None:
        tau = np.clip(tau, -torque_limit, torque_limit)
    return tau


@dataclass
class ControllerState:
    """PID integrator state for a batch of environments."""

    kp: np.ndarray
    ki: np.ndarray
    kd: np.ndarray
    integral_clamp: np.ndarray
    feedforward: bool = True
    integral: np.ndarray = field(default=None)
    prev_error: np.ndarray = field(default=None)

    def __post_init__(self):
        self.kp, self.ki, self.kd, self.integral_clamp = (
            np.asarray(x, dtype=float) for x in (self.kp, self.ki, self.kd, self.integral_clamp)
        )

    def reset(self, batch_shape=(), mask=None):
        """Zero the integrators (only where ``mask`` is set, if given)."""
        if mask is None or self.integral is None:
            self.integral = np.zeros(tuple(batch_shape) + (4,))
            self.prev_error = None
            return
        self.integral[mask] = 0.0
        if self.prev_error is not None:
            self.prev_error[mask] = np.nan


def pid_velocity_control(
    model: MachineModel,
    ctrl: ControllerState,
    state: MachineState,
    cmd: VelocityCommand,
    dt: float,
    torque_limit=None,
    gravity: np.ndarray | None = None,
) -> np.ndarray:
    """PID on the velocity error plus gravity feedforward, with anti-windup.

    The derivative term uses the backward difference of the error; on the
    first call after a reset it is zero.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    dq = np.asarray(state.dq, dtype=float)
    err = np.asarray(cmd.dq_ref, dtype=float) - dq[..., _A]
    if ctrl.integral is None:
        ctrl.reset(err.shape[:-1])
    ctrl.integral = np.clip(ctrl.integral + err * dt, -ctrl.integral_clamp, ctrl.integral_clamp)
    if ctrl.prev_error is None:
        derr = np.zeros_like(err)
    else:
        derr = np.where(np.isnan(ctrl.prev_error), 0.0, (err - ctrl.prev_error) / dt)
    ctrl.prev_error = err.copy()
    tau = ctrl.kp * err + ctrl.ki * ctrl.integral + ctrl.kd * derr
    if ctrl.feedforward:
        if gravity is None:
            gravity = gravity_forces(model, state.q)
        tau = tau + gravity[..., _A]
    if torque_limit is not None:
        tau = np.clip(tau, -torque_limit, torque_limit)
    return tau


def default_pid(model: MachineModel, settle_time: float = 0.4) -> ControllerState:
    """PID gains scaled by the effective joint inertias of a mid-range pose.

    Each loop acts on a joint whose neighbours are only loosely held by their
    own loops, so the relevant inertia is ``1 / (M^-1)_ii`` rather than the
    diagonal of ``M``. The proportional gain settles a velocity step in about
    ``settle_time``; a slow integral removes residual bias.
    """
    qa = 0.5 * (model.lower[_A] + model.upper[_A])
    qa[0] = 0.0
    m = mass_matrix(model, hanging_configuration(qa))
    inertia = 1.0 / np.diag(np.linalg.inv(m))[_A]
    kp = inertia * 12.0 / settle_time
    return ControllerState(
        kp=kp,
        ki=kp * 0.5,
        kd=kp * 0.001,
        integral_clamp=np.full(4, 0.2),
    )


class DelayLine:
    """Gripper release delay for a batch of environments, in whole sim steps.

    ``push`` registers a release trigger at simulation step ``now``; the
    release becomes effective ``round(delay / dt)`` steps later. A second
    trigger in the same episode is ignored.
    """

    IDLE, PENDING, FIRED = 0, 1, 2

    def __init__(self, n: int, dt: float = 0.01, mean: float = 0.258, std: float = 0.015, randomize: bool = False):
        self.dt = dt
        self.mean = mean
        self.std = std
        self.randomize = randomize
        self.status = np.zeros(n, dtype=np.int8)
        self.effective_step = np.full(n, -1, dtype=np.int64)

    def sample_delay(self, rng: np.random.Generator) -> float:
        if not self.randomize or self.std == 0:
            return self.mean
        return self.mean + self.std * truncated_normal(rng, 3.0)

    def push(self, mask, now, rngs=None) -> np.ndarray:
        """Trigger a release where ``mask`` is set; returns the accepted triggers.

        ``now`` is the current step, shared or one per environment.
        """
        accept = np.asarray(mask, dtype=bool) & (self.status == self.IDLE)
        now = np.broadcast_to(np.asarray(now, dtype=np.int64), self.status.shape)
        for k in np.flatnonzero(accept):
            delay = self.sample_delay(rngs[k]) if self.randomize else self.mean
            self.effective_step[k] = now[k] + int(round(delay / self.dt))
            self.status[k] = self.PENDING
        return accept

    def poll(self, now) -> np.ndarray:
        """Releases that become effective at step ``now`` (each fires once)."""
        fire = (self.status == self.PENDING) & (now >= self.effective_step)
        self.status[fire] = self.FIRED
        return fire

    @property
    def released(self) -> np.ndarray:
        return self.status == self.FIRED

    def reset(self, mask=None):
        if mask is None:
            mask = slice(None)
        self.status[mask] = self.IDLE
        self.effective_step[mask] = -1


def truncated_normal(rng: np.random.Generator, bound: float = 3.0, size=None):
    """Standard normal samples rejected outside ``[-bound, bound]``."""
    if size is None:
        while True:
            x = rng.standard_normal()
            if abs(x) <= bound:
                return x
    out = rng.standard_normal(size)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


@dataclass(frozen=True)
class CommandNoise:
    scale_range: tuple[float, float] = (1.0, 1.0)
    additive_std: float = 0.0

    def __post_init__(self):
        lo, hi = self.scale_range
        if not lo <= 1.0 <= hi:
            raise ValueError("scale_range must contain 1")
        if self.additive_std < 0:
            raise ValueError("additive_std must be non-negative")

    @property
    def degenerate(self) -> bool:
        return self.scale_range == (1.0, 1.0) and self.additive_std == 0.0


def randomize_velocity_command(
    model: MachineModel, cmd: VelocityCommand, rng: np.random.Generator, cfg: CommandNoise
) -> VelocityCommand:
    """Per-joint multiplicative scale and additive Gaussian noise, then clamp."""
    if cfg.degenerate:
        return cmd
    ref = np.asarray(cmd.dq_ref, dtype=float)
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1], size=ref.shape)
    noise = rng.normal(0.0, cfg.additive_std, size=ref.shape) if cfg.additive_std > 0 else 0.0
    return VelocityCommand(clamp_command(model, ref * scale + noise), cmd.timestamp)
