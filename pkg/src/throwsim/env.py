"""Vectorized throwing environment.

One :class:`ThrowEnv` advances ``n`` independent episodes in lockstep. Each
control step applies the policy action once and then runs ``decimation``
simulator substeps (controller -> forward dynamics -> integration -> passive
friction -> release delay -> payload flight).

The episode-level pieces (target sampling, reset, observation layout, action
mapping, payload spawning and flight, reward, termination) are also exposed
as functions so they can be exercised on their own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .actuation import (
    CommandNoise,
    ControllerState,
    DelayLine,
    VelocityCommand,
    default_pid,
    default_torque_limits,
    pid_velocity_control,
    randomize_velocity_command,
)
from .config import EnvConfig, RewardWeights
from .dynamics import (
    FrictionParams,
    MachineState,
    apply_passive_friction,
    dynamics_terms,
    hybrid_dynamics,
    integrate_step,
)
from . import _kernels
from .kinematics import check_collision, forward_kinematics, frames, gripper_jacobian
from .model import ACTUATED, MachineModel

RUNNING, COLLIDED, LIMITS, LANDED, TIMEOUT = range(5)
OUTCOMES = ("running", "collided", "limits", "landed", "timeout")

OBS_DIM = {"3d": 65, "2d": 56}
ACT_DIM = {"3d": 5, "2d": 4}
HISTORY = 4

_A = list(ACTUATED)


def obs_dim(variant: str) -> int:
    return OBS_DIM[variant]


def act_dim(variant: str) -> int:
    return ACT_DIM[variant]


def target_radius_range(model: MachineModel, cfg: EnvConfig) -> tuple[float, float]:
    r_max = model.static_reach
    return cfg.target_min_factor * r_max, cfg.target_max_factor * r_max


def sample_target(rng: np.random.Generator, model: MachineModel, cfg: EnvConfig) -> np.ndarray:
    """Ground-level target, radius uniform in ``[r_min, r_hi]``.

    The heading is uniform for the 3D variant and fixed to the downrange
    (+x) axis for the 2D variant.
    """
    lo, hi = target_radius_range(model, cfg)
    r = rng.uniform(lo, hi)
    heading = rng.uniform(-np.pi, np.pi) if cfg.variant == "3d" else 0.0
    return np.array([r * np.cos(heading), r * np.sin(heading), 0.0])


def sample_configuration(rng: np.random.Generator, model: MachineModel, cfg: EnvConfig) -> np.ndarray:
    """Random actuated joints within limits, gripper hanging (not collision checked)."""
    q = np.zeros(6)
    q[:4] = rng.uniform(model.lower[:4], model.upper[:4])
    if cfg.variant == "2d":
        q[0] = 0.0
    q[4] = -(q[1] + q[2])  # gripper hanging, see hanging_passive
    return q


@dataclass
class EpisodeProgress:
    """Per-episode bookkeeping of a batch of environments."""

    best_err_2d: np.ndarray
    best_err_3d: np.ndarray
    opened: np.ndarray
    triggered: np.ndarray
    step: np.ndarray
    prev_u: np.ndarray  # (n, 5) last applied command
    q_hist: np.ndarray  # (n, 4, 6), index 0 is the latest
    dq_hist: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "EpisodeProgress":
        return cls(
            best_err_2d=np.zeros(n),
            best_err_3d=np.zeros(n),
            opened=np.zeros(n, dtype=bool),
            triggered=np.zeros(n, dtype=bool),
            step=np.zeros(n, dtype=np.int64),
            prev_u=np.zeros((n, 5)),
            q_hist=np.zeros((n, HISTORY, 6)),
            dq_hist=np.zeros((n, HISTORY, 6)),
        )


@dataclass
class BallState:
    pos: np.ndarray  # (n, 3)
    vel: np.ndarray
    released: np.ndarray
    impacted: np.ndarray
    impact: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "BallState":
        return cls(
            pos=np.full((n, 3), np.nan),
            vel=np.full((n, 3), np.nan),
            released=np.zeros(n, dtype=bool),
            impacted=np.zeros(n, dtype=bool),
            impact=np.full((n, 3), np.nan),
        )


def reset(
    rng: np.random.Generator,
    model: MachineModel,
    cfg: EnvConfig,
    target: np.ndarray | None = None,
) -> tuple[MachineState, np.ndarray, EpisodeProgress]:
    """Start one episode: collision-free random pose at rest, gripper hanging."""
    q = None
    for _ in range(cfg.reset_max_attempts):
        cand = sample_configuration(rng, model, cfg)
        flags = check_collision(model, cand)
        if not (flags.self_collision or flags.ground_collision):
            q = cand
            break
    if q is None:
        raise RuntimeError(f"no collision-free configuration after {cfg.reset_max_attempts} attempts")
    if target is None:
        target = sample_target(rng, model, cfg)
    state = MachineState(q, np.zeros(6))
    progress = EpisodeProgress.empty(1)
    progress.q_hist[0] = q
    p, _ = forward_kinematics(model, q)
    progress.best_err_2d[0] = np.linalg.norm(p[:2] - target[:2])
    progress.best_err_3d[0] = np.linalg.norm(p - target)
    return state, np.asarray(target, dtype=float), progress


def release_command(raw) -> np.ndarray:
    """Map the raw release output to ``[0, 1]``."""
    return 0.5 * (np.tanh(raw) + 1.0)


def apply_action(
    actions: np.ndarray,
    model: MachineModel,
    variant: str,
    triggered: np.ndarray,
    threshold: float = 0.9,
    assist: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map policy outputs to velocity references and release triggers.

    Velocity channels are clipped to [-1, 1] and scaled to the joint velocity
    limits; the 2D variant has no cabin command. ``assist`` marks
    environments whose release command is overwritten by a constant release
    this step. Returns ``(dq_ref (n, 4), u (n, 5), trigger (n,))``; triggers
    are suppressed where ``triggered`` is already set.
    """
    a = np.atleast_2d(np.asarray(actions, dtype=float))
    n = a.shape[0]
    if a.shape[1] != ACT_DIM[variant]:
        raise ValueError(f"{variant} actions need {ACT_DIM[variant]} entries, got {a.shape[1]}")
    u = np.zeros((n, 5))
    vel = np.clip(a[:, :-1], -1.0, 1.0)
    if variant == "2d":
        u[:, 1:4] = vel
    else:
        u[:, 0:4] = vel
    u[:, 4] = release_command(a[:, -1])
    if assist is not None:
        u[:, 4] = np.where(assist, 1.0, u[:, 4])
    dq_ref = u[:, :4] * model.velocity_limits[_A]
    trigger = (u[:, 4] > threshold) & ~np.asarray(triggered, dtype=bool)
    return dq_ref, u, trigger


def spawn_payload(model: MachineModel, q, dq) -> tuple[np.ndarray, np.ndarray]:
    """Ball position and velocity equal to the gripper center's."""
    q = np.atleast_2d(q)
    dq = np.atleast_2d(dq)
    fr = frames(model, q)
    p = fr.pos[:, -1] + fr.rot[:, -1] @ model.gripper_center
    jac = gripper_jacobian(model, q, fr)
    v = np.einsum("nij,nj->ni", jac, dq)
    return p, v


def step_payload(ball: BallState, dt: float, gravity: float = 9.81, mask=None) -> np.ndarray:
    """Drag-free flight over ``dt`` with exact ground impact, in place.

    Returns the mask of balls that hit the ground during this step.
    """
    fly = ball.released & ~ball.impacted
    if mask is not None:
        fly &= mask
    if not fly.any():
        return np.zeros_like(fly)
    p = ball.pos[fly]
    v = ball.vel[fly]
    z_end = p[:, 2] + v[:, 2] * dt - 0.5 * gravity * dt * dt
    hit = z_end <= 1e-12  # a landing exactly at the step boundary belongs to this step
    # first non-negative root of z0 + vz t - g t^2 / 2 = 0
    disc = v[:, 2] ** 2 + 2.0 * gravity * np.maximum(p[:, 2], 0.0)
    t_hit = np.where(hit, (v[:, 2] + np.sqrt(disc)) / gravity, dt)
    t_hit = np.clip(t_hit, 0.0, dt)
    tt = t_hit[:, None]
    new_p = p + v * tt
    new_p[:, 2] = p[:, 2] + v[:, 2] * t_hit - 0.5 * gravity * t_hit**2
    new_v = v.copy()
    new_v[:, 2] -= gravity * t_hit
    new_p[hit, 2] = 0.0
    new_v[hit] = 0.0
    ball.pos[fly] = new_p
    ball.vel[fly] = new_v
    idx = np.flatnonzero(fly)
    ball.impacted[idx[hit]] = True
    ball.impact[idx[hit]] = new_p[hit]
    out = np.zeros_like(fly)
    out[idx[hit]] = True
    return out


def ballistic_impact(p0, v0, gravity: float = 9.81) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ground impact point and flight time of a point mass."""
    p0 = np.asarray(p0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    t = (v0[..., 2] + np.sqrt(v0[..., 2] ** 2 + 2.0 * gravity * p0[..., 2])) / gravity
    p = p0 + v0 * t[..., None]
    p[..., 2] = 0.0
    return p, t


def tracking_errors(point: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = point - target
    return np.linalg.norm(d[..., :2], axis=-1), np.linalg.norm(d, axis=-1)


@dataclass
class RewardTerms:
    delta_err: np.ndarray
    err3d: np.ndarray
    act_diff: np.ndarray
    act: np.ndarray
    termination: np.ndarray
    total: np.ndarray


def compute_reward(
    progress: EpisodeProgress,
    point: np.ndarray,
    target: np.ndarray,
    u: np.ndarray,
    weights: RewardWeights,
    variant: str,
    outcome: np.ndarray | None = None,
) -> RewardTerms:
    """Per-step reward; updates the best-so-far errors in ``progress``.

    ``point`` is the ball once released and the gripper center before.
    Termination rewards are added where ``outcome`` is collided/limits
    (penalty) or landed (``w_term exp(-b2 err3d^2)``).
    """
    err2, err3 = tracking_errors(point, target)
    r_delta = np.maximum(0.0, progress.best_err_2d - err2) + np.maximum(0.0, progress.best_err_3d - err3)
    progress.best_err_2d = np.minimum(progress.best_err_2d, err2)
    progress.best_err_3d = np.minimum(progress.best_err_3d, err3)
    r_err = np.exp(-weights.b1 * err3**2)
    ch = slice(1, 5) if variant == "2d" else slice(0, 5)
    r_diff = np.sum((u[:, ch] - progress.prev_u[:, ch]) ** 2, axis=-1)
    r_act = np.where(progress.opened, np.sum(u[:, ch] ** 2, axis=-1), 0.0)
    term = np.zeros_like(err3)
    if outcome is not None:
        term = np.where((outcome == COLLIDED) | (outcome == LIMITS), weights.p_term, 0.0)
        term = np.where(outcome == LANDED, weights.w_term * np.exp(-weights.b2 * err3**2), term)
    total = weights.c1 * r_delta + weights.c2 * r_err - weights.c3 * r_diff - weights.c4 * r_act + term
    return RewardTerms(r_delta, r_err, r_diff, r_act, term, total)


def check_termination(collided, limits, landed, step, max_steps: int) -> np.ndarray:
    """Outcome codes with priority collided > limits > landed > timeout."""
    out = np.where(np.asarray(step) >= max_steps, TIMEOUT, RUNNING)
    out = np.where(landed, LANDED, out)
    out = np.where(limits, LIMITS, out)
    out = np.where(collided, COLLIDED, out)
    return out.astype(np.int64)


def build_observation(
    progress: EpisodeProgress,
    r_ee: np.ndarray,
    v_ee: np.ndarray,
    target: np.ndarray,
    variant: str,
    noise: dict | None = None,
    rng_draws: np.ndarray | None = None,
) -> np.ndarray:
    """Observation vector in the fixed layout (65 entries 3D, 56 entries 2D).

    Order: joint positions (history k..k-3), joint velocities (same),
    previous command, gripper position, gripper velocity, 2D error, 3D
    error, target, gripper-opened flag. The 2D variant drops every cabin-turn
    entry. Optional Gaussian noise per group uses standard-normal draws
    ``rng_draws`` supplied by the caller, one row per environment.
    """
    n = r_ee.shape[0]
    js = slice(1, 6) if variant == "2d" else slice(0, 6)
    us = slice(1, 5) if variant == "2d" else slice(0, 5)
    q = progress.q_hist[:, :, js]
    dq = progress.dq_hist[:, :, js]
    r = r_ee
    v = v_ee
    if noise and rng_draws is not None:
        k = q.shape[-1] * HISTORY
        z = rng_draws
        q = q + noise.get("joint_pos", 0.0) * z[:, :k].reshape(q.shape)
        dq = dq + noise.get("joint_vel", 0.0) * z[:, k : 2 * k].reshape(dq.shape)
        r = r + noise.get("gripper_pos", 0.0) * z[:, 2 * k : 2 * k + 3]
        v = v + noise.get("gripper_vel", 0.0) * z[:, 2 * k + 3 : 2 * k + 6]
    err2, err3 = tracking_errors(r, target)
    obs = np.concatenate(
        [
            q.reshape(n, -1),
            dq.reshape(n, -1),
            progress.prev_u[:, us],
            r,
            v,
            err2[:, None],
            err3[:, None],
            target,
            progress.opened[:, None].astype(float),
        ],
        axis=1,
    )
    assert obs.shape[1] == OBS_DIM[variant]
    return obs


class ThrowEnv:
    """A batch of ``n`` throwing episodes stepped together.

    Each environment owns a random generator spawned from ``seed`` (or given
    explicitly through ``seeds``), so results do not depend on how episodes
    are batched. With ``auto_reset`` off, finished environments are frozen
    until :meth:`reset` is called; ``targets`` pins the target of every
    environment and ``initial_q`` replaces the random start pose (both used
    by evaluation sweeps).
    """

    def __init__(
        self,
        model: MachineModel,
        cfg: EnvConfig,
        n_envs: int = 1,
        seed: int = 0,
        seeds=None,
        targets: np.ndarray | None = None,
        auto_reset: bool = True,
        trace: Callable | None = None,
        initial_q: np.ndarray | None = None,
    ):
        cfg.validate()
        self.model = model
        self.held_model = model.with_gripper_mass(cfg.held_mass)
        self.cfg = cfg
        self.n = n_envs
        self.variant = cfg.variant
        self.auto_reset = auto_reset
        self.trace = trace
        if seeds is None:
            seeds = np.random.SeedSequence(seed).spawn(n_envs)
        if len(seeds) != n_envs:
            raise ValueError("need one seed per environment")
        self.rngs = [np.random.default_rng(s) for s in seeds]
        self.initial_q = None if initial_q is None else np.asarray(initial_q, dtype=float).reshape(6)
        self.fixed_targets = None if targets is None else np.asarray(targets, dtype=float).reshape(n_envs, 3)
        self.friction = FrictionParams(cfg.friction_upsilon, cfg.friction_eta)
        self.command_noise = CommandNoise(tuple(cfg.command_scale_range), cfg.command_noise_std)
        self.noise = {
            "joint_pos": cfg.obs_noise_joint_pos,
            "joint_vel": cfg.obs_noise_joint_vel,
            "gripper_pos": cfg.obs_noise_gripper_pos,
            "gripper_vel": cfg.obs_noise_gripper_vel,
        }
        self.use_obs_noise = any(v > 0 for v in self.noise.values())
        self.torque_limit = default_torque_limits(model, cfg.torque_limit_factor)
        self.pid = default_pid(model, cfg.pid_settle_time) if cfg.controller == "pid" else None
        self.delay = DelayLine(n_envs, cfg.dt, cfg.delay_mean, cfg.delay_std, cfg.delay_randomize)

        self.q = np.zeros((n_envs, 6))
        self.dq = np.zeros((n_envs, 6))
        self.target = np.zeros((n_envs, 3))
        self.sim_step = np.zeros(n_envs, dtype=np.int64)
        self.progress = EpisodeProgress.empty(n_envs)
        self.ball = BallState.empty(n_envs)
        self.outcome = np.zeros(n_envs, dtype=np.int64)
        self.active = np.ones(n_envs, dtype=bool)
        self.episode_return = np.zeros(n_envs)
        self.release_step = np.full(n_envs, -1, dtype=np.int64)
        self.dq_ref = np.zeros((n_envs, 4))
        self.u = np.zeros((n_envs, 5))
        self.time = 0.0
        self.last_terms: RewardTerms | None = None

    # -- episode management -------------------------------------------------

    @property
    def obs_dim(self) -> int:
        return OBS_DIM[self.variant]

    @property
    def act_dim(self) -> int:
        return ACT_DIM[self.variant]

    def _reset_envs(self, idx: np.ndarray) -> None:
        """Rejection-sample collision-free poses for ``idx``, batched across envs."""
        if len(idx) == 0:
            return
        if self.initial_q is not None:
            cand = np.tile(self.initial_q, (len(idx), 1))
        else:
            cand = self._sample_poses(idx)
        self._start_episodes(idx, cand)

    def _sample_poses(self, idx: np.ndarray) -> np.ndarray:
        cand = np.stack([sample_configuration(self.rngs[k], self.model, self.cfg) for k in idx])
        pending = np.arange(len(idx))
        for _ in range(self.cfg.reset_max_attempts):
            flags = check_collision(self.model, cand[pending])
            bad = flags.self_collision | flags.ground_collision
            pending = pending[bad]
            if len(pending) == 0:
                break
            for j in pending:
                cand[j] = sample_configuration(self.rngs[idx[j]], self.model, self.cfg)
        else:
            raise RuntimeError(
                f"no collision-free configuration after {self.cfg.reset_max_attempts} attempts"
            )
        return cand

    def _start_episodes(self, idx: np.ndarray, cand: np.ndarray) -> None:
        for k in idx:
            if self.fixed_targets is not None:
                self.target[k] = self.fixed_targets[k]
            else:
                self.target[k] = sample_target(self.rngs[k], self.model, self.cfg)
        self.q[idx] = cand
        self.dq[idx] = 0.0
        self.sim_step[idx] = 0
        pr = self.progress
        pr.q_hist[idx] = cand[:, None, :]
        pr.dq_hist[idx] = 0.0
        pr.prev_u[idx] = 0.0
        pr.opened[idx] = False
        pr.triggered[idx] = False
        pr.step[idx] = 0
        p, _ = forward_kinematics(self.model, cand)
        e2, e3 = tracking_errors(p, self.target[idx])
        pr.best_err_2d[idx] = e2
        pr.best_err_3d[idx] = e3
        for arr in (self.ball.pos, self.ball.vel, self.ball.impact):
            arr[idx] = np.nan
        self.ball.released[idx] = False
        self.ball.impacted[idx] = False
        self.delay.reset(idx)
        self.outcome[idx] = RUNNING
        self.active[idx] = True
        self.episode_return[idx] = 0.0
        self.release_step[idx] = -1
        self.u[idx] = 0.0
        self.dq_ref[idx] = 0.0
        if self.pid is not None:
            mask = np.zeros(self.n, dtype=bool)
            mask[idx] = True
            self.pid.reset((self.n,), mask)

    def reset(self) -> np.ndarray:
        self._reset_envs(np.arange(self.n))
        if self.pid is not None:
            self.pid.reset((self.n,))
        return self.observe()

    def gripper_state(self) -> tuple[np.ndarray, np.ndarray]:
        fr = frames(self.model, self.q)
        p = fr.pos[:, -1] + fr.rot[:, -1] @ self.model.gripper_center
        v = np.einsum("nij,nj->ni", gripper_jacobian(self.model, self.q, fr), self.dq)
        return p, v

    def observe(self, idx=None) -> np.ndarray:
        r, v = self.gripper_state()
        draws = None
        if self.use_obs_noise:
            k = 2 * HISTORY * (5 if self.variant == "2d" else 6) + 6
            draws = np.stack([g.standard_normal(k) for g in self.rngs])
        obs = build_observation(self.progress, r, v, self.target, self.variant, self.noise, draws)
        return obs if idx is None else obs[idx]

    # -- stepping ----------------------------------------------------------

    def _uniforms(self) -> np.ndarray:
        return np.array([g.random() for g in self.rngs])

    def step(self, actions: np.ndarray):
        cfg = self.cfg
        act = self.active.copy()
        r_ee, v_ee = self.gripper_state()
        assist = None
        if cfg.assist:
            near = np.linalg.norm(r_ee - self.target, axis=1) < cfg.assist_distance
            slow = np.linalg.norm(v_ee, axis=1) < cfg.assist_speed
            assist = near & slow & (self._uniforms() < cfg.assist_probability)
        dq_ref, u, trigger = apply_action(
            actions, self.model, self.variant, self.progress.triggered, cfg.release_threshold, assist
        )
        if not self.command_noise.degenerate:
            for k in np.flatnonzero(act):
                cmd = randomize_velocity_command(
                    self.model, VelocityCommand(dq_ref[k]), self.rngs[k], self.command_noise
                )
                dq_ref[k] = cmd.dq_ref
        trigger &= act
        accepted = self.delay.push(trigger, self.sim_step, self.rngs)
        self.progress.triggered |= accepted
        self.u[act] = u[act]
        self.dq_ref[act] = dq_ref[act]

        limits = np.zeros(self.n, dtype=bool)
        nonfinite = np.zeros(self.n, dtype=bool)
        for _ in range(cfg.decimation):
            hit, bad = self._substep(act)
            limits |= hit
            nonfinite |= bad
        return self._finish_control_step(act, limits, nonfinite)

    def _dynamics(self):
        if self.cfg.held_mass == 0:
            return dynamics_terms(self.model, self.q, self.dq)
        m, b, g = dynamics_terms(self.model, self.q, self.dq)
        held = ~self.ball.released
        if held.any():
            mh, bh, gh = dynamics_terms(self.held_model, self.q[held], self.dq[held])
            m[held], b[held], g[held] = mh, bh, gh
        return m, b, g

    def _substep(self, act: np.ndarray):
        cfg = self.cfg
        m, b, g = self._dynamics()
        state = MachineState(self.q, self.dq, self.time)
        if self.pid is None:
            ddq_des = cfg.k_v * (self.dq_ref - self.dq[:, _A])
            tau_a, _ = hybrid_dynamics(self.model, self.q, self.dq, ddq_des, np.zeros((self.n, 2)), m=m, b=b)
            tau_a = np.clip(tau_a, -self.torque_limit, self.torque_limit)
        else:
            tau_a = pid_velocity_control(
                self.model, self.pid, state, VelocityCommand(self.dq_ref), cfg.dt, self.torque_limit, gravity=g
            )
        tau = np.concatenate([tau_a, np.zeros((self.n, 2))], axis=1)
        ddq, ok = _kernels.cholesky_solve_batch(np.ascontiguousarray(m), np.ascontiguousarray(tau - b))
        new, hit = integrate_step(self.model, state, ddq, cfg.dt)
        apply_passive_friction(new, self.friction, cfg.dt)
        bad = ~ok | ~np.isfinite(new.q).all(axis=1) | ~np.isfinite(new.dq).all(axis=1)
        write = act & ~bad
        self.q[write] = new.q[write]
        self.dq[write] = new.dq[write]
        self.time += cfg.dt

        fire = self.delay.poll(self.sim_step + 1) & act
        # payloads already in the air fly before new ones spawn
        step_payload(self.ball, cfg.dt, self.model.gravity, mask=act)
        if fire.any():
            p, v = spawn_payload(self.model, self.q[fire], self.dq[fire])
            self.ball.pos[fire] = p
            self.ball.vel[fire] = v
            self.ball.released[fire] = True
            self.progress.opened[fire] = True
            self.release_step[fire] = self.sim_step[fire] + 1  # completed sim steps at spawn
        self.sim_step[act] += 1
        if self.trace is not None:
            self.trace(self, fire)
        return hit.any(axis=1) & act, bad & act

    def _finish_control_step(self, act, limits, nonfinite):
        cfg = self.cfg
        pr = self.progress
        pr.step[act] += 1
        pr.q_hist[act] = np.roll(pr.q_hist[act], 1, axis=1)
        pr.dq_hist[act] = np.roll(pr.dq_hist[act], 1, axis=1)
        pr.q_hist[act, 0] = self.q[act]
        pr.dq_hist[act, 0] = self.dq[act]

        r_ee, _ = self.gripper_state()
        point = np.where(self.ball.released[:, None], self.ball.pos, r_ee)
        flags = check_collision(self.model, self.q)
        collided = (flags.self_collision | flags.ground_collision | nonfinite) & act
        outcome = check_termination(collided, limits & act, self.ball.impacted & act, pr.step, cfg.max_steps)
        outcome = np.where(act, outcome, RUNNING)

        saved_best = (pr.best_err_2d.copy(), pr.best_err_3d.copy())
        terms = compute_reward(pr, point, self.target, self.u, cfg.reward, self.variant, outcome)
        # frozen environments keep their bookkeeping
        pr.best_err_2d = np.where(act, pr.best_err_2d, saved_best[0])
        pr.best_err_3d = np.where(act, pr.best_err_3d, saved_best[1])
        reward = np.where(act, terms.total, 0.0)
        reward = np.where(np.isfinite(reward), reward, cfg.reward.p_term)
        pr.prev_u[act] = self.u[act]
        self.episode_return += reward
        self.last_terms = terms

        done = outcome != RUNNING
        self.outcome = np.where(done, outcome, self.outcome)
        info = {
            "outcome": outcome.copy(),
            "timeout": outcome == TIMEOUT,
            "impact": self.ball.impact.copy(),
            "landing_error": np.where(
                outcome == LANDED, np.linalg.norm(self.ball.impact - self.target, axis=1), np.nan
            ),
            "episode_return": np.where(done, self.episode_return, np.nan),
            "episode_length": np.where(done, pr.step, 0),
            "release_step": self.release_step.copy(),
            "nonfinite": nonfinite.copy(),
        }
        obs = self.observe()
        if done.any():
            info["terminal_obs"] = obs[done].copy()
            idx = np.flatnonzero(done)
            if self.auto_reset:
                self._reset_envs(idx)
                obs[idx] = self.observe()[idx]
            else:
                self.active[idx] = False
        return obs, reward, done, info


class ShardedEnv:
    """Contiguous shards of one seeded batch, stepped by a thread pool.

    Per-environment generators are the same as for a single
    :class:`ThrowEnv` with the same ``seed``, so the outputs do not depend
    on the number of shards.
    """

    def __init__(self, model: MachineModel, cfg: EnvConfig, n_envs: int, seed: int = 0, workers: int = 2, **kw):
        from concurrent.futures import ThreadPoolExecutor

        seeds = np.random.SeedSequence(seed).spawn(n_envs)
        bounds = np.linspace(0, n_envs, min(workers, n_envs) + 1).astype(int)
        self.shards = [
            ThrowEnv(model, cfg, hi - lo, seeds=seeds[lo:hi], **kw) for lo, hi in zip(bounds[:-1], bounds[1:])
        ]
        self.bounds = bounds
        self.pool = ThreadPoolExecutor(max_workers=len(self.shards))
        self.n = n_envs
        self.cfg = cfg
        self.variant = cfg.variant
        self.obs_dim = OBS_DIM[cfg.variant]
        self.act_dim = ACT_DIM[cfg.variant]

    def reset(self) -> np.ndarray:
        return np.concatenate(list(self.pool.map(lambda e: e.reset(), self.shards)))

    def step(self, actions: np.ndarray):
        parts = [actions[lo:hi] for lo, hi in zip(self.bounds[:-1], self.bounds[1:])]
        res = list(self.pool.map(lambda ea: ea[0].step(ea[1]), zip(self.shards, parts)))
        obs = np.concatenate([r[0] for r in res])
        rew = np.concatenate([r[1] for r in res])
        done = np.concatenate([r[2] for r in res])
        info = {}
        for key in res[0][3]:
            if key == "terminal_obs":
                continue
            info[key] = np.concatenate([r[3][key] for r in res])
        term = [r[3]["terminal_obs"] for r in res if "terminal_obs" in r[3]]
        if term:
            info["terminal_obs"] = np.concatenate(term)
        return obs, rew, done, info

    def close(self):
        self.pool.shutdown()


def make_env(model: MachineModel, cfg: EnvConfig, n_envs: int, seed: int = 0, workers: int = 1, **kw):
    if workers <= 1:
        return ThrowEnv(model, cfg, n_envs, seed=seed, **kw)
    return ShardedEnv(model, cfg, n_envs, seed=seed, workers=workers, **kw)
