"""Rigid-body dynamics of the six-joint chain.

Inverse dynamics uses recursive Newton-Euler in world coordinates, the joint
space inertia matrix comes from the composite-rigid-body algorithm, and the
underactuated case is a partitioned solve of ``M ddq + b = tau``. Everything
is batched over leading dimensions so a whole vector of environments is
advanced with one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .kinematics import _flat, frames
from .model import ACTUATED, N_JOINTS, PASSIVE, MachineModel


@dataclass(frozen=True)
class FrictionParams:
    """Passive-joint friction: viscous ``upsilon`` (1/s) and velocity-independent ``eta`` (rad/s^2)."""

    upsilon: float = 0.03
    eta: float = 0.1

    def __post_init__(self):
        if self.upsilon < 0 or self.eta < 0:
            raise ValueError("friction parameters must be non-negative")


@dataclass
class MachineState:
    """Joint positions and velocities (batched over leading dims) and sim time."""

    q: np.ndarray
    dq: np.ndarray
    time: float = 0.0

    def copy(self) -> "MachineState":
        return MachineState(self.q.copy(), self.dq.copy(), self.time)


def _flat2(x, n):
    x = np.reshape(np.asarray(x, dtype=float), (-1, N_JOINTS))
    return np.ascontiguousarray(np.broadcast_to(x, (n, N_JOINTS)))


def rnea(model: MachineModel, q, dq, ddq, gravity: bool = True) -> np.ndarray:
    """Recursive Newton-Euler inverse dynamics, returns generalized forces.

    Link velocities and accelerations are propagated outward in world
    coordinates, then link wrenches are accumulated inward with moments taken
    about each joint origin. Gravity enters as an upward acceleration of the
    base.
    """
    qf, batch = _flat(q)
    n = qf.shape[0]
    axes, origins, prismatic, masses, coms, inertias, base_height, g = model.kernel_args
    tau = _k.rnea_batch(
        axes, origins, prismatic, masses, coms, inertias, base_height,
        g if gravity else 0.0,
        np.ascontiguousarray(qf), _flat2(dq, n), _flat2(ddq, n),
    )
    return tau.reshape(batch + (N_JOINTS,))


def inverse_dynamics(model: MachineModel, q, dq, ddq) -> np.ndarray:
    """``tau = M(q) ddq + b(q, dq)`` including gravity."""
    return rnea(model, q, dq, ddq)


def bias_forces(model: MachineModel, q, dq) -> np.ndarray:
    """Coriolis, centrifugal and gravity forces, ``b(q, dq)``."""
    return rnea(model, q, dq, np.zeros(N_JOINTS))


def gravity_forces(model: MachineModel, q) -> np.ndarray:
    return rnea(model, q, np.zeros(N_JOINTS), np.zeros(N_JOINTS))


def mass_matrix(model: MachineModel, q) -> np.ndarray:
    """Joint-space inertia matrix by the composite-rigid-body algorithm.

    Composite spatial inertias are accumulated about the world origin, so
    the composite of a subtree is a plain sum of its bodies. Column ``i`` is
    the spatial force that accelerates the subtree of joint ``i`` along its
    motion subspace, projected onto every ancestor joint.
    """
    qf, batch = _flat(q)
    axes, origins, prismatic, masses, coms, inertias, base_height, _ = model.kernel_args
    m = _k.crba_batch(axes, origins, prismatic, masses, coms, inertias, base_height, np.ascontiguousarray(qf))
    return m.reshape(batch + (N_JOINTS, N_JOINTS))


def dynamics_terms(model: MachineModel, q, dq) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(M, b, g)`` for a flat batch, sharing one kinematics pass."""
    axes, origins, prismatic, masses, coms, inertias, base_height, g = model.kernel_args
    return _k.dynamics_terms_batch(
        axes, origins, prismatic, masses, coms, inertias, base_height, g,
        np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(dq, dtype=float),
    )


def forward_dynamics(model: MachineModel, q, dq, tau) -> np.ndarray:
    """Joint accelerations solving ``M ddq = tau - b``."""
    qf, batch = _flat(q)
    n = qf.shape[0]
    m = mass_matrix(model, qf)
    b = bias_forces(model, qf, _flat2(dq, n))
    tau = _flat2(tau, n)
    return solve_accelerations(m, b, tau).reshape(batch + (N_JOINTS,))


def solve_accelerations(m: np.ndarray, b: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Cholesky solve of ``m ddq = tau - b`` for a flat batch."""
    x, ok = _k.cholesky_solve_batch(np.ascontiguousarray(m), np.ascontiguousarray(tau - b))
    if not ok.all():
        raise np.linalg.LinAlgError("singular mass matrix: invalid machine model")
    return x


def hybrid_dynamics(
    model: MachineModel,
    q,
    dq,
    ddq_des_actuated,
    tau_passive,
    m: np.ndarray | None = None,
    b: np.ndarray | None = None,
    actuated=ACTUATED,
) -> tuple[np.ndarray, np.ndarray]:
    """Torques on the actuated joints and accelerations of the passive ones.

    Given desired accelerations on ``actuated`` and applied forces on the
    remaining joints, solves the partitioned system

        M_pp ddq_p = tau_p - b_p - M_pa ddq_a
        tau_a      = M_aa ddq_a + M_ap ddq_p + b_a

    ``m`` and ``b`` may be passed in when already computed for this state.
    """
    q = np.asarray(q, dtype=float)
    if m is None:
        m = mass_matrix(model, q)
    if b is None:
        b = bias_forces(model, q, dq)
    a = list(actuated)
    p = [i for i in range(N_JOINTS) if i not in a]
    ddq_a = np.asarray(ddq_des_actuated, dtype=float)
    tau_p = np.asarray(tau_passive, dtype=float)
    m_aa = m[..., a, :][..., :, a]
    if p:
        m_pp = m[..., p, :][..., :, p]
        m_pa = m[..., p, :][..., :, a]
        rhs = tau_p - b[..., p] - np.einsum("...ij,...j->...i", m_pa, ddq_a)
        try:
            ddq_p = np.linalg.solve(m_pp, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise np.linalg.LinAlgError("singular passive inertia block") from e
        tau_a = (
            np.einsum("...ij,...j->...i", m_aa, ddq_a)
            + np.einsum("...ji,...j->...i", m_pa, ddq_p)
            + b[..., a]
        )
    else:
        ddq_p = np.zeros(ddq_a.shape[:-1] + (0,))
        tau_a = np.einsum("...ij,...j->...i", m_aa, ddq_a) + b[..., a]
    return tau_a, ddq_p


def friction_accel(params: FrictionParams, dtheta) -> np.ndarray:
    """Friction deceleration magnitude ``upsilon |dtheta| + eta`` (0 at rest).

    The caller applies it opposing the motion; see :func:`apply_passive_friction`.
    """
    dtheta = np.asarray(dtheta, dtype=float)
    return np.where(dtheta == 0.0, 0.0, params.upsilon * np.abs(dtheta) + params.eta)


def signed_friction_accel(params: FrictionParams, dtheta) -> np.ndarray:
    """Friction acceleration with its sign: ``-(upsilon dtheta + eta sign(dtheta))``."""
    dtheta = np.asarray(dtheta, dtype=float)
    return -np.sign(dtheta) * friction_accel(params, dtheta)


def apply_passive_friction(state: MachineState, params: FrictionParams, dt: float) -> MachineState:
    """Decelerate the passive joints by friction over one step, in place.

    The velocity change is capped at the current speed, so friction can stop
    a joint but never reverse it.
    """
    v = state.dq[..., list(PASSIVE)]
    dv = np.minimum(friction_accel(params, v) * dt, np.abs(v))
    state.dq[..., list(PASSIVE)] = v - np.sign(v) * dv
    return state


def integrate_step(model: MachineModel, state: MachineState, ddq, dt: float = 0.01) -> tuple[MachineState, np.ndarray]:
    """Semi-implicit Euler step with joint-limit clamping.

    Returns the new state and a boolean mask ``(..., 6)`` of joints that hit
    a limit during the step (their velocity is zeroed).
    """
    dq = state.dq + np.asarray(ddq, dtype=float) * dt
    q = state.q + dq * dt
    clamped = np.clip(q, model.lower, model.upper)
    hit = clamped != q
    dq = np.where(hit, 0.0, dq)
    return MachineState(clamped, dq, state.time + dt), hit


def kinetic_energy(model: MachineModel, q, dq) -> np.ndarray:
    m = mass_matrix(model, q)
    dq = np.asarray(dq, dtype=float)
    return 0.5 * np.einsum("...i,...ij,...j->...", dq, m, dq)


def potential_energy(model: MachineModel, q) -> np.ndarray:
    qf, batch = _flat(q)
    fr = frames(model, qf)
    coms = fr.pos + np.einsum("nkij,kj->nki", fr.rot, model.coms)
    pe = model.gravity * np.einsum("k,nk->n", model.masses, coms[..., 2])
    return pe.reshape(batch)


def total_energy(model: MachineModel, q, dq) -> np.ndarray:
    return kinetic_energy(model, q, dq) + potential_energy(model, q)
