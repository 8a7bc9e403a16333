"""Forward kinematics, gripper velocity, static reach and collision checks.

All functions accept joint arrays with arbitrary leading batch dimensions,
``q.shape == (..., 6)``, and return results with the same batch shape.
Positions are in the machine base frame with z measured from the ground.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize

from ._kernels import frames_batch, segment_cylinder_distance_batch
from .model import ACTUATED, N_JOINTS, MachineModel


class Frames(NamedTuple):
    """Per-joint world frames of a batch of configurations.

    ``pos[:, i]`` is the origin of joint ``i`` and ``rot[:, i]`` the
    orientation of link ``i`` (after the joint motion). ``axis[:, i]`` is the
    joint axis in world coordinates.
    """

    pos: np.ndarray  # (n, 6, 3)
    rot: np.ndarray  # (n, 6, 3, 3)
    axis: np.ndarray  # (n, 6, 3)


def axis_rotation(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit ``axis`` for a batch of angles."""
    angle = np.asarray(angle, dtype=float)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _flat(q):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != N_JOINTS:
        raise ValueError(f"expected {N_JOINTS} joint values, got shape {q.shape}")
    return q.reshape(-1, N_JOINTS), q.shape[:-1]


def frames(model: MachineModel, q: np.ndarray) -> Frames:
    """Joint frames for a flat batch ``q`` of shape (n, 6)."""
    axes, origins, prismatic, *_ , base_height, _g = model.kernel_args
    return Frames(*frames_batch(axes, origins, prismatic, base_height, np.ascontiguousarray(q, dtype=float)))


def forward_kinematics(model: MachineModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Gripper-center position ``(..., 3)`` and orientation ``(..., 3, 3)``."""
    qf, batch = _flat(q)
    fr = frames(model, qf)
    rot = fr.rot[:, -1]
    pos = fr.pos[:, -1] + rot @ model.gripper_center
    return pos.reshape(batch + (3,)), rot.reshape(batch + (3, 3))


def gripper_jacobian(model: MachineModel, q, fr: Frames | None = None) -> np.ndarray:
    """Linear geometric Jacobian of the gripper center, shape ``(..., 3, 6)``."""
    qf, batch = _flat(q)
    if fr is None:
        fr = frames(model, qf)
    p_e = fr.pos[:, -1] + fr.rot[:, -1] @ model.gripper_center
    cols = np.cross(fr.axis, p_e[:, None, :] - fr.pos)
    cols[:, model.prismatic] = fr.axis[:, model.prismatic]
    return np.swapaxes(cols, -1, -2).reshape(batch + (3, N_JOINTS))


def gripper_velocity(model: MachineModel, q, dq) -> np.ndarray:
    """Gripper-center linear velocity, ``J(q) @ dq``."""
    jac = gripper_jacobian(model, q)
    return np.einsum("...ij,...j->...i", jac, np.asarray(dq, dtype=float))


def hanging_passive(q_actuated: np.ndarray) -> np.ndarray:
    """Passive (pitch, roll) that align the gripper axis with gravity.

    The pitch joints share the same axis, so the gripper hangs straight down
    when the passive pitch cancels boom plus dipper pitch.
    """
    qa = np.asarray(q_actuated, dtype=float)
    pitch = -(qa[..., 1] + qa[..., 2])
    return np.stack([pitch, np.zeros_like(pitch)], axis=-1)


def hanging_configuration(q_actuated) -> np.ndarray:
    qa = np.asarray(q_actuated, dtype=float)
    return np.concatenate([qa, hanging_passive(qa)], axis=-1)


def static_reach(model: MachineModel) -> tuple[float, np.ndarray]:
    """Maximum horizontal gripper-center radius over the actuated limits.

    The gripper is assumed hanging (static). Returns ``(r_max, q_best)``.
    A coarse grid seeds a bounded local refinement.
    """
    lo = model.lower[list(ACTUATED)]
    hi = model.upper[list(ACTUATED)]

    def radius(qa):
        p, _ = forward_kinematics(model, hanging_configuration(qa))
        return np.hypot(p[..., 0], p[..., 1])

    # cabin turn does not change the radius
    grids = [np.array([0.0])] + [np.linspace(lo[i], hi[i], 25) for i in (1, 2, 3)]
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, 4)
    r = radius(mesh)
    best = mesh[np.argmax(r)]
    res = minimize(
        lambda x: -radius(x),
        best,
        method="L-BFGS-B",
        bounds=list(zip(lo, hi)),
    )
    qa = res.x if -res.fun >= r.max() else best
    return float(radius(qa)), hanging_configuration(qa)


# --- collision geometry ----------------------------------------------------


def _capsules(model: MachineModel, fr: Frames):
    """World-frame capsule segments: list of (link index, a, b, radius)."""
    out = []
    for i, link in enumerate(model.links):
        c = link.capsule
        if c is None:
            continue
        a = fr.pos[:, i] + fr.rot[:, i] @ c.start
        b = fr.pos[:, i] + fr.rot[:, i] @ c.end
        out.append((i, a, b, c.radius))
    return out


def segment_distance(p1, q1, p2, q2) -> np.ndarray:
    """Minimum distance between segments [p1, q1] and [p2, q2] (batched).

    Closest-point computation on the two segment parameters with clamping.
    """
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    denom = a * e - b * b
    # degenerate (point) segments: a or e near zero
    a_s = np.where(a > 1e-12, a, 1.0)
    e_s = np.where(e > 1e-12, e, 1.0)
    d_s = np.where(denom > 1e-12, denom, 1.0)
    s = np.where(denom > 1e-12, np.clip((b * f - c * e) / d_s, 0.0, 1.0), 0.0)
    t = np.where(e > 1e-12, (b * s + f) / e_s, 0.0)
    t_clipped = np.clip(t, 0.0, 1.0)
    s = np.where((t != t_clipped) | (e <= 1e-12), np.clip((b * t_clipped - c) / a_s, 0.0, 1.0), s)
    s = np.where(a > 1e-12, s, 0.0)
    t = t_clipped
    diff = (p1 + d1 * s[..., None]) - (p2 + d2 * t[..., None])
    return np.linalg.norm(diff, axis=-1)


def cylinder_point_distance(p, radius: float, height: float) -> np.ndarray:
    """Distance from points to a solid vertical cylinder on the ground (0 inside)."""
    rho = np.hypot(p[..., 0], p[..., 1])
    dr = np.maximum(rho - radius, 0.0)
    dz = np.maximum(np.maximum(p[..., 2] - height, -p[..., 2]), 0.0)
    return np.hypot(dr, dz)


def segment_cylinder_distance(a, b, radius: float, height: float, iters: int = 40) -> np.ndarray:
    """Distance from segments ``[a, b]`` (shape (n, 3)) to the cabin cylinder.

    Point-to-convex-set distance along a segment is convex in the segment
    parameter, so a golden-section search converges to the minimum.
    """
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    return segment_cylinder_distance_batch(a, b, float(radius), float(height), iters)


class CollisionFlags(NamedTuple):
    self_collision: np.ndarray
    ground_collision: np.ndarray


def check_collision(model: MachineModel, q, fr: Frames | None = None) -> CollisionFlags:
    """Ground and self-collision flags.

    Ground: any capsule or the gripper center below z = 0. Self: any capsule
    (other than the boom, which is mounted on the cabin) entering the cabin
    clearance cylinder, or two non-adjacent capsules intersecting.
    """
    qf, batch = _flat(q)
    if fr is None:
        fr = frames(model, qf)
    n = qf.shape[0]
    caps = _capsules(model, fr)
    ground = np.zeros(n, dtype=bool)
    selfc = np.zeros(n, dtype=bool)
    p_e = fr.pos[:, -1] + fr.rot[:, -1] @ model.gripper_center
    ground |= p_e[:, 2] < 0.0
    for i, a, b, r in caps:
        ground |= np.minimum(a[:, 2], b[:, 2]) - r < 0.0
        if i != 1:
            dist = segment_cylinder_distance(a, b, model.cabin_radius, model.cabin_height)
            selfc |= dist < r
    for k, (i, a, b, r) in enumerate(caps):
        for j, c, d, s in caps[k + 1 :]:
            if _adjacent(model, i, j):
                continue
            selfc |= segment_distance(a, b, c, d) < r + s
    return CollisionFlags(selfc.reshape(batch), ground.reshape(batch))


def _adjacent(model: MachineModel, i: int, j: int) -> bool:
    """Capsules are adjacent if only capsule-less links lie between them."""
    lo, hi = min(i, j), max(i, j)
    return all(model.links[k].capsule is None for k in range(lo + 1, hi))
