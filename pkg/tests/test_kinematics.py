import copy

import numpy as np
import pytest

from throwsim.kinematics import (
    check_collision,
    forward_kinematics,
    gripper_jacobian,
    gripper_velocity,
    hanging_configuration,
    segment_cylinder_distance,
    segment_distance,
    static_reach,
)
from throwsim.model import ModelError, load_model, model_from_dict

from conftest import oracle_chain, oracle_fk, random_q


def test_load_rejects_unknown_and_missing_keys(nominal_dict, tmp_path):
    bad = copy.deepcopy(nominal_dict)
    bad["colour"] = "yellow"
    with pytest.raises(ModelError, match="colour"):
        model_from_dict(bad)
    bad = copy.deepcopy(nominal_dict)
    del bad["base_height"]
    with pytest.raises(ModelError, match="base_height"):
        model_from_dict(bad)
    with pytest.raises(FileNotFoundError, match="nope.yaml"):
        load_model(tmp_path / "nope.yaml")


@pytest.mark.parametrize(
    "path, value",
    [(("link", "mass"), 0.0), (("limits",), [1.0, 0.5]), (("link", "capsule", "radius"), -0.1)],
)
def test_model_invariants_enforced(nominal_dict, path, value):
    d = copy.deepcopy(nominal_dict)
    node = d["joints"][1]
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ModelError):
        model_from_dict(d)


def test_zero_configuration(model):
    p, _ = forward_kinematics(model, np.zeros(6))
    horizontal = sum(j.origin[0] for j in model.joints)
    z = model.base_height + sum(j.origin[2] for j in model.joints) + model.gripper_center[2]
    np.testing.assert_allclose(p, [horizontal, 0.0, z], atol=1e-12)


def test_cabin_quarter_turn(model):
    q = np.zeros(6)
    p0, _ = forward_kinematics(model, q)
    q[0] = np.pi / 2
    p1, _ = forward_kinematics(model, q)
    assert abs(p1[0]) < 1e-12
    assert p1[1] == pytest.approx(np.hypot(*p0[:2]), abs=1e-12)


def test_fk_matches_transform_chain(model):
    rng = np.random.default_rng(0)
    q = random_q(model, rng, 100)
    p, _ = forward_kinematics(model, q)
    ref = np.array([oracle_fk(model, qi) for qi in q])
    assert np.abs(p - ref).max() < 1e-9


def test_yaw_equivariance(model):
    rng = np.random.default_rng(1)
    q = random_q(model, rng, 50)
    alpha = rng.uniform(-1, 1, 50)
    q2 = q.copy()
    q2[:, 0] += alpha
    p1, _ = forward_kinematics(model, q)
    p2, _ = forward_kinematics(model, q2)
    c, s = np.cos(alpha), np.sin(alpha)
    rot = np.stack([c * p1[:, 0] - s * p1[:, 1], s * p1[:, 0] + c * p1[:, 1], p1[:, 2]], axis=1)
    assert np.abs(rot - p2).max() < 1e-12


def test_velocity_matches_finite_differences(model):
    rng = np.random.default_rng(2)
    q = random_q(model, rng, 50)
    dq = rng.normal(size=(50, 6))
    v = gripper_velocity(model, q, dq)
    h = 1e-6
    fd = (forward_kinematics(model, q + h * dq)[0] - forward_kinematics(model, q - h * dq)[0]) / (2 * h)
    assert np.abs(v - fd).max() < 1e-5
    assert np.all(gripper_velocity(model, q, np.zeros(6)) == 0)


def test_cabin_rotation_speed(model):
    q = hanging_configuration(np.array([0.3, 0.2, -0.4, 0.5]))
    dq = np.array([0.5, 0, 0, 0, 0, 0])
    p, _ = forward_kinematics(model, q)
    v = gripper_velocity(model, q, dq)
    r = np.hypot(p[0], p[1])
    assert np.linalg.norm(v) == pytest.approx(0.5 * r, rel=1e-12)
    assert abs(v[:2] @ p[:2]) < 1e-9  # tangential
    assert abs(v[2]) < 1e-12


def test_hanging_gripper_axis_vertical(model):
    rng = np.random.default_rng(3)
    qa = rng.uniform(model.lower[:4], model.upper[:4], size=(100, 4))
    _, rot = forward_kinematics(model, hanging_configuration(qa))
    # gripper axis is the gripper-center direction, which must point down
    axis = rot @ (model.gripper_center / np.linalg.norm(model.gripper_center))
    assert np.abs(axis @ np.array([0, 0, -1.0]) - 1).max() < 1e-9


def test_static_reach_is_7_5_m_and_beats_grid(model):
    r_max, q_best = static_reach(model)
    assert r_max == pytest.approx(7.5, abs=1e-6)
    lo, hi = model.lower[:4], model.upper[:4]
    g = np.stack(
        np.meshgrid([0.0], *[np.linspace(lo[i], hi[i], 31) for i in (1, 2, 3)], indexing="ij"), -1
    ).reshape(-1, 4)
    p, _ = forward_kinematics(model, hanging_configuration(g))
    assert r_max >= np.hypot(p[:, 0], p[:, 1]).max() - 1e-12


# --- collision ----------------------------------------------------------------


def test_segment_distance_against_sampling():
    rng = np.random.default_rng(4)
    a, b, c, d = (rng.normal(size=(200, 3)) for _ in range(4))
    b[:10] = a[:10]  # degenerate segments
    dist = segment_distance(a, b, c, d)
    s = np.linspace(0, 1, 401)
    for k in range(200):
        p1 = a[k] + s[:, None] * (b[k] - a[k])
        p2 = c[k] + s[:, None] * (d[k] - c[k])
        brute = np.linalg.norm(p1[:, None] - p2[None], axis=-1).min()
        assert dist[k] <= brute + 1e-12
        assert brute - dist[k] < 0.02


def test_segment_cylinder_distance_simple_cases():
    # segment outside the side wall, parallel to the axis
    d = segment_cylinder_distance(np.array([[3.0, 0, 0.5]]), np.array([[3.0, 0, 1.5]]), 1.0, 2.0)
    assert d[0] == pytest.approx(2.0, abs=1e-6)
    # segment above the top face
    d = segment_cylinder_distance(np.array([[0.0, 0, 3.0]]), np.array([[0.5, 0, 3.0]]), 1.0, 2.0)
    assert d[0] == pytest.approx(1.0, abs=1e-6)
    # segment piercing the cylinder
    d = segment_cylinder_distance(np.array([[-2.0, 0, 1.0]]), np.array([[2.0, 0, 1.0]]), 1.0, 2.0)
    assert d[0] <= 1e-9


def test_neutral_pose_collision_free(model):
    q = hanging_configuration(np.array([0.0, 0.4, -0.6, 0.3]))
    f = check_collision(model, q)
    assert not f.self_collision and not f.ground_collision


def test_boom_down_hits_ground(model):
    q = hanging_configuration(np.array([0.0, -0.5, -1.5, 0.0]))
    assert forward_kinematics(model, q)[0][2] < 0
    assert check_collision(model, q).ground_collision


def _point_sampled_flags(model, q, n=60):
    """Collision flags from dense points on each capsule axis (independent oracle).

    Returns the flags and the smallest clearance margin, so cases too close
    to a boundary can be skipped.
    """
    ts = oracle_chain(model, q)
    s = np.linspace(0, 1, n)
    caps = []
    for i, (t, link) in enumerate(zip(ts, model.links)):
        c = link.capsule
        if c is None:
            continue
        a = t[:3, :3] @ c.start + t[:3, 3]
        b = t[:3, :3] @ c.end + t[:3, 3]
        caps.append((i, a + s[:, None] * (b - a), c.radius))
    p_e = oracle_fk(model, q)
    margins = [p_e[2]]
    ground = p_e[2] < 0
    selfc = False
    for i, pts, r in caps:
        m = pts[:, 2].min() - r
        margins.append(m)
        ground |= m < 0
        if i != 1:
            radial = np.maximum(np.hypot(pts[:, 0], pts[:, 1]) - model.cabin_radius, 0)
            vert = np.maximum(pts[:, 2] - model.cabin_height, 0) + np.maximum(-pts[:, 2], 0)
            m = np.hypot(radial, vert).min() - r
            margins.append(m)
            selfc |= m < 0
    for k in range(len(caps)):
        for l in range(k + 1, len(caps)):
            i, pi, ri = caps[k]
            j, pj, rj = caps[l]
            if all(model.links[x].capsule is None for x in range(i + 1, j)):
                continue
            m = np.linalg.norm(pi[:, None] - pj[None], axis=-1).min() - ri - rj
            margins.append(m)
            selfc |= m < 0
    return bool(selfc), bool(ground), min(abs(x) for x in margins)


def test_collision_flags_match_point_sampling(model):
    rng = np.random.default_rng(5)
    q = random_q(model, rng, 1000)
    flags = check_collision(model, q)
    checked = 0
    for k in range(1000):
        selfc, ground, margin = _point_sampled_flags(model, q[k])
        if margin <= 0.01:
            continue
        checked += 1
        assert flags.self_collision[k] == selfc, k
        assert flags.ground_collision[k] == ground, k
    assert checked > 800
