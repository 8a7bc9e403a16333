"""Shared fixtures and independent reference implementations for the tests."""

import copy
from importlib import resources

import numpy as np
import pytest
import yaml

from throwsim.model import model_from_dict, nominal_model


@pytest.fixture(scope="session")
def model():
    return nominal_model()


@pytest.fixture(scope="session")
def nominal_dict():
    text = resources.files("throwsim").joinpath("data/nominal_machine.yaml").read_text()
    return yaml.safe_load(text)


def modified_model(base: dict, **top):
    d = copy.deepcopy(base)
    d.update(top)
    return model_from_dict(d)


def pendulum_dict(base: dict, mass: float, length: float, tiny: float = 1e-9) -> dict:
    """Every link (almost) massless except a point mass ``length`` below the roll joint."""
    d = copy.deepcopy(base)
    for jd in d["joints"]:
        jd["link"]["mass"] = tiny
        jd["link"]["inertia"] = [tiny * 1e-3] * 3
    last = d["joints"][-1]["link"]
    last["mass"] = mass
    last["com"] = [0.0, 0.0, -length]
    last["inertia"] = [tiny * 1e-3] * 3
    return d


def random_q(model, rng, n):
    return rng.uniform(model.lower, model.upper, size=(n, 6))


# --- transform-chain oracle ---------------------------------------------------


def _rot(axis, angle):
    axis = np.asarray(axis, dtype=float)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def _homog(r=np.eye(3), p=np.zeros(3)):
    t = np.eye(4)
    t[:3, :3] = r
    t[:3, 3] = p
    return t


def oracle_chain(model, q):
    """4x4 world transforms of every joint frame, composed one joint at a time."""
    t = _homog(p=[0.0, 0.0, model.base_height])
    out = []
    for j, qi in zip(model.joints, q):
        t = t @ _homog(p=j.origin)
        if j.type == "prismatic":
            t = t @ _homog(p=np.asarray(j.axis) * qi)
        else:
            t = t @ _homog(r=_rot(j.axis, qi))
        out.append(t.copy())
    return out


def oracle_fk(model, q):
    t = oracle_chain(model, q)[-1]
    return t[:3, :3] @ model.gripper_center + t[:3, 3]


def oracle_kinetic_energy(model, q, dq):
    """Sum of per-body kinetic energies from body twists of the oracle chain."""
    ts = oracle_chain(model, q)
    axes = [t[:3, :3] @ j.axis for t, j in zip(ts, model.joints)]
    origins = [t[:3, 3] for t in ts]
    ke = 0.0
    omega = np.zeros(3)
    for i, (t, link) in enumerate(zip(ts, model.links)):
        j = model.joints[i]
        if j.type != "prismatic":
            omega = omega + axes[i] * dq[i]
        com = t[:3, :3] @ link.com + t[:3, 3]
        v = np.zeros(3)
        for k in range(i + 1):
            if model.joints[k].type == "prismatic":
                v += axes[k] * dq[k]
            else:
                v += np.cross(axes[k], com - origins[k]) * dq[k]
        inertia = t[:3, :3] @ link.inertia @ t[:3, :3].T
        ke += 0.5 * link.mass * v @ v + 0.5 * omega @ inertia @ omega
    return ke


# --- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
