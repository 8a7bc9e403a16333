"""Kinematic and inertial description of the six-joint material handler.

The chain is fixed: cabin turn (yaw), boom (pitch), dipper (pitch),
telescope (prismatic), then the two unpowered gripper joints (pitch, roll).
Models are loaded from a YAML file; see ``data/nominal_machine.yaml`` for the
schema and the nominal values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

N_JOINTS = 6
ACTUATED = (0, 1, 2, 3)
PASSIVE = (4, 5)
JOINT_NAMES = ("cabin_turn", "boom", "dipper", "telescope", "gripper_pitch", "gripper_roll")
_JOINT_TYPES = ("revolute", "revolute", "revolute", "prismatic", "revolute", "revolute")


class ModelError(ValueError):
    """Raised for a machine description that violates the model invariants."""


@dataclass(frozen=True)
class Capsule:
    start: np.ndarray
    end: np.ndarray
    radius: float


@dataclass(frozen=True)
class Joint:
    name: str
    type: str
    axis: np.ndarray
    origin: np.ndarray
    lower: float
    upper: float
    velocity_limit: float
    passive: bool


@dataclass(frozen=True)
class Link:
    length: float
    mass: float
    com: np.ndarray
    inertia: np.ndarray  # 3x3, about the CoM, link frame
    capsule: Capsule | None


@dataclass(frozen=True, eq=False)
class MachineModel:
    """Immutable machine description shared by every environment instance."""

    joints: tuple[Joint, ...]
    links: tuple[Link, ...]
    base_height: float
    gripper_center: np.ndarray
    cabin_radius: float
    cabin_height: float
    gravity: float = 9.81
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.joints) != N_JOINTS or len(self.links) != N_JOINTS:
            raise ModelError(f"expected {N_JOINTS} joints and links")
        for i, (j, link) in enumerate(zip(self.joints, self.links)):
            if j.type != _JOINT_TYPES[i]:
                raise ModelError(f"joint {i} ({j.name}) must be {_JOINT_TYPES[i]}, got {j.type}")
            if j.passive != (i in PASSIVE):
                raise ModelError(f"joint {i} ({j.name}) passive flag must be {i in PASSIVE}")
            if not j.lower < j.upper:
                raise ModelError(f"joint {j.name}: lower limit must be below upper limit")
            if j.velocity_limit <= 0:
                raise ModelError(f"joint {j.name}: velocity limit must be positive")
            if not np.isclose(np.linalg.norm(j.axis), 1.0):
                raise ModelError(f"joint {j.name}: axis must be a unit vector")
            if link.mass <= 0 or link.length <= 0:
                raise ModelError(f"link {j.name}: mass and length must be positive")
            if np.any(np.linalg.eigvalsh(link.inertia) <= 0):
                raise ModelError(f"link {j.name}: inertia must be positive definite")
            if link.capsule is not None and link.capsule.radius <= 0:
                raise ModelError(f"link {j.name}: capsule radius must be positive")
        if self.cabin_radius <= 0 or self.cabin_height <= 0:
            raise ModelError("cabin clearance cylinder must have positive size")

    # Vectorized views used by the dynamics kernels.
    @cached_property
    def axes(self) -> np.ndarray:
        return np.array([j.axis for j in self.joints])

    @cached_property
    def origins(self) -> np.ndarray:
        return np.array([j.origin for j in self.joints])

    @cached_property
    def prismatic(self) -> np.ndarray:
        return np.array([j.type == "prismatic" for j in self.joints])

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([link.mass for link in self.links])

    @cached_property
    def coms(self) -> np.ndarray:
        return np.array([link.com for link in self.links])

    @cached_property
    def inertias(self) -> np.ndarray:
        return np.array([link.inertia for link in self.links])

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([j.lower for j in self.joints])

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([j.upper for j in self.joints])

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    @cached_property
    def kernel_args(self) -> tuple:
        from ._kernels import model_arrays

        return model_arrays(self)

    @cached_property
    def static_reach(self) -> float:
        """Maximum horizontal gripper-center distance with the gripper hanging."""
        from .kinematics import static_reach

        return static_reach(self)[0]

    def with_gripper_mass(self, extra: float) -> "MachineModel":
        """Return a copy with ``extra`` kg lumped at the gripper center (held payload)."""
        if extra == 0:
            return self
        g = self.links[5]
        m = g.mass + extra
        com = (g.mass * g.com + extra * self.gripper_center) / m
        d0, d1 = g.com - com, self.gripper_center - com
        shift = g.mass * (d0 @ d0 * np.eye(3) - np.outer(d0, d0))
        shift += extra * (d1 @ d1 * np.eye(3) - np.outer(d1, d1))
        link = Link(g.length, m, com, g.inertia + shift, g.capsule)
        return MachineModel(
            self.joints,
            self.links[:5] + (link,),
            self.base_height,
            self.gripper_center,
            self.cabin_radius,
            self.cabin_height,
            self.gravity,
            self.source,
        )


def _vec(x, n=3, what="vector"):
    a = np.asarray(x, dtype=float)
    if a.shape != (n,):
        raise ModelError(f"{what} must have {n} entries, got {x!r}")
    return a


def _inertia(x):
    a = np.asarray(x, dtype=float)
    if a.shape == (3,):
        return np.diag(a)
    if a.shape == (3, 3) and np.allclose(a, a.T):
        return a
    raise ModelError(f"inertia must be 3 principal moments or a symmetric 3x3, got {x!r}")


def model_from_dict(d: dict, source: str | None = None) -> MachineModel:
    """Build a model from the parsed YAML mapping."""
    known = {"gravity", "base_height", "gripper_center", "cabin_clearance", "joints"}
    unknown = set(d) - known
    if unknown:
        raise ModelError(f"unknown model keys: {sorted(unknown)}")
    joints, links = [], []
    try:
        for jd in d["joints"]:
            lo, hi = jd["limits"]
            joints.append(
                Joint(
                    name=str(jd["name"]),
                    type=str(jd["type"]),
                    axis=_vec(jd["axis"], what="axis"),
                    origin=_vec(jd["origin"], what="origin"),
                    lower=float(lo),
                    upper=float(hi),
                    velocity_limit=float(jd["velocity_limit"]),
                    passive=bool(jd["passive"]),
                )
            )
            ld = jd["link"]
            cap = ld.get("capsule")
            capsule = None
            if cap is not None:
                capsule = Capsule(_vec(cap["start"]), _vec(cap["end"]), float(cap["radius"]))
            links.append(
                Link(
                    length=float(ld["length"]),
                    mass=float(ld["mass"]),
                    com=_vec(ld["com"], what="com"),
                    inertia=_inertia(ld["inertia"]),
                    capsule=capsule,
                )
            )
        cab = d["cabin_clearance"]
        return MachineModel(
            joints=tuple(joints),
            links=tuple(links),
            base_height=float(d["base_height"]),
            gripper_center=_vec(d["gripper_center"], what="gripper_center"),
            cabin_radius=float(cab["radius"]),
            cabin_height=float(cab["height"]),
            gravity=float(d.get("gravity", 9.81)),
            source=source,
        )
    except KeyError as e:
        raise ModelError(f"missing model key: {e.args[0]}") from None


def load_model(path: str | Path) -> MachineModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"machine model file not found: {path}")
    with open(path) as f:
        return model_from_dict(yaml.safe_load(f), source=str(path))


def nominal_model() -> MachineModel:
    """The bundled nominal machine (static reach 7.5 m)."""
    text = resources.files("throwsim").joinpath("data/nominal_machine.yaml").read_text()
    return model_from_dict(yaml.safe_load(text), source="nominal")
