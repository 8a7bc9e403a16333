"""Simulation and reinforcement learning for throwing with an underactuated machine.

Modules: ``model`` (machine description), ``kinematics`` and ``dynamics``
(rigid-body chain), ``actuation`` (low-level controllers, release delay),
``env`` (vectorized throwing environment), ``ppo`` (learner), ``sysid``
(friction and delay identification), ``evaluation`` (target sweeps) and
``cli``.
"""

__version__ = "0.1.0"
