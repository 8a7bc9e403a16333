# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Swinging gripper and velocity control
#
# The arm joints are held still while the passive gripper joints swing.
# Hybrid dynamics gives the torques that hold the arm and the passive
# accelerations in one call.

# %%
import numpy as np

from throwsim.actuation import VelocityCommand, default_pid, default_torque_limits, id_velocity_control, pid_velocity_control
from throwsim.dynamics import (
    FrictionParams,
    MachineState,
    apply_passive_friction,
    forward_dynamics,
    hybrid_dynamics,
    integrate_step,
    total_energy,
)
from throwsim.kinematics import forward_kinematics, hanging_configuration
from throwsim.model import nominal_model

model = nominal_model()
q0 = hanging_configuration(np.array([0.0, 0.5, -0.8, 0.4]))
q0[4] += 0.5
print("gripper at", np.round(forward_kinematics(model, q0)[0], 3))


# %%
def swing(friction=None, seconds=10.0, dt=0.01):
    state = MachineState(q0.copy(), np.zeros(6))
    energy = []
    for _ in range(int(seconds / dt)):
        _, ddq_p = hybrid_dynamics(model, state.q, state.dq, np.zeros(4), np.zeros(2))
        state, _ = integrate_step(model, state, np.concatenate([np.zeros(4), ddq_p]), dt)
        if friction is not None:
            apply_passive_friction(state, friction, dt)
        energy.append(float(total_energy(model, state.q, state.dq)))
    return np.array(energy)


e_free = swing()
e_fric = swing(FrictionParams(0.03, 0.1))
print(f"frictionless: energy spread {np.ptp(e_free):.2f} J of {e_free[0]:.0f} J")
print(f"with friction: lost {e_fric[0] - e_fric[-1]:.1f} J in 10 s")

# %% [markdown]
# ## Boom velocity step, ID vs PID
# The inverse-dynamics controller uses the full model; the PID loop only
# sees the velocity error plus gravity feedforward, so it lags.

# %%
limit = default_torque_limits(model)
start = hanging_configuration(np.array([0.0, 0.4, -0.8, 0.5]))
ref = VelocityCommand(np.array([0.0, 0.3, 0.0, 0.0]))
for name in ("id", "pid"):
    state, pid = MachineState(start.copy(), np.zeros(6)), default_pid(model)
    trace = []
    for _ in range(60):
        if name == "id":
            tau_a = id_velocity_control(model, state, ref, torque_limit=limit)
        else:
            tau_a = pid_velocity_control(model, pid, state, ref, 0.01, torque_limit=limit)
        ddq = forward_dynamics(model, state.q, state.dq, np.concatenate([tau_a, np.zeros(2)]))
        state, _ = integrate_step(model, state, ddq, 0.01)
        trace.append(state.dq[1])
    print(name, " ".join(f"{v:.3f}" for v in trace[::10]))
