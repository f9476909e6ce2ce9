"""Poke the analytic door physics directly, below the environment layer.

Shows the free ring-down of a displaced door against the closed-form
solution of its linear ODE, the latch gating external torque, and the
attachment forming when the tip reaches the grasp point.
"""

import numpy as np

from doorsim.dynamics import (DEFAULT_CONSTANTS, init_state, knob_grasp_point,
                              orientation_error, step_physics)
from doorsim.worldgen import sample_world, with_overrides

# -- 1. free response of a displaced door -----------------------------------
world = with_overrides(sample_world(8, 0, "pull", "pull"), frame_frictionloss=0.0)
state = init_state(world, episode_seed=0)
state.door_angle = 0.1

inertia = world.door_mass_kg * world.door_width_m ** 2 / 3.0
damping = world.frame_damper * DEFAULT_CONSTANTS.frame_damper_si
spring = world.frame_spring * DEFAULT_CONSTANTS.frame_spring_si
s1, s2 = np.roots([inertia, damping, spring]).astype(complex)
c1 = -0.1 * s2 / (s1 - s2)
c2 = 0.1 - c1

print("door ring-down vs closed form (I phi'' + c phi' + k phi = 0):")
for step in range(101):
    if step % 20 == 0:
        t = step * 0.02
        exact = float(np.real(c1 * np.exp(s1 * t) + c2 * np.exp(s2 * t)))
        print(f"  t={t:4.1f}s  simulated={state.door_angle:.5f}  closed-form={exact:.5f}")
    state = step_physics(world, state, np.zeros(6))

# -- 2. the latch: torque on a latched door does nothing ---------------------
latched_world = sample_world(8, 3, "round", "pull")
st = init_state(latched_world, 0)
st.q[:3] = knob_grasp_point(latched_world, st)
st.q[3:6] = 0.0
st = step_physics(latched_world, st, np.zeros(6))
print(f"\nround-knob world: attached={st.attached}, latched={st.latched}")
for _ in range(100):
    st = step_physics(latched_world, st, np.array([1.0, 0.5, 0.0, 0, 0, 0]))
print(f"after 2 s of full pull: door_angle={st.door_angle:.4f} (latch holds), "
      f"knob_angle={st.knob_angle:.3f} rad")

# -- 3. attachment engagement -------------------------------------------------
lever_world = sample_world(8, 5, "lever", "pull")
st = init_state(lever_world, 0)
print(f"\nlever world: tip starts {np.linalg.norm(st.q[:3] - knob_grasp_point(lever_world, st)):.2f} m"
      f" from the handle, orientation error {orientation_error(lever_world, st):.2f} rad")
st.q[:3] = knob_grasp_point(lever_world, st)
st.q[3:6] = 0.0
st = step_physics(lever_world, st, np.zeros(6))
print(f"tip placed on the handle and aligned -> attached={st.attached}")

# press the handle down, then pull the door
for _ in range(60):
    st = step_physics(lever_world, st, np.array([0, 0, -0.8, 0, 0, 0]))
print(f"after pressing down 1.2 s: knob_angle={st.knob_angle:.2f} rad "
      f"(bypass at {DEFAULT_CONSTANTS.unlatch_fraction * lever_world.knob_rot_range_rad:.2f}),"
      f" latched={st.latched}")
for _ in range(100):
    st = step_physics(lever_world, st, np.array([0.7, 0, 0, 0, 0, 0]))
print(f"after pulling 2 s: door_angle={st.door_angle:.2f} rad, "
      f"open past 0.2: {st.door_angle_max > 0.2}")
