"""Off-policy training at toy scale plus trajectory tracing.

SAC fills a replay ring while a single worker collects episodes, then takes
one gradient step per collected environment step (soft Bellman critic loss
against EMA targets, squashed-Gaussian policy loss, automatic entropy
temperature).  The demo uses short episodes to stay quick; the full-scale
configuration uses 512-step episodes and a 10^6-transition buffer.

Afterwards, a single oracle episode is re-run step by step and written as a
JSONL trace, the same format `doorsim replay` emits.
"""

import json
import tempfile

import numpy as np

from doorsim.env import VecDoorEnv
from doorsim.oracle import OracleController
from doorsim.ppo import TrainSetup
from doorsim.sac import SacConfig, train_sac
from doorsim.worldgen import sample_worlds
from doorsim.env import TraceWriter

worlds = tuple(sample_worlds(606, 20, "pull", "pull"))
cfg = SacConfig(episodes_per_epoch=4, steps_per_episode=64, batch=64,
                buffer_capacity=4096, hidden=32)

print("epoch | env steps | mean episode reward | alpha")
result = train_sac(cfg, TrainSetup(worlds=worlds), epochs=3, run_seed=11)
for row in result.rows:
    print(f"{row['epoch']:5d} | {row['env_steps']:9d} | {row['mean_reward']:19.1f}"
          f" | {row['alpha']:.3f}")
print(f"replay holds {result.replay_size} transitions "
      f"(ring capacity {cfg.buffer_capacity})")

# -- trace one oracle episode ---------------------------------------------------
world = worlds[0]
env = VecDoorEnv([world], arm="hook", max_episode_steps=512)
controller = OracleController([world], arm="hook")
obs = env.reset([3])
controller.begin_episode()
info = env.current_info()

with tempfile.NamedTemporaryFile("r", suffix=".jsonl", delete=False) as fh:
    trace_path = fh.name
with TraceWriter(trace_path) as trace:
    for _ in range(160):
        actions = controller.act(obs, info)
        obs, reward, done, info = env.step(actions)
        st = env.state
        trace.write(info["t"][0], st.q_matrix(6)[0], st.qdot_matrix(6)[0],
                    np.clip(actions[0], -1, 1), info["phi"][0], info["psi"][0],
                    info["latched"][0], info["attached"][0], reward[0])
        if info["success"][0]:
            break

lines = open(trace_path).read().strip().split("\n")
print(f"\ntrace: {len(lines)} records in {trace_path}")
first, last = json.loads(lines[0]), json.loads(lines[-1])
print(f"first record: t={first['t']}, phi={first['phi']:.3f}, attached={first['attached']}")
print(f"last record:  t={last['t']}, phi={last['phi']:.3f}, attached={last['attached']}")
