"""Teach the transmitter where to spend a scarce power budget.

A seed spans several coherence blocks; the agent sees each block's gain
and the remaining budget, and only the final image quality is rewarded.
Compares the trained policy against an even split on frozen traces.
"""

from dataclasses import replace

import numpy as np

from megsim import channel as ch
from megsim import config, experiments, power_rl
from megsim.corpus import sample_prompts
from megsim.util import derive_seed

cfg = replace(config.desk_config(), out="demo-runs")
print("training or loading the model bundle (cached under demo-runs/) ...")
bundle = experiments.cmd_train(cfg).bundle

prompts = sample_prompts(16, derive_seed(cfg.seed, 21))
env = power_rl.SeedTransmissionEnv(bundle, prompts, 0.5,
                                   snr_db=cfg.power_snr_db, p_max=0.5,
                                   block_length=cfg.block_length, seed=7)
print(f"each episode: {env.num_blocks} blocks of {env.block_length} symbols, "
      f"budget 0.5 (even split gives {0.5 / env.num_blocks:.3f} per block)\n")

print("training the allocator ...")
ppo = power_rl.PpoConfig(update_rounds=120, seed=3)
agent, history = power_rl.train_agent(env, ppo)
print("mean terminal reward:",
      " -> ".join(f"{history[i][1]:.3f}" for i in (0, len(history) // 2, -1)))

rng = np.random.default_rng(123)
frozen = [ch.sample_fading_trace(env.model, env.num_blocks, rng)
          for _ in range(100)]
drl = power_rl.evaluate(agent, env, frozen)
uniform = power_rl.evaluate(power_rl.uniform_policy(env.num_blocks), env,
                            frozen)
wins = int(np.sum(drl > uniform))
print(f"\nfrozen-trace comparison (fid proxy, lower is better):")
print(f"  even split: {-np.mean(uniform):.4f}")
print(f"  trained:    {-np.mean(drl):.4f}   ({wins}/100 paired wins)")

trace = frozen[0]
state = env.reset(trace, noise_seed=1)
done, powers = False, []
while not done:
    a = agent.mean_action(state)
    state, _, done, info = env.step(a)
    powers.append(info["power"])
print("\none trace, gains: ", np.round(trace.gains, 2))
print("learned powers:    ", np.round(powers, 3),
      f"(sum {sum(powers):.3f} <= 0.5)")
