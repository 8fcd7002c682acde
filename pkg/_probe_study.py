import time

import numpy as np

from fcps.harness import (ExperimentConfig, cumulative_online, emit, study)

t0 = time.time()
config = ExperimentConfig(
    algorithms=("c-reps", "bo-cps", "bo-fcps-her", "bo-fcps"))
results = study(config)
emit(results, "tests/_acceptance_cache/study-default-150x10")

by_tag = {cfg.algorithm: res for cfg, res in results}
for tag, res in by_tag.items():
    sums = [cumulative_online(res, t) for t in (50, 100, 150)]
    per_seed = res.online_rewards.sum(axis=1)
    print(f"{tag:12s} t50 {sums[0]:8.1f}  t100 {sums[1]:8.1f}  "
          f"t150 {sums[2]:8.1f}  sd(t150) {per_seed.std():6.1f}")
    print(f"             offline curve {np.round(res.offline_rewards.mean(axis=0), 2)}")

fcps = by_tag["bo-fcps"]
cps = by_tag["bo-cps"]
her = by_tag["bo-fcps-her"]
creps = by_tag["c-reps"]
idx60 = fcps.offline_episodes.index(60)
print("\nAC1 fcps@60 vs cps@150:",
      fcps.offline_rewards.mean(axis=0)[idx60],
      cps.offline_rewards.mean(axis=0)[-1])
for t in (50, 100, 150):
    f, h, c, r = (cumulative_online(x, t) for x in (fcps, her, cps, creps))
    print(f"AC2 t={t}: fcps {f:.1f} her {h:.1f} cps {c:.1f} creps {r:.1f} | "
          f"f>h {f > h} h>c {h > c} c>r {c > r} gap {abs(f) <= 0.8 * abs(c)}")
print(f"total {time.time() - t0:.0f}s")
