import time

import numpy as np
from dataclasses import replace

from fcps.harness import (ACTIVE_EPISODES, ExperimentConfig, build_environment,
                          _target_boxes, evaluation_grid, _run_one_seed)

config = ExperimentConfig(environment="active-cannon", episodes=ACTIVE_EPISODES,
                          grid_shape=(8, 8))
environment = build_environment(config)
boxes = _target_boxes(config, environment)
grid = evaluation_grid(environment, (8, 8))

for tag in ("aces", "faces"):
    for seed in (0, 1):
        cfg = replace(config, learner=replace(config.learner, algorithm=tag))
        t0 = time.time()
        learner, online, offline = _run_one_seed(cfg, environment, boxes, grid,
                                                 seed)
        print(f"{tag:6s} seed {seed}: {time.time() - t0:6.1f}s  "
              f"offline curve {np.round(offline, 2)}", flush=True)
