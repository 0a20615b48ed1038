"""Smallest end-to-end run: synthetic corpus, mock engagers, the full grid.

    python3 demos/quickstart.py [seed]
"""

import sys

from topic_exposure.evaluation import (ExperimentConfig, build_dataset, render_report,
                                       run_experiment)
from topic_exposure.neuralnet import TrainConfig
from topic_exposure.synth import SynthConfig, generate_corpus

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

corpus = generate_corpus(SynthConfig(n_users=20_000, seed=seed))
ds = build_dataset(corpus.users, corpus.tweets, seed=seed, extra_draws=4)
print(f"{len(ds.engager_rows)} engagers, {len(ds.contributor_rows)} contributors, "
      f"{len(ds.mock_rows)} mock engagers, t = {ds.t}")

cfg = ExperimentConfig(seed=seed, label="quickstart", pf_max_iters=100, pf_tol=1e-4,
                       folds=(0.6, 0.1, 0.3),
                       train=TrainConfig(epochs=100, batch_size=32, patience=10, seed=seed))
report = run_experiment(ds, cfg)
print(render_report(report, "markdown"))
