"""Train a small clf 2-b model on the synthetic pattern task and print a results table.

Runs in a few seconds on one CPU core.
"""

import logging

from excl.datapipe import SynthConfig
from excl.inference import emit_results_table
from excl.model import RunConfig
from excl.train import metrics_row
from excl.verify import synthetic_experiment

logging.basicConfig(level=logging.INFO, format="%(message)s")

# a class vector is added on every frame of the span; the query names the class
synth = SynthConfig(mode="pattern", t_min=20, t_max=60, feature_dim=16, seed=3)
run = RunConfig(objective="clf", video_lstm=2, predictor="b", embedding_dim=16,
                query_hidden=16, video_hidden=16, predictor_hidden=16, mlp_hidden=32,
                max_epochs=6, seed=0)

result = synthetic_experiment(synth, run, n_train=600, n_val=100, n_test=100)
print("epoch 0 (untrained) val:", result.history[0]["val"])
print("best epoch:", result.best_epoch, "of", result.epochs_run)
print()
print(emit_results_table([metrics_row(result.label, result.test, "synthetic")], ["synthetic"]))
