"""Why a video LSTM matters: frame-local 1-a against recurrent 2-b.

In temporal-context mode only the first frame of the span carries the class
vector. The span then runs for as many frames as there are marker frames
after it, so the end frame looks like any other frame. A model that scores
frames one at a time (1-a) has to guess the end. A recurrent model can count.
Takes under a minute.
"""

from excl.datapipe import SynthConfig
from excl.inference import emit_results_table
from excl.model import RunConfig
from excl.train import metrics_row
from excl.verify import synthetic_experiment

synth = SynthConfig(mode="temporal-context", t_min=20, t_max=80, amplitude=6.0, seed=100)
rows = []
for video_lstm, predictor in ((1, "a"), (2, "b")):
    run = RunConfig(objective="clf", video_lstm=video_lstm, predictor=predictor, query_hidden=32,
                    video_hidden=32, predictor_hidden=16, mlp_hidden=32, max_epochs=20, seed=0)
    r = synthetic_experiment(synth, run, 1000, 150, 150)
    print(f"{r.label}: {r.epochs_run} epochs, {r.seconds:.0f}s")
    rows.append(metrics_row(r.label, r.test, "context"))

print()
print(emit_results_table(rows, ["context"]))
