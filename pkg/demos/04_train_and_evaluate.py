"""End-to-end miniature run: generate a synthetic dataset, train briefly,
predict saliency maps, and score them with the full metric suite.

This uses a reduced model and iteration budget so it finishes in about a
minute; the acceptance suite runs the full-size version.

Run:  python demos/04_train_and_evaluate.py   (writes into demos/out/)
"""

import time
from pathlib import Path

import numpy as np

from rrnet.dataio import resize_sample, synth_dataset, write_pgm
from rrnet.metrics import evaluate_pairs, pr_curve_csv, report_to_json
from rrnet.network import NetworkConfig, predict
from rrnet.tensor import Tensor, no_grad
from rrnet.training import TrainSettings, train_model

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

cfg = NetworkConfig(stage_channels=(8, 12, 16, 16, 16), decoder_width=12, input_size=(64, 64))
train_set = synth_dataset(4, seed=11, size=64)
held_out = synth_dataset(4, seed=99, size=64)

print("training 4 samples x 8 dihedral variants, 250 iterations ...")
start = time.perf_counter()
result = train_model(
    train_set,
    cfg,
    TrainSettings(iterations=250, batch_size=8, lr_initial=2e-4, lr_final=2e-5, seed=1),
    log_fn=lambda it, loss, lr: print(f"  iter {it:4d}  loss {loss:.4f}  lr {lr:.2e}"),
)
print(f"trained in {time.perf_counter() - start:.1f} s")

pairs = []
with no_grad():
    for s in held_out:
        rs = resize_sample(s, cfg.input_size)
        saliency = predict(Tensor(rs.image), result.params, cfg).map.data
        write_pgm(out_dir / f"{s.id}_pred.pgm", saliency)
        pairs.append((saliency.astype(np.float64), rs.mask.astype(np.float64), s.id))

report = evaluate_pairs(pairs)
print(f"held-out: MAE {report.mae:.3f}  F {report.f_beta_max:.3f}  E {report.e_m:.3f}  S {report.s_m:.3f}")

(out_dir / "report.json").write_text(report_to_json(report))
(out_dir / "pr_curve.csv").write_text(pr_curve_csv(report.pr))
print(f"report and P-R curve written under {out_dir}")
