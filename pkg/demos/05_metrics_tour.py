"""The evaluation metrics on constructed cases where the right answer is
obvious, plus the degenerate conventions (empty predictions, all-background
ground truth, adaptive thresholds).

Run:  python demos/05_metrics_tour.py
"""

import numpy as np

from rrnet.metrics import THRESHOLDS, e_measure, f_measure, mae, pr_curve, s_measure

rng = np.random.default_rng(5)

gt = np.zeros((32, 32))
gt[8:20, 10:26] = 1.0  # one rectangular object

print("== perfect prediction")
print(f"  MAE {mae(gt, gt):.4f}  F {f_measure(gt, gt):.4f}  "
      f"S {s_measure(gt, gt):.4f}  E {e_measure(gt, gt):.4f}")

print("== inverted prediction")
inv = 1.0 - gt
print(f"  MAE {mae(inv, gt):.4f}  F {f_measure(inv, gt):.4f}  "
      f"S {s_measure(inv, gt):.4f}  E {e_measure(inv, gt):.4f}")

print("== blurred prediction (object smeared outward)")
blur = gt.copy()
for _ in range(3):
    padded = np.pad(blur, 1)
    blur = (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:] + blur * 4
    ) / 8.0
print(f"  MAE {mae(blur, gt):.4f}  F {f_measure(blur, gt):.4f}  "
      f"S {s_measure(blur, gt):.4f}  E {e_measure(blur, gt):.4f}")

print("== uniform 0.5 prediction")
half = np.full_like(gt, 0.5)
print(f"  MAE {mae(half, gt):.4f}  F {f_measure(half, gt):.4f}  "
      f"S {s_measure(half, gt):.4f}  E {e_measure(half, gt):.4f}")

print("== P-R curve endpoints (threshold 0 predicts everything)")
curve = pr_curve(blur, gt)
print(f"  t=0.0: precision {curve[0, 0]:.4f} recall {curve[0, 1]:.4f}")
k = 128
print(f"  t={THRESHOLDS[k]:.3f}: precision {curve[k, 0]:.4f} recall {curve[k, 1]:.4f}")
print(f"  t=1.0: precision {curve[255, 0]:.4f} recall {curve[255, 1]:.4f}")

print("== metrics are invariant under joint flips/rotations")
s = rng.uniform(size=gt.shape)
print(f"  original F  {f_measure(s, gt):.10f}")
print(f"  rotated  F  {f_measure(np.rot90(s).copy(), np.rot90(gt).copy()):.10f}")
