"""The evaluation metrics on small hand-made record sets.

Run: python demos/05_metrics_walkthrough.py
"""

import math

import numpy as np

from deepfake_vit.metrics import (confusion_and_f1, export_correlation, log_loss, make_records, roc_auc,
                                  roc_curve)

# Fake is the positive class. A single coin-flip prediction costs ln 2.
print("log loss of one 0.5 prediction:", log_loss(make_records([1], [0.5])), "=", math.log(2))

labels = [1, 1, 1, 0, 0, 0]
scores = [0.9, 0.8, 0.5, 0.6, 0.3, 0.1]
recs = make_records(labels, scores)

# AUC counts fake-above-real pairs; one of the nine pairs is inverted here.
print(f"AUC = {roc_auc(recs):.4f} (8 of 9 pairs ordered)")
for t, fpr, tpr in roc_curve(recs):
    print(f"  threshold {t:>4}  FPR {fpr:.3f}  TPR {tpr:.3f}")

# At the default 0.55 threshold, a score of exactly 0.55 counts as fake.
rep = confusion_and_f1(recs)
print(f"threshold {rep.threshold}: TP {rep.tp} FP {rep.fp} TN {rep.tn} FN {rep.fn}, f1 {rep.f1:.1f}")
for t in (0.35, 0.55, 0.75):
    r = confusion_and_f1(recs, t)
    print(f"  at {t}: TP {r.tp}, FN {r.fn}, f1 {r.f1:.1f}")

# Correlating two models' predictions sample by sample.
other = make_records(labels, np.clip(np.array(scores) + [0.05, -0.1, 0.2, -0.3, 0.1, 0.0], 0, 1))
corr = export_correlation(recs, other)
print(f"Pearson correlation between the two models: {corr.pearson:.4f}")
print(corr.to_csv())
