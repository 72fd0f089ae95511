"""
Scoring a classifier
====================

Confusion matrix, accuracy, macro F1, Cohen's kappa and per-class F1 for
a set of predicted sleep stages.
"""

import numpy as np

from eegmobile.metrics import confusion, format_table, report

rng = np.random.default_rng(0)
y_true = rng.integers(0, 5, size=400)

# a noisy classifier that mislabels N1 most often
y_pred = y_true.copy()
flip = rng.random(y_true.size) < np.where(y_true == 1, 0.5, 0.12)
y_pred[flip] = rng.integers(0, 5, size=flip.sum())

cm = confusion(y_true, y_pred)
print(cm)
r = report(cm)
print(format_table([("noisy", r)]))

# agreement no better than chance gives kappa 0
print("chance-level kappa:", report([[1, 1], [1, 1]]).kappa)
# a class never seen nor predicted is flagged rather than dividing by zero
print("absent classes:", report(np.diag([3, 0, 4, 2, 5])).absent)
