"""Segmentation evaluation: confusion accumulation and the four standard
pixel/region metrics (pixel accuracy, mean accuracy, mean IU, frequency
weighted IU).  Classes with zero ground-truth support are excluded from the
class means.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, UndefinedMetricError


class ConfusionMatrix:
    """Counts n[i, j]: elements of ground-truth class i predicted as class j."""

    def __init__(self, n_classes: int, class_names=None):
        if n_classes < 1:
            raise ContractError("need at least one class")
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        self.class_names = tuple(class_names) if class_names else tuple(
            str(i) for i in range(n_classes))

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        """t_i: total ground-truth elements per class."""
        return self.counts.sum(axis=1)

    def accumulate(self, predicted, truth) -> "ConfusionMatrix":
        pred = np.asarray(predicted, dtype=np.int64).reshape(-1)
        gt = np.asarray(truth, dtype=np.int64).reshape(-1)
        if pred.shape != gt.shape:
            raise ContractError("prediction/truth shape mismatch")
        if pred.size:
            if pred.min() < 0 or pred.max() >= self.n_classes or gt.min() < 0 or gt.max() >= self.n_classes:
                raise ContractError("class index out of range")
            flat = np.bincount(gt * self.n_classes + pred, minlength=self.n_classes ** 2)
            self.counts += flat.reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ContractError("cannot merge confusion matrices of different sizes")
        self.counts += other.counts
        return self

    def _check_nonempty(self):
        if self.counts.sum() == 0:
            raise UndefinedMetricError("metrics undefined on an empty confusion matrix")

    def pixel_accuracy(self) -> float:
        self._check_nonempty()
        return float(np.diag(self.counts).sum() / self.counts.sum())

    def mean_accuracy(self) -> float:
        self._check_nonempty()
        t = self.support
        present = t > 0
        return float(np.mean(np.diag(self.counts)[present] / t[present]))

    def _iu(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.support
        present = t > 0
        diag = np.diag(self.counts)
        union = t + self.counts.sum(axis=0) - diag
        iu = np.zeros(self.n_classes)
        iu[present] = diag[present] / union[present]
        return iu, present

    def mean_iu(self) -> float:
        self._check_nonempty()
        iu, present = self._iu()
        return float(np.mean(iu[present]))

    def freq_weighted_iu(self) -> float:
        self._check_nonempty()
        iu, present = self._iu()
        t = self.support
        return float((t[present] * iu[present]).sum() / t.sum())

    def all_metrics(self) -> dict[str, float]:
        return {
            "pixel_accuracy": self.pixel_accuracy(),
            "mean_accuracy": self.mean_accuracy(),
            "mean_iu": self.mean_iu(),
            "freq_weighted_iu": self.freq_weighted_iu(),
        }

    def format_table(self) -> str:
        """Percentages to 2 decimals, aligned."""
        m = self.all_metrics()
        rows = [("pixel acc.", m["pixel_accuracy"]),
                ("mean acc.", m["mean_accuracy"]),
                ("mean IU", m["mean_iu"]),
                ("f.w. IU", m["freq_weighted_iu"])]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {100.0 * value:6.2f}" for name, value in rows)

    def to_csv(self) -> str:
        m = self.all_metrics()
        header = "pixel_accuracy,mean_accuracy,mean_iu,freq_weighted_iu"
        values = ",".join("%.6f" % m[k] for k in header.split(","))
        return header + "\n" + values + "\n"
