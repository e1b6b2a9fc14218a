"""Clustering metrics: ACC (Hungarian-matched), NMI, ARI, purity."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ContractError
from .cluster import contingency, hungarian


@dataclass
class MetricsReport:
    acc: float
    nmi: float
    ari: float
    pur: float

    def to_dict(self, decimals: int = 6) -> dict:
        return {k: round(float(v), decimals) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _pair(pred, truth):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.shape != truth.shape:
        raise ContractError(f"label length mismatch: {pred.size} vs {truth.size}")
    if pred.size == 0:
        raise ContractError("empty labelling")
    _, pred = np.unique(pred, return_inverse=True)
    _, truth = np.unique(truth, return_inverse=True)
    return pred, truth


def _table(pred, truth):
    return contingency(pred, truth, pred.max() + 1, truth.max() + 1)


def acc(pred, truth) -> float:
    """Fraction correct under the best one-to-one cluster -> class matching."""
    pred, truth = _pair(pred, truth)
    table = _table(pred, truth)
    k = max(table.shape)
    square = np.zeros((k, k), dtype=np.int64)
    square[: table.shape[0], : table.shape[1]] = table
    _, cost = hungarian(-square)
    return -cost / pred.size


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth, average: str = "geometric") -> float:
    """I(pred; truth) normalised by the geometric (or arithmetic) mean of the entropies."""
    pred, truth = _pair(pred, truth)
    n = pred.size
    table = _table(pred, truth).astype(np.float64)
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 or h_true == 0.0:
        return 0.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float((table[nz] / n * np.log(table[nz] * n / outer[nz])).sum())
    if average == "geometric":
        norm = np.sqrt(h_pred * h_true)
    elif average == "arithmetic":
        norm = 0.5 * (h_pred + h_true)
    else:
        raise ContractError(f"unknown NMI normalisation {average!r}")
    return float(min(max(mi / norm, 0.0), 1.0))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def ari(pred, truth) -> float:
    """Adjusted Rand index from the contingency table."""
    pred, truth = _pair(pred, truth)
    table = _table(pred, truth)
    sum_cells = _comb2(table).sum()
    sum_rows = _comb2(table.sum(axis=1)).sum()
    sum_cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(pred.size)
    expected = sum_rows * sum_cols / total if total > 0 else 0.0
    max_index = 0.5 * (sum_rows + sum_cols)
    if max_index == expected:
        # both partitions trivial in the same way
        return 1.0 if sum_cells == max_index else 0.0
    return float((sum_cells - expected) / (max_index - expected))


def pur(pred, truth) -> float:
    """(1/m) Σ over predicted clusters of the largest class overlap."""
    pred, truth = _pair(pred, truth)
    return float(_table(pred, truth).max(axis=1).sum() / pred.size)


def evaluate(pred, truth) -> MetricsReport:
    return MetricsReport(acc=acc(pred, truth), nmi=nmi(pred, truth), ari=ari(pred, truth),
                         pur=pur(pred, truth))
