"""Binned-frequency CVR predictor and evaluation metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.metrics import roc_auc_score

from .core import PriceLadder

NONMONOTONE_JUMP = 0.01


class DataError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass
class CvrModel:
    """Either a bins x bins quantile-cell table or an external CVR matrix.

    ``table`` rows are cells (binned) or customers (matrix); columns follow
    ladder levels, highest price first.
    """

    kind: str
    ladder: PriceLadder
    table: np.ndarray
    bins: int = 0
    edges_f1: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edges_f2: np.ndarray = field(default_factory=lambda: np.zeros(0))
    row_of_id: dict = field(default_factory=dict)

    def cells(self, f1, f2) -> np.ndarray:
        a = np.searchsorted(self.edges_f1, np.asarray(f1, dtype=float), side="right")
        b = np.searchsorted(self.edges_f2, np.asarray(f2, dtype=float), side="right")
        return a * self.bins + b

    def predict_features(self, f1, f2) -> np.ndarray:
        """(N, J) raw predictions for feature arrays."""
        if self.kind != "binned":
            raise TypeError("feature prediction needs a binned model")
        return self.table[self.cells(f1, f2)]

    def predict_ids(self, ids) -> np.ndarray:
        if self.kind != "matrix":
            raise TypeError("id lookup needs a matrix model")
        return self.table[[self.row_of_id[int(i)] for i in ids]]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "ladder": self.ladder.to_dict(),
             "table": self.table.tolist()}
        if self.kind == "binned":
            d.update(bins=self.bins, edges_f1=self.edges_f1.tolist(),
                     edges_f2=self.edges_f2.tolist())
        else:
            d["ids"] = sorted(self.row_of_id, key=self.row_of_id.get)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CvrModel":
        lad = PriceLadder(d["ladder"]["base_price"], tuple(d["ladder"]["coupons"]))
        table = np.asarray(d["table"], dtype=float)
        if d["kind"] == "binned":
            return cls("binned", lad, table, int(d["bins"]),
                       np.asarray(d["edges_f1"]), np.asarray(d["edges_f2"]))
        return cls("matrix", lad, table, row_of_id={int(k): r for r, k in enumerate(d["ids"])})

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "CvrModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_arrays(f1, f2, prices, purchased, bins: int = 20,
               ladder: PriceLadder | None = None) -> CvrModel:
    """Laplace-smoothed purchase frequency per (quantile cell, price)."""
    ladder = ladder or PriceLadder.default()
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    y = np.asarray(purchased, dtype=float)
    if f1.size == 0:
        raise DataError("no training records")
    if bins < 1:
        raise ValueError("bins must be at least 1")
    lv = ladder.levels_of_prices(prices)
    J = ladder.J
    if np.bincount(lv, minlength=J).min() == 0:
        raise DataError("every ladder price needs at least one record")
    probs = np.linspace(0.0, 1.0, bins + 1)[1:-1]
    e1, e2 = np.quantile(f1, probs), np.quantile(f2, probs)
    model = CvrModel("binned", ladder, np.zeros((bins * bins, J)), bins, e1, e2)
    idx = model.cells(f1, f2) * J + lv
    trials = np.bincount(idx, minlength=bins * bins * J).reshape(-1, J)
    wins = np.bincount(idx, weights=y, minlength=bins * bins * J).reshape(-1, J)
    # empty (cell, price) entries back off along the features, never along
    # price: first the same f1 row at that price, then that price overall
    t_row = trials.reshape(bins, bins, J).sum(1)
    w_row = wins.reshape(bins, bins, J).sum(1)
    level_rate = (wins.sum(0) + 1.0) / (trials.sum(0) + 2.0)
    row_rate = np.where(t_row > 0, (w_row + 1.0) / (t_row + 2.0), level_rate[None, :])
    fallback = np.repeat(row_rate, bins, axis=0)
    model.table = np.where(trials > 0, (wins + 1.0) / (trials + 2.0), fallback)
    return model


def fit(records, bins: int = 20, ladder: PriceLadder | None = None) -> CvrModel:
    """Fit from dict-like records with keys f1, f2, price, purchased."""
    records = list(records)
    if not records:
        raise DataError("no training records")
    cols = {k: [r[k] for r in records] for k in ("f1", "f2", "price", "purchased")}
    return fit_arrays(cols["f1"], cols["f2"], cols["price"], cols["purchased"], bins, ladder)


def from_matrix(ids, Q, ladder: PriceLadder) -> CvrModel:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != ladder.J:
        raise DataError("CVR matrix width does not match the ladder")
    return CvrModel("matrix", ladder, Q, row_of_id={int(i): r for r, i in enumerate(ids)})


def predict(model: CvrModel, customer) -> np.ndarray:
    """Raw CVR vector for one customer (object with id/f1/f2)."""
    if model.kind == "matrix":
        return model.table[model.row_of_id[int(customer.id)]].copy()
    return model.table[int(model.cells(customer.f1, customer.f2))].copy()


def nonmonotone_mask(Q, jump: float = NONMONOTONE_JUMP) -> np.ndarray:
    """Rows where a higher price beats the adjacent lower price by > jump."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    # small slack keeps a jump of exactly `jump` uncounted despite rounding
    return np.any(Q[:, :-1] - Q[:, 1:] > jump + 1e-12, axis=1)


def nonmonotonic_fraction(Q, jump: float = NONMONOTONE_JUMP) -> float:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape[0] == 0:
        raise ValueError("no predictions")
    return float(nonmonotone_mask(Q, jump).mean())


def auc(scores, labels) -> float:
    labels = np.asarray(labels, dtype=bool)
    if labels.all() or not labels.any():
        raise MetricError("AUC needs both classes")
    return float(roc_auc_score(labels, np.asarray(scores, dtype=float)))


def pcoc(predicted, outcomes) -> float:
    total = float(np.sum(np.asarray(outcomes, dtype=float)))
    if total <= 0:
        raise MetricError("PCOC undefined without purchases")
    return float(np.sum(np.asarray(predicted, dtype=float))) / total


def read_cvr_csv(path, J: int | None = None):
    """Returns (ids, Q) from a `customer_id,q_1..q_J` file."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        head = next(rd)
        qcols = [k for k, h in enumerate(head) if h.startswith("q_")]
        if head[0] != "customer_id" or not qcols:
            raise DataError("expected header customer_id,q_1..q_J")
        if J is not None and len(qcols) != J:
            raise DataError(f"expected {J} CVR columns, found {len(qcols)}")
        ids, rows = [], []
        for r in rd:
            if r:
                ids.append(int(r[0]))
                rows.append([float(r[k]) for k in qcols])
    return np.array(ids, dtype=np.int64), np.array(rows, dtype=float).reshape(len(ids), len(qcols))


def write_cvr_csv(path, ids, Q) -> None:
    Q = np.asarray(Q)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["customer_id"] + [f"q_{j + 1}" for j in range(Q.shape[1])])
        for i, row in zip(ids, Q):
            wr.writerow([int(i)] + [repr(float(x)) for x in row])
