"""Regression metrics.

Reports ask for "accuracy and precision"; for regression targets those are
read as RMSE / MAE (error size) and R^2 (share of variance explained).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import LengthMismatch, NoComparablePairs


@dataclass(frozen=True)
class Metrics:
    rmse: float
    mae: float
    r2: float | None
    n: int
    note: str = ""

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2, "n": self.n, "note": self.note}

    @classmethod
    def from_dict(cls, doc: dict) -> "Metrics":
        return cls(rmse=doc["rmse"], mae=doc["mae"], r2=doc.get("r2"), n=doc["n"], note=doc.get("note", ""))


def evaluate(predictions, actuals) -> Metrics:
    """RMSE, MAE and R^2 over pairs where neither side is MISSING.

    R^2 is 1 when the actuals are constant and matched exactly, and ``None``
    (MISSING) when they are constant but not matched.
    """
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    act = np.asarray(actuals, dtype=np.float64).reshape(-1)
    if pred.size != act.size:
        raise LengthMismatch(f"{pred.size} predictions vs {act.size} actuals")
    ok = ~(np.isnan(pred) | np.isnan(act))
    if not ok.any():
        raise NoComparablePairs("no row has both a prediction and an actual value")
    pred, act = pred[ok], act[ok]
    err = pred - act
    n = int(err.size)
    sse = float(np.sum(err * err))
    mae = float(np.mean(np.abs(err)))
    # When every |error| is equal, rounding can put sqrt(mean(e^2)) one ulp under mae.
    rmse = max(math.sqrt(sse / n), mae)
    centred = act - np.mean(act)
    sst = float(np.sum(centred * centred))
    note = ""
    if sst == 0.0:
        if sse == 0.0:
            r2 = 1.0
        else:
            r2 = None
            note = "R2 undefined: actual values are constant and predictions differ from them"
    else:
        r2 = 1.0 - sse / sst
    return Metrics(rmse=rmse, mae=mae, r2=r2, n=n, note=note)
