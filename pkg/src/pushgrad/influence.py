"""Influence of individual training instances on the total validation cost.

With per-instance mask weights as hyper-parameters (all ones during
training), removing instance ``k`` of client ``i`` moves its weight from 1
to 0, so the change in the total validation cost is approximated to first
order by ``-dF/dlam_{i,k}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.metrics import f1_score, r2_score

from .innersolve import NewtonConvergenceError, newton_consensus_solve
from .oracle import total_outer

logger = logging.getLogger(__name__)


class InfluenceRecord(NamedTuple):
    client_id: int
    instance_id: int
    predicted_delta: float
    actual_delta: float


@dataclass
class InfluenceReport:
    records: list
    r2: float
    f1: float

    @property
    def predicted(self) -> np.ndarray:
        return np.array([r.predicted_delta for r in self.records])

    @property
    def actual(self) -> np.ndarray:
        return np.array([r.actual_delta for r in self.records])


def predict_influence(hypergradient) -> dict:
    """``{(client, instance): -dF/dlam_{client, instance}}``."""
    return {(i, k): -float(g)
            for i, grad in enumerate(hypergradient)
            for k, g in enumerate(np.asarray(grad))}


def top_k_targets(predicted: dict, top_k: int = 50) -> list:
    """Keys with the largest ``|predicted|``; ties go to the smaller (client, instance)."""
    if top_k > len(predicted):
        raise ValueError(f"top_k={top_k} exceeds the {len(predicted)} candidates")
    ranked = sorted(predicted.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
    return [key for key, _ in ranked[:top_k]]


def retrain_influence_oracle(clients, targets, lam=None, x0=None, tol=1e-10) -> dict:
    """Actual ``F_after - F_before`` for removing each target, by exact re-solve.

    Solves are warm-started from the full-data optimum. A target whose solve
    fails maps to NaN and is logged.
    """
    if lam is None:
        lam = [np.ones(c.d_lambda) for c in clients]
    lam = [np.array(l, dtype=float) for l in lam]
    x_full = newton_consensus_solve(clients, lam, tol=tol, x0=x0)
    f_full = total_outer(clients, lam, x_full)
    out = {}
    for i, k in targets:
        if not (0 <= i < len(clients) and 0 <= k < lam[i].size):
            raise IndexError(f"target ({i}, {k}) out of range")
        removed = [l.copy() for l in lam]
        removed[i][k] = 0.0
        try:
            x = newton_consensus_solve(clients, removed, tol=tol, x0=x_full)
        except NewtonConvergenceError as exc:
            logger.warning("retraining without (%d, %d) failed: %s", i, k, exc)
            out[(i, k)] = float("nan")
            continue
        out[(i, k)] = total_outer(clients, removed, x) - f_full
    return out


def score_report(predicted: dict, actual: dict, top_k: int = 50) -> InfluenceReport:
    """R2 and F1 over the ``top_k`` instances with the largest predicted ``|delta|``.

    F1 treats "removal decreases the validation cost" (delta < 0) as the
    positive class. R2 is NaN when the actual deltas have zero variance.
    """
    targets = top_k_targets(predicted, top_k)
    missing = [t for t in targets if t not in actual]
    if missing:
        raise KeyError(f"no actual delta for {missing[:3]}")
    records = [InfluenceRecord(i, k, predicted[(i, k)], actual[(i, k)]) for i, k in targets]
    records = [r for r in records if np.isfinite(r.actual_delta)]
    pred = np.array([r.predicted_delta for r in records])
    act = np.array([r.actual_delta for r in records])
    if len(act) < 2 or np.allclose(act, act.mean(), rtol=0, atol=0):
        r2 = float("nan")
    else:
        r2 = float(r2_score(act, pred))
    f1 = float(f1_score(act < 0, pred < 0, zero_division=1.0))
    return InfluenceReport(records, r2, f1)
