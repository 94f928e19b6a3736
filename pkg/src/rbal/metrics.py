"""Decision accuracy, macro-f1 and aggregation of campaign trajectories across repetitions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

HIST_BIN = 25


def decision_accuracy(chosen, optimal) -> float:
    """Fraction of decisions that agree with the perfect-information action."""
    a = np.asarray(chosen)
    b = np.asarray(optimal)
    if a.shape != b.shape:
        raise ValueError("action lists differ in length")
    if a.size == 0:
        raise ValueError("cannot score an empty action list")
    return float(np.mean(a == b))


def confusion_matrix(predicted, truth, K: int) -> np.ndarray:
    """Rows are true classes, columns predicted (labels 1..K)."""
    p = np.asarray(predicted, dtype=int)
    t = np.asarray(truth, dtype=int)
    C = np.zeros((K, K), dtype=int)
    np.add.at(C, (t - 1, p - 1), 1)
    return C


def macro_f1(predicted, truth, K: int) -> float:
    """Unweighted mean of per-class f1; a zero denominator makes that P, R or f1 zero."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError("label lists differ in length")
    if p.size == 0:
        raise ValueError("cannot score an empty label list")
    C = confusion_matrix(p, t, K)
    tp = np.diag(C).astype(float)
    pred_tot = C.sum(axis=0)
    true_tot = C.sum(axis=1)
    prec = np.divide(tp, pred_tot, out=np.zeros(K), where=pred_tot > 0)
    rec = np.divide(tp, true_tot, out=np.zeros(K), where=true_tot > 0)
    den = prec + rec
    f1 = np.divide(2 * prec * rec, den, out=np.zeros(K), where=den > 0)
    return float(f1.mean())


def class_proportions(labels, K: int) -> np.ndarray:
    y = np.asarray(labels, dtype=int)
    counts = np.bincount(y - 1, minlength=K)[:K].astype(float)
    return counts / max(counts.sum(), 1.0)


def carry_forward(trajectories: Sequence[Sequence[float]], length: int = None) -> np.ndarray:
    """Stack ragged trajectories, padding each with its own last value."""
    trajs = [np.asarray(t, dtype=float) for t in trajectories]
    L = length or max(len(t) for t in trajs)
    out = np.empty((len(trajs), L))
    for i, t in enumerate(trajs):
        out[i, :len(t)] = t[:L]
        out[i, len(t):] = t[-1]
    return out


def trajectory_stats(stack: np.ndarray) -> dict:
    # sorting each column first makes the float sums independent of run order
    stack = np.sort(stack, axis=0)
    q25, med, q75 = np.percentile(stack, [25, 50, 75], axis=0)
    return {
        "median": med.tolist(),
        "q25": q25.tolist(),
        "q75": q75.tolist(),
        "iqr": (q75 - q25).tolist(),
        "mean": stack.mean(axis=0).tolist(),
        "std": stack.std(axis=0).tolist(),
    }


@dataclass
class RunAggregate:
    n_runs: int
    decision_accuracy: dict
    macro_f1: dict
    class_proportions: list       # per class, stats dict
    query_counts: list
    query_count_hist: dict        # {"edges": [...], "counts": [...]}
    observation_hist: dict        # queries per 25-observation group

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "decision_accuracy": self.decision_accuracy,
            "macro_f1": self.macro_f1,
            "class_proportions": self.class_proportions,
            "query_counts": self.query_counts,
            "query_count_hist": self.query_count_hist,
            "observation_hist": self.observation_hist,
        }


def _histogram(values, bin_width: int = HIST_BIN, upper: int = None) -> dict:
    v = np.asarray(values, dtype=int)
    hi = max(int(v.max()) + 1 if v.size else 1, upper or 0)
    edges = np.arange(0, hi + bin_width, bin_width)
    counts, _ = np.histogram(v, bins=edges)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def aggregate_runs(results) -> RunAggregate:
    """Summaries per query index across campaign results, plus histograms.

    Order of ``results`` does not matter: every statistic is symmetric in the runs.
    """
    results = list(results)
    if not results:
        raise ValueError("nothing to aggregate")
    acc = carry_forward([r.accuracy_trajectory for r in results])
    f1 = carry_forward([r.f1_trajectory for r in results])
    K = np.asarray(results[0].class_prop_trajectory).shape[1]
    props = [trajectory_stats(carry_forward([np.asarray(r.class_prop_trajectory)[:, k] for r in results]))
             for k in range(K)]
    qc = [int(r.query_count) for r in results]
    obs = np.concatenate([np.asarray(r.query_positions, dtype=int) for r in results])
    n_steps = max(int(r.n_steps) for r in results)
    return RunAggregate(
        n_runs=len(results),
        decision_accuracy=trajectory_stats(acc),
        macro_f1=trajectory_stats(f1),
        class_proportions=props,
        query_counts=sorted(qc),
        query_count_hist=_histogram(qc),
        observation_hist=_histogram(obs, upper=n_steps),
    )
