"""Retrieval metrics over per-round candidate rankings."""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MetricsReport:
    mrr: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    mean_rank: float
    ndcg: float = None
    rounds: int = 0

    CSV_HEADER = "step,split,loss,mrr,r1,r5,r10,mean_rank,ndcg"

    def csv_row(self, step, split, loss):
        ndcg = "" if self.ndcg is None else repr(self.ndcg)
        loss = "" if loss is None else repr(float(loss))
        return (
            f"{step},{split},{loss},{self.mrr!r},{self.r_at_1!r},{self.r_at_5!r},"
            f"{self.r_at_10!r},{self.mean_rank!r},{ndcg}"
        )


def compute_metrics(gt_ranks, n_candidates):
    """MRR, recall@k, and mean rank from 1-based ground-truth ranks."""
    if not gt_ranks:
        raise ValueError("compute_metrics: empty rank list")
    for r in gt_ranks:
        if not 1 <= r <= n_candidates:
            raise ValueError(f"rank {r} outside [1, {n_candidates}]")
    count = len(gt_ranks)
    mrr = sum(1.0 / r for r in gt_ranks) / count
    recall = {k: sum(1 for r in gt_ranks if r <= k) / count for k in (1, 5, 10)}
    mean_rank = sum(gt_ranks) / count
    return MetricsReport(
        mrr=mrr,
        r_at_1=recall[1],
        r_at_5=recall[5],
        r_at_10=recall[10],
        mean_rank=mean_rank,
        rounds=count,
    )


def ndcg(ranked_relevance):
    """Normalized discounted cumulative gain of a 0/1 relevance list.

    The gain of the item at 1-based position i is rel_i / log2(i + 1),
    summed over the whole ranking; the normalizer places all relevant
    items first.
    """
    n_relevant = sum(1 for r in ranked_relevance if r)
    if n_relevant == 0:
        raise ValueError("ndcg: no relevant candidates")
    dcg = sum(
        rel / math.log2(i + 2) for i, rel in enumerate(ranked_relevance) if rel
    )
    ideal = sum(1.0 / math.log2(i + 2) for i in range(n_relevant))
    return dcg / ideal
