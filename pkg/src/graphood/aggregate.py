"""Neighborhood aggregation of OOD scores (convex combination with neighbor mean)."""

from __future__ import annotations

from dataclasses import dataclass

from .graph import Graph, neighbor_mean
from .scores import ScoreVector


@dataclass(frozen=True)
class GoodConfig:
    alpha_ood: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha_ood <= 1.0:
            raise ValueError("alpha_ood must be in [0, 1]")


def good_aggregate(g: Graph, base: ScoreVector, cfg: GoodConfig) -> ScoreVector:
    """(1 - alpha) * own score + alpha * mean score of the neighbors.

    The base vector must cover every vertex of the graph; isolated vertices
    fall back to their own score.
    """
    if len(base) != g.num_vertices:
        raise ValueError("base scores must cover all graph vertices")
    alpha = cfg.alpha_ood
    mixed = (1.0 - alpha) * base.values + alpha * neighbor_mean(g, base.values)
    return ScoreVector(mixed)
