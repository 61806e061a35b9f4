"""Projection operators and the transformed (transition-then-project) process.

Each sub-off interval acts as a reflecting interval: states realized inside
it are projected to the interval's marginal-carrier maximizer (largest one
on ties), states outside are left alone.  The jump extension additionally
projects on-interval states to their marginal-carrier minimizers and
therefore requires the partition to cover the whole grid.

The transformed process transitions first and projects second, step by
step; its accumulated deviation sums, per step, the maximum carrier at the
projected state minus the ordinary (non-projected) one-step expectation
from the previous projected state.  With an empty off region every
projection is the identity and the accumulated deviation is exactly zero.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .carrier import CarrierTables
from .histories import Node
from .model import GameError
from .regions import PartitionSet, RegionPartition

__all__ = ["PersistenceTransforms"]


class PersistenceTransforms:
    def __init__(self, carriers: CarrierTables, partitions: PartitionSet):
        self.carriers = carriers
        self.walker = carriers.walker
        self.game = carriers.game
        self.partitions = dict(partitions)
        self._dup: dict[tuple, int] = {}
        self._ddown: dict[tuple, int] = {}
        self._delta: dict[tuple, float] = {}

    def partition(self, i: int, t: int) -> RegionPartition | None:
        return self.partitions.get((i, t))

    # -- projection targets -----------------------------------------------------

    def d_up(self, i: int, node: Node, b: int) -> int:
        """Largest marginal-carrier maximizer inside the b-th sub-off interval."""
        key = (i, node.key, b)
        hit = self._dup.get(key)
        if hit is None:
            part = self.partitions[(i, node.t)]
            lo, hi = part.sub_off[b]
            best, arg = -np.inf, lo
            for j in range(lo, hi + 1):
                z = self.carriers.marginal_carrier(i, node, j)
                if z > best + 1e-15 or abs(z - best) <= 1e-15:
                    if z > best + 1e-15:
                        best = z
                    arg = j
            hit = arg
            self._dup[key] = hit
        return hit

    def d_down(self, i: int, node: Node, e: int) -> int:
        """Largest marginal-carrier minimizer inside the e-th sub-on interval."""
        key = (i, node.key, e)
        hit = self._ddown.get(key)
        if hit is None:
            part = self.partitions[(i, node.t)]
            lo, hi = part.sub_on[e]
            best, arg = np.inf, lo
            for j in range(lo, hi + 1):
                z = self.carriers.marginal_carrier(i, node, j)
                if z < best - 1e-15 or abs(z - best) <= 1e-15:
                    if z < best - 1e-15:
                        best = z
                    arg = j
            hit = arg
            self._ddown[key] = hit
        return hit

    def project(self, i: int, node: Node, s_idx: int, mode: str = "up") -> int:
        """Up transform: off-interval states to their maximizers, identity elsewhere.

        Jump transform: additionally sends on-interval states to their
        minimizers; it needs a full-cover partition.
        """
        part = self.partitions.get((i, node.t))
        if part is None:
            if mode == "jump":
                raise GameError(f"jump transform needs a partition at agent {i}, period {node.t}")
            return s_idx
        kind, k = part.interval_of(s_idx)
        if kind == "off":
            return self.d_up(i, node, k)
        if mode == "jump":
            if not part.full_cover:
                raise GameError("jump transform requires a full-cover partition")
            return self.d_down(i, node, k)
        return s_idx

    # -- transformed process ------------------------------------------------------

    def uppt_expectation(self, i: int, node: Node, s_idx: int, L: int,
                         integrand: Callable[[int, int, Node, int, Node], float],
                         mode: str = "exact", samples: int = 0, seed: int = 0) -> float:
        """E[sum over k = t+1..L of integrand(k, us_k, node_k, us_{k-1}, node_{k-1})].

        Each step transitions the (projected) state through the real dynamics
        and then applies the up transform at the arrival period; expected
        histories record obedient actions at the projected states, and other
        agents follow the conjecture the carrier tables were built with.
        """
        if L <= node.t:
            return 0.0
        if mode == "mc":
            return self._uppt_mc(i, node, s_idx, L, integrand, samples, seed)
        total = 0.0
        for p, plan in self.carriers.conjecture.plans(i, node):
            total += p * self._uppt_walk(i, node, s_idx, L, integrand, plan)
        return total

    def _uppt_walk(self, i, node, s_idx, L, integrand, plan) -> float:
        if node.t >= L:
            return 0.0
        walker = self.walker
        a_own, a_idx = walker.obedient_action(i, node, s_idx)
        total = 0.0
        for br in walker.other_branches(i, node, plan):
            child = walker.child_after(i, node, s_idx, a_idx, br)
            inner = 0.0
            for pp, j2 in walker.own_kernel(i, node, s_idx, child):
                us = self.project(i, child, j2, "up")
                inner += pp * (integrand(child.t, us, child, s_idx, node)
                               + self._uppt_walk(i, child, us, L, integrand, plan))
            total += br.prob * inner
        return total

    def _uppt_mc(self, i, node, s_idx, L, integrand, samples, seed) -> float:
        rng = np.random.default_rng(seed)
        plans = self.carriers.conjecture.plans(i, node)
        probs = np.array([p for p, _ in plans])
        probs = probs / probs.sum()
        acc = 0.0
        for _ in range(max(1, samples)):
            plan = plans[rng.choice(len(plans), p=probs)][1]
            cur, s = node, s_idx
            while cur.t < L:
                branches = list(self.walker.other_branches(i, cur, plan))
                bw = np.array([b.prob for b in branches])
                br = branches[rng.choice(len(branches), p=bw / bw.sum())]
                _, a_idx = self.walker.obedient_action(i, cur, s)
                child = self.walker.child_after(i, cur, s, a_idx, br)
                kern = self.walker.own_kernel(i, cur, s, child)
                kw = np.array([p for p, _ in kern])
                j2 = kern[rng.choice(len(kern), p=kw / kw.sum())][1]
                us = self.project(i, child, j2, "up")
                acc += integrand(child.t, us, child, s, cur)
                cur, s = child, us
        return acc / max(1, samples)

    # -- accumulated deviation ------------------------------------------------------

    def delta_bar(self, i: int, node: Node, s_idx: int) -> float:
        """Accumulated deviation of the projected process' sampled maximum carriers.

        Recursive form of the transformed-process expectation of the per-step
        deviations: maximum carrier at the projected arrival state minus the
        non-projected one-step expectation from the previous projected state.
        Zero at the final period and, exactly, whenever every projection is
        the identity.
        """
        if node.t >= self.game.horizon:
            return 0.0
        key = (i, node.key, s_idx)
        hit = self._delta.get(key)
        if hit is not None:
            return hit
        walker = self.walker
        a_own, a_idx = walker.obedient_action(i, node, s_idx)
        total = 0.0
        for p, plan in self.carriers.conjecture.plans(i, node):
            for br in walker.other_branches(i, node, plan):
                child = walker.child_after(i, node, s_idx, a_idx, br)
                for pp, j2 in walker.own_kernel(i, node, s_idx, child):
                    us = self.project(i, child, j2, "up")
                    total += p * br.prob * pp * (self.carriers.mg(i, child, us)
                                                 + self.delta_bar(i, child, us))
        total -= self.carriers.expected_next_mg(i, node, s_idx)
        self._delta[key] = total
        return total

    def total(self, i: int, node: Node, s_idx: int) -> float:
        """Maximum carrier plus accumulated deviation: the payoff-to-go representative."""
        return self.carriers.mg(i, node, s_idx) + self.delta_bar(i, node, s_idx)

    # -- support and barrier diagnostics ------------------------------------------

    def uppt_support(self, i: int, node: Node, s_idx: int, k: int,
                     require_full_support: bool = False,
                     support_report=None) -> frozenset[int]:
        """Reachable projected states at period k from (s, node), by forward BFS."""
        if k <= node.t:
            raise GameError("support query needs a strictly later period")
        if require_full_support and (support_report is None or not support_report.passed):
            raise GameError("support check requested without a passing full-support report")
        frontier: set[tuple[int, int]] = {(node.key, s_idx)}
        for _ in range(node.t, k):
            nxt: set[tuple[int, int]] = set()
            for key, s in frontier:
                cur = self.walker.store.node(key)
                for p, plan in self.carriers.conjecture.plans(i, cur):
                    if p <= 0.0:
                        continue
                    _, a_idx = self.walker.obedient_action(i, cur, s)
                    for br in self.walker.other_branches(i, cur, plan):
                        if br.prob <= 0.0:
                            continue
                        child = self.walker.child_after(i, cur, s, a_idx, br)
                        for pp, j2 in self.walker.own_kernel(i, cur, s, child):
                            if pp > 0.0:
                                nxt.add((child.key, self.project(i, child, j2, "up")))
            frontier = nxt
        return frozenset(s for _, s in frontier)

    def projected_grid_image(self, i: int, k: int, node_at_k: Node) -> frozenset[int]:
        """The projected image of the whole period-k grid at a representative node."""
        m = self.game.grid(i, k).points
        return frozenset(self.project(i, node_at_k, j, "up") for j in range(m))

    def barrier_violations(self, i: int, node: Node, s_idx: int) -> list[tuple[int, int, int]]:
        """Projected-process states strictly inside a sub-off interval but off its target.

        Walks the full projected tree from (s, node); any reachable projected
        state lying in a sub-off interval must equal that interval's
        projection target.  Returns (period, node key, state) triples.
        """
        bad: list[tuple[int, int, int]] = []

        def visit(k: int, us: int, nd: Node, *_prev) -> float:
            part = self.partitions.get((i, k))
            if part is not None:
                kind, b = part.interval_of(us)
                if kind == "off" and us != self.d_up(i, nd, b):
                    bad.append((k, nd.key, us))
            return 0.0

        self.uppt_expectation(i, node, s_idx, self.game.horizon, visit)
        return bad

    def barrier_violations_mc(self, i: int, node: Node, s_idx: int,
                              n_paths: int, seed: int) -> int:
        """Sampled-path version of the barrier check; returns the violation count."""
        count = 0

        def visit(k: int, us: int, nd: Node, *_prev) -> float:
            part = self.partitions.get((i, k))
            if part is not None:
                kind, b = part.interval_of(us)
                if kind == "off" and us != self.d_up(i, nd, b):
                    return 1.0
            return 0.0

        total = self._uppt_mc(i, node, s_idx, self.game.horizon, visit, n_paths, seed)
        count = int(round(total * n_paths))
        return count
