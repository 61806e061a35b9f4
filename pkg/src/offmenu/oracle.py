"""Brute-force tree oracle: slow, flat, and independent of the engine.

Every quantity here is computed by materializing complete outcome paths
with their probabilities and summing the defining expressions directly; no
backward induction, no memoization, no shared aggregation code with the
recursive engine.  Tests freeze engine outputs against these values.
"""

from __future__ import annotations

import itertools
from typing import Callable, Mapping

from .histories import Node, NodeStore, OppPlan, RegionPlan
from .mechanism import Mechanism, action_menu
from .model import BaseGame

__all__ = ["TreeOracle"]


class TreeOracle:
    def __init__(self, game: BaseGame, mechanism: Mechanism, store: NodeStore | None = None):
        self.game = game
        self.mech = mechanism
        self.store = store if store is not None else NodeStore(game)

    # -- primitive helpers (definition-level, no engine reuse) ----------------

    def _menu(self, i: int, node: Node):
        return action_menu(self.game, self.mech.sigma, i, node.t, self.store.history(node))

    def _belief(self, i: int, node: Node) -> list[tuple[float, int]]:
        if node.t == 1:
            return [(w, j) for j, w in enumerate(self.game.initial_dist(i)) if w > 0.0]
        prev = node.prev_state_of(i)
        s_prev = self.game.grid(i, node.t - 1).value(prev)
        probs, _ = self.game.kernel(i, node.t, s_prev, self.store.history(node))
        return [(float(p), j) for j, p in enumerate(probs) if p > 0.0]

    def _obedient(self, i: int, node: Node, s_idx: int) -> tuple[float, int]:
        menu = self._menu(i, node)
        a = menu.actions[menu.action_index_of_state[s_idx]]
        return a, self.game.action_grids[(i, node.t)].index_of(a, tol=1e-6)

    def _steps(self, i: int, node: Node, s_idx: int, a_own: float, plan: OppPlan):
        """Yield (prob, z, child, next own state) over one period's full resolution."""
        others = [j for j in node.active if j != i]
        pools = [self._belief(j, node) for j in others]
        a_own_idx = self.game.action_grids[(i, node.t)].index_of(a_own, tol=1e-6)
        s_val = self.game.grid(i, node.t).value(s_idx)
        for combo in itertools.product(*pools):
            prob = 1.0
            states = {i: s_idx}
            quitters: list[int] = []
            actions = {i: a_own}
            actions_idx = {i: a_own_idx}
            for j, (p, sj) in zip(others, combo):
                prob *= p
                states[j] = sj
                if plan.quits(j, node.t, sj, node):
                    quitters.append(j)
                else:
                    aj, aj_idx = self._obedient(j, node, sj)
                    actions[j] = aj
                    actions_idx[j] = aj_idx
            z = (self.game.reward(i, node.t, s_val, actions)
                 + self.mech.rho.value(i, node, actions))
            child = self.store.child(node, states, quitters, actions_idx)
            if node.t >= self.game.horizon:
                yield prob, z, child, None
                continue
            probs, _ = self.game.kernel(i, node.t + 1, s_val, self.store.history(child))
            for j2, p2 in enumerate(probs):
                if p2 > 0.0:
                    yield prob * float(p2), z, child, j2

    # -- prospect / on-rent / payoff-to-go ------------------------------------

    def prospect(self, i: int, node: Node, s_idx: int, L: int, plans: list[tuple[float, OppPlan]],
                 a_first: float | None = None) -> float:
        total = 0.0
        for p, plan in plans:
            total += p * self._prospect_plan(i, node, s_idx, L, plan, a_first)
        return total

    def _phi_terminal(self, i: int, child: Node, s_next: int | None) -> float:
        phi = self.mech.phi
        if child.t > self.game.horizon:
            return phi.value(i, child)
        if phi.state_dependent():
            return phi.value(i, child, s_next)
        return phi.value(i, child)

    def _prospect_plan(self, i, node, s_idx, L, plan, a_first) -> float:
        if a_first is None:
            a_first, _ = self._obedient(i, node, s_idx)
        total = 0.0
        stack = [(1.0, node, s_idx, a_first, 0.0)]
        while stack:
            prob, cur, s, a_own, acc = stack.pop()
            for p, z, child, s_next in self._steps(i, cur, s, a_own, plan):
                if cur.t == L:
                    total += prob * p * (acc + z + self._phi_terminal(i, child, s_next))
                else:
                    a_next, _ = self._obedient(i, child, s_next)
                    stack.append((prob * p, child, s_next, a_next, acc + z))
        return total

    def on_rent(self, i, node, s_idx, plans, a_first=None) -> float:
        best = max(self.prospect(i, node, s_idx, L, plans, a_first)
                   for L in range(node.t, self.game.horizon + 1))
        sidx = s_idx if node.t <= self.game.horizon else None
        return best - self.mech.phi.value(i, node, sidx)

    def payoff_to_go(self, i, node, s_idx, plans) -> float:
        best = max(self.prospect(i, node, s_idx, L, plans)
                   for L in range(node.t, self.game.horizon + 1))
        return max(self.mech.phi.value(i, node, s_idx), best)

    def best_response(self, i, node, s_idx, plans,
                      directive_quit: Callable[[int, int, int], bool] | None = None,
                      tie_tol: float = 1e-9):
        directive_quit = directive_quit or (lambda *_: False)
        menu = self._menu(i, node)
        obed = menu.action_index_of_state[s_idx]
        best_val, best_pos, best_L = None, obed, node.t
        for pos, a in enumerate(menu.actions):
            for L in range(node.t, self.game.horizon + 1):
                v = self.prospect(i, node, s_idx, L, plans, a)
                if best_val is None or v > best_val + tie_tol:
                    best_val, best_pos, best_L = v, pos, L
                elif abs(v - best_val) <= tie_tol:
                    if pos == best_pos and L > best_L:
                        best_L = L
                    elif pos == obed and best_pos != obed:
                        best_pos, best_L = pos, L
        quit_val = self.mech.phi.value(i, node, s_idx)
        rent = best_val - quit_val
        if abs(rent) <= tie_tol:
            om = 1 if directive_quit(i, node.t, s_idx) else 0
        else:
            om = 1 if rent < 0 else 0
        if om == 1:
            return (1, None, node.t, quit_val)
        return (0, menu.actions[best_pos], best_L + 1, best_val)

    # -- impulse response -------------------------------------------------------

    def impulse_response(self, i, node, s_idx, L, plans, a_first=None) -> float:
        """E[sum of du/ds times the running d_kappa/d_s product] by raw path walk."""
        total = 0.0
        for p, plan in plans:
            total += p * self._q_plan(i, node, s_idx, L, plan, a_first)
        return total

    def _q_plan(self, i, node, s_idx, L, plan, a_first) -> float:
        if a_first is None:
            a_first, _ = self._obedient(i, node, s_idx)
        total = 0.0
        # stack entries: (prob, node, own state, own action, running product, partial sum)
        stack = [(1.0, node, s_idx, a_first, 1.0, 0.0)]
        game = self.game
        while stack:
            prob, cur, s, a_own, mp, acc = stack.pop()
            others = [j for j in cur.active if j != i]
            pools = [self._belief(j, cur) for j in others]
            a_idx = game.action_grids[(i, cur.t)].index_of(a_own, tol=1e-6)
            s_val = game.grid(i, cur.t).value(s)
            for combo in itertools.product(*pools):
                pr = 1.0
                states = {i: s}
                quitters = []
                actions = {i: a_own}
                actions_idx = {i: a_idx}
                for j, (pj, sj) in zip(others, combo):
                    pr *= pj
                    states[j] = sj
                    if plan.quits(j, cur.t, sj, cur):
                        quitters.append(j)
                    else:
                        aj, aj_idx = self._obedient(j, cur, sj)
                        actions[j] = aj
                        actions_idx[j] = aj_idx
                here = acc + game.du_ds(i, cur.t, s_val, actions) * mp
                if cur.t == L:
                    total += prob * pr * here
                    continue
                child = self.store.child(cur, states, quitters, actions_idx)
                hist = self.store.history(child)
                sh = game.shocks[i]
                for omega, w in zip(sh.values, sh.weights):
                    nxt = game.transition(i, cur.t + 1, s_val, hist, omega)
                    j2 = game.grid(i, cur.t + 1).index_of(nxt)
                    dk = game.dkappa_ds(i, cur.t + 1, s_val, hist, omega)
                    a_next, _ = self._obedient(i, child, j2)
                    stack.append((prob * pr * w, child, j2, a_next, mp * dk, here))
        return total

    # -- projected-process quantities --------------------------------------------

    def delta_bar(self, i, node, s_idx, plans, project: Callable[[int, int, int, Node], int],
                  max_carrier: Callable[[int, Node, int], float],
                  expected_next: Callable[[int, Node, int, OppPlan], float]) -> float:
        """Forward enumeration of the projected process' accumulated deviations.

        ``project`` maps (agent, period, state idx, node) to the projected
        index; ``max_carrier``/``expected_next`` are the table callbacks the
        deviations are measured on.  Projections start at the step after the
        start period; the start state is taken as is.
        """
        total = 0.0
        for p, plan in plans:
            stack = [(1.0, node, s_idx, 0.0)]
            while stack:
                prob, cur, s, acc = stack.pop()
                if cur.t >= self.game.horizon:
                    total += p * prob * acc
                    continue
                m = expected_next(i, cur, s, plan)
                a_own, _ = self._obedient(i, cur, s)
                for pr, _z, child, s_next in self._steps(i, cur, s, a_own, plan):
                    proj = project(i, child.t, s_next, child)
                    u_term = max_carrier(i, child, proj) - m
                    stack.append((prob * pr, child, proj, acc + u_term))
        return total

    def first_hit_distribution(self, i: int, node: Node,
                               regions: Mapping[tuple[int, int], frozenset[int]]) -> dict[int, float]:
        """Quit-period distribution by joint path enumeration with first-hit accounting."""
        plan = RegionPlan(regions)
        out: dict[int, float] = {}
        stack = [(1.0, node)]
        while stack:
            prob, cur = stack.pop()
            if cur.t > self.game.horizon or i not in cur.active:
                k = self.game.horizon + 1
                out[k] = out.get(k, 0.0) + prob
                continue
            pools = [self._belief(j, cur) for j in cur.active]
            for combo in itertools.product(*pools):
                pr = prob
                states, quitters, actions_idx = {}, [], {}
                for j, (pj, sj) in zip(cur.active, combo):
                    pr *= pj
                    states[j] = sj
                    if plan.quits(j, cur.t, sj, cur):
                        quitters.append(j)
                    else:
                        _, aj_idx = self._obedient(j, cur, sj)
                        actions_idx[j] = aj_idx
                if i in quitters:
                    out[cur.t] = out.get(cur.t, 0.0) + pr
                    continue
                stack.append((pr, self.store.child(cur, states, quitters, actions_idx)))
        return out
