"""Agent-side equilibrium engine: prospects, on-rents, best responses.

The engine evaluates, by memoized recursion over the exact game tree, the
prospect of staying through a given period and then quitting, the interim
payoff-to-go (the better of quitting now and the best staying plan), the
induced quit-time distributions, the off-menu fixed point, and seeded
outcome simulations.

Semantics pinned here and shared with the carrier/persistence machinery:

* A prospect with plan index L collects single-period utilities from the
  current period through L and the off-switch value of period L+1 (zero
  past the horizon).  The planned quit period is therefore L+1; quitting
  immediately is the separate off-switch branch of the payoff-to-go.
* Deviations are one-shot: an alternative first action (equivalently, a
  pretended state) is followed by obedient play.
* Opponents behave per a conjecture: either the region rule induced by the
  principal-desired off regions, or an explicit quit-profile distribution.
* Zero on-rent ties are resolved by the principal's directive.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .histories import (
    Conjecture,
    Node,
    NodeStore,
    OppPlan,
    ProfileConjecture,
    RegionPlan,
    TreeWalker,
)
from .mechanism import Mechanism
from .model import BaseGame, GameError

__all__ = ["Engine", "BestResponse", "FixedPointResult", "EmpiricalOutcome", "TreeSizeError"]


class TreeSizeError(GameError):
    """Exact enumeration exceeded its budget; retry in Monte Carlo mode."""


@dataclass(frozen=True)
class BestResponse:
    om: int
    action: float | None
    quit_period: int          # T+1 encodes never quit
    value: float
    on_rent: float


@dataclass
class FixedPointResult:
    marginals: dict[int, dict[int, float]]
    residual: float
    iterations: int
    converged: bool
    residual_history: list[float]
    matches_chi: bool | None = None
    chi: dict[int, dict[int, float]] | None = None


@dataclass
class EmpiricalOutcome:
    n_paths: int
    seed: int
    quit_freq: dict[tuple[int, int], float]      # (agent, period) -> fraction of paths
    never_quit_freq: dict[int, float]
    state_hist: dict[tuple[int, int, int], int]  # (agent, period, state idx) -> visits
    action_hist: dict[tuple[int, int, int], int]
    mean_payoff: dict[int, float]


class Engine:
    """Memoized recursive evaluator for one (game, mechanism) pair."""

    def __init__(self, game: BaseGame, mechanism: Mechanism, *,
                 walker: TreeWalker | None = None,
                 tie_tol: float = 1e-9,
                 directive_quit: Callable[[int, int, int], bool] | None = None,
                 memo_budget: int = 4_000_000):
        self.game = game
        self.mechanism = mechanism
        self.walker = walker if walker is not None else TreeWalker(game, mechanism.sigma)
        self.tie_tol = tie_tol
        self.directive_quit = directive_quit or (lambda i, t, s_idx: False)
        self.memo_budget = memo_budget
        self._g: dict[tuple, float] = {}

    # -- plumbing -----------------------------------------------------------

    @property
    def store(self) -> NodeStore:
        return self.walker.store

    def root(self) -> Node:
        return self.store.root()

    def plan_id(self, plan: OppPlan) -> int:
        return self.walker.plan_id(plan)

    def _guard(self) -> None:
        if len(self._g) > self.memo_budget:
            raise TreeSizeError(
                "exact-mode prospect table exceeded "
                f"{self.memo_budget} entries; rerun with mode=mc and a sample budget")

    def phi_value(self, i: int, node: Node, s_idx: int | None = None) -> float:
        return self.mechanism.phi.value(i, node, s_idx)

    # -- prospect (plan semantics) -------------------------------------------

    def prospect(self, i: int, node: Node, s_idx: int, L: int, x: Conjecture,
                 a_pos: int | None = None) -> float:
        """Expected utilities from node.t through L plus the period-(L+1) off-switch.

        ``a_pos`` selects a first action from the menu (one-shot deviation);
        obedient play when absent.  Continuation actions are always obedient.
        """
        if not node.t <= L <= self.game.horizon:
            raise GameError(f"plan index {L} outside {node.t}..{self.game.horizon}")
        total = 0.0
        for p, plan in x.plans(i, node):
            total += p * self._g_plan(i, node, s_idx, L, a_pos, plan)
        return total

    def _g_plan(self, i: int, node: Node, s_idx: int, L: int,
                a_pos: int | None, plan: OppPlan) -> float:
        key = (i, node.key, s_idx, L, a_pos, self.plan_id(plan))
        hit = self._g.get(key)
        if hit is not None:
            return hit
        self._guard()
        menu = self.walker.menu(i, node)
        if a_pos is None:
            a_own = menu.actions[menu.action_index_of_state[s_idx]]
        else:
            a_own = menu.actions[a_pos]
        a_own_idx = self.game.action_grids[(i, node.t)].index_of(a_own, tol=1e-6)
        s_val = self.game.grid(i, node.t).value(s_idx)
        phi = self.mechanism.phi
        interval_keyed = phi.state_dependent()
        total = 0.0
        for br in self.walker.other_branches(i, node, plan):
            actions = dict(br.actions)
            actions[i] = a_own
            z = (self.game.reward(i, node.t, s_val, actions)
                 + self.mechanism.rho.value(i, node, actions))
            child = self.walker.child_after(i, node, s_idx, a_own_idx, br)
            if L == node.t:
                if child.t > self.game.horizon or not interval_keyed:
                    cont = phi.value(i, child)
                else:
                    cont = 0.0
                    for pp, s2 in self.walker.own_kernel(i, node, s_idx, child):
                        cont += pp * phi.value(i, child, s2)
            else:
                cont = 0.0
                for pp, s2 in self.walker.own_kernel(i, node, s_idx, child):
                    cont += pp * self._g_plan(i, child, s2, L, None, plan)
            total += br.prob * (z + cont)
        self._g[key] = total
        return total

    # -- payoff-to-go, on-rent, best response ---------------------------------

    def stay_value(self, i: int, node: Node, s_idx: int, x: Conjecture,
                   a_pos: int | None = None) -> tuple[float, int]:
        """max over plan indices of the prospect; ties resolve to the largest L."""
        best, best_L = -math.inf, node.t
        for L in range(node.t, self.game.horizon + 1):
            v = self.prospect(i, node, s_idx, L, x, a_pos)
            if v >= best - self.tie_tol:
                if v > best + self.tie_tol or L > best_L:
                    best_L = L
                best = max(best, v)
        return best, best_L

    def on_rent(self, i: int, node: Node, s_idx: int, x: Conjecture,
                a_pos: int | None = None) -> float:
        stay, _ = self.stay_value(i, node, s_idx, x, a_pos)
        return stay - self.phi_value(i, node, s_idx)

    def payoff_to_go(self, i: int, node: Node, s_idx: int, x: Conjecture,
                     a_pos: int | None = None) -> float:
        stay, _ = self.stay_value(i, node, s_idx, x, a_pos)
        return max(self.phi_value(i, node, s_idx), stay)

    def best_response(self, i: int, node: Node, s_idx: int, x: Conjecture) -> BestResponse:
        """Argmax over quit-now, menu actions and plan indices, ties to the directive.

        Action ties prefer the obedient action; plan ties take the latest
        quit period, matching the sup conventions used everywhere else.
        """
        menu = self.walker.menu(i, node)
        obedient_pos = menu.action_index_of_state[s_idx]
        best_val, best_pos, best_L = -math.inf, obedient_pos, node.t
        for pos in range(len(menu.actions)):
            v, L = self.stay_value(i, node, s_idx, x, pos)
            better = v > best_val + self.tie_tol
            tied = abs(v - best_val) <= self.tie_tol
            if better or (tied and pos == obedient_pos):
                best_val, best_pos, best_L = max(v, best_val), pos, L
        quit_val = self.phi_value(i, node, s_idx)
        rent = best_val - quit_val
        if rent > self.tie_tol:
            om = 0
        elif rent < -self.tie_tol:
            om = 1
        else:
            om = 1 if self.directive_quit(i, node.t, s_idx) else 0
        if om == 1:
            return BestResponse(1, None, node.t, quit_val, rent)
        return BestResponse(0, menu.actions[best_pos], best_L + 1, best_val, rent)

    def pretend_value(self, i: int, node: Node, s_idx: int, pretend_idx: int,
                      x: Conjecture) -> float:
        """Best staying plan when acting as if the state were ``pretend_idx``."""
        menu = self.walker.menu(i, node)
        v, _ = self.stay_value(i, node, s_idx, x, menu.action_index_of_state[pretend_idx])
        return v

    def value_fn(self, i: int, node: Node, s_idx: int, x: Conjecture) -> float:
        """Best value over all pretenses (the envelope object)."""
        grid = self.game.grid(i, node.t)
        return max(self.pretend_value(i, node, s_idx, j, x) for j in range(grid.points))

    def v_dagger(self, i: int, node: Node, s_idx: int, pretend_idx: int, x: Conjecture) -> float:
        """One-shot-deviation value: deviate now, then collect the obedient value."""
        menu = self.walker.menu(i, node)
        a_pos = menu.action_index_of_state[pretend_idx]
        a_own = menu.actions[a_pos]
        a_own_idx = self.game.action_grids[(i, node.t)].index_of(a_own, tol=1e-6)
        s_val = self.game.grid(i, node.t).value(s_idx)
        total = 0.0
        for p, plan in x.plans(i, node):
            for br in self.walker.other_branches(i, node, plan):
                actions = dict(br.actions)
                actions[i] = a_own
                z = (self.game.reward(i, node.t, s_val, actions)
                     + self.mechanism.rho.value(i, node, actions))
                child = self.walker.child_after(i, node, s_idx, a_own_idx, br)
                cont = 0.0
                if node.t < self.game.horizon:
                    for pp, s2 in self.walker.own_kernel(i, node, s_idx, child):
                        cont += pp * self.value_fn(i, child, s2, x)
                total += p * br.prob * (z + cont)
        return total

    # -- quit-time distribution (first hit) -----------------------------------

    def quit_distribution(self, i: int, node: Node,
                          regions: Mapping[tuple[int, int], frozenset[int]],
                          _memo: dict | None = None) -> dict[int, float]:
        """First-hit quit-period distribution of agent i from a node.

        All agents follow the region rule with obedient actions.  Mass that
        survives the horizon sits at T+1; the weights always sum to one.
        """
        memo = _memo if _memo is not None else {}
        plan = RegionPlan(regions)
        out = self._chi(i, node, plan, memo)
        return dict(out)

    def _chi(self, i: int, node: Node, plan: RegionPlan, memo: dict) -> Mapping[int, float]:
        if node.t > self.game.horizon or i not in node.active:
            return {self.game.horizon + 1: 1.0}
        key = (i, node.key)
        hit = memo.get(key)
        if hit is not None:
            return hit
        out: dict[int, float] = {}
        pools = [self.walker.belief(j, node) for j in node.active]
        for combo in itertools.product(*pools):
            prob = 1.0
            states: dict[int, int] = {}
            quitters: list[int] = []
            actions_idx: dict[int, int] = {}
            for j, (p, sj) in zip(node.active, combo):
                prob *= p
                states[j] = sj
                if plan.quits(j, node.t, sj, node):
                    quitters.append(j)
                else:
                    _, a_idx = self.walker.obedient_action(j, node, sj)
                    actions_idx[j] = a_idx
            if i in quitters:
                out[node.t] = out.get(node.t, 0.0) + prob
                continue
            child = self.store.child(node, states, quitters, actions_idx)
            for k, w in self._chi(i, child, plan, memo).items():
                out[k] = out.get(k, 0.0) + prob * w
        memo[key] = out
        return out

    # -- off-menu fixed point ---------------------------------------------------

    def om_fixed_point(self, node: Node, start: Mapping[int, Mapping[int, float]],
                       *, damping: float = 0.5, tol: float = 1e-8,
                       max_iter: int = 10_000) -> FixedPointResult:
        """Damped best-response iteration on the quit-time stage game at a node.

        ``start`` gives per-agent quit-period marginals over node.t .. T+1.
        Each round maps every agent's marginal through the distribution of
        his best-responding quit period against the product conjecture of
        the others' current marginals.
        """
        T1 = self.game.horizon + 1
        periods = list(range(node.t, T1 + 1))
        mu = {i: {k: float(start[i].get(k, 0.0)) for k in periods} for i in node.active}
        history: list[float] = []
        residual = math.inf
        for it in range(1, max_iter + 1):
            conj = ProfileConjecture.from_marginals(mu)
            new = {}
            for i in node.active:
                dist = {k: 0.0 for k in periods}
                for p, s_idx in self.walker.belief(i, node):
                    br = self.best_response(i, node, s_idx, conj)
                    dist[br.quit_period] += p
                new[i] = dist
            residual = max(abs(mu[i][k] - new[i][k]) for i in node.active for k in periods)
            history.append(residual)
            if residual < tol:
                mu = new
                return FixedPointResult(mu, residual, it, True, history)
            mu = {i: {k: (1.0 - damping) * mu[i][k] + damping * new[i][k] for k in periods}
                  for i in node.active}
        return FixedPointResult(mu, residual, max_iter, False, history)

    # -- Monte Carlo prospect (common random numbers across plans) --------------

    def prospect_mc(self, i: int, node: Node, s_idx: int, x: Conjecture,
                    n_samples: int, seed: int,
                    a_pos: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Sampled prospect estimates for every plan index node.t..T at once.

        Each sample draws one resolution of the others' states/quits and the
        own shock path, then reads off the partial sums for all plan indices,
        so the max over plans is taken over a common sample set.  Returns
        (means, standard errors), one entry per plan index.
        """
        rng = np.random.default_rng(seed)
        T = self.game.horizon
        sums = np.zeros(T - node.t + 1)
        sq = np.zeros(T - node.t + 1)
        plans = [(p, pl) for p, pl in x.plans(i, node)]
        plan_probs = np.array([p for p, _ in plans])
        plan_probs = plan_probs / plan_probs.sum()
        for _ in range(n_samples):
            pl = plans[rng.choice(len(plans), p=plan_probs)][1]
            acc = 0.0
            cur_node, cur_s = node, s_idx
            vals = np.zeros(T - node.t + 1)
            for k in range(node.t, T + 1):
                menu = self.walker.menu(i, cur_node)
                if k == node.t and a_pos is not None:
                    a_own = menu.actions[a_pos]
                else:
                    a_own = menu.actions[menu.action_index_of_state[cur_s]]
                a_own_idx = self.game.action_grids[(i, k)].index_of(a_own, tol=1e-6)
                branches = list(self.walker.other_branches(i, cur_node, pl))
                probs = np.array([b.prob for b in branches])
                br = branches[rng.choice(len(branches), p=probs / probs.sum())]
                actions = dict(br.actions)
                actions[i] = a_own
                s_val = self.game.grid(i, k).value(cur_s)
                acc += (self.game.reward(i, k, s_val, actions)
                        + self.mechanism.rho.value(i, cur_node, actions))
                child = self.walker.child_after(i, cur_node, cur_s, a_own_idx, br)
                if k == T:
                    vals[k - node.t] = acc + self.phi_value(i, child)
                    break
                kernel = self.walker.own_kernel(i, cur_node, cur_s, child)
                pv = np.array([p for p, _ in kernel])
                nxt = kernel[rng.choice(len(kernel), p=pv / pv.sum())][1]
                vals[k - node.t] = acc + (self.mechanism.phi.value(i, child, nxt)
                                          if self.mechanism.phi.state_dependent()
                                          else self.phi_value(i, child))
                cur_node, cur_s = child, nxt
            sums += vals
            sq += vals * vals
        mean = sums / n_samples
        var = np.maximum(sq / n_samples - mean * mean, 0.0)
        return mean, np.sqrt(var / max(1, n_samples - 1))

    # -- simulation ---------------------------------------------------------------

    def simulate(self, n_paths: int, seed: int, *,
                 om_rule: Callable[[int, int, int, Node], bool] | None = None,
                 action_rule: Callable[[int, int, int, Node], float] | None = None) -> EmpiricalOutcome:
        """Seeded Monte Carlo rollouts with population dynamics.

        Defaults: agents quit per the engine's directive (the principal's
        desired off regions) and act obediently.  Identical (seed, rules)
        reproduce identical outputs bit for bit.
        """
        om_rule = om_rule or (lambda i, t, s_idx, node: self.directive_quit(i, t, s_idx))
        game = self.game
        rng = np.random.default_rng(seed)
        quit_counts: dict[tuple[int, int], int] = {}
        never_counts: dict[int, int] = {i: 0 for i in game.agents()}
        state_hist: dict[tuple[int, int, int], int] = {}
        action_hist: dict[tuple[int, int, int], int] = {}
        payoff = {i: 0.0 for i in game.agents()}
        for _ in range(n_paths):
            node = self.root()
            states: dict[int, int] = {}
            for i in game.agents():
                dist = game.initial_dist(i)
                states[i] = int(rng.choice(len(dist), p=np.asarray(dist) / sum(dist)))
            alive = set(game.agents())
            for t in game.periods():
                for i in sorted(alive):
                    state_hist[(i, t, states[i])] = state_hist.get((i, t, states[i]), 0) + 1
                quitters = [i for i in sorted(alive) if om_rule(i, t, states[i], node)]
                actions_idx: dict[int, int] = {}
                actions: dict[int, float] = {}
                for i in sorted(alive):
                    if i in quitters:
                        payoff[i] += self.phi_value(i, node, states[i])
                        quit_counts[(i, t)] = quit_counts.get((i, t), 0) + 1
                        continue
                    if action_rule is None:
                        a, a_idx = self.walker.obedient_action(i, node, states[i])
                    else:
                        a = action_rule(i, t, states[i], node)
                        a_idx = game.action_grids[(i, t)].index_of(a, tol=1e-6)
                    actions[i] = a
                    actions_idx[i] = a_idx
                    action_hist[(i, t, a_idx)] = action_hist.get((i, t, a_idx), 0) + 1
                for i in list(actions):
                    s_val = game.grid(i, t).value(states[i])
                    payoff[i] += (game.reward(i, t, s_val, actions)
                                  + self.mechanism.rho.value(i, node, actions))
                child = self.store.child(node, states, quitters, actions_idx)
                alive -= set(quitters)
                if not alive or t == game.horizon:
                    for i in sorted(alive):
                        never_counts[i] += 1
                    break
                for i in sorted(alive):
                    probs, _ = game.kernel(i, t + 1, game.grid(i, t).value(states[i]),
                                           self.store.history(child))
                    states[i] = int(rng.choice(len(probs), p=probs / probs.sum()))
                node = child
        return EmpiricalOutcome(
            n_paths=n_paths,
            seed=seed,
            quit_freq={k: v / n_paths for k, v in sorted(quit_counts.items())},
            never_quit_freq={i: never_counts[i] / n_paths for i in game.agents()},
            state_hist=dict(sorted(state_hist.items())),
            action_hist=dict(sorted(action_hist.items())),
            mean_payoff={i: payoff[i] / n_paths for i in game.agents()},
        )
