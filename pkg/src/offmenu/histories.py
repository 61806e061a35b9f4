"""Public-information nodes, history interning, and opponent behavior models.

A node is the public information available at the *start* of a period,
before current states are observed and off-menu decisions are taken: the
set of agents still in the game, the previous-period states (states become
public at the end of each period) and the full action history with quit
markers.  Nodes are interned so that value tables can be memoized on a
stable integer key; identity is by action *indices*, not values.

Opponent behavior enters every expectation through a conjecture object:
either a region rule (quit on first entry into the principal-desired off
region, re-evaluated each period) or an explicit distribution over fixed
quit-period profiles.  Both reduce to a weighted list of per-branch plans.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from .model import BaseGame, GameError
from .mechanism import Menu, TaskPolicy, action_menu

__all__ = [
    "PeriodRecord",
    "Node",
    "NodeStore",
    "OppPlan",
    "RegionPlan",
    "FixedPlan",
    "Conjecture",
    "RegionConjecture",
    "ProfileConjecture",
    "TreeWalker",
]


@dataclass(frozen=True)
class PeriodRecord:
    """One period's public record: who played what, and who quit."""

    participants: tuple[int, ...]
    action_indices: tuple[int, ...]  # into the per-agent action grid, aligned with participants
    quitters: tuple[int, ...]


@dataclass(frozen=True)
class Node:
    """Interned public-information state at the start of period ``t``."""

    t: int
    active: tuple[int, ...]
    prev_states: tuple[tuple[int, int], ...]  # (agent, state index at t-1); empty at t=1
    events: tuple[PeriodRecord, ...]
    key: int = field(compare=False, hash=False, default=-1)

    def signature(self) -> str:
        """Session-independent history id (store keys are insertion-ordered)."""
        sig = self.__dict__.get("_sigstr")
        if sig is None:
            ev = ";".join(
                f"{','.join(map(str, r.participants))}:{','.join(map(str, r.action_indices))}"
                f":{','.join(map(str, r.quitters))}" for r in self.events)
            prev = ",".join(f"{j}={s}" for j, s in self.prev_states)
            sig = f"t{self.t}|a{','.join(map(str, self.active))}|p{prev}|e{ev}"
            self.__dict__["_sigstr"] = sig
        return sig

    def prev_state_of(self, i: int) -> int | None:
        for j, s in self.prev_states:
            if j == i:
                return s
        return None

    def quit_periods(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for k, rec in enumerate(self.events, start=1):
            for j in rec.quitters:
                out[j] = k
        return out


class NodeStore:
    """Interner for nodes plus cached closure-facing history materialization."""

    def __init__(self, game: BaseGame):
        self.game = game
        self._by_sig: dict[tuple, Node] = {}
        self._nodes: list[Node] = []
        self._histories: dict[int, tuple[dict[int, float], ...]] = {}

    def root(self) -> Node:
        return self.intern(1, tuple(self.game.agents()), (), ())

    def intern(self, t: int, active, prev_states, events) -> Node:
        sig = (t, tuple(active), tuple(prev_states), tuple(events))
        node = self._by_sig.get(sig)
        if node is None:
            node = Node(t, sig[1], sig[2], sig[3], key=len(self._nodes))
            self._by_sig[sig] = node
            self._nodes.append(node)
        return node

    def node(self, key: int) -> Node:
        return self._nodes[key]

    def __len__(self) -> int:
        return len(self._nodes)

    def history(self, node: Node) -> tuple[dict[int, float], ...]:
        """Action history as per-period {agent: action value} dicts (closure input)."""
        cached = self._histories.get(node.key)
        if cached is None:
            out = []
            for k, rec in enumerate(node.events, start=1):
                out.append({j: self.game.action_grids[(j, k)].value(a)
                            for j, a in zip(rec.participants, rec.action_indices)})
            cached = tuple(out)
            self._histories[node.key] = cached
        return cached

    def child(self, node: Node, states: Mapping[int, int], quitters: Sequence[int],
              actions_idx: Mapping[int, int]) -> Node:
        """Successor node after one period: quitters leave, stayers' actions and states go public."""
        stayers = tuple(j for j in node.active if j not in quitters)
        rec = PeriodRecord(stayers, tuple(actions_idx[j] for j in stayers), tuple(sorted(quitters)))
        prev = tuple((j, states[j]) for j in stayers)
        return self.intern(node.t + 1, stayers, prev, node.events + (rec,))


# ---------------------------------------------------------------------------
# Opponent plans and conjectures
# ---------------------------------------------------------------------------


class OppPlan:
    def quits(self, j: int, t: int, s_idx: int, node: Node) -> bool:
        raise NotImplementedError

    def signature(self) -> tuple:
        raise NotImplementedError


@dataclass(frozen=True)
class RegionPlan(OppPlan):
    """Quit on first entry into the desired off region (re-evaluated each period)."""

    regions: Mapping[tuple[int, int], frozenset[int]]

    def quits(self, j, t, s_idx, node):
        return s_idx in self.regions.get((j, t), frozenset())

    def signature(self):
        sig = self.__dict__.get("_sig")
        if sig is None:
            items = tuple(sorted((j, t, tuple(sorted(v)))
                                 for (j, t), v in self.regions.items() if v))
            sig = ("region", items)
            self.__dict__["_sig"] = sig
        return sig


@dataclass(frozen=True)
class FixedPlan(OppPlan):
    """Predetermined quit periods; T+1 (or absence) means never quit."""

    assign: Mapping[int, int]

    def quits(self, j, t, s_idx, node):
        return self.assign.get(j, 0) == t

    def signature(self):
        return ("fixed", tuple(sorted(self.assign.items())))


NEVER_QUIT = RegionPlan({})


class Conjecture:
    """Weighted plans describing how agents other than the evaluator behave."""

    def plans(self, i: int, node: Node) -> list[tuple[float, OppPlan]]:
        raise NotImplementedError


@dataclass(frozen=True)
class RegionConjecture(Conjecture):
    regions: Mapping[tuple[int, int], frozenset[int]]

    def plans(self, i, node):
        cached = self.__dict__.get("_plans")
        if cached is None:
            cached = [(1.0, RegionPlan(self.regions))]
            self.__dict__["_plans"] = cached
        return cached

    def plan(self) -> RegionPlan:
        return self.plans(0, None)[0][1]


@dataclass(frozen=True)
class ProfileConjecture(Conjecture):
    """Explicit distribution over others' quit-period profiles.

    ``dist`` lists (probability, {agent: quit period}) entries; agents absent
    from an assignment never quit.  Built per evaluation node, e.g. from the
    per-agent marginals iterated by the fixed-point map.
    """

    dist: tuple[tuple[float, tuple[tuple[int, int], ...]], ...]

    def plans(self, i, node):
        cache = self.__dict__.setdefault("_plans_by_agent", {})
        if i not in cache:
            out = []
            for p, asg in self.dist:
                others = tuple((j, L) for j, L in asg if j != i)
                out.append((p, FixedPlan(dict(others))))
            cache[i] = out
        return cache[i]

    @classmethod
    def from_marginals(cls, marginals: Mapping[int, Mapping[int, float]]) -> "ProfileConjecture":
        """Independent product over agents of quit-period marginals."""
        agents = sorted(marginals)
        entries: list[tuple[float, tuple[tuple[int, int], ...]]] = []
        pools = [sorted(marginals[j].items()) for j in agents]
        for combo in itertools.product(*pools):
            p = 1.0
            asg = []
            for j, (L, w) in zip(agents, combo):
                p *= w
                asg.append((j, L))
            if p > 0.0:
                entries.append((p, tuple(asg)))
        return cls(tuple(entries))


IR_CONJECTURE = RegionConjecture({})


# ---------------------------------------------------------------------------
# Tree stepping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepBranch:
    """One joint resolution of the others' states and off-menu decisions."""

    prob: float
    other_states: tuple[tuple[int, int], ...]
    quitters: tuple[int, ...]
    actions: dict[int, float]          # stayers' action values, own entry filled by caller
    actions_idx: dict[int, int]


class TreeWalker:
    """Shared exact-mode enumeration helpers over a game/policy pair.

    Everything the equilibrium engine, the carrier tables and the persistence
    transforms agree on lives here: beliefs at a node, the others' joint step
    branches under a plan, and successor construction.  Menus are cached per
    (agent, node).
    """

    def __init__(self, game: BaseGame, sigma: TaskPolicy, store: NodeStore | None = None):
        self.game = game
        self.sigma = sigma
        self.store = store if store is not None else NodeStore(game)
        self._menus: dict[tuple[int, int], Menu] = {}
        self._beliefs: dict[tuple[int, int], tuple[tuple[float, int], ...]] = {}
        self._plan_ids: dict[tuple, int] = {}
        self._plan_id_by_obj: dict[int, int] = {}

    # -- caches --------------------------------------------------------------

    def plan_id(self, plan: OppPlan) -> int:
        """Stable small integer for memo keys; identical plans share one id."""
        pid = self._plan_id_by_obj.get(id(plan))
        if pid is None:
            pid = self._plan_ids.setdefault(plan.signature(), len(self._plan_ids))
            self._plan_id_by_obj[id(plan)] = pid
        return pid

    def menu(self, i: int, node: Node) -> Menu:
        key = (i, node.key)
        m = self._menus.get(key)
        if m is None:
            m = action_menu(self.game, self.sigma, i, node.t, self.store.history(node))
            self._menus[key] = m
        return m

    def belief(self, i: int, node: Node) -> tuple[tuple[float, int], ...]:
        """Distribution over agent i's period-t state given the node's public record."""
        key = (i, node.key)
        b = self._beliefs.get(key)
        if b is None:
            if node.t == 1:
                dist = self.game.initial_dist(i)
                b = tuple((w, j) for j, w in enumerate(dist) if w > 0.0)
            else:
                prev = node.prev_state_of(i)
                if prev is None:
                    raise GameError(f"agent {i} has no public previous state at node {node.key}")
                s_prev = self.game.grid(i, node.t - 1).value(prev)
                probs, _ = self.game.kernel(i, node.t, s_prev, self.store.history(node))
                b = tuple((float(p), j) for j, p in enumerate(probs) if p > 0.0)
            self._beliefs[key] = b
        return b

    def obedient_action(self, i: int, node: Node, s_idx: int) -> tuple[float, int]:
        menu = self.menu(i, node)
        pos = menu.action_index_of_state[s_idx]
        a = menu.actions[pos]
        return a, self.game.action_grids[(i, node.t)].index_of(a, tol=1e-6)

    # -- enumeration ----------------------------------------------------------

    def other_branches(self, i: int, node: Node, plan: OppPlan) -> Iterator[StepBranch]:
        """Joint enumeration of the *other* active agents' states, quits and actions."""
        others = [j for j in node.active if j != i]
        if not others:
            yield StepBranch(1.0, (), (), {}, {})
            return
        pools = [self.belief(j, node) for j in others]
        for combo in itertools.product(*pools):
            prob = 1.0
            states: list[tuple[int, int]] = []
            quitters: list[int] = []
            actions: dict[int, float] = {}
            actions_idx: dict[int, int] = {}
            for j, (p, s_idx) in zip(others, combo):
                prob *= p
                states.append((j, s_idx))
                if plan.quits(j, node.t, s_idx, node):
                    quitters.append(j)
                else:
                    a, a_idx = self.obedient_action(j, node, s_idx)
                    actions[j] = a
                    actions_idx[j] = a_idx
            yield StepBranch(prob, tuple(states), tuple(quitters), actions, actions_idx)

    def child_after(self, i: int, node: Node, s_own: int, a_own_idx: int,
                    branch: StepBranch) -> Node:
        """Successor node when agent i stays and plays; others per the branch."""
        states = dict(branch.other_states)
        states[i] = s_own
        actions_idx = dict(branch.actions_idx)
        actions_idx[i] = a_own_idx
        return self.store.child(node, states, branch.quitters, actions_idx)

    def own_kernel(self, i: int, node: Node, s_own: int, child: Node) -> tuple[tuple[float, int], ...]:
        """Agent i's next-state distribution given the realized child history."""
        s_val = self.game.grid(i, node.t).value(s_own)
        probs, _ = self.game.kernel(i, node.t + 1, s_val, self.store.history(child))
        return tuple((float(p), j) for j, p in enumerate(probs) if p > 0.0)

    def own_shock_branches(self, i: int, node: Node, s_own: int, child: Node):
        """Shock-level transitions (weight, omega, next index, d_kappa/d_s); for impulse responses."""
        s_val = self.game.grid(i, node.t).value(s_own)
        hist = self.store.history(child)
        sh = self.game.shocks[i]
        out = []
        for omega, w in zip(sh.values, sh.weights):
            nxt = self.game.transition(i, node.t + 1, s_val, hist, omega)
            j = self.game.grid(i, node.t + 1).index_of(nxt)
            dk = self.game.dkappa_ds(i, node.t + 1, s_val, hist, omega)
            out.append((w, omega, j, dk))
        return out

    # -- reachable sets ---------------------------------------------------------

    def reachable_nodes(self, plan: OppPlan, max_nodes: int = 250_000) -> list[Node]:
        """All nodes reachable when every agent follows the plan obediently."""
        root = self.store.root()
        seen: dict[int, Node] = {root.key: root}
        self._expand([root], seen, plan, max_nodes)
        return sorted(seen.values(), key=lambda n: (n.t, n.key))

    def _expand(self, frontier: list[Node], seen: dict[int, Node], plan: OppPlan,
                max_nodes: int) -> None:
        frontier = list(frontier)
        while frontier:
            node = frontier.pop()
            if node.t > self.game.horizon:
                continue
            pools = [self.belief(j, node) for j in node.active]
            for combo in itertools.product(*pools):
                states: dict[int, int] = {}
                quitters: list[int] = []
                actions_idx: dict[int, int] = {}
                for j, (_, s_idx) in zip(node.active, combo):
                    states[j] = s_idx
                    if plan.quits(j, node.t, s_idx, node):
                        quitters.append(j)
                    else:
                        _, a_idx = self.obedient_action(j, node, s_idx)
                        actions_idx[j] = a_idx
                child = self.store.child(node, states, quitters, actions_idx)
                if child.key not in seen:
                    seen[child.key] = child
                    if len(seen) > max_nodes:
                        raise GameError("reachable node set exceeds the exact-mode budget; rerun with mode=mc")
                    frontier.append(child)

    def full_state_closure(self, plan: OppPlan, max_nodes: int = 250_000) -> list[Node]:
        """Nodes reachable when every agent's state ranges over the whole grid.

        Verification quantifies over all grid states at every history, so
        counterfactual cells can open histories the belief-supported walk
        never visits; this closure covers them (obedient actions, plan quits).
        """
        root = self.store.root()
        seen: dict[int, Node] = {root.key: root}
        frontier = [root]
        while frontier:
            node = frontier.pop()
            if node.t > self.game.horizon:
                continue
            pools = [range(self.game.grid(j, node.t).points) for j in node.active]
            for combo in itertools.product(*pools):
                states = dict(zip(node.active, combo))
                plan_quits = [j for j in node.active
                              if plan.quits(j, node.t, states[j], node)]
                # an evaluating agent stays even where the plan would quit
                stay_overrides = [None] + [j for j in plan_quits]
                for keep in stay_overrides:
                    quitters = [j for j in plan_quits if j != keep]
                    actions_idx = {}
                    for j in node.active:
                        if j in quitters:
                            continue
                        _, a_idx = self.obedient_action(j, node, states[j])
                        actions_idx[j] = a_idx
                    child = self.store.child(node, states, quitters, actions_idx)
                    if child.key not in seen:
                        seen[child.key] = child
                        if len(seen) > max_nodes:
                            raise GameError("full-state closure exceeds the exact-mode budget; rerun with mode=mc")
                        frontier.append(child)
        return sorted(seen.values(), key=lambda n: (n.t, n.key))

    def one_shot_closure(self, plan: OppPlan, max_nodes: int = 250_000) -> list[Node]:
        """Node coverage of one-shot-deviation evaluations from realizable cells.

        For each evaluating agent: the agent stays and acts every period (his
        committed staying plans ignore the quit rule for himself), deviating
        from the obedient action at most once, while everyone else follows
        the plan.  This is exactly the set of histories whose coupling and
        posted values an obedience check over positive-probability cells can
        query, hence the coverage exported mechanism tables need.
        """
        base = self.reachable_nodes(plan, max_nodes)
        seen = {n.key: n for n in base}
        for evaluator in self.game.agents():
            # (node, already-deviated) pairs; own quits are suppressed
            frontier: list[tuple[Node, bool]] = [(self.store.root(), False)]
            visited: set[tuple[int, bool]] = {(self.store.root().key, False)}
            while frontier:
                node, deviated = frontier.pop()
                if node.t > self.game.horizon or evaluator not in node.active:
                    continue
                pools = [self.belief(j, node) for j in node.active]
                for combo in itertools.product(*pools):
                    states: dict[int, int] = {}
                    quitters: list[int] = []
                    actions_idx: dict[int, int] = {}
                    for j, (_, s_idx) in zip(node.active, combo):
                        states[j] = s_idx
                        if j != evaluator and plan.quits(j, node.t, s_idx, node):
                            quitters.append(j)
                        else:
                            _, a_idx = self.obedient_action(j, node, s_idx)
                            actions_idx[j] = a_idx
                    own_menu = self.menu(evaluator, node)
                    choices = [(actions_idx[evaluator], deviated)]
                    if not deviated:
                        for a in own_menu.actions:
                            idx = self.game.action_grids[(evaluator, node.t)].index_of(a, tol=1e-6)
                            if idx != actions_idx[evaluator]:
                                choices.append((idx, True))
                    for own_idx, next_dev in choices:
                        alt = dict(actions_idx)
                        alt[evaluator] = own_idx
                        child = self.store.child(node, states, quitters, alt)
                        if child.key not in seen:
                            seen[child.key] = child
                            if len(seen) > max_nodes:
                                raise GameError("deviation closure exceeds the exact-mode budget; rerun with mode=mc")
                        if (child.key, next_dev) not in visited:
                            visited.add((child.key, next_dev))
                            frontier.append((child, next_dev))
        return sorted(seen.values(), key=lambda n: (n.t, n.key))
