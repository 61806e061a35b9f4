"""Construction of coupling policies and cutoff off-switches from a task policy.

The expected-coupling representative makes each agent's expected one-period
utility equal his marginal carrier: expected coupling = marginal carrier
minus the expected intrinsic reward at the action's generating state.  The
cutoff off-switch posts, per history, the carrier-plus-premium total at a
variant-specific evaluation point:

* ir            -- the bottom grid state (boundary profile {lowest state});
* horizontal    -- the up-projection target of each sub-off interval (the
                   per-interval values must agree; the builder checks this
                   and the level-set conditions that guarantee it);
* knowledgeable -- per partition interval, the jump-projection target of
                   that interval (requires a full-cover partition).

Also here: the posted-factor solve from the conservation identity, the
vanishing-cutoff test that certifies a coupling-only mechanism, and an
independent indifference solver used to cross-check cutoff values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .carrier import CarrierTables
from .histories import Node, RegionConjecture, TreeWalker
from .mechanism import BoundaryProfile, CouplingPolicy, Mechanism, OffSwitch, TaskPolicy
from .model import BaseGame, GameError
from .persistence import PersistenceTransforms
from .regions import PartitionSet, off_regions

__all__ = [
    "SynthesizedCoupling",
    "SynthesizedCutoff",
    "coupling_from_c1",
    "build_cutoff",
    "synthesize_mechanism",
    "posted_factor_eta",
    "check_dcm_zero",
    "solve_phi_by_indifference",
    "SynthesisDiagnostics",
]

VARIANTS = ("ir", "horizontal", "knowledgeable")


@dataclass
class SynthesisDiagnostics:
    c1_backmap_spread: float = 0.0          # worst disagreement across generating states
    horizontal_ok: bool | None = None
    horizontal_spread: float = 0.0
    notes: list[str] = field(default_factory=list)


class SynthesizedCoupling(CouplingPolicy):
    """Expected-coupling representative pinned by the conservation identity.

    Keyed by the agent's own action only (constant in others' realized
    actions).  Values are computed lazily per node: marginal carrier at the
    action's generating state minus the expected intrinsic reward there.
    Non-injective policies are served from the largest generating state;
    the spread across generating states lands in the diagnostics.
    """

    def __init__(self, carriers: CarrierTables, diagnostics: SynthesisDiagnostics | None = None):
        self.carriers = carriers
        self.walker = carriers.walker
        self.diagnostics = diagnostics or SynthesisDiagnostics()
        self._memo: dict[tuple[int, int, int], float] = {}

    def expected_reward(self, i: int, node: Node, s_idx: int, a_own: float) -> float:
        """Expected intrinsic reward over the others' obedient actions and quits."""
        game = self.walker.game
        s_val = game.grid(i, node.t).value(s_idx)
        total = 0.0
        for p, plan in self.carriers.conjecture.plans(i, node):
            for br in self.walker.other_branches(i, node, plan):
                actions = dict(br.actions)
                actions[i] = a_own
                total += p * br.prob * game.reward(i, node.t, s_val, actions)
        return total

    def value_at_slot(self, i: int, node: Node, pos: int) -> float:
        key = (i, node.key, pos)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        menu = self.walker.menu(i, node)
        a_own = menu.actions[pos]
        gens = menu.generating_states[pos]
        vals = [self.carriers.marginal_carrier(i, node, s)
                - self.expected_reward(i, node, s, a_own) for s in gens]
        if len(vals) > 1:
            spread = max(vals) - min(vals)
            self.diagnostics.c1_backmap_spread = max(self.diagnostics.c1_backmap_spread, spread)
        out = vals[-1]  # largest generating state is canonical
        self._memo[key] = out
        return out

    def value(self, i, node, actions):
        if i not in actions:
            raise GameError(f"agent {i} missing from the action profile")
        menu = self.walker.menu(i, node)
        return self.value_at_slot(i, node, menu.position(actions[i]))


def coupling_from_c1(carriers: CarrierTables,
                     diagnostics: SynthesisDiagnostics | None = None) -> SynthesizedCoupling:
    return SynthesizedCoupling(carriers, diagnostics)


class SynthesizedCutoff(OffSwitch):
    """Cutoff off-switch evaluated lazily per node from the carrier tables."""

    def __init__(self, variant: str, transforms: PersistenceTransforms,
                 diagnostics: SynthesisDiagnostics | None = None,
                 horizontal_tol: float = 1e-9):
        if variant not in VARIANTS:
            raise GameError(f"unknown cutoff variant {variant!r}")
        self.variant = variant
        self.transforms = transforms
        self.horizon = transforms.game.horizon
        self.diagnostics = diagnostics or SynthesisDiagnostics()
        self.horizontal_tol = horizontal_tol
        self._memo: dict[tuple, float] = {}

    def state_dependent(self) -> bool:
        return self.variant == "knowledgeable"

    def per_interval_values(self, i: int, node: Node) -> dict[int, float]:
        """Carrier-plus-premium totals at each interval's projection target."""
        part = self.transforms.partition(i, node.t)
        if part is None:
            raise GameError(f"no partition for agent {i}, period {node.t}")
        out: dict[int, float] = {}
        ivs = sorted([(lo, "off", b) for b, (lo, _) in enumerate(part.sub_off)]
                     + [(lo, "on", e) for e, (lo, _) in enumerate(part.sub_on)])
        for w, (_, kind, k) in enumerate(ivs):
            pt = (self.transforms.d_up(i, node, k) if kind == "off"
                  else self.transforms.d_down(i, node, k))
            out[w] = self.transforms.total(i, node, pt)
        return out

    def per_suboff_values(self, i: int, node: Node) -> list[float]:
        part = self.transforms.partition(i, node.t)
        if part is None:
            raise GameError(f"no partition for agent {i}, period {node.t}")
        return [self.transforms.total(i, node, self.transforms.d_up(i, node, b))
                for b in range(len(part.sub_off))]

    def check_horizontal_conditions(self, i: int, node: Node, tol: float = 1e-9) -> bool:
        """Level-set conditions: equal marginal carrier at non-extreme boundaries
        and projection targets, dominated by every on-interval value."""
        part = self.transforms.partition(i, node.t)
        tr = self.transforms
        grid_last = part.points - 1
        levels: list[float] = []
        for b, (lo, hi) in enumerate(part.sub_off):
            for j in (lo, hi):
                if j not in (0, grid_last):
                    levels.append(tr.carriers.marginal_carrier(i, node, j))
            levels.append(tr.carriers.marginal_carrier(i, node, tr.d_up(i, node, b)))
        if max(levels) - min(levels) > tol:
            return False
        level = max(levels)
        for lo, hi in part.sub_on:
            for j in range(lo, hi + 1):
                if tr.carriers.marginal_carrier(i, node, j) < level - tol:
                    return False
        return True

    def value(self, i, node, state_index=None):
        if node.t > self.horizon:
            return 0.0
        if self.variant == "knowledgeable":
            if state_index is None:
                raise GameError("knowledgeable cutoff needs the state's interval")
            part = self.transforms.partition(i, node.t)
            w = part.global_interval_index(state_index)
            key = (i, node.key, w)
            hit = self._memo.get(key)
            if hit is None:
                hit = self.per_interval_values(i, node)[w]
                self._memo[key] = hit
            return hit
        key = (i, node.key)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        if self.variant == "ir":
            hit = self.transforms.total(i, node, 0)
        else:
            vals = self.per_suboff_values(i, node)
            spread = max(vals) - min(vals)
            self.diagnostics.horizontal_spread = max(self.diagnostics.horizontal_spread, spread)
            ok = spread <= self.horizontal_tol and self.check_horizontal_conditions(i, node)
            if self.diagnostics.horizontal_ok is None:
                self.diagnostics.horizontal_ok = ok
            else:
                self.diagnostics.horizontal_ok = self.diagnostics.horizontal_ok and ok
            if not ok and "non-horizontal" not in " ".join(self.diagnostics.notes):
                self.diagnostics.notes.append(
                    f"non-horizontal cutoff at agent {i}, node {node.key}: spread {spread:.3e}")
            hit = vals[0]
        self._memo[key] = hit
        return hit


def build_cutoff(variant: str, transforms: PersistenceTransforms,
                 diagnostics: SynthesisDiagnostics | None = None) -> SynthesizedCutoff:
    return SynthesizedCutoff(variant, transforms, diagnostics)


def ir_partitions(game: BaseGame) -> dict[tuple[int, int], "RegionPartition"]:
    """Singleton bottom-state partitions: boundary profile {lowest state} everywhere."""
    from .regions import partition_from_boundary

    out = {}
    for i in game.agents():
        for t in game.periods():
            grid = game.grid(i, t)
            prof = BoundaryProfile(((grid.lo, grid.lo),))
            out[(i, t)] = partition_from_boundary(grid, prof, full_cover=True)
    return out


def synthesize_mechanism(game: BaseGame, sigma: TaskPolicy, variant: str,
                         partitions: PartitionSet | None = None,
                         theta: Mapping[tuple[int, int], int] | None = None,
                         walker: TreeWalker | None = None):
    """Full pipeline: conjecture -> carriers -> transforms -> coupling -> cutoff.

    For the ir variant the desired off region is empty (everyone stays; the
    boundary profile is the bottom singleton).  Returns (mechanism, carriers,
    transforms, conjecture, diagnostics).
    """
    if variant not in VARIANTS:
        raise GameError(f"unknown cutoff variant {variant!r}")
    walker = walker or TreeWalker(game, sigma)
    if variant == "ir":
        parts = ir_partitions(game)
        conj = RegionConjecture({})
    else:
        if partitions is None:
            raise GameError(f"variant {variant!r} needs boundary partitions")
        parts = dict(partitions)
        conj = RegionConjecture(off_regions(game, parts))
    diags = SynthesisDiagnostics()
    carriers = CarrierTables(walker, conj, theta)
    transforms = PersistenceTransforms(carriers, parts)
    rho = coupling_from_c1(carriers, diags)
    phi = build_cutoff(variant, transforms, diags)
    boundaries = {}
    for (i, t), part in parts.items():
        grid = game.grid(i, t)
        boundaries[(i, t)] = BoundaryProfile(tuple(
            (grid.value(lo), grid.value(hi)) for lo, hi in part.sub_off))
    mech = Mechanism(sigma, rho, phi, boundaries)
    return mech, carriers, transforms, conj, diags


# ---------------------------------------------------------------------------
# Posted factor
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EtaResult:
    values: Mapping[tuple[int, int], float]          # (agent, node key) -> emitted eta
    consistent: bool
    worst_spread: float                              # across generating states, canonical L
    worst_spread_all_L: float                        # informational: across every cutoff
    witness: tuple | None


def posted_factor_eta(game: BaseGame, walker: TreeWalker, carriers: CarrierTables,
                      mech: Mechanism, nodes, tol: float = 1e-9) -> EtaResult:
    """Solve the conservation identity for the posted factor along tree edges.

    For a node at period t reached by recording the agent's period-(t-1)
    action, eta = phi(node) + marginal_carrier(parent state) - carrier(parent
    state, single-period cutoff), evaluated at every generating state of the
    recorded action.  Period-1 nodes post eta = phi by the empty-history
    convention.  A single eta per node must fit all generating states; the
    across-cutoff spread is reported separately (see the decisions notes).
    """
    values: dict[tuple[int, int], float] = {}
    spread = 0.0
    spread_all = 0.0
    witness = None
    for n in nodes:
        if n.t == 1:
            for i in n.active:
                values[(i, n.key)] = mech.phi.value(i, n, 0 if _interval_keyed(mech) else None)
    for n in nodes:
        if n.t == 1 or n.t > game.horizon or not n.events:
            continue
        parent = _find_parent(walker, n)
        if parent is None:
            continue
        rec = n.events[-1]
        for i in n.active:
            if i not in rec.participants:
                continue
            a_idx = rec.action_indices[rec.participants.index(i)]
            a_val = game.action_grids[(i, parent.t)].value(a_idx)
            menu = walker.menu(i, parent)
            pos = menu.position(a_val, tol=1e-6)
            cands = []
            cands_all = []
            for s in menu.generating_states[pos]:
                base = (mech.phi.value(i, n, 0 if _interval_keyed(mech) else None)
                        + carriers.marginal_carrier(i, parent, s))
                cands.append(base - carriers.carrier(i, parent, s, parent.t))
                for L in range(parent.t, game.horizon + 1):
                    cands_all.append(base - carriers.carrier(i, parent, s, L))
            emitted = cands[-1]
            d = max(cands) - min(cands)
            d_all = max(cands_all) - min(cands_all)
            if d > spread:
                spread, witness = d, (i, n.key)
            spread_all = max(spread_all, d_all)
            key = (i, n.key)
            if key in values and abs(values[key] - emitted) > tol:
                spread = max(spread, abs(values[key] - emitted))
                witness = (i, n.key)
            values[key] = emitted
    return EtaResult(values, spread <= tol, spread, spread_all, witness)


def _interval_keyed(mech: Mechanism) -> bool:
    return isinstance(mech.phi, SynthesizedCutoff) and mech.phi.variant == "knowledgeable"


def _parent_active(n: Node):
    rec = n.events[-1]
    return tuple(sorted(set(rec.participants) | set(rec.quitters)))


def _find_parent(walker: TreeWalker, n: Node) -> Node | None:
    """Locate the interned parent by signature; parents always precede children."""
    rec = n.events[-1]
    active = _parent_active(n)
    for key in range(len(walker.store)):
        cand = walker.store.node(key)
        if (cand.t == n.t - 1 and cand.events == n.events[:-1]
                and tuple(cand.active) == active):
            return cand
    return None


# ---------------------------------------------------------------------------
# Vanishing-cutoff test (coupling-only mechanisms)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DcmZeroReport:
    passed: bool
    worst: float
    residuals: Mapping[tuple[int, int, int], float]  # (agent, node key, interval) -> residual


def check_dcm_zero(transforms: PersistenceTransforms, nodes, mode: str = "H",
                   tol: float = 1e-9) -> DcmZeroReport:
    """Do the synthesized cutoff values vanish at every projection target?

    H checks the sub-off targets; K additionally checks the on-interval
    targets of a full-cover partition.  Passing means the coupling-only
    mechanism inherits the off-switch mechanism's incentive properties.
    """
    if mode not in ("H", "K"):
        raise GameError(f"unknown mode {mode!r}")
    res: dict[tuple[int, int, int], float] = {}
    worst = 0.0
    for node in nodes:
        if node.t > transforms.game.horizon:
            continue
        for i in node.active:
            part = transforms.partition(i, node.t)
            if part is None:
                continue
            for b in range(len(part.sub_off)):
                r = transforms.total(i, node, transforms.d_up(i, node, b))
                res[(i, node.key, b)] = r
                worst = max(worst, abs(r))
            if mode == "K":
                for e in range(len(part.sub_on)):
                    r = transforms.total(i, node, transforms.d_down(i, node, e))
                    res[(i, node.key, len(part.sub_off) + e)] = r
                    worst = max(worst, abs(r))
    return DcmZeroReport(worst <= tol, worst, res)


# ---------------------------------------------------------------------------
# Indifference solver (independent cutoff route)
# ---------------------------------------------------------------------------


def solve_phi_by_indifference(game: BaseGame, sigma: TaskPolicy, rho: CouplingPolicy,
                              transforms: PersistenceTransforms, conjecture,
                              nodes, variant: str = "ir",
                              tol: float = 1e-12) -> dict[tuple, float]:
    """Backward bisection for the posted value making the target state indifferent.

    Processes nodes from the last period backward; at each node the candidate
    value only has to zero the on-rent of the variant's evaluation point (the
    bottom state, the sub-off targets, or each interval's jump target), since
    a period's own posted value never enters its own staying prospects.
    Returns {(agent, node key[, interval]): value}.
    """
    from .equilibrium import Engine
    from .mechanism import TableOffSwitch

    table: dict[tuple[int, int], float] = {}
    by_interval: dict[tuple[int, int, int], float] = {}

    def interval_of(i: int, t: int, s_idx: int) -> int:
        return transforms.partition(i, t).global_interval_index(s_idx)

    phi = TableOffSwitch(game.horizon, table,
                         by_interval if variant == "knowledgeable" else None,
                         interval_of if variant == "knowledgeable" else None)
    mech = Mechanism(sigma, rho, phi)
    engine = Engine(game, mech, walker=transforms.walker)  # share node keys
    out: dict[tuple, float] = {}
    # counterfactual cells open histories beyond the emission set; fill them too
    emit_keys = {n.key for n in nodes}
    plan = conjecture.plans(0, transforms.walker.store.root())[0][1]
    fill_nodes = transforms.walker.full_state_closure(plan)

    def solve_value(i: int, node: Node, s_idx: int) -> float:
        def rent(v: float) -> float:
            stay, _ = engine.stay_value(i, node, s_idx, conjecture)
            return stay - v

        lo, hi = -1.0, 1.0
        while rent(lo) < 0:
            lo *= 2.0
            if lo < -1e12:
                raise GameError("indifference solver failed to bracket from below")
        while rent(hi) > 0:
            hi *= 2.0
            if hi > 1e12:
                raise GameError("indifference solver failed to bracket from above")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            r = rent(mid)
            if abs(r) <= tol or (hi - lo) <= tol:
                return mid
            if r > 0:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    for node in sorted(fill_nodes, key=lambda n: -n.t):
        if node.t > game.horizon:
            continue
        for i in node.active:
            part = transforms.partition(i, node.t)
            if variant == "knowledgeable":
                ivs = sorted([(lo_, "off", b) for b, (lo_, _) in enumerate(part.sub_off)]
                             + [(lo_, "on", e) for e, (lo_, _) in enumerate(part.sub_on)])
                for w, (_, kind, k) in enumerate(ivs):
                    pt = (transforms.d_up(i, node, k) if kind == "off"
                          else transforms.d_down(i, node, k))
                    v = solve_value(i, node, pt)
                    by_interval[(i, node.key, w)] = v
                    if node.key in emit_keys:
                        out[(i, node.key, w)] = v
            else:
                pt = 0 if variant == "ir" else transforms.d_up(i, node, 0)
                v = solve_value(i, node, pt)
                table[(i, node.key)] = v
                if node.key in emit_keys:
                    out[(i, node.key)] = v
    return out
