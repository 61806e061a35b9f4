"""Mechanism surface: menus, coupling values, off-switch semantics."""

from __future__ import annotations

import pytest

from offmenu.histories import TreeWalker
from offmenu.mechanism import (
    BoundaryProfile,
    CallableCoupling,
    Mechanism,
    TaskPolicy,
    ZeroCoupling,
    ZeroOffSwitch,
    action_menu,
)
from offmenu.model import GameError

from conftest import GRID5, IDENTITY


def test_identity_menu_equals_state_grid(g1):
    menu = action_menu(g1, IDENTITY, 0, 1, ())
    assert menu.actions == tuple(GRID5.values)
    assert all(len(gens) == 1 for gens in menu.generating_states)


def test_constant_policy_singleton_menu(g1):
    menu = action_menu(g1, TaskPolicy(lambda i, t, s, h: 0.5, "constant"), 0, 1, ())
    assert menu.actions == (0.5,)
    assert menu.generating_states == (tuple(range(5)),)
    assert menu.action_index_of_state == (0,) * 5


def test_reflection_policy_menu(g1):
    menu = action_menu(g1, TaskPolicy(lambda i, t, s, h: 1.0 - s, "reflect"), 0, 1, ())
    assert menu.actions == tuple(GRID5.values)
    # back-map: action 1 - s is generated by state s
    for pos, gens in enumerate(menu.generating_states):
        assert GRID5.value(gens[0]) == pytest.approx(1.0 - menu.actions[pos])


def test_menu_rejects_off_grid_image(g1):
    bad = TaskPolicy(lambda i, t, s, h: s + 2.0, "escape")
    with pytest.raises(GameError):
        action_menu(g1, bad, 0, 1, ())


def test_menu_position_lookup(g1):
    menu = action_menu(g1, IDENTITY, 0, 1, ())
    assert menu.position(0.5) == 2
    with pytest.raises(GameError):
        menu.position(0.3)


def test_zero_coupling_and_additivity(g1):
    walker = TreeWalker(g1, IDENTITY)
    root = walker.store.root()
    assert ZeroCoupling().value(0, root, {0: 0.5}) == 0.0
    one = CallableCoupling(lambda i, node, a: a[i])
    two = CallableCoupling(lambda i, node, a: 2.0 * a[i])
    both = CallableCoupling(lambda i, node, a: one.fn(i, node, a) + two.fn(i, node, a))
    assert both.value(0, root, {0: 0.5}) == pytest.approx(1.5)


def test_utility_with_om_branches(g1):
    walker = TreeWalker(g1, IDENTITY)
    root = walker.store.root()
    mech = Mechanism(IDENTITY, ZeroCoupling(),
                     type(ZeroOffSwitch(3))(3))
    # OM = 0 with zero coupling reduces to the intrinsic reward
    assert mech.utility_with_om(g1, 0, root, 0, {0: 1.0}, 0.5) == pytest.approx(0.5)
    with pytest.raises(GameError):
        mech.utility_with_om(g1, 0, root, 2, {0: 1.0}, 0.5)


def test_off_switch_constant_over_states_and_actions(monotone_ir):
    mech, carriers, transforms, conj, engine, nodes, parts, diags = monotone_ir
    for node in nodes[:6]:
        if node.t > engine.game.horizon:
            continue
        vals = {mech.phi.value(0, node, s) for s in range(5)}
        assert len({round(v, 15) for v in vals}) == 1


def test_off_switch_terminal_convention(monotone_ir):
    mech, carriers, transforms, conj, engine, nodes, parts, diags = monotone_ir
    beyond = [n for n in engine.store._nodes if n.t == engine.game.horizon + 1]
    assert beyond, "expected interned post-horizon nodes"
    assert mech.phi.value(0, beyond[0]) == 0.0


def test_boundary_profile_ordering():
    with pytest.raises(GameError):
        BoundaryProfile.from_flat([0.5, 0.25])
    with pytest.raises(GameError):
        BoundaryProfile.from_flat([0.0, 0.25, 0.25])
    prof = BoundaryProfile.from_flat([0.0, 0.25, 0.5, 0.75])
    assert prof.pairs == ((0.0, 0.25), (0.5, 0.75))


def test_menu_state_equivalence_backmap(g1):
    # acting as another state is exactly selecting that state's menu action
    walker = TreeWalker(g1, IDENTITY)
    root = walker.store.root()
    menu = walker.menu(0, root)
    for s in range(5):
        pos = menu.action_index_of_state[s]
        assert s in menu.generating_states[pos]


def test_coverage_every_reachable_node_has_menu_and_values(doublewell):
    mech, carriers, transforms, conj, engine, nodes, parts, diags = doublewell
    for node in nodes:
        if node.t > engine.game.horizon:
            continue
        menu = engine.walker.menu(0, node)
        assert menu.actions
        mech.phi.value(0, node, 0)
        mech.rho.value(0, node, {0: menu.actions[0]})


def test_synthesized_terminal_coupling_identity(monotone_ir):
    """At the last period the expected coupling is the max carrier net of the reward."""
    mech, carriers, transforms, conj, engine, nodes, parts, diags = monotone_ir
    game = engine.game
    T = game.horizon
    for node in nodes:
        if node.t != T:
            continue
        menu = engine.walker.menu(0, node)
        for pos, a in enumerate(menu.actions):
            s = menu.generating_states[pos][-1]
            want = carriers.mg(0, node, s) - game.reward(0, T, game.grid(0, T).value(s), {0: a})
            assert mech.rho.value(0, node, {0: a}) == pytest.approx(want, abs=1e-12)
        break
