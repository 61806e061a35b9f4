"""End-to-end scenario pipeline: build, synthesize, verify, simulate, export.

The pipeline is the single code path behind the CLI subcommands.  It loads
a scenario, synthesizes the mechanism for the requested cutoff variant,
runs the requested checks against the exact tree (or a sampled fallback),
simulates outcomes, and writes a JSON report plus CSV series whose bytes
are fully determined by (scenario, seed).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .equilibrium import Engine, TreeSizeError
from .histories import RegionConjecture
from .model import GameError
from .regions import detect_monotone
from .reports import (
    carrier_rows,
    mechanism_table_rows,
    on_rent_rows,
    projection_rows,
    quit_frequency_rows,
    write_csv,
    write_report,
)
from .scenario import Scenario, load_scenario
from .synthesis import (
    check_dcm_zero,
    posted_factor_eta,
    solve_phi_by_indifference,
    synthesize_mechanism,
)
from .verify import (
    Verdict,
    check_constrained_monotone,
    check_doic,
    check_doic_mc,
    check_envelope,
    check_mso,
    check_payoff_flow,
    check_phi_uniqueness,
)

__all__ = ["PipelineResult", "run_scenario", "export_report"]


@dataclass
class PipelineResult:
    scenario: Scenario
    report: dict
    passed: bool
    artifacts: list[Path]

    engine: Engine | None = None
    carriers: object | None = None
    transforms: object | None = None
    conjecture: object | None = None
    nodes: list | None = None


def run_scenario(source, out_dir: str | Path | None = None,
                 overrides: Mapping | None = None) -> PipelineResult:
    scenario = source if isinstance(source, Scenario) else load_scenario(source)
    if overrides:
        for k, v in overrides.items():
            setattr(scenario, k, v)
    if scenario.variant == "tables":
        return _run_table_backed(scenario, out_dir)
    game = scenario.build_game()
    sigma = scenario.build_policy()
    partitions = scenario.build_partitions(game)
    mech, carriers, transforms, conj, diags = synthesize_mechanism(
        game, sigma, scenario.variant,
        partitions=None if scenario.variant == "ir" else partitions)
    directive = (lambda i, t, s: False) if scenario.variant == "ir" else (
        lambda i, t, s: s in partitions[(i, t)].off_indices)
    engine = Engine(game, mech, walker=carriers.walker, directive_quit=directive)
    nodes = engine.walker.reachable_nodes(conj.plan())
    tol = scenario.tolerance
    verdicts: list[Verdict] = []
    extras: dict = {}

    for check in scenario.checks:
        if check == "support":
            strict = game.validate_full_support(mode="strict")
            relaxed = game.validate_full_support(mode="reachable")
            extras["support"] = {"strict": strict.passed, "reachable": relaxed.passed,
                                 "strict_violations": len(strict.violations)}
        elif check == "doic":
            mode = "ir" if scenario.variant == "ir" else "off"
            if scenario.mode == "mc":
                verdicts += check_doic_mc(engine, conj, nodes, scenario.samples,
                                          scenario.seed, mode=mode, partitions=partitions)
            else:
                try:
                    verdicts += check_doic(engine, conj, nodes, mode=mode,
                                           partitions=partitions, tol=tol)
                except TreeSizeError as exc:
                    raise GameError(f"exact doic enumeration too large: {exc}") from exc
        elif check == "payoff_flow":
            eta = posted_factor_eta(game, engine.walker, carriers, mech, nodes, tol=tol)
            extras["eta"] = {"consistent": eta.consistent,
                             "worst_spread": eta.worst_spread,
                             "worst_spread_all_cutoffs": eta.worst_spread_all_L}
            verdicts += check_payoff_flow(engine, carriers, nodes, eta.values, tol=tol)
        elif check == "cm":
            verdicts.append(check_constrained_monotone(carriers, nodes, tol=tol))
        elif check == "envelope":
            verdicts.append(check_envelope(engine, carriers, conj, nodes))
        elif check == "mso":
            verdicts.append(check_mso(engine, conj, nodes, tol=tol))
        elif check == "phi_uniqueness":
            closed = _closed_form_phi(engine, mech, transforms, nodes)
            solved = solve_phi_by_indifference(game, sigma, mech.rho, transforms, conj,
                                               nodes, scenario.variant)
            verdicts.append(check_phi_uniqueness(closed, solved))
        elif check == "dcm_zero":
            rep = check_dcm_zero(transforms, nodes, mode="H", tol=tol)
            verdicts.append(Verdict("dcm-zero", rep.passed, rep.worst, tol))
        elif check == "fixed_point":
            root = engine.root()
            chi = {i: engine.quit_distribution(i, root, conj.regions) for i in game.agents()}
            fp = engine.om_fixed_point(root, chi)
            # the necessary alignment: immediate quit mass matches chi
            match = all(abs(fp.marginals[i].get(root.t, 0.0) - chi[i].get(root.t, 0.0)) <= 1e-6
                        for i in game.agents())
            verdicts.append(Verdict("fixed-point", fp.converged and fp.residual <= 1e-8,
                                    fp.residual, 1e-8,
                                    details={"iterations": fp.iterations,
                                             "matches_chi": match}))
        elif check == "barrier":
            count = 0
            root = engine.root()
            for i in game.agents():
                for s in range(game.grid(i, 1).points):
                    count += len(transforms.barrier_violations(i, root, s))
                count += transforms.barrier_violations_mc(
                    i, root, 0, min(scenario.samples, 10_000), scenario.seed + i)
            verdicts.append(Verdict("barrier", count == 0, float(count), 0.0))
        elif check == "transform":
            worst = 0.0
            for node in nodes:
                if node.t > game.horizon:
                    continue
                for i in node.active:
                    for s in range(game.grid(i, node.t).points):
                        lam = engine.payoff_to_go(i, node, s, conj)
                        rep = transforms.total(i, node, transforms.project(i, node, s, "up"))
                        worst = max(worst, abs(lam - rep))
            verdicts.append(Verdict("transform-representation", worst <= tol, worst, tol))

    monotone = detect_monotone(game, lambda i, n: carriers.zeta_profile(i, n), nodes,
                               engine.store)
    extras["monotone_environment"] = {"passed": monotone.passed,
                                      "orientation": monotone.orientation}
    extras["synthesis"] = {"horizontal_ok": diags.horizontal_ok,
                           "horizontal_spread": diags.horizontal_spread,
                           "c1_backmap_spread": diags.c1_backmap_spread,
                           "notes": list(diags.notes)}

    root = engine.root()
    chi = {i: engine.quit_distribution(i, root, conj.regions) for i in game.agents()}
    sim = engine.simulate(scenario.samples, scenario.seed)
    extras["simulation"] = {"paths": sim.n_paths, "seed": sim.seed,
                            "quit_freq": {f"{i},{t}": v for (i, t), v in sim.quit_freq.items()},
                            "never_quit": {str(i): v for i, v in sim.never_quit_freq.items()},
                            "mean_payoff": {str(i): v for i, v in sim.mean_payoff.items()}}

    passed = all(v.passed for v in verdicts)
    report = {
        "scenario": scenario.name,
        "variant": scenario.variant,
        "mode": scenario.mode,
        "seed": scenario.seed,
        "passed": passed,
        "verdicts": [v.to_json() for v in verdicts],
        "chi": {str(i): {str(k): v for k, v in sorted(chi[i].items())} for i in chi},
        "extras": extras,
    }

    artifacts: list[Path] = []
    if out_dir is not None:
        out = Path(out_dir)
        artifacts.append(write_report(report, out / "report.json"))
        artifacts.append(write_csv(out / "on_rent.csv",
                                   ["agent", "period", "history_id", "state_index", "on_rent"],
                                   on_rent_rows(engine, conj, nodes)))
        artifacts.append(write_csv(out / "projections.csv",
                                   ["agent", "period", "history_id", "state_index", "projected_index"],
                                   projection_rows(transforms, nodes)))
        artifacts.append(write_csv(out / "carriers.csv",
                                   ["agent", "period", "history_id", "state_index", "cutoff",
                                    "carrier", "max_carrier", "marginal_carrier"],
                                   carrier_rows(carriers, nodes)))
        artifacts.append(write_csv(out / "quit_frequency.csv",
                                   ["agent", "period", "chi", "empirical"],
                                   quit_frequency_rows(chi, sim.quit_freq)))
        artifacts.append(write_csv(out / "mechanism.csv",
                                   ["agent", "period", "history_id", "action_slot",
                                    "action", "coupling", "posted_value"],
                                   mechanism_table_rows(engine, nodes)))
        artifacts.append(write_csv(out / "histograms.csv",
                                   ["kind", "agent", "period", "index", "count"],
                                   [("state", i, t, j, c)
                                    for (i, t, j), c in sim.state_hist.items()]
                                   + [("action", i, t, j, c)
                                      for (i, t, j), c in sim.action_hist.items()]))
        artifacts.append(export_mechanism_tables(engine, conj, scenario,
                                                 out / "mechanism_tables.json"))
    return PipelineResult(scenario, report, passed, artifacts,
                          engine=engine, carriers=carriers, transforms=transforms,
                          conjecture=conj, nodes=nodes)


def _closed_form_phi(engine: Engine, mech, transforms, nodes) -> dict:
    out = {}
    for node in nodes:
        if node.t > engine.game.horizon:
            continue
        for i in node.active:
            if mech.phi.state_dependent():
                part = transforms.partition(i, node.t)
                for w in range(part.interval_count()):
                    # representative state of the interval
                    for s in range(part.points):
                        if part.global_interval_index(s) == w:
                            out[(i, node.key, w)] = mech.phi.value(i, node, s)
                            break
            else:
                out[(i, node.key)] = mech.phi.value(i, node)
    return out


def export_report(report_path: str | Path, fmt: str, out_dir: str | Path) -> list[Path]:
    """Re-emit an existing report deterministically as json or csv files."""
    import json

    report = json.loads(Path(report_path).read_text())
    out = Path(out_dir)
    if fmt == "json":
        return [write_report({k: v for k, v in report.items() if k != "schema_version"},
                             out / "report.json")]
    if fmt != "csv":
        raise GameError(f"unknown export format {fmt!r}")
    paths = [
        write_csv(out / "verdicts.csv",
                  ["name", "passed", "worst", "tolerance", "mode"],
                  [(v["name"], v["passed"], float(v["worst"]), float(v["tolerance"]), v["mode"])
                   for v in report.get("verdicts", [])]),
        write_csv(out / "chi.csv", ["agent", "period", "probability"],
                  [(i, k, float(p)) for i, row in sorted(report.get("chi", {}).items())
                   for k, p in sorted(row.items(), key=lambda kv: int(kv[0]))]),
    ]
    return paths


def export_mechanism_tables(engine: Engine, conj, scenario: Scenario,
                            path: str | Path) -> Path:
    """Write the synthesized mechanism as session-independent tables.

    Coverage is the one-shot-deviation closure of the obedient tree, which
    is exactly the node set a positive-probability obedience check visits;
    a scenario with variant "tables" can verify and simulate against the
    file without re-running the synthesis.
    """
    import json

    walker = engine.walker
    mech = engine.mechanism
    nodes = walker.one_shot_closure(conj.plan())
    coupling = []
    posted = []
    posted_intervals = []
    for node in nodes:
        if node.t > engine.game.horizon:
            continue
        for i in node.active:
            menu = walker.menu(i, node)
            sig = node.signature()
            for pos, a in enumerate(menu.actions):
                coupling.append([i, sig, pos, float(mech.rho.value(i, node, {i: a}))])
            if mech.phi.state_dependent():
                for w, v in sorted(mech.phi.per_interval_values(i, node).items()):
                    posted_intervals.append([i, sig, w, float(v)])
            else:
                posted.append([i, sig, float(mech.phi.value(i, node))])
    body = {
        "source": scenario.name,
        "variant": scenario.variant,
        "boundaries": {str(k): v for k, v in scenario.boundaries.items()},
        "coupling": sorted(coupling),
        "posted": sorted(posted),
        "posted_intervals": sorted(posted_intervals),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _run_table_backed(scenario: Scenario, out_dir) -> PipelineResult:
    """Verify/simulate a mechanism loaded from exported tables.

    The coverage contract restricts obedience checks to positive-probability
    cells; synthesis-side checks (conservation, envelope, uniqueness, ...)
    need the native pipeline and are rejected here.
    """
    import json

    from .histories import RegionConjecture, TreeWalker
    from .mechanism import BoundaryProfile, Mechanism, TableCoupling, TableOffSwitch
    from .regions import partition_from_boundary

    allowed = {"support", "doic", "fixed_point"}
    bad = [c for c in scenario.checks if c not in allowed]
    if bad:
        raise GameError(f"table-backed scenarios support checks {sorted(allowed)}, not {bad}")
    tables_path = scenario.raw.get("mechanism", {}).get("path")
    if not tables_path:
        raise GameError("variant 'tables' needs mechanism.path")
    body = json.loads(Path(tables_path).read_text())
    game = scenario.build_game()
    sigma = scenario.build_policy()
    walker = TreeWalker(game, sigma)
    boundaries = {int(k): v for k, v in body.get("boundaries", {}).items()}
    if body["variant"] == "ir" or not boundaries:
        from .synthesis import ir_partitions

        partitions = ir_partitions(game)
        regions = {}
    else:
        partitions = {}
        for i, pairs in boundaries.items():
            prof = BoundaryProfile(tuple((float(a), float(b)) for a, b in pairs))
            for t in game.periods():
                partitions[(i, t)] = partition_from_boundary(game.grid(i, t), prof)
        regions = {k: p.off_indices for k, p in partitions.items()}
    conj = RegionConjecture(regions)
    rho = TableCoupling({(r[0], r[1], r[2]): r[3] for r in body["coupling"]}, walker.menu)

    def interval_of(i, t, s_idx):
        return partitions[(i, t)].global_interval_index(s_idx)

    if body.get("posted_intervals"):
        phi = TableOffSwitch(game.horizon, {},
                             {(r[0], r[1], r[2]): r[3] for r in body["posted_intervals"]},
                             interval_of, by_signature=True)
    else:
        phi = TableOffSwitch(game.horizon, {(r[0], r[1]): r[2] for r in body["posted"]},
                             by_signature=True)
    mech = Mechanism(sigma, rho, phi)
    directive = (lambda i, t, s: s in regions.get((i, t), frozenset()))
    engine = Engine(game, mech, walker=walker, directive_quit=directive)
    nodes = engine.walker.reachable_nodes(conj.plan())
    tol = scenario.tolerance
    verdicts: list[Verdict] = []
    extras: dict = {"mechanism_source": body.get("source"), "coverage": "positive-probability cells"}
    for check in scenario.checks:
        if check == "support":
            strict = game.validate_full_support(mode="strict")
            extras["support"] = {"strict": strict.passed}
        elif check == "doic":
            mode = "ir" if body["variant"] == "ir" else "off"
            verdicts += check_doic(engine, conj, nodes, mode=mode,
                                   partitions=partitions, tol=tol, support_only=True)
        elif check == "fixed_point":
            root = engine.root()
            chi = {i: engine.quit_distribution(i, root, regions) for i in game.agents()}
            fp = engine.om_fixed_point(root, chi)
            verdicts.append(Verdict("fixed-point", fp.converged and fp.residual <= 1e-8,
                                    fp.residual, 1e-8))
    root = engine.root()
    chi = {i: engine.quit_distribution(i, root, regions) for i in game.agents()}
    sim = engine.simulate(scenario.samples, scenario.seed)
    extras["simulation"] = {"paths": sim.n_paths, "seed": sim.seed,
                            "quit_freq": {f"{i},{t}": v for (i, t), v in sim.quit_freq.items()}}
    passed = all(v.passed for v in verdicts)
    report = {"scenario": scenario.name, "variant": "tables", "mode": scenario.mode,
              "seed": scenario.seed, "passed": passed,
              "verdicts": [v.to_json() for v in verdicts],
              "chi": {str(i): {str(k): v for k, v in sorted(chi[i].items())} for i in chi},
              "extras": extras}
    artifacts: list[Path] = []
    if out_dir is not None:
        artifacts.append(write_report(report, Path(out_dir) / "report.json"))
    return PipelineResult(scenario, report, passed, artifacts, engine=engine,
                          conjecture=conj, nodes=nodes)
