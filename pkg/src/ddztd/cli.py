"""Command-line drivers.

Every subcommand reads one config, writes CSV artifacts plus ``manifest.json`` to the
output directory, and exits 0 on success, 2 when a built-in verification fails and 1
on any error.  Set ``DDZTD_LOG_LEVEL`` (e.g. ``INFO``) for progress logging.
"""

from __future__ import annotations

import argparse
import filecmp
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import config as cfgmod
from .aimg import AimgSpec
from .case_study import LogModel, run_dd_ztd
from .dynkin import ADC, MIXED, DdgiaSpec, DynkinGameSpec, classify_ordering, ddgia_bounds, solve_adc, solve_ddc, \
    verify_dde
from .equilibrium import bvi, verify_pbne
from .errors import ConfigInvalid, DdztdError, SubcommandUnknown
from .io import write_csv, write_manifest
from .meta import MetaConfig, ScenarioObjectives, Scenario, evaluate_generalization, train_meta
from .netgraph import build_graph
from .policies import (
    ConstantDefender,
    PgConfig,
    ShortestPathAttacker,
    SpsaConfig,
    ThresholdPolicy,
    UniformAttacker,
    evaluate_exact,
    simulate_batch,
    train_policy_gradient,
    train_threshold_spsa,
)
from .rng import rng_stream
from .trust import (
    AttributeTrustEngine,
    BayesTrustEngine,
    MlteTrustEngine,
    VbModel,
    VbTrainConfig,
    exact_posterior,
    mlte_infer,
    sample_dataset,
    vb_train,
)

log = logging.getLogger("ddztd")

OK, ERROR, VERIFY_FAILED = 0, 1, 2


@dataclass
class RunResult:
    tables: dict[str, list[dict]]
    verified: bool = True
    summary: dict = field(default_factory=dict)
    message: str = ""
    extra: dict = field(default_factory=dict)  # file name -> JSON document


# ---------------------------------------------------------------------------
# builders


def edge_label(e) -> str:
    return "" if e is None else f"{e[0]}>{e[1]}"


def defense_label(a_D) -> str:
    return ";".join(edge_label(e) for e in sorted(a_D))


def build_spec(cfg: dict) -> AimgSpec:
    g = cfgmod.section(cfg, "graph")
    graph = build_graph(g["nodes"], g["edges"], g["entry"], g["target"])
    a = dict(cfg.get("aimg", {}))
    kw = {k: v for k, v in a.items() if k not in ("edge_costs", "move_costs")}
    if "prior" in kw:
        kw["prior"] = tuple(kw["prior"])
    for name in ("edge_costs", "move_costs"):
        if name in a:
            kw[name] = {tuple(item["edge"]): float(item["cost"]) for item in a[name]}
    return AimgSpec(graph, **kw)


def attacker_factory(cfg: dict) -> Callable[[AimgSpec], object]:
    a = cfgmod.section(cfg, "attacker", fill_default=True)
    if a["kind"] == "uniform":
        return UniformAttacker
    return lambda spec: ShortestPathAttacker(spec, a["legitimate"])


def engine_for(cfg: dict, attacker):
    t = cfgmod.section(cfg, "trust", fill_default=True)
    if t["engine"] == "attribute":
        return AttributeTrustEngine(t["weights"])
    if t["engine"] == "mlte":
        if "mlte" not in t:
            raise ConfigInvalid("trust.engine 'mlte' needs a trust.mlte block with phi, theta and prior")
        m = t["mlte"]
        return MlteTrustEngine(VbModel(np.array(m["phi"]), np.array(m["theta"]), np.array(m["prior"])))
    return BayesTrustEngine(attacker)


def build_defender(cfg: dict):
    d = cfgmod.section(cfg, "defender", fill_default=True)
    if d["kind"] == "constant":
        return ConstantDefender(d.get("label", "mfa_frontier"))
    labels = tuple(d["labels"]) if "labels" in d else None
    return ThresholdPolicy(tuple(d["thresholds"]), labels)


def build_dynkin(cfg: dict) -> DynkinGameSpec:
    d = cfgmod.section(cfg, "dynkin")
    return DynkinGameSpec(np.array(d["P"], dtype=float), d["phi"], d["zeta"], d["psi"], int(d["T"]))


def _scenarios(items) -> list[Scenario]:
    out = []
    for it in items:
        ov = dict(it.get("overrides", {}))
        if "prior" in ov:
            ov["prior"] = tuple(ov["prior"])
        out.append(Scenario(it["id"], ov, float(it.get("weight", 1.0))))
    return out


# ---------------------------------------------------------------------------
# drivers


def run_simulate(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_spec(cfg)
    attacker = attacker_factory(cfg)(spec)
    engine = engine_for(cfg, attacker)
    defender = build_defender(cfg)
    n = cfgmod.section(cfg, "simulate", fill_default=True)["n_rollouts"]
    batch = simulate_batch(spec, defender, attacker, engine, n, seed, jobs=jobs)
    rows = []
    for k, tr in enumerate(batch):
        for r in tr.records:
            rows.append({"rollout": k, "omega": tr.omega, "time": r.time, "node": r.state.current,
                         "visited": "|".join(sorted(r.state.visited)), "trust": r.belief[0],
                         "a_D": defense_label(r.a_D), "a_A": edge_label(r.a_A), "alarm": r.o,
                         "passed": r.passed, "u_D": r.u_D, "u_A": r.u_A})
    costs = np.array([t.total_u_D() for t in batch])
    gains = np.array([t.total_u_A() for t in batch])
    summary = {"n_rollouts": n, "mean_u_D": float(costs.mean()),
               "se_u_D": float(costs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
               "mean_u_A": float(gains.mean()),
               "breach_rate": float(np.mean([t.records[-1].next_state.is_visited(spec.graph.target)
                                             for t in batch]))}
    return RunResult({"trajectories": rows, "summary": [summary]}, summary=summary)


def run_train_threshold(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_spec(cfg)
    attacker = attacker_factory(cfg)(spec)
    engine = engine_for(cfg, attacker)
    t = cfgmod.section(cfg, "train_threshold", fill_default=True)
    sc = SpsaConfig(iterations=t["iterations"], a=t["a"], A=t["A"], c=t["c"], alpha=t["alpha"], gamma=t["gamma"],
                    tau0=tuple(t["tau0"]), n_eval=t["n_eval"], exact=t["exact"], cost_mode=t["cost_mode"],
                    labels=tuple(t["labels"]) if "labels" in t else None, seed=seed)
    res = train_threshold_spsa(spec, attacker, engine, sc)
    value = evaluate_exact(spec, res.policy, attacker, engine, t["cost_mode"]).V_D
    result = {**{f"tau{i}": v for i, v in enumerate(res.policy.thresholds)}, "V_D_exact": value}
    return RunResult({"curve": res.curve, "result": [result]}, summary=result)


def run_train_pg(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_spec(cfg)
    attacker = attacker_factory(cfg)(spec)
    engine = engine_for(cfg, attacker)
    p = cfgmod.section(cfg, "train_pg", fill_default=True)
    pc = PgConfig(iterations=p["iterations"], batch=p["batch"], lr=p["lr"], tol=p["tol"], seed=seed,
                  cost_mode=p["cost_mode"], baseline=p["baseline"], attacker_mode=p["attacker_mode"],
                  br_every=p["br_every"])
    res = train_policy_gradient(spec, attacker, engine, pc)
    W = res.policy.weights
    weights = [{"action": i, "w_bias": W[i, 0], "w_trust": W[i, 1], "w_progress": W[i, 2]} for i in range(W.shape[0])]
    summary = {"converged": res.converged, "iterations": len(res.curve)}
    if p["eval_exact"]:
        summary["V_D_exact"] = evaluate_exact(spec, res.policy, res.attacker, engine, p["cost_mode"]).V_D
    return RunResult({"curve": res.curve, "weights": weights, "result": [summary]}, summary=summary)


def run_train_vb(cfg: dict, seed: int, jobs: int) -> RunResult:
    v = cfgmod.section(cfg, "train_vb")
    emission = np.array(v["emission"], dtype=float)
    prior = np.array(v["prior"], dtype=float)
    data, _ = sample_dataset(prior, emission, v["n_records"], v["record_len"], rng_stream(seed, 12))
    tc = VbTrainConfig(n_symbols=emission.shape[1], prior=tuple(prior), epochs=v["epochs"],
                       batch_size=v["batch_size"], samples=v["samples"], lr_phi=v["lr_phi"],
                       lr_theta=v["lr_theta"], lr_decay=v["lr_decay"], learn_theta=v["learn_theta"],
                       init_scale=v["init_scale"], holdout_frac=v["holdout_frac"], estimator=v["estimator"],
                       seed=seed)
    model = vb_train(data, tc)
    params = []
    for i in range(model.phi.shape[0]):
        params.append({"table": "phi", "row": i, **{f"col{j}": model.phi[i, j] for j in range(model.phi.shape[1])}})
    for i in range(model.theta.shape[0]):
        params.append({"table": "theta", "row": i,
                       **{f"col{j}": model.theta[i, j] for j in range(model.theta.shape[1])}})
    probe = []
    for rec in sorted(set(data))[:20]:
        q, fallback = mlte_infer(model, rec)
        post = exact_posterior(prior, emission, rec)
        probe.append({"record": "".join(map(str, rec)), "q_legit": q[0], "posterior_legit": post[0],
                      "fallback": fallback})
    summary = {"best_heldout_elbo": max(r["heldout_elbo"] for r in model.curve),
               "mean_abs_posterior_gap": float(np.mean([abs(r["q_legit"] - r["posterior_legit"]) for r in probe]))}
    cols = ["table", "row"] + [f"col{j}" for j in range(max(model.phi.shape[1], model.theta.shape[1]))]
    return RunResult({"curve": model.curve, "params": params, "posterior_probe": probe, "result": [summary]},
                     summary={**summary, "_params_columns": cols}, extra={"model.json": model.to_dict()})


def _history_label(h) -> str:
    return "/".join(f"{s.current}" for s in h)


def run_bvi(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_spec(cfg)
    b = cfgmod.section(cfg, "bvi", fill_default=True)
    res = bvi(spec, b["tol"], b["max_iter"], b["max_nodes"])
    values, policies = [], []
    for h in res.V_D:
        values.append({"history": _history_label(h), "time": len(h), "trust": res.beliefs[h][0],
                       "V_D_legit": res.V_D[h][0], "V_D_malicious": res.V_D[h][1],
                       "V_A_legit": res.V_A[h][0], "V_A_malicious": res.V_A[h][1]})
        for a_D, p in res.pi_D[h]:
            policies.append({"history": _history_label(h), "player": "defender", "type": "",
                             "action": defense_label(a_D), "prob": p})
        for w in (0, 1):
            for m, p in res.pi_A[(h, w)]:
                policies.append({"history": _history_label(h), "player": "attacker", "type": w,
                                 "action": edge_label(m), "prob": p})
    v_root, va_root = res.value(spec)
    summary = {"converged": res.converged, "iterations": res.iterations, "V_D_root": v_root,
               "V_A_legit_root": va_root[0], "V_A_malicious_root": va_root[1],
               "degenerate_stages": res.degenerate_stages}
    verified = True
    tables = {"values": values, "policies": policies, "deltas": res.deltas}
    if res.converged:
        rep = verify_pbne(spec, res.pi_D, res.pi_A, res.beliefs, b["verify_tol"], b["max_nodes"])
        verified = rep.passed(b["verify_tol"], b["c1_tol"])
        summary.update({"max_gain_D": rep.max_gain_D, "max_gain_A": rep.max_gain_A,
                        "max_plan_gain_D": rep.max_plan_gain_D, "max_c1": rep.max_c1,
                        "pbne_passed": verified})
        tables["pbne"] = [{k: (_history_label(v) if k == "node" else v) for k, v in r.items()} for r in rep.rows]
    else:
        log.warning("bvi did not converge; PBNE verification skipped")
    tables["result"] = [summary]
    return RunResult(tables, verified, summary)


def run_train_meta(cfg: dict, seed: int, jobs: int) -> RunResult:
    base = build_spec(cfg)
    m = cfgmod.section(cfg, "meta")
    labels = tuple(m["labels"]) if "labels" in m else None
    att = attacker_factory(cfg)

    def engines(spec):
        return engine_for(cfg, att(spec))

    train_objs = ScenarioObjectives(base, _scenarios(m["scenarios"]), att, engines, labels, m["n_eval"], m["exact"])
    mc = MetaConfig(iterations=m["iterations"], a=m["a"], A=m["A"], c=m["c"], tau0=m["tau0"], gamma0=m["gamma0"],
                    gamma_max=m["gamma_max"], gamma_scale=m["gamma_scale"], adapt_c=m["adapt_c"],
                    adapt_budget=m["adapt_budget"], fix_gamma=m["fix_gamma"], seed=seed)
    res = train_meta(train_objs, mc)
    summary = {"tau": res.meta.tau, "gamma": res.meta.gamma, "initial_value": res.initial_value,
               "final_value": res.final_value}
    tables = {"curve": res.curve, "result": [summary]}
    rows = evaluate_generalization(res.meta, train_objs, m["baseline_threshold"], seed, m["adapt_c"],
                                   m["adapt_budget"])
    for r in rows:
        r["split"] = "train"
    if m["held_out"]:
        ho = ScenarioObjectives(base, _scenarios(m["held_out"]), att, engines, labels, m["n_eval"], m["exact"])
        extra = evaluate_generalization(res.meta, ho, m["baseline_threshold"], seed, m["adapt_c"], m["adapt_budget"],
                                        training_ids=[s["id"] for s in m["scenarios"]])
        for r in extra:
            r["split"] = "held_out"
        rows += extra
    tables["generalization"] = rows
    return RunResult(tables, summary=summary)


def _rule_rows(sol_values, tau, sigma) -> list[dict]:
    rows = []
    for t in range(sol_values.shape[0]):
        for x in range(sol_values.shape[1]):
            rows.append({"time": t, "state": x, "value": sol_values[t, x], "defender_stops": int(tau[t, x]),
                         "attacker_stops": int(sigma[t, x])})
    return rows


def run_solve_dynkin(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_dynkin(cfg)
    d = cfgmod.section(cfg, "dynkin")
    ordering = classify_ordering(spec)
    if ordering == MIXED:
        raise DdztdError("mixed ordering: payoffs are neither ADC nor DDC at every state; no solver applies")
    sol = solve_adc(spec) if ordering == ADC else solve_ddc(spec)
    rep = verify_dde(spec, sol.tau_stop, sol.sigma_stop, d["verify_tol"], method=d["method"], cap=d["cap"])
    summary = {"ordering": ordering, "solver": "solve_adc" if ordering == ADC else "solve_ddc",
               "verify_method": rep.method, "max_gain": rep.max_gain, "verified": rep.passed}
    return RunResult({"solution": _rule_rows(sol.values, sol.tau_stop, sol.sigma_stop), "result": [summary]},
                     rep.passed, summary)


def run_ddgia_bounds(cfg: dict, seed: int, jobs: int) -> RunResult:
    game = build_dynkin(cfg)
    g = cfgmod.section(cfg, "ddgia")
    spec = DdgiaSpec.from_marginals(game, g["O1"], g["O2"])
    b = ddgia_bounds(spec, g["cap"], g["tol"])
    rows = [{"state": x, "lower": b.lower[x], "upper": b.upper[x], "gap": b.gap[x], "has_value": bool(b.has_value[x])}
            for x in range(game.n)]
    verified = bool(np.all(b.lower <= b.upper + g["tol"]))
    return RunResult({"bounds": rows}, verified, {"weak_duality": verified, "all_have_value": bool(b.has_value.all())})


def run_case_study(cfg: dict, seed: int, jobs: int) -> RunResult:
    spec = build_spec(cfg)
    c = cfgmod.section(cfg, "case_study")
    overrides = []
    for ov in c.get("overrides", []):
        ov = dict(ov)
        if "prior" in ov:
            ov["prior"] = tuple(ov["prior"])
        overrides.append(ov)
    lm = LogModel(tuple(c["symbols"]), np.array(c["Q"]), np.array(c["initial"]), np.array(c["C"]),
                  np.array(c["ell"]), tuple(overrides))
    att = attacker_factory(cfg)
    defender = build_defender(cfg)
    engine = engine_for(cfg, att(spec))
    rep = run_dd_ztd(spec, defender, att, engine, lm, c["T"], c["n_rollouts"], rng_stream(seed, 61),
                     c["bucket_width"], c["exact_costs"], c["verify_tol"], c["verify_cap"], jobs)
    chain = rep.chain
    costs = [{"symbol": s, "episode_cost": chain.cost[i], "episode_cost_se": chain.cost_se[i], "C": chain.C[i],
              "ell": chain.ell[i]} for i, s in enumerate(chain.symbols)]
    summary = {"ordering": rep.ordering, "solver": rep.solver or "", "message": rep.message,
               "dominance_holds": rep.dominance.holds, "verified": rep.verify_passed,
               "verify_method": rep.verify_method or "", "max_gain": rep.verify_gain}
    tables = {"episode_costs": costs, "states": rep.state_rows(), "result": [summary]}
    if rep.cutoff_distribution is not None:
        tables["cutoff"] = [{"epoch": t, "prob": p} for t, p in enumerate(rep.cutoff_distribution)]
    if rep.ordering == MIXED:
        raise DdztdError(f"mixed ordering: {rep.message}")
    return RunResult(tables, bool(rep.verify_passed), summary)


DRIVERS: dict[str, Callable[[dict, int, int], RunResult]] = {
    "simulate": run_simulate,
    "train-threshold": run_train_threshold,
    "train-pg": run_train_pg,
    "train-vb": run_train_vb,
    "bvi": run_bvi,
    "train-meta": run_train_meta,
    "solve-dynkin": run_solve_dynkin,
    "ddgia-bounds": run_ddgia_bounds,
    "case-study": run_case_study,
}
SUBCOMMANDS = tuple(DRIVERS) + ("verify",)


def execute(name: str, cfg: dict, out_dir: Path, jobs: int = 1) -> tuple[int, RunResult]:
    """Run one driver and write its artifacts; returns the exit code and the result."""
    seed = int(cfg["seed"])
    res = DRIVERS[name](cfg, seed, jobs)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = res.summary.pop("_params_columns", None)
    names = []
    for table, rows in res.tables.items():
        write_csv(out_dir / f"{table}.csv", rows, columns if table == "params" else None)
        names.append(f"{table}.csv")
    for fname, doc in res.extra.items():
        (out_dir / fname).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        names.append(fname)
    status = "ok" if res.verified else "verification_failed"
    write_manifest(out_dir, name, cfgmod.public(cfg), seed, names, status, res.summary)
    return (OK if res.verified else VERIFY_FAILED), res


# ---------------------------------------------------------------------------
# golden verification


def shipped_configs_dir() -> Path:
    return Path(__file__).parent / "configs"


def golden_configs() -> list[Path]:
    return sorted(p for p in shipped_configs_dir().glob("*.yaml") if "verify" in cfgmod.load_config(p))


def verify_config(cfg: dict, jobs: int = 1, scratch: Path | None = None) -> tuple[bool, list[str]]:
    """Rerun the listed drivers and compare their CSVs byte-for-byte with the goldens."""
    v = cfgmod.section(cfg, "verify")
    base = Path(cfg.get("_base_dir", "."))
    golden_root = base / v.get("golden_dir", f"../goldens/{cfg.get('name', 'default')}")
    problems: list[str] = []
    with tempfile.TemporaryDirectory(dir=scratch) as tmp:
        for name in v["drivers"]:
            if name not in DRIVERS:
                raise ConfigInvalid(f"verify.drivers: unknown driver {name!r}")
            out = Path(tmp) / name
            code, _ = execute(name, cfg, out, jobs)
            if code != OK:
                problems.append(f"{name}: built-in verification failed")
            gdir = golden_root / name
            goldens = sorted(gdir.glob("*.csv"))
            if not goldens:
                problems.append(f"{name}: no golden CSVs under {gdir}")
            for g in goldens:
                produced = out / g.name
                if not produced.exists():
                    problems.append(f"{name}: {g.name} was not produced")
                elif not filecmp.cmp(produced, g, shallow=False):
                    problems.append(f"{name}: {g.name} differs from the golden copy")
    return not problems, problems


def run_verify(args, cfg: dict | None) -> int:
    configs = [cfg] if cfg is not None else [cfgmod.load_config(p) for p in golden_configs()]
    if not configs:
        raise ConfigInvalid("no golden configs found")
    ok = True
    for c in configs:
        if args.seed is not None:
            c["seed"] = args.seed
        passed, problems = verify_config(c, args.jobs)
        label = c.get("name", "config")
        print(f"{'PASS' if passed else 'FAIL'} {label}")
        for p in problems:
            print(f"  {p}")
        ok &= passed
    return OK if ok else VERIFY_FAILED


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddztd", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", help="one of: " + ", ".join(SUBCOMMANDS))
    p.add_argument("--config", type=Path, help="YAML config (or a run manifest to reproduce)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory (default: config output_dir or ./runs/<subcommand>)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for rollouts")
    return p


def _configure_logging():
    level = os.environ.get("DDZTD_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    args = _parser().parse_args(argv)
    try:
        if args.subcommand not in SUBCOMMANDS:
            raise SubcommandUnknown(f"unknown subcommand {args.subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
        if args.jobs < 1:
            raise ConfigInvalid("--jobs must be at least 1")
        cfg = cfgmod.load_config(args.config) if args.config else None
        if args.subcommand == "verify":
            return run_verify(args, cfg)
        if cfg is None:
            raise ConfigInvalid(f"{args.subcommand} needs --config")
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigInvalid("--seed must be a 64-bit unsigned integer")
            cfg["seed"] = args.seed
        out = args.out or Path(cfg.get("output_dir", Path("runs") / args.subcommand))
        code, res = execute(args.subcommand, cfg, Path(out), args.jobs)
        for k, v in res.summary.items():
            print(f"{k}: {v}")
        if code == VERIFY_FAILED:
            print("verification FAILED", file=sys.stderr)
        return code
    except (ConfigInvalid, SubcommandUnknown) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR
    except (DdztdError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
