"""Command-line operator surface: simulate | oracle | analyze | frontier | coverage.

Every run is driven by one structured config file; the seed is mandatory and
reruns with identical config and seed produce byte-identical artifacts.
Errors exit nonzero with a machine-parsable ``error_code=...`` final line;
an infeasible selection is a reported status, not an error.
"""

import argparse
import csv
import sys
from pathlib import Path

from . import io as rio
from .chart import render_chart
from .errors import ConfigError, RcdsError
from .msm import MsmSpec, WeightOptions, analyze_cohort, bootstrap_pipeline
from .optimize import frontier, select
from .simulate import DgpParams, oracle_truth, simulate_cohort
from .strategies import StrategyGrid
from .study import run_coverage
from .weights import MonitorFeatureSpec


def _grid_from(block):
    return StrategyGrid.default(
        x_start=float(block.get("x_start", 200)),
        x_stop=float(block.get("x_stop", 500)),
        x_step=float(block.get("x_step", 10)),
        window_below=tuple(block.get("window_below", (2, 7))),
        window_above=tuple(block.get("window_above", (8, 13))),
        override_window=tuple(block.get("override_window", (2, 7))),
    )


def _dgp_from(block, seed):
    d = dict(block)
    d.setdefault("seed", seed)
    return DgpParams.from_dict(d)


def _msm_from(block):
    knots = block.get("strategy_knots")
    return MsmSpec(
        strategy_knots=tuple(knots) if knots else None,
        baseline_terms=block.get("baseline_terms", "all"),
    )


def _wopts_from(block):
    feat = block.get("features", {})
    spec = MonitorFeatureSpec(
        marker=feat.get("marker", "rcs"),
        marker_knots=int(feat.get("marker_knots", 3)),
        gap=feat.get("gap", "linear"),
        gap_cap=int(feat.get("gap_cap", 13)),
        override=bool(feat.get("override", True)),
        month=feat.get("month", "none"),
        baseline=tuple(feat.get("baseline", ())),
    )
    trunc = block.get("truncation")
    return WeightOptions(
        numerator=block.get("numerator", "one"),
        truncation=float(trunc) if trunc is not None else None,
        weighting=block.get("weighting", "ip"),
        monitor_spec=spec,
    )


def _schema_from(cfg):
    block = cfg.section("baseline_schema", [])
    return rio.schema_from_config(block) if block else None


def _load_cohort(cfg):
    return rio.ingest_cohort(
        cfg.raw["input"],
        schema=_schema_from(cfg),
        horizon=cfg.raw.get("horizon"),
    )


def _monitor_info(model):
    if model is None:
        return {"weighting": "none"}
    return {
        "log_likelihood": float(model.loglik),
        "iterations": int(model.iterations),
        "n_decision_months": int(model.n_decisions),
        "columns": list(model.columns),
    }


def run(config):
    """Execute one configured run and write its artifacts. Returns exit status."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = config.seed

    if config.mode == "simulate":
        params = _dgp_from(config.section("dgp"), seed)
        n = int(config.raw.get("n", 1000))
        cohort = simulate_cohort(params, n, seed=seed)
        rio.cohort_to_csv(cohort, out / "cohort.csv")
        rio.dump_yaml(params.to_dict(), out / "dgp.yaml")
        print(f"wrote {out / 'cohort.csv'} ({cohort.n_subjects} subjects)")
        return 0

    if config.mode == "oracle":
        params = _dgp_from(config.section("dgp"), seed)
        grid = _grid_from(config.section("grid"))
        n_mc = int(config.raw.get("n_mc", 100_000))
        rule = config.raw.get("rule", "earliest")
        numerator = config.raw.get("numerator", "marginal")
        truth = oracle_truth(params, grid, n_mc, rule=rule, seed=seed,
                             numerator=numerator)
        rio.truth_to_csv(truth, out / "truth.csv")
        print(f"wrote {out / 'truth.csv'} (rule={rule}, n_mc={n_mc})")
        return 0

    if config.mode in ("analyze", "frontier"):
        cohort = _load_cohort(config)
        grid = _grid_from(config.section("grid"))
        spec = _msm_from(config.section("msm"))
        wopts = _wopts_from(config.section("weights"))
        B = int(config.raw.get("bootstrap", 0))
        point = bootstrap_pipeline(cohort, grid, spec, wopts, B=B, seed=seed) \
            if B > 0 else analyze_cohort(cohort, grid, spec, wopts)
        table = point.table

        if config.mode == "analyze":
            kappa = float(config.raw["kappa"])
            sel = select(table, kappa)
            rio.report_to_csv(table, out / "report.csv", selection=sel)
            rio.dump_yaml(sel.to_dict(), out / "selection.yaml")
            rio.dump_yaml(
                {"weights": point.weights.to_dict(),
                 "monitor_model": _monitor_info(point.monitor_model),
                 "bootstrap": {"B": int(table.n_boot),
                               "failed": int(table.n_failed)}},
                out / "weights.yaml",
            )
            svg = render_chart(table, kappa, sel)
            (out / "chart.svg").write_text(svg)
            status = sel.status
            print(f"selection status: {status}; chosen_x="
                  f"{sel.chosen_x if sel.chosen_x is not None else 'none'}")
            return 0

        kappas = [float(v) for v in config.raw.get("kappa_grid", [])]
        if not kappas:
            raise ConfigError("frontier mode needs a kappa_grid")
        fr = frontier(table, kappas)
        rio.report_to_csv(table, out / "report.csv",
                          selection=fr.selections[-1])
        with open(out / "frontier.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kappa", "status", "chosen_x", "chosen_risk",
                        "chosen_usage"])
            for s in fr.selections:
                w.writerow([
                    repr(float(s.kappa)), s.status,
                    "" if s.chosen_x is None else repr(float(s.chosen_x)),
                    "" if s.chosen_risk is None else repr(float(s.chosen_risk)),
                    "" if s.chosen_usage is None else repr(float(s.chosen_usage)),
                ])
        rio.dump_yaml(
            {"steps": [
                {"kappa_from": st.kappa_from, "kappa_to": st.kappa_to,
                 "x_from": st.x_from, "x_to": st.x_to,
                 "risk_change": st.risk_change,
                 "usage_change": st.usage_change,
                 "risk_per_usage": st.risk_per_usage}
                for st in fr.steps
            ]},
            out / "frontier.yaml",
        )
        print(f"wrote {out / 'frontier.csv'} ({len(kappas)} caps)")
        return 0

    if config.mode == "coverage":
        params = _dgp_from(config.section("dgp"), seed)
        grid = _grid_from(config.section("grid"))
        spec = _msm_from(config.section("msm"))
        wopts = _wopts_from(config.section("weights"))
        res = run_coverage(
            params, grid,
            x_value=float(config.raw.get("x_value", 350)),
            n_cohorts=int(config.raw.get("n_cohorts", 200)),
            n=int(config.raw.get("n", 2000)),
            B=int(config.raw.get("bootstrap", 200)),
            seed=seed, spec=spec, wopts=wopts,
            oracle_n_mc=int(config.raw.get("oracle_n_mc", 200_000)),
            oracle_rule=config.raw.get("oracle_rule", "conditional"),
        )
        with open(out / "coverage.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cohort", "risk", "risk_lo", "risk_hi", "covered"])
            for r in res.rows:
                w.writerow([r["cohort"], repr(r["risk"]), repr(r["risk_lo"]),
                            repr(r["risk_hi"]), r["covered"]])
        rio.dump_yaml(res.to_dict(), out / "coverage.yaml")
        print(f"coverage: {res.coverage:.3f}")
        return 0

    raise ConfigError(f"unhandled mode {config.mode!r}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="rcds",
        description="Resource-constrained dynamic monitoring strategies",
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "oracle", "analyze", "frontier", "coverage"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--kappa", type=float, default=None)
        sp.add_argument("--bootstrap", type=int, default=None)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = rio.load_config(args.config)
        if config.mode != args.command:
            raise ConfigError(
                f"config mode {config.mode!r} does not match subcommand "
                f"{args.command!r}"
            )
        if args.seed is not None:
            config.seed = args.seed
        if args.out is not None:
            config.out = args.out
        if args.kappa is not None:
            config.raw["kappa"] = args.kappa
        if args.bootstrap is not None:
            config.raw["bootstrap"] = args.bootstrap
        return run(config)
    except RcdsError as err:
        print(f"error: {err}", file=sys.stderr)
        print(f"error_code={err.code}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
