"""Command line entry point.

Run directory layout (``--out``)::

    manifest.json
    h{H}/simulate/   summary.csv, predictions/<ticker>.csv, fixed_memory/<ticker>.csv
    h{H}/backtest/   summary.csv, equity/<ticker>.csv, ratio_quantiles_{gross,net}.csv,
                     equal_weight_rolling.csv
    h{H}/frontier/   median_frontier.csv
    report/          fig*.csv

``--learn-in`` and ``--window`` are given in trading days and converted to
steps of the chosen horizon (integer division).
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import re
import shutil
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import (
    BacktestConfig,
    BacktestResult,
    fixed_memory_result,
    prepare_returns,
    run_many,
    strategy_returns,
    success_rate,
    trading_curves,
)
from .data import DataError, load_prices, parse_kind, synthetic_series, write_prices
from .portfolio import (
    FrontierError,
    ReturnMatrix,
    default_targets,
    equal_weight_returns,
    median_frontier,
    rolling_window_return,
)

QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
QUANTILE_COLS = ("q10", "q25", "q50", "q75", "q90")
HORIZONS = (1, 5, 20)
REPORT_FILES = (
    "fig1.csv", "fig2.csv", "fig5.csv", "fig6.csv", "fig7.csv", "fig8.csv", "fig9.csv",
    "fig10.csv", "fig11.csv", "fig12_weekly.csv", "fig12_monthly.csv",
    "fig13_weekly.csv", "fig13_monthly.csv",
)


class CliError(Exception):
    pass


# ---------------------------------------------------------------- inputs


@dataclass
class Inputs:
    text: str
    fingerprint: str
    prices: dict


def read_inputs(args) -> Inputs:
    if args.synthetic:
        kind, kw = parse_kind(args.synthetic)
        series = [
            synthetic_series(kind, args.length, seed=args.seed + i, asset_id=f"SYN{i:03d}", **kw)
            for i in range(args.assets)
        ]
        buf = io.StringIO()
        write_prices(series, buf)
        text = buf.getvalue()
    else:
        if not args.prices:
            raise CliError("give a price file or --synthetic KIND")
        try:
            text = Path(args.prices).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read {args.prices}: {exc.strerror}") from None
    prices = load_prices(io.StringIO(text))
    if not prices:
        raise CliError("no complete price series in input")
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return Inputs(text, f"sha256:{digest}", prices)


def steps(days: int, horizon: int, minimum: int) -> int:
    return max(minimum, days // horizon)


def make_config(args, horizon: int) -> BacktestConfig:
    return BacktestConfig(
        strategy_cap=args.strategy_cap,
        max_memory=args.max_memory,
        cost_rate=args.cost_bps / 10_000,
        learn_in=steps(args.learn_in, horizon, 0),
        window=steps(args.window, horizon, 1),
        horizon=horizon,
        seed=args.seed,
    )


def safe_name(ticker: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", ticker)


# ---------------------------------------------------------------- output plumbing


class StageWriter:
    """Collects a stage's files in a scratch directory and moves them into
    place only once the whole stage succeeded."""

    def __init__(self, out: Path, stage: str):
        self.out = out
        self.stage = stage
        self.final = out / stage
        out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".stage-", dir=out))
        self.files: list[str] = []

    def csv(self, rel: str, frame: pd.DataFrame) -> None:
        path = self.tmp / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n", na_rep="")
        self.files.append(f"{self.stage}/{rel}")

    def commit(self) -> list[str]:
        if self.final.exists():
            shutil.rmtree(self.final)
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp.rename(self.final)
        return sorted(self.files)

    def abort(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def update_manifest(out: Path, inputs: Inputs | None, seed: int, command: str, config: dict, files: list[str]) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    if inputs is not None and (
        manifest.get("input_fingerprint") != inputs.fingerprint or manifest.get("seed") != seed
    ):
        manifest = {"input_fingerprint": inputs.fingerprint, "seed": seed}
    manifest["tool_version"] = __version__
    commands = manifest.setdefault("commands", {})
    commands[command] = {"config": config, "outputs": files}
    manifest["commands"] = dict(sorted(commands.items()))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_stage(out: Path, stage: str, inputs, seed, config: dict, body) -> list[str]:
    writer = StageWriter(out, stage)
    try:
        body(writer)
    except BaseException:
        writer.abort()
        raise
    files = writer.commit()
    update_manifest(out, inputs, seed, stage, config, files)
    return files


# ---------------------------------------------------------------- computation


def compute_results(inputs: Inputs, config: BacktestConfig) -> list[BacktestResult]:
    returns = []
    for ps in inputs.prices.values():
        try:
            returns.append(prepare_returns(ps, config.horizon))
        except DataError as exc:
            raise CliError(str(exc)) from None
    for rs in returns:
        if len(rs) <= config.max_memory + 1 + config.learn_in:
            raise CliError(
                f"{rs.asset_id}: {len(rs)} returns at horizon {config.horizon} leave nothing "
                f"after max memory {config.max_memory} and learn-in {config.learn_in}"
            )
    return run_many(returns, config)


def _dates(result: BacktestResult) -> list[str]:
    # price date at the end of each step
    return [str(d) for d in result.dates[1:]]


def write_simulate(w: StageWriter, results: list[BacktestResult], config: BacktestConfig) -> None:
    rows = []
    memories = range(1, config.max_memory + 1)
    for res in results:
        name = safe_name(res.asset_id)
        w.csv(f"predictions/{name}.csv", pd.DataFrame({
            "date": _dates(res),
            "prediction": res.predictions,
            "realized": res.realized,
            "chosen_m": res.chosen_m,
            "chosen_strategy_index": res.chosen_index,
        }))
        fixed = {"date": _dates(res)}
        for m in memories:
            fixed[f"pred_m{m}"] = res.trace.fixed(m)[0]
        for m in memories:
            fixed[f"strategy_m{m}"] = res.trace.fixed(m)[1]
        w.csv(f"fixed_memory/{name}.csv", pd.DataFrame(fixed))
        realized = res.realized[res.learn_in:]
        row = {
            "ticker": res.asset_id,
            "scored_steps": len(res),
            "evaluated_steps": len(res) - res.learn_in,
            "success_rate": success_rate(res),
            "constant_oracle_rate": max(realized.mean(), 1 - realized.mean()),
        }
        for m in memories:
            row[f"success_rate_m{m}"] = success_rate(fixed_memory_result(res, m))
        rows.append(row)
    w.csv("summary.csv", pd.DataFrame(rows))


def quantile_frame(dates, table: np.ndarray) -> pd.DataFrame:
    q = np.quantile(table, QUANTILES, axis=0)
    frame = pd.DataFrame({"date": dates})
    for name, col in zip(QUANTILE_COLS, q):
        frame[name] = col
    return frame


def _trading_dates(res: BacktestResult) -> list[str]:
    return [str(d) for d in res.dates[res.learn_in:]]


def write_backtest(w: StageWriter, results: list[BacktestResult], config: BacktestConfig) -> None:
    rows = []
    gross_ratios, net_ratios = [], []
    for res in results:
        lo = res.learn_in
        eq_g, eq_n, bh, trades = trading_curves(res)
        rg, rn = eq_g / bh, eq_n / bh
        w.csv(f"equity/{safe_name(res.asset_id)}.csv", pd.DataFrame({
            "date": _trading_dates(res),
            "position": np.concatenate([[0], res.positions[lo:]]),
            "equity_gross": eq_g,
            "equity_net": eq_n,
            "bh_equity": bh,
            "ratio_gross": rg,
            "ratio_net": rn,
        }))
        gross_ratios.append(rg)
        net_ratios.append(rn)
        rows.append({
            "ticker": res.asset_id,
            "final_ratio_gross": rg[-1],
            "final_ratio_net": rn[-1],
            "transactions": int(trades.sum()),
            "final_bh_equity": bh[-1],
        })
    dates = _trading_dates(results[0])
    w.csv("ratio_quantiles_gross.csv", quantile_frame(dates, np.array(gross_ratios)))
    w.csv("ratio_quantiles_net.csv", quantile_frame(dates, np.array(net_ratios)))
    strat, held = return_matrices(results)
    window = min(config.window, strat.periods)
    w.csv("equal_weight_rolling.csv", pd.DataFrame({
        "date": dates[window:],
        "strategy": rolling_window_return(equal_weight_returns(strat), window),
        "buy_and_hold": rolling_window_return(equal_weight_returns(held), window),
    }))
    w.csv("summary.csv", pd.DataFrame(rows))


def return_matrices(results: list[BacktestResult]) -> tuple[ReturnMatrix, ReturnMatrix]:
    """Post-learn-in strategy (net of costs) and buy-and-hold return matrices."""
    names = [r.asset_id for r in results]
    strat = ReturnMatrix(names, np.column_stack([strategy_returns(r, net=True) for r in results]))
    held = ReturnMatrix(names, np.column_stack([r.step_returns[r.learn_in:] for r in results]))
    return strat, held


def write_frontier(w: StageWriter, results: list[BacktestResult], args) -> None:
    if args.subset_size > len(results):
        raise CliError(f"subset size {args.subset_size} exceeds the {len(results)} assets available")
    strat, held = return_matrices(results)
    try:
        targets = default_targets([strat, held])
        s = median_frontier(strat, args.subset_size, args.subsets, targets, seed=args.seed)
        b = median_frontier(held, args.subset_size, args.subsets, targets, seed=args.seed)
    except FrontierError as exc:
        raise CliError(str(exc)) from None
    w.csv("median_frontier.csv", pd.DataFrame({
        "target_return": targets,
        "strategy_median_stdev": [v for _, v in s],
        "bh_median_stdev": [v for _, v in b],
    }))


# ---------------------------------------------------------------- report


def _stage_config(manifest: dict, stage: str) -> dict:
    try:
        return manifest["commands"][stage]["config"]
    except KeyError:
        raise CliError(f"missing prerequisite stage {stage}") from None


def _ranked_quantiles(per_asset: list[np.ndarray], label: str) -> pd.DataFrame:
    width = max(len(u) for u in per_asset)
    table = np.zeros((len(per_asset), width))
    for i, u in enumerate(per_asset):
        table[i, : len(u)] = u
    q = np.quantile(table, QUANTILES, axis=0)
    frame = pd.DataFrame({"rank": np.arange(1, width + 1)})
    for name, col in zip(QUANTILE_COLS, q):
        frame[name] = col
    frame["cumulative_q50"] = np.quantile(np.cumsum(table, axis=1), 0.5, axis=0)
    frame.attrs["label"] = label
    return frame


def _sorted_fractions(values: np.ndarray) -> np.ndarray:
    _, counts = np.unique(values, return_counts=True)
    return np.sort(counts / len(values))[::-1]


def build_report(out: Path) -> dict[str, pd.DataFrame]:
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise CliError(f"no manifest in {out}; run simulate/backtest/frontier first")
    manifest = json.loads(manifest_path.read_text())
    needed = ["h1/simulate"] + [f"h{h}/{s}" for h in HORIZONS for s in ("backtest", "frontier")]
    for stage in needed:
        _stage_config(manifest, stage)
        if not (out / stage).is_dir():
            raise CliError(f"missing prerequisite stage {stage} (directory not found)")

    cfg = _stage_config(manifest, "h1/simulate")
    learn_in, window, max_m = cfg["learn_in"], cfg["window"], cfg["max_memory"]
    sim = out / "h1/simulate"
    tickers = pd.read_csv(sim / "summary.csv")["ticker"].astype(str).tolist()

    rolling = {f"m{m}": [] for m in range(1, max_m + 1)}
    rolling["adaptive"] = []
    mem_usage, mem_ranked, strat_ranked = [], [], []
    dates = None
    for t in tickers:
        pred = pd.read_csv(sim / f"predictions/{safe_name(t)}.csv")
        fixed = pd.read_csv(sim / f"fixed_memory/{safe_name(t)}.csv")
        real = pred["realized"].to_numpy()[learn_in:]
        if len(real) < window:
            raise CliError(f"{t}: fewer evaluated steps than the rolling window")

        def roll(p):
            hits = np.concatenate([[0], np.cumsum(p[learn_in:] == real)])
            return (hits[window:] - hits[:-window]) / window

        for m in range(1, max_m + 1):
            rolling[f"m{m}"].append(roll(fixed[f"pred_m{m}"].to_numpy()))
        rolling["adaptive"].append(roll(pred["prediction"].to_numpy()))
        dates = pred["date"].astype(str).tolist()[learn_in + window - 1 :]
        chosen = pred["chosen_m"].to_numpy()[learn_in:]
        mem_usage.append([np.mean(chosen == m) for m in range(1, max_m + 1)])
        mem_ranked.append(_sorted_fractions(chosen))
        strat_ranked.append(_sorted_fractions(fixed[f"strategy_m{max_m}"].to_numpy()[learn_in:]))

    figs: dict[str, pd.DataFrame] = {}
    fig1 = pd.DataFrame({"date": dates})
    for key, series in rolling.items():
        fig1[key] = np.mean(series, axis=0)
    figs["fig1.csv"] = fig1
    figs["fig2.csv"] = quantile_frame(dates, np.array(rolling["adaptive"]))
    figs["fig5.csv"] = pd.DataFrame({
        "memory": np.arange(1, max_m + 1), "fraction": np.mean(mem_usage, axis=0)})
    figs["fig6.csv"] = _ranked_quantiles(strat_ranked, f"strategy usage, M={max_m}")
    figs["fig7.csv"] = _ranked_quantiles(mem_ranked, "memory usage")
    figs["fig8.csv"] = pd.read_csv(out / "h1/backtest/ratio_quantiles_gross.csv")
    figs["fig9.csv"] = pd.read_csv(out / "h1/backtest/ratio_quantiles_net.csv")
    figs["fig10.csv"] = pd.read_csv(out / "h1/backtest/equal_weight_rolling.csv")
    figs["fig11.csv"] = pd.read_csv(out / "h1/frontier/median_frontier.csv")
    figs["fig12_weekly.csv"] = pd.read_csv(out / "h5/backtest/ratio_quantiles_net.csv")
    figs["fig12_monthly.csv"] = pd.read_csv(out / "h20/backtest/ratio_quantiles_net.csv")
    figs["fig13_weekly.csv"] = pd.read_csv(out / "h5/frontier/median_frontier.csv")
    figs["fig13_monthly.csv"] = pd.read_csv(out / "h20/frontier/median_frontier.csv")
    assert tuple(figs) == REPORT_FILES
    return figs


# ---------------------------------------------------------------- commands


def _horizon_stages(args, inputs: Inputs, horizon: int, stages: tuple[str, ...]) -> None:
    config = make_config(args, horizon)
    results = compute_results(inputs, config)
    out = Path(args.out)
    conf = config.to_dict()
    if "simulate" in stages:
        run_stage(out, f"h{horizon}/simulate", inputs, args.seed, conf,
                  lambda w: write_simulate(w, results, config))
        summary = pd.read_csv(out / f"h{horizon}/simulate/summary.csv")
        print(f"h{horizon}: mean success rate after learn-in "
              f"{summary['success_rate'].mean():.4f} over {len(summary)} assets")
    if "backtest" in stages:
        run_stage(out, f"h{horizon}/backtest", inputs, args.seed, conf,
                  lambda w: write_backtest(w, results, config))
    if "frontier" in stages:
        fconf = dict(conf, subset_size=args.subset_size, subsets=args.subsets)
        run_stage(out, f"h{horizon}/frontier", inputs, args.seed, fconf,
                  lambda w: write_frontier(w, results, args))


def cmd_simulate(args) -> None:
    _horizon_stages(args, read_inputs(args), args.horizon, ("simulate",))


def cmd_backtest(args) -> None:
    _horizon_stages(args, read_inputs(args), args.horizon, ("backtest",))


def cmd_frontier(args) -> None:
    _horizon_stages(args, read_inputs(args), args.horizon, ("frontier",))


def cmd_report(args) -> None:
    out = Path(args.out)
    figs = build_report(out)
    manifest = json.loads((out / "manifest.json").read_text())

    def body(w):
        for name, frame in figs.items():
            w.csv(name, frame)

    run_stage(out, "report", None, manifest.get("seed"), {}, body)
    print(f"wrote {len(figs)} figure tables to {out / 'report'}")


def cmd_run_all(args) -> None:
    inputs = read_inputs(args)
    for h in HORIZONS:
        stages = ("simulate", "backtest", "frontier") if h == 1 else ("backtest", "frontier")
        _horizon_stages(args, inputs, h, stages)
    cmd_report(args)


def cmd_synth(args) -> None:
    kind, kw = parse_kind(args.kind)
    series = [
        synthetic_series(kind, args.length, seed=args.seed + i, asset_id=f"SYN{i:03d}", **kw)
        for i in range(args.assets)
    ]
    if args.output == "-":
        write_prices(series, sys.stdout)
    else:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            write_prices(series, fh)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgtrade", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("prices", nargs="?", help="price CSV with header date,ticker,close")
        p.add_argument("--synthetic", metavar="KIND",
                       help="use synthetic data instead: iid_coin, trend, periodic:P, gbm[:MU:SIGMA]")
        p.add_argument("--assets", type=int, default=10, help="synthetic asset count")
        p.add_argument("--length", type=int, default=4000, help="synthetic series length")
        p.add_argument("--max-memory", type=int, default=10)
        p.add_argument("--strategy-cap", type=int, default=10_000)
        p.add_argument("--cost-bps", type=float, default=10.0, help="cost per transaction in basis points")
        p.add_argument("--learn-in", type=int, default=500, help="trading days excluded from metrics")
        p.add_argument("--window", type=int, default=250, help="rolling window in trading days")
        p.add_argument("--horizon", type=int, choices=HORIZONS, default=1)
        p.add_argument("--subset-size", type=int, default=50)
        p.add_argument("--subsets", type=int, default=100)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="run")

    for name, func, help_ in [
        ("simulate", cmd_simulate, "per-step predictions and success rates"),
        ("backtest", cmd_backtest, "equity curves and buy-and-hold ratios"),
        ("frontier", cmd_frontier, "median efficient frontiers"),
        ("run-all", cmd_run_all, "all stages at horizons 1, 5, 20 plus the report"),
    ]:
        p = sub.add_parser(name, help=help_)
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="figure tables from a completed run directory")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic price CSV")
    p.add_argument("kind", help="iid_coin, trend, periodic:P, gbm[:MU:SIGMA]")
    p.add_argument("--length", type=int, default=4000)
    p.add_argument("--assets", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default="-")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, DataError, FrontierError, ValueError) as exc:
        print(f"mgtrade: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
