"""Long/flat trading on engine predictions, with proportional costs and metrics."""
from __future__ import annotations

import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .data import PriceSeries, ReturnSeries, resample, to_returns
from .engine import DEFAULT_CAP, DEFAULT_MAX_MEMORY, AdaptiveState, EngineTrace


@dataclass(frozen=True)
class BacktestConfig:
    strategy_cap: int = DEFAULT_CAP
    max_memory: int = DEFAULT_MAX_MEMORY
    cost_rate: float = 0.001
    learn_in: int = 500
    window: int = 250
    horizon: int = 1
    seed: int = 0
    # None means every memory length 1..max_memory (adaptive selection)
    memories: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.cost_rate < 0 or self.cost_rate >= 1:
            raise ValueError("cost_rate must be in [0, 1)")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.learn_in < 0:
            raise ValueError("learn_in must be >= 0")
        if self.max_memory < 1:
            raise ValueError("max_memory must be >= 1")
        if self.strategy_cap < 1:
            raise ValueError("strategy_cap must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["memories"] = list(self.memories) if self.memories is not None else None
        return d


@dataclass(eq=False)
class BacktestResult:
    """Outcome of trading one asset.

    Per-step arrays have one entry per scored step. Equity curves have one
    more entry: index 0 is the starting wealth of 1.0 and index ``k + 1`` the
    wealth after step ``k``.
    """

    asset_id: str
    predictions: np.ndarray
    realized: np.ndarray
    positions: np.ndarray
    step_returns: np.ndarray
    equity_gross: np.ndarray
    equity_net: np.ndarray
    bh_equity: np.ndarray
    transactions: np.ndarray
    chosen_m: np.ndarray
    chosen_index: np.ndarray
    cost_rate: float = 0.0
    learn_in: int = 0
    max_memory: int = DEFAULT_MAX_MEMORY
    dates: np.ndarray | None = None
    trace: EngineTrace | None = None

    def __len__(self) -> int:
        return len(self.predictions)

    @property
    def selection_log(self) -> list[tuple[int, int]]:
        return list(zip(self.chosen_m.tolist(), self.chosen_index.tolist()))

    @property
    def n_transactions(self) -> int:
        return int(self.transactions.sum())


def equity_curves(step_returns, positions, cost_rate: float):
    """Gross, net and buy-and-hold wealth for a 0/1 position path.

    The position before the first step is flat, so an initial long position
    counts as one transaction. Each change of position multiplies wealth by
    ``1 - cost_rate``.
    """
    r = np.asarray(step_returns, dtype=np.float64)
    pos = np.asarray(positions, dtype=np.uint8)
    if r.shape != pos.shape:
        raise ValueError("returns and positions differ in length")
    changes = np.diff(pos, prepend=np.uint8(0)) != 0
    gross = np.concatenate([[1.0], np.cumprod(1.0 + pos * r)])
    n_changes = np.concatenate([[0], np.cumsum(changes)])
    net = gross * (1.0 - cost_rate) ** n_changes
    bh = np.concatenate([[1.0], np.cumprod(1.0 + r)])
    return gross, net, bh, changes


def evaluate_predictions(
    returns: ReturnSeries | Sequence[float],
    predictions,
    cost_rate: float = 0.0,
    *,
    start: int = 0,
    learn_in: int = 0,
    chosen_m=None,
    chosen_index=None,
    max_memory: int = DEFAULT_MAX_MEMORY,
    trace: EngineTrace | None = None,
) -> BacktestResult:
    """Trade a given prediction stream against returns ``start:`` onward."""
    if isinstance(returns, ReturnSeries):
        asset_id, r, dates = returns.asset_id, returns.simple_returns, returns.dates
    else:
        asset_id, r, dates = "", np.asarray(returns, dtype=np.float64), None
    r = r[start:]
    pred = np.asarray(predictions, dtype=np.uint8)
    if len(pred) != len(r):
        raise ValueError(f"{len(pred)} predictions for {len(r)} returns")
    positions = pred.copy()
    gross, net, bh, changes = equity_curves(r, positions, cost_rate)
    n = len(pred)
    if chosen_m is None:
        chosen_m = np.zeros(n, dtype=np.int16)
        chosen_index = np.zeros(n, dtype=np.int32)
    return BacktestResult(
        asset_id=asset_id,
        predictions=pred,
        realized=(r > 0).astype(np.uint8),
        positions=positions,
        step_returns=r,
        equity_gross=gross,
        equity_net=net,
        bh_equity=bh,
        transactions=changes,
        chosen_m=np.asarray(chosen_m),
        chosen_index=np.asarray(chosen_index),
        cost_rate=cost_rate,
        learn_in=learn_in,
        max_memory=max_memory,
        dates=None if dates is None else dates[start:],
        trace=trace,
    )


def run_backtest(returns: ReturnSeries, config: BacktestConfig = BacktestConfig()) -> BacktestResult:
    """Run the adaptive engine over ``returns`` and trade its predictions.

    Scoring starts at the first return preceded by ``max_memory`` returns; the
    prediction for each step uses only earlier signs.
    """
    if len(returns) <= config.max_memory + 1:
        raise ValueError(
            f"{returns.asset_id}: {len(returns)} returns, need more than {config.max_memory + 1}"
        )
    state = AdaptiveState(
        max_memory=config.max_memory,
        strategy_cap=config.strategy_cap,
        rng_seed=config.seed,
        memories=config.memories,
    )
    trace = state.run(returns.signs)
    return evaluate_predictions(
        returns,
        trace.predictions,
        config.cost_rate,
        start=trace.start,
        learn_in=config.learn_in,
        chosen_m=trace.chosen_m,
        chosen_index=trace.chosen_index,
        max_memory=config.max_memory,
        trace=trace,
    )


def fixed_memory_result(result: BacktestResult, m: int) -> BacktestResult:
    """The run a single-bank engine of memory ``m`` would have produced.

    Read off the per-bank record of an adaptive run; banks are seeded per
    memory length, so this matches running with ``memories=(m,)``.
    """
    if result.trace is None:
        raise ValueError("result carries no engine trace")
    pred, choice = result.trace.fixed(m)
    r = result.step_returns
    gross, net, bh, changes = equity_curves(r, pred, result.cost_rate)
    return replace(
        result,
        predictions=pred.copy(),
        positions=pred.copy(),
        equity_gross=gross,
        equity_net=net,
        bh_equity=bh,
        transactions=changes,
        chosen_m=np.full(len(pred), m, dtype=np.int16),
        chosen_index=choice.copy(),
        trace=None,
    )


def _start(result: BacktestResult, start: int | None) -> int:
    return result.learn_in if start is None else start


def success_rate(result: BacktestResult, from_step: int | None = None, to_step: int | None = None) -> float:
    """Fraction of correct predictions over steps ``[from_step, to_step)``.

    ``from_step`` defaults to the end of the learn-in period.
    """
    lo = _start(result, from_step)
    hi = len(result) if to_step is None else to_step
    if lo < 0 or hi > len(result) or hi <= lo:
        raise ValueError(f"empty or invalid step range [{lo}, {hi}) for {len(result)} steps")
    hits = result.predictions[lo:hi] == result.realized[lo:hi]
    return float(hits.mean())


def rolling_success(result: BacktestResult, window: int, start: int | None = None) -> np.ndarray:
    """Trailing-window success rate; entry ``i`` covers steps ``start+i .. start+i+window-1``."""
    lo = _start(result, start)
    hits = (result.predictions[lo:] == result.realized[lo:]).astype(np.int64)
    if window < 1 or window > len(hits):
        raise ValueError(f"window {window} longer than the {len(hits)} scored steps")
    c = np.concatenate([[0], np.cumsum(hits)])
    return (c[window:] - c[:-window]) / window


def trading_curves(result: BacktestResult, start: int | None = None):
    """Gross, net and buy-and-hold wealth plus transaction flags when trading
    begins flat at step ``start`` (default: end of learn-in)."""
    start = _start(result, start)
    if not 0 <= start < len(result):
        raise ValueError(f"start {start} outside the {len(result)} scored steps")
    if start == 0:
        return result.equity_gross, result.equity_net, result.bh_equity, result.transactions
    return equity_curves(result.step_returns[start:], result.positions[start:], result.cost_rate)


def return_ratio(result: BacktestResult, net: bool = True, start: int | None = None) -> np.ndarray:
    """Strategy wealth over buy-and-hold wealth, both starting at ``start``.

    Trading starts flat at ``start`` (default: end of learn-in), so holding a
    position there costs one entry transaction.
    """
    gross, net_eq, bh, _ = trading_curves(result, start)
    if np.any(bh <= 0):
        raise ValueError("buy-and-hold wealth must stay positive")
    return (net_eq if net else gross) / bh


def strategy_returns(result: BacktestResult, net: bool = True, start: int | None = None) -> np.ndarray:
    """Per-step returns of the traded strategy from ``start`` onward."""
    gross, net_eq, _, _ = trading_curves(result, start)
    eq = net_eq if net else gross
    return eq[1:] / eq[:-1] - 1.0


def usage_distributions(result: BacktestResult, start: int | None = None):
    """Selection frequencies over decision steps from ``start`` onward.

    Returns ``(memory_usage, strategy_usage)``: a dict of fraction per memory
    length 1..max_memory, and ``((m, index), fraction)`` pairs sorted by
    descending fraction.
    """
    lo = _start(result, start)
    ms = result.chosen_m[lo:]
    idx = result.chosen_index[lo:]
    n = len(ms)
    if n == 0:
        raise ValueError("empty selection log")
    m_counts = Counter(ms.tolist())
    top = max(result.max_memory, max(m_counts))
    memory_usage = {m: m_counts.get(m, 0) / n for m in range(1, top + 1)}
    s_counts = Counter(zip(ms.tolist(), idx.tolist()))
    strategy_usage = sorted(
        ((key, c / n) for key, c in s_counts.items()), key=lambda kv: (-kv[1], kv[0])
    )
    return memory_usage, strategy_usage


def oracle_success_rate(returns: Sequence[ReturnSeries]) -> float:
    """Success of the best constant prediction per asset, weighted by observations."""
    if len(returns) == 0:
        raise ValueError("no return series given")
    hits = total = 0
    for rs in returns:
        up = int(rs.signs.sum())
        hits += max(up, len(rs) - up)
        total += len(rs)
    if total == 0:
        raise ValueError("return series are empty")
    return hits / total


def prepare_returns(prices: PriceSeries, horizon: int) -> ReturnSeries:
    return to_returns(resample(prices, horizon))


def asset_config(config: BacktestConfig, asset_index: int) -> BacktestConfig:
    return replace(config, seed=config.seed ^ asset_index)


def _run_one(args):
    returns, config = args
    return run_backtest(returns, config)


def thread_count() -> int:
    env = os.environ.get("MG_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_many(
    returns: Sequence[ReturnSeries], config: BacktestConfig, threads: int | None = None
) -> list[BacktestResult]:
    """Backtest every asset with its own seed (``seed ^ asset_index``), in input order."""
    jobs = [(rs, asset_config(config, i)) for i, rs in enumerate(returns)]
    workers = min(threads or thread_count(), len(jobs))
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
