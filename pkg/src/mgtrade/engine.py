"""Adaptive minority-game predictor.

Each memory length ``m`` owns a bank of strategies. A strategy is a lookup
table with one bit per possible ``m``-step sign history (1 = Up). Every bank
is scored virtually at each step (+1 for a correct prediction, -1 otherwise),
and the prediction comes from the best strategy of the best-scoring bank.

Tables are stored bit-packed and transposed: ``packed[b, i]`` holds bits
``8*b .. 8*b+7`` of strategy ``i``, so the predictions of a whole bank for one
history are a single contiguous byte row plus a shift.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CAP = 10_000
DEFAULT_MAX_MEMORY = 10


class InsufficientHistory(ValueError):
    pass


class Direction(IntEnum):
    DOWN = 0
    UP = 1

    @classmethod
    def from_change(cls, change: float) -> "Direction":
        # a zero change counts as Down
        return cls.UP if change > 0 else cls.DOWN


@dataclass(frozen=True)
class HistoryIndex:
    m: int
    index: int

    def __post_init__(self):
        if not 0 <= self.index < (1 << self.m):
            raise ValueError(f"history index {self.index} out of range for m={self.m}")


@dataclass(frozen=True)
class Strategy:
    """One lookup table; bit ``h`` of ``table`` is the prediction for history ``h``."""

    m: int
    table: int

    def __post_init__(self):
        if self.table < 0 or self.table >> (1 << self.m):
            raise ValueError(f"table does not fit in 2^{self.m} bits")

    def bits(self) -> np.ndarray:
        n = 1 << self.m
        return np.array([(self.table >> h) & 1 for h in range(n)], dtype=np.uint8)


def encode_history(signs: Sequence[int], m: int) -> HistoryIndex:
    """Pack the last ``m`` signs into an index, most recent sign in bit 0."""
    if m < 1:
        raise ValueError("memory length must be >= 1")
    if len(signs) < m:
        raise InsufficientHistory(f"insufficient history: need {m} signs, got {len(signs)}")
    index = 0
    for k in range(m):
        if signs[len(signs) - 1 - k]:
            index |= 1 << k
    return HistoryIndex(m, index)


def strategy_predict(s: Strategy, h: HistoryIndex) -> Direction:
    if s.m != h.m:
        raise ValueError(f"memory length mismatch: strategy m={s.m}, history m={h.m}")
    return Direction((s.table >> h.index) & 1)


def _n_table_bytes(m: int) -> int:
    return max(1, (1 << m) // 8)


def _space_size(m: int) -> int:
    return 1 << (1 << m)


def bank_seed(seed: int, m: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, m])


class StrategyBank:
    """All strategies of one memory length together with their running scores."""

    def __init__(self, m: int, packed: np.ndarray):
        n_bytes = _n_table_bytes(m)
        if packed.ndim != 2 or packed.shape[0] != n_bytes:
            raise ValueError(f"packed tables must have shape ({n_bytes}, n)")
        self.m = m
        self.packed = np.ascontiguousarray(packed, dtype=np.uint8)
        self.packed.setflags(write=False)
        self.scores = np.zeros(self.packed.shape[1], dtype=np.int32)

    def __len__(self) -> int:
        return self.packed.shape[1]

    def strategy(self, i: int) -> Strategy:
        return Strategy(self.m, int.from_bytes(self.packed[:, i].tobytes(), "little"))

    def tables(self) -> list[int]:
        return [self.strategy(i).table for i in range(len(self))]

    def predictions(self, index: int) -> np.ndarray:
        """Prediction bit of every strategy for history ``index``."""
        return (self.packed[index >> 3] >> (index & 7)) & 1

    def update(self, index: int, realized: int) -> None:
        delta = self.predictions(index).astype(np.int32)
        delta += delta
        delta -= 1  # +1 where the strategy predicted Up, -1 where Down
        if realized:
            self.scores += delta
        else:
            self.scores -= delta

    def best(self) -> int:
        # argmax returns the first maximum, i.e. the lowest index on ties
        return int(self.scores.argmax())

    def best_score(self) -> int:
        return int(self.scores.max())


def _enumerate_tables(m: int) -> np.ndarray:
    n = _space_size(m)
    values = np.arange(n, dtype="<u8").view(np.uint8).reshape(n, 8)
    return values[:, : _n_table_bytes(m)].T


def _sample_tables(m: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    n_bytes = _n_table_bytes(m)
    mask = (1 << (1 << m)) - 1 if m < 3 else 0xFF
    seen: set[bytes] = set()
    rows: list[np.ndarray] = []
    while len(rows) < cap:
        draw = rng.integers(0, 256, size=(cap - len(rows), n_bytes), dtype=np.uint8)
        if m < 3:
            draw &= np.uint8(mask)
        for row in draw:
            key = row.tobytes()
            if key not in seen:
                seen.add(key)
                rows.append(row)
    return np.stack(rows, axis=1)


def generate_bank(m: int, cap: int = DEFAULT_CAP, seed: int = 0) -> StrategyBank:
    """Full enumeration (ascending table order) when it fits under ``cap``,
    otherwise ``cap`` distinct uniformly drawn tables."""
    if m < 1:
        raise ValueError("memory length must be >= 1")
    if cap < 1:
        raise ValueError("strategy cap must be >= 1")
    if m <= 6 and _space_size(m) <= cap:
        return StrategyBank(m, _enumerate_tables(m))
    rng = np.random.default_rng(bank_seed(seed, m))
    return StrategyBank(m, _sample_tables(m, cap, rng))


@dataclass
class EngineTrace:
    """Per-step record of one engine run over a sign sequence.

    Step ``k`` predicts sign ``start + k``. ``bank_predictions`` and
    ``bank_choices`` hold what each bank's own best strategy said, which is
    exactly the fixed-memory predictor for that memory length.
    """

    start: int
    memories: tuple[int, ...]
    predictions: np.ndarray
    chosen_m: np.ndarray
    chosen_index: np.ndarray
    bank_predictions: np.ndarray
    bank_choices: np.ndarray

    def __len__(self) -> int:
        return len(self.predictions)

    def fixed(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        col = self.memories.index(m)
        return self.bank_predictions[:, col], self.bank_choices[:, col]


@dataclass
class AdaptiveState:
    """Strategy banks for one asset plus the log of choices made.

    ``memories`` restricts the banks (e.g. a single memory length for a
    fixed-memory run); the required history is always ``max_memory`` signs so
    runs with different bank sets score the same steps.
    """

    max_memory: int = DEFAULT_MAX_MEMORY
    strategy_cap: int = DEFAULT_CAP
    rng_seed: int = 0
    memories: tuple[int, ...] | None = None
    banks: dict[int, StrategyBank] = field(init=False)
    selection_log: list[tuple[int, int]] = field(init=False, default_factory=list)

    def __post_init__(self):
        if self.max_memory < 1:
            raise ValueError("max_memory must be >= 1")
        if self.rng_seed < 0:
            raise ValueError("seed must be non-negative")
        if self.memories is None:
            self.memories = tuple(range(1, self.max_memory + 1))
        self.memories = tuple(sorted(set(self.memories)))
        if not self.memories or self.memories[0] < 1 or self.memories[-1] > self.max_memory:
            raise ValueError(f"memory lengths must lie in 1..{self.max_memory}")
        self.banks = {
            m: generate_bank(m, self.strategy_cap, self.rng_seed) for m in self.memories
        }

    def _check_history(self, signs: Sequence[int]) -> None:
        if len(signs) < self.max_memory:
            raise InsufficientHistory(
                f"insufficient history: need {self.max_memory} signs, got {len(signs)}"
            )

    def update_scores(self, signs: Sequence[int], realized: int) -> "AdaptiveState":
        """Score every strategy of every bank against ``realized``."""
        self._check_history(signs)
        for m, bank in self.banks.items():
            bank.update(encode_history(signs, m).index, int(realized))
        return self

    def select_best(self) -> tuple[int, int]:
        best_m, best_score = None, None
        for m in self.memories:
            score = self.banks[m].best_score()
            if best_score is None or score > best_score:
                best_m, best_score = m, score
        return best_m, self.banks[best_m].best()

    def predict_next(self, signs: Sequence[int]) -> Direction:
        self._check_history(signs)
        m, i = self.select_best()
        self.selection_log.append((m, i))
        bank = self.banks[m]
        return Direction(int(bank.predictions(encode_history(signs, m).index)[i]))

    def run(self, signs: Iterable[int]) -> EngineTrace:
        """Predict then score at every step that has ``max_memory`` prior signs.

        Equivalent to calling :meth:`predict_next` and :meth:`update_scores`
        in turn, with the history index maintained incrementally.
        """
        signs = np.asarray(list(signs) if not isinstance(signs, np.ndarray) else signs)
        signs = (signs > 0).astype(np.uint8)
        start = self.max_memory
        n_steps = len(signs) - start
        if n_steps < 1:
            raise InsufficientHistory(
                f"insufficient history: need more than {start} signs, got {len(signs)}"
            )
        banks = [self.banks[m] for m in self.memories]
        masks = [(1 << m) - 1 for m in self.memories]
        n_banks = len(banks)

        predictions = np.empty(n_steps, dtype=np.uint8)
        chosen_m = np.empty(n_steps, dtype=np.int16)
        chosen_index = np.empty(n_steps, dtype=np.int32)
        bank_pred = np.empty((n_steps, n_banks), dtype=np.uint8)
        bank_choice = np.empty((n_steps, n_banks), dtype=np.int32)

        history = encode_history(signs[:start], start).index
        full_mask = (1 << start) - 1
        for k in range(n_steps):
            top_score = None
            top = 0
            for j in range(n_banks):
                bank = banks[j]
                i = int(bank.scores.argmax())
                h = history & masks[j]
                bank_choice[k, j] = i
                bank_pred[k, j] = (bank.packed[h >> 3, i] >> (h & 7)) & 1
                score = bank.scores[i]
                if top_score is None or score > top_score:
                    top_score, top = score, j
            predictions[k] = bank_pred[k, top]
            chosen_m[k] = self.memories[top]
            chosen_index[k] = bank_choice[k, top]

            realized = int(signs[start + k])
            for j in range(n_banks):
                banks[j].update(history & masks[j], realized)
            history = ((history << 1) | realized) & full_mask

        self.selection_log.extend(zip(chosen_m.tolist(), chosen_index.tolist()))
        return EngineTrace(
            start=start,
            memories=self.memories,
            predictions=predictions,
            chosen_m=chosen_m,
            chosen_index=chosen_index,
            bank_predictions=bank_pred,
            bank_choices=bank_choice,
        )
