import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgtrade.engine import (
    AdaptiveState,
    Direction,
    HistoryIndex,
    InsufficientHistory,
    Strategy,
    encode_history,
    generate_bank,
    strategy_predict,
)

UP, DOWN = Direction.UP, Direction.DOWN


def brute_force_tables(m):
    """Every 2^m-bit table as an int, built bit by bit from itertools.product."""
    n = 1 << m
    tables = set()
    for bits in itertools.product((0, 1), repeat=n):
        tables.add(sum(b << h for h, b in enumerate(bits)))
    return tables


def naive_run(tables_by_m, signs, max_memory):
    """Reference predictor: plain dicts and loops, no bit packing."""
    scores = {m: [0] * len(t) for m, t in tables_by_m.items()}
    preds, choices = [], []
    for t in range(max_memory, len(signs)):
        best_m = best_i = best_s = None
        for m in sorted(tables_by_m):
            s = scores[m]
            i = s.index(max(s))
            if best_s is None or s[i] > best_s:
                best_m, best_i, best_s = m, i, s[i]
        hist = {m: sum(signs[t - 1 - k] << k for k in range(m)) for m in tables_by_m}
        preds.append((tables_by_m[best_m][best_i] >> hist[best_m]) & 1)
        choices.append((best_m, best_i))
        for m, tabs in tables_by_m.items():
            for i, tab in enumerate(tabs):
                scores[m][i] += 1 if ((tab >> hist[m]) & 1) == signs[t] else -1
    return preds, choices, scores


# ---------------------------------------------------------------- encode_history


def test_encode_all_down():
    assert encode_history([DOWN, DOWN, DOWN], 3) == HistoryIndex(3, 0)


def test_encode_all_up():
    assert encode_history([UP, UP], 2).index == 3


def test_encode_most_recent_in_lsb():
    # last three oldest-to-newest: Up, Down, Up -> bits 1,0,1 -> 5
    assert encode_history([DOWN, UP, DOWN, UP], 3).index == 5
    assert encode_history([UP, DOWN, DOWN], 3).index == 0b100
    assert encode_history([DOWN, DOWN, UP], 3).index == 0b001


def test_encode_insufficient_history():
    with pytest.raises(InsufficientHistory, match="insufficient history"):
        encode_history([UP], 2)


def test_history_index_range_checked():
    with pytest.raises(ValueError):
        HistoryIndex(2, 4)


# ---------------------------------------------------------------- generate_bank


@pytest.mark.parametrize("m,count", [(1, 4), (2, 16), (3, 256)])
def test_full_enumeration_matches_brute_force(m, count):
    bank = generate_bank(m, 10_000, seed=7)
    tables = bank.tables()
    assert len(tables) == count
    assert set(tables) == brute_force_tables(m)
    assert tables == sorted(tables)


def test_m1_bank_order():
    assert generate_bank(1).tables() == [0b00, 0b01, 0b10, 0b11]


def test_sampled_bank_m4():
    a = generate_bank(4, 10_000, seed=3)
    b = generate_bank(4, 10_000, seed=3)
    assert len(a) == 10_000
    assert len(set(a.tables())) == 10_000
    assert np.array_equal(a.packed, b.packed)
    assert not np.array_equal(a.packed, generate_bank(4, 10_000, seed=4).packed)
    assert all(0 <= t < 1 << 16 for t in a.tables())


def test_sampled_bank_m10_table_width():
    bank = generate_bank(10, 50, seed=1)
    assert bank.packed.shape == (128, 50)
    assert len(set(bank.tables())) == 50


@pytest.mark.parametrize("m,cap", [(1, 3), (2, 5), (3, 100)])
def test_small_cap_samples_distinct_subset(m, cap):
    bank = generate_bank(m, cap, seed=11)
    tables = bank.tables()
    assert len(tables) == len(set(tables)) == cap
    assert set(tables) <= brute_force_tables(m)


def test_bank_scores_start_at_zero():
    assert not generate_bank(5, 200).scores.any()


def test_generate_bank_preconditions():
    with pytest.raises(ValueError):
        generate_bank(0)
    with pytest.raises(ValueError):
        generate_bank(2, cap=0)


# ---------------------------------------------------------------- strategy_predict


def test_constant_strategies():
    assert strategy_predict(Strategy(2, 0b1111), HistoryIndex(2, 2)) == UP
    for h in range(4):
        assert strategy_predict(Strategy(2, 0), HistoryIndex(2, h)) == DOWN


def test_read_bits():
    s = Strategy(2, 0b0110)
    assert strategy_predict(s, HistoryIndex(2, 1)) == UP
    assert strategy_predict(s, HistoryIndex(2, 3)) == DOWN


def test_predict_mismatched_memory():
    with pytest.raises(ValueError, match="mismatch"):
        strategy_predict(Strategy(2, 0), HistoryIndex(3, 0))


def test_bank_predictions_agree_with_strategy_predict():
    bank = generate_bank(5, 300, seed=2)
    for h in (0, 7, 19, 31):
        col = bank.predictions(h)
        for i in (0, 1, 150, 299):
            assert col[i] == strategy_predict(bank.strategy(i), HistoryIndex(5, h))


# ---------------------------------------------------------------- update_scores


def test_update_m1_hand_enumeration():
    state = AdaptiveState(max_memory=1)
    state.update_scores([UP], UP)
    # history index 1; tables 10 and 11 predict Up there
    assert state.banks[1].scores.tolist() == [-1, -1, 1, 1]


def test_constant_up_strategy_scores_every_step():
    state = AdaptiveState(max_memory=2)
    signs = [UP, UP]
    for _ in range(25):
        state.update_scores(signs, UP)
    assert state.banks[2].scores[15] == 25  # table 1111
    assert state.banks[1].scores[3] == 25


def test_update_requires_full_history():
    state = AdaptiveState(max_memory=3)
    with pytest.raises(InsufficientHistory):
        state.update_scores([UP, UP], UP)


def test_update_is_deterministic():
    a = AdaptiveState(max_memory=4, strategy_cap=100, rng_seed=5)
    b = AdaptiveState(max_memory=4, strategy_cap=100, rng_seed=5)
    sig = [UP, DOWN, DOWN, UP]
    for s in (a, b):
        s.update_scores(sig, DOWN)
    for m in a.banks:
        assert np.array_equal(a.banks[m].scores, b.banks[m].scores)


def test_iid_signs_score_has_zero_mean():
    # Monte Carlo over seeds: mean final score of a fixed strategy ~ 0
    T, runs = 200, 300
    finals = []
    for seed in range(runs):
        rng = np.random.default_rng(seed)
        signs = rng.integers(0, 2, size=T + 3).tolist()
        state = AdaptiveState(max_memory=3, strategy_cap=10_000)
        state.run(signs)
        finals.append(int(state.banks[3].scores[0b10110101]))
    mean = np.mean(finals)
    # each final score has variance T under the null
    assert abs(mean) < 3 * np.sqrt(T / runs)


# ---------------------------------------------------------------- select_best / predict_next


def test_select_best_initial_tie_break():
    assert AdaptiveState(max_memory=4, strategy_cap=50).select_best() == (1, 0)


def test_select_best_ties_go_to_smallest_memory():
    state = AdaptiveState(max_memory=4, strategy_cap=50)
    state.banks[2].scores[5] = 7
    state.banks[3].scores[9] = 7
    state.banks[4].scores[1] = 3
    assert state.select_best() == (2, 5)


def test_select_best_lowest_index_within_bank():
    state = AdaptiveState(max_memory=2)
    state.banks[2].scores[[4, 9]] = 2
    assert state.select_best() == (2, 4)


def test_predict_next_initial_is_down():
    state = AdaptiveState(max_memory=3, strategy_cap=100)
    assert state.predict_next([UP, UP, UP]) == DOWN
    assert state.selection_log == [(1, 0)]


def test_predict_next_insufficient():
    with pytest.raises(InsufficientHistory):
        AdaptiveState(max_memory=3).predict_next([UP])


def test_period_four_pattern_selected_strategy_is_right():
    pattern = [UP, UP, DOWN, DOWN]
    signs = (pattern * 130)[:504]
    state = AdaptiveState(max_memory=3)
    for t in range(3, 503):
        state.update_scores(signs[:t], signs[t])
    m, i = state.select_best()
    strat = state.banks[m].strategy(i)
    # check the chosen table on every history the pattern visits
    for t in range(3, 3 + 4):
        h = encode_history(signs[:t], m)
        assert strategy_predict(strat, h) == signs[t]


def test_all_up_predicts_up_after_learn_in():
    signs = [UP] * 60
    trace = AdaptiveState(max_memory=4, strategy_cap=300).run(signs)
    assert trace.predictions[0] == DOWN
    assert trace.predictions[1:].all()


def test_period_two_pattern_perfect_after_learn_in():
    signs = [UP, DOWN] * 60
    trace = AdaptiveState(max_memory=4, strategy_cap=300).run(signs)
    assert np.array_equal(trace.predictions[10:], np.array(signs[14:], dtype=np.uint8))
    assert set(trace.chosen_m[10:].tolist()) == {1}


# ---------------------------------------------------------------- run() vs reference


@pytest.mark.parametrize("seed", range(4))
def test_run_matches_naive_reference(seed):
    rng = np.random.default_rng(100 + seed)
    signs = rng.integers(0, 2, size=120).tolist()
    state = AdaptiveState(max_memory=5, strategy_cap=60, rng_seed=seed)
    tables = {m: b.tables() for m, b in state.banks.items()}
    trace = state.run(signs)
    preds, choices, scores = naive_run(tables, signs, 5)
    assert trace.predictions.tolist() == preds
    assert list(zip(trace.chosen_m.tolist(), trace.chosen_index.tolist())) == choices
    for m in tables:
        assert state.banks[m].scores.tolist() == scores[m]
    assert state.selection_log == choices


def test_run_matches_step_api():
    rng = np.random.default_rng(9)
    signs = rng.integers(0, 2, size=80).tolist()
    a = AdaptiveState(max_memory=4, strategy_cap=40, rng_seed=1)
    b = AdaptiveState(max_memory=4, strategy_cap=40, rng_seed=1)
    trace = a.run(signs)
    preds = []
    for t in range(4, len(signs)):
        preds.append(int(b.predict_next(signs[:t])))
        b.update_scores(signs[:t], signs[t])
    assert trace.predictions.tolist() == preds
    assert a.selection_log == b.selection_log


def test_fixed_memory_columns_match_single_bank_run():
    rng = np.random.default_rng(4)
    signs = rng.integers(0, 2, size=300)
    full = AdaptiveState(max_memory=6, strategy_cap=500, rng_seed=2).run(signs)
    for m in (1, 4, 6):
        single = AdaptiveState(max_memory=6, strategy_cap=500, rng_seed=2, memories=(m,)).run(signs)
        pred, choice = full.fixed(m)
        assert np.array_equal(single.predictions, pred)
        assert np.array_equal(single.chosen_index, choice)
        assert set(single.chosen_m.tolist()) == {m}


def test_run_too_short():
    with pytest.raises(InsufficientHistory):
        AdaptiveState(max_memory=3).run([1, 0, 1])


# ---------------------------------------------------------------- properties


@pytest.mark.parametrize("m", [1, 2, 3])
def test_full_bank_score_conservation(m):
    rng = np.random.default_rng(m)
    signs = rng.integers(0, 2, size=200)
    state = AdaptiveState(max_memory=3, memories=(m,))
    bank = state.banks[m]
    for t in range(3, 40):
        before = bank.scores.copy()
        bank.update(encode_history(signs[:t], m).index, int(signs[t]))
        diff = bank.scores - before
        assert (diff == 1).sum() == (diff == -1).sum() == len(bank) // 2
        assert bank.scores.sum() == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=5, max_size=80), st.integers(0, 50))
def test_score_bound_and_determinism(signs, seed):
    a = AdaptiveState(max_memory=4, strategy_cap=30, rng_seed=seed)
    b = AdaptiveState(max_memory=4, strategy_cap=30, rng_seed=seed)
    ta, tb = a.run(signs), b.run(signs)
    n_updates = len(signs) - 4
    for bank in a.banks.values():
        assert np.abs(bank.scores).max() <= n_updates
    assert a.selection_log == b.selection_log
    assert np.array_equal(ta.predictions, tb.predictions)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=5, max_size=60), st.integers(-50, 50))
def test_argmax_invariant_under_constant_shift(signs, shift):
    state = AdaptiveState(max_memory=4, strategy_cap=30)
    state.run(signs)
    before = state.select_best()
    for bank in state.banks.values():
        bank.scores += shift
    assert state.select_best() == before


def _primitive_words(p):
    for bits in itertools.product((0, 1), repeat=p):
        w = list(bits)
        if all(w != w[d:] + w[:d] for d in range(1, p)):
            yield w


@pytest.mark.parametrize("p", [2, 3, 4])
def test_pattern_learning_full_bank(p):
    # m = p: the p rotations of a primitive word are distinct histories
    for word in _primitive_words(p):
        signs = (word * (200 // p + 2))[:200]
        state = AdaptiveState(max_memory=p, strategy_cap=1 << (1 << p), memories=(p,))
        assert len(state.banks[p]) == 1 << (1 << p)
        trace = state.run(signs)
        assert state.banks[p].best_score() == len(signs) - p
        assert np.array_equal(trace.predictions[p:], np.array(signs[2 * p :], dtype=np.uint8))


def test_pattern_learning_de_bruijn_short_memory():
    # period 8 with every 3-window distinct: m = ceil(log2 8) = 3 suffices
    word = [0, 0, 0, 1, 0, 1, 1, 1]
    windows = {tuple((word * 2)[i : i + 3]) for i in range(8)}
    assert len(windows) == 8
    signs = (word * 40)[:300]
    state = AdaptiveState(max_memory=3, memories=(3,))
    trace = state.run(signs)
    assert state.banks[3].best_score() == len(signs) - 3
    assert np.array_equal(trace.predictions[8:], np.array(signs[11:], dtype=np.uint8))
