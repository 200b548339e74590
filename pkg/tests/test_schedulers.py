import math

import pytest

from mdlm_decode import (
    EmptyCandidates,
    MaskedSequence,
    PositionReport,
    Selection,
    SelectionRule,
    block_window,
    select_ar_med,
    select_left_to_right,
    select_med,
    select_min_entropy,
)
from mdlm_decode.rng import generator


def reports(entropy_by_position):
    return [
        PositionReport(position=p, entropy=h, top=[(0, -0.1)])
        for p, h in sorted(entropy_by_position.items())
    ]


class TestLeftToRight:
    def test_smallest_position(self):
        assert select_left_to_right(reports({4: 0.5, 7: 0.1, 9: 0.9})).positions == (4,)

    def test_single_candidate(self):
        assert select_left_to_right(reports({11: 0.3})).positions == (11,)

    def test_empty(self):
        with pytest.raises(EmptyCandidates):
            select_left_to_right([])


class TestMinEntropy:
    def test_k1(self):
        sel = select_min_entropy(reports({4: 0.9, 7: 0.1, 9: 0.3}), k=1)
        assert sel.positions == (7,)
        assert sel.rationale == SelectionRule.MIN_ENTROPY

    def test_k2(self):
        sel = select_min_entropy(reports({4: 0.9, 7: 0.1, 9: 0.3}), k=2)
        assert sel.positions == (7, 9)
        assert sel.rationale == SelectionRule.FIXED_K

    def test_position_tie_break(self):
        assert select_min_entropy(reports({4: 0.2, 7: 0.2}), k=1).positions == (4,)

    def test_k_covers_everything(self):
        candidates = reports({1: 0.4, 5: 0.2, 9: 0.9})
        assert select_min_entropy(candidates, k=3).positions == (1, 5, 9)

    def test_empty(self):
        with pytest.raises(EmptyCandidates):
            select_min_entropy([], k=1)


class TestMed:
    def test_under_threshold_truncated(self):
        sel = select_med(reports({3: 0.01, 5: 0.15, 7: 0.5, 9: 0.05}), threshold=0.2, k_max=2)
        assert sel.positions == (3, 9)
        assert sel.rationale == SelectionRule.UNDER_THRESHOLD

    def test_fallback_min_entropy(self):
        sel = select_med(reports({3: 0.9, 5: 0.4}), threshold=0.2, k_max=4)
        assert sel.positions == (5,)
        assert sel.rationale == SelectionRule.FALLBACK_MIN_ENTROPY

    def test_infinite_threshold_takes_all(self):
        candidates = reports({2: 1.1, 4: 0.3, 6: 0.7})
        sel = select_med(candidates, threshold=math.inf, k_max=3)
        assert sel.positions == (2, 4, 6)

    def test_zero_threshold_equals_min_entropy_k1(self):
        rng = generator(17)
        for _ in range(200):
            n = int(rng.integers(1, 8))
            positions = sorted(rng.choice(32, size=n, replace=False).tolist())
            table = {int(p): float(rng.uniform(0, 2)) for p in positions}
            med = select_med(reports(table), threshold=0.0, k_max=5)
            base = select_min_entropy(reports(table), k=1)
            assert med.positions == base.positions
            assert med.rationale == SelectionRule.FALLBACK_MIN_ENTROPY

    def test_entropy_budget_bounded_when_not_fallback(self):
        rng = generator(3)
        for _ in range(300):
            n = int(rng.integers(1, 10))
            threshold = float(rng.uniform(0.05, 1.0))
            k_max = int(rng.integers(1, 6))
            table = {int(p): float(rng.uniform(0, 2)) for p in range(n)}
            sel = select_med(reports(table), threshold=threshold, k_max=k_max)
            if sel.rationale == SelectionRule.UNDER_THRESHOLD:
                assert sum(table[p] for p in sel.positions) <= threshold * k_max + 1e-12


class TestArMed:
    def test_contiguous_run(self):
        table = {4: 0.1, 5: 0.15, 6: 0.3, 7: 0.05, 8: 0.01, 9: 0.02}
        sel = select_ar_med(reports(table), threshold=0.2, k_max=4)
        assert sel.positions == (4, 5)

    def test_leftmost_fallback(self):
        table = {4: 0.9, 5: 0.05, 6: 0.01}
        sel = select_ar_med(reports(table), threshold=0.2, k_max=4)
        assert sel.positions == (4,)
        assert sel.rationale == SelectionRule.FALLBACK_LEFTMOST

    def test_gap_breaks_run(self):
        table = {4: 0.01, 5: 0.02, 8: 0.03, 9: 0.04}
        sel = select_ar_med(reports(table), threshold=0.2, k_max=4)
        assert sel.positions == (4, 5)

    def test_selection_always_contiguous_prefix(self):
        rng = generator(29)
        for _ in range(300):
            n = int(rng.integers(1, 10))
            positions = sorted(rng.choice(24, size=n, replace=False).tolist())
            table = {int(p): float(rng.uniform(0, 1.2)) for p in positions}
            sel = select_ar_med(reports(table), threshold=0.35, k_max=6)
            chosen = list(sel.positions)
            assert chosen[0] == min(positions)
            assert chosen == list(range(chosen[0], chosen[0] + len(chosen)))
            if sel.rationale == SelectionRule.UNDER_THRESHOLD:
                assert sum(table[p] for p in chosen) <= 0.35 * 6 + 1e-12


class TestBlockWindow:
    def test_skips_complete_blocks(self):
        seq = MaskedSequence([0] * 32 + [None] * 96)
        assert block_window(seq, 32) == (32, 64)

    def test_block_equals_length_is_any_order(self):
        seq = MaskedSequence([None] * 16)
        assert block_window(seq, 16) == (0, 16)

    def test_block_one_is_left_to_right(self):
        seq = MaskedSequence([0, 0, None, None])
        assert block_window(seq, 1) == (2, 3)

    def test_filled_region_is_empty_interval(self):
        seq = MaskedSequence([1, 2, 3])
        lo, hi = block_window(seq, 2)
        assert lo == hi

    def test_region_alignment(self):
        seq = MaskedSequence([0] * 3 + [None] * 5)
        assert block_window(seq, 2, region=(3, 8)) == (3, 5)


class TestSelection:
    def test_selection_cannot_be_empty(self):
        with pytest.raises(Exception):
            Selection(positions=(), rationale=SelectionRule.LEFTMOST)
