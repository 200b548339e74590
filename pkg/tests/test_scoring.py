import itertools
import math

import numpy as np
import pytest

from mdlm_decode import (
    ConfigError,
    DecodePolicy,
    ExactJointModel,
    FixedK,
    LeftToRight,
    LengthMismatch,
    MaskedSequence,
    Med,
    PositionReport,
    Sampled,
    StepRecord,
    SupportMismatch,
    Template,
    chain_filter_score,
    induced_distribution,
    new_canvas,
    per_step_kl_bound,
    phi_score,
    schedule_kl_exact,
)
from mdlm_decode.models.exact import random_joint
from mdlm_decode.rng import generator

from oracles import (
    brute_conditional,
    brute_induced_distribution,
    brute_joint_over,
    brute_kl,
    total_variation,
)


def independent_answer_model(p_first, p_second):
    """L=2 joint whose two cells are independent with the given marginals."""
    joint = np.outer(p_first, p_second)
    return ExactJointModel.from_probs(joint)


ANSWER_ONLY = Template(reasoning_span=(0, 0), delimiter_tokens=(), answer_span=(0, 2))


class TestPhi:
    def test_log_sum_example(self):
        # answer marginals give p(a1*)=0.8 and p(a2*)=0.5 -> phi ~ -0.9163
        model = independent_answer_model([0.8, 0.2], [0.5, 0.5])
        score = phi_score(model, new_canvas([], ANSWER_ONLY, 2), ANSWER_ONLY, [0, 0])
        assert score.phi == pytest.approx(math.log(0.8) + math.log(0.5), abs=1e-12)
        assert score.phi == pytest.approx(-0.9163, abs=1e-4)

    def test_certainty_gives_zero(self):
        model = independent_answer_model([1.0, 0.0], [0.0, 1.0])
        score = phi_score(model, new_canvas([], ANSWER_ONLY, 2), ANSWER_ONLY, [0, 1])
        assert score.phi == 0.0
        assert score.hub == 0.0

    def test_any_deviation_is_negative(self):
        rng = generator(44)
        for _ in range(30):
            model = random_joint(rng, 2, 3)
            gold = [int(rng.integers(3)), int(rng.integers(3))]
            score = phi_score(model, new_canvas([], ANSWER_ONLY, 2), ANSWER_ONLY, gold)
            assert score.phi <= 0.0

    def test_full_reasoning_matches_bruteforce_conditional(self):
        rng = generator(12)
        model = random_joint(rng, 4, 3)
        template = Template(reasoning_span=(0, 2), delimiter_tokens=(), answer_span=(2, 4))
        canvas = new_canvas([], template, 4)
        canvas.fill(0, 1)
        canvas.fill(1, 2)
        gold = [0, 1]
        score = phi_score(model, canvas, template, gold)
        cells = [1, 2, None, None]
        expected = sum(
            math.log(brute_conditional(model.joint, cells, p)[gold[p - 2]]) for p in (2, 3)
        )
        assert score.phi == pytest.approx(expected, abs=1e-9)
        assert score.fraction_unmasked == 1.0

    def test_answer_must_be_masked_and_sized(self):
        model = independent_answer_model([0.5, 0.5], [0.5, 0.5])
        with pytest.raises(LengthMismatch):
            phi_score(model, new_canvas([], ANSWER_ONLY, 2), ANSWER_ONLY, [0])
        canvas = new_canvas([], ANSWER_ONLY, 2)
        canvas.fill(0, 1)
        with pytest.raises(ConfigError):
            phi_score(model, canvas, ANSWER_ONLY, [0, 0])


class StubModel:
    """Returns scripted answer-cell queried log-probs, one script per call."""

    def __init__(self, phi_per_call, template):
        self.scripts = list(phi_per_call)
        self.template = template
        self.calls = 0
        self.length = template.answer_span[1]
        self.vocab_size = 4

    def conditionals(self, seq, query):
        script = self.scripts[self.calls]
        self.calls += 1
        reports = []
        answer = set(self.template.answer_positions())
        share = {p: script / len(answer) for p in answer}
        for position in seq.masked_positions():
            queried = {
                t: share.get(position, -0.5) for t in query.query_tokens.get(position, ())
            }
            reports.append(
                PositionReport(position=position, entropy=0.3, top=[(0, -0.1)], queried=queried)
            )
        return reports


class TestChainFilter:
    def test_mean_of_scripted_phis(self):
        template = Template(reasoning_span=(0, 2), delimiter_tokens=(), answer_span=(2, 4))
        model = StubModel([-2.0, -1.0, -0.5], template)
        score = chain_filter_score(model, [], template, [1, 1], [0, 0])
        assert [round(p, 6) for p in score.phi_curve()] == [-2.0, -1.0, -0.5]
        assert score.mean == pytest.approx(-7.0 / 6.0, abs=1e-9)

    def test_deterministic_consistent_chain_scores_zero(self):
        joint = np.zeros((2, 2, 2))
        joint[1, 0, 1] = 1.0
        model = ExactJointModel.from_probs(joint)
        template = Template(reasoning_span=(0, 2), delimiter_tokens=(), answer_span=(2, 3))
        score = chain_filter_score(model, [], template, [1, 0], [1])
        assert score.mean == 0.0
        assert score.phi_curve() == [0.0, 0.0, 0.0]

    def test_matches_independent_bruteforce(self):
        rng = generator(91)
        model = random_joint(rng, 4, 2)
        template = Template(reasoning_span=(0, 2), delimiter_tokens=(), answer_span=(2, 4))
        chain = [1, 0]
        gold = [0, 0]
        score = chain_filter_score(model, [], template, chain, gold)
        expected = []
        for t in range(3):
            cells = [chain[0] if t >= 1 else None, chain[1] if t >= 2 else None, None, None]
            expected.append(
                sum(
                    math.log(brute_conditional(model.joint, cells, p)[gold[p - 2]])
                    for p in (2, 3)
                )
            )
        assert score.phi_curve() == pytest.approx(expected, abs=1e-9)
        assert score.mean == pytest.approx(sum(expected) / 3, abs=1e-9)

    def test_stride_curve_length(self):
        template = Template(reasoning_span=(0, 7), delimiter_tokens=(), answer_span=(7, 8))
        model = StubModel([-1.0, -1.0], template)
        score = chain_filter_score(model, [], template, [0] * 7, [0], stride=4)
        assert len(score.scores) == math.ceil((7 + 1) / 4)


class TestStepBound:
    def test_single_position_bound(self):
        step = StepRecord(decoded=[(3, 1, -0.2, 0.45)])
        assert per_step_kl_bound(step) == pytest.approx(0.45)

    def test_med_step_bound_under_budget(self):
        step = StepRecord(decoded=[(3, 1, -0.2, 0.05), (4, 0, -0.3, 0.1)])
        bound = per_step_kl_bound(step)
        assert bound == pytest.approx(0.15)
        assert bound <= 0.2 * 2

    def test_true_step_kl_bounded_by_entropy_sum(self):
        rng = generator(55)
        for _ in range(40):
            model = random_joint(rng, 3, 3)
            cells = [None, None, None]
            positions = [0, 2]
            joint_over = brute_joint_over(model.joint, cells, positions)
            marginal = {
                p: brute_conditional(model.joint, cells, p) for p in positions
            }
            product = {
                key: marginal[0][key[0]] * marginal[2][key[1]]
                for key in itertools.product(range(3), repeat=2)
            }
            reports = {r.position: r for r in model.conditionals(MaskedSequence(cells))}
            bound = reports[0].entropy + reports[2].entropy
            assert brute_kl(joint_over, product) <= bound + 1e-9

    def test_empty_step_rejected(self):
        with pytest.raises(ConfigError):
            per_step_kl_bound(StepRecord(decoded=[]))

    def test_trace_budget_decomposition(self):
        # summed step bounds of an adaptive trace never exceed
        # (non-fallback steps) * lambda * k_max plus the fallback entropies
        from mdlm_decode import DecodePolicy, MaskedSequence, Med, Vocab, decode
        from mdlm_decode.engine import Session

        threshold, k_max = 0.3, 3
        rng = generator(8)
        vocab = Vocab(size=3, eos_id=2, mask_id=3, pad_id=1)
        for _ in range(30):
            model = random_joint(rng, 5, 3)
            policy = DecodePolicy(order=Med(threshold, k_max), block_size=5,
                                  token_choice=Sampled(1.0))
            session = Session(model=model, canvas=MaskedSequence([None] * 5),
                              policy=policy, vocab=vocab, seed=int(rng.integers(1 << 30)))
            _, trace = decode(session)
            total = sum(per_step_kl_bound(s) for s in trace.steps)
            fallback_entropy = 0.0
            non_fallback = 0
            for step in trace.steps:
                entropies = [c.entropy for c in step.decoded]
                if all(h < threshold for h in entropies):
                    non_fallback += 1
                else:
                    fallback_entropy += sum(entropies)
            assert total <= non_fallback * threshold * k_max + fallback_entropy + 1e-12


class TestScheduleKl:
    def test_identity_is_zero(self, pair_joint):
        policy = DecodePolicy(order=LeftToRight(), block_size=1, token_choice=Sampled(1.0))
        assert schedule_kl_exact(pair_joint, policy, policy) == 0.0

    def test_product_joint_parallel_equals_sequential(self):
        model = independent_answer_model([0.7, 0.3], [0.4, 0.6])
        sequential = DecodePolicy(order=LeftToRight(), block_size=1, token_choice=Sampled(1.0))
        one_shot = DecodePolicy(order=FixedK(2), block_size=2, token_choice=Sampled(1.0))
        assert schedule_kl_exact(model, sequential, one_shot) == pytest.approx(0.0, abs=1e-12)

    def test_correlated_one_shot_kl_is_ln2(self, correlated_joint):
        sequential = DecodePolicy(order=LeftToRight(), block_size=1, token_choice=Sampled(1.0))
        one_shot = DecodePolicy(order=FixedK(2), block_size=2, token_choice=Sampled(1.0))
        kl = schedule_kl_exact(correlated_joint, sequential, one_shot)
        assert kl == pytest.approx(math.log(2), abs=1e-12)

    def test_support_mismatch_reported(self, correlated_joint):
        sampled = DecodePolicy(order=LeftToRight(), block_size=1, token_choice=Sampled(1.0))
        greedy = DecodePolicy(order=LeftToRight(), block_size=1)
        with pytest.raises(SupportMismatch):
            schedule_kl_exact(correlated_joint, sampled, greedy)

    def test_induced_matches_independent_enumerator(self):
        rng = generator(77)
        model = random_joint(rng, 3, 3)
        cases = [
            (DecodePolicy(order=LeftToRight(), block_size=1, token_choice=Sampled(1.0)),
             "left_to_right", {}, 1),
            (DecodePolicy(order=FixedK(2), block_size=3, token_choice=Sampled(1.0)),
             "fixed_k", {"k": 2}, 3),
            (DecodePolicy(order=Med(0.5, 2), block_size=3, token_choice=Sampled(1.0)),
             "med", {"lam": 0.5, "k_max": 2}, 3),
        ]
        for policy, kind, params, block in cases:
            mine = induced_distribution(model, policy)
            brute = brute_induced_distribution(model.joint, kind, params, block_size=block)
            assert total_variation(mine, brute) < 1e-9

    def test_order_within_step_does_not_matter(self, correlated_joint):
        # one parallel step: listing positions in either order is the same product
        one_shot = DecodePolicy(order=FixedK(2), block_size=2, token_choice=Sampled(1.0))
        dist = induced_distribution(correlated_joint, one_shot)
        assert dist[(0, 1)] == pytest.approx(0.25)
        assert dist[(1, 0)] == pytest.approx(0.25)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
