import math

import numpy as np
import pytest

from mdlm_decode import EmptyData, LengthMismatch, MaskedSequence, TabularMDLM, train_tabular_mdlm
from mdlm_decode.models.tabular import draw_mask_set, mc_objective
from mdlm_decode.rng import generator


def sample_pair_joint(n, seed):
    """Draws from p(00)=0.4, p(01)=0.1, p(10)=0.2, p(11)=0.3."""
    rng = generator(seed)
    flat = np.array([0.4, 0.1, 0.2, 0.3])
    draws = rng.choice(4, size=n, p=flat)
    return [(int(d) // 2, int(d) % 2) for d in draws]


class TestTraining:
    def test_recovers_generator_conditionals(self):
        data = sample_pair_joint(100_000, seed=7)
        model = train_tabular_mdlm(data, epochs=1, seed=1)
        table = model.table_for(model.bucket_key(1, [0, None]))
        assert table[0] == pytest.approx(0.8, abs=0.02)
        assert table[1] == pytest.approx(0.2, abs=0.02)
        # the unconditional marginal bucket too
        marginal = model.table_for(model.bucket_key(0, [None, None]))
        assert marginal[0] == pytest.approx(0.5, abs=0.02)

    def test_single_repeated_sequence_goes_one_hot(self):
        data = [(1, 0, 1)] * 50
        model = train_tabular_mdlm(data, epochs=10, seed=0)
        for key, table in model.tables.items():
            position = key[0]
            target = (1, 0, 1)[position]
            assert table[target] > 0.97
        objective = mc_objective(model, data[:1], mask_draws=200, seed=3)
        assert objective > -0.1

    def test_zero_epochs_is_uniform(self):
        data = [(0, 1), (1, 0)]
        model = train_tabular_mdlm(data, epochs=0, seed=0)
        assert model.tables == {}
        report = model.conditionals(MaskedSequence([None, 0]))[0]
        for _, logprob in report.top:
            assert logprob == pytest.approx(math.log(0.5), abs=1e-12)

    def test_empty_data_rejected(self):
        with pytest.raises(EmptyData):
            train_tabular_mdlm([], epochs=1, seed=0)

    def test_ragged_data_rejected(self):
        with pytest.raises(LengthMismatch):
            train_tabular_mdlm([(0, 1), (0, 1, 1)], epochs=1, seed=0)

    def test_objective_non_decreasing_per_epoch(self):
        data = sample_pair_joint(400, seed=5)
        values = []
        for epochs in (1, 2, 4, 8):
            model = train_tabular_mdlm(data, epochs=epochs, seed=9)
            values.append(mc_objective(model, data, mask_draws=120, seed=2))
        for earlier, later in zip(values, values[1:]):
            assert later >= earlier - 0.02  # averaged mask noise allowance

    def test_mask_sets_are_uniform_nonempty(self):
        rng = generator(0)
        seen = {}
        for _ in range(3000):
            mask = draw_mask_set(rng, 2)
            assert mask
            seen[tuple(sorted(mask))] = seen.get(tuple(sorted(mask)), 0) + 1
        assert set(seen) == {(0,), (1,), (0, 1)}
        for count in seen.values():
            assert count / 3000 == pytest.approx(1 / 3, abs=0.04)


class TestBucketingAndIO:
    def test_prev_token_fallback_for_long_sequences(self):
        data = [tuple(int(b) for b in f"{i:012b}") for i in range(64)]
        model = train_tabular_mdlm(data, epochs=1, seed=0)
        assert model.bucketing == "prev_token"
        reports = model.conditionals(MaskedSequence([None] * 12))
        assert len(reports) == 12
        for report in reports:
            mass = sum(math.exp(lp) for _, lp in report.top)
            assert mass == pytest.approx(1.0, abs=1e-9)

    def test_tables_stay_normalized(self):
        data = sample_pair_joint(500, seed=3)
        model = train_tabular_mdlm(data, epochs=2, seed=3)
        for table in model.tables.values():
            assert table.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(table > 0)

    def test_checkpoint_round_trip(self, tmp_path):
        data = sample_pair_joint(2000, seed=2)
        model = train_tabular_mdlm(data, epochs=1, seed=4)
        path = tmp_path / "ckpt.json"
        model.save(path)
        restored = TabularMDLM.load(path)
        assert restored.step_count == model.step_count
        assert restored.bucketing == model.bucketing
        for key, table in model.tables.items():
            assert np.allclose(restored.tables[key], table, atol=1e-15)

    def test_checkpoint_version_guard(self, tmp_path):
        with pytest.raises(Exception):
            TabularMDLM.from_json({"version": 99})
