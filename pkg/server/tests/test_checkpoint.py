"""Checkpoint adapter smoke tests against a tiny randomly initialized
masked-LM saved locally (no downloads)."""

import json
import math

import numpy as np
import pytest

torch = pytest.importorskip("torch")
transformers = pytest.importorskip("transformers")

from mdlm_server.checkpoint import CheckpointModel
from mdlm_server.protocol import ProtocolHandler

MASK_TOKEN_ID = 4
VOCAB = 32
LENGTH = 5


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory):
    from transformers import BertConfig, BertForMaskedLM

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=VOCAB,
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=32,
    )
    model = BertForMaskedLM(config)
    path = tmp_path_factory.mktemp("ckpt") / "tiny"
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="module")
def adapter(tiny_checkpoint):
    return CheckpointModel(tiny_checkpoint, length=LENGTH, mask_token_id=MASK_TOKEN_ID)


class TestCheckpointAdapter:
    def test_distributions_are_normalized_full_vocab(self, adapter):
        dists = adapter.distributions([None, 7, None, 1, None], context=[2, 3])
        assert sorted(dists) == [0, 2, 4]
        for probs in dists.values():
            assert len(probs) == VOCAB
            assert probs.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(probs >= 0)

    def test_fully_filled_is_empty(self, adapter):
        assert adapter.distributions([1, 2, 3, 4, 5]) == {}

    def test_deterministic_forward(self, adapter):
        a = adapter.distributions([None, 7, None, 1, None])
        b = adapter.distributions([None, 7, None, 1, None])
        for position in a:
            assert np.allclose(a[position], b[position], atol=0)

    def test_context_shifts_reported_positions(self, adapter):
        bare = adapter.distributions([None] + [0] * (LENGTH - 1))
        with_context = adapter.distributions([None] + [0] * (LENGTH - 1), context=[9, 9])
        assert sorted(bare) == sorted(with_context) == [0]

    def test_protocol_reports_conform(self, adapter):
        handler = ProtocolHandler(adapter, top_k_max=8)
        request = {
            "id": 3,
            "context": [1, 2],
            "cells": [None, 7, None, 1, None],
            "query": {
                "top_k": 4,
                "query_tokens": {"0": [5, 9]},
                "sample": {"temperature": 1.0, "seed": 11},
            },
        }
        response = json.loads(handler.handle_line(json.dumps(request)))
        assert response["id"] == 3
        reports = response["reports"]
        assert [r["position"] for r in reports] == [0, 2, 4]
        for report in reports:
            logprobs = [lp for _, lp in report["top"]]
            assert logprobs == sorted(logprobs, reverse=True)
            assert sum(math.exp(lp) for lp in logprobs) <= 1 + 1e-9
            assert report["entropy_nats"] >= 0
            assert report["sampled"] is not None
            assert any(t == report["sampled"] for t, _ in report["top"])
        first = next(r for r in reports if r["position"] == 0)
        assert set(first["queried"]) == {"5", "9"}
        # entropy is over the full vocab: recompute from the adapter
        dists = adapter.distributions([None, 7, None, 1, None], context=[1, 2])
        expected = -(dists[0] * np.log(np.where(dists[0] > 0, dists[0], 1))).sum()
        assert first["entropy_nats"] == pytest.approx(expected, abs=1e-6)

    def test_sampling_seeded(self, adapter):
        handler = ProtocolHandler(adapter, top_k_max=8)
        request = {
            "id": 1,
            "cells": [None] * LENGTH,
            "query": {"top_k": 8, "sample": {"temperature": 1.0, "seed": 5}},
        }
        first = json.loads(handler.handle_line(json.dumps(request)))
        request["id"] = 2
        second = json.loads(handler.handle_line(json.dumps(request)))
        assert [r["sampled"] for r in first["reports"]] == [
            r["sampled"] for r in second["reports"]
        ]

    def test_mask_token_inferred_from_tokenizer(self, tiny_checkpoint):
        # bert-family checkpoints resolve a default tokenizer whose mask id
        # matches the explicit flag used elsewhere in this module
        inferred = CheckpointModel(tiny_checkpoint, length=LENGTH, mask_token_id=None)
        assert inferred.mask_token_id == MASK_TOKEN_ID
