import json
import math

import pytest

from mdlm_decode import (
    ExactJointModel,
    MaskedSequence,
    ProtocolError,
    QuerySpec,
    RemoteModel,
    ServerError,
)
from mdlm_decode.models.base import SampleSpec
from mdlm_decode.protocol_check import run_protocol_check


class FakeServerTransport:
    """In-memory protocol server over an exact joint, with riggable faults."""

    def __init__(self, model: ExactJointModel, rig=None):
        self.model = model
        self.rig = rig or {}
        self.responses = []

    def send_line(self, line: str) -> None:
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            self.responses.append({"id": None, "error": "unparseable frame"})
            return
        self.responses.append(self.handle(request))

    def recv_line(self) -> str:
        return json.dumps(self.responses.pop(0))

    def close(self) -> None:
        pass

    def handle(self, request: dict) -> dict:
        if "rig_response" in self.rig:
            return self.rig["rig_response"]
        if request.get("hello"):
            return {
                "id": request["id"],
                "server": {
                    "protocol": self.rig.get("protocol", 1),
                    "length": self.model.length,
                    "vocab_size": self.model.vocab_size,
                    "top_k_max": 16,
                },
            }
        if "cells" not in request:
            return {"id": request.get("id"), "error": "missing cells"}
        seq = MaskedSequence(request["cells"]) if any(
            c is None for c in request["cells"]
        ) else None
        query_obj = request.get("query", {})
        query = QuerySpec(
            top_k=query_obj.get("top_k"),
            query_tokens={int(p): ts for p, ts in query_obj.get("query_tokens", {}).items()},
            sample=None
            if query_obj.get("sample") is None
            else SampleSpec(
                temperature=query_obj["sample"].get("temperature", 1.0),
                seed=query_obj["sample"].get("seed", 0),
            ),
        )
        reports = [] if seq is None else self.model.conditionals(seq, query)
        payload = [r.to_json() for r in reports]
        mutate = self.rig.get("mutate_reports")
        if mutate:
            payload = mutate(payload)
        return {"id": request["id"], "reports": payload}


def make_remote(model, rig=None, top_k=16):
    return RemoteModel(FakeServerTransport(model, rig), top_k=top_k)


class TestRemoteModel:
    def test_reports_for_masked_cells(self, pair_joint):
        remote = make_remote(pair_joint)
        assert (remote.length, remote.vocab_size) == (2, 2)
        reports = remote.conditionals(MaskedSequence([None, None]))
        assert [r.position for r in reports] == [0, 1]
        assert all(r.entropy >= 0 for r in reports)
        assert remote.nfe_count == 1

    def test_query_tokens_echoed(self, pair_joint):
        remote = make_remote(pair_joint)
        reports = remote.conditionals(
            MaskedSequence([0, None]), QuerySpec(query_tokens={1: [0, 1]})
        )
        assert set(reports[0].queried) == {0, 1}
        assert reports[0].queried[0] == pytest.approx(math.log(0.8), abs=1e-9)

    def test_unnormalized_top_rejected(self, pair_joint):
        def inflate(payload):
            for report in payload:
                report["top"] = [[t, lp + 0.5] for t, lp in report["top"]]
            return payload

        remote = make_remote(pair_joint, rig={"mutate_reports": inflate})
        with pytest.raises(ProtocolError, match="unnormalized"):
            remote.conditionals(MaskedSequence([None, None]))

    def test_coverage_mismatch_rejected(self, pair_joint):
        remote = make_remote(pair_joint, rig={"mutate_reports": lambda p: p[:1]})
        with pytest.raises(ProtocolError, match="cover"):
            remote.conditionals(MaskedSequence([None, None]))

    def test_negative_entropy_rejected(self, pair_joint):
        def corrupt(payload):
            payload[0]["entropy_nats"] = -0.5
            return payload

        remote = make_remote(pair_joint, rig={"mutate_reports": corrupt})
        with pytest.raises(ProtocolError, match="entropy"):
            remote.conditionals(MaskedSequence([None, None]))

    def test_server_error_propagates(self, pair_joint):
        remote = make_remote(pair_joint)
        remote.client.transport.rig["rig_response"] = {"id": 2, "error": "model exploded"}
        with pytest.raises(ServerError, match="model exploded"):
            remote.conditionals(MaskedSequence([None, None]))

    def test_id_mismatch_rejected(self, pair_joint):
        remote = make_remote(pair_joint)
        remote.client.transport.rig["rig_response"] = {"id": 999, "reports": []}
        with pytest.raises(ProtocolError, match="id"):
            remote.conditionals(MaskedSequence([None, None]))

    def test_protocol_version_checked(self, pair_joint):
        with pytest.raises(ProtocolError, match="version"):
            make_remote(pair_joint, rig={"protocol": 2})

    def test_server_side_sampling_deterministic(self, pair_joint):
        remote = make_remote(pair_joint)
        query = QuerySpec(sample=SampleSpec(temperature=1.0, seed=4))
        first = [r.sampled for r in remote.conditionals(MaskedSequence([None, None]), query)]
        second = [r.sampled for r in remote.conditionals(MaskedSequence([None, None]), query)]
        assert first == second
        assert all(s is not None for s in first)

    def test_remote_matches_in_process(self, pair_joint):
        remote = make_remote(pair_joint)
        seq = MaskedSequence([0, None])
        local = pair_joint.conditionals(seq)[0]
        wire = remote.conditionals(seq)[0]
        assert wire.entropy == pytest.approx(local.entropy, abs=1e-9)
        assert dict(wire.top) == pytest.approx(dict(local.top), abs=1e-9)


class TestProtocolCheck:
    def test_all_checks_pass_against_conforming_server(self, pair_joint):
        report = run_protocol_check(FakeServerTransport(pair_joint))
        assert report.passed, [r for r in report.results if not r.passed]
        names = [r.name for r in report.results]
        assert any("handshake" in n for n in names)
        assert any("sampling" in n for n in names)

    def test_negative_entropy_fails_check(self, pair_joint):
        def corrupt(payload):
            for report in payload:
                report["entropy_nats"] = -0.01
            return payload

        report = run_protocol_check(
            FakeServerTransport(pair_joint, rig={"mutate_reports": corrupt})
        )
        assert not report.passed

    def test_wrong_entropy_fails_normalization_check(self, pair_joint):
        def corrupt(payload):
            for report in payload:
                report["entropy_nats"] = report["entropy_nats"] + 0.2
            return payload

        report = run_protocol_check(
            FakeServerTransport(pair_joint, rig={"mutate_reports": corrupt})
        )
        failed = [r.name for r in report.results if not r.passed]
        assert any("entropy" in name for name in failed)
