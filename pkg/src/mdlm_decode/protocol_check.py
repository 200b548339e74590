"""Conformance checks for protocol servers.

Runs from the client side of the wire protocol against any endpoint:
handshake, masked/filled edge cases, entropy normalization, query-token
echo, sampling determinism, and recovery from malformed frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ProtocolError, ServerError, Timeout
from .models.remote import WireClient, parse_reports


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class CheckReport:
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def summary_lines(self) -> list:
        lines = []
        for r in self.results:
            mark = "PASS" if r.passed else "FAIL"
            suffix = f" ({r.detail})" if r.detail else ""
            lines.append(f"[{mark}] {r.name}{suffix}")
        lines.append(f"protocol check: {'all passed' if self.passed else 'FAILURES'}")
        return lines


def _conditionals(client: WireClient, cells, query=None, context=()):
    payload = {
        "context": list(context),
        "cells": list(cells),
        "query": query or {"top_k": 16, "query_tokens": {}, "sample": None},
    }
    response = client.request(payload)
    masked = [i for i, c in enumerate(cells) if c is None]
    requested = {
        int(p): toks for p, toks in (query or {}).get("query_tokens", {}).items()
    }
    return parse_reports(response.get("reports"), masked, requested)


def run_protocol_check(transport) -> CheckReport:
    client = WireClient(transport)
    results = []

    def check(name, fn):
        try:
            detail = fn() or ""
            results.append(CheckResult(name, True, detail))
        except (ProtocolError, ServerError, Timeout, AssertionError, KeyError) as exc:
            results.append(CheckResult(name, False, str(exc)))

    info = {}

    def handshake():
        response = client.request({"hello": True})
        server = response.get("server")
        assert isinstance(server, dict), f"missing server info in {response!r}"
        assert server.get("protocol") == 1, f"protocol version {server.get('protocol')!r}"
        assert int(server["length"]) >= 1 and int(server["vocab_size"]) >= 2
        info.update(server)
        return f"length={server['length']} vocab={server['vocab_size']}"

    check("handshake", handshake)
    if not results[-1].passed:
        return CheckReport(results)

    length = int(info["length"])
    vocab_size = int(info["vocab_size"])

    def all_masked():
        reports = _conditionals(client, [None] * length)
        assert len(reports) == length
        assert all(r.entropy >= 0 for r in reports)

    check("all-masked reports cover every cell, entropies >= 0", all_masked)

    def partially_filled():
        cells = [0] + [None] * (length - 1)
        reports = _conditionals(client, cells)
        assert [r.position for r in reports] == list(range(1, length))

    if length >= 2:
        check("filled cells are excluded from reports", partially_filled)

    def fully_filled():
        reports = _conditionals(client, [0] * length)
        assert reports == []

    check("fully filled request yields empty reports", fully_filled)

    def query_echo():
        tokens = [0, min(1, vocab_size - 1)]
        query = {"top_k": 16, "query_tokens": {"0": tokens}, "sample": None}
        reports = _conditionals(client, [None] * length, query)
        queried = reports[0].queried
        assert set(queried) == set(tokens), f"queried keys {sorted(queried)}"
        assert all(lp <= 1e-9 for lp in queried.values())

    check("query_tokens echoed exactly", query_echo)

    def entropy_normalization():
        query = {"top_k": vocab_size, "query_tokens": {}, "sample": None}
        reports = _conditionals(client, [None] * length, query)
        for r in reports:
            mass = sum(math.exp(lp) for _, lp in r.top)
            if mass < 1.0 - 1e-4:
                continue  # truncated distribution; cannot recompute entropy
            recomputed = -sum(math.exp(lp) * lp for _, lp in r.top)
            assert abs(recomputed - r.entropy) <= 1e-4, (
                f"position {r.position}: entropy {r.entropy} vs recomputed {recomputed}"
            )

    check("entropy matches the reported distribution (1e-4)", entropy_normalization)

    def sampling_determinism():
        query = {"top_k": 4, "query_tokens": {}, "sample": {"temperature": 1.0, "seed": 1234}}
        first = _conditionals(client, [None] * length, query)
        second = _conditionals(client, [None] * length, query)
        assert all(r.sampled is not None for r in first)
        tokens_first = [r.sampled for r in first]
        tokens_second = [r.sampled for r in second]
        assert tokens_first == tokens_second, f"{tokens_first} vs {tokens_second}"

    check("seeded sampling is deterministic", sampling_determinism)

    def malformed_frame_recovery():
        client.send_raw("this is not json")
        response = client.recv()
        assert "error" in response, f"no error field in {response!r}"
        # connection must remain usable
        reports = _conditionals(client, [None] * length)
        assert len(reports) == length

    check("malformed frame answered with error, connection stays open", malformed_frame_recovery)

    return CheckReport(results)
