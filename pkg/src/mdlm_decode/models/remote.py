"""Client for the newline-delimited JSON model protocol.

One frame per line, UTF-8, at most 16 MiB.  A connection starts with a
hello exchange, then carries one request in flight at a time with strictly
increasing ids:

    -> {"id": 1, "hello": true}
    <- {"id": 1, "server": {"protocol": 1, "length": L, "vocab_size": V,
                            "top_k_max": K}}
    -> {"id": 2, "context": [...], "cells": [tok-or-null, ...],
        "query": {"top_k": 16, "query_tokens": {"3": [5, 9]},
                  "sample": {"temperature": 1.0, "seed": 7} or null}}
    <- {"id": 2, "reports": [{"position": 3, "entropy_nats": 0.4,
                              "top": [[5, -0.2], ...], "queried": {...},
                              "sampled": 5}, ...]}

Parse failures on the server side come back as {"id": ..., "error": msg}
without closing the connection.  Server-side sampling follows the
documented deterministic rule: position p of a request with seed s is an
inverse-CDF draw at the uniform rng.unit_uniform(rng.position_sample_seed(s, p)).
"""

from __future__ import annotations

import json
import math
import select
import socket
import subprocess

from ..core import MaskedSequence
from ..errors import ProtocolError, ServerError, Timeout
from .base import PositionReport, QuerySpec

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
DEFAULT_TOP_K = 16
ENTROPY_TOL = 1e-6
NORMALIZATION_SLACK = 1e-6


class TcpTransport:
    """Line transport over a TCP socket."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.timeout = timeout
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buffer = b""

    def send_line(self, line: str) -> None:
        data = line.encode("utf-8") + b"\n"
        if len(data) > MAX_FRAME_BYTES:
            raise ProtocolError(f"outgoing frame of {len(data)} bytes exceeds 16 MiB")
        self.sock.sendall(data)

    def recv_line(self) -> str:
        while b"\n" not in self._buffer:
            if len(self._buffer) > MAX_FRAME_BYTES:
                raise ProtocolError("incoming frame exceeds 16 MiB")
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout as exc:
                raise Timeout(f"no response within {self.timeout}s") from exc
            if not chunk:
                raise ProtocolError("server closed the connection")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        self.sock.close()


class StdioTransport:
    """Line transport over a spawned server process's stdin/stdout."""

    def __init__(self, cmd, timeout: float = 30.0):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=False,
        )

    def send_line(self, line: str) -> None:
        data = line.encode("utf-8") + b"\n"
        if len(data) > MAX_FRAME_BYTES:
            raise ProtocolError(f"outgoing frame of {len(data)} bytes exceeds 16 MiB")
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def recv_line(self) -> str:
        ready, _, _ = select.select([self.proc.stdout], [], [], self.timeout)
        if not ready:
            raise Timeout(f"no response within {self.timeout}s")
        line = self.proc.stdout.readline()
        if not line:
            raise ProtocolError("server closed the connection")
        if len(line) > MAX_FRAME_BYTES:
            raise ProtocolError("incoming frame exceeds 16 MiB")
        return line.decode("utf-8")

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class WireClient:
    """Framed request/response with strictly increasing ids."""

    def __init__(self, transport):
        self.transport = transport
        self._next_id = 0

    def next_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def send_raw(self, line: str) -> None:
        self.transport.send_line(line)

    def recv(self) -> dict:
        line = self.transport.recv_line()
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"unparseable frame from server: {line[:200]!r}") from exc
        if not isinstance(obj, dict):
            raise ProtocolError(f"frame is not a JSON object: {line[:200]!r}")
        return obj

    def request(self, payload: dict) -> dict:
        request_id = self.next_id()
        payload = {"id": request_id, **payload}
        self.send_raw(json.dumps(payload))
        response = self.recv()
        if "error" in response:
            raise ServerError(str(response["error"]))
        if response.get("id") != request_id:
            raise ProtocolError(
                f"response id {response.get('id')!r} does not match request id {request_id}"
            )
        return response

    def close(self) -> None:
        self.transport.close()


def parse_reports(reports_json, expected_positions, requested_tokens=None) -> list:
    """Validate and convert raw report objects from the wire.

    Raises ProtocolError on coverage gaps, negative entropy, unsorted or
    unnormalized top lists, and queried maps that do not echo the request.
    """
    if not isinstance(reports_json, list):
        raise ProtocolError("reports must be a list")
    reports = []
    seen = set()
    for obj in reports_json:
        try:
            report = PositionReport.from_json(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed report object: {obj!r}") from exc
        if report.position in seen:
            raise ProtocolError(f"duplicate report for position {report.position}")
        seen.add(report.position)
        if report.entropy < -ENTROPY_TOL:
            raise ProtocolError(f"negative entropy {report.entropy} at position {report.position}")
        report.entropy = max(report.entropy, 0.0)
        logprobs = [lp for _, lp in report.top]
        if any(b > a + 1e-9 for a, b in zip(logprobs, logprobs[1:])):
            raise ProtocolError(f"top list not sorted descending at position {report.position}")
        top_mass = sum(math.exp(lp) for lp in logprobs)
        if top_mass > 1.0 + NORMALIZATION_SLACK:
            raise ProtocolError(
                f"top list at position {report.position} is unnormalized (mass {top_mass:.6f} > 1)"
            )
        if any(lp > 1e-9 for lp in report.queried.values()):
            raise ProtocolError(f"positive queried log-prob at position {report.position}")
        if requested_tokens is not None:
            wanted = set(requested_tokens.get(report.position, ()))
            got = set(report.queried)
            if wanted != got:
                raise ProtocolError(
                    f"queried map at position {report.position} holds {sorted(got)}, "
                    f"request asked for {sorted(wanted)}"
                )
        reports.append(report)
    expected = set(expected_positions)
    if seen != expected:
        raise ProtocolError(
            f"reports cover positions {sorted(seen)} but the request masked {sorted(expected)}"
        )
    return sorted(reports, key=lambda r: r.position)


class RemoteModel:
    """ConditionalModel backed by a protocol server.

    One request in flight per connection; nfe_count increments once per
    conditionals() call.
    """

    def __init__(self, transport, top_k: int = DEFAULT_TOP_K):
        self.client = WireClient(transport)
        self.default_top_k = top_k
        self.nfe_count = 0
        hello = self.client.request({"hello": True})
        info = hello.get("server")
        if not isinstance(info, dict):
            raise ProtocolError(f"handshake response missing server info: {hello!r}")
        if info.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol version {info.get('protocol')!r}")
        self._length = int(info["length"])
        self._vocab_size = int(info["vocab_size"])
        self.top_k_max = int(info.get("top_k_max", DEFAULT_TOP_K))

    @property
    def length(self) -> int:
        return self._length

    @property
    def vocab_size(self) -> int:
        return self._vocab_size

    def conditionals(self, seq: MaskedSequence, query: QuerySpec = QuerySpec()) -> list:
        top_k = query.top_k if query.top_k is not None else self.default_top_k
        payload = {
            "context": list(seq.context),
            "cells": list(seq.cells),
            "query": {
                "top_k": min(top_k, self.top_k_max),
                "query_tokens": {str(p): list(ts) for p, ts in query.query_tokens.items()},
                "sample": None
                if query.sample is None
                else {"temperature": query.sample.temperature, "seed": query.sample.seed},
            },
        }
        response = self.client.request(payload)
        self.nfe_count += 1
        return parse_reports(
            response.get("reports"),
            expected_positions=seq.masked_positions(),
            requested_tokens=query.query_tokens,
        )

    def close(self) -> None:
        self.client.close()


def connect(endpoint, timeout: float = 30.0, top_k: int = DEFAULT_TOP_K) -> RemoteModel:
    """Open a RemoteModel from 'host:port' or a stdio server command list."""
    if isinstance(endpoint, str) and ":" in endpoint:
        host, port = endpoint.rsplit(":", 1)
        transport = TcpTransport(host, int(port), timeout=timeout)
    else:
        cmd = endpoint.split() if isinstance(endpoint, str) else list(endpoint)
        transport = StdioTransport(cmd, timeout=timeout)
    return RemoteModel(transport, top_k=top_k)
