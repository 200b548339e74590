"""Request handling for the newline-delimited JSON model protocol.

One JSON object per line; responses echo the request id.  Parse or
validation failures produce {"id": ..., "error": msg} and leave the
connection open.  The server guarantees that a sampled token always appears
in the returned top list (swapped into the last slot if top-k truncation
dropped it), so clients can recover its log-probability without a second
call.
"""

from __future__ import annotations

import json
import threading

import numpy as np

from .sampling import sample_position

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024


class ConnectionState:
    """Per-connection protocol state: the last request id seen."""

    def __init__(self):
        self.last_id = 0


class ProtocolHandler:
    def __init__(self, model, top_k_max: int = 16):
        self.model = model
        self.top_k_max = int(top_k_max)
        self._forward_lock = threading.Lock()  # single-accelerator assumption

    # -- framing -----------------------------------------------------------

    def handle_line(self, line: str, state: ConnectionState = None) -> str:
        if len(line) > MAX_FRAME_BYTES:
            return json.dumps({"id": None, "error": "frame exceeds 16 MiB"})
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return json.dumps({"id": None, "error": f"unparseable frame: {exc}"})
        if not isinstance(request, dict):
            return json.dumps({"id": None, "error": "frame is not a JSON object"})
        request_id = request.get("id")
        if state is not None:
            if not isinstance(request_id, int) or request_id <= state.last_id:
                return json.dumps(
                    {"id": request_id, "error": "request ids must be strictly increasing"}
                )
            state.last_id = request_id
        try:
            return json.dumps(self.handle_request(request))
        except Exception as exc:  # noqa: BLE001 - every fault becomes an error frame
            return json.dumps({"id": request_id, "error": str(exc)})

    # -- requests ----------------------------------------------------------

    def handle_request(self, request: dict) -> dict:
        request_id = request.get("id")
        if request.get("hello"):
            return {
                "id": request_id,
                "server": {
                    "protocol": PROTOCOL_VERSION,
                    "length": self.model.length,
                    "vocab_size": self.model.vocab_size,
                    "top_k_max": self.top_k_max,
                },
            }
        if "cells" not in request:
            raise ValueError("request has neither 'hello' nor 'cells'")
        cells = request["cells"]
        if not isinstance(cells, list):
            raise ValueError("'cells' must be a list of token ids and nulls")
        context = request.get("context", [])
        query = request.get("query") or {}
        top_k = min(int(query.get("top_k", self.top_k_max)), self.top_k_max)
        query_tokens = {
            int(position): [int(t) for t in tokens]
            for position, tokens in (query.get("query_tokens") or {}).items()
        }
        sample = query.get("sample")

        with self._forward_lock:
            distributions = self._distributions(cells, context)

        reports = []
        for position in sorted(distributions):
            reports.append(
                self._report(
                    position,
                    distributions[position],
                    top_k=top_k,
                    query_tokens=query_tokens.get(position, ()),
                    sample=sample,
                )
            )
        return {"id": request_id, "reports": reports}

    def _distributions(self, cells, context):
        try:
            return self.model.distributions(cells, context=context)
        except TypeError:
            return self.model.distributions(cells)

    def _report(self, position, probs, top_k, query_tokens, sample) -> dict:
        probs = np.asarray(probs, dtype=float)
        logp = np.full_like(probs, -np.inf)
        np.log(probs, out=logp, where=probs > 0)
        entropy = max(float(-(probs * np.where(probs > 0, logp, 0.0)).sum()), 0.0)

        order = np.argsort(-probs, kind="stable")[:top_k]
        top = [[int(t), float(logp[t])] for t in order if probs[t] > 0.0]

        queried = {}
        for token in query_tokens:
            if 0 <= token < len(probs) and probs[token] > 0:
                queried[str(token)] = float(logp[token])
            else:
                queried[str(token)] = -1e9  # strict JSON cannot carry -inf

        sampled = None
        if sample is not None:
            temperature = float(sample.get("temperature", 1.0))
            scaled = probs
            if temperature != 1.0:
                scaled = np.exp(logp / temperature)
                scaled = scaled / scaled.sum()
            sampled = sample_position(scaled, int(sample.get("seed", 0)), position)
            if all(t != sampled for t, _ in top):
                top[-1:] = [[int(sampled), float(logp[sampled])]]
                top.sort(key=lambda pair: -pair[1])

        return {
            "position": int(position),
            "entropy_nats": entropy,
            "top": top,
            "queried": queried,
            "sampled": sampled,
        }
