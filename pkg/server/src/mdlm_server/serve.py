"""Server entry point.

Serves masked-position conditionals over newline-delimited JSON frames on
stdio or TCP: `mdlm-server --mock joint.json --transport stdio`, or
`--checkpoint <path|hub id> --length L` for a transformers masked-LM.
Stdout is the protocol channel in stdio mode; all logging goes to stderr.
Shuts down gracefully on EOF or SIGTERM.
"""

from __future__ import annotations

import argparse
import signal
import socketserver
import sys

from .mock import MockJointModel
from .protocol import ConnectionState, ProtocolHandler


def serve_stdio(handler: ProtocolHandler) -> int:
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    state = ConnectionState()
    for raw in stdin:
        line = raw.decode("utf-8", errors="replace").strip()
        if not line:
            continue
        stdout.write(handler.handle_line(line, state).encode("utf-8") + b"\n")
        stdout.flush()
    return 0


def serve_tcp(handler: ProtocolHandler, host: str, port: int) -> int:
    class ConnectionHandler(socketserver.StreamRequestHandler):
        def handle(self):
            state = ConnectionState()
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    continue
                self.wfile.write(handler.handle_line(line, state).encode("utf-8") + b"\n")
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    def request_exit(*_):
        # shutdown() would deadlock when called from the serving thread's
        # own signal handler; unwinding the stack closes the socket instead
        raise SystemExit(0)

    with Server((host, port), ConnectionHandler) as server:
        bound_host, bound_port = server.server_address[:2]
        print(f"listening on {bound_host}:{bound_port}", file=sys.stderr, flush=True)
        signal.signal(signal.SIGTERM, request_exit)
        try:
            server.serve_forever()
        except (KeyboardInterrupt, SystemExit):
            pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdlm-server", description=__doc__)
    backend = parser.add_mutually_exclusive_group(required=True)
    backend.add_argument("--mock", metavar="JOINT_JSON", help="serve exact conditionals from a tabular joint file")
    backend.add_argument("--checkpoint", metavar="PATH_OR_HUB_ID", help="serve a transformers masked-LM checkpoint")
    parser.add_argument("--length", type=int, help="canvas length (required with --checkpoint)")
    parser.add_argument("--mask-token-id", type=int, help="override the checkpoint's mask token id")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0, help="TCP port (0 picks a free one)")
    parser.add_argument("--top-k-max", type=int, default=16)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.mock:
        model = MockJointModel.load(args.mock)
    else:
        if args.length is None:
            print("--checkpoint needs --length", file=sys.stderr)
            return 1
        from .checkpoint import CheckpointModel

        model = CheckpointModel(
            args.checkpoint,
            length=args.length,
            mask_token_id=args.mask_token_id,
            device=args.device,
        )
    handler = ProtocolHandler(model, top_k_max=args.top_k_max)
    if args.transport == "stdio":
        return serve_stdio(handler)
    return serve_tcp(handler, args.host, args.port)


if __name__ == "__main__":
    sys.exit(main())
