"""Command-line entry point.

Subcommands: decode | posterior | score | bench | train-toy |
serve-protocol-check.  Every command validates its whole config before the
first model call, echoes the effective config into the header of every
output file, and derives all randomness from one base seed, so identical
config + seed reproduce outputs byte for byte.  MDLM_DECODE_LOG sets the
log level.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
import threading

import numpy as np

from .core import (
    AnyOrderMinEntropy,
    ArMed,
    DecodePolicy,
    FixedK,
    LeftToRight,
    Med,
    Sampled,
    Template,
    Vocab,
    new_canvas,
)
from .engine import Session, decode, decode_posterior
from .errors import (
    ConfigError,
    DecodeError,
    DegenerateConditional,
    ModelError,
)
from .metrics import benchmark
from .models.exact import ExactJointModel
from .models.remote import StdioTransport, TcpTransport, connect
from .models.tabular import TabularMDLM, mc_objective, train_tabular_mdlm
from .protocol_check import run_protocol_check
from .rng import derive_seed, generator
from .scoring import chain_filter_score
from .tasks import make_task

log = logging.getLogger("mdlm_decode")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MODEL = 2


class _Parser(argparse.ArgumentParser):
    """argparse that treats bad flags as config errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_CONFIG, f"argument error: {message}")


class SystemExit_(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _reject_unknown(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown} in {where}")


def _load_json(path, what: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}")


def _read_jsonl(path, what: str):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{what} {path}:{number} is not valid JSON: {exc}")
    return rows


class ModelLoader:
    """Builds per-thread model handles from a model spec.

    Exact and tabular models are read-only and shared; remote specs open one
    connection per worker thread.
    """

    def __init__(self, spec: dict):
        _reject_unknown(spec, {"exact", "tabular", "remote"}, "model")
        if sum(k in spec for k in ("exact", "tabular", "remote")) != 1:
            raise ConfigError("model spec needs exactly one of: exact | tabular | remote")
        self.spec = spec
        self._shared = None
        self._local = threading.local()
        if "exact" in spec:
            try:
                self._shared = ExactJointModel.load(spec["exact"])
            except FileNotFoundError:
                raise ConfigError(f"model.exact file not found: {spec['exact']}")
        elif "tabular" in spec:
            try:
                self._shared = TabularMDLM.load(spec["tabular"])
            except FileNotFoundError:
                raise ConfigError(f"model.tabular file not found: {spec['tabular']}")
        else:
            remote = spec["remote"]
            if isinstance(remote, dict):
                _reject_unknown(remote, {"endpoint", "top_k"}, "model.remote")
                self._endpoint = remote["endpoint"]
                self._top_k = int(remote.get("top_k", 16))
            else:
                self._endpoint = remote
                self._top_k = 16

    def get(self):
        if self._shared is not None:
            return self._shared
        model = getattr(self._local, "model", None)
        if model is None:
            model = connect(self._endpoint, top_k=self._top_k)
            self._local.model = model
        return model


SESSION_CONFIG_FIELDS = {"model", "vocab", "template", "policy", "seed", "length", "contexts"}


class SessionConfig:
    """Shared config document for decode / posterior / score runs."""

    def __init__(self, obj: dict):
        _reject_unknown(obj, SESSION_CONFIG_FIELDS, "config")
        for required in ("model", "vocab", "policy"):
            if required not in obj:
                raise ConfigError(f"config is missing required field '{required}'")
        self.model_spec = obj["model"]
        self.vocab = Vocab.from_json(obj["vocab"])
        self.template = None if obj.get("template") is None else Template.from_json(obj["template"])
        self.policy = DecodePolicy.from_json(obj["policy"])
        self.seed = int(obj.get("seed", 0))
        self.length = None if obj.get("length") is None else int(obj["length"])
        self.contexts = [list(map(int, c)) for c in obj.get("contexts", [[]])]

    def effective(self) -> dict:
        return {
            "model": self.model_spec,
            "vocab": self.vocab.to_json(),
            "template": None if self.template is None else self.template.to_json(),
            "policy": self.policy.to_json(),
            "seed": self.seed,
            "length": self.length,
            "contexts": self.contexts,
        }


def _apply_policy_overrides(config: SessionConfig, args) -> None:
    policy = config.policy
    order = policy.order
    if args.policy is not None:
        if args.policy == "left_to_right":
            order = LeftToRight()
        elif args.policy == "min_entropy":
            order = AnyOrderMinEntropy()
        elif args.policy == "fixed_k":
            order = FixedK(args.k if args.k is not None else 1)
        elif args.policy == "med":
            order = Med(args.entropy_threshold or 0.2, args.kmax or 1)
        elif args.policy == "ar_med":
            order = ArMed(args.entropy_threshold or 0.2, args.kmax or 1)
    else:
        if args.entropy_threshold is not None and isinstance(order, (Med, ArMed)):
            order = type(order)(args.entropy_threshold, order.k_max)
        if args.kmax is not None and isinstance(order, (Med, ArMed)):
            order = type(order)(order.threshold, args.kmax)
        if args.k is not None and isinstance(order, FixedK):
            order = FixedK(args.k)
    token_choice = policy.token_choice
    if args.temperature is not None:
        token_choice = Sampled(args.temperature)
    config.policy = DecodePolicy(
        order=order,
        block_size=args.block if args.block is not None else policy.block_size,
        token_choice=token_choice,
        early_exit_gamma=args.gamma if args.gamma is not None else policy.early_exit_gamma,
        max_steps=policy.max_steps,
    )
    if args.seed is not None:
        config.seed = args.seed


def _session_length(config: SessionConfig, model) -> int:
    return config.length if config.length is not None else model.length


def _run_parallel(jobs: int, work_items, worker):
    """Run worker(item) over items, preserving input order in the output."""
    if jobs <= 1:
        return [worker(item) for item in work_items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, work_items))


def _write_jsonl(path, header: dict, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"config": header}, sort_keys=True) + "\n")
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_decode(args) -> int:
    config = SessionConfig(_load_json(args.config, "config"))
    _apply_policy_overrides(config, args)
    loader = ModelLoader(config.model_spec)
    length = _session_length(config, loader.get())

    def run(item):
        index, context = item
        canvas = new_canvas(context, config.template, length)
        session = Session(
            model=loader.get(),
            canvas=canvas,
            policy=config.policy,
            vocab=config.vocab,
            template=config.template,
            seed=derive_seed(config.seed, "session", index),
        )
        final, trace = decode(session)
        return {
            "session": index,
            "context": context,
            "tokens": list(final.cells),
            "nfe": trace.nfe,
            "exit": trace.exit.to_json(),
            "schedule_logprob": trace.schedule_logprob,
            "trace": trace.to_json(),
        }

    rows = _run_parallel(args.jobs, list(enumerate(config.contexts)), run)
    _write_jsonl(args.out, config.effective(), rows)
    mean_nfe = sum(r["nfe"] for r in rows) / len(rows)
    exits = {}
    for r in rows:
        exits[r["exit"]["kind"]] = exits.get(r["exit"]["kind"], 0) + 1
    print(f"decoded {len(rows)} session(s): mean NFE {mean_nfe:.2f}, exits {exits}")
    return EXIT_OK


def cmd_posterior(args) -> int:
    config = SessionConfig(_load_json(args.config, "config"))
    _apply_policy_overrides(config, args)
    if config.template is None:
        raise ConfigError("posterior runs need a template in the config")
    if not isinstance(config.policy.token_choice, Sampled):
        config.policy = DecodePolicy(
            order=config.policy.order,
            block_size=config.policy.block_size,
            token_choice=Sampled(1.0),
            early_exit_gamma=config.policy.early_exit_gamma,
            max_steps=config.policy.max_steps,
        )
    pairs = _read_jsonl(args.answers, "answers row")
    for number, row in enumerate(pairs):
        _reject_unknown(row, {"context", "answer"}, f"answers row {number}")
        if "answer" not in row:
            raise ConfigError(f"answers row {number} is missing 'answer'")
    loader = ModelLoader(config.model_spec)
    length = _session_length(config, loader.get())

    work = [
        (row_index, sample_index, row)
        for row_index, row in enumerate(pairs)
        for sample_index in range(args.samples)
    ]

    def run(item):
        row_index, sample_index, row = item
        context = [int(t) for t in row.get("context", [])]
        answer = [int(t) for t in row["answer"]]
        template = config.template.with_answer(answer)
        canvas = new_canvas(context, template, length)
        session = Session(
            model=loader.get(),
            canvas=canvas,
            policy=config.policy,
            vocab=config.vocab,
            template=template,
            seed=derive_seed(config.seed, "session", row_index, sample_index),
        )
        try:
            reasoning, trace = decode_posterior(session)
        except DegenerateConditional as exc:
            log.warning("row %d sample %d skipped: %s", row_index, sample_index, exc)
            return None
        return {
            "row": row_index,
            "sample": sample_index,
            "context": context,
            "answer": answer,
            "reasoning": reasoning,
            "trace": trace.to_json(),
        }

    results = _run_parallel(args.jobs, work, run)
    rows = [r for r in results if r is not None]
    skipped = len(results) - len(rows)
    _write_jsonl(args.out, config.effective(), rows)
    print(f"posterior: {len(rows)} row(s) written, {skipped} skipped (zero-probability answer)")
    return EXIT_OK


def cmd_score(args) -> int:
    config = SessionConfig(_load_json(args.config, "config"))
    if config.template is None:
        raise ConfigError("scoring needs a template in the config")
    chains = _read_jsonl(args.chains, "chains row")
    for number, row in enumerate(chains):
        _reject_unknown(row, {"context", "reasoning", "gold_answer"}, f"chains row {number}")
        for required in ("reasoning", "gold_answer"):
            if required not in row:
                raise ConfigError(f"chains row {number} is missing '{required}'")
    loader = ModelLoader(config.model_spec)

    rows = []
    for chain_id, row in enumerate(chains):
        score = chain_filter_score(
            loader.get(),
            [int(t) for t in row.get("context", [])],
            config.template,
            [int(t) for t in row["reasoning"]],
            [int(t) for t in row["gold_answer"]],
            stride=args.stride,
        )
        rows.append(
            {
                "chain_id": chain_id,
                "phi_curve": score.phi_curve(),
                "mean_score": score.mean,
                "hub_curve": score.hub_curve(),
            }
        )
    _write_jsonl(args.out, config.effective(), rows)
    print(f"scored {len(rows)} chain(s)")
    return EXIT_OK


BENCH_CONFIG_FIELDS = {"task", "policies", "n_instances", "seed"}


def cmd_bench(args) -> int:
    obj = _load_json(args.config, "config")
    _reject_unknown(obj, BENCH_CONFIG_FIELDS, "config")
    for required in ("task", "policies"):
        if required not in obj:
            raise ConfigError(f"config is missing required field '{required}'")
    task_obj = dict(obj["task"])
    task_name = task_obj.pop("name", None)
    if task_name is None:
        raise ConfigError("config.task is missing 'name'")
    task = make_task(task_name, **task_obj)
    policies = [DecodePolicy.from_json(p) for p in obj["policies"]]
    n_instances = int(obj.get("n_instances", 500))
    seed = int(obj.get("seed", 0))

    effective = {
        "task": {"name": task_name, **task_obj},
        "policies": [p.to_json() for p in policies],
        "n_instances": n_instances,
        "seed": seed,
    }
    trace_file = None
    trace_sink = None
    if args.traces:
        trace_file = open(args.traces, "w", encoding="utf-8")
        trace_file.write(json.dumps({"config": effective}, sort_keys=True) + "\n")

        def trace_sink(instance_index, label, trace):
            row = {"instance": instance_index, "policy": label, "trace": trace.to_json()}
            trace_file.write(json.dumps(row, sort_keys=True) + "\n")

    try:
        report = benchmark(
            task, policies, n_instances=n_instances, seed=seed, trace_sink=trace_sink
        )
    finally:
        if trace_file is not None:
            trace_file.close()
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({"config": effective, "report": report.to_json()}, f, sort_keys=True, indent=2)
        f.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write("# config: " + json.dumps(effective, sort_keys=True) + "\n")
            f.write(report.to_csv())
    for row in report.rows:
        print(
            f"{row['policy']}: acc {row['accuracy']:.4f}, nfe {row['mean_nfe']:.2f}, "
            f"kl_bound {row['mean_kl_bound']:.4f}"
        )
    return EXIT_OK


TRAIN_CONFIG_FIELDS = {
    "generator",
    "num_samples",
    "epochs",
    "seed",
    "holdout_fraction",
    "learning_rate",
    "bucketing",
    "objective_mask_draws",
}


def cmd_train_toy(args) -> int:
    obj = _load_json(args.config, "config")
    _reject_unknown(obj, TRAIN_CONFIG_FIELDS, "config")
    generator_spec = obj.get("generator")
    if not isinstance(generator_spec, dict) or "exact" not in generator_spec:
        raise ConfigError("config.generator must be {'exact': <joint path>}")
    source = ExactJointModel.load(generator_spec["exact"])
    num_samples = int(obj.get("num_samples", 10000))
    epochs = int(obj.get("epochs", 1))
    seed = int(obj.get("seed", 0))
    holdout_fraction = float(obj.get("holdout_fraction", 0.1))
    mask_draws = int(obj.get("objective_mask_draws", 20))

    flat = source.joint.reshape(-1)
    rng = generator(derive_seed(seed, "train-toy", "data"))
    draws = rng.choice(len(flat), size=num_samples, p=flat)
    samples = [tuple(int(v) for v in np.unravel_index(d, source.joint.shape)) for d in draws]
    holdout_size = max(1, int(num_samples * holdout_fraction)) if holdout_fraction > 0 else 0
    train_rows, holdout_rows = samples[holdout_size:], samples[:holdout_size]

    model = train_tabular_mdlm(
        train_rows,
        epochs=epochs,
        seed=derive_seed(seed, "train-toy", "mask"),
        learning_rate=float(obj.get("learning_rate", 1.0)),
        bucketing=obj.get("bucketing"),
    )
    checkpoint = model.to_json()
    checkpoint["config"] = {**obj, "generator": generator_spec}
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(checkpoint, f, sort_keys=True)
        f.write("\n")
    if holdout_rows:
        value = mc_objective(model, holdout_rows, mask_draws=mask_draws, seed=seed)
        print(f"holdout_objective={value:.6f} (nats, {len(holdout_rows)} held-out samples)")
    print(f"checkpoint written to {args.out} ({model.step_count} optimizer steps)")
    return EXIT_OK


def cmd_protocol_check(args) -> int:
    if args.endpoint:
        host, port = args.endpoint.rsplit(":", 1)
        transport = TcpTransport(host, int(port), timeout=args.timeout)
    elif args.cmd:
        transport = StdioTransport(args.cmd.split(), timeout=args.timeout)
    else:
        raise ConfigError("serve-protocol-check needs --endpoint host:port or --cmd '...'")
    try:
        report = run_protocol_check(transport)
    finally:
        transport.close()
    for line in report.summary_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_MODEL


# ---------------------------------------------------------------------------
# Parser wiring.
# ---------------------------------------------------------------------------


def _add_policy_flags(sub):
    sub.add_argument(
        "--policy",
        choices=["left_to_right", "min_entropy", "fixed_k", "med", "ar_med"],
        help="override the config's order policy",
    )
    sub.add_argument("--k", type=int, help="token count for --policy fixed_k")
    sub.add_argument(
        "--lambda",
        dest="entropy_threshold",
        type=float,
        help="entropy threshold in nats for med/ar_med",
    )
    sub.add_argument("--kmax", type=int, help="parallel-token cap for med/ar_med")
    sub.add_argument("--block", type=int, help="override block size")
    sub.add_argument("--gamma", type=float, help="override the early-exit threshold (nats)")
    sub.add_argument("--temperature", type=float, help="sample tokens at this temperature")
    sub.add_argument("--seed", type=int, help="override the base seed")
    sub.add_argument("--jobs", type=int, default=1, help="concurrent sessions")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdlm-decode", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("decode", help="run decode sessions and stream traces")
    p.add_argument("--config", required=True, help="session config JSON")
    p.add_argument("--out", required=True, help="output traces JSONL")
    _add_policy_flags(p)
    p.set_defaults(fn=cmd_decode)

    p = commands.add_parser("posterior", help="sample reasoning conditioned on given answers")
    p.add_argument("--config", required=True)
    p.add_argument("--answers", required=True, help="JSONL rows {context, answer}")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=1, help="posterior draws per pair")
    _add_policy_flags(p)
    p.set_defaults(fn=cmd_posterior)

    p = commands.add_parser("score", help="phi-curve and chain-filter scores for finished chains")
    p.add_argument("--config", required=True)
    p.add_argument("--chains", required=True, help="JSONL rows {context, reasoning, gold_answer}")
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1, help="reveal stride for the phi curve")
    p.set_defaults(fn=cmd_score)

    p = commands.add_parser("bench", help="policy sweep over a synthetic task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv", help="also write a CSV table")
    p.add_argument("--traces", help="also dump every decode trace as JSONL")
    p.set_defaults(fn=cmd_bench)

    p = commands.add_parser("train-toy", help="fit the tabular model on samples from a known joint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.set_defaults(fn=cmd_train_toy)

    p = commands.add_parser("serve-protocol-check", help="conformance-check a protocol server")
    p.add_argument("--endpoint", help="TCP endpoint host:port")
    p.add_argument("--cmd", help="stdio server command line")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(fn=cmd_protocol_check)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("MDLM_DECODE_LOG", "WARNING").upper()
    if level not in ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"):
        level = "WARNING"
    logging.basicConfig(level=level)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit_ as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except DecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
