"""Post-hoc trace analytics and the synthetic-task benchmark harness.

behavior_stats measures how autoregressively a trace decoded (fraction of
non-EOS tokens taken from the leftmost masked position, mean distance from
that frontier, the step the answer first appeared).  benchmark sweeps
policies over a synthetic task and reports accuracy, NFE and the summed
parallel-decode entropy budget per policy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

from .core import (
    AnyOrderMinEntropy,
    ArMed,
    DecodePolicy,
    DecodeTrace,
    FixedK,
    LeftToRight,
    Med,
    Template,
    Vocab,
    new_canvas,
)
from .engine import Session, decode
from .rng import derive_seed


@dataclass(frozen=True)
class BehaviorStats:
    pct_leftmost: float
    mean_dist_left: float
    non_eos_tokens: int
    answer_step: Optional[int]
    nfe: int


def behavior_stats(
    trace: DecodeTrace,
    vocab: Vocab,
    template: Optional[Template] = None,
) -> BehaviorStats:
    """Decoding-order statistics of one finished trace.

    The masked-cell frontier is reconstructed from the trace itself: the
    initially masked set is the union of all decoded positions, plus (for
    early-exit traces) the template reasoning cells that were skipped and
    pad-filled on the exit step.
    """
    masked = set(trace.decoded_positions())
    skipped = set()
    if template is not None and trace.exit.kind == "early_exit":
        skipped = set(template.reasoning_positions()) - masked
        masked |= skipped

    answer_cells = set(template.answer_positions()) if template is not None else set()

    events = 0
    leftmost_hits = 0
    dist_sum = 0.0
    answer_step = None
    non_eos = 0
    for index, step in enumerate(trace.steps):
        frontier = min(masked) if masked else None
        for cell in step.decoded:
            if answer_step is None and cell.position in answer_cells:
                answer_step = index
            if cell.token == vocab.eos_id:
                continue
            non_eos += 1
            events += 1
            leftmost_hits += 1 if cell.position == frontier else 0
            dist_sum += cell.position - frontier
        masked -= set(step.positions())
        if trace.exit.kind == "early_exit" and trace.exit.step == index:
            masked -= skipped
            if vocab.pad_id != vocab.eos_id:
                non_eos += len(skipped)

    return BehaviorStats(
        pct_leftmost=leftmost_hits / events if events else 0.0,
        mean_dist_left=dist_sum / events if events else 0.0,
        non_eos_tokens=non_eos,
        answer_step=answer_step,
        nfe=trace.nfe,
    )


# ---------------------------------------------------------------------------
# Benchmarking.
# ---------------------------------------------------------------------------


def policy_label(policy: DecodePolicy) -> str:
    order = policy.order
    if isinstance(order, LeftToRight):
        head = "left_to_right"
    elif isinstance(order, AnyOrderMinEntropy):
        head = "entropy,k=1"
    elif isinstance(order, FixedK):
        head = f"entropy,k={order.k}"
    elif isinstance(order, Med):
        head = f"med,lambda={order.threshold},kmax={order.k_max}"
    elif isinstance(order, ArMed):
        head = f"ar_med,lambda={order.threshold},kmax={order.k_max}"
    else:
        head = repr(order)
    label = f"{head},block={policy.block_size}"
    if policy.early_exit_gamma is not None:
        label += f",gamma={policy.early_exit_gamma}"
    return label


def strip_pad(tokens, vocab: Vocab) -> list:
    return [t for t in tokens if t != vocab.pad_id]


def parallel_entropy_budget(trace: DecodeTrace) -> float:
    """Summed entropy bound of the trace's parallel steps.

    Steps that decode a single position sample exactly and contribute no
    factorization error, so only multi-position steps count.
    """
    return float(
        sum(sum(c.entropy for c in s.decoded) for s in trace.steps if len(s.decoded) >= 2)
    )


def run_task_instance(instance, policy: DecodePolicy, seed: int):
    """Decode one task instance under one policy; returns (trace, canvas, correct)."""
    canvas = new_canvas(instance.context, instance.template, instance.model.length)
    for position, token in sorted(instance.givens.items()):
        canvas.fill(position, token)
    session = Session(
        model=instance.model,
        canvas=canvas,
        policy=policy,
        vocab=instance.vocab,
        template=instance.template,
        seed=seed,
    )
    final, trace = decode(session)
    lo, hi = instance.answer_span
    answer = strip_pad([final.cells[i] for i in range(lo, hi)], instance.vocab)
    correct = answer == strip_pad(list(instance.gold_answer), instance.vocab)
    return trace, final, correct


@dataclass
class BenchmarkReport:
    task: str
    n_instances: int
    seed: int
    rows: list  # [{"policy": ..., "accuracy": ..., "mean_nfe": ..., "mean_kl_bound": ...}]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "n_instances": self.n_instances,
            "seed": self.seed,
            "rows": self.rows,
        }

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["policy", "accuracy", "mean_nfe", "mean_kl_bound"])
        for row in self.rows:
            writer.writerow(
                [
                    row["policy"],
                    f"{row['accuracy']:.6f}",
                    f"{row['mean_nfe']:.6f}",
                    f"{row['mean_kl_bound']:.6f}",
                ]
            )
        return out.getvalue()


def benchmark(
    task,
    policies,
    n_instances: int = 500,
    seed: int = 0,
    trace_sink=None,
) -> BenchmarkReport:
    """Sweep policies over task instances.

    Instance i always decodes with the session seed derived from
    (seed, task, i), identically for every policy, so policy rows are
    directly comparable and the whole report is reproducible bytewise.
    trace_sink, when given, receives (instance_index, policy_label, trace)
    for every run.
    """
    policies = list(policies)
    sums = [{"correct": 0, "nfe": 0.0, "kl": 0.0} for _ in policies]
    for index, instance in enumerate(task.instances(n_instances, seed)):
        session_seed = derive_seed(seed, task.name, index)
        for p_index, policy in enumerate(policies):
            trace, _, correct = run_task_instance(instance, policy, session_seed)
            sums[p_index]["correct"] += 1 if correct else 0
            sums[p_index]["nfe"] += trace.nfe
            sums[p_index]["kl"] += parallel_entropy_budget(trace)
            if trace_sink is not None:
                trace_sink(index, policy_label(policy), trace)
    rows = []
    for policy, acc in zip(policies, sums):
        rows.append(
            {
                "policy": policy_label(policy),
                "accuracy": acc["correct"] / n_instances,
                "mean_nfe": acc["nfe"] / n_instances,
                "mean_kl_bound": acc["kl"] / n_instances,
            }
        )
    return BenchmarkReport(task=task.name, n_instances=n_instances, seed=seed, rows=rows)
