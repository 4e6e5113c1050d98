"""Synthetic modular-arithmetic tasks and the rule-based verifiers behind the rewards."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import IO, Iterable

from .core import OPERATORS, TaskInstance, make_rng
from .errors import SpecError

_ANSWER_SPAN = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_STRUCTURE = re.compile(r"<think>(.+?)</think><answer>(.+?)</answer>", re.DOTALL)
_TAGS = ("<think>", "</think>", "<answer>", "</answer>")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "mod_arith"
    modulus: int = 16
    chain_length: int = 1
    operators: str = "+-"

    def check(self) -> "TaskSpec":
        if self.kind != "mod_arith":
            raise SpecError(f"unknown task kind {self.kind!r}")
        if self.modulus < 2:
            raise SpecError(f"modulus must be ≥ 2, got {self.modulus}")
        if self.chain_length < 1:
            raise SpecError(f"chain_length must be ≥ 1, got {self.chain_length}")
        if not self.operators or not set(self.operators) <= set(OPERATORS):
            raise SpecError(f"operators must be a nonempty subset of {OPERATORS!r}")
        return self

    @classmethod
    def from_config(cls, cfg) -> "TaskSpec":
        return cls(cfg.task_kind, cfg.modulus, cfg.chain_length, cfg.operators)


def apply_op(op: str, a: int, b: int, modulus: int) -> int:
    if op == "+":
        return (a + b) % modulus
    if op == "-":
        return (a - b) % modulus
    if op == "*":
        return (a * b) % modulus
    raise SpecError(f"unknown operator {op!r}")


def evaluate_chain(operands: Iterable[int], operators: Iterable[str], modulus: int) -> int:
    """Left-to-right evaluation, reducing modulo ``modulus`` after each step."""
    operands = list(operands)
    acc = operands[0] % modulus
    for op, b in zip(operators, operands[1:]):
        acc = apply_op(op, acc, b, modulus)
    return acc


def render_query(operands, operators, modulus: int) -> str:
    expr = str(operands[0])
    for op, b in zip(operators, operands[1:]):
        expr = f"({expr} {op} {b})"
    return f"{expr} mod {modulus}"


def generate_instance(spec: TaskSpec, seed: int) -> TaskInstance:
    """Draw one instance; deterministic in ``(spec, seed)``."""
    spec.check()
    rng = make_rng(seed)
    M = spec.modulus
    operands = tuple(int(x) for x in rng.integers(0, M, size=spec.chain_length + 1))
    ops = tuple(spec.operators[int(i)] for i in rng.integers(0, len(spec.operators), size=spec.chain_length))
    truth = evaluate_chain(operands, ops, M)
    return TaskInstance(
        context=f"Evaluate left to right, reducing modulo {M} after every step.",
        query=render_query(operands, ops, M),
        ground_truth=str(truth),
        answer_space_size=M,
        operands=operands,
        operators=ops,
    )


def export_jsonl(instances: Iterable[TaskInstance], fh: IO[str]) -> int:
    n = 0
    for inst in instances:
        fh.write(json.dumps({"context": inst.context, "query": inst.query,
                             "truth": inst.ground_truth}) + "\n")
        n += 1
    return n


def extract_answer(decoded: str):
    m = _ANSWER_SPAN.search(decoded)
    return None if m is None else m.group(1).strip()


def verify_answer(decoded: str, truth: str) -> bool:
    """Exact match of the first ``<answer>`` span (whitespace-trimmed) against ``truth``."""
    answer = extract_answer(decoded)
    return answer is not None and answer == truth


def validate_structure(decoded: str) -> bool:
    """``<think>body</think><answer>body</answer>``, nonempty bodies, each tag exactly once."""
    if any(decoded.count(tag) != 1 for tag in _TAGS):
        return False
    return _STRUCTURE.fullmatch(decoded) is not None


def render_correct(instance: TaskInstance, trace: str = "ok") -> str:
    return f"<think>{trace}</think><answer>{instance.ground_truth}</answer>"
