"""Synthetic verifiable reasoning task: modular arithmetic chains.

A problem is a start value followed by ``difficulty`` operations
(add / subtract / multiply, evaluated left to right, everything mod 100).
Numbers are written with exactly two digit tokens, so prompts are
unambiguous without separators.  The response alphabet adds THINK,
ANSWER and END delimiters; the answer is whatever digit run follows the
last ANSWER token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .rewards import accuracy_reward

__all__ = [
    "MODULUS", "VOCAB_SIZE", "PLUS", "MINUS", "TIMES", "EQUALS", "THINK", "ANSWER", "END",
    "TOKEN_NAMES", "Problem", "ParsedAnswer", "generate_problem", "parse_answer", "verify",
    "prompt_value", "shortest_response", "reasoned_response", "prompt_length", "render_tokens",
]

MODULUS = 100

# token ids: digits 0-9 map to ids 0-9
PLUS = 10
MINUS = 11
TIMES = 12
EQUALS = 13
THINK = 14
ANSWER = 15
END = 16
VOCAB_SIZE = 17

_OP_TOKENS = (PLUS, MINUS, TIMES)
TOKEN_NAMES = tuple("0123456789") + ("+", "-", "*", "=", "THINK", "ANSWER", "END")


@dataclass(frozen=True)
class Problem:
    """One arithmetic chain with its verifiable answer."""

    prompt_tokens: tuple[int, ...]
    ground_truth: int
    difficulty: int


@dataclass(frozen=True)
class ParsedAnswer:
    """Answer extracted from a response; ``value`` is None when absent."""

    value: int | None
    answer_span: tuple[int, int] | None


def _encode_number(n: int) -> tuple[int, int]:
    return n // 10, n % 10


def _apply(value: int, op: int, operand: int) -> int:
    if op == PLUS:
        return (value + operand) % MODULUS
    if op == MINUS:
        return (value - operand) % MODULUS
    return (value * operand) % MODULUS


def prompt_length(difficulty: int) -> int:
    """Token count of a prompt with the given number of operations."""
    return 3 + 3 * difficulty


def generate_problem(rng: np.random.Generator, difficulty: int) -> Problem:
    """Sample a chain of ``difficulty`` operations over integers mod 100."""
    if difficulty < 1:
        raise InvalidInputError("difficulty must be at least 1")
    start = int(rng.integers(0, MODULUS))
    tokens: list[int] = list(_encode_number(start))
    value = start
    for _ in range(difficulty):
        op = _OP_TOKENS[int(rng.integers(0, len(_OP_TOKENS)))]
        operand = int(rng.integers(0, MODULUS))
        value = _apply(value, op, operand)
        tokens.append(op)
        tokens.extend(_encode_number(operand))
    tokens.append(EQUALS)
    return Problem(prompt_tokens=tuple(tokens), ground_truth=value, difficulty=difficulty)


def prompt_value(prompt_tokens: tuple[int, ...]) -> int:
    """Re-evaluate a prompt's chain; the ground truth is recomputable."""
    tokens = list(prompt_tokens)
    if len(tokens) < 3 or tokens[-1] != EQUALS:
        raise InvalidInputError("prompt must end with '='")
    value = tokens[0] * 10 + tokens[1]
    i = 2
    while tokens[i] != EQUALS:
        op = tokens[i]
        if op not in _OP_TOKENS:
            raise InvalidInputError(f"expected operator at position {i}")
        operand = tokens[i + 1] * 10 + tokens[i + 2]
        value = _apply(value, op, operand)
        i += 3
    return value


def parse_answer(tokens) -> ParsedAnswer:
    """Extract the digit run following the last ANSWER token.

    Total over any token sequence; no delimiter (or a delimiter followed
    by no digits) yields an absent value.
    """
    seq = list(tokens)
    last = -1
    for i, t in enumerate(seq):
        if t == ANSWER:
            last = i
    if last < 0:
        return ParsedAnswer(value=None, answer_span=None)
    j = last + 1
    digits: list[int] = []
    while j < len(seq) and 0 <= seq[j] <= 9:
        digits.append(seq[j])
        j += 1
    if not digits:
        return ParsedAnswer(value=None, answer_span=None)
    value = 0
    for d in digits:
        value = value * 10 + d
    return ParsedAnswer(value=value, answer_span=(last + 1, j))


def verify(parsed: ParsedAnswer, problem: Problem) -> int:
    """1 iff the parsed value matches the problem's ground truth."""
    return accuracy_reward(parsed.value, problem.ground_truth)


def shortest_response(problem: Problem) -> tuple[int, ...]:
    """Canonical minimal correct response: ANSWER, two digits, END."""
    t, u = _encode_number(problem.ground_truth)
    return (ANSWER, t, u, END)


def reasoned_response(problem: Problem) -> tuple[int, ...]:
    """Canonical full-reasoning response: one THINK'd intermediate per hop."""
    tokens = list(problem.prompt_tokens)
    value = tokens[0] * 10 + tokens[1]
    out: list[int] = []
    i = 2
    while tokens[i] != EQUALS:
        value = _apply(value, tokens[i], tokens[i + 1] * 10 + tokens[i + 2])
        out.append(THINK)
        out.extend(_encode_number(value))
        i += 3
    out.append(ANSWER)
    out.extend(_encode_number(problem.ground_truth))
    out.append(END)
    return tuple(out)


def render_tokens(tokens) -> str:
    """Human-readable rendering of a token sequence."""
    return " ".join(TOKEN_NAMES[t] if 0 <= t < VOCAB_SIZE else f"<{t}>" for t in tokens)
