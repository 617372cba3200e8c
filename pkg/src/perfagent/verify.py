"""Output comparison and correctness classification.

An attempt lands in exactly one category, decided by a fixed precedence:
NoGeneratedCode, then CompilationError, then FailedToFollowInstructions,
then OutputMismatch, then Correct. Any non-Correct category makes the
attempt NA downstream: its speedup is recorded as 1.0 against itself,
since measurement reverts to the original code.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum

from .manifest import ValidationMode, ValidationPolicy
from .toolchain import BuildOutcome, RunSample

_EXCERPT_LIMIT = 120


class CorrectnessCategory(Enum):
    CORRECT = "Correct"
    COMPILATION_ERROR = "CompilationError"
    NO_GENERATED_CODE = "NoGeneratedCode"
    OUTPUT_MISMATCH = "OutputMismatch"
    FAILED_TO_FOLLOW_INSTRUCTIONS = "FailedToFollowInstructions"


class VerifyError(Exception):
    """Base class for verification failures."""


class InconsistentInputs(VerifyError):
    pass


class EmptyList(VerifyError):
    pass


@dataclass(frozen=True)
class Divergence:
    line: int
    index: int  # byte column (ExactBytes) or token position on the line
    reference_excerpt: str
    candidate_excerpt: str


@dataclass(frozen=True)
class MatchReport:
    """``compared_tokens`` counts lines (ExactBytes) or tokens compared."""

    matched: bool
    first_divergence: Divergence | None
    compared_tokens: int


def _filter_lines(data: bytes, patterns: tuple[str, ...]) -> list[bytes]:
    compiled = [re.compile(p) for p in patterns]
    kept = []
    for raw in data.splitlines(keepends=True):
        text = raw.rstrip(b"\r\n").decode("latin-1")
        if any(rx.search(text) for rx in compiled):
            continue
        kept.append(raw)
    return kept


def _clip(text: str) -> str:
    return text if len(text) <= _EXCERPT_LIMIT else text[:_EXCERPT_LIMIT] + "..."


def _compare_exact(ref_lines: list[bytes], cand_lines: list[bytes]) -> MatchReport:
    count = min(len(ref_lines), len(cand_lines))
    for i in range(count):
        if ref_lines[i] != cand_lines[i]:
            col = next(
                (
                    j
                    for j, (a, b) in enumerate(zip(ref_lines[i], cand_lines[i]))
                    if a != b
                ),
                min(len(ref_lines[i]), len(cand_lines[i])),
            )
            return MatchReport(
                False,
                Divergence(
                    line=i + 1,
                    index=col,
                    reference_excerpt=_clip(ref_lines[i].decode("latin-1").rstrip("\r\n")),
                    candidate_excerpt=_clip(cand_lines[i].decode("latin-1").rstrip("\r\n")),
                ),
                compared_tokens=i + 1,
            )
    if len(ref_lines) != len(cand_lines):
        longer = ref_lines if len(ref_lines) > count else cand_lines
        extra = longer[count].decode("latin-1").rstrip("\r\n")
        return MatchReport(
            False,
            Divergence(
                line=count + 1,
                index=0,
                reference_excerpt=_clip(extra) if len(ref_lines) > count else "<end of output>",
                candidate_excerpt=_clip(extra) if len(cand_lines) > count else "<end of output>",
            ),
            compared_tokens=count,
        )
    return MatchReport(True, None, compared_tokens=count)


def _parse_number(token: str) -> float | None:
    try:
        value = float(token)
    except ValueError:
        return None
    return value


def _tokens_with_positions(lines: list[bytes]) -> list[tuple[int, int, str]]:
    out = []
    for line_no, raw in enumerate(lines, start=1):
        text = raw.rstrip(b"\r\n").decode("latin-1")
        for idx, token in enumerate(text.split(), start=1):
            out.append((line_no, idx, token))
    return out


def _numbers_match(r: float, c: float, policy: ValidationPolicy) -> bool:
    if math.isnan(r) and math.isnan(c):
        return True
    return abs(r - c) <= policy.abs_tol + policy.rel_tol * abs(r)


def _compare_numeric(
    ref_lines: list[bytes], cand_lines: list[bytes], policy: ValidationPolicy
) -> MatchReport:
    ref_tokens = _tokens_with_positions(ref_lines)
    cand_tokens = _tokens_with_positions(cand_lines)

    compared = 0
    for (r_line, r_idx, r_tok), (_, _, c_tok) in zip(ref_tokens, cand_tokens):
        compared += 1
        r_num = _parse_number(r_tok)
        c_num = _parse_number(c_tok)
        if r_num is not None and c_num is not None:
            if _numbers_match(r_num, c_num, policy):
                continue
        elif r_tok == c_tok:
            continue
        return MatchReport(
            False,
            Divergence(r_line, r_idx, _clip(r_tok), _clip(c_tok)),
            compared,
        )

    if len(ref_tokens) != len(cand_tokens):
        longer = ref_tokens if len(ref_tokens) > len(cand_tokens) else cand_tokens
        line_no, idx, token = longer[min(len(ref_tokens), len(cand_tokens))]
        ref_side = token if len(ref_tokens) > len(cand_tokens) else "<end of output>"
        cand_side = token if len(cand_tokens) > len(ref_tokens) else "<end of output>"
        return MatchReport(
            False,
            Divergence(line_no, idx, _clip(ref_side), _clip(cand_side)),
            compared,
        )
    return MatchReport(True, None, compared)


def compare_outputs(
    reference: bytes, candidate: bytes, policy: ValidationPolicy
) -> MatchReport:
    """Compare program outputs under the benchmark's validation policy.

    ExactBytes: byte equality after dropping lines matching any
    ignore_pattern. NumericTokens: whitespace tokens must pair up;
    numeric pairs match when |r - c| <= abs_tol + rel_tol * |r| (the
    reference is ground truth); other pairs must be byte-equal.
    """
    ref_lines = _filter_lines(reference, policy.ignore_patterns)
    cand_lines = _filter_lines(candidate, policy.ignore_patterns)
    if policy.mode is ValidationMode.EXACT_BYTES:
        return _compare_exact(ref_lines, cand_lines)
    return _compare_numeric(ref_lines, cand_lines, policy)


def classify_attempt(
    build: BuildOutcome | None,
    extraction,
    run: RunSample | None,
    match: MatchReport | None,
    constraint_flags: set,
) -> CorrectnessCategory:
    """Map one attempt onto the correctness taxonomy.

    ``extraction`` needs only a ``code`` attribute; None means the code
    arrived outside a model response (external tool trees) and counts as
    present. Raises InconsistentInputs when the combination could not
    have come from a real pipeline run.
    """
    code_present = extraction is None or (
        getattr(extraction, "code", None) is not None and str(extraction.code).strip()
    )

    if not code_present:
        if run is not None or match is not None:
            raise InconsistentInputs("run/match recorded without generated code")
        return CorrectnessCategory.NO_GENERATED_CODE

    if build is None:
        # Pipelines that gate on constraints may skip the build entirely.
        if constraint_flags and run is None and match is None:
            return CorrectnessCategory.FAILED_TO_FOLLOW_INSTRUCTIONS
        raise InconsistentInputs("generated code but no build outcome")
    if not build.ok:
        if run is not None:
            raise InconsistentInputs("run recorded though build failed")
        return CorrectnessCategory.COMPILATION_ERROR

    if constraint_flags:
        return CorrectnessCategory.FAILED_TO_FOLLOW_INSTRUCTIONS

    if run is None:
        if match is not None:
            raise InconsistentInputs("match recorded without a run")
        raise InconsistentInputs("build succeeded but no run recorded")
    if run.crashed or run.timed_out:
        return CorrectnessCategory.OUTPUT_MISMATCH

    if match is None:
        raise InconsistentInputs("successful run but no output comparison")
    return CorrectnessCategory.CORRECT if match.matched else CorrectnessCategory.OUTPUT_MISMATCH


def pass_at_1(categories: list[CorrectnessCategory]) -> float:
    """Fraction of attempts whose single try is fully correct."""
    if not categories:
        raise EmptyList("no categories to score")
    correct = sum(1 for c in categories if c is CorrectnessCategory.CORRECT)
    return correct / len(categories)
