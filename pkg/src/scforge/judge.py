"""Judge-model scoring of annotation candidates and winner selection.

Two scales: 1-10 per dimension while curating the dataset, and a 4-point
Likert scale when rating explanation quality. Scores come back in a fenced
``scores`` block; selection takes the highest summed score with deterministic
tie-breaking.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from scforge.annotate import AnnotationCandidate, number_lines
from scforge.corpus import ContractUnit
from scforge.llmclient import ChatClient, Message
from scforge.patterns import VulnType

DIMENSIONS = ("correctness", "completeness", "conciseness")


class JudgeError(Exception):
    pass


class MissingBlock(JudgeError):
    pass


class NonIntegerScore(JudgeError):
    pass


class ScoreOutOfRange(JudgeError):
    def __init__(self, dimension: str, value: int):
        super().__init__(f"{dimension} score {value} out of range")
        self.dimension = dimension
        self.value = value


class NoScoredCandidates(JudgeError):
    pass


class ScaleMismatch(JudgeError):
    pass


class Scale(str, Enum):
    CURATION_1_TO_10 = "curation_1_to_10"
    LIKERT_1_TO_4 = "likert_1_to_4"

    @property
    def bounds(self) -> tuple[int, int]:
        return (1, 10) if self is Scale.CURATION_1_TO_10 else (1, 4)


# 4-point anchor descriptions, one block per dimension; these are also served
# to human raters by the review service so both judge tracks share one rubric.
LIKERT_ANCHORS: dict[str, tuple[str, str, str, str]] = {
    "correctness": (
        "1 - Disagree: Major errors in logic and localization.",
        "2 - Somewhat disagree: Some errors, misses major vulnerabilities.",
        "3 - Somewhat agree: Minor omissions, locates major vulnerabilities.",
        "4 - Agree: Correct logic, accurate identification and localization.",
    ),
    "completeness": (
        "1 - Disagree: Omits multiple key vulnerabilities, superficial explanations.",
        "2 - Somewhat disagree: Identifies some, misses major issues, lacks depth.",
        "3 - Somewhat agree: Covers major vulnerabilities, may miss minor ones.",
        "4 - Agree: Comprehensive identification, detailed explanations for all.",
    ),
    "conciseness": (
        "1 - Disagree: Verbose, key points obscured, difficult to apply.",
        "2 - Somewhat disagree: Somewhat verbose, key info present but unclear.",
        "3 - Somewhat agree: Generally concise, some parts slightly verbose.",
        "4 - Agree: Precise, clear, directly applicable, no redundancy.",
    ),
}

DIMENSION_DEFINITIONS = {
    "correctness": "accuracy of the reasoning logic and of the vulnerability localization",
    "completeness": "whether the explanation covers all potential vulnerability points",
    "conciseness": "whether the explanation is concise, clear, and quick to apply",
}

SCORES_FORMAT = """Respond with exactly one fenced block in this form:

```scores
correctness: <integer>
completeness: <integer>
conciseness: <integer>
rationale: one short justification per dimension
```"""


@dataclass(frozen=True)
class JudgeScore:
    candidate_id: str
    scale: Scale
    correctness: int
    completeness: int
    conciseness: int
    rationale: str
    judge_model: str

    def __post_init__(self):
        lo, hi = self.scale.bounds
        for dim in DIMENSIONS:
            value = getattr(self, dim)
            if not isinstance(value, int) or isinstance(value, bool):
                raise NonIntegerScore(f"{dim} must be an integer")
            if not lo <= value <= hi:
                raise ScoreOutOfRange(dim, value)
        if not self.rationale:
            raise ValueError("rationale must be non-empty")

    @property
    def total(self) -> int:
        return self.correctness + self.completeness + self.conciseness

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "scale": self.scale.value,
            "correctness": self.correctness,
            "completeness": self.completeness,
            "conciseness": self.conciseness,
            "rationale": self.rationale,
            "judge_model": self.judge_model,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "JudgeScore":
        return cls(
            candidate_id=row["candidate_id"],
            scale=Scale(row["scale"]),
            correctness=int(row["correctness"]),
            completeness=int(row["completeness"]),
            conciseness=int(row["conciseness"]),
            rationale=row["rationale"],
            judge_model=row["judge_model"],
        )


@dataclass(frozen=True)
class SelectionRecord:
    unit_id: str
    vuln_type: VulnType
    winner: str
    total_score: int
    runner_up_scores: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "vuln_type": self.vuln_type.value,
            "winner": self.winner,
            "total_score": self.total_score,
            "runner_up_scores": [list(pair) for pair in self.runner_up_scores],
        }

    @classmethod
    def from_dict(cls, row: dict) -> "SelectionRecord":
        return cls(
            unit_id=row["unit_id"],
            vuln_type=VulnType.parse(row["vuln_type"]),
            winner=row["winner"],
            total_score=int(row["total_score"]),
            runner_up_scores=tuple((cid, int(total)) for cid, total in row["runner_up_scores"]),
        )


def _rubric_text(scale: Scale) -> str:
    lines = []
    if scale is Scale.LIKERT_1_TO_4:
        lines.append("Score each dimension on a 4-point Likert scale using these anchors:")
        for dim in DIMENSIONS:
            lines.append(f"\n{dim.capitalize()} ({DIMENSION_DEFINITIONS[dim]}):")
            lines.extend(LIKERT_ANCHORS[dim])
    else:
        lines.append("Score each dimension on a scale of 1 to 10 (10 is best):")
        for dim in DIMENSIONS:
            lines.append(f"- {dim}: {DIMENSION_DEFINITIONS[dim]}")
        lines.append(
            "Example: an explanation with sound reasoning but one mislocated line might "
            "score correctness: 7 with a rationale naming the mislocated line."
        )
    lines.append("\nGive a rationale covering every dimension.")
    return "\n".join(lines)


def build_judge_prompt(
    candidate: AnnotationCandidate, unit: ContractUnit, scale: Scale
) -> list[Message]:
    system = (
        "You are a strict evaluator of smart contract vulnerability explanations. "
        "You follow the scoring rubric exactly."
    )
    parts = [
        f"Vulnerability type under review: {candidate.vuln_type.value}.",
    ]
    if scale is Scale.CURATION_1_TO_10:
        parts.append(f"Ground-truth label: {'VULNERABLE' if candidate.label else 'SAFE'}.")
    parts.extend(
        [
            f"\nContract (with line numbers):\n{number_lines(unit.source)}",
            f"\nCandidate explanation to score:\n{candidate.explanation}",
            "",
            _rubric_text(scale),
            "",
            SCORES_FORMAT,
        ]
    )
    return [("system", system), ("user", "\n".join(parts))]


_BLOCK_RE = re.compile(r"```scores[^\n]*\n(.*?)```", re.DOTALL)
_INT_RE = re.compile(r"^[+-]?\d+$")


def parse_judge_scores(raw: str, scale: Scale) -> dict:
    """Strictly extract the three integer scores and the rationale."""
    match = _BLOCK_RE.search(raw)
    if not match:
        raise MissingBlock("no fenced scores block in response")
    body = match.group(1)
    values: dict[str, int] = {}
    lo, hi = scale.bounds
    for dim in DIMENSIONS:
        dim_m = re.search(rf"^{dim}\s*:\s*(.+)$", body, re.MULTILINE)
        if not dim_m:
            raise MissingBlock(f"scores block lacks {dim}")
        text = dim_m.group(1).strip()
        if not _INT_RE.match(text):
            raise NonIntegerScore(f"{dim} score {text!r} is not an integer")
        value = int(text)
        if not lo <= value <= hi:
            raise ScoreOutOfRange(dim, value)
        values[dim] = value
    rat_m = re.search(r"rationale\s*:\s*(.*)\Z", body, re.DOTALL)
    rationale = rat_m.group(1).strip() if rat_m else ""
    if not rationale:
        raise MissingBlock("scores block lacks a rationale")
    return {**values, "rationale": rationale}


def score_candidate(
    client: ChatClient,
    candidate: AnnotationCandidate,
    unit: ContractUnit,
    scale: Scale,
) -> JudgeScore:
    """Obtain a JudgeScore, allowing one reformat-retry on a bad block."""
    prompt = build_judge_prompt(candidate, unit, scale)
    exchange = client.complete(prompt)
    try:
        parsed = parse_judge_scores(exchange.response_text, scale)
    except JudgeError:
        retry = list(prompt) + [
            ("assistant", exchange.response_text),
            ("user", "Your previous reply lacked a valid scores block. " + SCORES_FORMAT),
        ]
        exchange = client.complete(retry)
        parsed = parse_judge_scores(exchange.response_text, scale)
    return JudgeScore(
        candidate_id=candidate.candidate_id,
        scale=scale,
        correctness=parsed["correctness"],
        completeness=parsed["completeness"],
        conciseness=parsed["conciseness"],
        rationale=parsed["rationale"],
        judge_model=client.cfg.model_name,
    )


def select_best(
    scores: Sequence[JudgeScore],
    candidates: Mapping[str, AnnotationCandidate],
) -> SelectionRecord:
    """Pick the winning candidate for one unit from its curation scores.

    Tie-break chain: higher total, then higher correctness, then the
    lexicographically smaller generator_id. Input order never matters.
    """
    if not scores:
        raise NoScoredCandidates("no scored candidates for selection")
    for score in scores:
        if score.scale is not Scale.CURATION_1_TO_10:
            raise ScaleMismatch(f"selection requires curation-scale scores, got {score.scale.value}")
        if score.candidate_id not in candidates:
            raise KeyError(f"candidate {score.candidate_id} missing from store")
    units = {candidates[s.candidate_id].unit_id for s in scores}
    if len(units) != 1:
        raise ValueError(f"selection mixes units: {sorted(units)}")

    def sort_key(score: JudgeScore):
        return (-score.total, -score.correctness, candidates[score.candidate_id].generator_id)

    ranked = sorted(scores, key=sort_key)
    winner = ranked[0]
    winner_candidate = candidates[winner.candidate_id]
    runner_ups = tuple(
        (s.candidate_id, s.total)
        for s in sorted(ranked[1:], key=lambda s: (-s.total, s.candidate_id))
    )
    return SelectionRecord(
        unit_id=winner_candidate.unit_id,
        vuln_type=winner_candidate.vuln_type,
        winner=winner.candidate_id,
        total_score=winner.total,
        runner_up_scores=runner_ups,
    )


def select_all(
    scores: Sequence[JudgeScore], candidates: Mapping[str, AnnotationCandidate]
) -> list[SelectionRecord]:
    """Group scores by (unit, vuln type) and select a winner per group."""
    grouped: dict[tuple[str, str], list[JudgeScore]] = {}
    for score in scores:
        cand = candidates[score.candidate_id]
        grouped.setdefault((cand.unit_id, cand.vuln_type.value), []).append(score)
    return [select_best(grouped[key], candidates) for key in sorted(grouped)]
