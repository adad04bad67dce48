"""Label-guided annotation: prompts, generator calls, and response parsing.

Each vulnerability type has a canonical prompt template whose checklist spells
out what the generator must examine. Generators answer with a fenced
``analysis`` block (label / locations / explanation) that is parsed into an
AnnotationCandidate; a reply without a valid block gets exactly one
reformat-retry before the generator is recorded as failed.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from typing import Optional, Sequence, Union

from scforge.corpus import ContractUnit
from scforge.llmclient import ChatClient, EndpointConfig, LlmClientError, Message
from scforge.patterns import VulnType

logger = logging.getLogger(__name__)


class AnnotationError(Exception):
    pass


class MissingBlock(AnnotationError):
    pass


class BadLabelValue(AnnotationError):
    pass


class MissingLocations(AnnotationError):
    pass


class LocationOutOfRange(AnnotationError):
    def __init__(self, line: int):
        super().__init__(f"location line {line} outside unit")
        self.line = line


class AllGeneratorsFailed(AnnotationError):
    def __init__(self, unit_id: str, failures: dict[str, str]):
        super().__init__(f"all generators failed for unit {unit_id}: {failures}")
        self.unit_id = unit_id
        self.failures = failures


CHECKLISTS: dict[VulnType, tuple[str, ...]] = {
    VulnType.REENTRANCY: (
        "call.value usage",
        "operation order",
        "external calls",
        "access control",
        "internal function implementation",
    ),
    VulnType.TIMESTAMP_DEPENDENCY: (
        "block.timestamp or now usage",
        "time constraints in critical operations",
        "miner manipulation",
        "time precision",
    ),
    VulnType.DELEGATECALL: (
        "delegatecall usage",
        "context preservation",
        "state variable manipulation",
        "access control",
        "internal function implementation",
    ),
    VulnType.INTEGER_OVERFLOW_UNDERFLOW: (
        "arithmetic on uint variables",
        "SafeMath or 0.8.x checks",
        "unchecked keyword",
        "critical-operation arithmetic",
        "type conversion and large numbers",
    ),
}

_VULN_TITLES = {
    VulnType.REENTRANCY: "reentrancy",
    VulnType.TIMESTAMP_DEPENDENCY: "timestamp dependency",
    VulnType.INTEGER_OVERFLOW_UNDERFLOW: "integer overflow/underflow",
    VulnType.DELEGATECALL: "delegatecall misuse",
}

FORMAT_INSTRUCTIONS = """Answer with exactly one fenced block in this form:

```analysis
label: VULNERABLE or SAFE
locations: comma-separated line ranges like 12-14, 20-22 (empty if SAFE)
explanation: your detailed reasoning, referencing the numbered lines
```"""


@dataclass(frozen=True)
class PromptTemplate:
    vuln_type: VulnType
    system_text: str
    user_template: str
    checklist: tuple[str, ...]


def default_template(vuln_type: VulnType) -> PromptTemplate:
    checklist = CHECKLISTS[vuln_type]
    title = _VULN_TITLES[vuln_type]
    checklist_lines = "\n".join(f"- {item}" for item in checklist)
    user_template = (
        f"Analyze the following smart contract for {title} vulnerabilities.\n"
        f"{{label_hint}}\n\n"
        f"Examine each of these aspects:\n{checklist_lines}\n\n"
        f"Contract (with line numbers):\n{{code}}\n\n"
        f"Pinpoint the exact locations of any issue, giving specific line numbers "
        f"and the code blocks where they occur.\n\n{FORMAT_INSTRUCTIONS}"
    )
    system_text = (
        "You are an expert smart contract security auditor. You analyze Solidity "
        f"code for {title} vulnerabilities and explain your findings precisely."
    )
    return PromptTemplate(vuln_type, system_text, user_template, checklist)


def number_lines(source: str) -> str:
    return "\n".join(f"{i:>4} | {text}" for i, text in enumerate(source.splitlines(), 1))


def _label_hint(vuln_type: VulnType, known_label: Optional[int]) -> str:
    title = _VULN_TITLES[vuln_type]
    if known_label is None:
        return (
            f"Decide whether this contract is vulnerable to {title} "
            "and report your label with an explanation."
        )
    if known_label == 1:
        return (
            f"Ground-truth label: VULNERABLE. This contract is known to contain a {title} "
            "vulnerability; explain why and localize it."
        )
    return (
        f"Ground-truth label: SAFE. This contract is known to be safe from {title}; "
        "explain what makes it safe."
    )


def build_prompt(
    tmpl: PromptTemplate, unit: ContractUnit, known_label: Optional[int] = None
) -> list[Message]:
    if not unit.source:
        raise ValueError("unit source must be non-empty")
    user = tmpl.user_template.format(
        code=number_lines(unit.source), label_hint=_label_hint(tmpl.vuln_type, known_label)
    )
    return [("system", tmpl.system_text), ("user", user)]


def normalize_snippet(lines: Sequence[str]) -> str:
    return "\n".join(line.strip() for line in lines)


def snippet_for(unit: ContractUnit, line_start: int, line_end: int) -> str:
    lines = unit.source.splitlines()
    return normalize_snippet(lines[line_start - 1 : line_end])


@dataclass(frozen=True)
class Location:
    line_start: int
    line_end: int
    snippet: str

    def __post_init__(self):
        if self.line_start > self.line_end:
            raise ValueError("line_start must be <= line_end")


@dataclass(frozen=True)
class AnnotationCandidate:
    candidate_id: str
    unit_id: str
    vuln_type: VulnType
    generator_id: str
    label: int
    explanation: str
    locations: tuple[Location, ...]
    raw_response: str
    attempts: int = 1

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if self.label == 1 and not self.locations:
            raise ValueError("a vulnerable candidate must carry locations")

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "unit_id": self.unit_id,
            "vuln_type": self.vuln_type.value,
            "generator_id": self.generator_id,
            "label": self.label,
            "explanation": self.explanation,
            "locations": [[loc.line_start, loc.line_end, loc.snippet] for loc in self.locations],
            "raw_response": self.raw_response,
            "attempts": self.attempts,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "AnnotationCandidate":
        return cls(
            candidate_id=row["candidate_id"],
            unit_id=row["unit_id"],
            vuln_type=VulnType.parse(row["vuln_type"]),
            generator_id=row["generator_id"],
            label=int(row["label"]),
            explanation=row["explanation"],
            locations=tuple(Location(int(s), int(e), snip) for s, e, snip in row["locations"]),
            raw_response=row["raw_response"],
            attempts=int(row.get("attempts", 1)),
        )


_BLOCK_RE = re.compile(r"```analysis[^\n]*\n(.*?)```", re.DOTALL)
_RANGE_RE = re.compile(r"^(\d+)(?:\s*-\s*(\d+))?$")
_TRUE_LABELS = {"vulnerable", "1"}
_FALSE_LABELS = {"safe", "0"}


def parse_annotation(raw: str, unit: ContractUnit) -> tuple[int, str, tuple[Location, ...]]:
    """Extract (label, explanation, locations) from a fenced analysis block."""
    match = _BLOCK_RE.search(raw)
    if not match:
        raise MissingBlock("no fenced analysis block in response")
    body = match.group(1)

    label_m = re.search(r"^label\s*:\s*(.+)$", body, re.MULTILINE)
    if not label_m:
        raise MissingBlock("analysis block lacks a label key")
    label_text = label_m.group(1).strip().strip(".").lower()
    if label_text in _TRUE_LABELS:
        label = 1
    elif label_text in _FALSE_LABELS:
        label = 0
    else:
        raise BadLabelValue(f"unrecognized label {label_m.group(1).strip()!r}")

    locations: list[Location] = []
    loc_m = re.search(r"^locations\s*:\s*(.*)$", body, re.MULTILINE)
    if loc_m:
        for part in loc_m.group(1).split(","):
            part = part.strip()
            if not part or part.lower() in ("none", "n/a", "-"):
                continue
            range_m = _RANGE_RE.match(part)
            if not range_m:
                continue
            start = int(range_m.group(1))
            end = int(range_m.group(2)) if range_m.group(2) else start
            if start < 1 or start > unit.line_count:
                raise LocationOutOfRange(start)
            if end < start or end > unit.line_count:
                raise LocationOutOfRange(end)
            locations.append(Location(start, end, snippet_for(unit, start, end)))

    expl_m = re.search(r"explanation\s*:\s*(.*)\Z", body, re.DOTALL)
    explanation = expl_m.group(1).strip() if expl_m else ""

    if label == 1 and not locations:
        raise MissingLocations("label VULNERABLE requires at least one location")
    return label, explanation, tuple(locations)


def candidate_id_for(unit_id: str, vuln_type: VulnType, generator_id: str) -> str:
    raw = f"{unit_id}:{vuln_type.code}:{generator_id}"
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]


_REFORMAT_MESSAGE = (
    "Your previous reply did not contain a valid fenced analysis block. "
    "Reply again with only the structured block.\n\n" + FORMAT_INSTRUCTIONS
)

Generator = Union[ChatClient, EndpointConfig]


def generate_candidates(
    unit: ContractUnit,
    vuln_type: VulnType,
    generators: Sequence[Generator],
    known_label: Optional[int] = None,
    template: Optional[PromptTemplate] = None,
) -> list[AnnotationCandidate]:
    """One candidate per generator that produces a parseable analysis block."""
    if not generators:
        raise ValueError("generators must be non-empty")
    tmpl = template or default_template(vuln_type)
    prompt = build_prompt(tmpl, unit, known_label)

    candidates: list[AnnotationCandidate] = []
    failures: dict[str, str] = {}
    for gen in generators:
        client = gen if isinstance(gen, ChatClient) else ChatClient(gen)
        generator_id = client.cfg.model_name
        try:
            candidates.append(
                _candidate_from_generator(client, generator_id, prompt, unit, vuln_type)
            )
        except (AnnotationError, LlmClientError) as exc:
            logger.warning("generator %s failed on unit %s: %s", generator_id, unit.unit_id, exc)
            failures[generator_id] = str(exc)
    if not candidates:
        raise AllGeneratorsFailed(unit.unit_id, failures)
    return sorted(candidates, key=lambda c: (c.unit_id, c.generator_id))


def _candidate_from_generator(
    client: ChatClient,
    generator_id: str,
    prompt: list[Message],
    unit: ContractUnit,
    vuln_type: VulnType,
) -> AnnotationCandidate:
    exchange = client.complete(prompt)
    attempts = 1
    try:
        label, explanation, locations = parse_annotation(exchange.response_text, unit)
    except AnnotationError:
        retry_prompt = list(prompt) + [
            ("assistant", exchange.response_text),
            ("user", _REFORMAT_MESSAGE),
        ]
        exchange = client.complete(retry_prompt)
        attempts = 2
        label, explanation, locations = parse_annotation(exchange.response_text, unit)
    return AnnotationCandidate(
        candidate_id=candidate_id_for(unit.unit_id, vuln_type, generator_id),
        unit_id=unit.unit_id,
        vuln_type=vuln_type,
        generator_id=generator_id,
        label=label,
        explanation=explanation,
        locations=locations,
        raw_response=exchange.response_text,
        attempts=attempts,
    )
