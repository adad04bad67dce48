"""Training-set assembly, the two loss calculators, and a desk-scale n-gram
stand-in for domain-adaptive pre-training.

The adaptation loss is the summed token negative log-likelihood (natural
log); the fine-tuning loss is the equal-weight average of the explanation
and detection losses. Actual gradient training happens in an external
runner configured by the emitted manifests.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

from scforge.annotate import AnnotationCandidate
from scforge.corpus import ContractUnit
from scforge.judge import SelectionRecord
from scforge.patterns import VulnType


class TrainingError(Exception):
    pass


class NonPositiveProbability(TrainingError):
    def __init__(self, index: int, value: float):
        super().__init__(f"probability at index {index} is {value}; must be in (0, 1]")
        self.index = index
        self.value = value


class InsufficientGeneralData(TrainingError):
    def __init__(self, needed: int, available: int):
        super().__init__(f"need {needed} general records, only {available} available")
        self.needed = needed
        self.available = available


class DanglingSelection(TrainingError):
    def __init__(self, candidate_id: str):
        super().__init__(f"selection winner {candidate_id} not in candidate store")
        self.candidate_id = candidate_id


class EmptyCorpus(TrainingError):
    pass


class InfiniteLoss(TrainingError):
    def __init__(self, position: int):
        super().__init__(f"zero probability at position {position} (unsmoothed model)")
        self.position = position


# ---------------------------------------------------------------------------
# Loss calculators


@dataclass(frozen=True)
class ProbSequence:
    probs: tuple[float, ...]
    description: str = ""

    def __post_init__(self):
        for i, p in enumerate(self.probs):
            if p <= 0.0:
                raise NonPositiveProbability(i, p)
            if p > 1.0:
                raise ValueError(f"probability at index {i} is {p} > 1")


def loss_adapt(seq: Union[ProbSequence, Sequence[float]]) -> float:
    """Summed negative natural log-likelihood of the given token probabilities."""
    probs = seq.probs if isinstance(seq, ProbSequence) else seq
    total = 0.0
    for i, p in enumerate(probs):
        if p <= 0.0:
            raise NonPositiveProbability(i, p)
        total -= math.log(p)
    return total


def loss_sft(gen_probs: Union[ProbSequence, Sequence[float]], det_probs: Union[ProbSequence, Sequence[float]]) -> float:
    """Equal-weight average of explanation-generation and detection-label losses."""
    return (loss_adapt(gen_probs) + loss_adapt(det_probs)) / 2.0


# ---------------------------------------------------------------------------
# Continual pre-training mix


@dataclass(frozen=True)
class CptRecord:
    record_id: str
    text: str
    origin: str  # "smart_contract" | "general"
    token_count: int

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "text": self.text,
            "origin": self.origin,
            "token_count": self.token_count,
        }


def general_record(record_id: str, text: str) -> CptRecord:
    return CptRecord(record_id, text, "general", len(text.split()))


def contract_record(unit: ContractUnit) -> CptRecord:
    return CptRecord(unit.unit_id, unit.source, "smart_contract", len(unit.tokens))


# Instance ratio from the reference corpus: 100,000 general instances mixed
# into 186,397 contract instances.
DEFAULT_GENERAL_FRACTION = 100000 / 286397


def assemble_cpt(
    contracts: Sequence[ContractUnit],
    general: Sequence[CptRecord],
    target_general_fraction: float = DEFAULT_GENERAL_FRACTION,
    seed: int = 0,
) -> tuple[list[CptRecord], dict]:
    """Seeded interleave of contract and general records at a target fraction."""
    if not 0.0 <= target_general_fraction < 1.0:
        raise ValueError("target_general_fraction must be in [0, 1)")
    if not contracts:
        raise EmptyCorpus("no contract records to mix")
    n_contracts = len(contracts)
    needed = _general_needed(n_contracts, target_general_fraction)
    if needed > len(general):
        raise InsufficientGeneralData(needed, len(general))

    rng = random.Random(seed)
    chosen = rng.sample(list(general), needed)
    mixed = [contract_record(u) for u in contracts] + chosen
    rng.shuffle(mixed)

    contract_tokens = sum(r.token_count for r in mixed if r.origin == "smart_contract")
    general_tokens = sum(r.token_count for r in mixed if r.origin == "general")
    stats = {
        "contract_instances": n_contracts,
        "general_instances": needed,
        "total_instances": len(mixed),
        "contract_tokens": contract_tokens,
        "general_tokens": general_tokens,
        "total_tokens": contract_tokens + general_tokens,
        "target_general_fraction": target_general_fraction,
        "achieved_general_fraction": needed / len(mixed),
        "seed": seed,
    }
    return mixed, stats


def _general_needed(n_contracts: int, fraction: float) -> int:
    if fraction <= 0.0:
        return 0
    exact = n_contracts * fraction / (1.0 - fraction)
    floor, ceil = math.floor(exact), math.ceil(exact)
    return min(
        (g for g in (floor, ceil) if g >= 0),
        key=lambda g: abs(g / (n_contracts + g) - fraction),
    )


# ---------------------------------------------------------------------------
# Fine-tuning examples

# Published per-type sizes of the reference fine-tuning corpus; shipped for
# comparison reports, never enforced.
REFERENCE_SFT_COUNTS = {"RE": 3382, "TD": 1165, "IO": 1005, "DE": 697}


@dataclass(frozen=True)
class SftExample:
    example_id: str
    vuln_type: VulnType
    code: str
    label: int
    explanation: str
    locations: tuple[tuple[int, int], ...]
    provenance: str  # "llm_selected" | "human_verified"

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if self.provenance == "human_verified" and not self.explanation:
            raise ValueError("human-verified examples must carry an explanation")

    def to_dict(self) -> dict:
        return {
            "example_id": self.example_id,
            "vuln_type": self.vuln_type.value,
            "code": self.code,
            "label": self.label,
            "explanation": self.explanation,
            "locations": [list(pair) for pair in self.locations],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, row: dict) -> "SftExample":
        return cls(
            example_id=row["example_id"],
            vuln_type=VulnType.parse(row["vuln_type"]),
            code=row["code"],
            label=int(row["label"]),
            explanation=row["explanation"],
            locations=tuple((int(a), int(b)) for a, b in row["locations"]),
            provenance=row["provenance"],
        )


def assemble_sft(
    selections: Sequence[SelectionRecord],
    candidates: Mapping[str, AnnotationCandidate],
    units: Mapping[str, ContractUnit],
    overrides: Optional[Mapping[str, str]] = None,
) -> tuple[list[SftExample], dict]:
    """One training example per selection; expert edits replace explanations."""
    overrides = overrides or {}
    examples: list[SftExample] = []
    counts: dict[str, int] = {code: 0 for code in REFERENCE_SFT_COUNTS}
    for selection in selections:
        if selection.winner not in candidates:
            raise DanglingSelection(selection.winner)
        winner = candidates[selection.winner]
        if winner.unit_id not in units:
            raise KeyError(f"unit {winner.unit_id} missing from unit store")
        unit = units[winner.unit_id]
        override = overrides.get(winner.candidate_id)
        example_id = hashlib.sha256(
            f"sft:{selection.unit_id}:{selection.vuln_type.code}".encode("utf-8")
        ).hexdigest()[:16]
        examples.append(
            SftExample(
                example_id=example_id,
                vuln_type=selection.vuln_type,
                code=unit.source,
                label=winner.label,
                explanation=override if override is not None else winner.explanation,
                locations=tuple((loc.line_start, loc.line_end) for loc in winner.locations),
                provenance="human_verified" if override is not None else "llm_selected",
            )
        )
        counts[selection.vuln_type.code] += 1
    stats = {"counts": counts, "reference_counts": dict(REFERENCE_SFT_COUNTS)}
    return examples, stats


# ---------------------------------------------------------------------------
# Desk-scale adaptation analogue: count-based n-gram model

UNK = "<unk>"


@dataclass
class NgramModel:
    order: int
    add_k: float
    vocab: frozenset[str]
    counts: dict[tuple[str, ...], dict[str, int]] = field(repr=False)
    context_totals: dict[tuple[str, ...], int] = field(repr=False)

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK

    def prob(self, context: Sequence[str], token: str) -> float:
        ctx = tuple(self._map(t) for t in context[-(self.order - 1):]) if self.order > 1 else ()
        tok = self._map(token)
        successors = self.counts.get(ctx, {})
        count = successors.get(tok, 0)
        total = self.context_totals.get(ctx, 0)
        denom = total + self.add_k * len(self.vocab)
        if denom == 0.0:
            return 0.0
        return (count + self.add_k) / denom

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "add_k": self.add_k,
            "vocab": sorted(self.vocab),
            "counts": {
                "\x1f".join(ctx): dict(sorted(successors.items()))
                for ctx, successors in sorted(self.counts.items())
            },
        }

    @classmethod
    def from_dict(cls, row: dict) -> "NgramModel":
        counts = {
            tuple(key.split("\x1f")) if key else (): {t: int(c) for t, c in successors.items()}
            for key, successors in row["counts"].items()
        }
        totals = {ctx: sum(successors.values()) for ctx, successors in counts.items()}
        return cls(
            order=int(row["order"]),
            add_k=float(row["add_k"]),
            vocab=frozenset(row["vocab"]),
            counts=counts,
            context_totals=totals,
        )


def train_ngram(corpus: Sequence[Sequence[str]], order: int, add_k: float = 0.0) -> NgramModel:
    """Count-based conditional model P(token | previous order-1 tokens)."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if add_k < 0:
        raise ValueError("add_k must be >= 0")
    if not corpus:
        raise EmptyCorpus("n-gram training corpus is empty")
    vocab = {UNK}
    counts: dict[tuple[str, ...], dict[str, int]] = {}
    totals: dict[tuple[str, ...], int] = {}
    for seq in corpus:
        vocab.update(seq)
        for i in range(order - 1, len(seq)):
            ctx = tuple(seq[i - order + 1 : i])
            tok = seq[i]
            successors = counts.setdefault(ctx, {})
            successors[tok] = successors.get(tok, 0) + 1
            totals[ctx] = totals.get(ctx, 0) + 1
    return NgramModel(order=order, add_k=add_k, vocab=frozenset(vocab), counts=counts, context_totals=totals)


def model_loss(model: NgramModel, tokens: Sequence[str]) -> float:
    """Adaptation loss of a token sequence under the model (positions order..n)."""
    if len(tokens) < model.order:
        raise ValueError(f"sequence shorter than model order {model.order}")
    total = 0.0
    for i in range(model.order - 1, len(tokens)):
        p = model.prob(tokens[max(0, i - model.order + 1) : i], tokens[i])
        if p <= 0.0:
            raise InfiniteLoss(position=i + 1)
        total -= math.log(p)
    return total


def avg_token_loss(model: NgramModel, sequences: Sequence[Sequence[str]]) -> float:
    """Mean per-token loss over all scoreable positions of all sequences."""
    total = 0.0
    positions = 0
    for seq in sequences:
        if len(seq) < model.order:
            continue
        total += model_loss(model, seq)
        positions += len(seq) - model.order + 1
    if positions == 0:
        raise EmptyCorpus("no scoreable positions in evaluation sequences")
    return total / positions


# ---------------------------------------------------------------------------
# Manifests for the external trainer


@dataclass(frozen=True)
class TrainManifest:
    stage: str  # "cpt" | "sft"
    per_device_batch: int
    grad_accum: int
    epochs: int
    learning_rate: float
    schedule: str
    warmup_steps: int
    cutoff_len: int
    save_steps: int
    theta_note: str = "model parameters live in the external trainer; this manifest only pins hyperparameters"

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "per_device_batch": self.per_device_batch,
            "grad_accum": self.grad_accum,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "schedule": self.schedule,
            "warmup_steps": self.warmup_steps,
            "cutoff_len": self.cutoff_len,
            "save_steps": self.save_steps,
            "theta_note": self.theta_note,
        }


_MANIFEST_DEFAULTS = {
    "cpt": dict(per_device_batch=64, grad_accum=16, epochs=2, learning_rate=1e-5,
                schedule="cosine", warmup_steps=0, cutoff_len=2048, save_steps=500),
    "sft": dict(per_device_batch=8, grad_accum=8, epochs=3, learning_rate=1e-5,
                schedule="cosine", warmup_steps=0, cutoff_len=2048, save_steps=50),
}


def emit_train_manifest(stage: str, **overrides) -> TrainManifest:
    if stage not in _MANIFEST_DEFAULTS:
        raise ValueError(f"unknown stage {stage!r}; expected cpt or sft")
    params = dict(_MANIFEST_DEFAULTS[stage])
    unknown = set(overrides) - set(params)
    if unknown:
        raise ValueError(f"unknown manifest fields: {sorted(unknown)}")
    params.update(overrides)
    return TrainManifest(stage=stage, **params)
