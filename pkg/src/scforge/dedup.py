"""Near-duplicate removal over contract units via Jaccard similarity.

Units are deduplicated within filename groups: a greedy scan in ascending
unit_id order keeps a unit only if its token-set Jaccard index against every
previously kept unit stays at or below the threshold (default 0.9). The
MinHash mode prefilters candidate pairs by signature estimate and confirms
with the exact index, so both modes produce the same report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from scforge import kernels
from scforge.corpus import ContractUnit, group_by_filename


class DedupError(Exception):
    pass


class EmptySet(DedupError):
    pass


class MixedFilenames(DedupError):
    pass


@dataclass(frozen=True)
class SimilarityConfig:
    threshold: float = 0.9
    mode: str = "exact"  # "exact" | "minhash_prefilter"
    minhash_hashes: int = 256
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.mode not in ("exact", "minhash_prefilter"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.minhash_hashes < 16:
            raise ValueError("minhash_hashes must be >= 16")


@dataclass(frozen=True)
class Discard:
    unit_id: str
    duplicate_of: str
    similarity: float


@dataclass
class DedupReport:
    kept: list[str] = field(default_factory=list)
    discarded: list[Discard] = field(default_factory=list)
    groups_processed: int = 0

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "discarded": [
                {"unit_id": d.unit_id, "duplicate_of": d.duplicate_of, "similarity": d.similarity}
                for d in self.discarded
            ],
            "groups_processed": self.groups_processed,
        }


def jaccard_index(a: Iterable[str], b: Iterable[str]) -> float:
    """|a ∩ b| / |a ∪ b| over lexeme sets; 1.0 when both sets are empty."""
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def minhash_signature(s: Iterable[str], cfg: SimilarityConfig) -> np.ndarray:
    """Deterministic uint64 MinHash signature of length cfg.minhash_hashes."""
    lexemes = set(s)
    if not lexemes:
        raise EmptySet("cannot sign an empty token set")
    keys = kernels.derive_keys(cfg.seed, cfg.minhash_hashes)
    return kernels.minhash_from_hashes(kernels.encode_token_set(lexemes), keys)


def estimate_from_signatures(sig_a: np.ndarray, sig_b: np.ndarray) -> float:
    """Fraction of matching signature positions; estimates the Jaccard index."""
    if sig_a.shape != sig_b.shape:
        raise ValueError("signature lengths differ")
    return float(np.count_nonzero(sig_a == sig_b)) / sig_a.size


def dedup_group(units: Sequence[ContractUnit], cfg: SimilarityConfig) -> DedupReport:
    """Greedy keep/discard over one filename group, in ascending unit_id order."""
    filenames = {u.filename for u in units}
    if len(filenames) > 1:
        raise MixedFilenames(f"group mixes filenames: {sorted(filenames)}")

    ordered = sorted(range(len(units)), key=lambda i: (units[i].unit_id, i))
    encoded = [kernels.encode_token_set(units[i].token_set) for i in ordered]
    use_minhash = cfg.mode == "minhash_prefilter"
    if use_minhash:
        keys = kernels.derive_keys(cfg.seed, cfg.minhash_hashes)
        signatures = [
            kernels.minhash_from_hashes(enc, keys) if enc.size else None for enc in encoded
        ]
    margin = cfg.threshold - 0.1

    report = DedupReport(groups_processed=1)
    kept_positions: list[int] = []
    for pos, idx in enumerate(ordered):
        unit = units[idx]
        duplicate_of: tuple[str, float] | None = None
        for kept_pos in kept_positions:
            if use_minhash and signatures[pos] is not None and signatures[kept_pos] is not None:
                if estimate_from_signatures(signatures[pos], signatures[kept_pos]) < margin:
                    continue
            similarity = kernels.jaccard_sorted(encoded[pos], encoded[kept_pos])
            if similarity > cfg.threshold:
                duplicate_of = (units[ordered[kept_pos]].unit_id, similarity)
                break
        if duplicate_of is None:
            kept_positions.append(pos)
            report.kept.append(unit.unit_id)
        else:
            report.discarded.append(Discard(unit.unit_id, duplicate_of[0], duplicate_of[1]))
    return report


def dedup_corpus(
    units: Sequence[ContractUnit], cfg: SimilarityConfig
) -> tuple[list[ContractUnit], DedupReport, dict[str, DedupReport]]:
    """Dedup every filename group; returns kept units in input order."""
    groups = group_by_filename(list(units))
    per_group: dict[str, DedupReport] = {}
    merged = DedupReport()
    kept_ids: set[str] = set()
    for filename in sorted(groups):
        group_report = dedup_group(groups[filename], cfg)
        per_group[filename] = group_report
        merged.kept.extend(group_report.kept)
        merged.discarded.extend(group_report.discarded)
        merged.groups_processed += 1
        kept_ids.update(group_report.kept)

    kept_units = []
    seen: set[str] = set()
    for unit in units:
        if unit.unit_id in kept_ids and unit.unit_id not in seen:
            kept_units.append(unit)
            seen.add(unit.unit_id)
    return kept_units, merged, per_group


def write_report(
    path: str | Path, cfg: SimilarityConfig, merged: DedupReport, per_group: dict[str, DedupReport]
) -> None:
    payload = {
        "threshold": cfg.threshold,
        "mode": cfg.mode,
        "minhash_hashes": cfg.minhash_hashes,
        "seed": cfg.seed,
        "report": merged.to_dict(),
        "per_group": {name: rep.to_dict() for name, rep in sorted(per_group.items())},
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
