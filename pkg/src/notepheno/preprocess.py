"""Document-type relevance profiling, percentile filtering, and keyword consolidation."""
from __future__ import annotations

import math
import random
import re
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Collection, Iterable, Mapping

from .adjudication import InferredStatus
from .corpus import ClinicalDocument, Cohort
from .prompting import ConditionProfile

__all__ = [
    "DocTypeProfile",
    "FilterPlan",
    "SentenceProvenance",
    "MergedDocument",
    "ConsolidatedCorpus",
    "ConsolidationStats",
    "sentence_spans",
    "keyword_regex",
    "sample_document_types",
    "compute_information_relevance",
    "filter_document_types",
    "consolidate",
    "retention_report",
    "resolve_percentile",
]


@dataclass(frozen=True)
class DocTypeProfile:
    """Relevance profile of one document type for one condition."""

    doc_type: str
    sampled_count: int
    positive_count: int

    def __post_init__(self) -> None:
        if not 0 <= self.positive_count <= self.sampled_count:
            raise ValueError("positive_count must lie in [0, sampled_count]")

    @property
    def ir(self) -> float:
        """Fraction of sampled records judged positive. Zero for empty samples."""
        if self.sampled_count == 0:
            return 0.0
        return self.positive_count / self.sampled_count


@dataclass(frozen=True)
class FilterPlan:
    condition: str
    percentile: float
    threshold_value: float
    kept_types: frozenset[str]


@dataclass(frozen=True)
class SentenceProvenance:
    doc_id: str
    start: int
    end: int


@dataclass(frozen=True)
class MergedDocument:
    patient_id: str
    condition: str
    text: str
    provenance: tuple[SentenceProvenance, ...]
    first_timestamp: datetime


@dataclass(frozen=True)
class ConsolidatedCorpus:
    """Per-patient merged keyword sentences plus the set of condition-free patients."""

    condition: str
    merged: Mapping[str, MergedDocument]
    condition_free: frozenset[str]


@dataclass(frozen=True)
class ConsolidationStats:
    words_fraction_remaining: float
    positive_retention: float | None
    kept_type_count: int


# Sentence boundaries: '.', '!' or '?' followed by whitespace or end of text,
# or any newline. No abbreviation handling; clinical notes are too irregular
# for it to pay off and the simple rule is auditable.
_BOUNDARY = re.compile(r"[.!?](?=\s|$)|\n")


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Split text into consecutive spans that concatenate back to the input.

    Trailing whitespace after a boundary is absorbed into the preceding span so
    the spans tile the text exactly.
    """
    spans: list[tuple[int, int]] = []
    start = 0
    for match in _BOUNDARY.finditer(text):
        end = match.end()
        while end < len(text) and text[end].isspace():
            end += 1
        if end > start:
            spans.append((start, end))
        start = end
    if start < len(text):
        spans.append((start, len(text)))
    return spans


def keyword_regex(keywords: Iterable[str]) -> re.Pattern:
    """Case-insensitive matcher: word-bounded single tokens, contiguous phrases.

    Boundaries are non-word lookarounds so "mi" never fires inside "family",
    while hyphenated keywords like "glp-1" still match as written.
    """
    parts = []
    for keyword in sorted(set(keywords), key=len, reverse=True):
        escaped = re.escape(keyword).replace(r"\ ", r"\s+").replace(" ", r"\s+")
        parts.append(rf"(?<!\w){escaped}(?!\w)")
    return re.compile("|".join(parts), re.IGNORECASE)


def sample_document_types(
    cohort: Cohort, m: int, seed: int
) -> dict[str, list[ClinicalDocument]]:
    """Sample up to m documents per document type, uniformly without replacement."""
    if m < 1:
        raise ValueError("m must be >= 1")
    by_type: dict[str, list[ClinicalDocument]] = defaultdict(list)
    for doc in sorted(cohort.documents, key=lambda d: d.doc_id):
        by_type[doc.doc_type].append(doc)
    samples: dict[str, list[ClinicalDocument]] = {}
    for doc_type in sorted(by_type):
        docs = by_type[doc_type]
        rng = random.Random(f"{seed}:{doc_type}")
        picked = docs if len(docs) <= m else rng.sample(docs, m)
        samples[doc_type] = sorted(picked, key=lambda d: d.doc_id)
    return samples


def compute_information_relevance(
    samples: Mapping[str, list[ClinicalDocument]],
    verdicts: Mapping[str, InferredStatus],
) -> list[DocTypeProfile]:
    """Relevance per document type from per-document inference verdicts.

    The denominator is the actual sampled count, so short types are not
    penalized for having fewer than m records.
    """
    profiles = []
    for doc_type in sorted(samples):
        docs = samples[doc_type]
        positives = 0
        for doc in docs:
            if doc.doc_id not in verdicts:
                raise ValueError(f"missing verdict for sampled document {doc.doc_id!r}")
            if verdicts[doc.doc_id] is InferredStatus.YES:
                positives += 1
        profiles.append(DocTypeProfile(doc_type, len(docs), positives))
    return profiles


def resolve_percentile(label) -> float:
    """Map the CLI spelling of a threshold level ('0', 'q1', 'q2', or a number)."""
    if isinstance(label, (int, float)):
        value = float(label)
    else:
        text = str(label).strip().lower()
        if text == "q1":
            value = 25.0
        elif text == "q2":
            value = 50.0
        else:
            value = float(text)
    if not 0.0 <= value <= 100.0:
        raise ValueError(f"percentile must be in [0, 100], got {label!r}")
    return value


def filter_document_types(
    profiles: list[DocTypeProfile], percentile, condition: str = ""
) -> FilterPlan:
    """Keep document types whose relevance strictly exceeds the percentile cut.

    The threshold is the nearest-rank percentile over all per-type relevance
    values, zeros included; percentile 0 degenerates to "keep anything above
    zero".
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    p = resolve_percentile(percentile)
    irs = sorted(profile.ir for profile in profiles)
    rank = math.ceil(p / 100.0 * len(irs))
    threshold = 0.0 if rank < 1 else irs[rank - 1]
    kept = frozenset(profile.doc_type for profile in profiles if profile.ir > threshold)
    return FilterPlan(
        condition=condition, percentile=p, threshold_value=threshold, kept_types=kept
    )


def consolidate(
    cohort: Cohort, plan: FilterPlan, profile: ConditionProfile
) -> tuple[ConsolidatedCorpus, ConsolidationStats]:
    """Extract keyword sentences from kept-type documents into one merged
    document per patient, ordered by source timestamp (ties by doc_id).

    Patients with no kept-type documents at all are recorded as condition-free;
    they receive a negative label downstream without any inference.
    """
    pattern = keyword_regex(profile.keywords)
    hits: dict[str, list[tuple[datetime, str, int, str]]] = defaultdict(list)
    patients_with_kept_docs: set[str] = set()
    words_before = 0

    for doc in cohort.documents:
        words_before += len(doc.text.split())
        if doc.doc_type not in plan.kept_types:
            continue
        patients_with_kept_docs.add(doc.patient_id)
        for start, end in sentence_spans(doc.text):
            fragment = doc.text[start:end]
            core = fragment.strip()
            if not core or not pattern.search(core):
                continue
            lead = len(fragment) - len(fragment.lstrip())
            hits[doc.patient_id].append((doc.timestamp, doc.doc_id, start + lead, core))

    merged: dict[str, MergedDocument] = {}
    words_after = 0
    for patient_id in sorted(hits):
        entries = sorted(hits[patient_id])
        text = " ".join(core for _, _, _, core in entries)
        provenance = tuple(
            SentenceProvenance(doc_id, offset, offset + len(core))
            for _, doc_id, offset, core in entries
        )
        merged[patient_id] = MergedDocument(
            patient_id=patient_id,
            condition=profile.name,
            text=text,
            provenance=provenance,
            first_timestamp=entries[0][0],
        )
        words_after += len(text.split())

    condition_free = frozenset(cohort.patients) - patients_with_kept_docs
    stats = ConsolidationStats(
        words_fraction_remaining=(words_after / words_before) if words_before else 1.0,
        positive_retention=None,
        kept_type_count=len(plan.kept_types),
    )
    corpus = ConsolidatedCorpus(
        condition=profile.name, merged=merged, condition_free=condition_free
    )
    return corpus, stats


def retention_report(
    before: Cohort,
    positives: Collection[str],
    after: ConsolidatedCorpus,
    kept_type_count: int,
) -> ConsolidationStats:
    """Words remaining plus the fraction of positive patients still holding text.

    With zero positives the retention is undefined and reported as None, never
    coerced to a number.
    """
    words_before = sum(len(doc.text.split()) for doc in before.documents)
    words_after = sum(len(m.text.split()) for m in after.merged.values())
    retained = sum(1 for pid in positives if pid in after.merged)
    return ConsolidationStats(
        words_fraction_remaining=(words_after / words_before) if words_before else 1.0,
        positive_retention=(retained / len(positives)) if positives else None,
        kept_type_count=kept_type_count,
    )
