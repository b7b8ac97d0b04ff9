"""Response parsing, clinical threshold rules, and per-patient label merging."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .prompting import ClinicalRule

__all__ = [
    "InferredStatus",
    "LabMeasurement",
    "DocumentVerdict",
    "PatientVerdict",
    "parse_inference_response",
    "parse_extraction_response",
    "apply_clinical_rule",
    "merge_patient",
    "parse_evidence_highlights",
    "combine_chunk_statuses",
]

logger = logging.getLogger(__name__)


class InferredStatus(Enum):
    YES = "Yes"
    NO = "No"
    NO_MENTION = "NoMention"


@dataclass(frozen=True)
class LabMeasurement:
    """One extracted laboratory value, normalized to the analyte's canonical unit."""

    analyte: str
    raw_value: float | None
    raw_unit: str
    normalized_value: float | None = None
    systolic: float | None = None
    diastolic: float | None = None


@dataclass(frozen=True)
class DocumentVerdict:
    patient_id: str
    condition: str
    doc_id: str
    path: str  # inference | extraction
    status: InferredStatus
    measurements: tuple[LabMeasurement, ...] = ()
    evidence_spans: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class PatientVerdict:
    patient_id: str
    condition: str
    label: int
    mode: str  # prompt1 | prompt2 | merged
    contributing: tuple[DocumentVerdict, ...] = ()


# Status scanning is confined to the response head because backends often
# restate the question further down.
_HEAD_CHARS = 200
_NO_MENTION_RE = re.compile(r"\bno mention\b", re.IGNORECASE)
_YES_RE = re.compile(r"\byes\b", re.IGNORECASE)
_NO_RE = re.compile(r"\bno\b", re.IGNORECASE)


def parse_inference_response(text: str) -> InferredStatus:
    """Map free-text inference output onto Yes / No / NoMention.

    Precedence: the exact phrase "no mention" beats a bare "yes" beats a bare
    "no"; an empty or unparseable head is NoMention. "no clear mention" does
    not contain the phrase, so a leading "No," still wins there.
    """
    head = text[:_HEAD_CHARS]
    if _NO_MENTION_RE.search(head):
        return InferredStatus.NO_MENTION
    if _YES_RE.search(head):
        return InferredStatus.YES
    if _NO_RE.search(head):
        return InferredStatus.NO
    return InferredStatus.NO_MENTION


_NUMBER = r"(\d+(?:\.\d+)?)"
_GLUCOSE_RE = re.compile(_NUMBER + r"\s*mmol\s*/\s*l", re.IGNORECASE)
_TROPONIN_RE = re.compile(_NUMBER + r"\s*(ng\s*/\s*m?l)", re.IGNORECASE)
_SYSTOLIC_RE = re.compile(r"systolic[^0-9\n]{0,20}" + _NUMBER, re.IGNORECASE)
_DIASTOLIC_RE = re.compile(r"diastolic[^0-9\n]{0,20}" + _NUMBER, re.IGNORECASE)
_BP_PAIR_RE = re.compile(
    r"(?:blood\s+pressure|(?<!\w)bp(?!\w))[^0-9\n]{0,20}(\d{2,3})\s*/\s*(\d{2,3})",
    re.IGNORECASE,
)

# Plausibility gates; values outside are dropped with a warning because they
# almost always signal unit confusion in the source note.
_GLUCOSE_RANGE = (0.5, 100.0)
_SYSTOLIC_RANGE = (50.0, 300.0)
_DIASTOLIC_RANGE = (20.0, 200.0)
_TROPONIN_RANGE = (0.0, 1e6)


def _plausible(value: float, low: float, high: float, what: str) -> bool:
    if low < value <= high:
        return True
    logger.warning("dropping implausible %s value %s", what, value)
    return False


def parse_extraction_response(text: str, analyte: str) -> list[LabMeasurement]:
    """Pull number+unit pairs for one analyte out of an extraction response.

    Troponin in ng/mL is normalized to ng/L (x1000). Blood-pressure readings
    pair systolic/diastolic cues index-wise and also accept "N/M" adjacent to a
    pressure cue; a missing half is recorded as None.
    """
    if analyte == "glucose":
        out = []
        for match in _GLUCOSE_RE.finditer(text):
            value = float(match.group(1))
            if _plausible(value, *_GLUCOSE_RANGE, "glucose"):
                out.append(
                    LabMeasurement("glucose", value, "mmol/L", normalized_value=value)
                )
        return out

    if analyte == "troponin":
        out = []
        for match in _TROPONIN_RE.finditer(text):
            value = float(match.group(1))
            unit = re.sub(r"\s+", "", match.group(2))
            normalized = value * 1000.0 if unit.lower() == "ng/ml" else value
            if _plausible(normalized, *_TROPONIN_RANGE, "troponin"):
                out.append(
                    LabMeasurement("troponin", value, unit, normalized_value=normalized)
                )
        return out

    if analyte == "blood_pressure":
        systolics = [
            float(m.group(1))
            for m in _SYSTOLIC_RE.finditer(text)
            if _plausible(float(m.group(1)), *_SYSTOLIC_RANGE, "systolic")
        ]
        diastolics = [
            float(m.group(1))
            for m in _DIASTOLIC_RE.finditer(text)
            if _plausible(float(m.group(1)), *_DIASTOLIC_RANGE, "diastolic")
        ]
        out = []
        for i in range(max(len(systolics), len(diastolics))):
            sys_v = systolics[i] if i < len(systolics) else None
            dia_v = diastolics[i] if i < len(diastolics) else None
            out.append(
                LabMeasurement(
                    "blood_pressure", None, "mmHg", systolic=sys_v, diastolic=dia_v
                )
            )
        for match in _BP_PAIR_RE.finditer(text):
            sys_v, dia_v = float(match.group(1)), float(match.group(2))
            if _plausible(sys_v, *_SYSTOLIC_RANGE, "systolic") and _plausible(
                dia_v, *_DIASTOLIC_RANGE, "diastolic"
            ):
                out.append(
                    LabMeasurement(
                        "blood_pressure", None, "mmHg", systolic=sys_v, diastolic=dia_v
                    )
                )
        return out

    raise ValueError(f"unknown analyte {analyte!r}")


def _exceeds(value: float, threshold: float, comparator: str) -> bool:
    return value >= threshold if comparator == ">=" else value > threshold


def apply_clinical_rule(
    measurements: Sequence[LabMeasurement], rule: ClinicalRule
) -> InferredStatus:
    """Turn extracted measurements into a document status under a threshold rule.

    No measurements at all means NoMention. Blood pressure averages the
    document's readings and is positive when mean systolic or mean diastolic
    reaches its threshold; the scalar analytes are positive when any single
    value crosses the cut.
    """
    if not measurements:
        return InferredStatus.NO_MENTION
    for m in measurements:
        if m.analyte != rule.analyte:
            raise ValueError(
                f"measurement analyte {m.analyte!r} does not match rule {rule.analyte!r}"
            )
    if rule.analyte == "blood_pressure":
        systolics = [m.systolic for m in measurements if m.systolic is not None]
        diastolics = [m.diastolic for m in measurements if m.diastolic is not None]
        if not systolics and not diastolics:
            return InferredStatus.NO_MENTION
        sys_hit = bool(systolics) and _exceeds(
            sum(systolics) / len(systolics), rule.systolic_threshold, rule.comparator
        )
        dia_hit = bool(diastolics) and _exceeds(
            sum(diastolics) / len(diastolics), rule.diastolic_threshold, rule.comparator
        )
        return InferredStatus.YES if (sys_hit or dia_hit) else InferredStatus.NO
    values = [m.normalized_value for m in measurements if m.normalized_value is not None]
    if not values:
        return InferredStatus.NO_MENTION
    hit = any(_exceeds(v, rule.threshold, rule.comparator) for v in values)
    return InferredStatus.YES if hit else InferredStatus.NO


_MODE_PATHS = {
    "prompt1": frozenset({"inference"}),
    "prompt2": frozenset({"extraction"}),
    "merged": frozenset({"inference", "extraction"}),
}


def merge_patient(
    verdicts: Sequence[DocumentVerdict], mode: str, patient_id: str | None = None,
    condition: str | None = None,
) -> PatientVerdict:
    """Combine document verdicts into a per-patient binary label.

    The label is 1 iff any considered verdict is Yes; NoMention contributes
    nothing; an empty list (condition-free patient) is a 0. For an empty list
    the patient/condition identifiers must be supplied.
    """
    if mode not in _MODE_PATHS:
        raise ValueError(f"unknown mode {mode!r}")
    if verdicts:
        ids = {(v.patient_id, v.condition) for v in verdicts}
        if len(ids) > 1:
            raise ValueError(f"verdicts span multiple patients/conditions: {sorted(ids)}")
        patient_id, condition = next(iter(ids))
    elif patient_id is None or condition is None:
        raise ValueError("empty verdict list needs explicit patient_id and condition")
    considered = tuple(v for v in verdicts if v.path in _MODE_PATHS[mode])
    label = int(any(v.status is InferredStatus.YES for v in considered))
    return PatientVerdict(
        patient_id=patient_id,
        condition=condition,
        label=label,
        mode=mode,
        contributing=considered,
    )


def combine_chunk_statuses(statuses: Iterable[InferredStatus]) -> InferredStatus:
    """Aggregate chunk verdicts of one document: any Yes wins, NoMention only
    when every chunk says so."""
    statuses = list(statuses)
    if not statuses:
        return InferredStatus.NO_MENTION
    if any(s is InferredStatus.YES for s in statuses):
        return InferredStatus.YES
    if all(s is InferredStatus.NO_MENTION for s in statuses):
        return InferredStatus.NO_MENTION
    return InferredStatus.NO


_QUOTE_RE = re.compile(r"[\"“”]([^\"“”\n]{3,}?)[\"“”]|'([^'\n]{3,}?)'")


def parse_evidence_highlights(response: str, source: str) -> list[tuple[int, int]]:
    """Resolve quoted fragments of an evidence response to source offsets.

    Fragments that do not occur verbatim (case-insensitive) in the source are
    dropped: hallucinated evidence never produces a span.
    """
    spans: list[tuple[int, int]] = []
    lowered = source.lower()
    seen: set[tuple[int, int]] = set()
    for match in _QUOTE_RE.finditer(response):
        fragment = (match.group(1) or match.group(2) or "").strip()
        if not fragment:
            continue
        idx = lowered.find(fragment.lower())
        if idx < 0:
            continue
        span = (idx, idx + len(fragment))
        if span not in seen:
            seen.add(span)
            spans.append(span)
    return spans
