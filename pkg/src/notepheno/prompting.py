"""Per-condition profiles (keywords, prompt templates, clinical rules) and prompt rendering."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

__all__ = [
    "ClinicalRule",
    "ConditionProfile",
    "RenderedPrompt",
    "EVIDENCE_SUFFIX",
    "builtin_profiles",
    "render_prompt",
    "load_profiles",
]

PLACEHOLDER = "{text}"

# Appended to the inference template when an explainability prompt is requested.
EVIDENCE_SUFFIX = " Highlight all the original text that supports your judgement."

_ANALYTES = ("glucose", "blood_pressure", "troponin")


@dataclass(frozen=True)
class ClinicalRule:
    """Threshold rule applied to extracted laboratory values.

    For blood pressure the systolic/diastolic thresholds combine with OR
    semantics; for the scalar analytes a single threshold and comparator apply.
    """

    analyte: str
    comparator: str = ">="
    threshold: float | None = None
    unit: str = ""
    systolic_threshold: float | None = None
    diastolic_threshold: float | None = None

    def __post_init__(self) -> None:
        if self.analyte not in _ANALYTES:
            raise ValueError(f"unknown analyte {self.analyte!r}")
        if self.comparator not in (">=", ">"):
            raise ValueError(f"comparator must be '>=' or '>', got {self.comparator!r}")
        if self.analyte == "blood_pressure":
            if not self.systolic_threshold or not self.diastolic_threshold:
                raise ValueError("blood_pressure rule needs systolic and diastolic thresholds")
            if self.systolic_threshold <= 0 or self.diastolic_threshold <= 0:
                raise ValueError("thresholds must be positive")
        else:
            if self.threshold is None or self.threshold <= 0:
                raise ValueError("threshold must be positive")


@dataclass(frozen=True)
class ConditionProfile:
    """Everything the pipeline needs to know about one target condition."""

    name: str
    keywords: tuple[str, ...]
    inference_template: str
    extraction_template: str
    rule: ClinicalRule
    abbreviation_hints: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.keywords:
            raise ValueError(f"profile {self.name!r} has no keywords")
        for template in (self.inference_template, self.extraction_template):
            if template.count(PLACEHOLDER) != 1:
                raise ValueError(
                    f"profile {self.name!r}: template must contain {PLACEHOLDER!r} exactly once"
                )


@dataclass(frozen=True)
class RenderedPrompt:
    condition: str
    kind: str  # inference | extraction | evidence
    text: str
    source: tuple[str, int] | None = None  # (patient_id, chunk index)


_AMI_KEYWORDS = (
    "age",
    "weight",
    "wt",
    "myocardial infarction",
    "myocardial",
    "heart",
    "mi",
    "acute coronary",
    "coronary",
    "ischemic",
    "cardiac",
    "myocardium",
    "infarct",
    "ecg",
    "troponin",
    "artery",
    "pci",
    "stemi",
    "nstemi",
    "cardiogenic",
    "aneurysm",
    "medication",
)

_DIABETES_KEYWORDS = (
    "age",
    "weight",
    "wt",
    "non-alcoholic fatty liver",
    "dyslipidemia",
    "sugar",
    "hypertension",
    "blood pressure",
    "glycemia",
    "glucose",
    "fasting",
    "fpg",
    "ogtt",
    "hba1c",
    "a1c",
    "mmtt",
    "hemoglobin",
    "insulin",
    "diabetes",
    "diabetic",
    "dm",
    "tolerance",
    "inhibitor",
    "peptide",
    "tzds",
    "glp-1",
    "inhibitors",
    "dpp-4",
    "metformin",
    "medication",
)

_HYPERTENSION_KEYWORDS = (
    "age",
    "weight",
    "wt",
    "hypertension",
    "blood pressure",
    "systolic",
    "diastolic",
    "htn",
    "dash",
    "hypertensive",
    "medication",
)

_AMI_INFERENCE = (
    "Analyze the clinical text: '{text}', and answer yes or no if you identify "
    "acute myocardial infarction. Be careful with some abbreviations for acute "
    "myocardial infarction, including ami, mi, stemi, and non-stemi."
)
_AMI_EXTRACTION = "Find all the key-value pairs of troponin level from the given text: {text}."

_DIABETES_INFERENCE = (
    "Analyze the clinical text: '{text}', answer yes or no if you identify "
    "diabetes. Look for relevant information, including elevated blood glucose "
    "levels, mentions of diabetes diagnosis, or references to anti-diabetic "
    "medications."
)
_DIABETES_EXTRACTION = (
    "Find all the key-value pairs of blood sugar/glucose levels from the given text: {text}."
)

_HYPERTENSION_INFERENCE = (
    "Analyze the clinical text: '{text}', answer yes or no if you identify "
    "hypertension (high blood pressure). Look for relevant information, "
    "including high blood pressure readings or symptoms, mentions of "
    "hypertension diagnosis, or references to antihypertensive medications."
)
_HYPERTENSION_EXTRACTION = (
    "Find all the key-value pairs of blood pressure from the given text: {text}."
)


def builtin_profiles(*, glucose_comparator: str = ">=") -> list[ConditionProfile]:
    """The three shipped condition profiles.

    The glucose comparator defaults to the guideline's inclusive bound but is
    switchable because clinical sources word the cut both ways.
    """
    return [
        ConditionProfile(
            name="ami",
            keywords=_AMI_KEYWORDS,
            inference_template=_AMI_INFERENCE,
            extraction_template=_AMI_EXTRACTION,
            abbreviation_hints=("ami", "mi", "stemi", "non-stemi"),
            rule=ClinicalRule(analyte="troponin", comparator=">", threshold=14.0, unit="ng/L"),
        ),
        ConditionProfile(
            name="diabetes",
            keywords=_DIABETES_KEYWORDS,
            inference_template=_DIABETES_INFERENCE,
            extraction_template=_DIABETES_EXTRACTION,
            rule=ClinicalRule(
                analyte="glucose", comparator=glucose_comparator, threshold=11.1, unit="mmol/L"
            ),
        ),
        ConditionProfile(
            name="hypertension",
            keywords=_HYPERTENSION_KEYWORDS,
            inference_template=_HYPERTENSION_INFERENCE,
            extraction_template=_HYPERTENSION_EXTRACTION,
            rule=ClinicalRule(
                analyte="blood_pressure",
                comparator=">=",
                unit="mmHg",
                systolic_threshold=140.0,
                diastolic_threshold=90.0,
            ),
        ),
    ]


def render_prompt(
    profile: ConditionProfile,
    kind: str,
    text: str,
    source: tuple[str, int] | None = None,
) -> RenderedPrompt:
    """Substitute note text into the profile's template for the given kind.

    The placeholder is substituted exactly once, so braces inside the note text
    pass through untouched. The evidence kind renders the inference template
    plus a fixed highlight instruction.
    """
    if kind not in ("inference", "extraction", "evidence"):
        raise ValueError(f"unknown prompt kind {kind!r}")
    if not text:
        raise ValueError("cannot render a prompt from empty text")
    template = (
        profile.extraction_template if kind == "extraction" else profile.inference_template
    )
    rendered = template.replace(PLACEHOLDER, text, 1)
    if kind == "evidence":
        rendered += EVIDENCE_SUFFIX
    return RenderedPrompt(condition=profile.name, kind=kind, text=rendered, source=source)


def _rule_from_config(raw: dict) -> ClinicalRule:
    return ClinicalRule(
        analyte=raw["analyte"],
        comparator=raw.get("comparator", ">="),
        threshold=raw.get("threshold"),
        unit=raw.get("unit", ""),
        systolic_threshold=raw.get("systolic_threshold"),
        diastolic_threshold=raw.get("diastolic_threshold"),
    )


def load_profiles(path) -> list[ConditionProfile]:
    """Load condition profiles from a YAML config, overriding the built-ins.

    The file holds a top-level ``profiles`` list; each entry mirrors the
    ConditionProfile fields. Unlisted conditions are not implied.
    """
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "profiles" not in raw:
        raise ValueError(f"{path}: expected a top-level 'profiles' list")
    profiles = []
    for entry in raw["profiles"]:
        profiles.append(
            ConditionProfile(
                name=entry["name"],
                keywords=tuple(entry["keywords"]),
                inference_template=entry["inference_template"],
                extraction_template=entry["extraction_template"],
                abbreviation_hints=tuple(entry.get("abbreviation_hints", ())),
                rule=_rule_from_config(entry["rule"]),
            )
        )
    if not profiles:
        raise ValueError(f"{path}: no profiles defined")
    return profiles
