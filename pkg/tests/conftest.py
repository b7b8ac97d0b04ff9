"""Shared fixtures: tiny hand-built cohorts and a scripted backend."""
from __future__ import annotations

from datetime import date, datetime

import pytest

from notepheno.corpus import ClinicalDocument, Cohort, Patient, ReferenceLabel
from notepheno.inference import CompletionResponse
from notepheno.prompting import builtin_profiles


class ScriptedBackend:
    """Returns canned responses in order; records every prompt it saw."""

    backend_id = "scripted"

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts = []

    def complete(self, request):
        self.prompts.append(request.prompt)
        if not self.responses:
            raise AssertionError("scripted backend ran out of responses")
        return CompletionResponse(
            text=self.responses.pop(0), latency_ms=0.0, backend_id=self.backend_id
        )


class FailingBackend:
    backend_id = "failing"

    def complete(self, request):
        raise RuntimeError("backend down")


@pytest.fixture
def scripted_backend_cls():
    return ScriptedBackend


@pytest.fixture
def failing_backend_cls():
    return FailingBackend


@pytest.fixture
def profiles():
    return builtin_profiles()


@pytest.fixture
def diabetes_profile(profiles):
    return next(p for p in profiles if p.name == "diabetes")


@pytest.fixture
def ami_profile(profiles):
    return next(p for p in profiles if p.name == "ami")


@pytest.fixture
def hypertension_profile(profiles):
    return next(p for p in profiles if p.name == "hypertension")


def make_cohort(docs, labels=None):
    """Build a cohort from (patient_id, doc_id, doc_type, text) tuples."""
    patients = {}
    documents = []
    for i, (pid, doc_id, doc_type, text) in enumerate(docs):
        if pid not in patients:
            patients[pid] = Patient(pid, date(2015, 3, 1))
        documents.append(
            ClinicalDocument(pid, doc_id, doc_type, datetime(2015, 3, 1, 8 + i), text)
        )
    label_objs = tuple(
        ReferenceLabel(pid, cond, reg, icd) for pid, cond, reg, icd in (labels or [])
    )
    return Cohort(patients=patients, documents=tuple(documents), labels=label_objs)


@pytest.fixture
def small_cohort():
    return make_cohort(
        [
            ("p1", "d1", "DischargeSummary", "Known type 2 diabetes, on metformin. Plan stable."),
            ("p1", "d2", "SocialWork", "Family visited today. Housing discussed."),
            ("p2", "d3", "DischargeSummary", "No acute issues. Glucose - mmol/l random : 6.1 mmol/l."),
            ("p3", "d4", "BloodLog", "Routine draw completed."),
        ],
        labels=[
            ("p1", "diabetes", 1, 1),
            ("p2", "diabetes", 0, 0),
            ("p3", "diabetes", 0, 1),
        ],
    )
