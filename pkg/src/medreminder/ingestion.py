"""Medication loading paths: webform auto-load, in-app manual add, and the
scan submission queue.

There is no OCR: a scanned prescription waits in a human transcription
queue until someone applies webform semantics to it. Payload application
is all-or-nothing; a rejected payload stages no events at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time

from . import wire
from .domain import (
    DoseSchedule,
    Medication,
    MedicationForm,
    MedicationSource,
    MedicationStatus,
    ScanStatus,
    parse_days,
    validate_medication,
    validate_schedule,
)
from .escalation import EscalationEngine
from .store import ScanSubmission, Store


class IngestionError(Exception):
    """Carries per-entry diagnostics; nothing was persisted."""

    def __init__(self, diagnostics: dict[int, list[str]]):
        lines = "; ".join(
            f"entry {i}: {', '.join(problems)}" for i, problems in sorted(diagnostics.items())
        )
        super().__init__(lines or "invalid payload")
        self.diagnostics = diagnostics


class ScanStateError(Exception):
    pass


@dataclass(frozen=True)
class WebformEntry:
    name: str
    strength: str
    form: MedicationForm
    times_of_day: tuple[time, ...]
    start_date: date
    days: tuple[int, ...] | None = None
    end_date: date | None = None
    prescriber: str | None = None


@dataclass(frozen=True)
class WebformPayload:
    patient_id: str
    entries: tuple[WebformEntry, ...]


def parse_entry(raw: dict) -> WebformEntry:
    """Shape-level parse; semantic validation happens against the mapped
    Medication/DoseSchedule invariants."""
    return WebformEntry(
        name=str(raw.get("name", "")),
        strength=str(raw.get("strength", "")),
        form=MedicationForm(str(raw.get("form", "OTHER")).upper()),
        times_of_day=tuple(wire.decode_time(t) for t in raw.get("times_of_day", ())),
        days=parse_days(raw.get("days")),
        start_date=date.fromisoformat(raw["start_date"]),
        end_date=(
            date.fromisoformat(raw["end_date"]) if raw.get("end_date") else None
        ),
        prescriber=raw.get("prescriber"),
    )


def parse_webform_payload(raw: dict) -> WebformPayload:
    entries = raw.get("entries", ())
    if not isinstance(entries, (list, tuple)):
        raise ValueError("entries must be a list")
    return WebformPayload(
        patient_id=str(raw["patient_id"]),
        entries=tuple(parse_entry(e) for e in entries),
    )


def _entry_key(patient_id: str, name: str, strength: str, times: tuple[time, ...]):
    return (patient_id, name.strip().lower(), strength.strip(), times)


def _build_entry(
    medication_id: str,
    schedule_id: str,
    patient_id: str,
    entry: WebformEntry,
    source: MedicationSource,
) -> tuple[Medication, DoseSchedule]:
    med = Medication(
        medication_id=medication_id,
        patient_id=patient_id,
        name=entry.name,
        strength=entry.strength,
        form=entry.form,
        source=source,
        prescriber=entry.prescriber,
    )
    schedule = DoseSchedule(
        schedule_id=schedule_id,
        medication_id=med.medication_id,
        times_of_day=entry.times_of_day,
        days=entry.days,
        start_date=entry.start_date,
        end_date=entry.end_date,
    )
    return med, schedule


def _probe_entry(patient_id, entry, source):
    return _build_entry("probe", "probe", patient_id, entry, source)


def _map_entry(
    store: Store, patient_id: str, entry: WebformEntry, source: MedicationSource
) -> tuple[Medication, DoseSchedule]:
    return _build_entry(
        store.next_id("m"), store.next_id("s"), patient_id, entry, source
    )


def _existing_keys(store: Store, patient_id: str) -> set:
    keys = set()
    for schedule_id in store.repo.schedules_by_patient.get(patient_id, ()):
        schedule = store.repo.schedules[schedule_id]
        med = store.repo.medications[schedule.medication_id]
        if med.status is MedicationStatus.ACTIVE:
            keys.add(_entry_key(patient_id, med.name, med.strength, schedule.times_of_day))
    return keys


def load_webform(
    store: Store,
    engine: EscalationEngine,
    payload: WebformPayload,
    now: datetime,
    source: MedicationSource = MedicationSource.WEBFORM,
    _defer_commit: bool = False,
) -> list[tuple[Medication, DoseSchedule]]:
    """Persist one medication + schedule per entry, atomically.

    Any invalid or duplicate entry rejects the whole payload with per-entry
    diagnostics and leaves the store untouched.
    """
    if payload.patient_id not in store.repo.profiles:
        raise IngestionError({-1: [f"unknown patient {payload.patient_id!r}"]})
    if not payload.entries:
        raise IngestionError({-1: ["entries is empty"]})

    # Validate every entry before touching the store (all-or-nothing);
    # probe mappings use throwaway ids so a rejected payload has no effect.
    diagnostics: dict[int, list[str]] = {}
    seen_keys = _existing_keys(store, payload.patient_id)
    for index, entry in enumerate(payload.entries):
        med, schedule = _probe_entry(payload.patient_id, entry, source)
        problems = list(validate_medication(med).problems)
        problems += validate_schedule(schedule).problems
        key = _entry_key(payload.patient_id, entry.name, entry.strength, entry.times_of_day)
        if key in seen_keys:
            problems.append("duplicate of an already loaded medication")
        seen_keys.add(key)
        if problems:
            diagnostics[index] = problems
    if diagnostics:
        raise IngestionError(diagnostics)

    mapped = [
        _map_entry(store, payload.patient_id, entry, source)
        for entry in payload.entries
    ]

    store.stage(
        "meds_loaded",
        {
            "source": source.value,
            "at": wire.encode_dt(now),
            "items": [
                {
                    "medication": wire.encode_medication(med),
                    "schedule": wire.encode_schedule(schedule),
                }
                for med, schedule in mapped
            ],
        },
    )
    engine.materialize_on_ingest(payload.patient_id, now)
    if not _defer_commit:
        store.commit()
    return mapped


def add_manual(
    store: Store,
    engine: EscalationEngine,
    patient_id: str,
    entry: WebformEntry,
    now: datetime,
) -> tuple[Medication, DoseSchedule]:
    """Single-entry add from the in-app screen; source MANUAL."""
    payload = WebformPayload(patient_id=patient_id, entries=(entry,))
    return load_webform(store, engine, payload, now, source=MedicationSource.MANUAL)[0]


def submit_scan(
    store: Store, patient_id: str, image_ref: str, now: datetime
) -> ScanSubmission:
    if patient_id not in store.repo.profiles:
        raise IngestionError({-1: [f"unknown patient {patient_id!r}"]})
    if not image_ref:
        raise IngestionError({-1: ["image is empty"]})
    submission_id = store.next_id("scan")
    store.stage(
        "scan_submitted",
        {
            "submission_id": submission_id,
            "patient_id": patient_id,
            "image_ref": image_ref,
            "at": wire.encode_dt(now),
        },
    )
    store.commit()
    return store.repo.scans[submission_id]


def transcribe_scan(
    store: Store,
    engine: EscalationEngine,
    submission_id: str,
    payload: WebformPayload,
    now: datetime,
) -> ScanSubmission:
    """Apply webform semantics to a pending scan; source recorded as SCAN.

    An invalid transcription raises and leaves the submission PENDING.
    """
    submission = store.repo.scans.get(submission_id)
    if submission is None:
        raise ScanStateError(f"unknown submission {submission_id!r}")
    if submission.status is not ScanStatus.PENDING:
        raise ScanStateError(f"submission is {submission.status.value}, not PENDING")
    if payload.patient_id != submission.patient_id:
        raise ScanStateError("payload patient does not match the submission")
    load_webform(
        store, engine, payload, now, source=MedicationSource.SCAN, _defer_commit=True
    )
    store.stage(
        "scan_transcribed",
        {
            "submission_id": submission_id,
            "payload": {
                "patient_id": payload.patient_id,
                "entries": len(payload.entries),
            },
        },
    )
    store.commit()
    return store.repo.scans[submission_id]


def reject_scan(store: Store, submission_id: str) -> ScanSubmission:
    submission = store.repo.scans.get(submission_id)
    if submission is None:
        raise ScanStateError(f"unknown submission {submission_id!r}")
    if submission.status is not ScanStatus.PENDING:
        raise ScanStateError(f"submission is {submission.status.value}, not PENDING")
    store.stage("scan_rejected", {"submission_id": submission_id})
    store.commit()
    return store.repo.scans[submission_id]
