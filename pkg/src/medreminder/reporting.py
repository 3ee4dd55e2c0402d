"""Intake history, stopped-medication flagging, and the provider report.

The adherence rate excludes still-pending events from its denominator so
in-progress days do not depress it; cancelled events of stopped
medications were never owed and appear in no count.
"""

from __future__ import annotations

from dataclasses import replace
from datetime import date, datetime
from fractions import Fraction

from . import scheduler, wire
from .domain import (
    AdherenceReport,
    DoseState,
    Flag,
    IntakeClassification,
    Medication,
    MedicationRow,
    MedicationStatus,
    days_label,
)
from .store import Store


class ReportingError(Exception):
    pass


class AlreadyStoppedError(ReportingError):
    def __init__(self, medication: Medication):
        super().__init__(f"medication {medication.medication_id} is already stopped")
        self.medication = medication


def flag_stopped(
    store: Store, medication_id: str, reason: str, at: datetime
) -> Medication:
    """Mark a medication discontinued and cancel its future dose events.

    Past events, including doses already escalating today, run their
    course; only events still ahead of the stop instant disappear.
    """
    med = store.repo.medications.get(medication_id)
    if med is None:
        raise ReportingError(f"unknown medication {medication_id!r}")
    if med.status is not MedicationStatus.ACTIVE:
        raise AlreadyStoppedError(med)
    schedule_ids = {
        sid
        for sid in store.repo.schedules_by_patient.get(med.patient_id, ())
        if store.repo.schedules[sid].medication_id == medication_id
    }
    cancelled = sorted(
        dose_id
        for dose_id in store.repo.pending
        if store.repo.dose_events[dose_id].schedule_id in schedule_ids
        and store.repo.dose_events[dose_id].due_at > at
        and store.repo.dose_events[dose_id].state is DoseState.SCHEDULED
    )
    store.stage(
        "medication_stopped",
        {
            "medication_id": medication_id,
            "reason": reason,
            "at": wire.encode_dt(at),
            "cancelled_dose_ids": cancelled,
        },
    )
    store.commit()
    return store.repo.medications[medication_id]


def build_report(
    store: Store, patient_id: str, range_start: date, range_end: date
) -> AdherenceReport:
    """Per-medication counts over events due inside the local-date range."""
    repo = store.repo
    if patient_id not in repo.profiles:
        raise ReportingError(f"unknown patient {patient_id!r}")
    if range_end < range_start:
        raise ReportingError("empty report range")
    tz = repo.patient_tz(patient_id)

    events_by_schedule: dict[str, list] = {}
    for dose_id, event in repo.dose_events.items():
        if repo.dose_patient.get(dose_id) != patient_id:
            continue
        if range_start <= scheduler.local_date_of(event.due_at, tz) <= range_end:
            events_by_schedule.setdefault(event.schedule_id, []).append(event)

    meds = sorted(
        (m for m in repo.medications.values() if m.patient_id == patient_id),
        key=lambda m: (m.name.lower(), m.medication_id),
    )
    rows = []
    on_time_total = late_total = missed_total = 0
    for med in meds:
        on_time = late = missed = pending = 0
        times: tuple = ()
        days = None
        for sid in repo.schedules_by_patient.get(patient_id, ()):
            schedule = repo.schedules[sid]
            if schedule.medication_id != med.medication_id:
                continue
            times = schedule.times_of_day
            days = schedule.days
            for event in events_by_schedule.get(sid, ()):
                if event.state is DoseState.ACKNOWLEDGED:
                    record = repo.intakes[event.dose_event_id]
                    if record.classification is IntakeClassification.ON_TIME:
                        on_time += 1
                    else:
                        late += 1
                elif event.state is DoseState.MISSED:
                    missed += 1
                else:
                    pending += 1
        rows.append(
            MedicationRow(
                medication=med,
                times_of_day=times,
                days=days,
                on_time=on_time,
                late=late,
                missed=missed,
                pending=pending,
            )
        )
        on_time_total += on_time
        late_total += late
        missed_total += missed

    taken = on_time_total + late_total
    denominator = taken + missed_total
    rate = Fraction(taken, denominator) if denominator else Fraction(0)

    stopped = tuple(m for m in meds if m.status is MedicationStatus.STOPPED)
    flags = tuple(
        sorted(
            (
                f
                for f in repo.flags
                if f.patient_id == patient_id
                and range_start <= scheduler.local_date_of(f.raised_at, tz) <= range_end
            ),
            key=lambda f: (f.raised_at, f.kind.value, f.flag_id),
        )
    )
    return AdherenceReport(
        patient_id=patient_id,
        range_start=range_start,
        range_end=range_end,
        rows=tuple(rows),
        stopped_medications=stopped,
        flags=flags,
        adherence_rate=rate,
    )


def export_provider_report(
    store: Store, patient_id: str, range_start: date, range_end: date
) -> str:
    """Deterministic plain-text document for the provider portal.

    Same inputs always serialize to the same bytes: fixed field order, no
    generation timestamps.
    """
    report = build_report(store, patient_id, range_start, range_end)
    profile = store.repo.profiles[patient_id]
    tz = profile.tzinfo()
    percent = f"{float(report.adherence_rate) * 100:.1f}"
    lines = [
        "PROVIDER ADHERENCE REPORT",
        f"patient_id: {patient_id}",
        f"patient_name: {profile.display_name}",
        f"timezone: {profile.timezone}",
        f"range: {report.range_start.isoformat()}..{report.range_end.isoformat()}",
        f"adherence_rate: {report.adherence_rate}",
        f"adherence_percent: {percent}",
        "",
        "[MEDICATIONS]",
        "medication_id | name | strength | form | status | times | days | on_time | late | missed | pending",
    ]
    for row in report.rows:
        med = row.medication
        times = ",".join(wire.encode_time(t) for t in row.times_of_day)
        lines.append(
            f"{med.medication_id} | {med.name} | {med.strength} | {med.form.value}"
            f" | {med.status.value} | {times} | {days_label(row.days)}"
            f" | {row.on_time} | {row.late} | {row.missed} | {row.pending}"
        )
    lines += ["", "[STOPPED MEDICATIONS]", "medication_id | name | strength | stop_reason | stopped_at"]
    for med in report.stopped_medications:
        stopped_at = med.stopped_at.astimezone(tz).isoformat() if med.stopped_at else ""
        lines.append(
            f"{med.medication_id} | {med.name} | {med.strength}"
            f" | {med.stop_reason or ''} | {stopped_at}"
        )
    lines += ["", "[FLAGS]", "kind | raised_at | context"]
    for flag in report.flags:
        lines.append(
            f"{flag.kind.value} | {flag.raised_at.astimezone(tz).isoformat()} | {flag.context}"
        )
    lines.append("")
    return "\n".join(lines)
