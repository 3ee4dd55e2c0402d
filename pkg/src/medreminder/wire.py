"""JSON wire encoding for domain records.

Timestamps travel as RFC 3339 with zone offset (UTC on the wire); dates
and times-of-day as ISO strings. Decoders are strict: unknown enum values
raise ValueError so corrupt inputs fail loudly.
"""

from __future__ import annotations

from datetime import date, datetime, time, timezone

from . import domain
from .domain import (
    Channel,
    DeliveryOutcome,
    DoseEvent,
    DoseSchedule,
    DoseState,
    Flag,
    FlagKind,
    IntakeClassification,
    IntakeRecord,
    Medication,
    MedicationForm,
    MedicationSource,
    MedicationStatus,
    NotificationRecord,
    PatientProfile,
    ScanStatus,
)


def encode_dt(value: datetime) -> str:
    return value.astimezone(timezone.utc).isoformat()


def decode_dt(value: str) -> datetime:
    dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} lacks a zone offset")
    return dt.astimezone(timezone.utc)


def encode_time(value: time) -> str:
    return value.strftime("%H:%M:%S") if value.second else value.strftime("%H:%M")


def decode_time(value: str) -> time:
    return time.fromisoformat(value)


def _opt(encoder, value):
    return None if value is None else encoder(value)


def encode_profile(p: PatientProfile) -> dict:
    return {
        "patient_id": p.patient_id,
        "display_name": p.display_name,
        "timezone": p.timezone,
        "phone": p.phone,
        "email": p.email,
        "caregiver_phone": p.caregiver_phone,
        "daily_check_time": encode_time(p.daily_check_time),
        "reminders_per_dose": p.reminders_per_dose,
    }


def decode_profile(d: dict) -> PatientProfile:
    return PatientProfile(
        patient_id=d["patient_id"],
        display_name=d["display_name"],
        timezone=d["timezone"],
        phone=d.get("phone"),
        email=d.get("email"),
        caregiver_phone=d.get("caregiver_phone"),
        daily_check_time=decode_time(d.get("daily_check_time", "20:00")),
        reminders_per_dose=int(d.get("reminders_per_dose", 1)),
    )


def encode_medication(m: Medication) -> dict:
    return {
        "medication_id": m.medication_id,
        "patient_id": m.patient_id,
        "name": m.name,
        "strength": m.strength,
        "form": m.form.value,
        "source": m.source.value,
        "prescriber": m.prescriber,
        "status": m.status.value,
        "stop_reason": m.stop_reason,
        "stopped_at": _opt(encode_dt, m.stopped_at),
    }


def decode_medication(d: dict) -> Medication:
    return Medication(
        medication_id=d["medication_id"],
        patient_id=d["patient_id"],
        name=d["name"],
        strength=d["strength"],
        form=MedicationForm(d["form"]),
        source=MedicationSource(d["source"]),
        prescriber=d.get("prescriber"),
        status=MedicationStatus(d.get("status", "ACTIVE")),
        stop_reason=d.get("stop_reason"),
        stopped_at=_opt(decode_dt, d.get("stopped_at")),
    )


def encode_schedule(s: DoseSchedule) -> dict:
    return {
        "schedule_id": s.schedule_id,
        "medication_id": s.medication_id,
        "times_of_day": [encode_time(t) for t in s.times_of_day],
        "days": "daily" if s.days is None else [domain.WEEKDAY_NAMES[i] for i in s.days],
        "start_date": s.start_date.isoformat(),
        "end_date": _opt(date.isoformat, s.end_date),
    }


def decode_schedule(d: dict) -> DoseSchedule:
    return DoseSchedule(
        schedule_id=d["schedule_id"],
        medication_id=d["medication_id"],
        times_of_day=tuple(decode_time(t) for t in d["times_of_day"]),
        days=domain.parse_days(d.get("days")),
        start_date=date.fromisoformat(d["start_date"]),
        end_date=_opt(date.fromisoformat, d.get("end_date")),
    )


def encode_dose_event(e: DoseEvent) -> dict:
    return {
        "dose_event_id": e.dose_event_id,
        "schedule_id": e.schedule_id,
        "due_at": encode_dt(e.due_at),
        "state": e.state.value,
        "escalation_log": list(e.escalation_log),
    }


def decode_dose_event(d: dict) -> DoseEvent:
    return DoseEvent(
        dose_event_id=d["dose_event_id"],
        schedule_id=d["schedule_id"],
        due_at=decode_dt(d["due_at"]),
        state=DoseState(d.get("state", "SCHEDULED")),
        escalation_log=tuple(d.get("escalation_log", ())),
    )


def encode_intake(r: IntakeRecord) -> dict:
    return {
        "dose_event_id": r.dose_event_id,
        "acknowledged_at": encode_dt(r.acknowledged_at),
        "classification": r.classification.value,
    }


def decode_intake(d: dict) -> IntakeRecord:
    return IntakeRecord(
        dose_event_id=d["dose_event_id"],
        acknowledged_at=decode_dt(d["acknowledged_at"]),
        classification=IntakeClassification(d["classification"]),
    )


def encode_notification(n: NotificationRecord) -> dict:
    return {
        "notification_id": n.notification_id,
        "patient_id": n.patient_id,
        "dose_event_id": n.dose_event_id,
        "channel": n.channel.value,
        "sent_at": encode_dt(n.sent_at),
        "target": n.target,
        "outcome": n.outcome.value,
    }


def decode_notification(d: dict) -> NotificationRecord:
    return NotificationRecord(
        notification_id=d["notification_id"],
        patient_id=d["patient_id"],
        dose_event_id=d.get("dose_event_id"),
        channel=Channel(d["channel"]),
        sent_at=decode_dt(d["sent_at"]),
        target=d["target"],
        outcome=DeliveryOutcome(d["outcome"]),
    )


def encode_flag(f: Flag) -> dict:
    return {
        "flag_id": f.flag_id,
        "patient_id": f.patient_id,
        "kind": f.kind.value,
        "raised_at": encode_dt(f.raised_at),
        "context": f.context,
    }


def decode_flag(d: dict) -> Flag:
    return Flag(
        flag_id=d["flag_id"],
        patient_id=d["patient_id"],
        kind=FlagKind(d["kind"]),
        raised_at=decode_dt(d["raised_at"]),
        context=d["context"],
    )
