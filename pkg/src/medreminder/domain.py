"""Core data model shared by every other module.

All values are immutable once constructed; validation helpers return a
ValidationResult instead of raising so callers can surface diagnostics
field by field.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import date, datetime, time
from enum import Enum
from fractions import Fraction
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

E164_RE = re.compile(r"^\+[1-9]\d{1,14}$")

WEEKDAY_NAMES = ("MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN")


class MedicationForm(str, Enum):
    TABLET = "TABLET"
    CAPSULE = "CAPSULE"
    LIQUID = "LIQUID"
    OTHER = "OTHER"


class MedicationStatus(str, Enum):
    ACTIVE = "ACTIVE"
    STOPPED = "STOPPED"


class MedicationSource(str, Enum):
    AUTO = "AUTO"
    WEBFORM = "WEBFORM"
    MANUAL = "MANUAL"
    SCAN = "SCAN"


class DoseState(str, Enum):
    SCHEDULED = "SCHEDULED"
    NOTIFIED_PUSH = "NOTIFIED_PUSH"
    NOTIFIED_EMAIL = "NOTIFIED_EMAIL"
    ACKNOWLEDGED = "ACKNOWLEDGED"
    MISSED = "MISSED"


# Legal transitions; ACKNOWLEDGED and MISSED are terminal.
DOSE_TRANSITIONS = {
    DoseState.SCHEDULED: {DoseState.NOTIFIED_PUSH, DoseState.ACKNOWLEDGED, DoseState.MISSED},
    DoseState.NOTIFIED_PUSH: {DoseState.NOTIFIED_EMAIL, DoseState.ACKNOWLEDGED, DoseState.MISSED},
    DoseState.NOTIFIED_EMAIL: {DoseState.ACKNOWLEDGED, DoseState.MISSED},
    DoseState.ACKNOWLEDGED: set(),
    DoseState.MISSED: set(),
}

TERMINAL_STATES = (DoseState.ACKNOWLEDGED, DoseState.MISSED)


class Channel(str, Enum):
    PUSH = "PUSH"
    EMAIL = "EMAIL"
    VOICE = "VOICE"
    CAREGIVER_SMS = "CAREGIVER_SMS"


class DeliveryOutcome(str, Enum):
    DELIVERED = "DELIVERED"
    FAILED = "FAILED"
    SKIPPED_NO_TARGET = "SKIPPED_NO_TARGET"


class IntakeClassification(str, Enum):
    ON_TIME = "ON_TIME"
    LATE = "LATE"


class FlagKind(str, Enum):
    RED_FLAG = "RED_FLAG"
    PROVIDER_FLAG = "PROVIDER_FLAG"


class ScanStatus(str, Enum):
    PENDING = "PENDING"
    TRANSCRIBED = "TRANSCRIBED"
    REJECTED = "REJECTED"


@dataclass(frozen=True)
class PatientProfile:
    """Identity, timezone, and the contact points that gate each channel."""

    patient_id: str
    display_name: str
    timezone: str
    phone: str | None = None
    email: str | None = None
    caregiver_phone: str | None = None
    daily_check_time: time = time(20, 0)
    reminders_per_dose: int = 1

    def tzinfo(self) -> ZoneInfo:
        return ZoneInfo(self.timezone)


@dataclass(frozen=True)
class Medication:
    medication_id: str
    patient_id: str
    name: str
    strength: str
    form: MedicationForm
    source: MedicationSource
    prescriber: str | None = None
    status: MedicationStatus = MedicationStatus.ACTIVE
    stop_reason: str | None = None
    stopped_at: datetime | None = None


@dataclass(frozen=True)
class DoseSchedule:
    """Recurring dose times for one medication.

    days is None for every-day schedules, otherwise a sorted tuple of
    weekday numbers (0 = Monday).
    """

    schedule_id: str
    medication_id: str
    times_of_day: tuple[time, ...]
    start_date: date
    days: tuple[int, ...] | None = None
    end_date: date | None = None

    def occurs_on(self, d: date) -> bool:
        if d < self.start_date:
            return False
        if self.end_date is not None and d > self.end_date:
            return False
        return self.days is None or d.weekday() in self.days


@dataclass(frozen=True)
class DoseEvent:
    """One scheduled intake occasion carrying escalation state and history.

    escalation_log holds notification ids in send order.
    """

    dose_event_id: str
    schedule_id: str
    due_at: datetime
    state: DoseState = DoseState.SCHEDULED
    escalation_log: tuple[str, ...] = ()


@dataclass(frozen=True)
class IntakeRecord:
    dose_event_id: str
    acknowledged_at: datetime
    classification: IntakeClassification


@dataclass(frozen=True)
class NotificationRecord:
    notification_id: str
    patient_id: str
    channel: Channel
    sent_at: datetime
    target: str
    outcome: DeliveryOutcome
    dose_event_id: str | None = None  # absent for the daily VOICE / caregiver stage


@dataclass(frozen=True)
class Flag:
    flag_id: str
    patient_id: str
    kind: FlagKind
    raised_at: datetime
    context: str


def red_flag_context(local_day: date) -> str:
    return (
        f"escalated doses unacknowledged on {local_day.isoformat()};"
        " no caregiver number on file"
    )


def provider_flag_context(iso_year: int, iso_week: int) -> str:
    return f"{iso_year}-W{iso_week:02d}"


@dataclass(frozen=True)
class MedicationRow:
    """Per-medication intake counts over a report range."""

    medication: Medication
    times_of_day: tuple[time, ...]
    days: tuple[int, ...] | None
    on_time: int
    late: int
    missed: int
    pending: int

    @property
    def total(self) -> int:
        return self.on_time + self.late + self.missed + self.pending


@dataclass(frozen=True)
class AdherenceReport:
    patient_id: str
    range_start: date
    range_end: date
    rows: tuple[MedicationRow, ...]
    stopped_medications: tuple[Medication, ...]
    flags: tuple[Flag, ...]
    adherence_rate: Fraction


@dataclass(frozen=True)
class ValidationResult:
    problems: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def _check_phone(value: str | None, field_name: str, problems: list[str]) -> None:
    if value is not None and not E164_RE.match(value):
        problems.append(f"{field_name} is not an E.164 number")


def validate_profile(profile: PatientProfile) -> ValidationResult:
    """Check every profile invariant; returns violations, never raises."""
    problems: list[str] = []
    if not profile.patient_id:
        problems.append("patient_id is empty")
    if not profile.display_name:
        problems.append("display_name is empty")
    try:
        ZoneInfo(profile.timezone)
    except (ZoneInfoNotFoundError, ValueError):
        problems.append(f"unknown timezone {profile.timezone!r}")
    _check_phone(profile.phone, "phone", problems)
    _check_phone(profile.caregiver_phone, "caregiver_phone", problems)
    if profile.email is not None and profile.email.count("@") != 1:
        problems.append("email must contain exactly one '@'")
    if profile.reminders_per_dose < 1:
        problems.append("reminders_per_dose must be >= 1")
    return ValidationResult(tuple(problems))


def validate_medication(med: Medication) -> ValidationResult:
    problems: list[str] = []
    if not med.name.strip():
        problems.append("medication name is empty")
    stopped = med.status is MedicationStatus.STOPPED
    if stopped != (med.stopped_at is not None):
        problems.append("status STOPPED and stopped_at presence must agree")
    return ValidationResult(tuple(problems))


def validate_schedule(schedule: DoseSchedule) -> ValidationResult:
    problems: list[str] = []
    if not schedule.times_of_day:
        problems.append("times_of_day is empty")
    else:
        for a, b in zip(schedule.times_of_day, schedule.times_of_day[1:]):
            if a >= b:
                problems.append("times_of_day must be strictly increasing")
                break
    if schedule.days is not None:
        if not schedule.days:
            problems.append("days subset is empty")
        elif any(d < 0 or d > 6 for d in schedule.days):
            problems.append("days must be weekday numbers 0..6")
        elif tuple(sorted(set(schedule.days))) != schedule.days:
            problems.append("days must be sorted and unique")
    if schedule.end_date is not None and schedule.end_date < schedule.start_date:
        problems.append("end_date is before start_date")
    return ValidationResult(tuple(problems))


def days_label(days: tuple[int, ...] | None) -> str:
    if days is None:
        return "daily"
    return ",".join(WEEKDAY_NAMES[d] for d in days)


def parse_days(value) -> tuple[int, ...] | None:
    """Parse a recurrence pattern from wire form ("daily" or weekday names)."""
    if value is None or value == "daily":
        return None
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    idx = []
    for name in value:
        name = str(name).strip().upper()
        if name not in WEEKDAY_NAMES:
            raise ValueError(f"unknown weekday {name!r}")
        idx.append(WEEKDAY_NAMES.index(name))
    return tuple(sorted(set(idx)))
