"""Brute-force replay of the notification rules at every virtual minute.

Deliberately independent of the engine's timer mechanics: no engine
import, no candidate queue, no watermark. Rules are evaluated minute by
minute over precomputed slot instants with flat dictionaries. Test-only;
horizons are capped at 31 days and all instants must be whole minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from fractions import Fraction
from zoneinfo import ZoneInfo

from .. import scheduler
from ..domain import (
    AdherenceReport,
    Flag,
    FlagKind,
    IntakeClassification,
    MedicationRow,
    provider_flag_context,
    red_flag_context,
)
from ..scheduler import classify_intake, local_to_utc, push_interval
from . import transcript
from .scenario import Scenario, resolve_dose_id

MINUTE = timedelta(minutes=1)
DAY = timedelta(days=1)

# Same-instant processing order (matches the engine's declared kind order).
K_PUSH, K_EMAIL, K_VOICE, K_CAREGIVER, K_RED, K_PROVIDER, K_MISSED = range(7)


class OracleError(Exception):
    pass


@dataclass
class _Dose:
    dose_id: str
    patient_id: str
    medication_id: str
    due: datetime
    due_day: date
    state: str = "SCHEDULED"
    emailed: bool = False


@dataclass
class _Tally:
    on_time: int = 0
    late: int = 0
    missed: int = 0
    pending: int = 0


def _check_minute(instant: datetime, what: str) -> datetime:
    if instant.second or instant.microsecond:
        raise OracleError(f"{what} at {instant.isoformat()} is not minute-aligned")
    return instant


def oracle_replay(scenario: Scenario) -> list[str]:
    if (scenario.horizon_end - scenario.horizon_start).days > 31:
        raise OracleError("oracle horizons are capped at 31 days")
    cfg = scenario.timing
    tzs: dict[str, ZoneInfo] = {}
    caregiver: dict[str, str | None] = {}
    phone: dict[str, str | None] = {}
    email_addr: dict[str, str | None] = {}
    display: dict[str, str] = {}

    doses: dict[str, _Dose] = {}
    slots: dict[datetime, list[tuple]] = {}
    end_boundary = scenario.end_boundary()

    def add_slot(instant: datetime, entry: tuple, what: str) -> None:
        if instant > end_boundary:
            return
        _check_minute(instant, what)
        slots.setdefault(instant, []).append(entry)

    for patient in scenario.patients:
        profile = patient.profile
        pid = profile.patient_id
        tz = profile.tzinfo()
        tzs[pid] = tz
        caregiver[pid] = profile.caregiver_phone
        phone[pid] = profile.phone
        email_addr[pid] = profile.email
        display[pid] = profile.display_name
        step = push_interval(cfg, profile.reminders_per_dose)

        for med in patient.medications:
            _, schedule = med.as_domain(pid)
            expanded = scheduler.expand_schedule(
                schedule,
                scenario.horizon_start,
                scenario.horizon_end + 2 * DAY,
                tz,
            )
            for event in expanded:
                dose = _Dose(
                    dose_id=event.dose_event_id,
                    patient_id=pid,
                    medication_id=med.medication_id,
                    due=event.due_at,
                    due_day=scheduler.local_date_of(event.due_at, tz),
                )
                doses[dose.dose_id] = dose
                for k in range(profile.reminders_per_dose):
                    add_slot(dose.due + k * step, (K_PUSH, dose.dose_id, pid), "push")
                add_slot(dose.due + cfg.email_delay, (K_EMAIL, dose.dose_id, pid), "email")
                add_slot(
                    scheduler.day_end(dose.due_day, tz),
                    (K_MISSED, dose.dose_id, pid),
                    "missed cutoff",
                )

        day = scenario.horizon_start
        while day <= scenario.horizon_end + DAY:
            add_slot(
                local_to_utc(day, profile.daily_check_time, tz),
                (K_VOICE, "", pid, day),
                "daily check",
            )
            if day.weekday() == 0:
                add_slot(
                    scheduler.day_start(day, tz), (K_PROVIDER, "", pid, day), "week boundary"
                )
            day += DAY

    acks: dict[datetime, list] = {}
    for action in scenario.script:
        if action.kind != "ACK":
            continue
        _check_minute(action.at, "script action")
        acks.setdefault(action.at, []).append(action)

    # rule state
    pushes: dict[str, int] = {}
    emailed_day: set[tuple[str, date]] = set()
    first_ack: set[tuple[str, date]] = set()
    voice_done: set[tuple[str, date]] = set()
    flagged_weeks: set[tuple[str, int, int]] = set()
    intake: dict[str, tuple[datetime, IntakeClassification]] = {}
    flags: dict[str, list[Flag]] = {p.profile.patient_id: [] for p in scenario.patients}
    lines: list[str] = []

    def notify(t, pid, channel, dose_id, target):
        outcome = "DELIVERED" if target else "SKIPPED_NO_TARGET"
        lines.append(
            transcript.notify_line(
                t, tzs[pid], channel, pid, dose_id or None, target or "", outcome
            )
        )

    def fire(t: datetime, entry: tuple) -> None:
        kind, dose_id, pid = entry[0], entry[1], entry[2]
        if kind == K_PUSH:
            dose = doses[dose_id]
            if dose.state not in ("SCHEDULED", "PUSHED"):
                return
            notify(t, pid, "PUSH", dose_id, f"app:{pid}")
            pushes[dose_id] = pushes.get(dose_id, 0) + 1
            if dose.state == "SCHEDULED":
                dose.state = "PUSHED"
                lines.append(
                    transcript.state_line(t, tzs[pid], pid, dose_id, "NOTIFIED_PUSH")
                )
        elif kind == K_EMAIL:
            dose = doses[dose_id]
            if dose.state != "PUSHED":
                return
            dose.state = "EMAILED"
            dose.emailed = True
            emailed_day.add((pid, scheduler.local_date_of(t, tzs[pid])))
            notify(t, pid, "EMAIL", dose_id, email_addr[pid])
            lines.append(
                transcript.state_line(t, tzs[pid], pid, dose_id, "NOTIFIED_EMAIL")
            )
        elif kind == K_MISSED:
            dose = doses[dose_id]
            if dose.state in ("ACKED", "MISSED"):
                return
            dose.state = "MISSED"
            lines.append(transcript.state_line(t, tzs[pid], pid, dose_id, "MISSED"))
        elif kind == K_VOICE:
            day = entry[3]
            if (pid, day) in voice_done:
                return
            if (pid, day) not in emailed_day or (pid, day) in first_ack:
                return
            voice_done.add((pid, day))
            notify(t, pid, "VOICE", None, phone[pid])
            stage_kind = K_CAREGIVER if caregiver[pid] else K_RED
            follow = t + cfg.caregiver_delay_after_voice
            add_slot(follow, (stage_kind, "", pid, day), "caregiver stage")
        elif kind in (K_CAREGIVER, K_RED):
            day = entry[3]
            if (pid, day) in first_ack:
                return
            if kind == K_CAREGIVER:
                notify(t, pid, "CAREGIVER_SMS", None, caregiver[pid])
            else:
                flag = Flag("", pid, FlagKind.RED_FLAG, t, red_flag_context(day))
                flags[pid].append(flag)
                lines.append(
                    transcript.flag_line(t, tzs[pid], pid, "RED_FLAG", flag.context)
                )
        elif kind == K_PROVIDER:
            boundary_day = entry[3]
            week_start = boundary_day - timedelta(days=7)
            iso_year, iso_week, _ = week_start.isocalendar()
            if (pid, iso_year, iso_week) in flagged_weeks:
                return
            count = sum(
                1
                for d in doses.values()
                if d.patient_id == pid
                and d.emailed
                and d.dose_id not in intake
                and week_start <= d.due_day <= boundary_day - DAY
            )
            if count <= 2:
                return
            flagged_weeks.add((pid, iso_year, iso_week))
            context = provider_flag_context(iso_year, iso_week)
            flag = Flag("", pid, FlagKind.PROVIDER_FLAG, t, context)
            flags[pid].append(flag)
            lines.append(
                transcript.flag_line(t, tzs[pid], pid, "PROVIDER_FLAG", context)
            )
        else:
            raise AssertionError(kind)

    def acknowledge(t: datetime, action) -> None:
        dose_id = resolve_dose_id(scenario, action)
        dose = doses.get(dose_id)
        if dose is None:
            return  # valid slot that never materialized (DST gap collapse)
        if dose.state in ("ACKED", "MISSED"):
            return
        tz = tzs[dose.patient_id]
        if t < scheduler.day_start(dose.due_day, tz):
            return  # dose not materialized yet
        if t < dose.due - cfg.email_delay:
            return  # too early, rejected as a mis-tap
        dose.state = "ACKED"
        classification = classify_intake(dose.due, t, cfg)
        intake[dose_id] = (t, classification)
        first_ack.add((dose.patient_id, scheduler.local_date_of(t, tz)))
        lines.append(
            transcript.state_line(
                t, tz, dose.patient_id, dose_id, "ACKNOWLEDGED", classification.value
            )
        )

    start = min(
        scheduler.day_start(scenario.horizon_start, p.profile.tzinfo())
        for p in scenario.patients
    )
    t = start
    while t <= end_boundary:
        entries = slots.pop(t, None)
        if entries:
            entries.sort(key=lambda e: (e[0], e[1], e[2]))
            for entry in entries:
                fire(t, entry)
        for action in acks.pop(t, ()):  # script order within the minute
            acknowledge(t, action)
        t += MINUTE

    for patient in scenario.patients:
        lines.extend(_report(scenario, patient, doses, intake, flags, tzs))
    return lines


def _report(scenario, patient, doses, intake, flags, tzs) -> list[str]:
    pid = patient.profile.patient_id
    tz = tzs[pid]
    tallies: dict[str, _Tally] = {m.medication_id: _Tally() for m in patient.medications}
    for dose in doses.values():
        if dose.patient_id != pid:
            continue
        if not (scenario.horizon_start <= dose.due_day <= scenario.horizon_end):
            continue
        tally = tallies[dose.medication_id]
        if dose.state == "ACKED":
            if intake[dose.dose_id][1] is IntakeClassification.ON_TIME:
                tally.on_time += 1
            else:
                tally.late += 1
        elif dose.state == "MISSED":
            tally.missed += 1
        else:
            tally.pending += 1

    rows = []
    on_time = late = missed = 0
    for med in sorted(
        patient.medications, key=lambda m: (m.name.lower(), m.medication_id)
    ):
        dmed, _ = med.as_domain(pid)
        tally = tallies[med.medication_id]
        rows.append(
            MedicationRow(
                medication=dmed,
                times_of_day=med.times_of_day,
                days=med.days,
                on_time=tally.on_time,
                late=tally.late,
                missed=tally.missed,
                pending=tally.pending,
            )
        )
        on_time += tally.on_time
        late += tally.late
        missed += tally.missed
    taken = on_time + late
    rate = Fraction(taken, taken + missed) if taken + missed else Fraction(0)
    in_range = [
        f
        for f in flags[pid]
        if scenario.horizon_start
        <= scheduler.local_date_of(f.raised_at, tz)
        <= scenario.horizon_end
    ]
    in_range.sort(key=lambda f: (f.raised_at, f.kind.value))
    report = AdherenceReport(
        patient_id=pid,
        range_start=scenario.horizon_start,
        range_end=scenario.horizon_end,
        rows=tuple(rows),
        stopped_medications=(),
        flags=tuple(in_range),
        adherence_rate=rate,
    )
    return transcript.report_lines(report, tz)
