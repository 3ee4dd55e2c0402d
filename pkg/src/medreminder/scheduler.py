"""Expand recurring schedules into concrete dose events and classify intake.

All wall-clock handling is pinned here. Policy for DST:
  - spring-forward gap: the dose shifts to the first valid instant after
    the gap (due_at stays monotone across the day);
  - fall-back ambiguity: the earlier instant wins (fold=0).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone
from functools import lru_cache
from typing import Iterable
from zoneinfo import ZoneInfo

from .domain import (
    DoseEvent,
    DoseSchedule,
    DoseState,
    IntakeClassification,
    PatientProfile,
)

UTC = timezone.utc

DAY = timedelta(days=1)


@dataclass(frozen=True)
class TimingConfig:
    """Durations driving the escalation ladder.

    The missed cutoff is not a duration: a dose not acknowledged by the end
    of its local day is marked missed at local midnight.
    """

    email_delay: timedelta = timedelta(minutes=30)
    on_time_window: timedelta = timedelta(minutes=60)
    caregiver_delay_after_voice: timedelta = timedelta(minutes=60)

    def validate(self) -> None:
        if self.email_delay <= timedelta(0):
            raise ValueError("email_delay must be positive")
        if self.caregiver_delay_after_voice <= timedelta(0):
            raise ValueError("caregiver_delay_after_voice must be positive")
        if not (self.email_delay <= self.on_time_window <= timedelta(hours=24)):
            raise ValueError("require email_delay <= on_time_window <= 24h")
        if self.caregiver_delay_after_voice > timedelta(hours=24):
            raise ValueError("caregiver_delay_after_voice must be <= 24h")


@lru_cache(maxsize=65536)
def local_to_utc(d: date, t: time, tz: ZoneInfo) -> datetime:
    """UTC instant of a local wall-clock time under the DST policy above."""
    naive = datetime.combine(d, t)
    local = naive.replace(tzinfo=tz)
    utc = local.astimezone(UTC)
    if utc.astimezone(tz).replace(tzinfo=None) == naive:
        return utc
    # Nonexistent wall time: find the transition instant (gap end) by
    # bisecting between the two fold interpretations on whole seconds.
    off_after = naive.replace(tzinfo=tz, fold=1).utcoffset()
    lo = int(naive.replace(tzinfo=tz, fold=1).astimezone(UTC).timestamp())
    hi = int(utc.timestamp())
    while lo < hi:
        mid = (lo + hi) // 2
        if datetime.fromtimestamp(mid, tz).utcoffset() == off_after:
            hi = mid
        else:
            lo = mid + 1
    return datetime.fromtimestamp(lo, UTC)


def local_date_of(instant: datetime, tz: ZoneInfo) -> date:
    return instant.astimezone(tz).date()


def day_start(d: date, tz: ZoneInfo) -> datetime:
    return local_to_utc(d, time(0, 0), tz)


def day_end(d: date, tz: ZoneInfo) -> datetime:
    """Missed cutoff for doses due on local date d (next local midnight)."""
    return local_to_utc(d + DAY, time(0, 0), tz)


def dose_event_id(schedule_id: str, d: date, t: time) -> str:
    """Deterministic id from the nominal local slot."""
    return f"{schedule_id}:{d.isoformat()}T{t.strftime('%H%M')}"


def expand_schedule(
    schedule: DoseSchedule,
    range_start: date,
    range_end: date,
    tz: ZoneInfo,
) -> list[DoseEvent]:
    """One SCHEDULED event per matching (date, time_of_day), sorted by due_at.

    Two times_of_day collapsing into the same instant through a DST gap
    keep only the first slot, preserving the unique-due_at invariant.
    """
    if range_end < range_start:
        raise ValueError("empty date range")
    events: list[DoseEvent] = []
    d = range_start
    while d <= range_end:
        if schedule.occurs_on(d):
            seen: set[datetime] = set()
            for t in schedule.times_of_day:
                due = local_to_utc(d, t, tz)
                if due in seen:
                    continue
                seen.add(due)
                events.append(
                    DoseEvent(
                        dose_event_id=dose_event_id(schedule.schedule_id, d, t),
                        schedule_id=schedule.schedule_id,
                        due_at=due,
                    )
                )
        d += DAY
    events.sort(key=lambda e: (e.due_at, e.dose_event_id))
    return events


def classify_intake(
    due_at: datetime, acknowledged_at: datetime, cfg: TimingConfig
) -> IntakeClassification:
    """ON_TIME up to and including due + on_time_window, LATE after.

    Early acknowledgements (caller enforces >= due - email_delay) clamp
    to ON_TIME.
    """
    if acknowledged_at <= due_at + cfg.on_time_window:
        return IntakeClassification.ON_TIME
    return IntakeClassification.LATE


def push_interval(cfg: TimingConfig, reminders_per_dose: int) -> timedelta:
    """Spacing of repeated pushes: equal subdivisions of the email delay."""
    seconds = int(cfg.email_delay.total_seconds()) // max(reminders_per_dose, 1)
    return timedelta(seconds=seconds)


def next_wakeup(
    pending: Iterable[DoseEvent],
    profile: PatientProfile,
    now: datetime,
    cfg: TimingConfig,
) -> datetime | None:
    """Earliest future instant at which any reminder timer fires.

    Timers per pending dose: remaining push slots, the email escalation,
    and the missed cutoff; plus the daily check slot and the caregiver
    stage that would follow it.
    """
    tz = profile.tzinfo()
    step = push_interval(cfg, profile.reminders_per_dose)
    candidates: list[datetime] = []
    any_pending = False
    for event in pending:
        if event.state in (DoseState.ACKNOWLEDGED, DoseState.MISSED):
            continue
        any_pending = True
        # Before the email stage every escalation_log entry is a push.
        pushes_sent = len(event.escalation_log)
        if event.state in (DoseState.SCHEDULED, DoseState.NOTIFIED_PUSH):
            if pushes_sent < profile.reminders_per_dose:
                candidates.append(event.due_at + pushes_sent * step)
            candidates.append(event.due_at + cfg.email_delay)
        candidates.append(day_end(local_date_of(event.due_at, tz), tz))
    if any_pending:
        check = local_to_utc(local_date_of(now, tz), profile.daily_check_time, tz)
        candidates.append(check)
        candidates.append(check + cfg.caregiver_delay_after_voice)
    future = [c for c in candidates if c > now]
    return min(future) if future else None
