"""The multi-channel reminder state machine.

advance() walks a monotone clock and emits exactly the actions whose
timers fall inside the newly covered interval:

  - push at the due time (repeated at equal subdivisions of the email
    delay when the patient asked for several reminders per dose),
  - email once the dose stays unacknowledged past the email delay,
  - one voice call slot per day at the patient's daily check time when a
    dose escalated to email that day and nothing was logged,
  - the caregiver SMS one delay after the voice slot, or a red flag when
    no caregiver number is on file,
  - missed at local midnight,
  - a provider flag at the week boundary when more than two escalated
    doses of the closed week were never acknowledged.

The engine is deterministic: timers fire in (fire_at, kind, dose, patient)
order, so any partition of the clock into advance calls yields the same
action sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from enum import Enum

from . import scheduler, wire
from .domain import (
    DoseState,
    Flag,
    FlagKind,
    IntakeRecord,
    MedicationStatus,
    TERMINAL_STATES,
    provider_flag_context,
    red_flag_context,
)
from .scheduler import TimingConfig
from .store import Store

DAY = timedelta(days=1)


class ActionKind(str, Enum):
    SEND_PUSH = "SEND_PUSH"
    SEND_EMAIL = "SEND_EMAIL"
    SEND_VOICE = "SEND_VOICE"
    SEND_CAREGIVER_SMS = "SEND_CAREGIVER_SMS"
    RAISE_RED_FLAG = "RAISE_RED_FLAG"
    RAISE_PROVIDER_FLAG = "RAISE_PROVIDER_FLAG"
    MARK_MISSED = "MARK_MISSED"


# Tie-break order for actions firing at the same instant; the rollover
# pseudo-timer (dose materialization at local midnight) sorts first.
_ROLLOVER = -1
_KIND_ORDER = {kind: i for i, kind in enumerate(ActionKind)}

SEND_KINDS = (
    ActionKind.SEND_PUSH,
    ActionKind.SEND_EMAIL,
    ActionKind.SEND_VOICE,
    ActionKind.SEND_CAREGIVER_SMS,
)


@dataclass(frozen=True)
class EscalationAction:
    kind: ActionKind
    patient_id: str
    fire_at: datetime
    dose_event_id: str | None = None


@dataclass(frozen=True)
class DayEscalationState:
    """Per patient-day escalation aggregate, derived from the store."""

    patient_id: str
    local_date: date
    any_ack_today: bool
    voice_sent_at: datetime | None
    caregiver_stage_done: bool


class EngineError(Exception):
    pass


class NonMonotonicClockError(EngineError):
    pass


class UnknownDoseEventError(EngineError):
    pass


class AcknowledgementRejected(EngineError):
    pass


class EscalationEngine:
    """Single logical state machine over every patient in the store.

    All mutations go through the store's staged events, so folding the log
    reproduces engine state exactly. advance() stages but does not commit;
    the caller commits after dispatching the returned actions.
    """

    def __init__(self, store: Store, cfg: TimingConfig):
        cfg.validate()
        self.store = store
        self.cfg = cfg
        # lazily filled per-dose caches; doses are immutable once materialized
        self._due_day: dict[str, date] = {}
        self._cutoff: dict[str, datetime] = {}

    def _dose_cutoff(self, dose_id: str, tz) -> datetime:
        cutoff = self._cutoff.get(dose_id)
        if cutoff is None:
            due_day = scheduler.local_date_of(self.repo.dose_events[dose_id].due_at, tz)
            self._due_day[dose_id] = due_day
            cutoff = scheduler.day_end(due_day, tz)
            self._cutoff[dose_id] = cutoff
        return cutoff

    @property
    def repo(self):
        return self.store.repo

    @property
    def now(self) -> datetime | None:
        return self.repo.watermark

    # -- clock --------------------------------------------------------------

    def advance(self, now: datetime) -> list[EscalationAction]:
        repo = self.repo
        if repo.watermark is not None and now < repo.watermark:
            raise NonMonotonicClockError(
                f"advance to {now.isoformat()} behind watermark {repo.watermark.isoformat()}"
            )
        actions: list[EscalationAction] = []
        cursor = None if repo.watermark is None else (repo.watermark, 99, "", "")
        while True:
            candidate = self._earliest_candidate(cursor, now)
            if candidate is None:
                break
            cursor = candidate
            fired = self._fire(candidate)
            if fired is not None:
                actions.append(fired)
        self.store.stage("clock_advanced", {"now": wire.encode_dt(now)})
        return actions

    def next_wakeup(self, horizon: timedelta = timedelta(days=2)) -> datetime | None:
        """Earliest timer instant after the watermark, if any."""
        repo = self.repo
        if repo.watermark is None:
            return None
        cursor = (repo.watermark, 99, "", "")
        candidate = self._earliest_candidate(cursor, repo.watermark + horizon)
        return candidate[0] if candidate else None

    # -- candidate timers ---------------------------------------------------

    def _earliest_candidate(self, cursor, limit: datetime):
        """Smallest (fire_at, kind, dose_id, patient_id) beyond the cursor.

        Guards are evaluated when the candidate fires, not here, except
        cheap "already done" checks that keep the scan small.
        """
        repo, cfg = self.repo, self.cfg
        best = None

        def consider(t: datetime, kind: int, dose_id: str, patient_id: str):
            nonlocal best
            key = (t, kind, dose_id, patient_id)
            if t > limit:
                return
            if cursor is not None and key <= cursor:
                return
            if best is None or key < best:
                best = key

        for dose_id in repo.pending:
            event = repo.dose_events[dose_id]
            patient_id = repo.dose_patient[dose_id]
            profile = repo.profiles[patient_id]
            if event.state in (DoseState.SCHEDULED, DoseState.NOTIFIED_PUSH):
                sent = repo.pushes_sent.get(dose_id, 0)
                if sent < profile.reminders_per_dose:
                    step = scheduler.push_interval(cfg, profile.reminders_per_dose)
                    consider(
                        event.due_at + sent * step,
                        _KIND_ORDER[ActionKind.SEND_PUSH],
                        dose_id,
                        patient_id,
                    )
                consider(
                    event.due_at + cfg.email_delay,
                    _KIND_ORDER[ActionKind.SEND_EMAIL],
                    dose_id,
                    patient_id,
                )
            consider(
                self._dose_cutoff(dose_id, profile.tzinfo()),
                _KIND_ORDER[ActionKind.MARK_MISSED],
                dose_id,
                patient_id,
            )

        anchor = cursor[0] if cursor is not None else repo.origin
        if anchor is None:
            return best
        for patient_id in repo.profiles:
            profile = repo.profiles[patient_id]
            tz = profile.tzinfo()
            today = scheduler.local_date_of(anchor, tz)
            # day rollover: materialize each local day's doses at its
            # midnight; today's candidate covers patients whose rollover
            # shares the instant the cursor just crossed
            consider(scheduler.day_start(today, tz), _ROLLOVER, "", patient_id)
            consider(scheduler.day_start(today + DAY, tz), _ROLLOVER, "", patient_id)
            # the daily voice slot
            if (patient_id, today) not in repo.voice_slots:
                consider(
                    scheduler.local_to_utc(today, profile.daily_check_time, tz),
                    _KIND_ORDER[ActionKind.SEND_VOICE],
                    "",
                    patient_id,
                )
            # caregiver stage follows a fired voice slot, possibly past midnight
            for day in (today - DAY, today):
                fired_at = repo.voice_slots.get((patient_id, day))
                if fired_at is not None and (patient_id, day) not in repo.caregiver_done:
                    kind = (
                        ActionKind.SEND_CAREGIVER_SMS
                        if profile.caregiver_phone
                        else ActionKind.RAISE_RED_FLAG
                    )
                    consider(
                        fired_at + cfg.caregiver_delay_after_voice,
                        _KIND_ORDER[kind],
                        "",
                        patient_id,
                    )
            # weekly review at the next Monday-midnight boundary
            boundary_date = today + timedelta(days=(7 - today.weekday()) % 7)
            boundary = scheduler.day_start(boundary_date, tz)
            if cursor is not None and (boundary, _KIND_ORDER[ActionKind.RAISE_PROVIDER_FLAG], "", patient_id) <= cursor:
                boundary_date += timedelta(days=7)
                boundary = scheduler.day_start(boundary_date, tz)
            consider(
                boundary,
                _KIND_ORDER[ActionKind.RAISE_PROVIDER_FLAG],
                "",
                patient_id,
            )
        return best

    # -- firing -------------------------------------------------------------

    def _fire(self, key) -> EscalationAction | None:
        t, kind, dose_id, patient_id = key
        if kind == _ROLLOVER:
            tz = self.repo.patient_tz(patient_id)
            self._materialize_day(patient_id, scheduler.local_date_of(t, tz), t)
            return None
        kind = list(ActionKind)[kind]
        if kind is ActionKind.SEND_PUSH:
            return self._fire_push(t, dose_id, patient_id)
        if kind is ActionKind.SEND_EMAIL:
            return self._fire_email(t, dose_id, patient_id)
        if kind is ActionKind.MARK_MISSED:
            return self._fire_missed(t, dose_id, patient_id)
        if kind is ActionKind.SEND_VOICE:
            return self._fire_voice(t, patient_id)
        if kind in (ActionKind.SEND_CAREGIVER_SMS, ActionKind.RAISE_RED_FLAG):
            return self._fire_caregiver_stage(t, patient_id, kind)
        if kind is ActionKind.RAISE_PROVIDER_FLAG:
            return self._fire_weekly(t, patient_id)
        raise AssertionError(kind)

    def _transition(self, dose_id: str, state: DoseState, at: datetime, classification=None):
        data = {
            "dose_event_id": dose_id,
            "state": state.value,
            "at": wire.encode_dt(at),
        }
        if classification is not None:
            data["classification"] = classification.value
        self.store.stage("dose_transitioned", data)

    def _fire_push(self, t, dose_id, patient_id):
        event = self.repo.dose_events[dose_id]
        if event.state not in (DoseState.SCHEDULED, DoseState.NOTIFIED_PUSH):
            return None
        self.store.stage(
            "push_slot_fired",
            {"dose_event_id": dose_id, "at": wire.encode_dt(t)},
        )
        if event.state is DoseState.SCHEDULED:
            self._transition(dose_id, DoseState.NOTIFIED_PUSH, t)
        return EscalationAction(ActionKind.SEND_PUSH, patient_id, t, dose_id)

    def _fire_email(self, t, dose_id, patient_id):
        event = self.repo.dose_events[dose_id]
        if event.state is not DoseState.NOTIFIED_PUSH:
            return None
        self._transition(dose_id, DoseState.NOTIFIED_EMAIL, t)
        return EscalationAction(ActionKind.SEND_EMAIL, patient_id, t, dose_id)

    def _fire_missed(self, t, dose_id, patient_id):
        event = self.repo.dose_events[dose_id]
        if event.state in TERMINAL_STATES:
            return None
        self._transition(dose_id, DoseState.MISSED, t)
        return EscalationAction(ActionKind.MARK_MISSED, patient_id, t, dose_id)

    def _fire_voice(self, t, patient_id):
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        day = scheduler.local_date_of(t, tz)
        if (patient_id, day) in repo.voice_slots:
            return None
        if (patient_id, day) not in repo.email_days:
            return None
        first_ack = repo.first_ack.get((patient_id, day))
        if first_ack is not None and first_ack <= t:
            return None
        self.store.stage(
            "voice_slot_fired",
            {"patient_id": patient_id, "date": day.isoformat(), "at": wire.encode_dt(t)},
        )
        return EscalationAction(ActionKind.SEND_VOICE, patient_id, t)

    def _fire_caregiver_stage(self, t, patient_id, kind):
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        # the slot belongs to the day whose voice slot scheduled it
        day = None
        for candidate_day in (
            scheduler.local_date_of(t, tz),
            scheduler.local_date_of(t, tz) - DAY,
        ):
            fired_at = repo.voice_slots.get((patient_id, candidate_day))
            if fired_at is not None and fired_at + self.cfg.caregiver_delay_after_voice == t:
                day = candidate_day
                break
        if day is None or (patient_id, day) in repo.caregiver_done:
            return None
        first_ack = repo.first_ack.get((patient_id, day))
        if first_ack is not None and first_ack <= t:
            return None
        self.store.stage(
            "caregiver_stage_fired",
            {"patient_id": patient_id, "date": day.isoformat(), "at": wire.encode_dt(t)},
        )
        if kind is ActionKind.SEND_CAREGIVER_SMS:
            return EscalationAction(ActionKind.SEND_CAREGIVER_SMS, patient_id, t)
        flag = Flag(
            flag_id=self.store.next_id("flag"),
            patient_id=patient_id,
            kind=FlagKind.RED_FLAG,
            raised_at=t,
            context=red_flag_context(day),
        )
        self.store.stage("flag_raised", {"flag": wire.encode_flag(flag)})
        return EscalationAction(ActionKind.RAISE_RED_FLAG, patient_id, t)

    def _fire_weekly(self, t, patient_id):
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        boundary_date = scheduler.local_date_of(t, tz)
        week_start = boundary_date - timedelta(days=7)
        iso_year, iso_week, _ = week_start.isocalendar()
        if (patient_id, iso_year, iso_week) in repo.provider_flag_weeks:
            return None
        count = self._escalated_unacked(patient_id, week_start, boundary_date - DAY)
        if count <= 2:
            return None
        flag = Flag(
            flag_id=self.store.next_id("flag"),
            patient_id=patient_id,
            kind=FlagKind.PROVIDER_FLAG,
            raised_at=t,
            context=provider_flag_context(iso_year, iso_week),
        )
        self.store.stage(
            "flag_raised",
            {"flag": wire.encode_flag(flag), "iso_year": iso_year, "iso_week": iso_week},
        )
        return EscalationAction(ActionKind.RAISE_PROVIDER_FLAG, patient_id, t)

    def _escalated_unacked(self, patient_id: str, first: date, last: date) -> int:
        """Doses due in [first, last] that reached email and were never logged."""
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        count = 0
        for dose_id in repo.reached_email:
            if repo.dose_patient.get(dose_id) != patient_id:
                continue
            if dose_id in repo.intakes:
                continue
            due_day = scheduler.local_date_of(repo.dose_events[dose_id].due_at, tz)
            if first <= due_day <= last:
                count += 1
        return count

    def weekly_review(
        self, patient_id: str, iso_year: int, iso_week: int, now: datetime
    ) -> Flag | None:
        """Direct weekly check; the boundary timer inside advance() raises
        the same flag automatically when the clock crosses it."""
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        week_start = date.fromisocalendar(iso_year, iso_week, 1)
        boundary = scheduler.day_start(week_start + timedelta(days=7), tz)
        if now < boundary:
            raise EngineError("week is not over yet")
        if (patient_id, iso_year, iso_week) in repo.provider_flag_weeks:
            return None
        count = self._escalated_unacked(patient_id, week_start, week_start + timedelta(days=6))
        if count <= 2:
            return None
        flag = Flag(
            flag_id=self.store.next_id("flag"),
            patient_id=patient_id,
            kind=FlagKind.PROVIDER_FLAG,
            raised_at=boundary,
            context=provider_flag_context(iso_year, iso_week),
        )
        self.store.stage(
            "flag_raised",
            {"flag": wire.encode_flag(flag), "iso_year": iso_year, "iso_week": iso_week},
        )
        return flag

    # -- materialization ----------------------------------------------------

    def _materialize_day(self, patient_id: str, day: date, not_before: datetime) -> None:
        repo = self.repo
        tz = repo.patient_tz(patient_id)
        for schedule_id in repo.schedules_by_patient.get(patient_id, ()):
            schedule = repo.schedules[schedule_id]
            med = repo.medications[schedule.medication_id]
            if med.status is not MedicationStatus.ACTIVE:
                continue
            if (schedule_id, day.isoformat()) in repo.materialized:
                continue
            events = [
                e
                for e in scheduler.expand_schedule(schedule, day, day, tz)
                if e.due_at >= not_before and e.dose_event_id not in repo.dose_events
            ]
            self.store.stage(
                "doses_materialized",
                {
                    "schedule_id": schedule_id,
                    "date": day.isoformat(),
                    "events": [wire.encode_dose_event(e) for e in events],
                },
            )

    def materialize_on_ingest(self, patient_id: str, now: datetime) -> None:
        """Materialize the remainder of today for newly loaded schedules."""
        tz = self.repo.patient_tz(patient_id)
        today = scheduler.local_date_of(now, tz)
        self._materialize_day(patient_id, today, now + timedelta(seconds=1))

    # -- acknowledgement ----------------------------------------------------

    def acknowledge(self, dose_event_id: str, at: datetime) -> IntakeRecord:
        """Record an intake. The clock must already be advanced to `at`."""
        repo = self.repo
        event = repo.dose_events.get(dose_event_id)
        if event is None:
            raise UnknownDoseEventError(dose_event_id)
        if event.state is DoseState.ACKNOWLEDGED:
            return repo.intakes[dose_event_id]
        if repo.watermark is None or at != repo.watermark:
            raise NonMonotonicClockError(
                "advance the engine to the acknowledgement instant first"
            )
        if event.state is DoseState.MISSED:
            raise AcknowledgementRejected("dose already marked missed")
        if at < event.due_at - self.cfg.email_delay:
            raise AcknowledgementRejected(
                "acknowledgement too early; not accepted before due - email_delay"
            )
        classification = scheduler.classify_intake(event.due_at, at, self.cfg)
        self._transition(dose_event_id, DoseState.ACKNOWLEDGED, at, classification)
        record = IntakeRecord(dose_event_id, at, classification)
        self.store.stage("intake_recorded", {"record": wire.encode_intake(record)})
        return record

    # -- inspection ---------------------------------------------------------

    def day_state(self, patient_id: str, day: date) -> DayEscalationState:
        repo = self.repo
        voice = repo.voice_slots.get((patient_id, day))
        return DayEscalationState(
            patient_id=patient_id,
            local_date=day,
            any_ack_today=(patient_id, day) in repo.first_ack,
            voice_sent_at=voice,
            caregiver_stage_done=(patient_id, day) in repo.caregiver_done,
        )
