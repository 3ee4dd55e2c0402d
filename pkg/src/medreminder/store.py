"""Durable persistence: an append-only event log folded into live state.

Every domain mutation is an event; the Repository is the fold of the log.
Loading a log replays it through the same apply() used live, so rebuilt
state is identical by construction. The log file is length-prefixed,
CRC-checked records behind a versioned magic header; a single batch is
written with one write call so mid-batch corruption never splits a step.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path
from zoneinfo import ZoneInfo

from . import wire
from .domain import (
    DoseEvent,
    DoseSchedule,
    DoseState,
    Flag,
    FlagKind,
    IntakeRecord,
    Medication,
    MedicationStatus,
    NotificationRecord,
    PatientProfile,
    ScanStatus,
)

MAGIC = b"MRLOG\x00\x00\x01"
_HEADER = 8  # per-record: 4-byte big-endian length + 4-byte CRC32


class CorruptLogError(Exception):
    """Log unreadable past valid_offset (bytes of intact prefix)."""

    def __init__(self, valid_offset: int, reason: str):
        super().__init__(f"corrupt log after offset {valid_offset}: {reason}")
        self.valid_offset = valid_offset
        self.reason = reason


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    data: dict

    def to_bytes(self) -> bytes:
        payload = json.dumps(
            {"seq": self.seq, "kind": self.kind, "data": self.data},
            separators=(",", ":"),
            sort_keys=True,
        ).encode("utf-8")
        header = len(payload).to_bytes(4, "big") + zlib.crc32(payload).to_bytes(4, "big")
        return header + payload


@dataclass(frozen=True)
class ScanSubmission:
    submission_id: str
    patient_id: str
    image_ref: str
    submitted_at: datetime
    status: ScanStatus = ScanStatus.PENDING
    resolved_payload: dict | None = None


@dataclass(frozen=True)
class TransitionRecord:
    dose_event_id: str
    state: DoseState
    at: datetime
    classification: str | None = None


@dataclass
class Repository:
    """Live state: the fold of the event log."""

    profiles: dict[str, PatientProfile] = field(default_factory=dict)
    tokens: dict[str, str] = field(default_factory=dict)
    medications: dict[str, Medication] = field(default_factory=dict)
    schedules: dict[str, DoseSchedule] = field(default_factory=dict)
    schedules_by_patient: dict[str, list[str]] = field(default_factory=dict)
    dose_events: dict[str, DoseEvent] = field(default_factory=dict)
    dose_patient: dict[str, str] = field(default_factory=dict)
    pending: set[str] = field(default_factory=set)
    pushes_sent: dict[str, int] = field(default_factory=dict)
    reached_email: set[str] = field(default_factory=set)
    email_days: set[tuple[str, date]] = field(default_factory=set)
    transitions: list[TransitionRecord] = field(default_factory=list)
    intakes: dict[str, IntakeRecord] = field(default_factory=dict)
    first_ack: dict[tuple[str, date], datetime] = field(default_factory=dict)
    notifications: list[NotificationRecord] = field(default_factory=list)
    voice_slots: dict[tuple[str, date], datetime] = field(default_factory=dict)
    caregiver_done: set[tuple[str, date]] = field(default_factory=set)
    flags: list[Flag] = field(default_factory=list)
    provider_flag_weeks: set[tuple[str, int, int]] = field(default_factory=set)
    scans: dict[str, ScanSubmission] = field(default_factory=dict)
    materialized: set[tuple[str, str]] = field(default_factory=set)
    watermark: datetime | None = None
    origin: datetime | None = None
    counters: dict[str, int] = field(default_factory=dict)

    # -- lookups ------------------------------------------------------------

    def patient_of_schedule(self, schedule_id: str) -> str:
        schedule = self.schedules[schedule_id]
        return self.medications[schedule.medication_id].patient_id

    def patient_tz(self, patient_id: str) -> ZoneInfo:
        return self.profiles[patient_id].tzinfo()

    def medication_of_dose(self, dose_event_id: str) -> Medication:
        schedule = self.schedules[self.dose_events[dose_event_id].schedule_id]
        return self.medications[schedule.medication_id]

    def _bump_counter(self, opaque_id: str) -> None:
        prefix, _, num = opaque_id.rpartition("-")
        if prefix and num.isdigit():
            current = self.counters.get(prefix, 0)
            self.counters[prefix] = max(current, int(num) + 1)

    def _note_origin(self, at: datetime) -> None:
        if self.origin is None or at < self.origin:
            self.origin = at

    # -- fold ---------------------------------------------------------------

    def apply(self, event: Event) -> None:
        handler = getattr(self, f"_apply_{event.kind}", None)
        if handler is None:
            raise ValueError(f"unknown event kind {event.kind!r}")
        handler(event.data)

    def _apply_profile_upserted(self, d: dict) -> None:
        profile = wire.decode_profile(d["profile"])
        self.profiles[profile.patient_id] = profile
        if d.get("token"):
            self.tokens[profile.patient_id] = d["token"]
        self.schedules_by_patient.setdefault(profile.patient_id, [])
        self._bump_counter(profile.patient_id)
        self._note_origin(wire.decode_dt(d["at"]))

    def _apply_meds_loaded(self, d: dict) -> None:
        for item in d["items"]:
            med = wire.decode_medication(item["medication"])
            schedule = wire.decode_schedule(item["schedule"])
            self.medications[med.medication_id] = med
            self.schedules[schedule.schedule_id] = schedule
            self.schedules_by_patient.setdefault(med.patient_id, []).append(
                schedule.schedule_id
            )
            self._bump_counter(med.medication_id)
            self._bump_counter(schedule.schedule_id)
        self._note_origin(wire.decode_dt(d["at"]))

    def _apply_doses_materialized(self, d: dict) -> None:
        self.materialized.add((d["schedule_id"], d["date"]))
        patient_id = self.patient_of_schedule(d["schedule_id"])
        for raw in d["events"]:
            event = wire.decode_dose_event(raw)
            if event.dose_event_id in self.dose_events:
                continue
            self.dose_events[event.dose_event_id] = event
            self.dose_patient[event.dose_event_id] = patient_id
            self.pending.add(event.dose_event_id)

    def _apply_scan_submitted(self, d: dict) -> None:
        sub = ScanSubmission(
            submission_id=d["submission_id"],
            patient_id=d["patient_id"],
            image_ref=d["image_ref"],
            submitted_at=wire.decode_dt(d["at"]),
        )
        self.scans[sub.submission_id] = sub
        self._bump_counter(sub.submission_id)
        self._note_origin(sub.submitted_at)

    def _apply_scan_transcribed(self, d: dict) -> None:
        sub = self.scans[d["submission_id"]]
        self.scans[sub.submission_id] = replace(
            sub, status=ScanStatus.TRANSCRIBED, resolved_payload=d.get("payload")
        )

    def _apply_scan_rejected(self, d: dict) -> None:
        sub = self.scans[d["submission_id"]]
        self.scans[sub.submission_id] = replace(sub, status=ScanStatus.REJECTED)

    def _apply_medication_stopped(self, d: dict) -> None:
        med = self.medications[d["medication_id"]]
        at = wire.decode_dt(d["at"])
        self.medications[med.medication_id] = replace(
            med,
            status=MedicationStatus.STOPPED,
            stop_reason=d["reason"],
            stopped_at=at,
        )
        for dose_id in d["cancelled_dose_ids"]:
            self.dose_events.pop(dose_id, None)
            self.dose_patient.pop(dose_id, None)
            self.pending.discard(dose_id)

    def _apply_clock_advanced(self, d: dict) -> None:
        self.watermark = wire.decode_dt(d["now"])

    def _apply_push_slot_fired(self, d: dict) -> None:
        dose_id = d["dose_event_id"]
        self.pushes_sent[dose_id] = self.pushes_sent.get(dose_id, 0) + 1

    def _apply_dose_transitioned(self, d: dict) -> None:
        dose_id = d["dose_event_id"]
        state = DoseState(d["state"])
        at = wire.decode_dt(d["at"])
        event = self.dose_events[dose_id]
        self.dose_events[dose_id] = replace(event, state=state)
        self.transitions.append(
            TransitionRecord(dose_id, state, at, d.get("classification"))
        )
        if state is DoseState.NOTIFIED_EMAIL:
            self.reached_email.add(dose_id)
            patient_id = self.dose_patient[dose_id]
            local_day = at.astimezone(self.patient_tz(patient_id)).date()
            self.email_days.add((patient_id, local_day))
        if state in (DoseState.ACKNOWLEDGED, DoseState.MISSED):
            self.pending.discard(dose_id)

    def _apply_intake_recorded(self, d: dict) -> None:
        record = wire.decode_intake(d["record"])
        self.intakes[record.dose_event_id] = record
        patient_id = self.dose_patient[record.dose_event_id]
        day = record.acknowledged_at.astimezone(self.patient_tz(patient_id)).date()
        key = (patient_id, day)
        if key not in self.first_ack or record.acknowledged_at < self.first_ack[key]:
            self.first_ack[key] = record.acknowledged_at

    def _apply_notification_recorded(self, d: dict) -> None:
        record = wire.decode_notification(d["record"])
        self.notifications.append(record)
        self._bump_counter(record.notification_id)
        if record.dose_event_id and record.dose_event_id in self.dose_events:
            event = self.dose_events[record.dose_event_id]
            self.dose_events[record.dose_event_id] = replace(
                event, escalation_log=event.escalation_log + (record.notification_id,)
            )

    def _apply_voice_slot_fired(self, d: dict) -> None:
        key = (d["patient_id"], date.fromisoformat(d["date"]))
        self.voice_slots[key] = wire.decode_dt(d["at"])

    def _apply_caregiver_stage_fired(self, d: dict) -> None:
        self.caregiver_done.add((d["patient_id"], date.fromisoformat(d["date"])))

    def _apply_flag_raised(self, d: dict) -> None:
        flag = wire.decode_flag(d["flag"])
        self.flags.append(flag)
        self._bump_counter(flag.flag_id)
        if flag.kind is FlagKind.PROVIDER_FLAG:
            year, week = d["iso_year"], d["iso_week"]
            self.provider_flag_weeks.add((flag.patient_id, year, week))


class Store:
    """Event log plus its folded Repository.

    Mutating operations stage events (staged events are already applied to
    the repository) and a top-level step calls commit() to write the whole
    batch with one write. A crash before commit loses the in-memory batch
    coherently; the log never contains half a step.
    """

    def __init__(self, path: str | Path | None = None, *, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self.repo = Repository()
        self._staged: list[Event] = []
        self._seq = 0
        self._fh = None
        if self.path is not None:
            new = not self.path.exists() or self.path.stat().st_size == 0
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "ab")
            if new:
                self._fh.write(MAGIC)
                self._fh.flush()

    @classmethod
    def load(cls, path: str | Path, *, fsync: bool = False) -> "Store":
        events = read_log(path)
        store = cls(path, fsync=fsync)
        for event in events:
            store.repo.apply(event)
            store._seq = event.seq
        return store

    def next_id(self, prefix: str) -> str:
        n = self.repo.counters.get(prefix, 1)
        self.repo.counters[prefix] = n + 1
        return f"{prefix}-{n:06d}"

    def stage(self, kind: str, data: dict) -> Event:
        self._seq += 1
        event = Event(self._seq, kind, data)
        self.repo.apply(event)
        self._staged.append(event)
        return event

    def commit(self) -> None:
        if not self._staged:
            return
        batch = b"".join(event.to_bytes() for event in self._staged)
        self._staged = []
        if self._fh is not None:
            self._fh.write(batch)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def snapshot(self) -> Repository:
        """Consistent read view: staged events included, later ones not."""
        view = Repository()
        for name in Repository.__dataclass_fields__:
            value = getattr(self.repo, name)
            if name == "schedules_by_patient":
                value = {k: list(v) for k, v in value.items()}
            elif isinstance(value, dict):
                value = dict(value)
            elif isinstance(value, list):
                value = list(value)
            elif isinstance(value, set):
                value = set(value)
            setattr(view, name, value)
        return view

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_log(path: str | Path) -> list[Event]:
    """Read every intact event; raises CorruptLogError on damage."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise CorruptLogError(0, "bad magic header")
    events: list[Event] = []
    offset = len(MAGIC)
    prev_seq = 0
    while offset < len(blob):
        if offset + _HEADER > len(blob):
            raise CorruptLogError(offset, "truncated record header")
        length = int.from_bytes(blob[offset : offset + 4], "big")
        crc = int.from_bytes(blob[offset + 4 : offset + 8], "big")
        start = offset + _HEADER
        if start + length > len(blob):
            raise CorruptLogError(offset, "truncated record payload")
        payload = blob[start : start + length]
        if zlib.crc32(payload) != crc:
            raise CorruptLogError(offset, "CRC mismatch")
        try:
            raw = json.loads(payload.decode("utf-8"))
            event = Event(raw["seq"], raw["kind"], raw["data"])
        except (ValueError, KeyError) as exc:
            raise CorruptLogError(offset, f"bad payload: {exc}") from exc
        if event.seq != prev_seq + 1:
            raise CorruptLogError(offset, f"sequence gap at {event.seq}")
        prev_seq = event.seq
        events.append(event)
        offset = start + length
    return events
