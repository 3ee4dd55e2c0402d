"""Scenario files: patients, medications, a behaviour script, a horizon.

The file is JSON mirroring the webform schema plus a script of timestamped
actions (ACK a dose, or NOOP). Script timestamps are patient-local
wall-clock; they must be non-decreasing as instants and inside the
horizon.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

from .. import scheduler, wire
from ..domain import (
    DoseSchedule,
    Medication,
    MedicationForm,
    MedicationSource,
    PatientProfile,
    parse_days,
    validate_profile,
    validate_medication,
    validate_schedule,
)
from ..scheduler import TimingConfig


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class ScenarioMedication:
    medication_id: str
    schedule_id: str
    name: str
    strength: str
    form: MedicationForm
    times_of_day: tuple[time, ...]
    start_date: date
    days: tuple[int, ...] | None = None
    end_date: date | None = None
    prescriber: str | None = None

    def as_domain(self, patient_id: str) -> tuple[Medication, DoseSchedule]:
        med = Medication(
            medication_id=self.medication_id,
            patient_id=patient_id,
            name=self.name,
            strength=self.strength,
            form=self.form,
            source=MedicationSource.WEBFORM,
            prescriber=self.prescriber,
        )
        schedule = DoseSchedule(
            schedule_id=self.schedule_id,
            medication_id=self.medication_id,
            times_of_day=self.times_of_day,
            days=self.days,
            start_date=self.start_date,
            end_date=self.end_date,
        )
        return med, schedule


@dataclass(frozen=True)
class ScenarioPatient:
    profile: PatientProfile
    medications: tuple[ScenarioMedication, ...]


@dataclass(frozen=True)
class ScriptAction:
    at: datetime  # UTC instant
    patient_id: str
    kind: str  # ACK | NOOP
    medication_id: str | None = None
    due_local: datetime | None = None  # naive local wall-clock of the dose


@dataclass(frozen=True)
class Scenario:
    horizon_start: date
    horizon_end: date
    patients: tuple[ScenarioPatient, ...]
    script: tuple[ScriptAction, ...]
    timing: TimingConfig = field(default_factory=TimingConfig)
    seed: int = 0
    name: str = ""

    def patient(self, patient_id: str) -> ScenarioPatient:
        for p in self.patients:
            if p.profile.patient_id == patient_id:
                return p
        raise ScenarioError(f"unknown patient {patient_id!r}")

    def end_boundary(self) -> datetime:
        """Instant the run stops: the latest patient-local midnight closing
        the last horizon day."""
        return max(
            scheduler.day_start(self.horizon_end + timedelta(days=1), p.profile.tzinfo())
            for p in self.patients
        )

    def setup_instant(self, patient: ScenarioPatient) -> datetime:
        """Profiles and medications load one second before the horizon opens."""
        return scheduler.day_start(self.horizon_start, patient.profile.tzinfo()) - timedelta(
            seconds=1
        )


def _parse_timing(raw: dict | None) -> TimingConfig:
    if not raw:
        return TimingConfig()
    cfg = TimingConfig(
        email_delay=timedelta(minutes=raw.get("email_delay_minutes", 30)),
        on_time_window=timedelta(minutes=raw.get("on_time_window_minutes", 60)),
        caregiver_delay_after_voice=timedelta(
            minutes=raw.get("caregiver_delay_minutes", 60)
        ),
    )
    cfg.validate()
    return cfg


def parse_scenario(raw: dict) -> Scenario:
    try:
        horizon = raw["horizon"]
        start = date.fromisoformat(horizon["start"])
        end = date.fromisoformat(horizon["end"])
    except KeyError as exc:
        raise ScenarioError(f"missing horizon field: {exc}") from exc
    if end < start:
        raise ScenarioError("horizon end before start")

    patients = []
    for praw in raw.get("patients", ()):
        profile = PatientProfile(
            patient_id=praw["patient_id"],
            display_name=praw.get("display_name", praw["patient_id"]),
            timezone=praw.get("timezone", "Pacific/Auckland"),
            phone=praw.get("phone"),
            email=praw.get("email"),
            caregiver_phone=praw.get("caregiver_phone"),
            daily_check_time=wire.decode_time(praw.get("daily_check_time", "20:00")),
            reminders_per_dose=int(praw.get("reminders_per_dose", 1)),
        )
        result = validate_profile(profile)
        if not result.ok:
            raise ScenarioError(
                f"invalid profile {profile.patient_id}: {'; '.join(result.problems)}"
            )
        meds = []
        for mraw in praw.get("medications", ()):
            med = ScenarioMedication(
                medication_id=mraw["medication_id"],
                schedule_id=mraw["schedule_id"],
                name=mraw["name"],
                strength=mraw.get("strength", ""),
                form=MedicationForm(str(mraw.get("form", "OTHER")).upper()),
                times_of_day=tuple(
                    wire.decode_time(t) for t in mraw["times_of_day"]
                ),
                days=parse_days(mraw.get("days")),
                start_date=date.fromisoformat(mraw["start_date"]),
                end_date=(
                    date.fromisoformat(mraw["end_date"])
                    if mraw.get("end_date")
                    else None
                ),
                prescriber=mraw.get("prescriber"),
            )
            dmed, dsched = med.as_domain(profile.patient_id)
            problems = validate_medication(dmed).problems + validate_schedule(dsched).problems
            if problems:
                raise ScenarioError(
                    f"invalid medication {med.medication_id}: {'; '.join(problems)}"
                )
            meds.append(med)
        patients.append(ScenarioPatient(profile=profile, medications=tuple(meds)))
    if not patients:
        raise ScenarioError("scenario has no patients")

    by_id = {p.profile.patient_id: p for p in patients}
    if len(by_id) != len(patients):
        raise ScenarioError("duplicate patient_id")

    script = []
    default_patient = patients[0].profile.patient_id
    for sraw in raw.get("script", ()):
        patient_id = sraw.get("patient_id", default_patient)
        if patient_id not in by_id:
            raise ScenarioError(f"script references unknown patient {patient_id!r}")
        tz = by_id[patient_id].profile.tzinfo()
        at_local = datetime.fromisoformat(sraw["at"])
        if at_local.tzinfo is not None:
            raise ScenarioError("script timestamps are naive local wall-clock")
        at = scheduler.local_to_utc(at_local.date(), at_local.timetz(), tz)
        kind = sraw.get("action", "NOOP").upper()
        if kind not in ("ACK", "NOOP"):
            raise ScenarioError(f"unknown script action {kind!r}")
        medication_id = None
        due_local = None
        if kind == "ACK":
            dose = sraw.get("dose") or {}
            medication_id = dose.get("medication")
            due_local = datetime.fromisoformat(dose["due"])
            if medication_id not in {
                m.medication_id for m in by_id[patient_id].medications
            }:
                raise ScenarioError(
                    f"script references unknown medication {medication_id!r}"
                )
        script.append(
            ScriptAction(
                at=at,
                patient_id=patient_id,
                kind=kind,
                medication_id=medication_id,
                due_local=due_local,
            )
        )

    scenario = Scenario(
        horizon_start=start,
        horizon_end=end,
        patients=tuple(patients),
        script=tuple(script),
        timing=_parse_timing(raw.get("timing")),
        seed=int(raw.get("seed", 0)),
        name=raw.get("name", ""),
    )
    _validate_script(scenario)
    return scenario


def _validate_script(scenario: Scenario) -> None:
    start_instants = [
        scheduler.day_start(scenario.horizon_start, p.profile.tzinfo())
        for p in scenario.patients
    ]
    lo, hi = min(start_instants), scenario.end_boundary()
    last = None
    for action in scenario.script:
        if last is not None and action.at < last:
            raise ScenarioError("script timestamps must be non-decreasing")
        last = action.at
        if not (lo <= action.at <= hi):
            raise ScenarioError(
                f"script timestamp {action.at.isoformat()} outside horizon"
            )


def load_scenario(path: str | Path) -> Scenario:
    raw = json.loads(Path(path).read_text())
    return parse_scenario(raw)


def resolve_dose_id(scenario: Scenario, action: ScriptAction) -> str:
    """Deterministic dose id for an ACK's (medication, local due) reference."""
    patient = scenario.patient(action.patient_id)
    for med in patient.medications:
        if med.medication_id == action.medication_id:
            if action.due_local.timetz() not in med.times_of_day:
                raise ScenarioError(
                    f"dose time {action.due_local} not in schedule of {med.medication_id}"
                )
            return scheduler.dose_event_id(
                med.schedule_id, action.due_local.date(), action.due_local.timetz()
            )
    raise ScenarioError(f"unknown medication {action.medication_id!r}")
