"""Shared builders for engine-level and scenario-level tests."""

from __future__ import annotations

from datetime import date, datetime, time, timezone
from zoneinfo import ZoneInfo

import pytest

from medreminder import wire
from medreminder.domain import PatientProfile
from medreminder.escalation import EscalationEngine
from medreminder.scheduler import TimingConfig, local_to_utc
from medreminder.store import Store

NZ = ZoneInfo("Pacific/Auckland")
UTC = timezone.utc


def nz(y, m, d, hh=0, mm=0) -> datetime:
    """UTC instant of an NZ wall-clock time."""
    return local_to_utc(date(y, m, d), time(hh, mm), NZ)


def make_profile(
    patient_id="p1",
    phone="+64211111111",
    email="p1@example.test",
    caregiver="+64222222222",
    check="20:00",
    reminders=1,
    tz="Pacific/Auckland",
) -> PatientProfile:
    return PatientProfile(
        patient_id=patient_id,
        display_name=f"Patient {patient_id}",
        timezone=tz,
        phone=phone,
        email=email,
        caregiver_phone=caregiver,
        daily_check_time=time.fromisoformat(check),
        reminders_per_dose=reminders,
    )


class Harness:
    """Store + engine with helpers to stage patients and medications."""

    def __init__(self, cfg: TimingConfig | None = None, path=None):
        self.store = Store(path)
        self.cfg = cfg or TimingConfig()
        self.engine = EscalationEngine(self.store, self.cfg)
        self._med_n = 0

    def add_patient(self, profile: PatientProfile, at: datetime) -> None:
        self.store.stage(
            "profile_upserted",
            {"profile": wire.encode_profile(profile), "at": wire.encode_dt(at)},
        )
        self.store.commit()

    def add_med(
        self,
        patient_id: str,
        times: list[str],
        start: date,
        at: datetime,
        name="Metformin",
        strength="500 mg",
        days=None,
        end=None,
    ):
        self._med_n += 1
        med_id = f"{patient_id}-m{self._med_n}"
        sched_id = f"{patient_id}-s{self._med_n}"
        item = {
            "medication": {
                "medication_id": med_id,
                "patient_id": patient_id,
                "name": name,
                "strength": strength,
                "form": "TABLET",
                "source": "WEBFORM",
                "status": "ACTIVE",
            },
            "schedule": {
                "schedule_id": sched_id,
                "medication_id": med_id,
                "times_of_day": times,
                "days": days or "daily",
                "start_date": start.isoformat(),
                "end_date": end.isoformat() if end else None,
            },
        }
        self.store.stage(
            "meds_loaded", {"source": "WEBFORM", "at": wire.encode_dt(at), "items": [item]}
        )
        self.engine.materialize_on_ingest(patient_id, at)
        self.store.commit()
        return med_id, sched_id

    def advance(self, now: datetime):
        actions = self.engine.advance(now)
        self.store.commit()
        return actions

    def ack(self, dose_id: str, at: datetime):
        self.advance(at)
        record = self.engine.acknowledge(dose_id, at)
        self.store.commit()
        return record


@pytest.fixture
def harness():
    return Harness()


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
