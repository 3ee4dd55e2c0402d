from datetime import date, datetime, time, timezone

import pytest

from medreminder.domain import (
    DOSE_TRANSITIONS,
    DoseSchedule,
    DoseState,
    Medication,
    MedicationForm,
    MedicationSource,
    MedicationStatus,
    PatientProfile,
    parse_days,
    validate_medication,
    validate_profile,
    validate_schedule,
)


def profile(**kw) -> PatientProfile:
    base = dict(
        patient_id="p1",
        display_name="Pat",
        timezone="Pacific/Auckland",
    )
    base.update(kw)
    return PatientProfile(**base)


class TestValidateProfile:
    def test_optional_contacts_all_absent_is_ok(self):
        assert validate_profile(profile(email="a@b.c")).ok

    def test_unknown_timezone(self):
        result = validate_profile(profile(timezone="Not/AZone"))
        assert not result.ok
        assert any("timezone" in p for p in result.problems)

    def test_reminders_per_dose_boundary(self):
        result = validate_profile(profile(reminders_per_dose=0))
        assert any("reminders_per_dose" in p for p in result.problems)
        assert validate_profile(profile(reminders_per_dose=1)).ok

    @pytest.mark.parametrize("bad", ["0211234", "+0211", "21123456", "+64 21 123"])
    def test_phone_must_be_e164(self, bad):
        assert not validate_profile(profile(phone=bad)).ok
        assert not validate_profile(profile(caregiver_phone=bad)).ok

    @pytest.mark.parametrize("bad", ["nobody", "a@@b", "a@b@c"])
    def test_email_exactly_one_at(self, bad):
        assert not validate_profile(profile(email=bad)).ok

    def test_never_raises_collects_all(self):
        result = validate_profile(
            profile(timezone="Nope", phone="123", reminders_per_dose=0)
        )
        assert len(result.problems) == 3


class TestMedicationInvariants:
    def med(self, **kw):
        base = dict(
            medication_id="m1",
            patient_id="p1",
            name="Metformin",
            strength="500 mg",
            form=MedicationForm.TABLET,
            source=MedicationSource.MANUAL,
        )
        base.update(kw)
        return Medication(**base)

    def test_active_without_stopped_at(self):
        assert validate_medication(self.med()).ok

    def test_stopped_requires_stopped_at(self):
        bad = self.med(status=MedicationStatus.STOPPED)
        assert not validate_medication(bad).ok
        good = self.med(
            status=MedicationStatus.STOPPED,
            stopped_at=datetime(2026, 3, 1, tzinfo=timezone.utc),
            stop_reason="side effects",
        )
        assert validate_medication(good).ok

    def test_stopped_at_without_status_rejected(self):
        bad = self.med(stopped_at=datetime(2026, 3, 1, tzinfo=timezone.utc))
        assert not validate_medication(bad).ok

    def test_empty_name(self):
        assert not validate_medication(self.med(name="  ")).ok


class TestScheduleInvariants:
    def schedule(self, **kw):
        base = dict(
            schedule_id="s1",
            medication_id="m1",
            times_of_day=(time(8, 0), time(20, 0)),
            start_date=date(2026, 3, 2),
        )
        base.update(kw)
        return DoseSchedule(**base)

    def test_good(self):
        assert validate_schedule(self.schedule()).ok

    def test_times_strictly_increasing(self):
        assert not validate_schedule(
            self.schedule(times_of_day=(time(8), time(8)))
        ).ok
        assert not validate_schedule(
            self.schedule(times_of_day=(time(20), time(8)))
        ).ok

    def test_empty_times(self):
        assert not validate_schedule(self.schedule(times_of_day=())).ok

    def test_end_before_start(self):
        assert not validate_schedule(
            self.schedule(end_date=date(2026, 3, 1))
        ).ok

    def test_occurs_on_respects_weekday_subset(self):
        sched = self.schedule(days=(0, 2))  # Mon, Wed
        assert sched.occurs_on(date(2026, 3, 2))  # Monday
        assert not sched.occurs_on(date(2026, 3, 3))  # Tuesday
        assert sched.occurs_on(date(2026, 3, 4))  # Wednesday


class TestTransitionGraph:
    def test_terminal_states_have_no_exits(self):
        assert DOSE_TRANSITIONS[DoseState.ACKNOWLEDGED] == set()
        assert DOSE_TRANSITIONS[DoseState.MISSED] == set()

    def test_acknowledged_reachable_from_all_non_terminal(self):
        for state in (DoseState.SCHEDULED, DoseState.NOTIFIED_PUSH, DoseState.NOTIFIED_EMAIL):
            assert DoseState.ACKNOWLEDGED in DOSE_TRANSITIONS[state]

    def test_escalation_is_linear(self):
        assert DoseState.NOTIFIED_PUSH in DOSE_TRANSITIONS[DoseState.SCHEDULED]
        assert DoseState.NOTIFIED_EMAIL in DOSE_TRANSITIONS[DoseState.NOTIFIED_PUSH]
        assert DoseState.NOTIFIED_EMAIL not in DOSE_TRANSITIONS[DoseState.SCHEDULED]


def test_parse_days():
    assert parse_days("daily") is None
    assert parse_days(None) is None
    assert parse_days(["MON", "WED"]) == (0, 2)
    assert parse_days("FRI,MON") == (0, 4)
    with pytest.raises(ValueError):
        parse_days(["NOPE"])
