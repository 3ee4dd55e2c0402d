from datetime import date, timedelta
from fractions import Fraction

import pytest

from medreminder import reporting
from medreminder.domain import DoseState, MedicationStatus
from medreminder.reporting import AlreadyStoppedError, ReportingError
from conftest import Harness, make_profile, nz

D = date(2026, 3, 2)


def fortnight_harness():
    """14 daily doses over two weeks: 9 on-time, 2 late, 3 missed.

    Expected adherence recomputed independently below: (9+2)/(9+2+3).
    """
    h = Harness()
    h.add_patient(make_profile(caregiver=None, phone=None), nz(2026, 3, 1, 12, 0))
    h.add_med("p1", ["08:00"], D, nz(2026, 3, 1, 12, 0), end=D + timedelta(days=13))
    plan = ["on"] * 9 + ["late"] * 2 + ["miss"] * 3
    for i, what in enumerate(plan):
        day = D + timedelta(days=i)
        dose = f"p1-s1:{day.isoformat()}T0800"
        if what == "on":
            h.ack(dose, nz(day.year, day.month, day.day, 8, 30))
        elif what == "late":
            h.ack(dose, nz(day.year, day.month, day.day, 10, 0))
    h.advance(nz(2026, 3, 16, 0, 0))
    return h


class TestBuildReport:
    def test_fourteen_event_rate_is_eleven_fourteenths(self):
        h = fortnight_harness()
        report = reporting.build_report(h.store, "p1", D, D + timedelta(days=13))
        # independent enumeration straight off the intake log
        on = late = 0
        for record in h.store.repo.intakes.values():
            if record.classification.value == "ON_TIME":
                on += 1
            else:
                late += 1
        missed = sum(
            1
            for e in h.store.repo.dose_events.values()
            if e.state is DoseState.MISSED
        )
        assert (on, late, missed) == (9, 2, 3)
        assert report.adherence_rate == Fraction(on + late, on + late + missed)
        assert report.adherence_rate == Fraction(11, 14)
        row = report.rows[0]
        assert (row.on_time, row.late, row.missed, row.pending) == (9, 2, 3, 0)

    def test_empty_range_all_zero(self):
        h = Harness()
        h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
        report = reporting.build_report(h.store, "p1", D, D)
        assert report.rows == ()
        assert report.adherence_rate == Fraction(0)

    def test_conservation_per_medication(self):
        h = fortnight_harness()
        report = reporting.build_report(h.store, "p1", D, D + timedelta(days=13))
        for row in report.rows:
            scheduled = sum(
                1
                for e in h.store.repo.dose_events.values()
                if e.schedule_id == "p1-s1"
                and D <= e.due_at.astimezone(make_profile().tzinfo()).date() <= D + timedelta(days=13)
            )
            assert row.on_time + row.late + row.missed + row.pending == scheduled

    def test_pending_events_excluded_from_rate(self):
        h = Harness()
        h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
        h.add_med("p1", ["08:00", "20:00"], D, nz(2026, 3, 1, 12, 0))
        h.advance(nz(2026, 3, 2, 9, 0))
        h.ack(f"p1-s1:{D.isoformat()}T0800", nz(2026, 3, 2, 9, 0))
        report = reporting.build_report(h.store, "p1", D, D)
        row = report.rows[0]
        assert row.pending == 1
        assert report.adherence_rate == Fraction(1, 1)

    def test_unknown_patient_rejected(self):
        h = Harness()
        with pytest.raises(ReportingError):
            reporting.build_report(h.store, "ghost", D, D)

    def test_red_flag_listed_with_context(self):
        h = Harness()
        h.add_patient(make_profile(caregiver=None), nz(2026, 3, 1, 12, 0))
        h.add_med("p1", ["08:00"], D, nz(2026, 3, 1, 12, 0))
        h.advance(nz(2026, 3, 3, 0, 0))
        report = reporting.build_report(h.store, "p1", D, D)
        assert len(report.flags) == 1
        assert "2026-03-02" in report.flags[0].context


class TestFlagStopped:
    def setup_harness(self):
        h = Harness()
        h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
        h.add_med("p1", ["08:00"], D, nz(2026, 3, 1, 12, 0), end=D + timedelta(days=6))
        h.advance(nz(2026, 3, 3, 10, 0))  # day 1 missed; day 2 dose pushed
        return h

    def test_stop_cancels_future_events_keeps_past(self):
        h = self.setup_harness()
        before = dict(h.store.repo.dose_events)
        med = reporting.flag_stopped(
            h.store, "p1-m1", "side effects", nz(2026, 3, 3, 10, 0)
        )
        assert med.status is MedicationStatus.STOPPED
        assert med.stop_reason == "side effects"
        assert med.stopped_at == nz(2026, 3, 3, 10, 0)
        # the missed day-1 dose and the in-flight day-2 dose survive
        assert f"p1-s1:2026-03-02T0800" in h.store.repo.dose_events
        assert f"p1-s1:2026-03-03T0800" in h.store.repo.dose_events
        assert len(h.store.repo.dose_events) <= len(before)
        # no further materialization after the stop
        h.advance(nz(2026, 3, 5, 12, 0))
        assert f"p1-s1:2026-03-04T0800" not in h.store.repo.dose_events
        assert f"p1-s1:2026-03-05T0800" not in h.store.repo.dose_events

    def test_in_flight_dose_still_escalates_after_stop(self):
        h = self.setup_harness()
        reporting.flag_stopped(h.store, "p1-m1", "", nz(2026, 3, 3, 10, 0))
        h.advance(nz(2026, 3, 4, 0, 0))
        assert (
            h.store.repo.dose_events["p1-s1:2026-03-03T0800"].state is DoseState.MISSED
        )

    def test_double_stop_rejected_with_current_state(self):
        h = self.setup_harness()
        reporting.flag_stopped(h.store, "p1-m1", "first", nz(2026, 3, 3, 10, 0))
        with pytest.raises(AlreadyStoppedError) as info:
            reporting.flag_stopped(h.store, "p1-m1", "second", nz(2026, 3, 3, 11, 0))
        assert info.value.medication.stop_reason == "first"

    def test_empty_reason_accepted(self):
        h = self.setup_harness()
        med = reporting.flag_stopped(h.store, "p1-m1", "", nz(2026, 3, 3, 10, 0))
        assert med.stop_reason == ""

    def test_stop_never_changes_past_intakes(self):
        h = self.setup_harness()
        h.ack("p1-s1:2026-03-03T0800", nz(2026, 3, 3, 10, 0))
        intakes_before = dict(h.store.repo.intakes)
        reporting.flag_stopped(h.store, "p1-m1", "done", nz(2026, 3, 3, 11, 0))
        assert h.store.repo.intakes == intakes_before

    def test_stopped_med_appears_in_report(self):
        h = self.setup_harness()
        reporting.flag_stopped(h.store, "p1-m1", "side effects", nz(2026, 3, 3, 10, 0))
        report = reporting.build_report(h.store, "p1", D, D + timedelta(days=6))
        assert [m.medication_id for m in report.stopped_medications] == ["p1-m1"]
        assert report.stopped_medications[0].stop_reason == "side effects"


class TestExport:
    def test_same_inputs_byte_identical(self):
        h = fortnight_harness()
        a = reporting.export_provider_report(h.store, "p1", D, D + timedelta(days=13))
        b = reporting.export_provider_report(h.store, "p1", D, D + timedelta(days=13))
        assert a == b

    def test_contains_stop_reason_and_frequency(self):
        h = Harness()
        h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
        h.add_med("p1", ["08:00", "20:00"], D, nz(2026, 3, 1, 12, 0))
        h.advance(nz(2026, 3, 2, 12, 0))
        reporting.flag_stopped(h.store, "p1-m1", "dizziness", nz(2026, 3, 2, 12, 0))
        doc = reporting.export_provider_report(h.store, "p1", D, D)
        assert "dizziness" in doc
        assert "08:00,20:00" in doc  # dose times = frequency
        assert "daily" in doc
        assert "500 mg" in doc

    def test_empty_report_is_valid_document(self):
        h = Harness()
        h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
        doc = reporting.export_provider_report(h.store, "p1", D, D)
        assert doc.startswith("PROVIDER ADHERENCE REPORT")
        assert "[MEDICATIONS]" in doc and "[FLAGS]" in doc
        assert "adherence_rate: 0" in doc
