"""Drive a scenario through the real engine on a virtual clock.

The run advances the engine to each script instant in turn, dispatches the
emitted actions through recording transports, applies the script action,
and finally advances to the horizon's closing midnight. The transcript is
the production-ordered event stream plus a closing adherence report per
patient; identical inputs produce identical bytes.
"""

from __future__ import annotations

from zoneinfo import ZoneInfo

from .. import channels, reporting, wire
from ..domain import MedicationSource
from ..escalation import (
    AcknowledgementRejected,
    EscalationEngine,
    UnknownDoseEventError,
)
from ..store import Store
from . import transcript
from .scenario import Scenario, resolve_dose_id

class ScenarioRun:
    """One scenario execution; exposes the transcript and the store."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.store = Store()
        self.engine = EscalationEngine(self.store, scenario.timing)
        self.transports = channels.recording_transports()
        self.lines: list[str] = []
        self._tz: dict[str, ZoneInfo] = {
            p.profile.patient_id: p.profile.tzinfo() for p in scenario.patients
        }
        self._pushed: set[str] = set()

    # -- setup ----------------------------------------------------------------

    def _load_patients(self) -> None:
        for patient in self.scenario.patients:
            at = wire.encode_dt(self.scenario.setup_instant(patient))
            self.store.stage(
                "profile_upserted",
                {"profile": wire.encode_profile(patient.profile), "at": at},
            )
            items = []
            for med in patient.medications:
                dmed, dsched = med.as_domain(patient.profile.patient_id)
                items.append(
                    {
                        "medication": wire.encode_medication(dmed),
                        "schedule": wire.encode_schedule(dsched),
                    }
                )
            if items:
                self.store.stage(
                    "meds_loaded",
                    {"source": MedicationSource.WEBFORM.value, "at": at, "items": items},
                )
        self.store.commit()

    # -- stepping ---------------------------------------------------------

    def _step(self, now) -> None:
        flags_before = len(self.store.repo.flags)
        actions = self.engine.advance(now)
        records = channels.dispatch(actions, self.store, self.transports)
        self.lines.extend(
            transcript.action_lines(
                actions,
                records,
                self.store.repo.flags[flags_before:],
                self._tz.__getitem__,
                self._pushed,
            )
        )
        for record in records:
            self.store.stage(
                "notification_recorded", {"record": wire.encode_notification(record)}
            )
        self.store.commit()

    def _acknowledge(self, action) -> None:
        dose_id = resolve_dose_id(self.scenario, action)
        before = len(self.store.repo.intakes)
        try:
            record = self.engine.acknowledge(dose_id, action.at)
        except (UnknownDoseEventError, AcknowledgementRejected):
            return
        self.store.commit()
        if len(self.store.repo.intakes) == before:
            return  # idempotent duplicate: no new record, no line
        self.lines.append(
            transcript.state_line(
                action.at,
                self._tz[action.patient_id],
                action.patient_id,
                dose_id,
                "ACKNOWLEDGED",
                record.classification.value,
            )
        )

    # -- entry point --------------------------------------------------------

    def run(self) -> list[str]:
        self._load_patients()
        for action in self.scenario.script:
            self._step(action.at)
            if action.kind == "ACK":
                self._acknowledge(action)
        self._step(self.scenario.end_boundary())
        for patient in self.scenario.patients:
            report = reporting.build_report(
                self.store,
                patient.profile.patient_id,
                self.scenario.horizon_start,
                self.scenario.horizon_end,
            )
            self.lines.extend(
                transcript.report_lines(report, patient.profile.tzinfo())
            )
        return self.lines


def run_scenario(scenario: Scenario) -> list[str]:
    return ScenarioRun(scenario).run()
