"""Transcript line formats shared by the engine runner, the service
runtime, and the oracle.

One line per event, fixed field order, chronological; designed for plain
textual diffing in CI. Timestamps render in the patient's local zone.
"""

from __future__ import annotations

from datetime import datetime
from typing import Callable, Iterable
from zoneinfo import ZoneInfo

from ..domain import AdherenceReport, Flag, NotificationRecord, days_label
from ..escalation import SEND_KINDS, ActionKind, EscalationAction
from ..wire import encode_time


def ts(instant: datetime, tz: ZoneInfo) -> str:
    return instant.astimezone(tz).isoformat()


def notify_line(
    instant: datetime,
    tz: ZoneInfo,
    channel: str,
    patient_id: str,
    dose_event_id: str | None,
    target: str,
    outcome: str,
) -> str:
    return (
        f"{ts(instant, tz)} NOTIFY channel={channel} patient={patient_id}"
        f" dose={dose_event_id or '-'} target={target or '-'} outcome={outcome}"
    )


def state_line(
    instant: datetime,
    tz: ZoneInfo,
    patient_id: str,
    dose_event_id: str,
    state: str,
    classification: str | None = None,
) -> str:
    line = (
        f"{ts(instant, tz)} STATE patient={patient_id}"
        f" dose={dose_event_id} state={state}"
    )
    if classification:
        line += f" classification={classification}"
    return line


def flag_line(
    instant: datetime, tz: ZoneInfo, patient_id: str, kind: str, context: str
) -> str:
    return f"{ts(instant, tz)} FLAG kind={kind} patient={patient_id} context={context}"


def action_lines(
    actions: Iterable[EscalationAction],
    records: Iterable[NotificationRecord],
    new_flags: Iterable[Flag],
    tz_of: Callable[[str], ZoneInfo],
    pushed: set[str],
) -> list[str]:
    """Production-ordered lines for one advance step.

    records must hold exactly one entry per SEND_* action, in order;
    new_flags one entry per RAISE_* action. `pushed` tracks doses whose
    first push already produced a state line.
    """
    lines: list[str] = []
    send_records = iter(records)
    flags = iter(new_flags)
    for action in actions:
        tz = tz_of(action.patient_id)
        if action.kind in SEND_KINDS:
            record = next(send_records)
            lines.append(
                notify_line(
                    action.fire_at,
                    tz,
                    record.channel.value,
                    action.patient_id,
                    action.dose_event_id,
                    record.target,
                    record.outcome.value,
                )
            )
            if action.kind is ActionKind.SEND_PUSH and action.dose_event_id not in pushed:
                pushed.add(action.dose_event_id)
                lines.append(
                    state_line(
                        action.fire_at,
                        tz,
                        action.patient_id,
                        action.dose_event_id,
                        "NOTIFIED_PUSH",
                    )
                )
            elif action.kind is ActionKind.SEND_EMAIL:
                lines.append(
                    state_line(
                        action.fire_at,
                        tz,
                        action.patient_id,
                        action.dose_event_id,
                        "NOTIFIED_EMAIL",
                    )
                )
        elif action.kind is ActionKind.MARK_MISSED:
            lines.append(
                state_line(
                    action.fire_at,
                    tz,
                    action.patient_id,
                    action.dose_event_id,
                    "MISSED",
                )
            )
        else:
            flag = next(flags)
            lines.append(
                flag_line(action.fire_at, tz, action.patient_id, flag.kind.value, flag.context)
            )
    return lines


def report_lines(report: AdherenceReport, tz: ZoneInfo) -> list[str]:
    lines = [
        f"REPORT patient={report.patient_id}"
        f" range={report.range_start.isoformat()}..{report.range_end.isoformat()}"
        f" adherence={report.adherence_rate}"
    ]
    for row in report.rows:
        med = row.medication
        times = ",".join(encode_time(t) for t in row.times_of_day)
        lines.append(
            f"ROW med={med.medication_id} name={med.name} times={times}"
            f" days={days_label(row.days)} on_time={row.on_time} late={row.late}"
            f" missed={row.missed} pending={row.pending}"
        )
    for med in report.stopped_medications:
        lines.append(
            f"STOPPED med={med.medication_id} name={med.name} reason={med.stop_reason or ''}"
        )
    for flag in report.flags:
        lines.append(
            f"FLAGROW kind={flag.kind.value} at={ts(flag.raised_at, tz)} context={flag.context}"
        )
    return lines
