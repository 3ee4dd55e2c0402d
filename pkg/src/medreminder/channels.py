"""Render notification content and dispatch actions through transports.

Transports are a seam: real push/email/SMS/voice providers plug in behind
the Transport protocol. The repository ships recording and failure
injection transports only; a FAILED send is terminal for its action
(escalation itself is the retry mechanism).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Protocol

from .domain import (
    Channel,
    DeliveryOutcome,
    Medication,
    NotificationRecord,
    PatientProfile,
)
from .escalation import ActionKind, EscalationAction
from .store import Store

PUSH_BODY_LIMIT = 178

_ACTION_CHANNEL = {
    ActionKind.SEND_PUSH: Channel.PUSH,
    ActionKind.SEND_EMAIL: Channel.EMAIL,
    ActionKind.SEND_VOICE: Channel.VOICE,
    ActionKind.SEND_CAREGIVER_SMS: Channel.CAREGIVER_SMS,
}


@dataclass(frozen=True)
class OutboundMessage:
    channel: Channel
    target: str
    body: str
    patient_id: str
    subject: str | None = None
    dose_event_id: str | None = None


class Transport(Protocol):
    def send(self, message: OutboundMessage) -> DeliveryOutcome: ...


@dataclass
class RecordingTransport:
    """Test transport: records every message with a receive timestamp."""

    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    sent: list[tuple[OutboundMessage, datetime]] = field(default_factory=list)

    def send(self, message: OutboundMessage) -> DeliveryOutcome:
        self.sent.append((message, self.clock()))
        return DeliveryOutcome.DELIVERED


@dataclass
class FailingTransport:
    """Failure injection: every send fails but is still recorded."""

    sent: list[OutboundMessage] = field(default_factory=list)

    def send(self, message: OutboundMessage) -> DeliveryOutcome:
        self.sent.append(message)
        return DeliveryOutcome.FAILED


def recording_transports() -> dict[Channel, RecordingTransport]:
    return {channel: RecordingTransport() for channel in Channel}


def resolve_target(channel: Channel, profile: PatientProfile) -> str | None:
    if channel is Channel.PUSH:
        return f"app:{profile.patient_id}"
    if channel is Channel.EMAIL:
        return profile.email
    if channel is Channel.VOICE:
        return profile.phone
    return profile.caregiver_phone


def render(
    action: EscalationAction,
    profile: PatientProfile,
    med: Medication | None = None,
    due_local: datetime | None = None,
) -> OutboundMessage | None:
    """Build the message for a SEND_* action, or None when the channel's
    contact point is missing (caller records SKIPPED_NO_TARGET)."""
    channel = _ACTION_CHANNEL[action.kind]
    target = resolve_target(channel, profile)
    if not target:
        return None
    if channel in (Channel.PUSH, Channel.EMAIL):
        when = due_local.strftime("%H:%M") if due_local else "today"
        what = f"{med.name} {med.strength}".strip() if med else "your medication"
        if channel is Channel.PUSH:
            body = f"Time to take {what}, due {when}. Tap to log your intake."
            return OutboundMessage(
                channel=channel,
                target=target,
                body=body[:PUSH_BODY_LIMIT],
                patient_id=action.patient_id,
                dose_event_id=action.dose_event_id,
            )
        body = (
            f"Hello {profile.display_name},\n\n"
            f"{what} was due at {when} and has not been logged as taken. "
            "Please take it and log the intake in the app.\n"
        )
        return OutboundMessage(
            channel=channel,
            target=target,
            body=body,
            patient_id=action.patient_id,
            subject=f"Medication reminder: {what}",
            dose_event_id=action.dose_event_id,
        )
    if channel is Channel.VOICE:
        body = (
            "This is your medication reminder service. Scheduled medication "
            "for today has not been logged. Please take your medication and "
            "log it in the app."
        )
        return OutboundMessage(
            channel=channel, target=target, body=body, patient_id=action.patient_id
        )
    body = (
        f"{profile.display_name} has scheduled medication that was not logged "
        "as taken today. Please check in with them."
    )
    return OutboundMessage(
        channel=channel, target=target, body=body, patient_id=action.patient_id
    )


def dispatch(
    actions: list[EscalationAction],
    store: Store,
    transports: dict[Channel, Transport],
) -> list[NotificationRecord]:
    """One NotificationRecord per SEND_* action, preserving order.

    Flag and missed actions are state changes the engine already recorded;
    they pass through untouched. Transport failures are recorded and do not
    stop later actions.
    """
    repo = store.repo
    records: list[NotificationRecord] = []
    for action in actions:
        channel = _ACTION_CHANNEL.get(action.kind)
        if channel is None:
            continue
        profile = repo.profiles[action.patient_id]
        med = None
        due_local = None
        if action.dose_event_id is not None:
            med = repo.medication_of_dose(action.dose_event_id)
            due_at = repo.dose_events[action.dose_event_id].due_at
            due_local = due_at.astimezone(profile.tzinfo())
        message = render(action, profile, med, due_local)
        if message is None:
            outcome = DeliveryOutcome.SKIPPED_NO_TARGET
            target = ""
        else:
            outcome = transports[channel].send(message)
            target = message.target
        records.append(
            NotificationRecord(
                notification_id=store.next_id("n"),
                patient_id=action.patient_id,
                dose_event_id=action.dose_event_id,
                channel=channel,
                sent_at=action.fire_at,
                target=target,
                outcome=outcome,
            )
        )
    return records
