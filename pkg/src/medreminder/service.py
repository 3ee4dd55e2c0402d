"""HTTP API over the engine plus the real-time clock driver.

Handlers are thin adapters: every behaviour is reproducible by driving the
engine directly with the same event sequence, and all mutations funnel
through a single lock into the per-patient serialized engine and the
single-writer store.

Auth: each patient gets a bearer token at sign-up; provider endpoints use
a static token from the config file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Header, HTTPException, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from . import channels, ingestion, reporting, scheduler, wire
from .domain import DoseState, validate_profile, PatientProfile
from .escalation import (
    AcknowledgementRejected,
    EscalationEngine,
    NonMonotonicClockError,
    UnknownDoseEventError,
)
from .ingestion import IngestionError, ScanStateError
from .reporting import AlreadyStoppedError, ReportingError
from .scheduler import TimingConfig
from .sim import transcript
from .store import Store

CONFIG_ENV = "MEDREMINDER_CONFIG"


@dataclass(frozen=True)
class ServiceConfig:
    port: int = 8000
    store_path: str = "data/events.log"
    blob_dir: str = "data/blobs"
    provider_token: str = "change-me-provider-token"
    transport: str = "recording"
    timing: TimingConfig = field(default_factory=TimingConfig)
    default_daily_check_time: time = time(20, 0)
    fsync: bool = False


def load_config(path: str | Path | None = None) -> ServiceConfig:
    """Read the JSON config file; MEDREMINDER_CONFIG overrides the path."""
    path = os.environ.get(CONFIG_ENV, path)
    if path is None:
        return ServiceConfig()
    raw = json.loads(Path(path).read_text())
    timing_raw = raw.get("timing", {})
    timing = TimingConfig(
        email_delay=timedelta(minutes=timing_raw.get("email_delay_minutes", 30)),
        on_time_window=timedelta(minutes=timing_raw.get("on_time_window_minutes", 60)),
        caregiver_delay_after_voice=timedelta(
            minutes=timing_raw.get("caregiver_delay_minutes", 60)
        ),
    )
    timing.validate()
    return ServiceConfig(
        port=int(raw.get("port", 8000)),
        store_path=raw.get("store_path", "data/events.log"),
        blob_dir=raw.get("blob_dir", "data/blobs"),
        provider_token=raw.get("provider_token", "change-me-provider-token"),
        transport=raw.get("transport", "recording"),
        timing=timing,
        default_daily_check_time=wire.decode_time(
            raw.get("default_daily_check_time", "20:00")
        ),
        fsync=bool(raw.get("fsync", False)),
    )


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


class Runtime:
    """Owns the store, engine, and transports behind one mutation lock."""

    def __init__(
        self,
        config: ServiceConfig,
        store: Store | None = None,
        clock: Callable[[], datetime] = _utcnow,
    ):
        self.config = config
        self.clock = clock
        if store is not None:
            self.store = store
        elif Path(config.store_path).exists():
            self.store = Store.load(config.store_path, fsync=config.fsync)
        else:
            self.store = Store(config.store_path, fsync=config.fsync)
        self.engine = EscalationEngine(self.store, config.timing)
        if config.transport == "failing":
            self.transports = {c: channels.FailingTransport() for c in channels.Channel}
        else:
            self.transports = channels.recording_transports()
        self.lock = threading.RLock()
        self.production: list[str] = []  # transcript of everything sent since start
        self._pushed: set[str] = set()

    # -- clock ----------------------------------------------------------------

    def _now(self) -> datetime:
        now = self.clock()
        watermark = self.store.repo.watermark
        if watermark is not None and now < watermark:
            return watermark  # wall clock regressed; stay monotone
        return now

    def step_to(self, now: datetime) -> list[str]:
        """Advance the engine, dispatch, and commit one atomic batch."""
        with self.lock:
            flags_before = len(self.store.repo.flags)
            actions = self.engine.advance(now)
            records = channels.dispatch(actions, self.store, self.transports)
            lines = transcript.action_lines(
                actions,
                records,
                self.store.repo.flags[flags_before:],
                lambda pid: self.store.repo.patient_tz(pid),
                self._pushed,
            )
            for record in records:
                self.store.stage(
                    "notification_recorded",
                    {"record": wire.encode_notification(record)},
                )
            self.store.commit()
            self.production.extend(lines)
            return lines

    def catch_up(self) -> datetime:
        now = self._now()
        self.step_to(now)
        return now

    def next_wakeup(self) -> datetime | None:
        with self.lock:
            return self.engine.next_wakeup()

    # -- mutations ------------------------------------------------------------

    def sign_up(self, raw: dict) -> tuple[PatientProfile, str]:
        with self.lock:
            now = self.catch_up()
            patient_id = self.store.next_id("p")
            profile = PatientProfile(
                patient_id=patient_id,
                display_name=raw.get("display_name", ""),
                timezone=raw.get("timezone", "Pacific/Auckland"),
                phone=raw.get("phone"),
                email=raw.get("email"),
                caregiver_phone=raw.get("caregiver_phone"),
                daily_check_time=wire.decode_time(
                    raw.get(
                        "daily_check_time",
                        wire.encode_time(self.config.default_daily_check_time),
                    )
                ),
                reminders_per_dose=int(raw.get("reminders_per_dose", 1)),
            )
            result = validate_profile(profile)
            if not result.ok:
                raise IngestionError({-1: list(result.problems)})
            token = secrets.token_hex(16)
            self.store.stage(
                "profile_upserted",
                {
                    "profile": wire.encode_profile(profile),
                    "token": token,
                    "at": wire.encode_dt(now),
                },
            )
            self.store.commit()
            return profile, token

    def update_profile(self, patient_id: str, raw: dict) -> PatientProfile:
        with self.lock:
            now = self.catch_up()
            current = self.store.repo.profiles[patient_id]
            merged = PatientProfile(
                patient_id=patient_id,
                display_name=raw.get("display_name", current.display_name),
                timezone=raw.get("timezone", current.timezone),
                phone=raw.get("phone", current.phone),
                email=raw.get("email", current.email),
                caregiver_phone=raw.get("caregiver_phone", current.caregiver_phone),
                daily_check_time=(
                    wire.decode_time(raw["daily_check_time"])
                    if "daily_check_time" in raw
                    else current.daily_check_time
                ),
                reminders_per_dose=int(
                    raw.get("reminders_per_dose", current.reminders_per_dose)
                ),
            )
            result = validate_profile(merged)
            if not result.ok:
                raise IngestionError({-1: list(result.problems)})
            self.store.stage(
                "profile_upserted",
                {"profile": wire.encode_profile(merged), "at": wire.encode_dt(now)},
            )
            self.store.commit()
            return merged

    def add_manual(self, patient_id: str, entry_raw: dict):
        with self.lock:
            now = self.catch_up()
            entry = ingestion.parse_entry(entry_raw)
            return ingestion.add_manual(self.store, self.engine, patient_id, entry, now)

    def load_webform(self, raw: dict):
        with self.lock:
            now = self.catch_up()
            payload = ingestion.parse_webform_payload(raw)
            return ingestion.load_webform(self.store, self.engine, payload, now)

    def submit_scan(self, patient_id: str, image_bytes: bytes):
        with self.lock:
            now = self.catch_up()
            blob_dir = Path(self.config.blob_dir)
            blob_dir.mkdir(parents=True, exist_ok=True)
            ref = hashlib.sha256(image_bytes).hexdigest()
            (blob_dir / ref).write_bytes(image_bytes)
            return ingestion.submit_scan(self.store, patient_id, ref, now)

    def transcribe_scan(self, submission_id: str, raw: dict):
        with self.lock:
            now = self.catch_up()
            payload = ingestion.parse_webform_payload(raw)
            return ingestion.transcribe_scan(
                self.store, self.engine, submission_id, payload, now
            )

    def reject_scan(self, submission_id: str):
        with self.lock:
            return ingestion.reject_scan(self.store, submission_id)

    def acknowledge(self, dose_event_id: str, at: datetime | None):
        with self.lock:
            now = self._now()
            if at is not None:
                if at > now:
                    raise AcknowledgementRejected("acknowledgement instant is in the future")
                watermark = self.store.repo.watermark
                if watermark is not None and at < watermark:
                    raise AcknowledgementRejected(
                        "acknowledgement instant is behind the service clock"
                    )
                now = at
            self.step_to(now)
            record = self.engine.acknowledge(dose_event_id, now)
            self.store.commit()
            event = self.store.repo.dose_events[dose_event_id]
            patient_id = self.store.repo.dose_patient[dose_event_id]
            if record.acknowledged_at == now and event.state is DoseState.ACKNOWLEDGED:
                self.production.append(
                    transcript.state_line(
                        record.acknowledged_at,
                        self.store.repo.patient_tz(patient_id),
                        patient_id,
                        dose_event_id,
                        "ACKNOWLEDGED",
                        record.classification.value,
                    )
                )
            return record

    def stop_medication(self, medication_id: str, reason: str):
        with self.lock:
            now = self.catch_up()
            return reporting.flag_stopped(self.store, medication_id, reason, now)

    # -- reads ------------------------------------------------------------

    def doses_for_day(self, patient_id: str, day: date) -> list[dict]:
        repo = self.store.repo
        tz = repo.patient_tz(patient_id)
        out = []
        for dose_id, event in repo.dose_events.items():
            if repo.dose_patient.get(dose_id) != patient_id:
                continue
            if scheduler.local_date_of(event.due_at, tz) != day:
                continue
            med = repo.medication_of_dose(dose_id)
            record = repo.intakes.get(dose_id)
            out.append(
                {
                    "dose_event_id": dose_id,
                    "medication_id": med.medication_id,
                    "medication": med.name,
                    "strength": med.strength,
                    "due_at": wire.encode_dt(event.due_at),
                    "due_local": event.due_at.astimezone(tz).isoformat(),
                    "state": event.state.value,
                    "classification": record.classification.value if record else None,
                }
            )
        out.sort(key=lambda d: (d["due_at"], d["dose_event_id"]))
        return out


def _report_json(report) -> dict:
    return {
        "patient_id": report.patient_id,
        "range": {
            "from": report.range_start.isoformat(),
            "to": report.range_end.isoformat(),
        },
        "adherence_rate": str(report.adherence_rate),
        "adherence_percent": round(float(report.adherence_rate) * 100, 1),
        "rows": [
            {
                "medication_id": row.medication.medication_id,
                "name": row.medication.name,
                "strength": row.medication.strength,
                "status": row.medication.status.value,
                "times_of_day": [wire.encode_time(t) for t in row.times_of_day],
                "on_time": row.on_time,
                "late": row.late,
                "missed": row.missed,
                "pending": row.pending,
            }
            for row in report.rows
        ],
        "stopped_medications": [
            {
                "medication_id": med.medication_id,
                "name": med.name,
                "stop_reason": med.stop_reason,
                "stopped_at": wire.encode_dt(med.stopped_at) if med.stopped_at else None,
            }
            for med in report.stopped_medications
        ],
        "flags": [wire.encode_flag(f) for f in report.flags],
    }


def create_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="medreminder", version="0.1.0")
    app.state.runtime = runtime

    def auth_patient(patient_id: str, authorization: str | None) -> None:
        token = _bearer(authorization)
        if token == runtime.config.provider_token:
            return
        if runtime.store.repo.tokens.get(patient_id) != token:
            raise HTTPException(status_code=403, detail="not allowed for this patient")

    def auth_provider(authorization: str | None) -> None:
        if _bearer(authorization) != runtime.config.provider_token:
            raise HTTPException(status_code=403, detail="provider token required")

    def _bearer(header: str | None) -> str:
        if not header or not header.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        return header.removeprefix("Bearer ")

    def _patient_or_404(patient_id: str):
        profile = runtime.store.repo.profiles.get(patient_id)
        if profile is None:
            raise HTTPException(status_code=404, detail="unknown patient")
        return profile

    @app.exception_handler(IngestionError)
    async def _ingestion_error(_, exc: IngestionError):
        return JSONResponse(
            status_code=422,
            content={
                "detail": str(exc),
                "problems": {str(k): v for k, v in exc.diagnostics.items()},
            },
        )

    @app.exception_handler(ScanStateError)
    async def _scan_error(_, exc: ScanStateError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "events": runtime.store.repo.watermark is not None}

    @app.post("/patients", status_code=201)
    async def sign_up(request: Request):
        profile, token = runtime.sign_up(await request.json())
        return {"patient": wire.encode_profile(profile), "token": token}

    @app.get("/patients/{patient_id}")
    def get_patient(patient_id: str, authorization: str | None = Header(None)):
        auth_patient(patient_id, authorization)
        return wire.encode_profile(_patient_or_404(patient_id))

    @app.put("/patients/{patient_id}")
    async def put_patient(
        patient_id: str, request: Request, authorization: str | None = Header(None)
    ):
        auth_patient(patient_id, authorization)
        _patient_or_404(patient_id)
        profile = runtime.update_profile(patient_id, await request.json())
        return wire.encode_profile(profile)

    @app.post("/patients/{patient_id}/medications", status_code=201)
    async def add_medication(
        patient_id: str, request: Request, authorization: str | None = Header(None)
    ):
        auth_patient(patient_id, authorization)
        _patient_or_404(patient_id)
        med, schedule = runtime.add_manual(patient_id, await request.json())
        return {
            "medication": wire.encode_medication(med),
            "schedule": wire.encode_schedule(schedule),
        }

    @app.post("/webform", status_code=201)
    async def webform(request: Request, authorization: str | None = Header(None)):
        raw = await request.json()
        auth_patient(str(raw.get("patient_id", "")), authorization)
        loaded = runtime.load_webform(raw)
        return {
            "loaded": [
                {
                    "medication": wire.encode_medication(med),
                    "schedule": wire.encode_schedule(schedule),
                }
                for med, schedule in loaded
            ]
        }

    @app.post("/patients/{patient_id}/scans", status_code=201)
    async def submit_scan(
        patient_id: str, request: Request, authorization: str | None = Header(None)
    ):
        auth_patient(patient_id, authorization)
        _patient_or_404(patient_id)
        body = await request.json()
        image_b64 = body.get("image", "")
        import base64

        try:
            image = base64.b64decode(image_b64, validate=True)
        except Exception:
            raise HTTPException(status_code=422, detail="image must be base64")
        sub = runtime.submit_scan(patient_id, image)
        return {
            "submission_id": sub.submission_id,
            "status": sub.status.value,
            "image_ref": sub.image_ref,
        }

    @app.post("/scans/{submission_id}/transcribe")
    async def transcribe(
        submission_id: str, request: Request, authorization: str | None = Header(None)
    ):
        auth_provider(authorization)
        sub = runtime.transcribe_scan(submission_id, await request.json())
        return {"submission_id": sub.submission_id, "status": sub.status.value}

    @app.post("/scans/{submission_id}/reject")
    def reject(submission_id: str, authorization: str | None = Header(None)):
        auth_provider(authorization)
        sub = runtime.reject_scan(submission_id)
        return {"submission_id": sub.submission_id, "status": sub.status.value}

    @app.get("/patients/{patient_id}/doses")
    def doses(
        patient_id: str,
        date: str = "",
        authorization: str | None = Header(None),
    ):
        auth_patient(patient_id, authorization)
        profile = _patient_or_404(patient_id)
        runtime.catch_up()
        if date:
            day = _parse_date(date)
        else:
            day = scheduler.local_date_of(runtime._now(), profile.tzinfo())
        return {"date": day.isoformat(), "doses": runtime.doses_for_day(patient_id, day)}

    @app.post("/doses/{dose_event_id}/ack")
    async def ack(
        dose_event_id: str, request: Request, authorization: str | None = Header(None)
    ):
        repo = runtime.store.repo
        patient_id = repo.dose_patient.get(dose_event_id)
        if patient_id is None:
            raise HTTPException(status_code=404, detail="unknown dose event")
        auth_patient(patient_id, authorization)
        body = await request.json() if await request.body() else {}
        at = wire.decode_dt(body["at"]) if body.get("at") else None
        try:
            record = runtime.acknowledge(dose_event_id, at)
        except UnknownDoseEventError:
            raise HTTPException(status_code=404, detail="unknown dose event")
        except (AcknowledgementRejected, NonMonotonicClockError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {
            "dose_event_id": record.dose_event_id,
            "acknowledged_at": wire.encode_dt(record.acknowledged_at),
            "classification": record.classification.value,
        }

    @app.post("/medications/{medication_id}/stop")
    async def stop(
        medication_id: str, request: Request, authorization: str | None = Header(None)
    ):
        med = runtime.store.repo.medications.get(medication_id)
        if med is None:
            raise HTTPException(status_code=404, detail="unknown medication")
        auth_patient(med.patient_id, authorization)
        body = await request.json() if await request.body() else {}
        try:
            stopped = reporting_stop(runtime, medication_id, body.get("reason", ""))
        except AlreadyStoppedError as exc:
            return JSONResponse(
                status_code=409,
                content={
                    "detail": str(exc),
                    "medication": wire.encode_medication(exc.medication),
                },
            )
        return wire.encode_medication(stopped)

    def reporting_stop(rt: Runtime, medication_id: str, reason: str):
        return rt.stop_medication(medication_id, reason)

    def _report_range(patient_id: str, from_: str, to: str) -> tuple[date, date]:
        profile = _patient_or_404(patient_id)
        runtime.catch_up()
        today = scheduler.local_date_of(runtime._now(), profile.tzinfo())
        start = _parse_date(from_) if from_ else today - timedelta(days=13)
        end = _parse_date(to) if to else today
        if end < start:
            raise HTTPException(status_code=422, detail="report range is empty")
        return start, end

    @app.get("/patients/{patient_id}/report")
    def report(
        patient_id: str,
        from_: str = Query("", alias="from"),
        to: str = "",
        authorization: str | None = Header(None),
    ):
        auth_patient(patient_id, authorization)
        start, end = _report_range(patient_id, from_, to)
        return _report_json(reporting.build_report(runtime.store, patient_id, start, end))

    @app.get("/provider/patients/{patient_id}/report", response_class=PlainTextResponse)
    def provider_report(
        patient_id: str,
        from_: str = Query("", alias="from"),
        to: str = "",
        authorization: str | None = Header(None),
    ):
        auth_provider(authorization)
        start, end = _report_range(patient_id, from_, to)
        return reporting.export_provider_report(runtime.store, patient_id, start, end)

    return app


def _parse_date(value: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise HTTPException(status_code=422, detail=f"bad date {value!r}")


def serve(config: ServiceConfig):
    """Start the service with the real-time clock driver."""
    import uvicorn

    runtime = Runtime(config)
    app = create_app(runtime)
    driver = ClockDriver(runtime)
    driver.start()
    try:
        uvicorn.run(app, host="0.0.0.0", port=config.port)
    finally:
        driver.stop()


class ClockDriver(threading.Thread):
    """Calls advance at each wakeup instant against the wall clock."""

    def __init__(self, runtime: Runtime, poll_seconds: float = 5.0):
        super().__init__(daemon=True)
        self.runtime = runtime
        self.poll_seconds = poll_seconds
        self._stop = threading.Event()

    def run(self) -> None:
        while not self._stop.is_set():
            now = self.runtime._now()
            wakeup = self.runtime.next_wakeup()
            if wakeup is not None and wakeup <= now:
                self.runtime.step_to(now)
                continue
            wait = self.poll_seconds
            if wakeup is not None:
                wait = min(wait, max(0.0, (wakeup - now).total_seconds()))
            self._stop.wait(wait)

    def stop(self) -> None:
        self._stop.set()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="medication reminder service")
    parser.add_argument("--config", default=None, help="path to JSON config")
    args = parser.parse_args(argv)
    serve(load_config(args.config))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
