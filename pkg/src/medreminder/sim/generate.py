"""Seeded random scenario generator for equivalence and property testing.

Keeps every instant minute-aligned (the oracle's resolution) and skews the
start-date pool toward the Pacific/Auckland DST transitions so wall-clock
edge cases stay exercised.
"""

from __future__ import annotations

import random
from datetime import date, datetime, time, timedelta

from .. import scheduler
from ..scheduler import TimingConfig
from .scenario import Scenario, parse_scenario

TZ_NAME = "Pacific/Auckland"

# Mondays and mid-week anchors; the April/September entries straddle the
# 2026 NZ daylight-saving transitions (Apr 5 fall-back, Sep 27 spring-forward).
START_POOL = (
    date(2026, 3, 2),
    date(2026, 3, 5),
    date(2026, 6, 15),
    date(2026, 4, 1),
    date(2026, 4, 3),
    date(2026, 9, 23),
    date(2026, 9, 25),
    date(2026, 11, 9),
)

NAMES = ("Metformin", "Lisinopril", "Atorvastatin", "Aspirin", "Omeprazole", "Ramipril")
STRENGTHS = ("5 mg", "10 mg", "20 mg", "100 mg", "500 mg")
FORMS = ("TABLET", "CAPSULE", "LIQUID", "OTHER")


def generate_scenario_dict(days: int, meds: int, seed: int) -> dict:
    rng = random.Random(seed)
    n_days = rng.randint(1, max(1, days))
    start = rng.choice(START_POOL)
    end = start + timedelta(days=n_days - 1)

    n_patients = 2 if rng.random() < 0.25 else 1
    patients = []
    all_med_specs = []
    for p_index in range(1, n_patients + 1):
        pid = f"p{p_index}"
        n_meds = rng.randint(1, max(1, meds))
        med_specs = []
        for m_index in range(1, n_meds + 1):
            n_times = rng.randint(1, 3)
            grid = sorted(
                rng.sample(
                    [time(h, m) for h in range(6, 23) for m in (0, 15, 30, 45)],
                    n_times,
                )
            )
            if rng.random() < 0.06:
                grid = sorted(set(grid) | {time(2, 30)})  # DST gap candidate
            if rng.random() < 0.06:
                grid = sorted(set(grid) | {time(23, 30)})  # cutoff-straddling email
            days_pattern = "daily"
            if rng.random() < 0.2:
                picked = sorted(rng.sample(range(7), rng.randint(3, 6)))
                days_pattern = [
                    ("MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN")[d] for d in picked
                ]
            med_specs.append(
                {
                    "medication_id": f"{pid}-m{m_index}",
                    "schedule_id": f"{pid}-s{m_index}",
                    "name": rng.choice(NAMES),
                    "strength": rng.choice(STRENGTHS),
                    "form": rng.choice(FORMS),
                    "times_of_day": [t.strftime("%H:%M") for t in grid],
                    "days": days_pattern,
                    "start_date": start.isoformat(),
                    "end_date": None,
                }
            )
        patients.append(
            {
                "patient_id": pid,
                "display_name": f"Patient {p_index}",
                "timezone": TZ_NAME,
                "phone": f"+6421000{p_index:03d}" if rng.random() < 0.8 else None,
                "email": f"{pid}@example.test" if rng.random() < 0.85 else None,
                "caregiver_phone": f"+6427000{p_index:03d}" if rng.random() < 0.6 else None,
                "daily_check_time": rng.choice(("20:00", "19:30", "21:00", "12:30")),
                "reminders_per_dose": rng.choice((1, 1, 1, 2, 3)),
                "medications": med_specs,
            }
        )
        all_med_specs.append((pid, med_specs))

    raw = {
        "name": f"gen-{seed}",
        "seed": seed,
        "horizon": {"start": start.isoformat(), "end": end.isoformat()},
        "patients": patients,
        "script": [],
    }

    script = []
    scenario = parse_scenario(raw)
    for patient in scenario.patients:
        tz = patient.profile.tzinfo()
        for med in patient.medications:
            _, schedule = med.as_domain(patient.profile.patient_id)
            day = start
            while day <= end:
                if not schedule.occurs_on(day):
                    day += timedelta(days=1)
                    continue
                for slot in schedule.times_of_day:
                    if rng.random() >= 0.55:
                        continue
                    wall_due = datetime.combine(day, slot)
                    if rng.random() < 0.4:
                        offset = rng.randint(-30, 29)
                    else:
                        offset = rng.randint(30, 150)
                    ack_wall = wall_due + timedelta(minutes=offset)
                    # keep the acknowledgement inside the dose's local day
                    if ack_wall.date() > day:
                        ack_wall = datetime.combine(day, time(23, 59))
                    elif ack_wall.date() < day:
                        ack_wall = datetime.combine(day, time(0, 0))
                    entry = {
                        "at": ack_wall.isoformat(),
                        "patient_id": patient.profile.patient_id,
                        "action": "ACK",
                        "dose": {
                            "medication": med.medication_id,
                            "due": wall_due.isoformat(),
                        },
                    }
                    instant = scheduler.local_to_utc(ack_wall.date(), ack_wall.time(), tz)
                    script.append((instant, len(script), entry))
                    if rng.random() < 0.05:  # duplicate-ack coverage
                        script.append((instant, len(script), dict(entry)))
                day += timedelta(days=1)

    for _ in range(rng.randint(0, 2)):
        day_offset = rng.randint(0, n_days - 1)
        noop_day = start + timedelta(days=day_offset)
        noop_time = time(rng.randint(0, 23), rng.choice((0, 15, 30, 45)))
        tz = scenario.patients[0].profile.tzinfo()
        instant = scheduler.local_to_utc(noop_day, noop_time, tz)
        entry = {
            "at": datetime.combine(noop_day, noop_time).isoformat(),
            "patient_id": scenario.patients[0].profile.patient_id,
            "action": "NOOP",
        }
        script.append((instant, len(script), entry))

    script.sort(key=lambda item: (item[0], item[1]))
    raw["script"] = [entry for _, _, entry in script]
    return raw


def generate_scenario(days: int, meds: int, seed: int) -> Scenario:
    return parse_scenario(generate_scenario_dict(days, meds, seed))
