import json
from datetime import date

import pytest

from medreminder.sim import (
    generate_scenario,
    generate_scenario_dict,
    load_scenario,
    oracle_replay,
    parse_scenario,
    run_scenario,
)
from medreminder.sim.cli import main as sim_main
from medreminder.sim.scenario import ScenarioError


def scenario_dict(times=("08:00",), script=(), caregiver="+64222222222", phone="+64211111111", days=1):
    end = date(2026, 3, 2).toordinal() + days - 1
    return {
        "horizon": {"start": "2026-03-02", "end": date.fromordinal(end).isoformat()},
        "patients": [
            {
                "patient_id": "p1",
                "display_name": "Pat",
                "timezone": "Pacific/Auckland",
                "phone": phone,
                "email": "p1@example.test",
                "caregiver_phone": caregiver,
                "daily_check_time": "20:00",
                "medications": [
                    {
                        "medication_id": "p1-m1",
                        "schedule_id": "p1-s1",
                        "name": "Metformin",
                        "strength": "500 mg",
                        "form": "TABLET",
                        "times_of_day": list(times),
                        "days": "daily",
                        "start_date": "2026-03-02",
                    }
                ],
            }
        ],
        "script": list(script),
    }


class TestRunScenario:
    def test_empty_scenario_empty_transcript(self):
        raw = scenario_dict()
        raw["patients"][0]["medications"] = []
        lines = run_scenario(parse_scenario(raw))
        assert [l for l in lines if not l.startswith("REPORT")] == []

    def test_never_acked_day_exact_ladder(self):
        lines = run_scenario(parse_scenario(scenario_dict()))
        events = [l.split(" ", 1)[1] for l in lines if not l.startswith(("REPORT", "ROW"))]
        assert events == [
            "NOTIFY channel=PUSH patient=p1 dose=p1-s1:2026-03-02T0800 target=app:p1 outcome=DELIVERED",
            "STATE patient=p1 dose=p1-s1:2026-03-02T0800 state=NOTIFIED_PUSH",
            "NOTIFY channel=EMAIL patient=p1 dose=p1-s1:2026-03-02T0800 target=p1@example.test outcome=DELIVERED",
            "STATE patient=p1 dose=p1-s1:2026-03-02T0800 state=NOTIFIED_EMAIL",
            "NOTIFY channel=VOICE patient=p1 dose=- target=+64211111111 outcome=DELIVERED",
            "NOTIFY channel=CAREGIVER_SMS patient=p1 dose=- target=+64222222222 outcome=DELIVERED",
            "STATE patient=p1 dose=p1-s1:2026-03-02T0800 state=MISSED",
        ]
        stamps = [l.split(" ", 1)[0] for l in lines if not l.startswith(("REPORT", "ROW"))]
        assert stamps == [
            "2026-03-02T08:00:00+13:00",
            "2026-03-02T08:00:00+13:00",
            "2026-03-02T08:30:00+13:00",
            "2026-03-02T08:30:00+13:00",
            "2026-03-02T20:00:00+13:00",
            "2026-03-02T21:00:00+13:00",
            "2026-03-03T00:00:00+13:00",
        ]

    def test_same_scenario_twice_byte_identical(self):
        scenario = parse_scenario(scenario_dict())
        assert run_scenario(scenario) == run_scenario(scenario)

    def test_ack_one_minute_before_email_suppresses_it(self):
        script = [
            {
                "at": "2026-03-02T08:29",
                "patient_id": "p1",
                "action": "ACK",
                "dose": {"medication": "p1-m1", "due": "2026-03-02T08:00"},
            }
        ]
        scenario = parse_scenario(scenario_dict(script=script))
        engine_lines = run_scenario(scenario)
        oracle_lines = oracle_replay(scenario)
        assert engine_lines == oracle_lines
        assert not any("channel=EMAIL" in l for l in engine_lines)

    def test_unknown_dose_reference_errors(self):
        script = [
            {
                "at": "2026-03-02T08:29",
                "patient_id": "p1",
                "action": "ACK",
                "dose": {"medication": "p1-m9", "due": "2026-03-02T08:00"},
            }
        ]
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_dict(script=script))

    def test_script_outside_horizon_rejected(self):
        script = [{"at": "2026-03-09T08:00", "patient_id": "p1", "action": "NOOP"}]
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_dict(script=script))

    def test_script_must_be_sorted(self):
        script = [
            {"at": "2026-03-02T10:00", "patient_id": "p1", "action": "NOOP"},
            {"at": "2026-03-02T09:00", "patient_id": "p1", "action": "NOOP"},
        ]
        with pytest.raises(ScenarioError):
            parse_scenario(scenario_dict(script=script))


class TestOracleEquivalence:
    def test_weekly_flag_in_both_transcripts(self):
        scenario = parse_scenario(scenario_dict(days=7, caregiver=None, phone=None))
        engine_lines = run_scenario(scenario)
        oracle_lines = oracle_replay(scenario)
        assert engine_lines == oracle_lines
        assert any("PROVIDER_FLAG" in l and " FLAG " in l for l in engine_lines)

    @pytest.mark.parametrize("seed", range(0, 40))
    def test_randomized_equivalence(self, seed):
        scenario = generate_scenario(7, 5, seed)
        assert run_scenario(scenario) == oracle_replay(scenario)

    def test_generator_is_deterministic(self):
        assert generate_scenario_dict(7, 5, 123) == generate_scenario_dict(7, 5, 123)


class TestCli:
    def write_scenario(self, tmp_path):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps(scenario_dict()))
        return path

    def test_run_writes_transcript(self, tmp_path, capsys):
        path = self.write_scenario(tmp_path)
        out = tmp_path / "transcript.txt"
        assert sim_main(["run", str(path), "--out", str(out)]) == 0
        text = out.read_text()
        assert "channel=PUSH" in text and text.endswith("\n")

    def test_verify_ok(self, tmp_path, capsys):
        path = self.write_scenario(tmp_path)
        assert sim_main(["verify", str(path)]) == 0
        assert "OK" in capsys.readouterr().out

    def test_gen_then_verify_roundtrip(self, tmp_path, capsys):
        gen_path = tmp_path / "gen.json"
        assert sim_main(["gen", "--days", "5", "--meds", "3", "--seed", "7", "--out", str(gen_path)]) == 0
        scenario = load_scenario(gen_path)
        assert scenario.patients
        assert sim_main(["verify", str(gen_path)]) == 0

    def test_run_stdout(self, tmp_path, capsys):
        path = self.write_scenario(tmp_path)
        assert sim_main(["run", str(path)]) == 0
        assert "NOTIFY" in capsys.readouterr().out
