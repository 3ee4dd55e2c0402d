import random
from datetime import date

import pytest

from medreminder.store import MAGIC, CorruptLogError, Store, read_log
from conftest import Harness, make_profile, nz


def build_activity(path) -> Store:
    """A day of mixed activity against a file-backed store."""
    h = Harness(path=path)
    h.add_patient(make_profile(), nz(2026, 3, 1, 12, 0))
    h.add_med("p1", ["08:00", "20:00"], date(2026, 3, 2), nz(2026, 3, 1, 12, 0))
    h.advance(nz(2026, 3, 2, 9, 0))
    dose = sorted(h.store.repo.dose_events)[0]
    h.ack(dose, nz(2026, 3, 2, 9, 0))
    h.advance(nz(2026, 3, 3, 1, 0))
    return h.store


def repo_state(store: Store) -> dict:
    repo = store.repo
    return {
        "profiles": repo.profiles,
        "dose_events": repo.dose_events,
        "pending": repo.pending,
        "intakes": repo.intakes,
        "transitions": repo.transitions,
        "flags": repo.flags,
        "watermark": repo.watermark,
        "pushes": repo.pushes_sent,
        "email_days": repo.email_days,
        "counters": repo.counters,
    }


class TestReplayIdentity:
    def test_load_rebuilds_identical_state(self, tmp_path):
        path = tmp_path / "events.log"
        live = build_activity(path)
        reloaded = Store.load(path)
        assert repo_state(reloaded) == repo_state(live)

    def test_three_events_roundtrip(self, tmp_path):
        path = tmp_path / "e.log"
        h = Harness(path=path)
        h.add_patient(make_profile(), nz(2026, 3, 1))
        h.add_med("p1", ["08:00"], date(2026, 3, 2), nz(2026, 3, 1))
        events = read_log(path)
        assert [e.seq for e in events] == list(range(1, len(events) + 1))
        reloaded = Store.load(path)
        assert repo_state(reloaded) == repo_state(h.store)

    def test_snapshot_is_isolated_from_later_appends(self, tmp_path):
        path = tmp_path / "e.log"
        h = Harness(path=path)
        h.add_patient(make_profile(), nz(2026, 3, 1))
        snap = h.store.snapshot()
        h.add_med("p1", ["08:00"], date(2026, 3, 2), nz(2026, 3, 1))
        assert "p1-m1" not in snap.medications
        assert "p1-m1" in h.store.repo.medications

    def test_snapshot_sees_prefix_of_log(self, tmp_path):
        path = tmp_path / "e.log"
        h = Harness(path=path)
        h.add_patient(make_profile(), nz(2026, 3, 1))
        h.add_med("p1", ["08:00"], date(2026, 3, 2), nz(2026, 3, 1))
        snap = h.store.snapshot()
        # the snapshot equals the fold of the log as written so far
        replayed = Store.load(path)
        assert snap.medications == replayed.repo.medications
        assert snap.watermark == replayed.repo.watermark


class TestCorruption:
    def test_truncation_at_random_byte_detected(self, tmp_path):
        path = tmp_path / "e.log"
        build_activity(path)
        blob = path.read_bytes()
        events = read_log(path)
        rng = random.Random(17)
        for _ in range(25):
            cut = rng.randrange(len(MAGIC), len(blob))
            clipped = tmp_path / "clipped.log"
            clipped.write_bytes(blob[:cut])
            try:
                survivors = read_log(clipped)
            except CorruptLogError as exc:
                assert exc.valid_offset <= cut
                survivors = read_log_prefix(blob, exc.valid_offset)
            # whatever survived must be an exact prefix of the original
            assert [e.seq for e in survivors] == list(
                range(1, len(survivors) + 1)
            )
            assert len(survivors) <= len(events)

    def test_flipped_byte_fails_crc(self, tmp_path):
        path = tmp_path / "e.log"
        build_activity(path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptLogError):
            read_log(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "e.log"
        path.write_bytes(b"NOTMYLOG" + b"xx")
        with pytest.raises(CorruptLogError) as info:
            read_log(path)
        assert info.value.valid_offset == 0

    def test_load_reports_offset_of_truncation(self, tmp_path):
        path = tmp_path / "e.log"
        build_activity(path)
        blob = path.read_bytes()
        # drop the final byte: last record payload is short
        path.write_bytes(blob[:-1])
        with pytest.raises(CorruptLogError) as info:
            Store.load(path)
        offsets = record_offsets(blob)
        assert info.value.valid_offset == offsets[-1]


def record_offsets(blob: bytes) -> list[int]:
    """Byte offset of each record start, computed independently."""
    offsets = []
    pos = len(MAGIC)
    while pos < len(blob):
        offsets.append(pos)
        length = int.from_bytes(blob[pos : pos + 4], "big")
        pos += 8 + length
    return offsets


def read_log_prefix(blob: bytes, valid_offset: int):
    import json

    events = []
    pos = len(MAGIC)
    while pos < valid_offset:
        length = int.from_bytes(blob[pos : pos + 4], "big")
        payload = blob[pos + 8 : pos + 8 + length]
        raw = json.loads(payload)
        from medreminder.store import Event

        events.append(Event(raw["seq"], raw["kind"], raw["data"]))
        pos += 8 + length
    return events
