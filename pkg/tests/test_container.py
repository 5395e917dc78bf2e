import json

import numpy as np
import pytest

from affground import container
from affground.errors import DataError


class TestRoundTrip:
    def test_f4_bitwise(self, tmp_path, rng):
        arr = rng.standard_normal((4, 4, 8)).astype("<f4")
        container.write_container(tmp_path / "c", {"x": arr})
        entries, meta = container.read_container(tmp_path / "c")
        assert entries["x"].dtype == np.dtype("<f4")
        assert np.array_equal(entries["x"], arr)

    def test_f8_bitwise(self, tmp_path, rng):
        arr = rng.standard_normal((3, 5))
        container.write_container(tmp_path / "c", {"x": arr}, dtype="<f8")
        entries, _ = container.read_container(tmp_path / "c")
        assert entries["x"].dtype == np.dtype("<f8")
        assert np.array_equal(entries["x"], arr)

    def test_meta_round_trip(self, tmp_path):
        meta = {"classes": ["a", "b"], "n": 3}
        container.write_container(tmp_path / "c", {"x": np.ones(2)}, meta=meta)
        _, got = container.read_container(tmp_path / "c")
        assert got == meta

    def test_multiple_entries_and_partial_read(self, tmp_path, rng):
        entries = {f"k{i}": rng.standard_normal((2, 3)) for i in range(5)}
        container.write_container(tmp_path / "c", entries)
        one = container.read_entry(tmp_path / "c", "k3")
        assert np.array_equal(one, entries["k3"].astype("<f4"))


class TestDeterminism:
    def test_identical_bytes_across_writes(self, tmp_path, rng):
        entries = {"b": rng.standard_normal((3, 3)), "a": rng.standard_normal(4)}
        container.write_container(tmp_path / "c1", entries)
        container.write_container(tmp_path / "c2", entries)
        for name in (container.MANIFEST_NAME, container.PAYLOAD_NAME):
            assert (tmp_path / "c1" / name).read_bytes() == \
                (tmp_path / "c2" / name).read_bytes()

    def test_entry_order_does_not_matter(self, tmp_path, rng):
        a = rng.standard_normal(3)
        b = rng.standard_normal(3)
        container.write_container(tmp_path / "c1", {"a": a, "b": b})
        container.write_container(tmp_path / "c2", {"b": b, "a": a})
        assert (tmp_path / "c1" / container.PAYLOAD_NAME).read_bytes() == \
            (tmp_path / "c2" / container.PAYLOAD_NAME).read_bytes()

    def test_hash_matches_manifest(self, tmp_path, rng):
        digest = container.write_container(tmp_path / "c",
                                           {"x": rng.standard_normal(8)})
        assert container.container_hash(tmp_path / "c") == digest


class TestCorruption:
    def _write(self, tmp_path, rng):
        container.write_container(tmp_path / "c", {"x": rng.standard_normal((4, 4))})
        return tmp_path / "c"

    def test_truncated_payload(self, tmp_path, rng):
        path = self._write(tmp_path, rng)
        payload = path / container.PAYLOAD_NAME
        payload.write_bytes(payload.read_bytes()[:-8])
        with pytest.raises(DataError):
            container.read_container(path)

    def test_bounds_mismatch_names_entry(self, tmp_path, rng):
        path = self._write(tmp_path, rng)
        mpath = path / container.MANIFEST_NAME
        m = json.loads(mpath.read_text())
        m["entries"]["x"]["nbytes"] += 4
        mpath.write_text(json.dumps(m))
        with pytest.raises(DataError, match="x"):
            container.read_container(path)

    def test_payload_tamper_fails_verification(self, tmp_path, rng):
        path = self._write(tmp_path, rng)
        payload = path / container.PAYLOAD_NAME
        raw = bytearray(payload.read_bytes())
        raw[0] ^= 0xFF
        payload.write_bytes(bytes(raw))
        with pytest.raises(DataError):
            container.read_container(path, verify=True)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            container.read_container(tmp_path / "nowhere")

    def test_unknown_entry_name(self, tmp_path, rng):
        path = self._write(tmp_path, rng)
        with pytest.raises(DataError):
            container.read_entry(path, "absent")
