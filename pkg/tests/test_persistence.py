import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from planelike import persistence as io
from planelike.lattice import Field, build_quotient
from planelike.model import ModelSpec
from planelike.solver import SolverOptions


def _field(omega=(2, 1), seed=0, far=True):
    lat = build_quotient(omega, n=4, A=0, B=1.5, L=1)
    rng = np.random.default_rng(seed)
    cells = (rng.uniform(-1, 1, (4, 4)), rng.uniform(-1, 1, (4, 4))) if far else (None, None)
    return Field(lat, rng.uniform(-1, 1, lat.shape), *cells)


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        f = _field()
        digest = io.save_field(f, tmp_path / "u.snap")
        g = io.load_field(tmp_path / "u.snap")
        assert g.lattice == f.lattice
        assert np.array_equal(g.values, f.values)
        assert np.array_equal(g.far_low, f.far_low) and np.array_equal(g.far_high, f.far_high)
        assert len(digest) == 64 and digest == (tmp_path / "u.snap").read_bytes()[-32:].hex()

    def test_without_far_field(self, tmp_path):
        f = _field(far=False)
        io.save_field(f, tmp_path / "u.snap")
        g = io.load_field(tmp_path / "u.snap")
        assert g.far_low is None and np.array_equal(g.values, f.values)

    def test_byte_identical(self, tmp_path):
        f = _field()
        io.save_field(f, tmp_path / "a.snap", ModelSpec())
        io.save_field(f.copy(), tmp_path / "b.snap", ModelSpec())
        assert (tmp_path / "a.snap").read_bytes() == (tmp_path / "b.snap").read_bytes()

    def test_truncated(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap")
        raw = (tmp_path / "u.snap").read_bytes()
        (tmp_path / "u.snap").write_bytes(raw[:-40])
        with pytest.raises(io.ChecksumError):
            io.load_field(tmp_path / "u.snap")
        (tmp_path / "u.snap").write_bytes(raw[:5])
        with pytest.raises(io.ChecksumError):
            io.load_field(tmp_path / "u.snap")

    def test_corrupted_value(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap")
        raw = bytearray((tmp_path / "u.snap").read_bytes())
        raw[-100] ^= 0x01
        (tmp_path / "u.snap").write_bytes(bytes(raw))
        with pytest.raises(io.ChecksumError):
            io.load_field(tmp_path / "u.snap")

    def test_lattice_mismatch(self, tmp_path):
        io.save_field(_field((2, 1)), tmp_path / "u.snap")
        other = build_quotient((1, 0), n=4, A=0, B=1.5, L=1)
        with pytest.raises(io.LatticeMismatch):
            io.load_field(tmp_path / "u.snap", lattice=other)

    def test_version_mismatch(self, tmp_path, monkeypatch):
        io.save_field(_field(), tmp_path / "u.snap")
        monkeypatch.setattr(io, "VERSION", 2)
        with pytest.raises(io.VersionError):
            io.load_field(tmp_path / "u.snap")

    def test_model_mismatch(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap", ModelSpec())
        with pytest.raises(io.PersistenceError):
            io.load_field(tmp_path / "u.snap", model=ModelSpec().with_(eta=0.02))
        io.load_field(tmp_path / "u.snap", model=ModelSpec())

    def test_cells_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cells = {"u_plus": rng.standard_normal((4, 4)), "u_minus": rng.standard_normal((4, 4))}
        io.save_cells(cells, tmp_path / "c.snap", ModelSpec())
        back = io.load_cells(tmp_path / "c.snap", ModelSpec())
        assert sorted(back) == ["u_minus", "u_plus"]
        for k in cells:
            assert np.array_equal(back[k], cells[k])

    def test_cells_are_not_fields(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap")
        with pytest.raises(io.PersistenceError):
            io.load_cells(tmp_path / "u.snap")


@settings(max_examples=25, deadline=None)
@given(vals=hnp.arrays(np.float64, (5, 4), elements=st.floats(allow_nan=False, width=64)))
def test_snapshot_round_trip_property(tmp_path_factory, vals):
    lat = build_quotient((1, 0), n=4, A=0, B=0.5, L=0.25)
    assert lat.shape == (5, 4)
    path = tmp_path_factory.mktemp("snap") / "u.snap"
    io.save_field(Field(lat, vals), path)
    back = io.load_field(path).values
    assert back.tobytes() == np.ascontiguousarray(vals, dtype="<f8").tobytes()


class TestReports:
    def test_empty_stream(self, tmp_path):
        io.write_report([], tmp_path / "r.jsonl")
        assert (tmp_path / "r.jsonl").read_bytes() == b""

    def test_one_record(self, tmp_path):
        rec = {"check": "x", "measured": {"v": 0.1 + 0.2, "n": np.int64(3)}, "passed": True,
               "inputs": {"omega": (2, 1)}, "tolerances": {}}
        io.write_report([rec], tmp_path / "r.jsonl")
        text = (tmp_path / "r.jsonl").read_text()
        assert text.count("\n") == 1
        back = io.read_report(tmp_path / "r.jsonl")[0]
        assert back["measured"]["v"] == 0.1 + 0.2
        assert back["inputs"]["omega"] == [2, 1] and back["measured"]["n"] == 3

    def test_sorted_keys_17_digits(self):
        txt = io.canonical_json({"b": 1.0 / 3.0, "a": [1, 2.0]})
        assert txt == '{"a": [1, 2.0], "b": 0.33333333333333331}'

    def test_duplicate_keys_rejected(self):
        with pytest.raises(io.PersistenceError):
            io.Record.from_pairs([("a", 1), ("a", 2)])
        with pytest.raises(io.PersistenceError):
            io.parse_json('{"a": 1, "a": 2}')

    def test_nonfinite(self):
        assert io.canonical_json([float("inf"), float("nan")]) == "[Infinity, NaN]"

    def test_scaling_csv(self, tmp_path):
        rows = [{"R": 3.0, "E_total": 1.5, "E_kinetic": 1.0, "E_potential": 0.6, "E_meso": -0.1}]
        io.write_scaling_csv(rows, tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "R,E_total,E_kinetic,E_potential,E_meso"
        assert io.read_scaling_csv(tmp_path / "s.csv") == rows


class TestManifest:
    def test_round_trip(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap")
        io.write_report([{"check": "a"}], tmp_path / "r.jsonl")
        io.write_manifest(tmp_path / "m.json", ModelSpec(), SolverOptions(), 3,
                          ["u.snap", "r.jsonl"], {"command": "test"})
        doc = json.loads((tmp_path / "m.json").read_text())
        assert [a["path"] for a in doc["artifacts"]] == ["r.jsonl", "u.snap"]
        assert doc["seed"] == 3 and doc["model"]["s"] == 0.5
        assert io.verify_manifest(tmp_path / "m.json") == []

    def test_detects_tampering(self, tmp_path):
        io.save_field(_field(), tmp_path / "u.snap")
        io.write_manifest(tmp_path / "m.json", ModelSpec(), SolverOptions(), 0, ["u.snap"])
        io.save_field(_field(seed=5), tmp_path / "u.snap")
        assert io.verify_manifest(tmp_path / "m.json") == ["checksum mismatch u.snap"]
        (tmp_path / "u.snap").unlink()
        assert io.verify_manifest(tmp_path / "m.json") == ["missing u.snap"]

    def test_missing_artifact(self, tmp_path):
        with pytest.raises(io.PersistenceError):
            io.write_manifest(tmp_path / "m.json", ModelSpec(), SolverOptions(), 0, ["nope.snap"])
