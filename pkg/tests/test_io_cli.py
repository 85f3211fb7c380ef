import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sordor import io as sio
from sordor.cli import main, parse_angle
from sordor.errors import SchemaError, UnsupportedVersionError
from sordor.grape import PulseWaveform

META = {"b": 2.0, "Q": 0.1, "beta": np.pi, "bandwidth": 40e3}
phase_arrays = arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e3, 1e3))


def waveform(phases):
    return PulseWaveform(phases, 2 * np.pi * 1e4, 0.5e-6, dict(META))


class TestWaveformJson:
    @given(phase_arrays)
    def test_exact_round_trip(self, phases):
        wf = waveform(phases)
        back = sio.waveform_from_dict(json.loads(sio.dumps_json(sio.waveform_to_dict(wf))))
        np.testing.assert_array_equal(back.phases, wf.phases)
        assert (back.amplitude, back.dt, back.metadata) == (wf.amplitude, wf.dt, wf.metadata)

    def test_file_round_trip(self, tmp_path, rng):
        wf = waveform(rng.normal(size=33) * 50)
        sio.write_waveform(tmp_path / "w.json", wf)
        np.testing.assert_array_equal(sio.read_waveform(tmp_path / "w.json").phases, wf.phases)

    @pytest.mark.parametrize("field", ["phases", "amplitude", "dt", "metadata"])
    def test_missing_field(self, field):
        doc = sio.waveform_to_dict(waveform(np.zeros(3)))
        del doc[field]
        with pytest.raises(SchemaError, match=field):
            sio.waveform_from_dict(doc)

    def test_missing_metadata_field(self):
        doc = sio.waveform_to_dict(waveform(np.zeros(3)))
        del doc["metadata"]["bandwidth"]
        with pytest.raises(SchemaError, match="metadata.bandwidth"):
            sio.waveform_from_dict(doc)

    def test_legacy_version(self):
        doc = sio.waveform_to_dict(waveform(np.zeros(3)))
        doc["version"] = 0
        with pytest.raises(UnsupportedVersionError):
            sio.waveform_from_dict(doc)

    def test_bad_json(self, tmp_path):
        (tmp_path / "w.json").write_text("{")
        with pytest.raises(SchemaError):
            sio.read_waveform(tmp_path / "w.json")


def wrapped_distance(a, b):
    d = np.mod(a - b + np.pi, 2 * np.pi) - np.pi
    return np.max(np.abs(d))


class TestShape:
    @given(phase_arrays)
    def test_one_data_line_per_slice(self, phases):
        wf = waveform(phases)
        text = sio.shape_text(wf)
        assert len([l for l in text.splitlines() if not l.startswith("#")]) == wf.slices

    def test_file_round_trip(self, tmp_path, rng):
        wf = waveform(rng.normal(size=900) * 100)
        sio.write_shape(tmp_path / "p.shape", wf)
        back, amps = sio.read_shape(tmp_path / "p.shape")
        assert wrapped_distance(back.phases, wf.phases) <= 1e-6
        assert back.amplitude == pytest.approx(wf.amplitude, rel=1e-12)
        assert back.duration == pytest.approx(wf.duration, rel=1e-12)
        np.testing.assert_array_equal(amps, 1.0)
        assert back.metadata == pytest.approx(META)

    def test_truncated(self, tmp_path):
        sio.write_shape(tmp_path / "p.shape", waveform(np.zeros(5)))
        lines = (tmp_path / "p.shape").read_text().splitlines()[:-1]
        (tmp_path / "p.shape").write_text("\n".join(lines))
        with pytest.raises(SchemaError):
            sio.read_shape(tmp_path / "p.shape")


class TestCsv:
    def test_floats_exact(self, tmp_path):
        rows = [[0.1, 1 / 3, "x"], [np.float64(2) ** -40, 7, "y"]]
        sio.write_csv(tmp_path / "t.csv", ["a", "b", "c"], rows)
        header, back = sio.read_csv(tmp_path / "t.csv")
        assert header == ["a", "b", "c"]
        assert float(back[0][1]) == 1 / 3 and float(back[1][0]) == 2.0**-40


@pytest.mark.parametrize("text, want", [
    ("pi", np.pi), ("pi/2", np.pi / 2), ("2pi/3", 2 * np.pi / 3), ("-pi", -np.pi),
    ("90deg", np.pi / 2), ("1.25", 1.25),
])
def test_parse_angle(text, want):
    assert parse_angle(text) == pytest.approx(want, rel=1e-15)


@pytest.fixture(scope="module")
def pulses(tmp_path_factory):
    root = tmp_path_factory.mktemp("pulses")
    assert main(["optimize", "--b", "2", "--beta", "pi", "--out", str(root / "p180")]) == 0
    assert main(["optimize", "--b", "2", "--beta", "pi/2", "--out", str(root / "p90")]) == 0
    return root


class TestCli:
    def run(self, *argv):
        return main([str(a) for a in argv])

    def test_optimize_outputs(self, pulses):
        report = json.loads((pulses / "p180" / "report.json").read_text())
        assert report["status"] == "converged" and report["fidelity"] > 0.49
        manifest = json.loads((pulses / "p180" / "manifest.json").read_text())
        assert manifest["command"] == "optimize" and manifest["seeds"] == {"seed": 0}
        assert {"numpy", "numba", "scipy", "python"} <= set(manifest["versions"])
        wf = sio.read_waveform(pulses / "p180" / "waveform.json")
        assert wf.slices == 100

    def test_simulate(self, pulses, tmp_path):
        out = tmp_path / "echo.csv"
        p = f"{pulses / 'p90' / 'waveform.json'},{pulses / 'p180' / 'waveform.json'}"
        assert self.run("simulate", "--sequence", "perfect-echo", "--pulses", p, "--out", out) == 0
        header, rows = sio.read_csv(out)
        assert len(rows) == 451 and header[0] == "offset_hz" and len(header) == 10
        assert (tmp_path / "echo.csv.manifest.json").exists()

    def test_export(self, pulses, tmp_path):
        out = tmp_path / "p90.shape"
        assert self.run("export", "--format", "shape", "--file", pulses / "p90" / "waveform.json", "--out", out) == 0
        data = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert len(data) == 100

    def test_profile_and_chirp(self, pulses, tmp_path):
        f = pulses / "p180" / "waveform.json"
        assert self.run("profile", "--file", f, "--members", 41, "--out", tmp_path / "prof.csv") == 0
        assert len(sio.read_csv(tmp_path / "prof.csv")[1]) == 41
        assert self.run("chirp-compare", "--file", f, "--out", tmp_path / "c.csv") == 0
        header, rows = sio.read_csv(tmp_path / "c.csv")
        assert header[-1] == "residual_rad" and len(rows) == 100

    def test_morph_grid_report_and_resume(self, tmp_path):
        ck = tmp_path / "ck"
        flags = ["morph", "--b-max", "0.4", "--dq", "0.25", "--checkpoint", ck]
        assert self.run(*flags, "--stop-after", "3") == 0
        assert self.run(*flags) == 0
        assert self.run("grid-report", "--checkpoint", ck, "--out", tmp_path / "g.csv",
                        "--best", tmp_path / "best.csv") == 0
        assert len(sio.read_csv(tmp_path / "g.csv")[1]) == 10
        assert len(sio.read_csv(tmp_path / "best.csv")[1]) == 2

    def test_rerun_reproduces(self, tmp_path):
        out = tmp_path / "run"
        assert self.run("optimize", "--b", "0.5", "--out", out) == 0
        first = (out / "waveform.json").read_bytes()
        (out / "waveform.json").unlink()
        assert self.run("rerun", out / "manifest.json") == 0
        assert (out / "waveform.json").read_bytes() == first

    def test_error_exit(self, tmp_path, capsys):
        assert self.run("export", "--file", tmp_path / "missing.json") == 2
        assert "error" in capsys.readouterr().err

    def test_corrupt_config(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"bmax": 2}))
        assert self.run("morph", "--config", tmp_path / "c.json", "--checkpoint", tmp_path / "ck") == 2

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            self.run("optimize", "--bogus")
        assert exc.value.code != 0
