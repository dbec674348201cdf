import hashlib
import json
import math
import warnings

import pytest
import yaml

from latticectl import cli
from latticectl.pulses import write_waveform_csv, zero_waveform


def write_cfg(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def run_main(tmp_path, data, *extra, name="cfg.yaml"):
    cfg = write_cfg(tmp_path / name, data)
    out = tmp_path / "out"
    code = cli.main(["run", str(cfg), "--out", str(out), *extra])
    return code, out


def summary(out):
    return json.loads((out / "summary.json").read_text())


BANDS = {"scenario": "bands", "lattice": {"depth_Er": 18.0}, "params": {"n_bands": 4, "n_q": 16}}


@pytest.fixture
def zero_pulse(tmp_path):
    write_waveform_csv(zero_waveform(1e-4), tmp_path / "zero.csv")
    return "zero.csv"


class TestConfig:
    def test_defaults_echoed(self):
        cfg = cli.parse_config({"scenario": "arp-sweep"})
        r = cfg.resolved()
        assert r["lattice"]["depth_Er"] == 18.0
        assert r["sweep"]["t_p"] == cli.DEFAULT_TP and r["sweep"]["delta_f"] == cli.DEFAULT_DF
        assert r["solver"]["n_wells"] == 32

    @pytest.mark.parametrize(
        "data",
        [
            [],
            {"scenario": "nonsense"},
            {"scenario": "bands", "colour": 1},
            {"scenario": "bands", "solver": {"dt": 1e-6}},
            {"scenario": "bands", "lattice": {"depth_Er": -1}},
            {"scenario": "bands", "lattice": {"depth": 18}},
            {"scenario": "depth-scan", "sweep": {"depths": []}},
            {"scenario": "bands", "initial": [0.9, 0.2]},
            {"scenario": "bands", "threads": 0},
            {"scenario": "bands", "solver": {"frame": "rotating"}},
        ],
    )
    def test_invalid(self, data):
        with pytest.raises(cli.ConfigError):
            cli.parse_config(data)

    def test_missing_reference(self, tmp_path):
        with pytest.raises(cli.InputFileError):
            cli.parse_config({"scenario": "simulate-pulse", "pulse": "absent.csv"}, tmp_path)


class TestExitCodes:
    def test_bands_example(self, tmp_path):
        code, out = run_main(tmp_path, BANDS)
        assert code == 0
        s = summary(out)
        assert s["outputs"]["omega01"] == pytest.approx(2 * math.pi * 5007, rel=0.03)
        assert s["inputs"]["scenario"] == "bands" and s["schema_version"] == cli.SCHEMA_VERSION
        assert "wall_time_s" in json.loads((out / "timing.json").read_text())

    def test_config_error(self, tmp_path):
        code, out = run_main(tmp_path, {"scenario": "bands", "bogus": 1})
        assert code == 2
        rec = json.loads((out / "error.json").read_text())
        assert rec["exit_code"] == 2 and rec["category"] == "config"

    def test_yaml_syntax_error(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("scenario: [bands\n")
        assert cli.main(["run", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "o")]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["run", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 4

    def test_missing_pulse_file(self, tmp_path):
        code, out = run_main(tmp_path, {"scenario": "simulate-pulse", "pulse": "gone.csv"})
        assert code == 4
        assert json.loads((out / "error.json").read_text())["category"] == "io"

    def test_physics_error(self, tmp_path, zero_pulse):
        data = {
            "scenario": "simulate-pulse",
            "lattice": {"depth_Er": 2.0, "gravity_enabled": True},
            "pulse": zero_pulse,
            "solver": {"n_wells": 8},
        }
        write_waveform_csv(zero_waveform(1e-3), tmp_path / zero_pulse)
        code, out = run_main(tmp_path, data)
        assert code == 3
        assert json.loads((out / "error.json").read_text())["error"] == "BoundaryContaminationError"

    def test_invalid_threads_flag(self, tmp_path):
        code, _ = run_main(tmp_path, BANDS, "--threads", "0")
        assert code == 2


class TestScenarios:
    def test_zero_pulse_is_stationary(self, tmp_path, zero_pulse):
        data = {"scenario": "simulate-pulse", "pulse": zero_pulse, "initial": [0.945, 0.055]}
        code, out = run_main(tmp_path, data)
        assert code == 0
        fin = summary(out)["outputs"]["final"]
        assert [fin["p0"], fin["p1"], fin["p_leak"]] == pytest.approx([0.945, 0.055, 0.0], abs=1e-3)
        header = (out / "trajectory.csv").read_text().splitlines()[0]
        assert header == "t,P0,P1,PL"

    def test_inline_pulse(self, tmp_path):
        data = {
            "scenario": "simulate-pulse",
            "pulse": {"variant": "SinePM", "duration": 5e-5, "amplitude_pm": 0.01, "frequency": 2 * math.pi * 5007},
            "solver": {"n_wells": 16, "points_per_well": 32},
        }
        code, out = run_main(tmp_path, data)
        assert code == 0
        fin = summary(out)["outputs"]["final"]
        assert fin["p0"] + fin["p1"] + fin["p_leak"] == pytest.approx(1, abs=1e-9)
        assert fin["p1"] > 1e-4

    def test_depth_scan_monotone(self, tmp_path):
        code, out = run_main(tmp_path, {"scenario": "depth-scan", "sweep": {"depths": [30.0, 10.0, 20.0]}})
        assert code == 0
        o = summary(out)["outputs"]
        assert o["depths"] == [10.0, 20.0, 30.0]
        assert o["omega01"] == sorted(o["omega01"])

    def test_arp_3level(self, tmp_path):
        data = {"scenario": "arp-3level", "params": {"a_pm": 1 / 360, "betas": [2e7], "span": 8000, "n_floquet": 21}}
        code, out = run_main(tmp_path, data)
        assert code == 0
        tr = summary(out)["outputs"]["transfers"]
        assert len(tr) == 2
        for t in tr:
            assert sum(t["populations"]) == pytest.approx(1, abs=1e-9)


class TestArtifacts:
    def test_manifest_hashes(self, tmp_path):
        _, out = run_main(tmp_path, BANDS)
        man = summary(out)["manifest"]
        assert {m["file"] for m in man} == {"bands.csv", "bands.svg"}
        for m in man:
            data = (out / m["file"]).read_bytes()
            assert hashlib.sha256(data).hexdigest() == m["sha256"] and len(data) == m["bytes"]

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        run_main(a, BANDS)
        run_main(b, BANDS)
        for name in ("summary.json", "bands.csv", "bands.svg"):
            assert (a / "out" / name).read_bytes() == (b / "out" / name).read_bytes()

    def test_thread_count_does_not_change_results(self, tmp_path):
        data = {"scenario": "arp-3level", "params": {"a_pm": 1 / 360, "betas": [2e7, 4e7], "span": 8000, "n_floquet": 11}}
        outs = []
        for n in ("1", "3"):
            d = tmp_path / n
            d.mkdir()
            code, out = run_main(d, data, "--threads", n)
            assert code == 0
            outs.append(summary(out)["outputs"])
        assert outs[0] == outs[1]

    def test_seed_override_echoed(self, tmp_path):
        _, out = run_main(tmp_path, BANDS, "--seed", "17")
        assert summary(out)["inputs"]["seed"] == 17

    def test_svg_well_formed(self, tmp_path):
        _, out = run_main(tmp_path, BANDS)
        text = (out / "bands.svg").read_text()
        assert text.lstrip().startswith("<?xml") and "<svg" in text and text.rstrip().endswith("</svg>")


def entry(label, p0, p1, pl, initial=(1.0, 0.0)):
    return {"label": label, "final": {"p0": p0, "p1": p1, "p_leak": pl}, "initial": list(initial)}


class TestCompare:
    def test_identical_entries_tie_in_input_order(self):
        rows, ranking = cli.compare_entries([entry("first", 0.5, 0.4, 0.1), entry("second", 0.5, 0.4, 0.1)])
        assert rows[0]["p1_tilde"] == rows[1]["p1_tilde"]
        assert [r["label"] for r in ranking] == ["first", "second"]

    def test_published_numbers_rank_arp_and_grape_first(self):
        entries = [
            # best measured square pulse, no initial excited fraction reported
            entry("Square", 0.37, 0.33, 0.30),
            entry("GRAPE", 0.566, 0.434, 0.0, (0.945, 0.055)),
            entry("ARP", 0.49, 0.435, 0.075, (0.925, 0.075)),
        ]
        _, ranking = cli.compare_entries(entries)
        assert {r["label"] for r in ranking[:2]} == {"ARP", "GRAPE"}
        assert ranking[-1]["label"] == "Square"

    def test_missing_leakage_excluded_with_warning(self):
        bad = {"label": "x", "final": {"p0": 0.5, "p1": 0.5, "p_leak": None}, "initial": [1.0, 0.0]}
        with pytest.warns(UserWarning, match="no leakage"):
            rows, _ = cli.compare_entries([entry("a", 0.6, 0.4, 0.0), bad])
        assert [r["label"] for r in rows] == ["a"]

    def test_missing_initial(self):
        with pytest.raises(ValueError):
            cli.compare_entries([{"label": "a", "final": {"p0": 0.5, "p1": 0.5, "p_leak": 0.0}}])

    def test_compare_command(self, tmp_path, zero_pulse):
        paths = []
        for i, init in enumerate(([1.0, 0.0], [0.9, 0.1])):
            d = tmp_path / f"r{i}"
            d.mkdir()
            write_waveform_csv(zero_waveform(1e-4), d / zero_pulse)
            _, out = run_main(d, {"scenario": "simulate-pulse", "pulse": zero_pulse, "initial": init})
            paths.append(str(out / "summary.json"))
        cmp_out = tmp_path / "cmp"
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert cli.main(["compare", *paths, "--out", str(cmp_out)]) == 0
        s = summary(cmp_out)
        assert len(s["outputs"]["points"]) == 2
        for name in ("compare.csv", "ranking.csv", "pl_vs_p1.svg", "pl_vs_inversion.svg"):
            assert (cmp_out / name).is_file()

    def test_compare_needs_two(self, tmp_path):
        _, out = run_main(tmp_path, BANDS)
        assert cli.main(["compare", str(out / "summary.json"), "--out", str(tmp_path / "c")]) == 2

    def test_compare_without_renormalization_block(self, tmp_path):
        _, out = run_main(tmp_path, BANDS)
        s = str(out / "summary.json")
        assert cli.main(["compare", s, s, "--out", str(tmp_path / "c")]) == 2
