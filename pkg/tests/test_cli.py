from __future__ import annotations

import json
from pathlib import Path

import pytest

from dynabatch.bucketing import BucketSpec, spec_from_text, spec_to_text
from dynabatch.cli import main
from dynabatch.datamodel import tps
from dynabatch.ingest import read_manifest
from dynabatch.oomptimizer import sizes_from_text


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cli") / "small.jsonl"
    rc = main(["gen-data", "--output", str(path), "--count", "3000", "--seed", "11"])
    assert rc == 0
    return path


def run_twice_identical(argv_builder, tmp_path, filenames):
    """Run a command into two directories and compare outputs byte for byte."""
    outputs = []
    for tag in ("one", "two"):
        outdir = tmp_path / tag
        outdir.mkdir(exist_ok=True)
        assert main(argv_builder(outdir)) == 0
        outputs.append([(outdir / name).read_bytes() for name in filenames])
    assert outputs[0] == outputs[1]


class TestGenData:
    def test_deterministic(self, tmp_path):
        run_twice_identical(
            lambda d: ["gen-data", "--output", str(d / "m.jsonl"), "--count", "500", "--seed", "3"],
            tmp_path,
            ["m.jsonl"],
        )

    def test_zero_count_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["gen-data", "--output", str(tmp_path / "m.jsonl"), "--count", "0"])
        assert err.value.code == 2

    def test_default_flags_match_library_defaults(self, default_manifest, tmp_path):
        out = tmp_path / "cli-default.jsonl"
        assert main(["gen-data", "--output", str(out), "--count", "100000"]) == 0
        assert out.read_bytes() == Path(default_manifest).read_bytes()

    def test_summary_matches_manifest(self, small_manifest, capsys):
        assert main(["gen-data", "--output", str(small_manifest), "--count", "3000", "--seed", "11"]) == 0
        printed = dict(
            line.split(" ", 1) for line in capsys.readouterr().out.strip().splitlines()
        )
        samples = list(read_manifest(small_manifest))
        assert int(printed["samples"]) == len(samples)
        total_dur = sum(s.input_len for s in samples)
        assert float(printed["total_hours"]) == pytest.approx(total_dur / 3600, rel=1e-9)
        assert float(printed["mean_tps"]) == pytest.approx(
            sum(tps(s) for s in samples) / len(samples), rel=1e-9
        )


class TestEstimateBuckets:
    def test_flat_bucket_count_bounded(self, small_manifest, tmp_path):
        out = tmp_path / "spec.txt"
        rc = main([
            "estimate-buckets", "--manifest", str(small_manifest),
            "--output", str(out), "--buckets", "10", "--sub-buckets", "2",
        ])
        assert rc == 0
        spec = spec_from_text(out.read_text())
        assert spec.num_flat <= 20
        assert spec.num_subbins == 2

    def test_single_bucket_bounded_by_maxima(self, small_manifest, tmp_path):
        out = tmp_path / "spec1.txt"
        assert main([
            "estimate-buckets", "--manifest", str(small_manifest),
            "--output", str(out), "--buckets", "1", "--sub-buckets", "1",
        ]) == 0
        spec = spec_from_text(out.read_text())
        samples = list(read_manifest(small_manifest))
        assert spec.duration_bounds == (max(s.input_len for s in samples),)
        assert spec.token_bounds == ((max(s.output_len for s in samples),),)

    def test_occupancy_audit(self, small_manifest, tmp_path):
        import numpy as np

        out = tmp_path / "spec-audit.txt"
        assert main([
            "estimate-buckets", "--manifest", str(small_manifest),
            "--output", str(out), "--buckets", "12", "--sub-buckets", "0",
        ]) == 0
        spec = spec_from_text(out.read_text())
        samples = list(read_manifest(small_manifest))
        bounds = np.asarray(spec.duration_bounds)
        per_bin = np.zeros(len(bounds))
        for s in samples:
            per_bin[int(np.searchsorted(bounds, s.input_len, side="left"))] += s.input_len
        total = per_bin.sum()
        max_dur = max(s.input_len for s in samples)
        assert np.all(np.abs(per_bin - total / len(bounds)) <= max_dur + 1e-9)

    def test_missing_manifest_fails(self, tmp_path):
        rc = main([
            "estimate-buckets", "--manifest", str(tmp_path / "nope.jsonl"),
            "--output", str(tmp_path / "s.txt"),
        ])
        assert rc == 1


class TestOomptimize:
    def test_closed_form_linear(self, tmp_path):
        spec_path = tmp_path / "spec.txt"
        spec_path.write_text(
            spec_to_text(BucketSpec(duration_bounds=(10.0,), token_bounds=((500,),)))
        )
        out = tmp_path / "sizes.txt"
        rc = main([
            "oomptimize", "--spec", str(spec_path), "--output", str(out),
            "--capacity", "100", "--model", "linear",
        ])
        assert rc == 0
        assert sizes_from_text(out.read_text()).sizes == (10,)

    def test_infeasible_capacity_nonzero_exit(self, tmp_path, capsys):
        spec_path = tmp_path / "spec.txt"
        spec_path.write_text(
            spec_to_text(BucketSpec(duration_bounds=(10.0,), token_bounds=((500,),)))
        )
        rc = main([
            "oomptimize", "--spec", str(spec_path), "--output", str(tmp_path / "s.txt"),
            "--capacity", "5", "--model", "linear",
        ])
        assert rc == 1
        assert "bucket" in capsys.readouterr().err

    def test_deterministic(self, small_manifest, tmp_path):
        spec_path = tmp_path / "spec.txt"
        assert main([
            "estimate-buckets", "--manifest", str(small_manifest),
            "--output", str(spec_path), "--buckets", "8", "--sub-buckets", "2",
        ]) == 0
        run_twice_identical(
            lambda d: ["oomptimize", "--spec", str(spec_path), "--output", str(d / "sizes.txt")],
            tmp_path,
            ["sizes.txt"],
        )


class TestSample:
    def test_batches_jsonl_and_determinism(self, small_manifest, tmp_path):
        spec_path = tmp_path / "spec.txt"
        assert main([
            "estimate-buckets", "--manifest", str(small_manifest),
            "--output", str(spec_path), "--buckets", "6", "--sub-buckets", "0",
        ]) == 0

        def argv(d):
            return [
                "sample", "--manifest", str(small_manifest), "--spec", str(spec_path),
                "--duration-threshold", "120", "--output", str(d / "batches.jsonl"),
                "--stats", str(d / "stats.json"), "--format", "json", "--seed", "5",
            ]

        run_twice_identical(argv, tmp_path, ["batches.jsonl", "stats.json"])
        out = tmp_path / "one" / "batches.jsonl"
        records = [json.loads(line) for line in out.read_text().splitlines()]
        emitted = [sid for r in records for sid in r["sample_ids"]]
        source = [s.id for s in read_manifest(small_manifest)]
        assert sorted(emitted) == sorted(source)
        stats = json.loads((tmp_path / "one" / "stats.json").read_text())
        assert stats["samples_emitted"] == len(source)


class TestProfile:
    def test_fixed_vs_2d_padding_direction(self, small_manifest, tmp_path):
        reports = {}
        for scheme in ("fixed", "D"):
            out = tmp_path / f"report-{scheme}.json"
            rc = main([
                "profile", "--manifest", str(small_manifest), "--scheme", scheme,
                "--buckets", "8", "--output", str(out), "--format", "json",
            ])
            assert rc == 0
            reports[scheme] = json.loads(out.read_text())
        assert (
            reports["D"]["padding.input_pad_frac"]
            < reports["fixed"]["padding.input_pad_frac"]
        )
        assert (
            reports["D"]["padding.output_pad_frac"]
            < reports["fixed"]["padding.output_pad_frac"]
        )

    def test_duration_heuristic_reports_mean_batch(self, small_manifest, tmp_path, capsys):
        out = tmp_path / "report-A.json"
        rc = main([
            "profile", "--manifest", str(small_manifest), "--scheme", "A",
            "--buckets", "8", "--output", str(out), "--format", "json",
        ])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["mean_batch_size"] > 1
        assert "mean_batch_size" in capsys.readouterr().out

    def test_tps_filter_count_matches_ground_truth(self, tmp_path):
        manifest = tmp_path / "outliers.jsonl"
        assert main([
            "gen-data", "--output", str(manifest), "--count", "4000", "--seed", "13",
            "--rate-fixed", "10", "--prompt-tokens", "0",
            "--outlier-frac", "0.05", "--outlier-factor", "4",
        ]) == 0
        truth = sum(1 for s in read_manifest(manifest) if tps(s) > 25.0)
        assert truth > 0
        out = tmp_path / "report.json"
        assert main([
            "profile", "--manifest", str(manifest),
            "--fixed-batch", "64", "--pad-to-input", "45",
            "--tps-filter", "25", "--output", str(out), "--format", "json",
        ]) == 0
        report = json.loads(out.read_text())
        assert report["samples_filtered_tps"] == truth

    def test_series_and_histogram_written(self, small_manifest, tmp_path):
        out = tmp_path / "report.txt"
        series = tmp_path / "series.csv"
        hist = tmp_path / "hist.csv"
        rc = main([
            "profile", "--manifest", str(small_manifest), "--scheme", "C",
            "--buckets", "8", "--output", str(out),
            "--series", str(series), "--tps-hist", str(hist),
        ])
        assert rc == 0
        header = series.read_text().splitlines()[0]
        assert header == "step,batch_size,max_input,max_output,input_pad_frac,output_pad_frac,memory"
        assert hist.read_text().startswith("lo,hi,count,mean,p50,p90,p99")

    def test_profile_deterministic(self, small_manifest, tmp_path):
        def argv(d):
            return [
                "profile", "--manifest", str(small_manifest), "--scheme", "D",
                "--buckets", "6", "--output", str(d / "report.json"),
                "--series", str(d / "series.csv"), "--format", "json",
            ]

        run_twice_identical(argv, tmp_path, ["report.json", "series.csv"])


class TestSimulateDdp:
    def test_world_one_zero_speedup_and_files(self, tmp_path):
        out = tmp_path / "ddp"
        rc = main([
            "simulate-ddp", "--output-dir", str(out), "--world-sizes", "1",
            "--steps", "20", "--seed", "5", "--csv",
        ])
        assert rc == 0
        report = json.loads((out / "report-w1.json").read_text())
        assert report["speedup_percent"] == 0.0
        assert (out / "table.txt").exists()
        assert (out / "steps-w1.csv").read_text().startswith("step,time_synced,time_unsynced")

    def test_constant_cost_zero_speedup(self, tmp_path):
        out = tmp_path / "ddp-const"
        rc = main([
            "simulate-ddp", "--output-dir", str(out), "--world-sizes", "4",
            "--steps", "20", "--seed", "5", "--cost", "constant",
        ])
        assert rc == 0
        report = json.loads((out / "report-w4.json").read_text())
        assert abs(report["speedup_percent"]) < 1e-12

    def test_deterministic(self, tmp_path):
        def argv(d):
            return [
                "simulate-ddp", "--output-dir", str(d), "--world-sizes", "2",
                "--steps", "15", "--seed", "9",
            ]

        run_twice_identical(argv, tmp_path, ["report-w2.json", "table.txt"])


class TestConfigDocument:
    def test_config_supplies_defaults_and_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"count": 40, "seed": 3}))
        m1 = tmp_path / "m1.jsonl"
        assert main(["gen-data", "--output", str(m1), "--config", str(cfg)]) == 0
        assert len(list(read_manifest(m1))) == 40
        m2 = tmp_path / "m2.jsonl"
        assert main([
            "gen-data", "--output", str(m2), "--config", str(cfg), "--count", "7",
        ]) == 0
        assert len(list(read_manifest(m2))) == 7

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"no-such-flag": 1}))
        rc = main(["gen-data", "--output", str(tmp_path / "m.jsonl"), "--config", str(cfg)])
        assert rc == 1


class TestTopLevel:
    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "unknown command" in capsys.readouterr().err

    def test_help(self, capsys):
        assert main(["--help"]) == 0
        assert "gen-data" in capsys.readouterr().out

    def test_no_args_usage(self):
        assert main([]) == 2
