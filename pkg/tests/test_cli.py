import json

import numpy as np
import pytest

from embedtrack.cli import EXIT_DATA, EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main
from embedtrack.config import PROFILE_NAMES, config_from_dict, load_profile
from embedtrack.tracker import MergeConfig


class TestProfiles:
    def test_all_profiles_load(self):
        for name in PROFILE_NAMES:
            cfg = load_profile(name)
            assert 0.0 <= cfg.beta_match <= 1.0

    def test_unknown_profile_rejected(self):
        with pytest.raises(ValueError, match="unknown profile"):
            load_profile("kitti")

    def test_crowded_scene_profiles_enable_postprocessing(self):
        for name in ("mot17", "mot20"):
            cfg = load_profile(name)
            assert cfg.distance_gate is not None
            assert isinstance(cfg.merge, MergeConfig)
            assert cfg.interpolate

    def test_open_vocabulary_profile_disables_backdrops(self):
        assert load_profile("tao").backdrop_frames == 0

    def test_config_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown tracker config keys"):
            config_from_dict({"beta_matchh": 0.5})
        with pytest.raises(ValueError, match="unknown merge config keys"):
            config_from_dict({"merge": {"window": 3}})


@pytest.fixture
def scenario_files(tmp_path):
    world = {"n_identities": 4, "n_frames": 12, "dim": 8}
    cfg_path = tmp_path / "world.json"
    cfg_path.write_text(json.dumps(world))
    det = tmp_path / "det.txt"
    gt = tmp_path / "gt.txt"
    rc = main(["--seed", "5", "synth", "--config", str(cfg_path),
               "--detections", str(det), "--gt", str(gt)])
    assert rc == EXIT_OK
    return det, gt, tmp_path


class TestSynthCommand:
    def test_writes_both_files(self, scenario_files):
        det, gt, _ = scenario_files
        assert det.read_text().startswith("# embedtrack-detections v1 dim=8")
        assert len(gt.read_text().splitlines()) == 4 * 12

    def test_unknown_world_key_is_data_error(self, tmp_path):
        bad = tmp_path / "world.json"
        bad.write_text(json.dumps({"n_ids": 3}))
        rc = main(["synth", "--config", str(bad),
                   "--detections", str(tmp_path / "d"), "--gt", str(tmp_path / "g")])
        assert rc == EXIT_DATA


class TestTrackCommand:
    def test_pipeline_produces_scores(self, scenario_files, capsys):
        det, gt, tmp = scenario_files
        pred = tmp / "pred.txt"
        assert main(["track", "--input", str(det), "--output", str(pred)]) == EXIT_OK
        assert main(["eval", "--gt", str(gt), "--pred", str(pred),
                     "--machine"]) == EXIT_OK
        out = capsys.readouterr().out
        metrics = dict(
            line.split("=") for line in out.splitlines() if line.startswith("all.")
        )
        assert float(metrics["all.mota"]) == 1.0
        assert float(metrics["all.idf1"]) == 1.0

    def test_profile_and_overrides_compose(self, scenario_files, tmp_path):
        det, _, tmp = scenario_files
        overrides = tmp_path / "cfg.json"
        overrides.write_text(json.dumps({"det_confidence": 0.5}))
        pred = tmp / "pred2.txt"
        rc = main(["track", "--input", str(det), "--output", str(pred),
                   "--profile", "bdd100k", "--config", str(overrides)])
        assert rc == EXIT_OK

    def test_missing_input_is_data_error(self, tmp_path):
        rc = main(["track", "--input", str(tmp_path / "nope.txt"),
                   "--output", str(tmp_path / "out.txt")])
        assert rc == EXIT_DATA

    def test_unknown_profile_is_usage_error(self, scenario_files, tmp_path):
        det, _, _ = scenario_files
        rc = main(["track", "--input", str(det),
                   "--output", str(tmp_path / "o.txt"), "--profile", "kitti"])
        assert rc == EXIT_USAGE

    def test_bad_config_key_is_data_error(self, scenario_files, tmp_path):
        det, _, _ = scenario_files
        overrides = tmp_path / "cfg.json"
        overrides.write_text(json.dumps({"beta_whatever": 1}))
        rc = main(["track", "--input", str(det),
                   "--output", str(tmp_path / "o.txt"), "--config", str(overrides)])
        assert rc == EXIT_DATA


class TestEvalCommand:
    def test_disjoint_ranges_warn(self, scenario_files, tmp_path, capsys):
        _, gt, _ = scenario_files
        shifted = tmp_path / "shifted.txt"
        rows = []
        for line in gt.read_text().splitlines():
            parts = line.split(",")
            parts[0] = str(int(parts[0]) + 1000)
            rows.append(",".join(parts))
        shifted.write_text("\n".join(rows) + "\n")
        assert main(["eval", "--gt", str(gt), "--pred", str(shifted)]) == EXIT_OK
        assert "disjoint" in capsys.readouterr().err

    def test_malformed_pred_is_data_error(self, scenario_files, tmp_path):
        _, gt, _ = scenario_files
        bad = tmp_path / "bad.txt"
        bad.write_text("0,1\n")
        assert main(["eval", "--gt", str(gt), "--pred", str(bad)]) == EXIT_DATA


class TestAblateCommand:
    def test_small_sweep_writes_csv(self, tmp_path):
        world = tmp_path / "world.json"
        world.write_text(json.dumps({"n_identities": 3, "n_frames": 8, "dim": 8}))
        out = tmp_path / "ablation.csv"
        rc = main(["ablate", "--sweep", "metric=bisoftmax,cosine",
                   "--seeds", "0,1", "--config", str(world),
                   "--output", str(out)])
        assert rc == EXIT_OK
        lines = out.read_text().splitlines()
        assert lines[0].startswith("metric,")
        assert len(lines) == 1 + 4  # header + 2 metrics x 2 seeds

    def test_invalid_sweep_is_data_error(self, tmp_path):
        rc = main(["ablate", "--sweep", "metric=magic",
                   "--output", str(tmp_path / "x.csv")])
        assert rc == EXIT_DATA

    def test_empty_seed_list_is_usage_error(self, tmp_path):
        rc = main(["ablate", "--sweep", "metric=cosine", "--seeds", "",
                   "--output", str(tmp_path / "x.csv")])
        assert rc == EXIT_USAGE


class TestGradcheckCommand:
    def test_small_run_passes(self, capsys):
        rc = main(["gradcheck", "--dims", "4", "--batches", "3",
                   "--keys", "4", "--refs", "6"])
        assert rc == EXIT_OK
        assert capsys.readouterr().out.startswith("PASS")

    def test_corrupted_gradient_detected(self, capsys):
        rc = main(["gradcheck", "--dims", "4", "--batches", "3",
                   "--keys", "4", "--refs", "6", "--corrupt"])
        assert rc == EXIT_INVARIANT
        assert capsys.readouterr().out.startswith("FAIL")


class TestUsageErrors:
    def test_missing_subcommand(self):
        assert main([]) == EXIT_USAGE

    def test_missing_required_argument(self):
        assert main(["track", "--input", "x"]) == EXIT_USAGE
