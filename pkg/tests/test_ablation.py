import numpy as np
import pytest

from embedtrack.ablation import (
    ABLATION_COLUMNS,
    gradient_check,
    parse_sweep,
    random_batch,
    run_ablation,
    standard_noisy_world,
)
from embedtrack.synth import WorldConfig


class TestParseSweep:
    def test_basic(self):
        sweep = parse_sweep("metric=bisoftmax,cosine backdrops=on")
        assert sweep == {"metric": ["bisoftmax", "cosine"], "backdrops": ["on"]}

    def test_subsample_takes_integers(self):
        assert parse_sweep("subsample=1,5,30") == {"subsample": ["1", "5", "30"]}
        with pytest.raises(ValueError, match="positive integers"):
            parse_sweep("subsample=0")

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown sweep key"):
            parse_sweep("speed=1")

    def test_invalid_value(self):
        with pytest.raises(ValueError, match="invalid value"):
            parse_sweep("metric=euclidean")

    def test_malformed_token(self):
        with pytest.raises(ValueError, match="malformed sweep token"):
            parse_sweep("metric")

    def test_empty_spec(self):
        with pytest.raises(ValueError, match="empty sweep"):
            parse_sweep("   ")


class TestRandomBatch:
    def test_always_has_positive_pair(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            b = random_batch(4, 6, 8, rng)
            assert b.positivity.any()


class TestGradientCheck:
    def test_negative_control_fails(self):
        r = gradient_check(dims=(4,), v=4, k=6, n_batches=3, corrupt=True)
        assert not r.passed

    def test_small_run_passes(self):
        r = gradient_check(dims=(4, 8), v=4, k=6, n_batches=4)
        assert r.passed
        assert r.n_batches == 4


class TestRunAblation:
    def small_world(self):
        return WorldConfig(n_identities=3, n_frames=8, dim=8, seed=0)

    def test_row_per_combination_and_seed(self):
        rows = run_ablation({"metric": ["bisoftmax", "cosine"]}, [0, 1],
                            self.small_world())
        assert len(rows) == 4
        assert all(set(r) == set(ABLATION_COLUMNS) for r in rows)
        assert [r["metric"] for r in rows] == ["bisoftmax", "bisoftmax",
                                               "cosine", "cosine"]

    def test_unswept_keys_dashed(self):
        rows = run_ablation({"metric": ["cosine"]}, [0], self.small_world())
        assert rows[0]["loss"] == "-"
        assert rows[0]["nn_acc"] == ""

    def test_loss_sweep_reports_nn_accuracy(self):
        rows = run_ablation({"loss": ["accumulated_multi"]}, [0],
                            self.small_world())
        assert float(rows[0]["nn_acc"]) >= 0.9

    def test_deterministic(self):
        a = run_ablation({"metric": ["bisoftmax"]}, [0], self.small_world())
        b = run_ablation({"metric": ["bisoftmax"]}, [0], self.small_world())
        assert a == b

    def test_default_world_is_noisy(self):
        w = standard_noisy_world(0)
        assert w.sigma_e > 0
        assert w.n_distractors > 0
