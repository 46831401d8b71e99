import math

import numpy as np
import pytest

from iccl.config import ConfigError, RunConfig, emit_config
from iccl.data import make_blobs
from iccl.model import cosine_lr
from iccl.train import (
    METRICS_HEADER,
    DivergenceError,
    run_experiment,
    run_sweep,
    split_indices,
    switch_epoch,
    write_report,
)


def tiny(**kw):
    cfg = RunConfig()
    base = {
        "epochs": 4,
        "batch_size": 32,
        "data.classes": 3,
        "data.n_per_class": 30,
        "data.nuisance_dims": 2,
        "data.dim": 8,
        "model.hidden": 16,
        "model.out_dim": 6,
        "model.predictor_hidden": 16,
        "eval.probe_epochs": 5,
    }
    base.update(kw)
    for k, v in base.items():
        cfg = cfg.replace(k, v)
    return cfg


class TestSchedule:
    @pytest.mark.parametrize(
        "sf, epochs, expected", [(0.5, 4, 2), (0.5, 5, 2), (1.0, 7, 7), (0.0, 7, 0), (0.3, 10, 3), (0.99, 3, 2)]
    )
    def test_switch_epoch(self, sf, epochs, expected):
        assert switch_epoch(tiny(switch_fraction=sf, epochs=epochs)) == expected

    @pytest.mark.parametrize("sf", [0.0, 0.5, 1.0])
    def test_phase_per_step(self, sf):
        cfg = tiny(switch_fraction=sf)
        rep = run_experiment(cfg, per_step_log=True)
        boundary = switch_epoch(cfg)
        for row in rep.steps:
            assert row[2] == ("similarity" if row[1] < boundary else "final")

    def test_both_losses_logged_every_phase(self):
        rep = run_experiment(tiny(switch_fraction=0.5))
        for name in ("loss_similarity", "loss_iccl_minus_logc", "loss_final"):
            assert np.all(np.isfinite(rep.series(name)))

    def test_lambda_zero_final_equals_iccl(self):
        rep = run_experiment(tiny(lambda_r=0.0))
        np.testing.assert_allclose(rep.series("loss_final") - math.log(6), rep.series("loss_iccl_minus_logc"), atol=1e-12)


class TestReport:
    def setup_method(self):
        self.cfg = tiny()
        self.rep = run_experiment(self.cfg)

    def test_one_record_per_epoch(self):
        assert [r.epoch for r in self.rep.records] == list(range(4))
        assert self.rep.metrics_csv().splitlines()[0] == ",".join(METRICS_HEADER)

    def test_lr_schedule_logged(self):
        # 72 training rows, batch 32: two steps per epoch, warmup over two epochs
        expected = [cosine_lr(2 * e + 1, 8, 0.2, 4) for e in range(4)]
        assert self.rep.series("lr").tolist() == expected

    def test_pz2_bounds(self):
        c = self.cfg.model.out_dim
        pz2 = self.rep.series("mean_pz2_norm")
        assert np.all((pz2 >= 1 / math.sqrt(c) - 1e-12) & (pz2 <= 1 + 1e-12))
        for chk in self.rep.pz2_checkpoints:
            assert chk["0.05"] >= chk["0.07"] >= chk["0.1"]
        assert [c["epoch"] for c in self.rep.pz2_checkpoints] == [0, 2, 3]

    def test_config_echo(self):
        assert self.rep.config_echo == emit_config(self.cfg)
        assert run_experiment(self.cfg, config_text="epochs = 4\n").config_echo == "epochs = 4\n"

    def test_choices_recorded(self):
        d = self.rep.to_dict()
        assert "pseudo_label_features" in d["choices"]
        assert d["eval"]["features_l2_normalized"] is True

    def test_determinism(self, tmp_path):
        again = run_experiment(self.cfg)
        write_report(self.rep, tmp_path / "a")
        write_report(again, tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        assert (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()

    def test_seed_changes_run(self):
        assert run_experiment(self.cfg.replace("seed", 1)).metrics_csv() != self.rep.metrics_csv()


class TestVariants:
    @pytest.mark.parametrize(
        "kv",
        [
            {"labels.kind": "sinkhorn"},
            {"labels.kind": "centering"},
            {"symmetrize": False},
            {"use_momentum_encoder": False},
            {"optim.kind": "lars"},
            {"adaptive_tau1": True},
            {"adaptive_tau1": True, "adaptive_rule": "bare"},
            {"model.standardize": False},
        ],
    )
    def test_runs_complete(self, kv):
        rep = run_experiment(tiny(**kv))
        assert len(rep.records) == 4 and 0 <= rep.eval.precision_at_k <= 1

    def test_external_dataset(self):
        ds = make_blobs(4, 5, 15, seed=9)
        rep = run_experiment(tiny(), dataset=ds)
        assert rep.eval.k == 5 and len(rep.records) == 4

    def test_divergence(self):
        with np.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
            run_experiment(tiny(**{"optim.lr": 1e300}))
        assert {"step", "epoch", "lr", "reason"} <= set(info.value.record)


class TestSplit:
    def test_disjoint_and_complete(self):
        tr, te = split_indices(100, 0.2, 0)
        assert len(te) == 20 and len(np.intersect1d(tr, te)) == 0
        np.testing.assert_array_equal(np.union1d(tr, te), np.arange(100))


class TestSweep:
    def test_single_value_matches_run(self):
        cfg = tiny()
        reports, _ = run_sweep(cfg, "tau1", [0.1])
        assert reports[0].metrics_csv() == run_experiment(cfg).metrics_csv()

    def test_lambda_grid(self, tmp_path):
        grid = [0, 0.5, 1, 2.5, 5, 7.5, 10]
        reports, summary = run_sweep(tiny(epochs=1), "lambda_r", grid, out_dir=tmp_path)
        rows = summary.splitlines()
        assert len(reports) == 7 and len(rows) == 8
        assert [float(r.split(",")[0]) for r in rows[1:]] == grid
        assert {r.split(",")[1] for r in rows[1:]} == {"0"}
        assert (tmp_path / "summary.csv").read_text() == summary
        assert (tmp_path / "lambda_r=2.5" / "metrics.csv").exists()

    def test_tau2_grid_offset_seeds(self):
        reports, summary = run_sweep(tiny(epochs=1), "tau2", [0.05, 0.07, 0.1], seed_policy="offset")
        assert [r.config["seed"] for r in reports] == [0, 1, 2]
        assert [r.config["tau2"] for r in reports] == [0.05, 0.07, 0.1]

    def test_unknown_axis(self):
        with pytest.raises(ConfigError):
            run_sweep(tiny(), "nope", [1])

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            run_sweep(tiny(), "tau1", [0.1], seed_policy="random")
