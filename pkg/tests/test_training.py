import math

import numpy as np
import pytest
import torch

from fluidport.dataset import ScenarioConfig, generate_dataset
from fluidport.model import (
    NetConfig,
    build_model,
    frozen_checksums,
    load_checkpoint,
)
from fluidport.training import (
    DB_SENTINEL,
    TrainConfig,
    TrainingAborted,
    loss_nmse,
    lr_at,
    ratio_to_db,
    train,
    validate_port,
    write_metrics_csv,
)
import oracles


def micro_dataset(seed=21):
    sc = ScenarioConfig(
        ue_count=1,
        segments_per_ue=2,
        instants_per_segment=12,
        history_len=3,
        horizon=2,
        grid_m=3,
        grid_n=4,
        aperture_y=0.3,
        aperture_z=0.8,
        n_paths=4,
        seed=seed,
        train_fraction=0.75,
    )
    return sc, generate_dataset(sc)


def micro_net():
    return NetConfig(
        d_model=16,
        heads=2,
        n_layers=1,
        lora_rank=2,
        history_len=3,
        horizon=2,
        ports_z=4,
        ports_y=3,
        backbone_heads=2,
        max_positions=16,
    )


class TestLossNmse:
    def c(self, rng, shape=(2, 2, 3, 3)):
        return torch.from_numpy(
            (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(np.complex64)
        )

    def test_perfect_prediction_is_zero(self, rng):
        s = self.c(rng)
        assert loss_nmse(s, s).item() == 0.0

    def test_zero_prediction_is_one(self, rng):
        s = self.c(rng)
        assert loss_nmse(torch.zeros_like(s), s).item() == pytest.approx(1.0, rel=1e-6)

    def test_double_prediction_is_one(self, rng):
        s = self.c(rng)
        assert loss_nmse(2 * s, s).item() == pytest.approx(1.0, rel=1e-6)

    def test_zero_target_rejected(self, rng):
        s = self.c(rng)
        z = torch.zeros_like(s)
        with pytest.raises(ValueError):
            loss_nmse(s, z)

    def test_matches_scalar_oracle(self, rng):
        s_hat = self.c(rng, (3, 2, 2, 2))
        s = self.c(rng, (3, 2, 2, 2))
        want = np.mean(
            [
                oracles.nmse_ratio_loops(s_hat[k].numpy(), s[k].numpy())
                for k in range(3)
            ]
        )
        assert loss_nmse(s_hat, s).item() == pytest.approx(want, rel=1e-5)

    def test_unbatched_input(self, rng):
        s = self.c(rng, (2, 3, 3))
        assert loss_nmse(torch.zeros_like(s), s).item() == pytest.approx(1.0, rel=1e-6)


class TestValidatePort:
    def test_perfect_port_is_zero(self, rng):
        b, f, n, m = 2, 3, 4, 5
        ref = rng.normal(size=(b, f)) + 1j * rng.normal(size=(b, f))
        future = rng.normal(size=(b, f, n, m)) + 1j * rng.normal(size=(b, f, n, m))
        future[:, :, 2, 1] = ref  # the true channel matches the reference here
        s_hat = np.ones((b, f, n, m), dtype=complex)
        s_hat[:, :, 2, 1] = 0.0  # prediction says port (3,2) equals reference 0-dist
        # make the predicted table's distance to the reference smallest at (3,2)
        s_hat = s_hat * 10 + ref[:, :, None, None]
        s_hat[:, :, 2, 1] = ref
        assert validate_port(s_hat, future, ref) == pytest.approx(0.0, abs=1e-12)

    def test_zero_channel_is_one(self, rng):
        b, f, n, m = 1, 2, 2, 2
        ref = np.ones((b, f), dtype=complex)
        future = np.zeros((b, f, n, m), dtype=complex)
        s_hat = rng.normal(size=(b, f, n, m)) + 0j
        assert validate_port(s_hat, future, ref) == pytest.approx(1.0, rel=1e-12)

    def test_broadcast_reference_accepted(self, rng):
        b, f, n, m = 2, 2, 3, 3
        ref = rng.normal(size=(b, f)) + 1j * rng.normal(size=(b, f))
        future = rng.normal(size=(b, f, n, m)) + 1j * rng.normal(size=(b, f, n, m))
        s_hat = rng.normal(size=(b, f, n, m)) + 1j * rng.normal(size=(b, f, n, m))
        full = np.broadcast_to(ref[:, :, None, None], (b, f, n, m))
        assert validate_port(s_hat, future, ref) == validate_port(s_hat, future, full)

    def test_degenerate_reference_rejected(self, rng):
        s = rng.normal(size=(1, 1, 2, 2)) + 0j
        with pytest.raises(ValueError):
            validate_port(s, s, np.zeros((1, 1), dtype=complex))

    def test_copy_task_selection_beats_wrong_port(self, rng):
        # prediction == future: selected port should give ratio <= any fixed port
        b, f, n, m = 4, 2, 5, 5
        ref = rng.normal(size=(b, f)) + 1j * rng.normal(size=(b, f))
        future = rng.normal(size=(b, f, n, m)) + 1j * rng.normal(size=(b, f, n, m))
        oracle = validate_port(future, future, ref)
        stationary = np.mean(
            np.abs(ref - future[:, :, 0, 0]) ** 2 / np.abs(ref) ** 2
        )
        assert oracle <= stationary + 1e-12


class TestLrSchedule:
    CFG = TrainConfig(epochs=1, batch_size=1, peak_lr=1e-3, warmup_steps=10, min_lr=1e-5)

    def test_step_zero(self):
        assert lr_at(0, 100, self.CFG) == 0.0

    def test_linear_ramp(self):
        assert lr_at(1, 100, self.CFG) == pytest.approx(1e-4)
        assert lr_at(5, 100, self.CFG) == pytest.approx(5e-4)

    def test_peak_at_warmup(self):
        assert lr_at(10, 100, self.CFG) == pytest.approx(1e-3)

    def test_min_at_total(self):
        assert lr_at(100, 100, self.CFG) == pytest.approx(1e-5, abs=1e-12)

    def test_continuity_at_boundary(self):
        just_after = lr_at(11, 1000, self.CFG)
        assert abs(just_after - self.CFG.peak_lr) < self.CFG.peak_lr * 0.01
        # cosine value at the first post-warmup step stays within one ramp slope
        before = lr_at(10, 1000, self.CFG)
        assert abs(just_after - before) < 1e-9 + self.CFG.peak_lr / 10

    def test_monotone_decay_after_warmup(self):
        values = [lr_at(s, 200, self.CFG) for s in range(10, 201)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_defaults_resolve(self):
        cfg = TrainConfig(epochs=2, batch_size=4)
        warmup, min_lr = cfg.resolve_schedule(100)
        assert warmup == 5
        assert min_lr == pytest.approx(0.01 * cfg.peak_lr)

    def test_warmup_must_fit(self):
        cfg = TrainConfig(epochs=1, batch_size=1, warmup_steps=10)
        with pytest.raises(ValueError):
            cfg.resolve_schedule(5)

    def test_min_lr_bound(self):
        with pytest.raises(ValueError):
            TrainConfig(peak_lr=1e-4, min_lr=1e-3)


class TestRatioToDb:
    def test_sentinel(self):
        assert ratio_to_db(0.0) == DB_SENTINEL

    def test_regular_value(self):
        assert ratio_to_db(0.505) == pytest.approx(10 * math.log10(0.505))


class TestTrain:
    def test_smoke_run_reduces_loss(self):
        sc, ds = micro_dataset()
        model = build_model(micro_net(), seed=1)
        with torch.no_grad():
            init_loss = loss_nmse(
                model(torch.from_numpy(ds.history[ds.train_idx])),
                torch.from_numpy(ds.future[ds.train_idx]),
            ).item()
        cfg = TrainConfig(epochs=8, batch_size=8, peak_lr=3e-3, seed=2)
        result = train(model, ds, cfg)
        with torch.no_grad():
            final_loss = loss_nmse(
                model(torch.from_numpy(ds.history[ds.train_idx])),
                torch.from_numpy(ds.future[ds.train_idx]),
            ).item()
        assert final_loss < init_loss
        assert len(result.metrics) == 8

    def test_frozen_weights_untouched(self):
        sc, ds = micro_dataset()
        model = build_model(micro_net(), seed=3)
        before = frozen_checksums(model)
        train(model, ds, TrainConfig(epochs=2, batch_size=8, seed=2))
        assert frozen_checksums(model) == before

    def test_metrics_deterministic(self):
        sc, ds = micro_dataset()
        cfg = TrainConfig(epochs=3, batch_size=8, seed=5)
        r1 = train(build_model(micro_net(), seed=4), ds, cfg)
        r2 = train(build_model(micro_net(), seed=4), ds, cfg)
        assert r1.metrics == r2.metrics

    def test_checkpoints_written_and_reloadable(self, tmp_path):
        sc, ds = micro_dataset()
        model = build_model(micro_net(), seed=6)
        cfg = TrainConfig(epochs=2, batch_size=8, seed=2)
        result = train(model, ds, cfg, out_dir=tmp_path)
        loaded, header, aux = load_checkpoint(result.final_path)
        x = torch.from_numpy(ds.history[:4])
        assert torch.equal(loaded(x), model(x))
        assert header["extra"]["epoch"] == 1
        assert any(k.startswith("opt.exp_avg.") for k in aux)

    def test_resume_continues_epoch_numbering(self, tmp_path):
        sc, ds = micro_dataset()
        cfg = TrainConfig(epochs=4, batch_size=8, seed=7)
        model = build_model(micro_net(), seed=8)
        train(model, ds, TrainConfig(epochs=2, batch_size=8, seed=7), out_dir=tmp_path)
        loaded, header, aux = load_checkpoint(tmp_path / "checkpoint-final.ckpt")
        result = train(
            loaded,
            ds,
            cfg,
            out_dir=tmp_path / "resumed",
            start_epoch=header["extra"]["epoch"] + 1,
            optimizer_aux=aux,
        )
        epochs = [row[0] for row in result.metrics]
        assert epochs == [2, 3]

    def test_nan_abort(self, tmp_path):
        sc, ds = micro_dataset()
        model = build_model(micro_net(), seed=9)
        # blow up the output head so the first forward overflows float32
        with torch.no_grad():
            model.out_proj.weight.mul_(1e30)
            model.out_proj.bias.add_(1e30)
        with pytest.raises(TrainingAborted):
            train(model, ds, TrainConfig(epochs=1, batch_size=8, seed=2), out_dir=tmp_path)

    def test_one_sample_overfit_mostly_monotone(self):
        sc, ds = micro_dataset()
        one = type(ds)(
            history=ds.history[:1],
            future=ds.future[:1],
            reference=ds.reference[:1],
            meta=ds.meta[:1],
            train_idx=np.array([0], dtype=np.uint32),
            test_idx=np.array([0], dtype=np.uint32),
            scenario=ds.scenario,
        )
        cfg = TrainConfig(epochs=30, batch_size=1, peak_lr=1e-3, warmup_steps=3, seed=3)
        result = train(build_model(micro_net(), seed=10), one, cfg)
        losses = [row[3] for row in result.metrics]
        after_warmup = losses[3:]
        drops = sum(
            1 for a, b in zip(after_warmup, after_warmup[1:]) if b <= a + 1e-9
        )
        assert drops / (len(after_warmup) - 1) >= 0.9

    def test_empty_split_rejected(self):
        sc, ds = micro_dataset()
        empty = type(ds)(
            history=ds.history,
            future=ds.future,
            reference=ds.reference,
            meta=ds.meta,
            train_idx=np.array([], dtype=np.uint32),
            test_idx=ds.test_idx,
            scenario=ds.scenario,
        )
        with pytest.raises(ValueError):
            train(build_model(micro_net(), seed=1), empty, TrainConfig())


def test_metrics_csv_round_trip(tmp_path):
    rows = [(0, 24, 1e-3, -1.5, -0.25), (1, 48, 5e-4, -3.0, DB_SENTINEL)]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,step,lr,train_nmse,val_nmse_v"
    assert lines[1].startswith("0,24,0.001,")
    assert lines[2].endswith("-300")
