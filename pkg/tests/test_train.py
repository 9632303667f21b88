import numpy as np
import pytest

from wepsam import net, synth, train
from wepsam.errors import CheckpointMismatchError, NonFiniteError
from wepsam.imagecore import write_pgm, write_ppm
from wepsam.metrics import cc
from wepsam.weakset import WeakLabelRecord

TINY = net.NetConfig(input_size=16, conv_channels=(4, 6, 8),
                     conv_kernels=(5, 3, 3), fc1_width=16)


@pytest.fixture
def tiny_dataset(tmp_path):
    """Three 16x16 blob images with density targets, as manifest records."""
    rng = np.random.default_rng(0)
    records = []
    for i in range(3):
        img, density = synth.blob_image(rng, size=16, map_side=4)
        image_path = tmp_path / f"img{i}.ppm"
        map_path = tmp_path / f"map{i}.pgm"
        write_ppm(image_path, img)
        write_pgm(map_path, density)
        records.append(WeakLabelRecord(f"img{i}", str(image_path), str(map_path)))
    return records


def tiny_config(**overrides):
    base = dict(stage="finetune", epochs=2, batch_size=2, seed=0, net=TINY,
                checkpoint_every=0)
    base.update(overrides)
    return train.TrainConfig(**base)


class TestLrSchedule:
    def test_starts_at_lr_start(self):
        assert train.lr_schedule(0, 500, 0.3, 1e-4) == 0.3

    def test_ends_at_lr_end(self):
        assert train.lr_schedule(499, 500, 0.3, 1e-4) == pytest.approx(1e-4,
                                                                       rel=1e-12)

    def test_geometric_midpoint(self):
        # odd total: the middle epoch sits at the geometric mean
        mid = train.lr_schedule(250, 501, 0.3, 1e-4)
        assert mid == pytest.approx(np.sqrt(0.3 * 1e-4), rel=1e-12)

    def test_strictly_decreasing(self):
        values = [train.lr_schedule(e, 100, 0.3, 1e-4) for e in range(100)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_single_epoch_returns_start(self):
        assert train.lr_schedule(0, 1, 0.3, 1e-4) == 0.3

    def test_epoch_out_of_range(self):
        with pytest.raises(ValueError):
            train.lr_schedule(5, 5, 0.3, 1e-4)
        with pytest.raises(ValueError):
            train.lr_schedule(-1, 5, 0.3, 1e-4)

    def test_bad_endpoints(self):
        with pytest.raises(ValueError):
            train.lr_schedule(0, 10, 1e-4, 0.3)


class TestNesterovStep:
    def test_hand_computed_update(self):
        # L(p) = p^2 from p=1: g=2, lr=0.1, mu=0.9
        w = {"p": np.array([1.0])}
        v = {"p": np.array([0.0])}
        train.nesterov_step(w, {"p": np.array([2.0])}, v, 0.1, 0.9)
        assert v["p"][0] == pytest.approx(-0.2)
        assert w["p"][0] == pytest.approx(0.62)

    def test_momentum_off_is_plain_sgd(self):
        w = {"p": np.array([1.0, 2.0])}
        v = {"p": np.zeros(2)}
        g = {"p": np.array([0.5, -1.0])}
        train.nesterov_step(w, g, v, 0.1, 0.0)
        np.testing.assert_allclose(w["p"], [0.95, 2.1])

    def test_zero_gradient_fixed_point(self):
        w = {"p": np.array([3.0])}
        v = {"p": np.array([0.0])}
        train.nesterov_step(w, {"p": np.array([0.0])}, v, 0.1, 0.9)
        assert w["p"][0] == 3.0 and v["p"][0] == 0.0

    def test_quadratic_convergence(self):
        # optimizer sanity, independent of the CNN: min of sum(p^2)
        w = {"p": np.ones(5)}
        v = {"p": np.zeros(5)}
        for step in range(10 ** 4):
            train.nesterov_step(w, {"p": 2.0 * w["p"]}, v, 1e-3, 0.9)
            if np.abs(w["p"]).max() <= 1e-6:
                break
        assert np.abs(w["p"]).max() <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            train.nesterov_step({"p": np.zeros(3)}, {"p": np.zeros(4)},
                                {"p": np.zeros(3)}, 0.1, 0.9)

    def test_non_finite_gradient(self):
        with pytest.raises(NonFiniteError):
            train.nesterov_step({"p": np.zeros(2)},
                                {"p": np.array([1.0, np.nan])},
                                {"p": np.zeros(2)}, 0.1, 0.9)


class TestTrainStage:
    def test_zero_lr_leaves_params_bit_equal(self, tiny_dataset):
        cfg = tiny_config(epochs=1, lr_start=0.0, lr_end=0.0)
        reference = net.init_params(cfg.seed, TINY)
        params, rows = train.train_stage(tiny_dataset, tiny_dataset, cfg)
        assert len(rows) == 1
        for name in reference.weights:
            np.testing.assert_array_equal(params.weights[name],
                                          reference.weights[name])

    def test_zero_lr_epoch_loss_equals_mean_sample_loss(self, tiny_dataset):
        # with frozen params the weighted batch mean must equal the plain
        # per-sample mean, which pins the ragged-batch weighting
        cfg = tiny_config(epochs=1, batch_size=2, lr_start=0.0, lr_end=0.0)
        params, rows = train.train_stage(tiny_dataset, tiny_dataset, cfg)
        x, t = train._load_dataset(tiny_dataset, TINY)
        per_sample = np.mean([net.mse_loss(net.forward(params, x[i]), t[i])
                              for i in range(len(x))])
        assert rows[0].train_loss == pytest.approx(per_sample, rel=1e-6)
        assert rows[0].val_loss == pytest.approx(per_sample, rel=1e-6)

    def test_deterministic_checkpoints(self, tiny_dataset, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        out_a.mkdir(), out_b.mkdir()
        for out in (out_a, out_b):
            train.train_stage(tiny_dataset, tiny_dataset,
                              tiny_config(epochs=3), out_dir=str(out))
        assert ((out_a / "checkpoint.wep").read_bytes()
                == (out_b / "checkpoint.wep").read_bytes())

    def test_single_sample_memorization(self, tiny_dataset):
        cfg = tiny_config(epochs=100, batch_size=1)
        params, rows = train.train_stage(tiny_dataset[:1], tiny_dataset[:1], cfg)
        losses = [r.train_loss for r in rows]
        assert all(a > b for a, b in zip(losses[:9], losses[1:10]))
        assert losses[-1] < 1e-3

    def test_predict_on_memorized_sample(self, tiny_dataset):
        cfg = tiny_config(epochs=120, batch_size=1)
        params, _ = train.train_stage(tiny_dataset[:1], tiny_dataset[:1], cfg)
        from wepsam.imagecore import load_image, load_map, resize_bilinear
        img = load_image(tiny_dataset[0].image_path)
        target = load_map(tiny_dataset[0].map_path)
        saliency = train.predict(params, img)
        assert saliency.shape == img.shape[:2]
        assert saliency.min() >= 0.0 and saliency.max() <= 1.0
        assert cc(saliency, resize_bilinear(target, *img.shape[:2])) > 0.9

    def test_empty_dataset_rejected(self, tiny_dataset):
        with pytest.raises(ValueError):
            train.train_stage([], tiny_dataset, tiny_config())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergent_lr_aborts(self, tiny_dataset):
        cfg = tiny_config(epochs=50, lr_start=1e9, lr_end=1e8)
        with pytest.raises(NonFiniteError), np.errstate(all="ignore"):
            train.train_stage(tiny_dataset, tiny_dataset, cfg)

    def test_init_from_checkpoint(self, tiny_dataset, tmp_path):
        seed_params = net.init_params(5, TINY)
        seed_params.velocity["fc1_w"][:] = 0.5
        ckpt = tmp_path / "init.wep"
        net.save_checkpoint(ckpt, seed_params)
        params = train.init_stage_params(tiny_config(init=str(ckpt)))
        np.testing.assert_array_equal(params.weights["fc1_w"],
                                      seed_params.weights["fc1_w"])
        # stage start resets optimizer state
        np.testing.assert_array_equal(params.velocity["fc1_w"], 0.0)

    def test_checkpoint_architecture_mismatch(self, tiny_dataset, tmp_path):
        other = net.NetConfig(input_size=24, conv_channels=(4, 6, 8),
                              conv_kernels=(5, 3, 3), fc1_width=16)
        ckpt = tmp_path / "other.wep"
        net.save_checkpoint(ckpt, net.init_params(0, other))
        with pytest.raises(CheckpointMismatchError):
            train.train_stage(tiny_dataset, tiny_dataset,
                              tiny_config(init=str(ckpt)))

    def test_periodic_checkpoints(self, tiny_dataset, tmp_path):
        cfg = tiny_config(epochs=4, checkpoint_every=2)
        train.train_stage(tiny_dataset, tiny_dataset, cfg, out_dir=str(tmp_path))
        names = sorted(p.name for p in tmp_path.glob("*.wep"))
        assert names == ["checkpoint.wep", "checkpoint_ep0002.wep",
                         "checkpoint_ep0004.wep"]

    def test_target_resampled_to_map_grid(self, tmp_path):
        rng = np.random.default_rng(1)
        img, _ = synth.blob_image(rng, size=16, map_side=4)
        write_ppm(tmp_path / "i.ppm", img)
        write_pgm(tmp_path / "m.pgm", rng.random((9, 11)))   # off-grid target
        rec = WeakLabelRecord("i", str(tmp_path / "i.ppm"), str(tmp_path / "m.pgm"))
        x, t = train.load_pair(rec, TINY)
        assert x.shape == (3, 16, 16)
        assert t.shape == (TINY.output_units,)


class TestLossCsv:
    def test_roundtrip_and_determinism(self, tmp_path):
        rows = [train.LossRow(0, 0.5, 0.6, 0.3),
                train.LossRow(1, 1 / 3, 2 / 7, 0.1)]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        train.write_loss_csv(a, rows)
        train.write_loss_csv(b, rows)
        assert a.read_bytes() == b.read_bytes()
        loaded = train.read_loss_csv(a)
        assert loaded == rows
