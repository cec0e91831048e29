import math

import numpy as np
import pytest

from lawa.checkpoint_io import read_checkpoint
from lawa.config import RunConfig
from lawa.data import make_spirals
from lawa.engine import (
    BN_EPS,
    ModelSpec,
    backward,
    batch_loss,
    build_dataset,
    copy_bn_stats,
    evaluate,
    forward,
    init_params,
    is_running_stat,
    recompute_bn_stats,
    train_run,
)
from lawa.errors import (
    ConfigError,
    EmptyDataError,
    NonFiniteError,
    ShapeError,
)


def small_spec(use_bn=False, loss="cross_entropy", seed=0, widths=(2, 5, 3)):
    return ModelSpec(
        widths=widths,
        use_bn=tuple(use_bn for _ in widths[1:-1]),
        loss=loss,
        init_seed=seed,
    )


def random_batch(rng, spec, n=8):
    x = rng.normal(size=(n, spec.widths[0]))
    if spec.loss == "cross_entropy":
        y = rng.integers(0, spec.widths[-1], size=n)
    else:
        y = rng.normal(size=(n, spec.widths[-1]))
    return x, y


def fd_gradients(params, spec, x, y, h=1e-5):
    """Central finite differences of the training-mode batch loss."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = g.reshape(-1)
        base = arr.reshape(-1)
        for j in range(arr.size):
            for sign in (+1.0, -1.0):
                bumped = base.copy()
                bumped[j] += sign * h
                p2 = params.with_updates({name: bumped.reshape(arr.shape)})
                loss = batch_loss(p2, spec, x, y, training=True)
                flat[j] += sign * loss / (2.0 * h)
        grads[name] = g
    return grads


def assert_grads_match(params, spec, x, y, rtol=1e-4):
    _, cache = forward(params, spec, x, training=True)
    _, analytic = backward(params, spec, (x, y), cache)
    numeric = fd_gradients(params, spec, x, y)
    for name, num in numeric.items():
        ana = analytic[name]
        # floor the denominator: a bias feeding straight into batch norm
        # has an exactly-zero gradient, leaving only FD rounding noise
        denom = max(float(np.linalg.norm(num)), 1e-5)
        rel = float(np.linalg.norm(ana - num)) / denom
        assert rel < rtol, f"{name}: relative gradient error {rel:.2e}"


class TestInit:
    def test_deterministic_bitwise(self):
        spec = small_spec(seed=11)
        a, b = init_params(spec), init_params(spec)
        for name, arr in a.items():
            assert arr.tobytes() == b[name].tobytes()

    def test_parameter_count_2_3_2(self):
        spec = ModelSpec(widths=(2, 3, 2), use_bn=(False,), init_seed=0)
        assert init_params(spec).total_size() == 17

    def test_bn_entries_initialized(self):
        spec = small_spec(use_bn=True)
        params = init_params(spec)
        np.testing.assert_array_equal(params["layer0.bn_running_var"], 1.0)
        np.testing.assert_array_equal(params["layer0.bn_running_mean"], 0.0)
        np.testing.assert_array_equal(params["layer0.bn_gamma"], 1.0)

    def test_biases_zero_and_weights_bounded(self):
        spec = small_spec()
        params = init_params(spec)
        np.testing.assert_array_equal(params["layer0.bias"], 0.0)
        bound = 1.0 / math.sqrt(2)
        assert np.all(np.abs(params["layer0.weight"]) <= bound)

    def test_running_stat_name_convention(self):
        assert is_running_stat("layer0.bn_running_mean")
        assert is_running_stat("layer2.bn_running_var")
        assert not is_running_stat("layer0.bn_gamma")
        assert not is_running_stat("layer0.weight")


class TestForwardBackward:
    def test_zero_weight_network_gives_log2_loss(self):
        spec = ModelSpec(widths=(2, 5, 2), use_bn=(False,), init_seed=0)
        params = init_params(spec)
        zeroed = params.with_updates(
            {name: np.zeros_like(arr) for name, arr in params.items()}
        )
        x = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [-2.0, 1.0]])
        y = np.array([0, 1, 0, 1])
        _, cache = forward(zeroed, spec, x, training=True)
        loss, _ = backward(zeroed, spec, (x, y), cache)
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_shape_error_on_bad_input_width(self):
        spec = small_spec()
        with pytest.raises(ShapeError):
            forward(init_params(spec), spec, np.zeros((4, 3)), training=True)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_activations_raise(self):
        spec = small_spec()
        params = init_params(spec)
        huge = params.with_updates(
            {"layer0.weight": np.full_like(params["layer0.weight"], 1e308)}
        )
        with pytest.raises(NonFiniteError):
            forward(huge, spec, np.full((2, 2), 1e308), training=True)

    def test_gradients_match_finite_differences_no_bn(self):
        rng = np.random.default_rng(21)
        spec = small_spec(widths=(3, 6, 4, 2), seed=3)
        params = init_params(spec)
        x, y = random_batch(rng, spec)
        assert_grads_match(params, spec, x, y)

    def test_gradients_match_finite_differences_with_bn(self):
        rng = np.random.default_rng(22)
        spec = small_spec(use_bn=True, widths=(3, 6, 2), seed=4)
        params = init_params(spec)
        x, y = random_batch(rng, spec)
        assert_grads_match(params, spec, x, y)

    def test_gradients_match_finite_differences_mse(self):
        rng = np.random.default_rng(23)
        spec = small_spec(loss="mse", widths=(2, 4, 1), seed=5)
        params = init_params(spec)
        x, y = random_batch(rng, spec)
        assert_grads_match(params, spec, x, y)

    def test_duplicated_batch_leaves_loss_and_grads_unchanged(self):
        rng = np.random.default_rng(24)
        spec = small_spec(use_bn=True, widths=(2, 5, 3), seed=6)
        params = init_params(spec)
        x, y = random_batch(rng, spec, n=6)
        _, cache = forward(params, spec, x, training=True)
        loss1, grads1 = backward(params, spec, (x, y), cache)
        x2, y2 = np.concatenate([x, x]), np.concatenate([y, y])
        _, cache2 = forward(params, spec, x2, training=True)
        loss2, grads2 = backward(params, spec, (x2, y2), cache2)
        assert loss2 == pytest.approx(loss1, rel=1e-12)
        for name, g in grads1.items():
            np.testing.assert_allclose(grads2[name], g, rtol=1e-10, atol=1e-14)

    def test_running_stats_get_zero_gradients(self):
        rng = np.random.default_rng(25)
        spec = small_spec(use_bn=True, widths=(2, 4, 2), seed=7)
        params = init_params(spec)
        x, y = random_batch(rng, spec)
        _, cache = forward(params, spec, x, training=True)
        _, grads = backward(params, spec, (x, y), cache)
        assert not grads["layer0.bn_running_mean"].any()
        assert not grads["layer0.bn_running_var"].any()

    def test_training_forward_updates_running_stats_via_momentum(self):
        rng = np.random.default_rng(26)
        spec = small_spec(use_bn=True, widths=(2, 4, 2), seed=8)
        params = init_params(spec)
        x, _ = random_batch(rng, spec, n=16)
        _, cache = forward(params, spec, x, training=True)
        z = x @ params["layer0.weight"] + params["layer0.bias"]
        expected_mean = 0.9 * 0.0 + 0.1 * z.mean(axis=0)
        np.testing.assert_allclose(
            cache["bn_updates"]["layer0.bn_running_mean"], expected_mean, rtol=1e-12
        )


class TestRecomputeBnStats:
    def test_single_batch_equals_batch_statistics(self):
        rng = np.random.default_rng(27)
        spec = small_spec(use_bn=True, widths=(2, 5, 2), seed=9)
        params = init_params(spec)
        x = rng.normal(size=(32, 2))
        out = recompute_bn_stats(params, spec, x)
        z = x @ params["layer0.weight"] + params["layer0.bias"]
        np.testing.assert_allclose(
            out["layer0.bn_running_mean"], z.mean(axis=0), rtol=1e-12
        )
        np.testing.assert_allclose(
            out["layer0.bn_running_var"], z.var(axis=0), rtol=1e-12
        )

    def test_duplication_invariance(self):
        rng = np.random.default_rng(28)
        spec = small_spec(use_bn=True, widths=(3, 4, 2), seed=10)
        params = init_params(spec)
        x = rng.normal(size=(300, 3))
        once = recompute_bn_stats(params, spec, x)
        twice = recompute_bn_stats(params, spec, np.concatenate([x, x]))
        for name in ("layer0.bn_running_mean", "layer0.bn_running_var"):
            np.testing.assert_allclose(twice[name], once[name], rtol=1e-12)

    def test_two_pass_oracle_on_first_layer(self):
        rng = np.random.default_rng(29)
        spec = small_spec(use_bn=True, widths=(4, 8, 3), seed=11)
        params = init_params(spec)
        x = rng.normal(size=(512, 4))
        out = recompute_bn_stats(params, spec, x)
        # independent two-pass mean/variance on first-layer pre-activations
        z = x @ params["layer0.weight"] + params["layer0.bias"]
        mean = z.sum(axis=0) / len(z)
        var = ((z - mean) ** 2).sum(axis=0) / len(z)
        np.testing.assert_allclose(out["layer0.bn_running_mean"], mean, rtol=1e-6)
        np.testing.assert_allclose(out["layer0.bn_running_var"], var, rtol=1e-6)

    def test_later_layers_use_fresh_earlier_statistics(self):
        rng = np.random.default_rng(30)
        spec = ModelSpec(widths=(2, 4, 4, 2), use_bn=(True, True), init_seed=12)
        params = init_params(spec)
        x = rng.normal(size=(64, 2))
        out = recompute_bn_stats(params, spec, x)
        # second layer's oracle: feed activations normalized by layer0's new stats
        z0 = x @ params["layer0.weight"] + params["layer0.bias"]
        inv0 = 1.0 / np.sqrt(out["layer0.bn_running_var"] + BN_EPS)
        h0 = np.maximum(
            params["layer0.bn_gamma"] * (z0 - out["layer0.bn_running_mean"]) * inv0
            + params["layer0.bn_beta"],
            0.0,
        )
        z1 = h0 @ params["layer1.weight"] + params["layer1.bias"]
        np.testing.assert_allclose(
            out["layer1.bn_running_mean"], z1.mean(axis=0), rtol=1e-10
        )

    def test_non_bn_entries_bitwise_unchanged(self):
        rng = np.random.default_rng(31)
        spec = small_spec(use_bn=True, widths=(2, 4, 2), seed=13)
        params = init_params(spec)
        out = recompute_bn_stats(params, spec, rng.normal(size=(20, 2)))
        for name, arr in params.items():
            if not is_running_stat(name):
                assert out[name].tobytes() == arr.tobytes()

    def test_no_bn_model_is_identity(self):
        spec = small_spec(use_bn=False)
        params = init_params(spec)
        assert recompute_bn_stats(params, spec, np.zeros((4, 2))) is params

    def test_empty_dataset_rejected(self):
        spec = small_spec(use_bn=True)
        with pytest.raises(EmptyDataError):
            recompute_bn_stats(init_params(spec), spec, np.zeros((0, 2)))

    def test_train_inference_consistency_on_single_batch(self):
        rng = np.random.default_rng(32)
        spec = small_spec(use_bn=True, widths=(3, 6, 2), seed=14)
        params = init_params(spec)
        x = rng.normal(size=(40, 3))
        refreshed = recompute_bn_stats(params, spec, x)
        train_out, _ = forward(refreshed, spec, x, training=True)
        infer_out, _ = forward(refreshed, spec, x, training=False)
        np.testing.assert_allclose(infer_out, train_out, atol=1e-8)

    def test_copy_bn_stats(self):
        spec = small_spec(use_bn=True, widths=(2, 4, 2), seed=15)
        a = init_params(spec)
        b = a.with_updates(
            {
                "layer0.bn_running_mean": np.full(4, 2.5),
                "layer0.bn_running_var": np.full(4, 0.25),
            }
        )
        out = copy_bn_stats(a, b)
        np.testing.assert_array_equal(out["layer0.bn_running_mean"], 2.5)
        assert out["layer0.weight"].tobytes() == a["layer0.weight"].tobytes()


class TestEvaluate:
    def test_zero_weight_accuracy_is_class0_frequency(self):
        spec = ModelSpec(widths=(2, 3, 2), use_bn=(False,), init_seed=0)
        params = init_params(spec)
        zeroed = params.with_updates(
            {name: np.zeros_like(arr) for name, arr in params.items()}
        )
        x = np.random.default_rng(33).normal(size=(10, 2))
        y = np.array([0, 0, 0, 1, 1, 1, 1, 0, 1, 1])
        loss, acc = evaluate(zeroed, spec, x, y)
        assert acc == pytest.approx(0.4)  # ties resolve to class 0
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_batch_size_invariant(self):
        rng = np.random.default_rng(34)
        spec = small_spec(widths=(2, 8, 3), seed=16)
        params = init_params(spec)
        x = rng.normal(size=(100, 2))
        y = rng.integers(0, 3, size=100)
        full = evaluate(params, spec, x, y)
        chunked = evaluate(params, spec, x, y, batch_size=32)
        assert chunked[0] == pytest.approx(full[0], abs=1e-10)
        assert chunked[1] == full[1]

    def test_memorized_set_reaches_perfect_accuracy(self):
        from lawa.optim import Adam

        ds = make_spirals(seed=6, n_per_class=20, noise=0.0)
        spec = ModelSpec(widths=(2, 32, 32, 2), use_bn=(False, False), init_seed=6)
        params = init_params(spec)
        opt = Adam()
        x, y = ds.train()
        for _ in range(400):
            _, cache = forward(params, spec, x, training=True)
            _, grads = backward(params, spec, (x, y), cache)
            params = opt.step(params, grads, 0.01)
        _, acc = evaluate(params, spec, x, y)
        assert acc == 1.0

    def test_empty_dataset_rejected(self):
        spec = small_spec()
        with pytest.raises(EmptyDataError):
            evaluate(init_params(spec), spec, np.zeros((0, 2)), np.zeros(0))

    def test_regression_accuracy_is_nan(self):
        spec = small_spec(loss="mse", widths=(2, 3, 1))
        params = init_params(spec)
        loss, acc = evaluate(params, spec, np.zeros((4, 2)), np.zeros(4))
        assert math.isnan(acc)
        assert loss >= 0.0


def tiny_cfg(tmp_path, **overrides) -> RunConfig:
    base = dict(
        dataset="spirals",
        n_per_class=40,
        classes=2,
        noise=0.15,
        hidden=(8,),
        epochs=6,
        batch_size=16,
        lr=0.1,
        seed=3,
        scheme="uniform",
        k=3,
        out=str(tmp_path / "run"),
    )
    base.update(overrides)
    return RunConfig(**base)


class TestTrainRun:
    def test_scheme_none_leaves_avg_columns_empty(self, tmp_path):
        cfg = tiny_cfg(tmp_path, scheme="none")
        records = train_run(cfg)
        assert len(records) == cfg.epochs
        assert all(r.avg_val_loss is None and r.avg_val_acc is None for r in records)

    def test_k1_average_equals_raw_model(self, tmp_path):
        cfg = tiny_cfg(tmp_path, scheme="uniform", k=1)
        records = train_run(cfg)
        for r in records:
            assert r.avg_val_loss == pytest.approx(r.val_loss, abs=1e-10)
            assert r.avg_val_acc == pytest.approx(r.val_acc, abs=1e-10)

    def test_hook_timing_no_average_before_k_minus_1(self, tmp_path):
        cfg = tiny_cfg(tmp_path, scheme="uniform", k=4, epochs=7)
        records = train_run(cfg)
        for r in records:
            if r.epoch < cfg.k - 1:
                assert r.avg_val_loss is None
            else:
                assert r.avg_val_loss is not None

    def test_repeated_runs_are_byte_identical_modulo_wall(self, tmp_path):
        cfg_a = tiny_cfg(tmp_path, out=str(tmp_path / "a"))
        cfg_b = tiny_cfg(tmp_path, out=str(tmp_path / "b"))
        train_run(cfg_a)
        train_run(cfg_b)

        def strip_wall(path):
            lines = path.read_text().splitlines()
            return [line.rsplit(",", 1)[0] for line in lines]

        assert strip_wall(tmp_path / "a" / "metrics.csv") == strip_wall(
            tmp_path / "b" / "metrics.csv"
        )
        for f in sorted((tmp_path / "a").glob("*.lawa")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_checkpoint_files_match_epochs(self, tmp_path):
        cfg = tiny_cfg(tmp_path, epochs=5)
        train_run(cfg)
        out = tmp_path / "run"
        names = sorted(p.name for p in out.glob("ckpt_*.lawa"))
        assert names == [f"ckpt_e{e:05d}.lawa" for e in range(5)]
        ck = read_checkpoint(out / "ckpt_e00003.lawa")
        assert ck.epoch == 3
        assert ck.step == 4 * (32 // 16) * 2  # 64 train samples, batch 16 -> 4 steps

    def test_save_averaged_writes_post_gate_files(self, tmp_path):
        cfg = tiny_cfg(tmp_path, k=3, epochs=5, save_averaged=True)
        train_run(cfg)
        names = sorted(p.name for p in (tmp_path / "run").glob("lawa_*.lawa"))
        assert names == [f"lawa_e{e:05d}.lawa" for e in range(2, 5)]

    def test_step_interval_saving_creates_slot_checkpoints(self, tmp_path):
        # 64 train samples / batch 16 = 4 steps per epoch; save every 2 steps
        cfg = tiny_cfg(tmp_path, epochs=3, save_every_steps=2, k=3)
        records = train_run(cfg)
        out = tmp_path / "run"
        slots = sorted(p.name for p in out.glob("ckpt_*.lawa"))
        assert slots == [f"ckpt_e{s:05d}.lawa" for s in range(6)]
        saved = read_checkpoint(out / "ckpt_e00004.lawa")
        assert saved.step == 10  # fifth save event, every 2 steps
        # k=3 slots fill mid-epoch-1: averaged metrics exist from epoch 1 on
        assert records[0].avg_val_loss is None
        assert records[1].avg_val_loss is not None

    def test_batch_size_larger_than_split_rejected(self, tmp_path):
        cfg = tiny_cfg(tmp_path, batch_size=512)
        with pytest.raises(ConfigError):
            train_run(cfg)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_with_epoch(self, tmp_path):
        cfg = tiny_cfg(tmp_path, lr=1e120, schedule="constant")
        with pytest.raises(NonFiniteError, match="epoch 0"):
            train_run(cfg)
        # partial outputs are retained
        assert (tmp_path / "run" / "metrics.csv").exists()

    def test_polyak_and_ema_average_from_first_epoch(self, tmp_path):
        for scheme in ("polyak", "ema"):
            cfg = tiny_cfg(tmp_path, scheme=scheme, out=str(tmp_path / scheme))
            records = train_run(cfg)
            assert all(r.avg_val_loss is not None for r in records)

    def test_bn_run_with_recompute_mode(self, tmp_path):
        cfg = tiny_cfg(tmp_path, use_bn=True, bn_mode="recompute", epochs=4)
        records = train_run(cfg)
        assert records[-1].avg_val_loss is not None

    def test_bn_copy_mode_matches_newest_checkpoint_stats(self, tmp_path):
        cfg = tiny_cfg(
            tmp_path, use_bn=True, bn_mode="copy", epochs=4, k=2, save_averaged=True
        )
        train_run(cfg)
        out = tmp_path / "run"
        newest = read_checkpoint(out / "ckpt_e00003.lawa").params
        averaged = read_checkpoint(out / "lawa_e00003.lawa").params
        for name in newest.names:
            if is_running_stat(name):
                np.testing.assert_array_equal(averaged[name], newest[name])

    def test_build_dataset_dispatch(self, tmp_path):
        csv_path = tmp_path / "d.csv"
        csv_path.write_text("x,y,label\n" + "\n".join(f"{i},{i},{i%2}" for i in range(20)))
        cfg = tiny_cfg(tmp_path, dataset="csv", csv=str(csv_path))
        ds = build_dataset(cfg)
        assert ds.kind == "classification" and ds.n_features == 2
