"""Tests for the MLP trainer: init, schedule, forward, backprop, divergence, IO."""

import numpy as np
import pytest

from epbt.data import Dataset
from epbt.population import Genome, baseline_genome
from epbt.taylor_loss import distill_targets
from epbt.trainer import (
    MlpArchitecture,
    SgdConfig,
    Weights,
    batch_loss_and_logit_grad,
    evaluate_accuracy,
    forward,
    he_init,
    load_weights,
    lr_at,
    predict_labels,
    save_weights,
    train_epochs,
)


def tiny_dataset(rng, samples=24, dims=3, classes=3):
    feats = rng.standard_normal((samples, dims))
    labels = rng.integers(0, classes, samples)
    return Dataset(feats, labels, class_count=classes)


def batch_loss_value(w, x, targets, genome, loss):
    probs = forward(w, x)
    value, _ = batch_loss_and_logit_grad(targets, probs, genome, loss)
    return value


def fd_weight_gradients(w, x, targets, genome, loss, step=1e-6):
    """Central finite differences of the batch loss over every parameter."""
    grads_m, grads_b = [], []
    for mat in w.matrices:
        grad = np.zeros_like(mat)
        for idx in np.ndindex(mat.shape):
            orig = mat[idx]
            mat[idx] = orig + step
            up = batch_loss_value(w, x, targets, genome, loss)
            mat[idx] = orig - step
            down = batch_loss_value(w, x, targets, genome, loss)
            mat[idx] = orig
            grad[idx] = (up - down) / (2 * step)
        grads_m.append(grad)
    for bias in w.biases:
        grad = np.zeros_like(bias)
        for idx in np.ndindex(bias.shape):
            orig = bias[idx]
            bias[idx] = orig + step
            up = batch_loss_value(w, x, targets, genome, loss)
            bias[idx] = orig - step
            down = batch_loss_value(w, x, targets, genome, loss)
            bias[idx] = orig
            grad[idx] = (up - down) / (2 * step)
        grads_b.append(grad)
    return grads_m, grads_b


def analytic_weight_gradients(w, x, targets, genome, loss):
    from epbt.trainer import _backprop, _forward_cached

    probs, acts, pre = _forward_cached(w, x)
    _, dz = batch_loss_and_logit_grad(targets, probs, genome, loss)
    return _backprop(w, acts, pre, dz)


def random_genome(rng) -> Genome:
    return Genome(
        theta=rng.uniform(-10, 10, 8),
        lr_scale=float(rng.uniform(0.01, 1.0)),
        lr_decay_factor=float(rng.uniform(1.5, 10.0)),
        momentum=float(rng.uniform(0.8, 0.99)),
    )


class TestHeInit:
    def test_variance_matches_fan_in(self, rng):
        w = he_init(MlpArchitecture((8, 2000)), rng)
        var = w.matrices[0].var()
        assert abs(var - 0.25) <= 0.025  # 2/8 with 10% slack

    def test_biases_exactly_zero(self, rng):
        w = he_init(MlpArchitecture((4, 8, 3)), rng)
        assert all(np.all(b == 0.0) for b in w.biases)

    def test_deterministic_under_seed(self):
        a = he_init(MlpArchitecture((5, 7, 2)), np.random.default_rng(9))
        b = he_init(MlpArchitecture((5, 7, 2)), np.random.default_rng(9))
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(ma, mb)

    def test_architecture_validation(self):
        with pytest.raises(ValueError):
            MlpArchitecture((4,))
        with pytest.raises(ValueError):
            MlpArchitecture((4, 0, 2))


class TestLrSchedule:
    def test_baseline_schedule_values(self):
        cfg = SgdConfig()  # base 0.1, scale 1, decay 5, milestones 0.3/0.6/0.8
        assert lr_at(cfg, 0, 200) == pytest.approx(0.1)
        assert lr_at(cfg, 60, 200) == pytest.approx(0.02)
        assert lr_at(cfg, 160, 200) == pytest.approx(0.0008)

    def test_no_decay_before_first_milestone(self):
        cfg = SgdConfig(lr_scale=0.7)
        assert lr_at(cfg, 59, 200) == pytest.approx(0.07)

    def test_scale_applies_at_start(self):
        assert lr_at(SgdConfig(lr_scale=0.5), 0, 200) == pytest.approx(0.05)

    def test_non_increasing(self):
        cfg = SgdConfig(decay_factor=3.0)
        values = [lr_at(cfg, e, 50) for e in range(50)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_fractional_milestones_round_to_epochs(self):
        # 0.3 * 10 is 3.0000000000000004 in floats; the drop must hit epoch 3
        cfg = SgdConfig(milestones=(0.3,), decay_factor=2.0)
        assert lr_at(cfg, 3, 10) == pytest.approx(0.05)
        assert lr_at(cfg, 2, 10) == pytest.approx(0.1)

    def test_epoch_bounds(self):
        with pytest.raises(ValueError):
            lr_at(SgdConfig(), 200, 200)


class TestForward:
    def test_zero_weights_give_uniform(self):
        w = Weights([np.zeros((3, 4))], [np.zeros(4)])
        probs = forward(w, np.ones((2, 3)))
        np.testing.assert_allclose(probs, 0.25, rtol=1e-12)

    def test_hand_computed_single_hidden_unit(self):
        # x=2 -> relu(2*0.5)=1 -> logits (1*1, 1*-1)=(1,-1) -> softmax
        w = Weights(
            [np.array([[0.5]]), np.array([[1.0, -1.0]])],
            [np.zeros(1), np.zeros(2)],
        )
        probs = forward(w, np.array([[2.0]]))
        expected = np.exp([1.0, -1.0]) / np.exp([1.0, -1.0]).sum()
        np.testing.assert_allclose(probs[0], expected, rtol=1e-12)

    def test_rows_sum_to_one_and_lie_in_unit_interval(self, rng):
        w = he_init(MlpArchitecture((4, 6, 5)), rng)
        probs = forward(w, rng.standard_normal((32, 4)) * 3)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs > 0) and np.all(probs < 1)

    def test_saturated_logits_stay_normalized(self, rng):
        # extreme inputs may round a probability to exactly 0 or 1, but the
        # rows must stay normalized and finite
        w = he_init(MlpArchitecture((4, 6, 5)), rng)
        probs = forward(w, rng.standard_normal((16, 4)) * 1e4)
        assert np.all(np.isfinite(probs))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(probs >= 0) and np.all(probs <= 1)

    def test_shape_mismatch_rejected(self, rng):
        w = he_init(MlpArchitecture((4, 3)), rng)
        with pytest.raises(ValueError, match="width"):
            forward(w, np.ones((2, 5)))


class TestGradients:
    def test_network_gradients_match_finite_differences_taylor(self):
        for trial in range(25):
            gen = np.random.default_rng(trial)
            w = he_init(MlpArchitecture((3, 4, 3)), gen)
            x = gen.standard_normal((4, 3))
            labels = gen.integers(0, 3, 4)
            targets = np.zeros((4, 3))
            targets[np.arange(4), labels] = 1.0
            genome = random_genome(gen)
            ana_m, ana_b = analytic_weight_gradients(w, x, targets, genome, "taylor")
            num_m, num_b = fd_weight_gradients(w, x, targets, genome, "taylor")
            for a, n in zip(ana_m + ana_b, num_m + num_b):
                assert np.all(np.abs(a - n) <= 1e-4 * np.maximum(1.0, np.abs(n)))

    def test_network_gradients_with_distillation_targets(self):
        gen = np.random.default_rng(77)
        w = he_init(MlpArchitecture((3, 5, 3)), gen)
        teacher = he_init(MlpArchitecture((3, 5, 3)), gen)
        x = gen.standard_normal((5, 3))
        labels = gen.integers(0, 3, 5)
        onehot = np.zeros((5, 3))
        onehot[np.arange(5), labels] = 1.0
        targets = distill_targets(onehot, forward(teacher, x), 0.35)
        genome = random_genome(gen)
        ana_m, ana_b = analytic_weight_gradients(w, x, targets, genome, "taylor")
        num_m, num_b = fd_weight_gradients(w, x, targets, genome, "taylor")
        for a, n in zip(ana_m + ana_b, num_m + num_b):
            assert np.all(np.abs(a - n) <= 1e-4 * np.maximum(1.0, np.abs(n)))

    def test_cross_entropy_gradients_match_finite_differences(self):
        gen = np.random.default_rng(5)
        w = he_init(MlpArchitecture((3, 4, 2)), gen)
        x = gen.standard_normal((6, 3))
        labels = gen.integers(0, 2, 6)
        targets = np.zeros((6, 2))
        targets[np.arange(6), labels] = 1.0
        ana_m, ana_b = analytic_weight_gradients(w, x, targets, baseline_genome(), "cross_entropy")
        num_m, num_b = fd_weight_gradients(w, x, targets, baseline_genome(), "cross_entropy")
        for a, n in zip(ana_m + ana_b, num_m + num_b):
            assert np.all(np.abs(a - n) <= 1e-4 * np.maximum(1.0, np.abs(n)))


class TestTrainEpochs:
    def test_training_improves_separable_blobs(self):
        from epbt.data import synth_blobs

        wins = 0
        for seed in range(5):
            gen = np.random.default_rng(seed)
            ds = synth_blobs(3, 40, 1.0, gen)
            # theta[5] > 0 rewards probability on the true class
            genome = Genome(
                theta=np.array([0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
                lr_scale=0.5,
                lr_decay_factor=5.0,
                momentum=0.9,
            )
            w0 = he_init(MlpArchitecture((2, 3)), gen)
            before = evaluate_accuracy(w0, ds)
            w1, report = train_epochs(
                w0, ds, genome, 2, sgd=SgdConfig(batch_size=16), total_epochs=20, rng=gen
            )
            after = evaluate_accuracy(w1, ds)
            assert not report.diverged
            if after > before:
                wins += 1
        assert wins >= 4

    def test_teacher_with_zero_alpha_matches_no_teacher(self, rng, blob_split):
        genome = random_genome(np.random.default_rng(2))
        teacher = he_init(MlpArchitecture((2, 6, 3)), np.random.default_rng(3))
        w0 = he_init(MlpArchitecture((2, 6, 3)), np.random.default_rng(4))
        kwargs = dict(sgd=SgdConfig(batch_size=16), total_epochs=10)
        plain, _ = train_epochs(
            w0, blob_split.train, genome, 4, rng=np.random.default_rng(5), **kwargs
        )
        distilled, _ = train_epochs(
            w0, blob_split.train, genome, 4, rng=np.random.default_rng(5),
            teacher=teacher, distill_alpha_max=0.0, **kwargs
        )
        for a, b in zip(plain.matrices, distilled.matrices):
            np.testing.assert_array_equal(a, b)

    def test_deterministic_given_seed(self, blob_split):
        genome = random_genome(np.random.default_rng(8))
        w0 = he_init(MlpArchitecture((2, 6, 3)), np.random.default_rng(9))
        a, _ = train_epochs(
            w0, blob_split.train, genome, 2, sgd=SgdConfig(batch_size=8),
            total_epochs=10, rng=np.random.default_rng(10),
        )
        b, _ = train_epochs(
            w0, blob_split.train, genome, 2, sgd=SgdConfig(batch_size=8),
            total_epochs=10, rng=np.random.default_rng(10),
        )
        for ma, mb in zip(a.matrices, b.matrices):
            np.testing.assert_array_equal(ma, mb)

    def test_input_weights_not_modified(self, blob_split):
        genome = random_genome(np.random.default_rng(1))
        w0 = he_init(MlpArchitecture((2, 4, 3)), np.random.default_rng(1))
        snapshot = [m.copy() for m in w0.matrices]
        train_epochs(
            w0, blob_split.train, genome, 1, sgd=SgdConfig(batch_size=8),
            total_epochs=5, rng=np.random.default_rng(2),
        )
        for before, after in zip(snapshot, w0.matrices):
            np.testing.assert_array_equal(before, after)

    def test_divergence_is_reported_not_raised(self, blob_split):
        # an enormous learning rate on steep loss terms blows up quickly
        genome = Genome(np.full(8, 10.0), 1.0, 1.5, 0.98)
        w0 = he_init(MlpArchitecture((2, 8, 3)), np.random.default_rng(0))
        huge = SgdConfig(base_lr=1e160, batch_size=8)
        _, report = train_epochs(
            w0, blob_split.train, genome, 3, sgd=huge, total_epochs=10,
            rng=np.random.default_rng(0),
        )
        assert report.diverged
        assert report.epochs_consumed < 3

    def test_epoch_budget_validation(self, blob_split):
        genome = random_genome(np.random.default_rng(0))
        w0 = he_init(MlpArchitecture((2, 3)), np.random.default_rng(0))
        with pytest.raises(ValueError):
            train_epochs(
                w0, blob_split.train, genome, 0, sgd=SgdConfig(), total_epochs=10,
                rng=np.random.default_rng(0),
            )
        with pytest.raises(ValueError, match="total_epochs"):
            train_epochs(
                w0, blob_split.train, genome, 11, sgd=SgdConfig(), total_epochs=10,
                rng=np.random.default_rng(0),
            )

    def test_on_epoch_reports_lifetime_counts(self, blob_split):
        genome = random_genome(np.random.default_rng(0))
        w0 = he_init(MlpArchitecture((2, 3)), np.random.default_rng(0))
        seen = []
        train_epochs(
            w0, blob_split.train, genome, 3, sgd=SgdConfig(batch_size=16),
            total_epochs=20, epochs_already=4, rng=np.random.default_rng(0),
            on_epoch=lambda lifetime, w: seen.append(lifetime),
        )
        assert seen == [5, 6, 7]


class TestEvaluateAccuracy:
    def test_counting(self):
        w = Weights([np.array([[1.0, -1.0]])], [np.zeros(2)])
        # positive feature -> class 0, negative -> class 1
        ds = Dataset(np.array([[1.0], [2.0], [-1.0], [1.0]]), np.array([0, 0, 1, 1]), 2)
        assert evaluate_accuracy(w, ds) == pytest.approx(0.75)

    def test_constant_prediction_extremes(self):
        w = Weights([np.zeros((1, 2))], [np.array([5.0, 0.0])])
        right = Dataset(np.ones((4, 1)), np.zeros(4, dtype=int), 2)
        wrong = Dataset(np.ones((4, 1)), np.ones(4, dtype=int), 2)
        assert evaluate_accuracy(w, right) == 1.0
        assert evaluate_accuracy(w, wrong) == 0.0

    def test_argmax_tie_breaks_to_lowest_class(self):
        w = Weights([np.zeros((2, 3))], [np.zeros(3)])
        ds = Dataset(np.ones((3, 2)), np.array([0, 1, 2]), 3)
        np.testing.assert_array_equal(predict_labels(w, ds.features), [0, 0, 0])

    def test_empty_dataset_rejected(self):
        w = Weights([np.zeros((1, 2))], [np.zeros(2)])
        ds = Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 2)
        with pytest.raises(ValueError, match="empty"):
            evaluate_accuracy(w, ds)


class TestWeightsIO:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        w = he_init(MlpArchitecture((5, 7, 4, 3)), rng)
        path = tmp_path / "model.wts"
        save_weights(w, path)
        loaded = load_weights(path)
        assert loaded.layer_sizes() == (5, 7, 4, 3)
        for a, b in zip(w.matrices + w.biases, loaded.matrices + loaded.biases):
            np.testing.assert_array_equal(a, b)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.wts"
        path.write_bytes(b"NOTAWTS!" + b"\x00" * 16)
        with pytest.raises(Exception, match="magic"):
            load_weights(path)
