"""Training pipeline: loss, metrics against oracles, splits, loop behavior."""

import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import assert_grads_close, fd_grad, pairwise_auc
from vampnet.autodiff import Tensor
from vampnet.errors import ConfigError, NumericError
from vampnet.model import ModelConfig
from vampnet.synth import SyntheticSpec, generate
from vampnet.train import (
    EpochRow,
    TrainConfig,
    auc_score,
    class_weights_from_counts,
    evaluate,
    random_search,
    split_cohort,
    train_model,
    weighted_ce,
    write_curves_csv,
    write_metrics_csv,
    write_trials_csv,
)


def tiny_cohort(n=120, seed=0):
    samples, _ = generate(SyntheticSpec(n_samples=n, vocab_size=40, background_rate=5.0, seed=seed))
    return samples


def tiny_model_cfg(**kw):
    defaults = dict(vocab_size=2, d_model=16, n_heads=2, n_layers=1, ff_hidden=8, conv_width=8, conv_layers=2)
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestClassWeights:
    def test_balanced_gives_unit_weights(self):
        assert np.allclose(class_weights_from_counts(10, 10), [1.0, 1.0])

    def test_three_to_one_imbalance(self):
        w = class_weights_from_counts(30, 10)
        assert np.allclose(w, [40 / 60, 40 / 20])

    def test_empty_class_rejected(self):
        with pytest.raises(ConfigError):
            class_weights_from_counts(5, 0)


class TestWeightedCe:
    def test_matches_hand_computation(self):
        logits = Tensor(np.array([[2.0, 0.5], [-1.0, 1.0]]))
        labels = np.array([0, 1])
        weights = np.array([0.5, 2.0])
        loss = weighted_ce(logits, labels, weights)
        expected = 0.0
        for i, y in enumerate(labels):
            z = logits.data[i]
            log_p = z[y] - math.log(np.exp(z - z.max()).sum()) - z.max()
            expected -= weights[y] * log_p
        expected /= 2.0
        assert abs(loss.data.item() - expected) < 1e-12

    def test_uniform_weights_reduce_to_plain_ce(self):
        rng = np.random.default_rng(0)
        logits = Tensor(rng.normal(size=(6, 2)))
        labels = rng.integers(0, 2, size=6)
        loss = weighted_ce(logits, labels, np.ones(2))
        z = logits.data
        log_p = z - np.log(np.exp(z - z.max(1, keepdims=True)).sum(1, keepdims=True)) - z.max(1, keepdims=True)
        plain = -log_p[np.arange(6), labels].mean()
        assert abs(loss.data.item() - plain) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x0 = rng.normal(size=(4, 2))
        labels = np.array([0, 1, 1, 0])
        weights = np.array([0.7, 1.6])

        logits = Tensor(x0.copy(), requires_grad=True)
        weighted_ce(logits, labels, weights).backward()

        def f():
            return np.asarray(weighted_ce(Tensor(x0), labels, weights).data).item()

        (numeric,) = fd_grad(f, [x0])
        assert_grads_close(logits.grad, numeric, "weighted_ce/logits")


class TestAucScore:
    @given(
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=40),
        st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_pairwise_oracle_exactly(self, scores, data):
        labels = data.draw(
            st.lists(st.sampled_from([0, 1]), min_size=len(scores), max_size=len(scores))
        )
        scores = np.array(scores)
        labels = np.array(labels)
        if len(set(labels)) < 2:
            assert auc_score(scores, labels) is None
        else:
            assert auc_score(scores, labels) == pairwise_auc(scores, labels)

    def test_known_value_with_ties(self):
        scores = np.array([0.9, 0.5, 0.5, 0.1])
        labels = np.array([1, 1, 0, 0])
        # pairs: (0.9,0.5)=1, (0.9,0.1)=1, (0.5,0.5)=0.5, (0.5,0.1)=1 -> 3.5/4
        assert auc_score(scores, labels) == 3.5 / 4

    def test_single_class_returns_none(self):
        assert auc_score(np.array([0.2, 0.8]), np.array([1, 1])) is None


class TestEvaluate:
    def test_matches_confusion_matrix_oracle(self):
        scores = np.array([0.9, 0.8, 0.6, 0.4, 0.2, 0.55])
        labels = np.array([1, 0, 1, 1, 0, 0])
        r = evaluate(scores, labels)
        pred = (scores >= 0.5).astype(int)
        tp = int(((pred == 1) & (labels == 1)).sum())
        fp = int(((pred == 1) & (labels == 0)).sum())
        fn = int(((pred == 0) & (labels == 1)).sum())
        tn = int(((pred == 0) & (labels == 0)).sum())
        assert r.n == 6
        assert r.accuracy == (tp + tn) / 6
        assert r.precision == tp / (tp + fp)
        assert r.recall == tp / (tp + fn)
        assert r.f1 == 2 * r.precision * r.recall / (r.precision + r.recall)
        assert r.balanced_accuracy == 0.5 * (tp / (tp + fn) + tn / (tn + fp))
        assert r.auc == pairwise_auc(scores, labels)

    def test_zero_division_conventions(self):
        scores = np.array([0.1, 0.2])
        labels = np.array([1, 1])
        r = evaluate(scores, labels)
        assert r.precision == 0.0 and r.recall == 0.0 and r.f1 == 0.0
        assert r.auc is None


class TestSplits:
    def test_partition_is_exact(self):
        samples = tiny_cohort(97)
        tr, va, te = split_cohort(samples, seed=4)
        ids = [s.sample_id for s in tr + va + te]
        assert sorted(ids) == sorted(s.sample_id for s in samples)
        assert len(set(ids)) == len(samples)

    def test_deterministic_given_seed(self):
        samples = tiny_cohort(80)
        a = split_cohort(samples, seed=9)
        b = split_cohort(samples, seed=9)
        for xs, ys in zip(a, b):
            assert [s.sample_id for s in xs] == [s.sample_id for s in ys]

    def test_seed_changes_split(self):
        samples = tiny_cohort(80)
        a = split_cohort(samples, seed=1)
        b = split_cohort(samples, seed=2)
        assert [s.sample_id for s in a[0]] != [s.sample_id for s in b[0]]

    def test_stratification_preserves_class_balance(self):
        samples = tiny_cohort(200)
        tr, va, te = split_cohort(samples, seed=3)
        overall = np.mean([s.label for s in samples])
        for part in (tr, va, te):
            frac = np.mean([s.label for s in part])
            assert abs(frac - overall) < 0.08

    def test_bad_fractions_rejected(self):
        with pytest.raises(ConfigError):
            split_cohort(tiny_cohort(20), seed=0, fractions=(0.5, 0.2, 0.2))


class TestTrainModel:
    def test_two_runs_same_seed_identical(self):
        samples = tiny_cohort()
        mc = tiny_model_cfg()
        tc = TrainConfig(seed=5, max_epochs=3, batch_size=16)
        r1 = train_model(samples, mc, tc)
        r2 = train_model(samples, mc, tc)
        assert [(e.epoch, e.split, e.loss, e.accuracy, e.auc) for e in r1.curves] == [
            (e.epoch, e.split, e.loss, e.accuracy, e.auc) for e in r2.curves
        ]
        assert r1.metrics["test"] == r2.metrics["test"]
        for (n1, p1), (n2, p2) in zip(
            sorted(r1.model.parameters().items()), sorted(r2.model.parameters().items())
        ):
            assert n1 == n2
            assert np.array_equal(p1.data, p2.data)

    def test_seed_changes_trajectory(self):
        samples = tiny_cohort()
        mc = tiny_model_cfg()
        r1 = train_model(samples, mc, TrainConfig(seed=5, max_epochs=2, batch_size=16))
        r2 = train_model(samples, mc, TrainConfig(seed=6, max_epochs=2, batch_size=16))
        assert any(
            a.loss != b.loss for a, b in zip(r1.curves, r2.curves)
        )

    def test_best_epoch_is_argmax_val_auc(self):
        samples = tiny_cohort()
        r = train_model(samples, tiny_model_cfg(), TrainConfig(seed=2, max_epochs=4, batch_size=16))
        val_rows = [e for e in r.curves if e.split == "val"]
        best_auc = max(v.auc for v in val_rows)
        assert val_rows[r.best_epoch - 1].auc == best_auc

    def test_early_stopping_stops_within_patience(self):
        samples = tiny_cohort()
        tc = TrainConfig(seed=2, max_epochs=40, batch_size=16, patience=2)
        r = train_model(samples, tiny_model_cfg(), tc)
        epochs_run = max(e.epoch for e in r.curves)
        assert epochs_run <= 40
        if epochs_run < 40:
            assert epochs_run == r.best_epoch + 2

    def test_divergent_loss_raises_numeric_error(self):
        samples = tiny_cohort()
        tc = TrainConfig(seed=2, max_epochs=3, batch_size=16, lr=1e9, optimizer="sgd")
        with np.errstate(all="ignore"), pytest.raises(NumericError):
            train_model(samples, tiny_model_cfg(), tc)

    def test_augmentation_changes_trajectory_not_determinism(self):
        samples = tiny_cohort()
        mc = tiny_model_cfg()
        base = TrainConfig(seed=3, max_epochs=2, batch_size=16)
        aug = TrainConfig(seed=3, max_epochs=2, batch_size=16, augment=True)
        r_plain = train_model(samples, mc, base)
        r_aug1 = train_model(samples, mc, aug)
        r_aug2 = train_model(samples, mc, aug)
        assert any(a.loss != b.loss for a, b in zip(r_plain.curves, r_aug1.curves))
        assert [(e.loss, e.auc) for e in r_aug1.curves] == [(e.loss, e.auc) for e in r_aug2.curves]

    def test_subword_encoding_trains(self):
        samples = tiny_cohort()
        mc = tiny_model_cfg(encoding="subword")
        tc = TrainConfig(seed=1, max_epochs=2, batch_size=16, subword_target=30)
        r = train_model(samples, mc, tc)
        assert r.vocab.mode == "subword"
        assert max(e.epoch for e in r.curves) == 2

    def test_invalid_config_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(seed=1, max_epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(seed=1, batch_size=0)
        with pytest.raises(ConfigError):
            TrainConfig(seed=1, fractions=(0.9, 0.2, 0.1))


class TestCsvWriters:
    def test_metrics_csv_shape_and_na(self):
        scores = np.array([0.9, 0.1])
        labels = np.array([1, 0])
        single = evaluate(np.array([0.9, 0.8]), np.array([1, 1]))
        both = evaluate(scores, labels)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d, "metrics.csv")
            write_metrics_csv(path, {"test": both, "degenerate": single})
            lines = path.read_text().splitlines()
        assert lines[0] == "split,n,accuracy,balanced_accuracy,precision,recall,f1,auc"
        assert lines[1].startswith("test,2,")
        assert lines[2].endswith("NA")

    def test_curves_csv_round_trip_floats(self):
        rows = [
            EpochRow(1, "train", 0.6931471805599453, 0.5, 0.5),
            EpochRow(1, "val", 0.1 + 0.2, 1.0, None),
        ]
        with tempfile.TemporaryDirectory() as d:
            path = Path(d, "curves.csv")
            write_curves_csv(path, rows)
            lines = path.read_text().splitlines()
        assert lines[0] == "epoch,split,loss,accuracy,auc"
        assert lines[1] == "1,train,0.6931471805599453,0.5,0.5"
        assert lines[2] == "1,val,0.30000000000000004,1.0,NA"


class TestRandomSearch:
    def test_search_is_deterministic_and_selects_best(self):
        samples = tiny_cohort()
        base_t = TrainConfig(seed=2, max_epochs=2, batch_size=16)
        r1 = random_search(samples, budget=2, seed=7, base_model=tiny_model_cfg(), base_train=base_t)
        r2 = random_search(samples, budget=2, seed=7, base_model=tiny_model_cfg(), base_train=base_t)
        assert r1.best_index == r2.best_index
        assert [t.selection_score for t in r1.trials] == [t.selection_score for t in r2.trials]
        best_score = max(t.selection_score for t in r1.trials)
        assert r1.trials[r1.best_index].selection_score == best_score

    def test_trials_csv_marks_selected_row(self):
        samples = tiny_cohort()
        base_t = TrainConfig(seed=2, max_epochs=1, batch_size=16)
        res = random_search(samples, budget=2, seed=1, base_model=tiny_model_cfg(), base_train=base_t)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d, "trials.csv")
            write_trials_csv(path, res)
            lines = path.read_text().splitlines()
        assert len(lines) == 3
        selected = [line.split(",")[-1] for line in lines[1:]]
        assert selected.count("1") == 1
        assert selected.index("1") == res.best_index
