import numpy as np
import pytest

from semimatch import tensor as T
from semimatch.pipeline import Matcher, MatcherConfig
from semimatch.supervision import LossWeights
from semimatch.synth import SynthConfig, SyntheticPairs
from semimatch.train import AdamW, DivergenceError, TrainConfig, loss_curve_csv, pair_losses, train_toy

TINY = MatcherConfig(widths=(4, 4, 8, 8), blocks=(1, 1, 1, 1), n_layers=1, n_heads=2, s=2,
                     d_fine=8, fine_patch_width=8)


def tiny_dataset(count=4):
    return SyntheticPairs(count, seed=5, cfg=SynthConfig(size=32))


class TestOptimizer:
    def test_adamw_moves_toward_minimum(self):
        p = T.parameter(np.array([4.0], dtype=np.float32))
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        for _ in range(200):
            opt.zero_grad()
            ((p - 1.0) * (p - 1.0)).sum().backward()
            opt.step()
        assert abs(float(p.data[0]) - 1.0) < 0.05

    def test_weight_decay_applies_to_matrices_only(self):
        w = T.parameter(np.ones((2, 2), dtype=np.float32))
        b = T.parameter(np.ones(2, dtype=np.float32))
        opt = AdamW([w, b], lr=0.0, weight_decay=0.5)
        w.grad = np.zeros_like(w.data)
        b.grad = np.zeros_like(b.data)
        opt.step()
        np.testing.assert_array_equal(w.data, 1.0)  # lr 0: no update at all
        np.testing.assert_array_equal(b.data, 1.0)


class TestTrainToy:
    def test_zero_learning_rate_keeps_parameters_bit_identical(self):
        matcher = Matcher(TINY, seed=1)
        before = {name: t.data.copy() for name, t in matcher.named_tensors()}
        train_toy(matcher, tiny_dataset(), TrainConfig(steps=3, batch_size=1, lr=0.0, seed=0))
        for name, t in matcher.named_tensors():
            assert np.array_equal(before[name], t.data), name

    def test_deterministic_given_seed(self):
        curves = []
        for _ in range(2):
            matcher = Matcher(TINY, seed=1)
            curve = train_toy(matcher, tiny_dataset(), TrainConfig(steps=3, batch_size=1, seed=7))
            curves.append([r.total for r in curve])
        assert curves[0] == curves[1]

    def test_loss_decreases_over_short_run(self):
        matcher = Matcher(TINY, seed=1)
        curve = train_toy(matcher, tiny_dataset(8), TrainConfig(steps=40, batch_size=2, seed=0, warmup_steps=5))
        first = np.mean([r.l_c for r in curve[:8]])
        last = np.mean([r.l_c for r in curve[-8:]])
        assert last < first

    def test_divergence_detection(self):
        matcher = Matcher(TINY, seed=1)
        for p in matcher.trainable_parameters():
            p.data *= np.float32(1e30)  # force non-finite losses immediately
        with pytest.raises((DivergenceError, T.NumericError, FloatingPointError, ValueError)):
            with np.errstate(over="ignore", invalid="ignore"):
                train_toy(matcher, tiny_dataset(), TrainConfig(steps=2, batch_size=1, seed=0))

    def test_curve_csv_format(self):
        matcher = Matcher(TINY, seed=1)
        curve = train_toy(matcher, tiny_dataset(), TrainConfig(steps=2, batch_size=1, seed=0))
        lines = loss_curve_csv(curve).splitlines()
        assert lines[0] == "step,l_c,l_f1,l_f2,total"
        assert len(lines) == 3
        assert lines[1].startswith("0,")

    def test_pair_losses_are_finite_and_weighted_total_matches(self, rng):
        matcher = Matcher(TINY, seed=2)
        image_a, image_b, h = tiny_dataset()[0]
        l_c, l_f1, l_f2 = pair_losses(matcher, image_a, image_b, h, TrainConfig(), rng)
        for term in (l_c, l_f1, l_f2):
            if term is not None:
                assert np.isfinite(float(term.data))
        weights = LossWeights()
        from semimatch.supervision import total_loss

        total = total_loss(l_c, l_f1 if l_f1 is not None else 0.0, l_f2 if l_f2 is not None else 0.0, weights)
        expect = float(l_c.data)
        if l_f1 is not None:
            expect += weights.alpha * float(l_f1.data)
        if l_f2 is not None:
            expect += weights.beta * float(l_f2.data)
        assert np.isclose(float(total.data), expect, rtol=1e-6)
