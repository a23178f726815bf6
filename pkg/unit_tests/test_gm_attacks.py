import dataclasses
import unittest

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from genmix.internal.errors import ConfigError
from genmix.modules.gm_attacks import (AGN, BIM, DEFAULT_ROSTER, DF, FGSM, L1, L2, LINF, PGD,
                                       RAGN, ROSTER_PRESETS, SAPN, SLIDE, AttackSpec,
                                       apply_attack, attack_dataset, deepfool,
                                       load_attack_cache, parse_attack, perturbation_norms,
                                       predict, project_l1_ball, salt_and_pepper,
                                       salt_pepper_schedule, save_attack_cache, success_rate)
from genmix.modules.gm_models import build_classifier
from genmix.modules.gm_nn import Dense, Flatten, NetworkModel, cross_entropy
from unit_tests.helpers import random_images

# shortened solvers keep the suite quick; budgets and projections are unchanged
QUICK = {PGD: {"steps": 3}, BIM: {"steps": 3}, DF: {"steps": 3}, RAGN: {"max_repeats": 3},
         SAPN: {"steps": 4}, SLIDE: {"steps": 3}}


def quick(spec):
    return dataclasses.replace(spec, **QUICK.get(spec.kind, {}))


def within_budget(norms, epsilon):
    return bool((norms <= epsilon * (1 + 1e-5) + 1e-6).all())


@pytest.fixture(scope="module")
def classifier():
    return build_classifier()


@pytest.fixture(scope="module")
def images():
    return random_images(4, seed=7)


class TestAttackSpec(unittest.TestCase):

    def test_parse_with_options(self):
        spec = parse_attack("pgd:0.5:steps=20,random_start=false")
        self.assertEqual(spec.kind, PGD)
        self.assertEqual(spec.steps, 20)
        self.assertFalse(spec.random_start)
        self.assertAlmostEqual(spec.step_size, 0.05)
        self.assertEqual(spec.label, "PGD:0.5")

    def test_solver_defaults(self):
        pgd = AttackSpec.create(PGD, 0.3)
        self.assertEqual((pgd.steps, pgd.random_start), (40, True))
        self.assertAlmostEqual(pgd.step_size, 0.03)
        self.assertEqual(AttackSpec.create(RAGN, 15).max_repeats, 100)
        self.assertEqual(AttackSpec.create(SLIDE, 25).quantile, 0.99)

    def test_norm_families(self):
        self.assertEqual(AttackSpec.create(FGSM, 1).norm, LINF)
        self.assertEqual(AttackSpec.create(SAPN, 1).norm, L2)
        self.assertEqual(AttackSpec.create(SLIDE, 1).norm, L1)

    def test_parse_errors(self):
        for text in ("FGSM", "NOPE:1", "FGSM:abc", "FGSM:0.1:foo=1", "PGD:0.1:steps=x",
                     "FGSM:-0.1", "PGD:0.1:random_start=maybe"):
            with self.assertRaises(ConfigError, msg=text):
                parse_attack(text)

    def test_roster(self):
        self.assertEqual([s.kind for s in DEFAULT_ROSTER],
                         ["FGSM", "PGD", "DF", "AUN", "BIM", "AGN", "RAGN", "SAPN", "SLIDE"])
        self.assertEqual(len(ROSTER_PRESETS["three"]), 3)
        self.assertEqual(len(ROSTER_PRESETS["five"]), 5)


class TestBudgets:

    @pytest.mark.parametrize("spec", DEFAULT_ROSTER, ids=lambda s: s.label)
    def test_output_in_range_and_budget(self, spec, classifier, images):
        before = classifier.checksum()
        result = apply_attack(quick(spec), classifier, images, None, np.random.default_rng(0))

        assert result.adversarial.shape == images.shape
        assert result.adversarial.dtype == images.dtype
        assert result.adversarial.min() >= 0.0 and result.adversarial.max() <= 1.0
        norms = perturbation_norms(result.adversarial, images, spec.norm)
        assert within_budget(norms, spec.epsilon)
        np.testing.assert_allclose(result.norms, norms)
        assert classifier.checksum() == before

    @pytest.mark.parametrize("kind", [FGSM, PGD, BIM, AGN, SLIDE])
    def test_zero_budget_is_identity(self, kind, classifier, images):
        spec = quick(AttackSpec.create(kind, 0.0))
        result = apply_attack(spec, classifier, images, None, np.random.default_rng(0))
        np.testing.assert_array_equal(result.adversarial, images)
        assert success_rate(result) == 0.0


class TestGradientAttacks:

    def test_bim_single_step_equals_fgsm(self, classifier, images):
        y = np.arange(4)
        fgsm = apply_attack(AttackSpec.create(FGSM, 0.2), classifier, images, y)
        bim = apply_attack(AttackSpec.create(BIM, 0.2, steps=1, step_size=0.2), classifier,
                           images, y)
        np.testing.assert_array_equal(fgsm.adversarial, bim.adversarial)

    def test_pgd_random_start_is_seeded(self, classifier, images):
        spec = AttackSpec.create(PGD, 0.3, steps=2)
        a = apply_attack(spec, classifier, images, None, np.random.default_rng(5))
        b = apply_attack(spec, classifier, images, None, np.random.default_rng(5))
        np.testing.assert_array_equal(a.adversarial, b.adversarial)

    def test_fgsm_raises_loss(self, classifier, images):
        y = predict(classifier, images)
        result = apply_attack(AttackSpec.create(FGSM, 0.1), classifier, images, y)
        clean, _ = cross_entropy(classifier.forward(images), y)
        attacked, _ = cross_entropy(classifier.forward(result.adversarial), y)
        assert attacked > clean


class TestDeepFool:

    def _linear(self):
        layers = [Flatten("flatten"), Dense("dense1", 784, 10)]
        return NetworkModel.build("linear", layers, np.random.default_rng(0), dtype=np.float64)

    def test_step_lands_on_nearest_boundary(self):
        model = self._linear()
        x = np.random.default_rng(1).random((3, 1, 28, 28))
        y = predict(model, x)
        logits = model.forward(x + deepfool(model, x, y))
        rows = np.arange(3)
        top_two = np.sort(logits, axis=1)[:, -2:]
        np.testing.assert_allclose(top_two[:, 0], top_two[:, 1], atol=1e-8)
        np.testing.assert_allclose(logits[rows, y], top_two[:, 1], atol=1e-8)

    def test_already_misclassified_untouched(self, classifier, images):
        y = (predict(classifier, images) + 1) % 10
        result = apply_attack(AttackSpec.create(DF, 0.5, steps=3), classifier, images, y)
        np.testing.assert_array_equal(result.adversarial, images)


class TestNoise:

    def test_agn_hits_the_l2_budget_before_clipping(self, classifier):
        x = np.full((3, 1, 28, 28), 0.5, dtype=np.float32)
        result = apply_attack(AttackSpec.create(AGN, 2.0), classifier, x, None,
                              np.random.default_rng(0))
        np.testing.assert_allclose(result.norms, 2.0, rtol=1e-4)

    def test_same_stream_same_noise(self, classifier, images):
        spec = AttackSpec.create(AGN, 5.0)
        a = apply_attack(spec, classifier, images, None, np.random.default_rng(9))
        b = apply_attack(spec, classifier, images, None, np.random.default_rng(9))
        np.testing.assert_array_equal(a.adversarial, b.adversarial)

    def test_salt_and_pepper_fraction(self):
        x = np.full((2, 1, 28, 28), 0.5, dtype=np.float32)
        out = salt_and_pepper(x, 0.1, np.random.default_rng(0))
        changed = (out != 0.5).reshape(2, -1).sum(axis=1)
        assert list(changed) == [78, 78]
        assert set(np.unique(out)) <= {0.0, 0.5, 1.0}

    def test_salt_pepper_schedule_grows(self):
        schedule = salt_pepper_schedule(AttackSpec.create(SAPN, 10.0), 784)
        assert schedule[0] == 1
        assert schedule[-1] == 78
        assert schedule == sorted(schedule)


class TestL1Projection:

    def test_known_projection(self):
        v = np.array([[3.0, -1.0]])
        np.testing.assert_allclose(project_l1_ball(v, 2.0), [[2.0, 0.0]])

    def test_zero_radius(self):
        np.testing.assert_array_equal(project_l1_ball(np.ones((1, 4)), 0.0), np.zeros((1, 4)))

    @settings(max_examples=60, deadline=None)
    @given(v=arrays(np.float64, (3, 12), elements=st.floats(-5, 5)),
           radius=st.floats(0.01, 20))
    def test_result_inside_ball_and_inside_points_fixed(self, v, radius):
        projected = project_l1_ball(v, radius)
        l1 = np.abs(projected).sum(axis=1)
        assert (l1 <= radius * (1 + 1e-9) + 1e-9).all()
        inside = np.abs(v).sum(axis=1) <= radius
        np.testing.assert_allclose(projected[inside], v[inside])
        assert (np.sign(projected) * np.sign(v) >= 0).all()


class TestAttackCache:

    def test_round_trip(self, tmp_path, classifier, images):
        y = predict(classifier, images)
        spec = AttackSpec.create(FGSM, 0.3)
        result = attack_dataset(spec, classifier, images, y, np.random.default_rng(0),
                                batch_size=3)
        save_attack_cache(tmp_path / "fgsm.ckpt", result, y)
        loaded, labels = load_attack_cache(tmp_path / "fgsm.ckpt")
        np.testing.assert_array_equal(loaded.adversarial, result.adversarial)
        np.testing.assert_array_equal(labels, y)
        np.testing.assert_array_equal(loaded.success, result.success)
        assert loaded.spec == spec
