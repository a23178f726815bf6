"""Accuracy checks on real MNIST.

The ``desk`` tier runs reduced schedules on a CPU in a few hours and needs
``GENMIX_MNIST_DIR``. The ``full`` tier runs full-length schedules and
additionally needs ``GENMIX_FULL=1``.
"""
from os import environ

import numpy as np
import pytest

from genmix.modules.gm_attacks import (AGN, AUN, DEFAULT_ROSTER, FGSM, ROSTER_PRESETS,
                                       apply_attack, success_rate)
from genmix.modules.gm_data import RngStreams, find_mnist_files, load_idx, split_train
from genmix.modules.gm_defense import (TrainConfig, pretrain_classifier, train_defense,
                                       train_separate_then_combine)
from genmix.modules.gm_eval import post_defense_accuracy

MNIST_DIR = environ.get("GENMIX_MNIST_DIR")
FULL = environ.get("GENMIX_FULL") == "1"

needs_mnist = pytest.mark.skipif(not MNIST_DIR, reason="GENMIX_MNIST_DIR not set")
needs_full = pytest.mark.skipif(not (MNIST_DIR and FULL), reason="GENMIX_FULL=1 not set")

BENCH_EXPECTED = {
    # kind: (expected success rate, tolerance)
    "FGSM": (0.898, 0.10), "PGD": (1.0, 0.05), "DF": (1.0, 0.05), "AUN": (0.906, 0.10),
    "BIM": (0.906, 0.10), "AGN": (0.906, 0.10), "RAGN": (0.945, 0.10), "SAPN": (0.906, 0.10),
    "SLIDE": (0.883, 0.10),
}


@pytest.fixture(scope="module")
def mnist():
    files = find_mnist_files(MNIST_DIR)
    return (load_idx(files["train_images"], files["train_labels"]),
            load_idx(files["test_images"], files["test_labels"]))


@pytest.fixture(scope="module")
def desk_classifier(mnist):
    train, test = mnist
    return pretrain_classifier(train, test, 10, rng=RngStreams(0))


@pytest.fixture(scope="module")
def full_classifier(mnist):
    train, test = mnist
    return pretrain_classifier(train, test, 100, rng=RngStreams(0))


def _defended_accuracy(mnist, classifier, roster, **overrides):
    train, test = mnist
    config = TrainConfig(progress=False, **overrides)
    split = split_train(train.without_labels(), RngStreams(config.seed))
    ens, _ = train_defense(split, classifier, roster, config)
    return post_defense_accuracy(ens, classifier, test, roster, seed=config.seed)


@needs_mnist
@pytest.mark.desk
class TestDesk:

    def test_classifier_reaches_98_percent(self, desk_classifier):
        _, accuracy = desk_classifier
        assert accuracy >= 0.98

    def test_untrained_classifier_is_at_chance(self, mnist):
        train, test = mnist
        _, accuracy = pretrain_classifier(train, test, 0)
        assert abs(accuracy - 0.10) <= 0.05

    def test_reduced_fgsm_defense_beats_the_attack(self, mnist, desk_classifier):
        classifier, _ = desk_classifier
        roster = [spec for spec in DEFAULT_ROSTER if spec.kind == FGSM]
        report = _defended_accuracy(mnist, classifier, roster, init_epochs=2, train_epochs=20)
        assert report.overall_accuracy >= report.baseline_attacked_accuracy + 0.40


@needs_full
@pytest.mark.full
class TestFull:

    def test_classifier_accuracy(self, full_classifier):
        _, accuracy = full_classifier
        assert accuracy == pytest.approx(0.987, abs=0.005)

    @pytest.mark.parametrize("spec", DEFAULT_ROSTER, ids=lambda s: s.label)
    def test_attack_success_rates(self, spec, mnist, full_classifier):
        classifier, _ = full_classifier
        train, _ = mnist
        chosen = np.sort(RngStreams(0).fresh("bench").choice(len(train), 128, replace=False))
        result = apply_attack(spec, classifier, train.images[chosen], train.labels[chosen],
                              RngStreams(0).fresh(f"noise/bench/{spec.label}"))
        expected, tolerance = BENCH_EXPECTED[spec.kind]
        assert success_rate(result) == pytest.approx(expected, abs=tolerance)

    def test_single_attack_fgsm(self, mnist, full_classifier):
        classifier, _ = full_classifier
        roster = [s for s in DEFAULT_ROSTER if s.kind == FGSM]
        report = _defended_accuracy(mnist, classifier, roster)
        assert report.overall_accuracy == pytest.approx(0.975, abs=0.03)

    def test_hard_attacks_stay_hard(self, mnist, full_classifier):
        classifier, _ = full_classifier
        accuracy = {spec.kind: _defended_accuracy(mnist, classifier, [spec]).overall_accuracy
                    for spec in DEFAULT_ROSTER}
        assert accuracy[AUN] <= 0.40 and accuracy[AGN] <= 0.40
        assert set(sorted(accuracy, key=accuracy.get)[:2]) == {AUN, AGN}

    def test_three_attack_joint(self, mnist, full_classifier):
        classifier, _ = full_classifier
        report = _defended_accuracy(mnist, classifier, ROSTER_PRESETS["three"], generators=3)
        assert 0.74 <= report.overall_accuracy <= 0.85

    def test_faster_init_nine_attacks(self, mnist, full_classifier):
        classifier, _ = full_classifier
        roster = ROSTER_PRESETS["nine"]
        faster = _defended_accuracy(mnist, classifier, roster, generators=9, faster_init=True)
        standard = _defended_accuracy(mnist, classifier, roster, generators=9)
        assert faster.overall_accuracy == pytest.approx(0.632, abs=3 * 0.021)
        assert faster.overall_accuracy == pytest.approx(standard.overall_accuracy, abs=0.06)

    def test_separate_beats_joint(self, mnist, full_classifier):
        classifier, _ = full_classifier
        train, test = mnist
        roster = ROSTER_PRESETS["three"]
        config = TrainConfig(generators=3, progress=False)
        split = split_train(train.without_labels(), RngStreams(config.seed))
        combined = train_separate_then_combine(split, classifier, roster, config)
        joint = _defended_accuracy(mnist, classifier, roster, generators=3)
        separate = post_defense_accuracy(combined, classifier, test, roster)
        assert separate.overall_accuracy >= joint.overall_accuracy + 0.05

    def test_large_generator_baseline(self, mnist, full_classifier):
        classifier, _ = full_classifier
        roster = ROSTER_PRESETS["nine"]
        large = _defended_accuracy(mnist, classifier, roster, generators=1, large_generator=True)
        mixture = _defended_accuracy(mnist, classifier, roster, generators=9)
        assert large.overall_accuracy == pytest.approx(mixture.overall_accuracy, abs=0.06)
