import unittest

import numpy as np
import pytest

from genmix.internal.errors import ArchitectureMismatchError
from genmix.modules.gm_data import RngStreams
from genmix.modules.gm_models import (CLASSIFIER, DISCRIMINATOR, GENERATOR, LARGE_GENERATOR,
                                      build_classifier, build_discriminator, build_generator,
                                      build_large_generator, build_model, model_from_params)
from unit_tests.helpers import random_images


class TestArchitectures(unittest.TestCase):

    def test_parameter_counts(self):
        self.assertEqual(build_generator().param_count(), 28609)
        self.assertEqual(build_large_generator().param_count(), 333697)
        self.assertEqual(build_discriminator().param_count(), 665985)
        self.assertEqual(build_classifier().param_count(), 61706)

    def test_per_layer_parameter_counts(self):
        self.assertEqual(build_generator().layer_param_counts(), [
            ("conv1", 320), ("bn1", 64), ("conv2", 9248), ("bn2", 64), ("conv3", 9248),
            ("bn3", 64), ("conv4", 9248), ("bn4", 64), ("conv5", 289)])
        self.assertEqual(build_large_generator().layer_param_counts(), [
            ("conv1", 320), ("bn1", 64), ("conv2", 18496), ("bn2", 128), ("conv3", 73856),
            ("bn3", 256), ("conv4", 147584), ("bn4", 256), ("conv5", 73792), ("bn5", 128),
            ("conv6", 18464), ("bn6", 64), ("conv7", 289)])
        self.assertEqual(build_discriminator().layer_param_counts(), [
            ("conv1", 160), ("conv2", 2320), ("conv3", 2320), ("conv4", 4640),
            ("conv5", 9248), ("conv6", 18496), ("conv7", 36928), ("dense1", 590848),
            ("dense2", 1025)])
        self.assertEqual(build_classifier().layer_param_counts(), [
            ("conv1", 156), ("conv2", 2416), ("dense1", 48120), ("dense2", 10164),
            ("dense3", 850)])

    def test_per_layer_counts_sum_to_total(self):
        for model in (build_generator(), build_discriminator(), build_classifier()):
            self.assertEqual(sum(n for _, n in model.layer_param_counts()),
                             model.param_count())

    def test_generator_keeps_image_shape(self):
        out = build_generator().forward(random_images(2))
        self.assertEqual(out.shape, (2, 1, 28, 28))
        self.assertTrue(((out > 0) & (out < 1)).all())

    def test_discriminator_scores_in_unit_interval(self):
        model = build_discriminator()
        shapes = dict(model.layer_shapes())
        self.assertEqual(shapes["pool3"], (64, 3, 3))
        out = model.forward(random_images(3))
        self.assertEqual(out.shape, (3, 1))
        self.assertTrue(((out >= 0) & (out <= 1)).all())

    def test_classifier_logits(self):
        out = build_classifier().forward(random_images(4))
        self.assertEqual(out.shape, (4, 10))
        self.assertEqual(out.dtype, np.float32)

    def test_init_is_seeded(self):
        a = build_generator(RngStreams(3).fresh("init/generator/0"))
        b = build_generator(RngStreams(3).fresh("init/generator/0"))
        c = build_generator(RngStreams(3).fresh("init/generator/1"))
        self.assertEqual(a.checksum(), b.checksum())
        self.assertNotEqual(a.checksum(), c.checksum())


class TestModelFromParams:

    @pytest.mark.parametrize("role", [GENERATOR, DISCRIMINATOR, CLASSIFIER, LARGE_GENERATOR])
    def test_rebuild(self, role):
        model = build_model(role)
        rebuilt = model_from_params(role, model.params.copy())
        assert rebuilt.checksum() == model.checksum()

    def test_wrong_role(self):
        with pytest.raises(ArchitectureMismatchError):
            model_from_params(CLASSIFIER, build_generator().params)

    def test_unknown_role(self):
        with pytest.raises(ArchitectureMismatchError):
            model_from_params("critic", build_generator().params)
        with pytest.raises(ValueError):
            build_model("critic")
