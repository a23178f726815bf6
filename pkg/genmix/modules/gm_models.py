from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from genmix.internal.errors import ArchitectureMismatchError
from genmix.modules.gm_data import RngStreams
from genmix.modules.gm_nn import (AvgPool2D, BatchNorm2D, Conv2D, Dense, ELU, Flatten,
                                  Layer, MaxPool2D, NetworkModel, ParameterSet, ReLU,
                                  Sigmoid)

GENERATOR = "generator"
DISCRIMINATOR = "discriminator"
CLASSIFIER = "classifier"
LARGE_GENERATOR = "large_generator"

GENERATOR_CHANNELS = [1, 32, 32, 32, 32, 1]
LARGE_GENERATOR_CHANNELS = [1, 32, 64, 128, 128, 64, 32, 1]


def _default_rng(role: str) -> np.random.Generator:
    return RngStreams(0).fresh(f"{RngStreams.INIT}/{role}")


def _image_to_image_layers(channels: Sequence[int]) -> List[Layer]:
    # conv + ELU then BN on every hidden stage; sigmoid head keeps outputs in (0,1)
    layers: List[Layer] = []
    stages = list(zip(channels[:-1], channels[1:]))
    for i, (c_in, c_out) in enumerate(stages, start=1):
        layers.append(Conv2D(f"conv{i}", c_in, c_out, 3, padding=1))
        if i == len(stages):
            layers.append(Sigmoid("sigmoid"))
        else:
            layers += [ELU(f"elu{i}"), BatchNorm2D(f"bn{i}", c_out)]
    return layers


def _discriminator_layers() -> List[Layer]:
    layers: List[Layer] = []
    blocks = [(1, 16, 3), (16, 32, 2), (32, 64, 2)]
    index = 1
    for block, (c_in, c_out, repeats) in enumerate(blocks, start=1):
        for _ in range(repeats):
            layers += [Conv2D(f"conv{index}", c_in, c_out, 3, padding=1), ELU(f"elu{index}")]
            c_in = c_out
            index += 1
        layers.append(AvgPool2D(f"pool{block}"))
    layers += [
        Flatten("flatten"),
        Dense("dense1", 64 * 3 * 3, 1024), ELU("elu_dense"),
        Dense("dense2", 1024, 1), Sigmoid("sigmoid"),
    ]
    return layers


def _classifier_layers() -> List[Layer]:
    return [
        Conv2D("conv1", 1, 6, 5, padding=2), ReLU("relu1"), MaxPool2D("pool1"),
        Conv2D("conv2", 6, 16, 5), ReLU("relu2"), MaxPool2D("pool2"),
        Flatten("flatten"),
        Dense("dense1", 400, 120), ReLU("relu3"),
        Dense("dense2", 120, 84), ReLU("relu4"),
        Dense("dense3", 84, 10),
    ]


LAYER_FACTORIES: Dict[str, Callable[[], List[Layer]]] = {
    GENERATOR: lambda: _image_to_image_layers(GENERATOR_CHANNELS),
    LARGE_GENERATOR: lambda: _image_to_image_layers(LARGE_GENERATOR_CHANNELS),
    DISCRIMINATOR: _discriminator_layers,
    CLASSIFIER: _classifier_layers,
}


def build_model(role: str, rng: Optional[np.random.Generator] = None) -> NetworkModel:
    if role not in LAYER_FACTORIES:
        raise ValueError(f"unknown model role '{role}', expected one of {list(LAYER_FACTORIES)}")
    return NetworkModel.build(role, LAYER_FACTORIES[role](), rng or _default_rng(role))


def build_generator(rng: Optional[np.random.Generator] = None) -> NetworkModel:
    return build_model(GENERATOR, rng)


def build_large_generator(rng: Optional[np.random.Generator] = None) -> NetworkModel:
    return build_model(LARGE_GENERATOR, rng)


def build_discriminator(rng: Optional[np.random.Generator] = None) -> NetworkModel:
    return build_model(DISCRIMINATOR, rng)


def build_classifier(rng: Optional[np.random.Generator] = None) -> NetworkModel:
    return build_model(CLASSIFIER, rng)


def model_from_params(role: str, params: ParameterSet) -> NetworkModel:
    """Rebuild a model of ``role`` around loaded parameters."""
    if role not in LAYER_FACTORIES:
        raise ArchitectureMismatchError(f"unknown model role '{role}'")
    layers = LAYER_FACTORIES[role]()
    expected = [spec.name for layer in layers for spec in layer.param_specs()]
    if sorted(expected) != sorted(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ArchitectureMismatchError(
            f"{role}: parameter names differ (missing {missing}, unexpected {extra})")
    try:
        return NetworkModel(role, layers, params)
    except ValueError as exc:
        raise ArchitectureMismatchError(f"{role}: {exc}")
