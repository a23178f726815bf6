"""Small synthetic MNIST-like fixtures shared by the unit tests."""
from pathlib import Path
import gzip
import struct

import numpy as np

from genmix.modules.gm_data import IMAGES_MAGIC, LABELS_MAGIC, MNIST_FILES


def idx_images_bytes(images: np.ndarray) -> bytes:
    n, rows, cols = images.shape
    return struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_labels_bytes(labels: np.ndarray) -> bytes:
    return struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()


def synthetic_digits(n: int, seed: int = 0):
    """Blocky images whose bright column band encodes the label."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    images = rng.integers(0, 30, size=(n, 28, 28)).astype(np.uint8)
    for i, label in enumerate(labels):
        images[i, 4:24, 2 + 2 * label:4 + 2 * label] = 255
    return images, labels


def write_mnist_dir(directory, n_train: int = 40, n_test: int = 20, gz: bool = False) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    train_x, train_y = synthetic_digits(n_train, seed=1)
    test_x, test_y = synthetic_digits(n_test, seed=2)
    payloads = {
        "train_images": idx_images_bytes(train_x),
        "train_labels": idx_labels_bytes(train_y),
        "test_images": idx_images_bytes(test_x),
        "test_labels": idx_labels_bytes(test_y),
    }
    for key, payload in payloads.items():
        name = MNIST_FILES[key]
        if gz:
            with gzip.open(directory / f"{name}.gz", "wb") as f:
                f.write(payload)
        else:
            (directory / name).write_bytes(payload)
    return directory


def random_images(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).random((n, 1, 28, 28)).astype(np.float32)
