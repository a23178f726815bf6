import gzip
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from genmix.internal.errors import DataError, IdxFormatError
from genmix.internal.utils import get_genmix_logger

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}

# every IDX path opened by this module, in order
ACCESS_TRACE: List[str] = []

logger = get_genmix_logger()


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray
    labels: Optional[np.ndarray] = None
    indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.images):
            raise DataError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if self.indices is None:
            object.__setattr__(self, "indices",
                               np.arange(len(self.images), dtype=np.int64))
        for array in (self.images, self.labels, self.indices):
            if array is not None:
                array.setflags(write=False)

    def __len__(self):
        return len(self.images)

    def subset(self, positions: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[positions]
        return Dataset(self.images[positions], labels, self.indices[positions])

    def without_labels(self) -> "Dataset":
        return Dataset(self.images, None, self.indices)


@dataclass(frozen=True)
class SplitPair:
    canonical: Dataset
    transformed_base: Dataset

    @property
    def canonical_indices(self) -> np.ndarray:
        return self.canonical.indices

    @property
    def transformed_indices(self) -> np.ndarray:
        return self.transformed_base.indices


def _name_key(name: str) -> Tuple[int, ...]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return struct.unpack("<4I", digest[:16])


@dataclass
class RngStreams:
    """Named random substreams derived from one master seed.

    A stream is derived by hashing its name into the spawn key of a
    ``SeedSequence``, so the sequence a name produces never depends on the
    order in which streams are requested. ``stream`` hands back the same
    generator on every call (its position advances); ``fresh`` restarts it.
    """
    seed: int
    _streams: Dict[str, np.random.Generator] = field(default_factory=dict,
                                                     repr=False)

    SPLIT = "split"
    SHUFFLE = "shuffle"
    ATTACK_SELECT = "attack-select"
    NOISE = "noise"
    INIT = "init"
    PERTURB = "perturb"

    def fresh(self, name: str) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1),
                                     spawn_key=_name_key(name))
        return np.random.Generator(np.random.PCG64(seq))

    def stream(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = self.fresh(name)
        return self._streams[name]


def _open_idx(path: Path):
    ACCESS_TRACE.append(str(path))
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, rank: int) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    with _open_idx(path) as f:
        payload = f.read()

    if len(payload) < 4:
        raise IdxFormatError(path, len(payload), "truncated magic number")
    magic, = struct.unpack(">I", payload[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            path, 0,
            f"bad magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")

    header_end = 4 + 4 * rank
    if len(payload) < header_end:
        raise IdxFormatError(path, len(payload), "truncated dimension header")
    dims = struct.unpack(f">{rank}I", payload[4:header_end])
    if rank == 3 and dims[1:] != (28, 28):
        raise IdxFormatError(path, 8,
                             f"dimension mismatch: expected 28x28, got {dims[1]}x{dims[2]}")

    expected = int(np.prod(dims))
    body = payload[header_end:]
    if len(body) < expected:
        raise IdxFormatError(
            path, header_end + len(body),
            f"truncated payload: expected {expected} bytes, found {len(body)}")
    if len(body) > expected:
        raise IdxFormatError(path, header_end + expected,
                             f"dimension mismatch: {len(body) - expected} trailing bytes")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx_images(images_path) -> np.ndarray:
    raw = _read_idx(images_path, IMAGES_MAGIC, rank=3)
    images = raw.astype(np.float32) / np.float32(255.0)
    return images[:, np.newaxis, :, :]


def load_idx_labels(labels_path) -> np.ndarray:
    return _read_idx(labels_path, LABELS_MAGIC, rank=1).astype(np.int64)


def load_idx(images_path, labels_path=None) -> Dataset:
    images = load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if len(labels) != len(images):
            raise IdxFormatError(
                labels_path, 4,
                f"label count {len(labels)} != image count {len(images)}")
    logger.info("Loaded %d images from %s", len(images), images_path)
    return Dataset(images, labels)


def find_mnist_files(mnist_dir) -> Dict[str, Path]:
    mnist_dir = Path(mnist_dir)
    found = {}
    for key, stem in MNIST_FILES.items():
        for candidate in (mnist_dir / stem, mnist_dir / f"{stem}.gz"):
            if candidate.exists():
                found[key] = candidate
                break
        else:
            found[key] = mnist_dir / stem
    return found


def split_train(d: Dataset, rng: RngStreams) -> SplitPair:
    n = len(d)
    if n % 2:
        raise DataError(f"cannot split an odd-sized dataset into equal halves ({n})")
    permutation = rng.stream(RngStreams.SPLIT).permutation(n)
    half = n // 2
    return SplitPair(canonical=d.subset(np.sort(permutation[:half])),
                     transformed_base=d.subset(np.sort(permutation[half:])))


def batch_iter(d: Dataset, batch_size: int, rng: RngStreams,
               stream: str = RngStreams.SHUFFLE
               ) -> Iterator[Tuple[np.ndarray, Optional[np.ndarray], np.ndarray]]:
    """One shuffled epoch as (images, labels or None, dataset indices)."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if len(d) == 0:
        raise DataError("cannot iterate an empty dataset")
    order = rng.stream(stream).permutation(len(d))
    for start in range(0, len(d), batch_size):
        positions = order[start:start + batch_size]
        labels = None if d.labels is None else d.labels[positions]
        yield d.images[positions], labels, d.indices[positions]
