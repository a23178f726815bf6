"""White-box and noise attacks against the pretrained classifier.

Every attack maps (classifier, images, labels, spec, rng) to an
``AttackResult``. Budgets are per attack family: L-infinity for the gradient
sign attacks and DeepFool, L2 for the additive noise attacks and
salt-and-pepper, L1 for sparse L1 descent. Outputs are always clipped to
[0, 1]. Attacks only read the classifier; they never change its parameters.
"""
import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from genmix.internal.errors import ConfigError, NumericalError
from genmix.internal.utils import get_genmix_logger
from genmix.modules.gm_checkpoint import load_checkpoint, save_checkpoint
from genmix.modules.gm_data import RngStreams
from genmix.modules.gm_nn import EVAL, NetworkModel, ParameterSet, cross_entropy

logger = get_genmix_logger()

FGSM = "FGSM"
PGD = "PGD"
DF = "DF"
AUN = "AUN"
BIM = "BIM"
AGN = "AGN"
RAGN = "RAGN"
SAPN = "SAPN"
SLIDE = "SLIDE"
KINDS = (FGSM, PGD, DF, AUN, BIM, AGN, RAGN, SAPN, SLIDE)

LINF, L2, L1 = "linf", "l2", "l1"
NORM_OF_KIND = {
    FGSM: LINF, PGD: LINF, BIM: LINF, DF: LINF,
    AUN: L2, AGN: L2, RAGN: L2, SAPN: L2,
    SLIDE: L1,
}

# step sizes are given as fractions of epsilon
SOLVER_DEFAULTS: Dict[str, Dict[str, Any]] = {
    FGSM: {"steps": 1, "step_fraction": 1.0},
    PGD: {"steps": 40, "step_fraction": 0.1, "random_start": True},
    BIM: {"steps": 10, "step_fraction": 0.2},
    DF: {"steps": 50, "overshoot": 0.02},
    AUN: {},
    AGN: {},
    RAGN: {"max_repeats": 100},
    SAPN: {"steps": 20, "max_fraction": 0.1},
    SLIDE: {"steps": 20, "step_fraction": 0.1, "quantile": 0.99},
}

_TINY = 1e-12


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float
    steps: int = 1
    step_size: Optional[float] = None
    random_start: bool = False
    max_repeats: int = 1
    overshoot: float = 0.0
    quantile: float = 0.99
    max_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown attack kind '{self.kind}', expected one of {KINDS}")
        if self.epsilon < 0:
            raise ConfigError(f"{self.kind}: epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise ConfigError(f"{self.kind}: steps must be >= 1, got {self.steps}")
        if self.max_repeats < 1:
            raise ConfigError(f"{self.kind}: max_repeats must be >= 1, got {self.max_repeats}")
        if not 0.0 < self.quantile < 1.0:
            raise ConfigError(f"{self.kind}: quantile must lie in (0,1), got {self.quantile}")
        if not 0.0 < self.max_fraction <= 1.0:
            raise ConfigError(f"{self.kind}: max_fraction must lie in (0,1], got {self.max_fraction}")
        if self.step_size is None:
            fraction = SOLVER_DEFAULTS[self.kind].get("step_fraction", 1.0)
            object.__setattr__(self, "step_size", self.epsilon * fraction)

    @classmethod
    def create(cls, kind: str, epsilon: float, **overrides) -> "AttackSpec":
        kind = kind.upper()
        if kind not in SOLVER_DEFAULTS:
            raise ConfigError(f"unknown attack kind '{kind}', expected one of {KINDS}")
        options = {k: v for k, v in SOLVER_DEFAULTS[kind].items() if k != "step_fraction"}
        options.update(overrides)
        return cls(kind=kind, epsilon=float(epsilon), **options)

    @property
    def norm(self) -> str:
        return NORM_OF_KIND[self.kind]

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.epsilon:g}"

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: np.ndarray
    norms: np.ndarray
    spec: Optional[AttackSpec] = None


def _str2bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "y", "on"):
        return True
    if lowered in ("0", "false", "no", "n", "off"):
        return False
    raise ConfigError(f"not a boolean: '{value}'")


_CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "steps": int, "max_repeats": int, "random_start": _str2bool,
    "step_size": float, "overshoot": float, "quantile": float, "max_fraction": float,
}


def parse_attack(text: str) -> AttackSpec:
    """Parse ``KIND:EPS[:key=val,...]``, e.g. ``pgd:0.5:steps=20,random_start=false``."""
    parts = text.strip().split(":", 2)
    if len(parts) < 2 or not parts[0]:
        raise ConfigError(f"attack '{text}' must look like KIND:EPS[:key=val,...]")
    try:
        epsilon = float(parts[1])
    except ValueError:
        raise ConfigError(f"attack '{text}': epsilon '{parts[1]}' is not a number")

    overrides = {}
    if len(parts) == 3 and parts[2]:
        for item in parts[2].split(","):
            key, sep, value = item.partition("=")
            key = key.strip()
            if not sep or key not in _CONVERTERS:
                raise ConfigError(
                    f"attack '{text}': bad option '{item}', known options {sorted(_CONVERTERS)}")
            try:
                overrides[key] = _CONVERTERS[key](value.strip())
            except ValueError:
                raise ConfigError(f"attack '{text}': bad value for {key}: '{value}'")
    return AttackSpec.create(parts[0], epsilon, **overrides)


DEFAULT_ROSTER: List[AttackSpec] = [
    AttackSpec.create(FGSM, 0.5),
    AttackSpec.create(PGD, 0.5),
    AttackSpec.create(DF, 0.5),
    AttackSpec.create(AUN, 3.5),
    AttackSpec.create(BIM, 0.2),
    AttackSpec.create(AGN, 100.0),
    AttackSpec.create(RAGN, 15.0),
    AttackSpec.create(SAPN, 10.0),
    AttackSpec.create(SLIDE, 25.0),
]

ROSTER_PRESETS: Dict[str, List[AttackSpec]] = {
    "three": [s for s in DEFAULT_ROSTER if s.kind in (FGSM, PGD, DF)],
    "five": [s for s in DEFAULT_ROSTER if s.kind in (FGSM, PGD, DF, AUN, BIM)],
    "nine": list(DEFAULT_ROSTER),
}


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1)


def perturbation_norms(x_adv: np.ndarray, x: np.ndarray, norm: str) -> np.ndarray:
    delta = _flat(x_adv).astype(np.float64) - _flat(x).astype(np.float64)
    if norm == LINF:
        return np.abs(delta).max(axis=1)
    if norm == L2:
        return np.sqrt((delta * delta).sum(axis=1))
    return np.abs(delta).sum(axis=1)


def predict(classifier: NetworkModel, x: np.ndarray) -> np.ndarray:
    return classifier.forward(x, EVAL).argmax(axis=1)


def loss_gradient(classifier: NetworkModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """d CE(c(x), y) / dx, with the classifier in eval mode."""
    logits, tape = classifier.forward_recorded(x, EVAL, track_stats=False)
    _, grad_logits = cross_entropy(logits, y)
    grad, _ = classifier.backward(tape, grad_logits)
    if np.isnan(grad).any():
        raise NumericalError("NaN in classifier input gradient")
    return grad


def _result(classifier, x, x_adv, y, spec) -> AttackResult:
    x_adv = x_adv.astype(x.dtype, copy=False)
    return AttackResult(adversarial=x_adv,
                        success=predict(classifier, x_adv) != y,
                        norms=perturbation_norms(x_adv, x, spec.norm),
                        spec=spec)


def _project_linf(x_adv, x, epsilon):
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def _signed_step(classifier, x_adv, y, step_size):
    return x_adv + step_size * np.sign(loss_gradient(classifier, x_adv, y))


def attack_fgsm(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    x_adv = _project_linf(_signed_step(classifier, x, y, spec.epsilon), x, spec.epsilon)
    return _result(classifier, x, x_adv, y, spec)


def attack_iterative_linf(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    """PGD (random start inside the ball) and BIM (start at x)."""
    x_adv = x
    if spec.random_start:
        rng = rng or RngStreams(0).fresh(RngStreams.NOISE)
        start = rng.uniform(-spec.epsilon, spec.epsilon, size=x.shape).astype(x.dtype)
        x_adv = np.clip(x + start, 0.0, 1.0)
    for _ in range(spec.steps):
        x_adv = _project_linf(_signed_step(classifier, x_adv, y, spec.step_size),
                              x, spec.epsilon)
    return _result(classifier, x, x_adv, y, spec)


def _class_gradients(classifier, x) -> Tuple[np.ndarray, np.ndarray]:
    """Logits (b, k) and the input gradient of every logit, shape (k, b, ...)."""
    batch = len(x)
    classes = classifier.forward(x[:1], EVAL).shape[1]
    out, tape = classifier.forward_recorded(np.concatenate([x] * classes), EVAL,
                                            track_stats=False)
    logits = out[:batch]
    selector = np.zeros_like(out)
    for k in range(classes):
        selector[k * batch:(k + 1) * batch, k] = 1.0
    grads, _ = classifier.backward(tape, selector)
    return logits, grads.reshape(classes, batch, *x.shape[1:])


def deepfool(classifier: NetworkModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Smallest step onto the nearest linearized boundary, per example."""
    logits, grads = _class_gradients(classifier, x)
    batch, classes = logits.shape
    rows = np.arange(batch)
    flat_grads = grads.reshape(classes, batch, -1).astype(np.float64)
    w = flat_grads - flat_grads[y, rows][None]
    f = (logits.T - logits[rows, y][None]).astype(np.float64)
    w_norm_sq = (w * w).sum(axis=2)
    distance = np.abs(f) / (np.sqrt(w_norm_sq) + _TINY)
    distance[y, rows] = np.inf
    nearest = distance.argmin(axis=0)
    scale = np.abs(f[nearest, rows]) / (w_norm_sq[nearest, rows] + _TINY)
    step = scale[:, None] * w[nearest, rows]
    return step.reshape(x.shape).astype(x.dtype)


def attack_deepfool(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    x_adv = x.copy()
    total = np.zeros(x.shape, dtype=np.float64)
    for _ in range(spec.steps):
        active = predict(classifier, x_adv) == y
        if not active.any():
            break
        step = deepfool(classifier, x_adv[active], y[active])
        total[active] += step
        moved = np.clip(x + (1.0 + spec.overshoot) * total, 0.0, 1.0).astype(x.dtype)
        x_adv[active] = moved[active]
    x_adv = _project_linf(x_adv, x, spec.epsilon)
    return _result(classifier, x, x_adv, y, spec)


def sample_noise(spec: AttackSpec, shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform (AUN) or Gaussian noise rescaled to L2 norm epsilon per image."""
    if spec.kind == AUN:
        noise = rng.uniform(-1.0, 1.0, size=shape)
    else:
        noise = rng.standard_normal(size=shape)
    norms = np.sqrt((noise.reshape(shape[0], -1) ** 2).sum(axis=1))
    noise *= (spec.epsilon / np.maximum(norms, _TINY)).reshape(-1, *([1] * (len(shape) - 1)))
    return noise.astype(np.float32)


def attack_noise(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    """AUN / AGN add one draw; RAGN keeps the first fooling draw out of max_repeats."""
    rng = rng or RngStreams(0).fresh(RngStreams.NOISE)
    repeats = spec.max_repeats if spec.kind == RAGN else 1
    x_adv = x.copy()
    pending = np.ones(len(x), dtype=bool)
    for _ in range(repeats):
        candidate = np.clip(x[pending] + sample_noise(spec, x[pending].shape, rng), 0.0, 1.0)
        x_adv[pending] = candidate
        fooled = predict(classifier, candidate) != y[pending]
        pending[np.flatnonzero(pending)[fooled]] = False
        if not pending.any():
            break
    return _result(classifier, x, x_adv, y, spec)


def _salt_pepper_order(shape, rng):
    batch, size = shape[0], int(np.prod(shape[1:]))
    order = np.argsort(rng.random((batch, size)), axis=1)
    values = rng.integers(0, 2, size=(batch, size)).astype(np.float32)
    return order, values


def _apply_salt_pepper(x, order, values, count):
    flat = _flat(x).copy()
    if count > 0:
        chosen = order[:, :count]
        np.put_along_axis(flat, chosen, np.take_along_axis(values, chosen, axis=1), axis=1)
    return flat.reshape(x.shape)


def salt_and_pepper(x: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    order, values = _salt_pepper_order(x.shape, rng)
    return _apply_salt_pepper(x, order, values, int(fraction * order.shape[1]))


def salt_pepper_schedule(spec: AttackSpec, pixels: int) -> List[int]:
    fractions = np.geomspace(1.0 / pixels, spec.max_fraction, spec.steps)
    return sorted({max(1, int(f * pixels)) for f in fractions})


def attack_salt_pepper(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    """Flip a growing share of pixels to 0/1, keep the first fooling image within the L2 gate."""
    rng = rng or RngStreams(0).fresh(RngStreams.NOISE)
    order, values = _salt_pepper_order(x.shape, rng)
    x_adv = x.copy()
    pending = np.ones(len(x), dtype=bool)
    for count in salt_pepper_schedule(spec, order.shape[1]):
        candidate = _apply_salt_pepper(x, order, values, count)
        within = perturbation_norms(candidate, x, L2) <= spec.epsilon
        update = pending & within
        if not update.any():
            continue
        x_adv[update] = candidate[update]
        fooled = predict(classifier, candidate[update]) != y[update]
        pending[np.flatnonzero(update)[fooled]] = False
        if not pending.any():
            break
    return _result(classifier, x, x_adv, y, spec)


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the L1 ball (sort-based simplex method)."""
    flat = _flat(v).astype(np.float64)
    if radius <= 0:
        return np.zeros_like(v)
    magnitude = np.abs(flat)
    outside = magnitude.sum(axis=1) > radius
    if not outside.any():
        return v.copy()
    u = np.sort(magnitude[outside], axis=1)[:, ::-1]
    cumulative = np.cumsum(u, axis=1)
    ranks = np.arange(1, u.shape[1] + 1)
    support = u * ranks > (cumulative - radius)
    rho = u.shape[1] - 1 - np.argmax(support[:, ::-1], axis=1)
    theta = (cumulative[np.arange(len(rho)), rho] - radius) / (rho + 1)
    projected = flat.copy()
    projected[outside] = np.sign(flat[outside]) * np.maximum(magnitude[outside] - theta[:, None], 0)
    return projected.reshape(v.shape).astype(v.dtype)


def attack_slide(classifier, x, y, spec: AttackSpec, rng=None) -> AttackResult:
    """Sparse L1 descent: step along top-quantile gradient coordinates, project to the L1 ball."""
    delta = np.zeros_like(x)
    if spec.epsilon == 0:
        return _result(classifier, x, x.copy(), y, spec)
    for _ in range(spec.steps):
        current = x + delta
        grad = _flat(loss_gradient(classifier, current, y)).copy()
        flat_current = _flat(current)
        grad[(flat_current <= 0) & (grad < 0)] = 0
        grad[(flat_current >= 1) & (grad > 0)] = 0
        magnitude = np.abs(grad)
        threshold = np.quantile(magnitude, spec.quantile, axis=1, keepdims=True)
        direction = np.sign(grad) * ((magnitude >= threshold) & (magnitude > 0))
        direction /= np.maximum(np.abs(direction).sum(axis=1, keepdims=True), 1.0)
        delta = delta + (spec.step_size * direction).reshape(x.shape).astype(x.dtype)
        delta = project_l1_ball(delta, spec.epsilon)
        delta = np.clip(x + delta, 0.0, 1.0) - x
    return _result(classifier, x, x + delta, y, spec)


ATTACKS: Dict[str, Callable[..., AttackResult]] = {
    FGSM: attack_fgsm,
    PGD: attack_iterative_linf,
    BIM: attack_iterative_linf,
    DF: attack_deepfool,
    AUN: attack_noise,
    AGN: attack_noise,
    RAGN: attack_noise,
    SAPN: attack_salt_pepper,
    SLIDE: attack_slide,
}


def apply_attack(spec: AttackSpec, classifier: NetworkModel, x: np.ndarray,
                 y: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None) -> AttackResult:
    """Run ``spec`` on ``x``; without labels the classifier's clean predictions stand in."""
    if spec.kind not in ATTACKS:
        raise ConfigError(f"unknown attack kind '{spec.kind}'")
    if y is None:
        y = predict(classifier, x)
    return ATTACKS[spec.kind](classifier, x, y, spec, rng)


def success_rate(result: AttackResult) -> float:
    return float(np.mean(result.success)) if len(result.success) else 0.0


def attack_dataset(spec: AttackSpec, classifier: NetworkModel, images: np.ndarray,
                   labels: Optional[np.ndarray], rng: np.random.Generator,
                   batch_size: int = 128) -> AttackResult:
    chunks = []
    for start in range(0, len(images), batch_size):
        y = None if labels is None else labels[start:start + batch_size]
        chunks.append(apply_attack(spec, classifier, images[start:start + batch_size], y, rng))
    return AttackResult(adversarial=np.concatenate([c.adversarial for c in chunks]),
                        success=np.concatenate([c.success for c in chunks]),
                        norms=np.concatenate([c.norms for c in chunks]),
                        spec=spec)


def save_attack_cache(path, result: AttackResult, labels: np.ndarray):
    tensors = ParameterSet()
    tensors.add("images", result.adversarial.astype(np.float32))
    tensors.add("labels", labels.astype(np.float32))
    tensors.add("success", result.success.astype(np.float32))
    return save_checkpoint(path, tensors, metadata={"attack": result.spec.to_dict()})


def load_attack_cache(path) -> Tuple[AttackResult, np.ndarray]:
    checkpoint = load_checkpoint(path)
    spec = AttackSpec(**checkpoint.metadata["attack"])
    images = checkpoint.params["images"]
    labels = checkpoint.params["labels"].astype(np.int64)
    return AttackResult(adversarial=images,
                        success=checkpoint.params["success"] > 0.5,
                        norms=np.full(len(images), np.nan),
                        spec=spec), labels
