"""Competitive mixture-of-generators defense.

Training runs in three stages: the classifier is pretrained on labelled data;
the generators are identity-initialized on attacked images; then, per batch,
every generator proposes a restoration of the attacked batch, the
discriminator scores them, and only the best-scoring generator is updated.
The discriminator learns to tell canonical images (one half of the training
split) from generator outputs on attacked images (the other half).

Defense training never reads labels. Train-time attacks are untargeted
against the classifier's own prediction on the clean image.
"""
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from genmix.internal.errors import (ArchitectureMismatchError, ConfigError,
                                    DivergenceError, NumericalError)
from genmix.internal.utils import (ConfigReadWrite, convert_to_bytes, format_bytes,
                                   get_genmix_logger)
from genmix.modules.gm_attacks import AttackSpec, apply_attack, attack_dataset, predict
from genmix.modules.gm_checkpoint import load_checkpoint, save_checkpoint
from genmix.modules.gm_data import Dataset, RngStreams, SplitPair, batch_iter
from genmix.modules.gm_models import (CLASSIFIER, DISCRIMINATOR, GENERATOR, LARGE_GENERATOR,
                                      build_classifier, build_discriminator, build_generator,
                                      build_large_generator, model_from_params)
from genmix.modules.gm_nn import (EVAL, TRAIN, AdamState, NetworkModel, adam_step,
                                  binary_cross_entropy, cross_entropy, mse)

logger = get_genmix_logger()

SELECTION_MODES = ("batch", "example")
ENSEMBLE_MANIFEST = "ensemble.yaml"


@dataclass
class TrainConfig:
    init_epochs: int = 10
    train_epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    faster_init: bool = False
    perturb_fraction: float = 0.05
    seed: int = 0
    generators: int = 1
    checkpoint_every: int = 10
    selection: str = "batch"
    large_generator: bool = False
    cache_attacks: bool = False
    cache_limit: str = "2GiB"
    progress: bool = True

    def __post_init__(self):
        for name in ("init_epochs", "train_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("batch_size", "generators", "checkpoint_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.perturb_fraction < 1.0:
            raise ConfigError(f"perturb_fraction must lie in [0,1), got {self.perturb_fraction}")
        if self.selection not in SELECTION_MODES:
            raise ConfigError(f"selection must be one of {SELECTION_MODES}, got '{self.selection}'")
        if self.large_generator and self.generators != 1:
            raise ConfigError("the large generator baseline uses exactly one generator")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class EnsembleState:
    generators: List[NetworkModel]
    discriminator: NetworkModel
    generator_optimizers: List[AdamState]
    discriminator_optimizer: AdamState
    roster: List[AttackSpec]
    epoch: int = 0
    provenance: List[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.generators:
            raise ConfigError("an ensemble needs at least one generator")
        if len(self.generator_optimizers) != len(self.generators):
            raise ConfigError("one optimizer state per generator is required")
        if not self.provenance:
            self.provenance = ["fresh"] * len(self.generators)

    @property
    def size(self) -> int:
        return len(self.generators)

    def checksums(self) -> List[str]:
        return [g.checksum() for g in self.generators] + [self.discriminator.checksum()]


@dataclass
class StepReport:
    epoch: int
    step: int
    attack: str
    winner: Union[int, List[int]]
    scores: List[float]
    loss_g: float
    loss_d: float
    objective: float

    def csv_row(self) -> str:
        winner = self.winner if isinstance(self.winner, int) else "|".join(map(str, self.winner))
        fields = [str(self.epoch), str(self.step), self.attack, str(winner)]
        fields += [f"{s:.8g}" for s in self.scores]
        fields += [f"{self.loss_g:.8g}", f"{self.loss_d:.8g}"]
        return ",".join(fields)


def log_header(generators: int) -> str:
    scores = [f"score_g{j}" for j in range(generators)]
    return ",".join(["epoch", "step", "attack_kind", "winner_index", *scores, "loss_g", "loss_d"])


def classifier_accuracy(classifier: NetworkModel, d: Dataset, batch_size: int = 1000) -> float:
    if d.labels is None:
        raise ConfigError("accuracy needs a labelled dataset")
    correct = 0
    for start in range(0, len(d), batch_size):
        predictions = predict(classifier, d.images[start:start + batch_size])
        correct += int((predictions == d.labels[start:start + batch_size]).sum())
    return correct / max(len(d), 1)


def pretrain_classifier(train: Dataset, test: Dataset, epochs: int, lr: float = 1e-3,
                        batch_size: int = 128, rng: Optional[RngStreams] = None,
                        progress: bool = False) -> Tuple[NetworkModel, float]:
    if train.labels is None or test.labels is None:
        raise ConfigError("classifier pretraining needs labelled train and test sets")
    rng = rng or RngStreams(0)
    classifier = build_classifier(rng.fresh(f"{RngStreams.INIT}/{CLASSIFIER}"))
    optimizer = AdamState.for_params(classifier.params, lr)

    for epoch in tqdm(range(1, epochs + 1), desc="pretrain", disable=not progress):
        total, batches = 0.0, 0
        for images, labels, _ in batch_iter(train, batch_size, rng,
                                            f"{RngStreams.SHUFFLE}/{CLASSIFIER}"):
            logits, tape = classifier.forward_recorded(images, TRAIN)
            loss, grad = cross_entropy(logits, labels)
            if np.isnan(loss):
                raise DivergenceError(epoch, "classifier loss became NaN")
            _, grads = classifier.backward(tape, grad)
            adam_step(classifier.params, grads, optimizer)
            total += loss
            batches += 1
        logger.info("pretrain epoch %d: mean loss %.4f", epoch, total / max(batches, 1))

    accuracy = classifier_accuracy(classifier, test)
    logger.info("classifier test accuracy %.4f after %d epochs", accuracy, epochs)
    return classifier, accuracy


def new_ensemble(config: TrainConfig, roster: Sequence[AttackSpec],
                 rng: RngStreams) -> EnsembleState:
    if not roster:
        raise ConfigError("the attack roster is empty")
    if config.large_generator:
        generators = [build_large_generator(rng.fresh(f"{RngStreams.INIT}/{LARGE_GENERATOR}/0"))]
    else:
        generators = [build_generator(rng.fresh(f"{RngStreams.INIT}/{GENERATOR}/{j}"))
                      for j in range(config.generators)]
    discriminator = build_discriminator(rng.fresh(f"{RngStreams.INIT}/{DISCRIMINATOR}"))
    return EnsembleState(
        generators=generators,
        discriminator=discriminator,
        generator_optimizers=[AdamState.for_params(g.params, config.lr) for g in generators],
        discriminator_optimizer=AdamState.for_params(discriminator.params, config.lr),
        roster=list(roster),
    )


def _sample_attack(roster: Sequence[AttackSpec], rng: RngStreams, stream: str) -> AttackSpec:
    return roster[int(rng.stream(stream).integers(len(roster)))]


def identity_init(generators: List[NetworkModel], transformed_base: Dataset,
                  roster: Sequence[AttackSpec], classifier: NetworkModel, init_epochs: int,
                  rng: RngStreams, batch_size: int = 128,
                  optimizers: Optional[List[AdamState]] = None, lr: float = 1e-3,
                  progress: bool = False) -> List[NetworkModel]:
    """Train every generator towards G(x') = x' on attacked transformed-half batches.

    One attack is drawn per batch and its output is shared by all generators.
    """
    if init_epochs == 0:
        return generators
    data = transformed_base.without_labels()
    optimizers = optimizers or [AdamState.for_params(g.params, lr) for g in generators]
    stream = "init"
    for epoch in tqdm(range(1, init_epochs + 1), desc="identity init", disable=not progress):
        losses = np.zeros(len(generators))
        batches = 0
        for images, _, _ in batch_iter(data, batch_size, rng, f"{RngStreams.SHUFFLE}/{stream}"):
            spec = _sample_attack(roster, rng, f"{RngStreams.ATTACK_SELECT}/{stream}")
            attacked = apply_attack(spec, classifier, images, None,
                                    rng.stream(f"{RngStreams.NOISE}/{stream}")).adversarial
            for j, (generator, optimizer) in enumerate(zip(generators, optimizers)):
                out, tape = generator.forward_recorded(attacked, TRAIN)
                loss, grad = mse(out, attacked)
                if np.isnan(loss):
                    raise DivergenceError(epoch, f"identity-init loss of generator {j} became NaN")
                _, grads = generator.backward(tape, grad)
                adam_step(generator.params, grads, optimizer)
                losses[j] += loss
            batches += 1
        logger.info("identity init epoch %d: mean mse %s", epoch,
                    ", ".join(f"{l / max(batches, 1):.5f}" for l in losses))
    return generators


def perturb_generator(model: NetworkModel, fraction: float,
                      rng: np.random.Generator) -> np.ndarray:
    """Zero exactly floor(fraction * trainable) trainable weights; returns their flat indices."""
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"perturb fraction must lie in [0,1), got {fraction}")
    names = model.params.names(trainable_only=True)
    sizes = [model.params[n].size for n in names]
    total = int(sum(sizes))
    count = int(np.floor(fraction * total))
    chosen = np.sort(rng.choice(total, size=count, replace=False))
    offsets = np.cumsum([0] + sizes)
    for name, start, stop in zip(names, offsets[:-1], offsets[1:]):
        local = chosen[(chosen >= start) & (chosen < stop)] - start
        if len(local):
            values = model.params[name].copy()
            values.reshape(-1)[local] = 0.0
            model.params[name] = values
    return chosen


def faster_init(transformed_base: Dataset, roster: Sequence[AttackSpec], config: TrainConfig,
                classifier: NetworkModel, rng: RngStreams) -> List[NetworkModel]:
    """Identity-initialize one generator, then emit perturbed copies of it."""
    if not 0.0 <= config.perturb_fraction < 1.0:
        raise ConfigError(f"perturb_fraction must lie in [0,1), got {config.perturb_fraction}")
    seed_generator = build_generator(rng.fresh(f"{RngStreams.INIT}/{GENERATOR}/0"))
    identity_init([seed_generator], transformed_base, roster, classifier, config.init_epochs,
                  rng, config.batch_size, lr=config.lr, progress=config.progress)
    copies = []
    for j in range(config.generators):
        clone = seed_generator.copy()
        perturb_generator(clone, config.perturb_fraction,
                          rng.fresh(f"{RngStreams.PERTURB}/copy/{j}"))
        copies.append(clone)
    return copies


def select_winner(scores: np.ndarray, mode: str = "batch") -> Union[int, np.ndarray]:
    """Argmax over generators of (generators, batch) scores; ties go to the lowest index."""
    scores = np.asarray(scores)
    if mode == "batch":
        return int(np.argmax(scores.mean(axis=1)))
    if mode == "example":
        return np.argmax(scores, axis=0)
    raise ConfigError(f"unknown selection mode '{mode}'")


def _check_finite(value: float, what: str, context: str):
    if np.isnan(value):
        raise NumericalError(f"{what} became NaN ({context})")


def competitive_step(ens: EnsembleState, canon_batch: np.ndarray, transf_batch: np.ndarray,
                     labels_unused, rng: RngStreams, classifier: NetworkModel,
                     epoch: int = 0, step: int = 0, selection: str = "batch",
                     attacked: Optional[Tuple[AttackSpec, np.ndarray]] = None) -> StepReport:
    """One winner-take-all update.

    ``labels_unused`` is accepted for call-site symmetry and never read.
    ``attacked`` supplies a precomputed (spec, adversarial batch) pair.
    """
    if attacked is None:
        spec = _sample_attack(ens.roster, rng, RngStreams.ATTACK_SELECT)
        x_adv = apply_attack(spec, classifier, transf_batch, None,
                             rng.stream(RngStreams.NOISE)).adversarial
    else:
        spec, x_adv = attacked

    discriminator = ens.discriminator
    outputs, tapes, scores = [], [], []
    for generator in ens.generators:
        out, tape = generator.forward_recorded(x_adv, TRAIN, track_stats=False)
        outputs.append(out)
        tapes.append(tape)
        scores.append(discriminator.forward(out, EVAL)[:, 0])
    scores = np.stack(scores)
    winner = select_winner(scores, selection)
    context = f"epoch {epoch}, step {step}, attack {spec.label}"

    # generator update: winners only, non-saturating -log D(G(x'))
    if selection == "batch":
        assignments = {winner: np.ones(len(x_adv), dtype=bool)}
    else:
        assignments = {int(j): winner == j for j in np.unique(winner)}
    loss_g = 0.0
    for j, mask in assignments.items():
        probs, d_tape = discriminator.forward_recorded(outputs[j], TRAIN)
        loss, grad = binary_cross_entropy(probs[mask], 1.0)
        _check_finite(loss, f"generator {j} loss", context)
        full_grad = np.zeros_like(probs)
        full_grad[mask] = grad
        grad_image, _ = discriminator.backward(d_tape, full_grad)
        _, grads = ens.generators[j].backward(tapes[j], grad_image)
        adam_step(ens.generators[j].params, grads, ens.generator_optimizers[j])
        ens.generators[j].apply_stat_updates(tapes[j])
        loss_g += loss * mask.sum() / len(mask)

    # discriminator update on [canonical; every generator output], outputs detached
    real = len(canon_batch)
    probs, d_tape = discriminator.forward_recorded(np.concatenate([canon_batch, *outputs]), TRAIN)
    loss_real, grad_real = binary_cross_entropy(probs[:real], 1.0)
    loss_fake, grad_fake = binary_cross_entropy(probs[real:], 0.0)
    loss_d = loss_real + loss_fake
    _check_finite(loss_d, "discriminator loss", context)
    _, d_grads = discriminator.backward(d_tape, np.concatenate([grad_real, grad_fake]))
    adam_step(discriminator.params, d_grads, ens.discriminator_optimizer)

    return StepReport(
        epoch=epoch, step=step, attack=spec.label,
        winner=winner if isinstance(winner, int) else winner.tolist(),
        scores=[float(s) for s in scores.mean(axis=1)],
        loss_g=float(loss_g), loss_d=float(loss_d), objective=-float(loss_d))


def _precompute_attacks(transformed: Dataset, roster, classifier, config: TrainConfig,
                        rng: RngStreams) -> Optional[Dict[str, np.ndarray]]:
    needed = len(transformed) * int(np.prod(transformed.images.shape[1:])) * 4 * len(roster)
    limit = convert_to_bytes(config.cache_limit)
    if needed > limit:
        logger.warning("Attack cache needs %s, above cache_limit %s; attacking on the fly",
                       format_bytes(needed), format_bytes(limit))
        return None
    cache = {}
    for spec in roster:
        result = attack_dataset(spec, classifier, transformed.images, None,
                                rng.fresh(f"{RngStreams.NOISE}/cache/{spec.label}"),
                                config.batch_size)
        cache[spec.label] = result.adversarial
    logger.info("Precomputed %d attacked copies of the transformed half (%s)",
                len(roster), format_bytes(needed))
    return cache


def _initialize(split: SplitPair, classifier, ens: EnsembleState, config: TrainConfig,
                rng: RngStreams):
    transformed = split.transformed_base.without_labels()
    if config.faster_init and not config.large_generator:
        ens.generators = faster_init(transformed, ens.roster, config, classifier, rng)
        ens.provenance = [f"faster-init:perturb={config.perturb_fraction:g}"] * ens.size
    else:
        identity_init(ens.generators, transformed, ens.roster, classifier, config.init_epochs,
                      rng, config.batch_size, ens.generator_optimizers, config.lr,
                      config.progress)
        ens.provenance = ["identity-init"] * ens.size


def train_defense(split: SplitPair, classifier: NetworkModel, roster: Sequence[AttackSpec],
                  config: TrainConfig, out_dir=None) -> Tuple[EnsembleState, List[StepReport]]:
    rng = RngStreams(config.seed)
    canonical = split.canonical.without_labels()
    transformed = split.transformed_base.without_labels()
    classifier_checksum = classifier.checksum()

    ens = new_ensemble(config, roster, rng)
    _initialize(split, classifier, ens, config, rng)
    cache = (_precompute_attacks(transformed, ens.roster, classifier, config, rng)
             if config.cache_attacks else None)

    reports: List[StepReport] = []
    for epoch in tqdm(range(1, config.train_epochs + 1), desc="defense", disable=not config.progress):
        wins = np.zeros(ens.size, dtype=int)
        batches = zip(batch_iter(transformed, config.batch_size, rng,
                                 f"{RngStreams.SHUFFLE}/transformed"),
                      batch_iter(canonical, config.batch_size, rng,
                                 f"{RngStreams.SHUFFLE}/canonical"))
        for step, ((x_transf, _, indices), (x_canon, _, _)) in enumerate(batches):
            attacked = None
            if cache is not None:
                spec = _sample_attack(ens.roster, rng, RngStreams.ATTACK_SELECT)
                positions = np.searchsorted(transformed.indices, indices)
                attacked = (spec, cache[spec.label][positions])
            report = competitive_step(ens, x_canon, x_transf, None, rng, classifier,
                                      epoch, step, config.selection, attacked)
            np.add.at(wins, report.winner, 1)
            reports.append(report)
        ens.epoch = epoch
        logger.info("defense epoch %d: wins per generator %s", epoch, wins.tolist())
        if out_dir is not None and (epoch % config.checkpoint_every == 0
                                    or epoch == config.train_epochs):
            save_ensemble(ens, Path(out_dir) / f"epoch-{epoch:03d}", config)

    if classifier.checksum() != classifier_checksum:
        raise NumericalError("classifier parameters changed during defense training")
    if out_dir is not None:
        save_ensemble(ens, Path(out_dir) / "final", config)
        write_training_log(Path(out_dir) / "training_log.csv", reports, ens.size)
    return ens, reports


def write_training_log(path, reports: Sequence[StepReport], generators: int):
    ConfigReadWrite().write_lines(path, [log_header(generators)]
                                  + [r.csv_row() for r in reports])


def combine_ensembles(singles: Sequence[EnsembleState], joint: EnsembleState) -> EnsembleState:
    """Separately trained generators plus the jointly trained discriminator, no training."""
    reference = build_generator()
    generators, optimizers, roster, provenance = [], [], [], []
    for single in singles:
        for generator, optimizer in zip(single.generators, single.generator_optimizers):
            if generator.role != reference.role or list(generator.params) != list(reference.params):
                raise ArchitectureMismatchError(
                    f"cannot combine a '{generator.role}' model with standard generators")
            for name in reference.params:
                if generator.params[name].shape != reference.params[name].shape:
                    raise ArchitectureMismatchError(f"generator parameter '{name}' has shape "
                                                    f"{generator.params[name].shape}")
            generators.append(generator.copy())
            optimizers.append(optimizer.copy())
            provenance.append("separate:" + "+".join(s.label for s in single.roster))
        roster += [s for s in single.roster if s not in roster]
    return EnsembleState(generators=generators,
                         discriminator=joint.discriminator.copy(),
                         generator_optimizers=optimizers,
                         discriminator_optimizer=joint.discriminator_optimizer.copy(),
                         roster=roster, epoch=joint.epoch, provenance=provenance)


def train_separate_then_combine(split: SplitPair, classifier: NetworkModel,
                                roster: Sequence[AttackSpec], config: TrainConfig,
                                singles: Optional[List[EnsembleState]] = None,
                                joint: Optional[EnsembleState] = None,
                                out_dir=None) -> EnsembleState:
    """Reuse (or train) one single-attack run per roster entry and one joint run."""
    single_config = dataclasses.replace(config, generators=1, large_generator=False,
                                        faster_init=False)
    if singles is None:
        singles = []
        for spec in roster:
            sub_dir = None if out_dir is None else Path(out_dir) / f"single-{spec.kind.lower()}"
            singles.append(train_defense(split, classifier, [spec], single_config, sub_dir)[0])
    if joint is None:
        sub_dir = None if out_dir is None else Path(out_dir) / "joint"
        joint = train_defense(split, classifier, roster, config, sub_dir)[0]
    combined = combine_ensembles(singles, joint)
    if out_dir is not None:
        save_ensemble(combined, Path(out_dir) / "combined", config)
    return combined


def save_ensemble(ens: EnsembleState, directory, config: Optional[TrainConfig] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    config_dict = config.to_dict() if config else None
    seed = config.seed if config else None
    files = []
    for j, (generator, optimizer) in enumerate(zip(ens.generators, ens.generator_optimizers)):
        name = f"generator_{j}.ckpt"
        save_checkpoint(directory / name, generator.params, optimizer,
                        {"role": generator.role, "index": j, "epoch": ens.epoch,
                         "seed": seed, "config": config_dict})
        files.append(name)
    save_checkpoint(directory / "discriminator.ckpt", ens.discriminator.params,
                    ens.discriminator_optimizer,
                    {"role": DISCRIMINATOR, "epoch": ens.epoch, "seed": seed,
                     "config": config_dict})
    ConfigReadWrite().write_yaml(directory / ENSEMBLE_MANIFEST, {
        "epoch": ens.epoch,
        "generators": files,
        "discriminator": "discriminator.ckpt",
        "provenance": list(ens.provenance),
        "roster": [spec.to_dict() for spec in ens.roster],
        "config": config_dict,
    })
    return directory


def load_model(path, expected_role: Optional[str] = None) -> Tuple[NetworkModel, Optional[AdamState], dict]:
    checkpoint = load_checkpoint(path)
    role = checkpoint.metadata.get("role")
    if expected_role is not None and role != expected_role:
        raise ArchitectureMismatchError(f"{path}: expected a {expected_role}, found role '{role}'")
    return model_from_params(role, checkpoint.params), checkpoint.optimizer, checkpoint.metadata


def load_ensemble(directory) -> EnsembleState:
    directory = Path(directory)
    manifest_path = directory / ENSEMBLE_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"ensemble manifest not found: {manifest_path}")
    manifest = ConfigReadWrite().read_yaml(manifest_path)
    generators, optimizers = [], []
    for name in manifest["generators"]:
        model, optimizer, _ = load_model(directory / name)
        if model.role not in (GENERATOR, LARGE_GENERATOR):
            raise ArchitectureMismatchError(f"{name} holds a '{model.role}', not a generator")
        generators.append(model)
        optimizers.append(optimizer or AdamState.for_params(model.params))
    discriminator, d_optimizer, _ = load_model(directory / manifest["discriminator"],
                                               DISCRIMINATOR)
    return EnsembleState(
        generators=generators, discriminator=discriminator,
        generator_optimizers=optimizers,
        discriminator_optimizer=d_optimizer or AdamState.for_params(discriminator.params),
        roster=[AttackSpec(**spec) for spec in manifest["roster"]],
        epoch=manifest["epoch"], provenance=list(manifest.get("provenance") or []))
