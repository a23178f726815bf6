import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from genmix.internal.utils import ConfigReadWrite, atomic_write_bytes, get_genmix_logger
from genmix.modules.gm_attacks import AttackSpec, apply_attack, predict
from genmix.modules.gm_data import Dataset, RngStreams
from genmix.modules.gm_defense import EnsembleState, select_winner
from genmix.modules.gm_nn import EVAL, NetworkModel

logger = get_genmix_logger()

NUM_CLASSES = 10
GENERALIST = "generalist"
SPECIALIST = "specialist"
MARGINALIST = "marginalist"
UNLABELED = "unlabeled"

PGM_TILE_HEADER = b"P5 28 28 255\n"
HEATMAP_BLOCK = 8


@dataclass
class SpecializationThresholds:
    generalist_share: float = 0.2
    generalist_span: float = 0.5
    span_min_share: float = 0.05
    specialist_concentration: float = 0.8
    specialist_max_attacks: int = 2
    specialist_accuracy: float = 0.7
    marginalist_share: float = 0.05
    marginalist_accuracy: float = 0.4


@dataclass
class SpecializationLabel:
    generator: int
    label: str
    win_share: float
    attack_span: int
    concentration: float
    accuracy: float
    top_attacks: List[str] = field(default_factory=list)


@dataclass
class AttackEvaluation:
    spec: AttackSpec
    counts: np.ndarray
    correct: np.ndarray
    attacked_correct: np.ndarray
    wins: np.ndarray
    win_correct: np.ndarray


@dataclass
class EvaluationReport:
    """Per attack and class tallies; fractions are derived, never stored."""
    attacks: List[str]
    counts: np.ndarray
    correct: np.ndarray
    attacked_correct: np.ndarray
    wins: np.ndarray
    win_correct: np.ndarray
    labels: List[SpecializationLabel] = field(default_factory=list)

    @staticmethod
    def _ratio(num, den):
        num = np.asarray(num, dtype=np.float64)
        den = np.asarray(den, dtype=np.float64)
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    @property
    def overall_accuracy(self) -> float:
        return float(self._ratio(self.correct.sum(), self.counts.sum()))

    @property
    def baseline_attacked_accuracy(self) -> float:
        return float(self._ratio(self.attacked_correct.sum(), self.counts.sum()))

    @property
    def accuracy_matrix(self) -> np.ndarray:
        return self._ratio(self.correct, self.counts)

    @property
    def attack_accuracy(self) -> np.ndarray:
        return self._ratio(self.correct.sum(axis=1), self.counts.sum(axis=1))

    @property
    def attacked_accuracy(self) -> np.ndarray:
        return self._ratio(self.attacked_correct.sum(axis=1), self.counts.sum(axis=1))


def defend_image_batch(ens: EnsembleState, x_adv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per image, the output of the generator the discriminator scores highest."""
    outputs = np.stack([g.forward(x_adv, EVAL) for g in ens.generators])
    scores = np.stack([ens.discriminator.forward(out, EVAL)[:, 0] for out in outputs])
    winners = select_winner(scores, "example")
    return outputs[winners, np.arange(len(x_adv))], winners


def evaluate_attack(ens: EnsembleState, classifier: NetworkModel, images: np.ndarray,
                    labels: np.ndarray, spec: AttackSpec, rng: np.random.Generator,
                    batch_size: int = 500, num_classes: int = NUM_CLASSES) -> AttackEvaluation:
    generators = ens.size
    evaluation = AttackEvaluation(
        spec=spec,
        counts=np.zeros(num_classes, dtype=np.int64),
        correct=np.zeros(num_classes, dtype=np.int64),
        attacked_correct=np.zeros(num_classes, dtype=np.int64),
        wins=np.zeros((generators, num_classes), dtype=np.int64),
        win_correct=np.zeros((generators, num_classes), dtype=np.int64),
    )
    for start in range(0, len(images), batch_size):
        x = images[start:start + batch_size]
        y = labels[start:start + batch_size]
        result = apply_attack(spec, classifier, x, y, rng)
        defended, winners = defend_image_batch(ens, result.adversarial)
        hit = (predict(classifier, defended) == y).astype(np.int64)
        np.add.at(evaluation.counts, y, 1)
        np.add.at(evaluation.correct, y, hit)
        np.add.at(evaluation.attacked_correct, y, (~result.success).astype(np.int64))
        np.add.at(evaluation.wins, (winners, y), 1)
        np.add.at(evaluation.win_correct, (winners, y), hit)
    logger.info("%s: defended accuracy %.4f, attacked accuracy %.4f", spec.label,
                evaluation.correct.sum() / max(evaluation.counts.sum(), 1),
                evaluation.attacked_correct.sum() / max(evaluation.counts.sum(), 1))
    return evaluation


def assemble_report(evaluations: Sequence[AttackEvaluation]) -> EvaluationReport:
    return EvaluationReport(
        attacks=[e.spec.label for e in evaluations],
        counts=np.stack([e.counts for e in evaluations]),
        correct=np.stack([e.correct for e in evaluations]),
        attacked_correct=np.stack([e.attacked_correct for e in evaluations]),
        wins=np.stack([e.wins for e in evaluations], axis=1),
        win_correct=np.stack([e.win_correct for e in evaluations], axis=1),
    )


def evaluation_rng(seed: int, spec: AttackSpec) -> np.random.Generator:
    return RngStreams(seed).fresh(f"{RngStreams.NOISE}/eval/{spec.label}")


def post_defense_accuracy(ens: EnsembleState, classifier: NetworkModel, test: Dataset,
                          roster: Sequence[AttackSpec], seed: int = 0, threads: int = 1,
                          batch_size: int = 500,
                          thresholds: Optional[SpecializationThresholds] = None
                          ) -> EvaluationReport:
    def run(spec):
        return evaluate_attack(ens, classifier, test.images, test.labels, spec,
                               evaluation_rng(seed, spec), batch_size)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        evaluations = list(pool.map(run, roster))
    report = assemble_report(evaluations)
    report.labels = specialization_labels(report, thresholds or SpecializationThresholds())
    return report


def specialization_labels(report: EvaluationReport,
                          thresholds: SpecializationThresholds) -> List[SpecializationLabel]:
    t = thresholds
    total_images = max(int(report.counts.sum()), 1)
    attack_count = len(report.attacks)
    labels = []
    for j in range(report.wins.shape[0]):
        per_attack = report.wins[j].sum(axis=1).astype(np.float64)
        correct_per_attack = report.win_correct[j].sum(axis=1).astype(np.float64)
        won = per_attack.sum()
        share = won / total_images
        if won == 0:
            labels.append(SpecializationLabel(j, MARGINALIST, 0.0, 0, 0.0, 0.0))
            continue

        attack_share = per_attack / won
        span = int((attack_share >= t.span_min_share).sum())
        top = np.argsort(-attack_share, kind="stable")[:t.specialist_max_attacks]
        top = top[attack_share[top] > 0]
        concentration = float(attack_share[top].sum())
        accuracy = float(correct_per_attack[top].sum() / per_attack[top].sum())
        concentrated = concentration >= t.specialist_concentration

        if share < t.marginalist_share:
            label = MARGINALIST
        elif share >= t.generalist_share and span > t.generalist_span * attack_count:
            label = GENERALIST
        elif concentrated and accuracy >= t.specialist_accuracy:
            label = SPECIALIST
        elif concentrated and accuracy < t.marginalist_accuracy:
            label = MARGINALIST
        else:
            label = UNLABELED
        labels.append(SpecializationLabel(j, label, float(share), span, concentration, accuracy,
                                          [report.attacks[a] for a in top]))
    return labels


def to_pgm_bytes(image: np.ndarray) -> bytes:
    """Binary graymap; pixel byte = floor(255 * v + 0.5)."""
    pixels = np.clip(np.floor(255.0 * np.asarray(image, dtype=np.float64) + 0.5), 0, 255)
    height, width = pixels.shape
    return f"P5 {width} {height} 255\n".encode("ascii") + pixels.astype(np.uint8).tobytes()


def write_pgm(path, image: np.ndarray) -> Path:
    atomic_write_bytes(path, to_pgm_bytes(image))
    return Path(path)


def emit_sample_grid(ens: EnsembleState, classifier: NetworkModel, x_clean: np.ndarray,
                     roster: Sequence[AttackSpec], path, seed: int = 0,
                     labels: Optional[np.ndarray] = None) -> List[Path]:
    """Clean, attacked and defended tile per attack, plus one combined grid (3 rows x attacks)."""
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    image = x_clean[:1]
    y = None if labels is None else labels[:1]
    written, columns = [], []
    for a, spec in enumerate(roster):
        attacked = apply_attack(spec, classifier, image, y, evaluation_rng(seed, spec)).adversarial
        defended, _ = defend_image_batch(ens, attacked)
        column = []
        for row, tile in (("clean", image), ("attacked", attacked), ("defended", defended)):
            tile = tile[0, 0]
            written.append(write_pgm(out_dir / f"{a:02d}_{spec.kind.lower()}_{row}.pgm", tile))
            column.append(tile)
        columns.append(np.concatenate(column, axis=0))
    grid = np.concatenate(columns, axis=1)
    written.append(write_pgm(out_dir / "grid.pgm", grid))
    return written


def _fraction(value: float) -> str:
    return f"{value:.10f}"


def write_report_csvs(report: EvaluationReport, out_dir, setting: str = "default") -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rw = ConfigReadWrite()
    matrix = report.accuracy_matrix

    accuracy = ["attack,class,n,correct,accuracy"]
    for a, attack in enumerate(report.attacks):
        for c in range(report.counts.shape[1]):
            accuracy.append(f"{attack},{c},{report.counts[a, c]},{report.correct[a, c]},"
                            f"{_fraction(matrix[a, c])}")
    wins = ["generator,attack,class,wins"]
    for j in range(report.wins.shape[0]):
        for a, attack in enumerate(report.attacks):
            for c in range(report.wins.shape[2]):
                wins.append(f"{j},{attack},{c},{report.wins[j, a, c]}")
    summary = ["setting,overall_accuracy,baseline_attacked_accuracy",
               f"{setting},{_fraction(report.overall_accuracy)},"
               f"{_fraction(report.baseline_attacked_accuracy)}"]
    specialization = ["generator,label,win_share,attack_span,concentration,accuracy,top_attacks"]
    for label in report.labels:
        specialization.append(
            f"{label.generator},{label.label},{_fraction(label.win_share)},{label.attack_span},"
            f"{_fraction(label.concentration)},{_fraction(label.accuracy)},"
            f"{'|'.join(label.top_attacks)}")

    paths = {name: out_dir / f"{name}.csv"
             for name in ("accuracy", "wins", "summary", "specialization")}
    rw.write_lines(paths["accuracy"], accuracy)
    rw.write_lines(paths["wins"], wins)
    rw.write_lines(paths["summary"], summary)
    rw.write_lines(paths["specialization"], specialization)
    return paths


def _upscale(matrix: np.ndarray) -> np.ndarray:
    return np.kron(matrix, np.ones((HEATMAP_BLOCK, HEATMAP_BLOCK)))


def write_heatmap_pgms(report: EvaluationReport, out_dir) -> List[Path]:
    """Accuracy heatmap (attack x class) and one win heatmap per generator."""
    out_dir = Path(out_dir)
    paths = [write_pgm(out_dir / "heatmap_accuracy.pgm", _upscale(report.accuracy_matrix))]
    peak = max(int(report.wins.max()), 1)
    for j in range(report.wins.shape[0]):
        paths.append(write_pgm(out_dir / f"heatmap_wins_g{j}.pgm",
                               _upscale(report.wins[j] / peak)))
    return paths


def summarize_repeats(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and standard error of the mean."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        raise ValueError("no values to summarize")
    if len(values) == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


def read_summary_csv(path) -> List[Tuple[str, float, float]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"summary CSV not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return [(row["setting"], float(row["overall_accuracy"]),
                 float(row["baseline_attacked_accuracy"])) for row in csv.DictReader(f)]


def summarize_files(paths: Sequence) -> Dict[str, Tuple[float, float, int]]:
    by_setting: Dict[str, List[float]] = {}
    for path in paths:
        for setting, overall, _ in read_summary_csv(path):
            by_setting.setdefault(setting, []).append(overall)
    return {setting: (*summarize_repeats(values), len(values))
            for setting, values in by_setting.items()}
