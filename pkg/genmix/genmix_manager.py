from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional
import asyncio
import inspect

import numpy as np

from genmix.internal.errors import ConfigError
from genmix.internal.utils import (ConfigReadWrite, build_identifier, log_on_success,
                                   sha256_file)
from genmix.internal.utils import logger
from genmix.modules.gm_attacks import apply_attack, save_attack_cache, success_rate
from genmix.modules.gm_checkpoint import save_checkpoint
from genmix.modules.gm_data import RngStreams, find_mnist_files, load_idx, split_train
from genmix.modules.gm_defense import (load_ensemble, load_model, pretrain_classifier,
                                       train_defense, train_separate_then_combine)
from genmix.modules.gm_eval import (assemble_report, emit_sample_grid, evaluate_attack,
                                    evaluation_rng, specialization_labels, summarize_files,
                                    write_heatmap_pgms, write_report_csvs)
from genmix.modules.gm_models import CLASSIFIER
from genmix.modules.gm_parse_config import ConfigParser


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    stage: str
    seed: int
    config: Dict[str, Any]
    build: str = field(default_factory=build_identifier)
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    inputs: List[Dict[str, str]] = field(default_factory=list)
    outputs: List[Dict[str, str]] = field(default_factory=list)
    results: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        # drop messages left behind by an earlier run of this stage that failed
        logger.pop(self.stage)

    def note(self, message, log_level="INFO"):
        logger.append_log(self.stage, log_level, message)

    def add_input(self, path):
        self.inputs.append({"path": str(path), "sha256": sha256_file(path)})

    def add_output(self, path):
        self.outputs.append({"path": str(path), "sha256": sha256_file(path)})

    def add_outputs_under(self, directory):
        for path in sorted(Path(directory).rglob("*")):
            if path.is_file():
                self.add_output(path)

    def write(self, path) -> Path:
        self.finished = _now()
        ConfigReadWrite().write_yaml(path, {
            "stage": self.stage,
            "build": self.build,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "results": self.results,
            "log": logger.pop(self.stage),
        })
        return Path(path)


class GenMixManager:

    def __init__(self, config_file=None, overrides: Optional[Dict[str, Any]] = None):
        self.command_mapping = self._initialize_command_mapping()
        self.conf_p = ConfigParser(config_file, overrides, logger=logger)
        self.conf_rw = ConfigReadWrite()
        self.out_dir = self.conf_p.get_out_dir()
        self.seed = self.conf_p.get_seed()

    def _initialize_command_mapping(self):
        # (command_method , validation_method)
        return {
            'pretrain': (self.pretrain, self._validator_pretrain),
            'train_defense': (self.train_defense, self._validator_train_defense),
            'evaluate': (self.evaluate, self._validator_evaluate),
            'attack_bench': (self.attack_bench, self._validator_attack_bench),
            'summarize': (self.summarize, self._validator_summarize),
        }

    def _mnist_files(self):
        return find_mnist_files(self.conf_p.get_mnist_dir())

    def _default_classifier(self) -> Path:
        return self.out_dir / "classifier.ckpt"

    def _default_ensemble(self) -> Path:
        return self.out_dir / "defense" / "final"

    def _manifest(self, stage) -> RunManifest:
        return RunManifest(stage=stage, seed=self.seed, config=self.conf_p.snapshot())

    @staticmethod
    def _require(path: Path, what: str) -> Path:
        if not Path(path).exists():
            raise FileNotFoundError(f"{what} not found: {path}")
        return Path(path)

    def _validator_pretrain(self):
        self.conf_p.get_pretrain_settings()
        files = self._mnist_files()
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            self._require(files[key], "MNIST file")

    def _validator_train_defense(self, classifier=None):
        self.conf_p.get_train_config()
        self.conf_p.get_roster()
        self.conf_p.get_defense_mode()
        self._require(self._mnist_files()["train_images"], "MNIST file")
        self._require(classifier or self._default_classifier(), "classifier checkpoint")

    def _validator_evaluate(self, classifier=None, ensemble=None):
        self.conf_p.get_thresholds()
        files = self._mnist_files()
        for key in ("test_images", "test_labels"):
            self._require(files[key], "MNIST file")
        self._require(classifier or self._default_classifier(), "classifier checkpoint")
        self._require(ensemble or self._default_ensemble(), "ensemble directory")

    def _validator_attack_bench(self, classifier=None):
        self.conf_p.get_roster()
        self.conf_p.get_bench_batch()
        files = self._mnist_files()
        for key in ("train_images", "train_labels"):
            self._require(files[key], "MNIST file")
        self._require(classifier or self._default_classifier(), "classifier checkpoint")

    def _validator_summarize(self, summaries=None):
        if not summaries:
            raise ConfigError("summarize needs at least one summary CSV (--summaries)")
        for path in summaries:
            self._require(path, "summary CSV")

    @log_on_success
    async def pretrain(self):
        settings = self.conf_p.get_pretrain_settings()
        files = self._mnist_files()
        train = load_idx(files["train_images"], files["train_labels"])
        test = load_idx(files["test_images"], files["test_labels"])
        manifest = self._manifest("pretrain")
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            manifest.add_input(files[key])

        classifier, accuracy = await asyncio.to_thread(
            pretrain_classifier, train, test, settings["epochs"], settings["lr"],
            settings["batch_size"], RngStreams(self.seed), self.conf_p.get("progress"))

        path = save_checkpoint(self._default_classifier(), classifier.params, None, {
            "role": CLASSIFIER, "epoch": settings["epochs"], "seed": self.seed,
            "test_accuracy": accuracy})
        manifest.add_output(path)
        manifest.results["test_accuracy"] = accuracy
        manifest.note(f"classifier test accuracy {accuracy:.4f} after {settings['epochs']} epoch(s)")
        manifest.write(self.out_dir / "pretrain_manifest.yaml")
        return path, f"classifier test accuracy {accuracy:.4f} -> {path}"

    @log_on_success
    async def train_defense(self, classifier=None):
        config = self.conf_p.get_train_config()
        roster = self.conf_p.get_roster()
        mode = self.conf_p.get_defense_mode()
        files = self._mnist_files()
        classifier_path = Path(classifier or self._default_classifier())

        manifest = self._manifest("train_defense")
        manifest.add_input(files["train_images"])
        manifest.add_input(classifier_path)
        # labels are never opened here
        train = load_idx(files["train_images"])
        split = split_train(train, RngStreams(self.seed))
        model, _, _ = load_model(classifier_path, CLASSIFIER)

        run_dir = self.out_dir / "defense"
        if mode == "joint":
            ens, _ = await asyncio.to_thread(train_defense, split, model, roster, config, run_dir)
            final_dir = run_dir / "final"
        else:
            ens = await asyncio.to_thread(train_separate_then_combine, split, model, roster,
                                          config, None, None, run_dir)
            final_dir = run_dir / "combined"

        manifest.add_outputs_under(run_dir)
        manifest.results.update({
            "mode": mode,
            "generators": ens.size,
            "roster": [spec.label for spec in roster],
            "provenance": list(ens.provenance),
            "final": str(final_dir),
        })
        manifest.note(f"{mode} training of {ens.size} generator(s): {', '.join(ens.provenance)}")
        manifest.write(self.out_dir / "train_defense_manifest.yaml")
        return ens, f"trained {ens.size} generator(s) on {len(roster)} attack(s) -> {final_dir}"

    @log_on_success
    async def evaluate(self, classifier=None, ensemble=None):
        settings = self.conf_p.get_evaluate_settings()
        threads = self.conf_p.get_threads()
        files = self._mnist_files()
        classifier_path = Path(classifier or self._default_classifier())
        ensemble_dir = Path(ensemble or self._default_ensemble())

        manifest = self._manifest("evaluate")
        for path in (files["test_images"], files["test_labels"], classifier_path):
            manifest.add_input(path)
        test = load_idx(files["test_images"], files["test_labels"])
        model, _, _ = load_model(classifier_path, CLASSIFIER)
        ens = load_ensemble(ensemble_dir)

        semaphore = asyncio.Semaphore(threads)

        async def run(spec):
            async with semaphore:
                return await asyncio.to_thread(
                    evaluate_attack, ens, model, test.images, test.labels, spec,
                    evaluation_rng(self.seed, spec), int(settings["batch_size"]))

        evaluations = await asyncio.gather(*(run(spec) for spec in ens.roster))
        report = assemble_report(evaluations)
        for evaluation in evaluations:
            images = max(int(evaluation.counts.sum()), 1)
            manifest.note(f"{evaluation.spec.label}: defended {evaluation.correct.sum() / images:.4f}, "
                          f"attacked {evaluation.attacked_correct.sum() / images:.4f}")
        report.labels = specialization_labels(report, self.conf_p.get_thresholds())

        eval_dir = self.out_dir / "evaluation"
        paths = write_report_csvs(report, eval_dir, settings["setting"])
        if settings["heatmaps"]:
            write_heatmap_pgms(report, eval_dir)
        if settings["emit_grids"]:
            emit_sample_grid(ens, model, test.images, ens.roster, settings["emit_grids"],
                             self.seed, test.labels)
        manifest.add_outputs_under(eval_dir)
        manifest.results.update({
            "overall_accuracy": report.overall_accuracy,
            "baseline_attacked_accuracy": report.baseline_attacked_accuracy,
            "labels": {str(l.generator): l.label for l in report.labels},
        })
        manifest.write(self.out_dir / "evaluate_manifest.yaml")
        return report, (f"overall_accuracy {report.overall_accuracy:.4f} "
                        f"(attacked {report.baseline_attacked_accuracy:.4f}) -> {paths['summary']}")

    @log_on_success
    async def attack_bench(self, classifier=None):
        roster = self.conf_p.get_roster()
        batch = self.conf_p.get_bench_batch()
        files = self._mnist_files()
        classifier_path = Path(classifier or self._default_classifier())
        manifest = self._manifest("attack_bench")
        for path in (files["train_images"], files["train_labels"], classifier_path):
            manifest.add_input(path)
        model, _, _ = load_model(classifier_path, CLASSIFIER)
        train = load_idx(files["train_images"], files["train_labels"])

        chosen = np.sort(RngStreams(self.seed).fresh("bench").choice(
            len(train), size=min(batch, len(train)), replace=False))
        x, y = train.images[chosen], train.labels[chosen]
        cache = self.conf_p.get("defense.cache_attacks")

        rows, table = ["attack,epsilon,success_rate"], []
        for spec in roster:
            result = await asyncio.to_thread(
                apply_attack, spec, model, x, y,
                RngStreams(self.seed).fresh(f"{RngStreams.NOISE}/bench/{spec.label}"))
            rate = success_rate(result)
            rows.append(f"{spec.kind},{spec.epsilon:g},{rate:.6f}")
            manifest.results[spec.label] = rate
            manifest.note(f"{spec.label}: success rate {rate:.4f} on {len(y)} images")
            table.append(f"{spec.kind:<6} {spec.epsilon:>7g} {100 * rate:6.1f}%")
            if cache:
                manifest.add_output(save_attack_cache(
                    self.out_dir / "attack_cache" / f"{spec.kind.lower()}.ckpt", result, y))

        bench_csv = self.out_dir / "attack_bench.csv"
        self.conf_rw.write_lines(bench_csv, rows)
        manifest.add_output(bench_csv)
        manifest.write(self.out_dir / "attack_bench_manifest.yaml")
        header = f"{'attack':<6} {'eps':>7} {'success':>7}"
        return rows, "\n".join([header, *table])

    @log_on_success
    async def summarize(self, summaries=None):
        summary = summarize_files(summaries)
        lines = [f"{setting}: {100 * mean:.1f} ± {100 * stderr:.1f} ({n} runs)"
                 for setting, (mean, stderr, n) in summary.items()]
        return summary, "\n".join(lines)

    def _filter_args(self, func, **kwargs):
        sig = inspect.signature(func)
        filtered_args = {
            k: v
            for k, v in kwargs.items() if k in sig.parameters
        }
        return filtered_args

    async def execute_command(self, command, **options):
        if command not in self.command_mapping:
            raise ConfigError(f"Invalid command: {command}")

        command_func, validator_func = self.command_mapping[command]
        if validator_func is not None:
            validator_func(**self._filter_args(validator_func, **options))
        return await command_func(**self._filter_args(command_func, **options))

