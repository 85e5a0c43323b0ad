"""
Management command running the strokebench pipelines.

    python manage.py strokebench synth --seed 7 --out data/synth
    python manage.py strokebench train --data data/synth --out runs/v2 --epochs 20
    python manage.py strokebench detect --data data/synth --checkpoint runs/v2/best.ckpt --out runs/v2-det
    python manage.py strokebench eval-detect --data data/synth --detections runs/v2-det/detections.csv --out runs/v2-eval

Flags override values from --config, which override the defaults.
"""

from django.core.management.base import BaseCommand, CommandError

from apps.core.exceptions import StrokeBenchError
from apps.experiments import services
from apps.experiments.config import ExperimentConfig, apply_overrides, parse_config
from apps.zoo.networks import DEFAULT_INPUT_SHAPE, DEFAULT_NUM_CLASSES

# flag dest -> (section, key)
FLAG_KEYS = {
    "seed": ("experiment", "seed"),
    "out": ("experiment", "output_dir"),
    "data": ("data", "dataset_dir"),
    "model": ("experiment", "model"),
    "label_mode": ("experiment", "label_mode"),
    "epochs": ("train", "epochs"),
    "fusion": ("detection", "fusion"),
    "mode": ("detection", "mode"),
    "approach": ("detection", "approach"),
    "sigma": ("detection", "sigma"),
    "iou": ("detection", "iou_threshold"),
}


class Command(BaseCommand):
    help = "Synthesise data, train, classify, detect and evaluate table-tennis stroke models"

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", metavar="subcommand", required=True)

        synth = self._subcommand(subparsers, "synth", "Write a synthetic dataset")
        synth.set_defaults(out_key=("data", "dataset_dir"))

        train = self._subcommand(subparsers, "train", "Train a network on the train split")
        train.add_argument("--data", help="Dataset directory")
        train.add_argument("--model", help="v1 or v2")
        train.add_argument("--label-mode", dest="label_mode", help="classification or detection")
        train.add_argument("--epochs", help="Number of epochs")

        classify = self._subcommand(subparsers, "classify", "Classify the annotated strokes of the test split")
        classify.add_argument("--data", help="Dataset directory")
        classify.add_argument("--checkpoint", required=True, help="Checkpoint written by train")
        classify.add_argument("--fusion", help="no_window, vote, mean or gaussian")

        detect = self._subcommand(subparsers, "detect", "Detect strokes in the test videos")
        detect.add_argument("--data", help="Dataset directory")
        detect.add_argument("--checkpoint", required=True, help="Checkpoint written by train")
        detect.add_argument("--fusion", help="no_window, vote, mean or gaussian")
        detect.add_argument("--mode", help="sliding or proposals")
        detect.add_argument("--approach", help="neg_vs_all or neg_vs_sum")
        detect.add_argument("--sigma", help="Gaussian fusion width in frames")

        eval_classify = self._subcommand(subparsers, "eval-classify", "Score a predictions file")
        eval_classify.add_argument("--predictions", required=True, help="predictions.csv written by classify")

        eval_detect = self._subcommand(subparsers, "eval-detect", "Score a detections file")
        eval_detect.add_argument("--data", help="Dataset directory")
        eval_detect.add_argument("--detections", required=True, help="detections.csv written by detect")
        eval_detect.add_argument("--iou", help="Temporal IoU matching threshold")

        shapes = self._subcommand(subparsers, "shapes", "Print per-layer output shapes")
        shapes.add_argument("--model", help="v1 or v2")
        shapes.add_argument(
            "--input",
            default=",".join(str(d) for d in DEFAULT_INPUT_SHAPE),
            help="Input shape C,T,H,W",
        )
        shapes.add_argument("--classes", type=int, default=DEFAULT_NUM_CLASSES, help="Number of classes")

    def _subcommand(self, subparsers, name, help_text):
        parser = subparsers.add_parser(name, help=help_text)
        parser.add_argument("--config", help="INI experiment file")
        parser.add_argument("--seed", help="Random seed")
        parser.add_argument("--out", help="Output directory")
        parser.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="Override one experiment setting (repeatable)",
        )
        return parser

    def build_config(self, options):
        config = parse_config(options["config"]) if options.get("config") else ExperimentConfig()
        overrides = {}
        for item in options.get("set") or []:
            name, sep, value = item.partition("=")
            section, dot, key = name.strip().partition(".")
            if not sep or not dot:
                raise CommandError(f"--set expects SECTION.KEY=VALUE, got {item!r}", returncode=2)
            overrides[(section, key)] = value
        for dest, target in FLAG_KEYS.items():
            if options.get(dest) is not None:
                if dest == "out" and options.get("out_key"):
                    target = options["out_key"]
                overrides[target] = str(options[dest])
        return apply_overrides(config, overrides)

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            config = self.build_config(options)
            if subcommand == "shapes":
                self.print_shapes(config, options)
                return
            inputs = {name: options.get(name) for name in ("checkpoint", "predictions", "detections")}
            services.check_run_inputs(subcommand, config, inputs)
            result = self.dispatch(subcommand, config, options)
        except StrokeBenchError as exc:
            raise CommandError(str(exc), returncode=1) from exc
        except OSError as exc:
            raise CommandError(f"I/O error: {exc}", returncode=1) from exc

        for path in result.artifacts:
            self.stdout.write(f"  wrote {path}")
        summary = ", ".join(
            f"{key} {value:.4f}" if isinstance(value, float) else f"{key} {value}"
            for key, value in result.summary.items()
        )
        self.stdout.write(self.style.SUCCESS(f"{subcommand} finished in {result.output_dir}: {summary}"))

    def dispatch(self, subcommand, config, options):
        if subcommand == "synth":
            return services.run_synth(config)
        if subcommand == "train":
            return services.run_train(config)
        if subcommand == "classify":
            return services.run_classify(config, options["checkpoint"])
        if subcommand == "detect":
            return services.run_detect(config, options["checkpoint"])
        if subcommand == "eval-classify":
            return services.run_eval_classify(config, options["predictions"])
        return services.run_eval_detect(config, options["detections"])

    def print_shapes(self, config, options):
        try:
            input_shape = tuple(int(d) for d in options["input"].split(","))
        except ValueError:
            raise CommandError(f"--input expects C,T,H,W integers, got {options['input']!r}", returncode=2)
        layers, features = services.run_shapes(config, input_shape, options["classes"])
        self.stdout.write(f"{config.model} input {input_shape}")
        for layer in layers:
            self.stdout.write(f"  {layer.index:>3}  {layer.kind:<10} {layer.shape}")
        self.stdout.write(self.style.SUCCESS(f"feature map {features}"))
