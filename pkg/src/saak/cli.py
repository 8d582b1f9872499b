"""Command-line interface: ``saak <command> [options]``.

Exit status: 0 success, 1 bad configuration or usage, 2 unreadable or
malformed data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, _backend, classifier, dataset_io, pipeline, selection
from .errors import ConfigError, DataFormatError, DataIOError, DomainError, NumericError
from .kernels import StageConfig, fit_stage_kernels, load_kernels, save_kernels
from .transform import SaakCascade, forward_stage

log = logging.getLogger("saak")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(ConfigError):
    """A required option is missing; reported with the command's usage."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _stage_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel-size", type=int, default=2, choices=(2, 3, 5))
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--pool", action="store_true", help="2x2 max-pool after the stage")
    p.add_argument("--truncation", default="energy:0.995", help="all | energy:F | top:K")


def _stage_config(a) -> StageConfig:
    return StageConfig(
        kernel_size=a.kernel_size, stride=a.stride, pool=a.pool, **StageConfig.parse_truncation(a.truncation)
    )


def _budget(text: str):
    return float(text) if "." in text else int(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment INI file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output file or directory")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="saak", description="Saak transform feature extraction and classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="fit on train subset, score test subset")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit-kernels", parents=[common], help="fit Saak kernels")
    p.add_argument("--input", type=Path, help="image tensor (N x H x W x K); fits a single stage")
    _stage_args(p)
    p.set_defaults(func=cmd_fit_kernels)

    p = sub.add_parser("transform", parents=[common], help="forward Saak transform")
    p.add_argument("--input", type=Path, required=True, help="image tensor")
    p.add_argument("--kernels", type=Path, nargs="+", required=True, help="kernel files, stage order")
    p.add_argument("--pool", action="append", default=None, choices=("yes", "no"),
                   help="per-stage pooling; defaults to what each kernel file records")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("entropy", parents=[common], help="cross-entropy map of features")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True, help="label tensor (N)")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--bins", type=int, default=selection.DEFAULT_BINS)
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("select", parents=[common], help="build a selection mask from an entropy map")
    p.add_argument("--entropy", type=Path, required=True)
    p.add_argument("--spectral", type=_budget, default=0.75, help="fraction (0.75) or count (12)")
    p.add_argument("--spatial", type=_budget, default=0.5)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common], help="train a classifier on packed features")
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--mask", type=Path, help="apply this mask to rank-4 features first")
    p.add_argument("--classifier", choices=sorted(classifier.TRAINERS), default="mlp")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="hyperparameter")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="accuracy of a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--mask", type=Path)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stability", parents=[common], help="kernel similarity across training sizes")
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.add_argument("--probe", type=int, default=500, help="probe images for coefficient statistics")
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("adversarial", parents=[common], help="score attacked test images")
    p.add_argument("--run", type=Path, required=True, help="directory written by 'saak run'")
    p.add_argument("--attacked", type=Path, required=True, help="tensor aligned with the test subset")
    p.set_defaults(func=cmd_adversarial)

    p = sub.add_parser("visualize", parents=[common], help="grayscale PNG of one channel")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="rank-3 (D1 x D2 x K) or rank-4 tensor")
    src.add_argument("--run", type=Path, help="run directory; renders a test image's stage output")
    p.add_argument("--stage", type=int, default=1, help="stage to render with --run")
    p.add_argument("--image", type=int, default=0, help="sample index")
    p.add_argument("--channel", type=int, default=0)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("inspect", parents=[common], help="describe a saak file")
    p.add_argument("path", type=Path)
    p.set_defaults(func=cmd_inspect)
    parser.commands = sub.choices
    return parser


def _experiment(a) -> pipeline.ExperimentConfig:
    if a.config is None:
        raise UsageError(f"'{a.command}' needs --config")
    cfg = pipeline.load_config(a.config)
    if a.seed is not None:
        cfg = replace(cfg, seed=a.seed)
    if a.out is not None:
        cfg = replace(cfg, out=a.out)
    return cfg


def _require_out(a) -> Path:
    if a.out is None:
        raise UsageError(f"'{a.command}' needs --out")
    return a.out


def _labels(path) -> np.ndarray:
    return np.rint(dataset_io.load_tensor(path)).astype(np.int64).ravel()


def cmd_run(a) -> int:
    report = pipeline.run_classification(_experiment(a))
    sys.stdout.write(report.render())
    return 0


def cmd_fit_kernels(a) -> int:
    if a.input is not None:
        out = _require_out(a)
        images = dataset_io.load_tensor(a.input)
        k = fit_stage_kernels(images, _stage_config(a))
        save_kernels(out, k)
        print(f"stage kernels: {k.retained} of {k.input_dim} -> {out}")
        return 0
    cfg = _experiment(a)
    train = pipeline.load_subset(cfg, "train")
    cascade = pipeline.fit_cascade(train, cfg.stages)
    d = Path(cfg.out) / "kernels"
    d.mkdir(parents=True, exist_ok=True)
    for i, k in enumerate(cascade.kernels, start=1):
        save_kernels(d / f"stage_{i}.saak", k)
        print(f"stage {i}: {k.retained} of {k.input_dim} kernels -> {d / f'stage_{i}.saak'}")
    return 0


def cmd_transform(a) -> int:
    out = _require_out(a)
    kernels = [load_kernels(p) for p in a.kernels]
    if a.pool is not None and len(a.pool) != len(kernels):
        raise ConfigError("give --pool once per kernel file")
    x = dataset_io.load_tensor(a.input)
    configs = []
    for i, k in enumerate(kernels):
        pool = k.pool if a.pool is None else a.pool[i] == "yes"
        configs.append(StageConfig(k.kernel_size, k.stride, pool, truncation="all"))
    SaakCascade(tuple(zip(configs, kernels)))  # validates chaining
    for cfg, k in zip(configs, kernels):
        x = forward_stage(x, k, cfg)
    dataset_io.save_tensor(out, x)
    print(f"features {'x'.join(str(d) for d in x.shape)} -> {out}")
    return 0


def cmd_entropy(a) -> int:
    out = _require_out(a)
    feats = dataset_io.load_tensor(a.features)
    em = selection.entropy_map(feats, _labels(a.labels), a.classes, a.bins)
    dataset_io.save_tensor(out, em.values)
    best = np.argsort(em.channel_means(), kind="stable")[:5]
    print(f"entropy map {em.shape} -> {out}; lowest-entropy channels {best.tolist()}")
    return 0


def cmd_select(a) -> int:
    out = _require_out(a)
    values = dataset_io.load_tensor(a.entropy).astype(np.float64)
    if values.ndim != 3:
        raise DataFormatError(f"{a.entropy}: entropy map must be rank 3, got {values.shape}")
    mask = selection.select(selection.EntropyMap(values, 0, 0), a.spectral, a.spatial)
    selection.save_mask(out, mask)
    print(f"{len(mask.spectral_keep)} channels, {mask.feature_count} features -> {out}")
    return 0


def _design(features_path, mask_path) -> np.ndarray:
    x = dataset_io.load_tensor(features_path)
    if mask_path is not None:
        return selection.apply_selection(x, selection.load_mask(mask_path), "packed")
    return x.reshape(x.shape[0], -1)


def cmd_train(a) -> int:
    out = _require_out(a)
    hp = {}
    for item in a.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        hp[key.strip()] = classifier._hp_value(value.strip())
    if a.seed is not None:
        hp["seed"] = a.seed
    X, y = _design(a.features, a.mask), _labels(a.labels)
    model = classifier.TRAINERS[a.classifier](X, y, **hp)
    classifier.save_model(out, model)
    print(f"{a.classifier}: train accuracy {classifier.evaluate(model, X, y):.4f} -> {out}")
    return 0


def cmd_evaluate(a) -> int:
    model = classifier.load_model(a.model)
    acc = classifier.evaluate(model, _design(a.features, a.mask), _labels(a.labels))
    print(f"accuracy {acc:.4f}")
    return 0


def cmd_stability(a) -> int:
    report = pipeline.run_stability(_experiment(a), a.sizes, a.probe)
    sys.stdout.write(report.render())
    return 0


def cmd_adversarial(a) -> int:
    fitted = pipeline.load_run(a.run)
    if a.seed is not None:
        fitted.config = replace(fitted.config, seed=a.seed)
    report = pipeline.run_adversarial_eval(fitted, a.attacked, a.out)
    sys.stdout.write(report.render())
    return 0


def _stage_tensor(a) -> np.ndarray:
    fitted = pipeline.load_run(a.run)
    n = len(fitted.cascade)
    if not 1 <= a.stage <= n:
        raise DomainError(f"{a.run}: stage {a.stage} outside [1, {n}]")
    test = pipeline.load_subset(fitted.config, "test")
    if not 0 <= a.image < len(test):
        raise DomainError(f"image index {a.image} outside [0, {len(test)})")
    return fitted.stage_features(test.data[a.image : a.image + 1])[a.stage - 1]


def cmd_visualize(a) -> int:
    out = _require_out(a)
    x = dataset_io.load_tensor(a.input) if a.run is None else _stage_tensor(a)
    if x.ndim == 4:
        if not 0 <= a.image < x.shape[0]:
            raise DomainError(f"image index {a.image} outside [0, {x.shape[0]})")
        x = x[a.image]
    if x.ndim != 3:
        raise DataFormatError(f"{a.input}: expected a rank-3 or rank-4 tensor, got {x.shape}")
    if not 0 <= a.channel < x.shape[2]:
        raise DomainError(f"channel {a.channel} outside [0, {x.shape[2]})")
    dataset_io.export_heatmap(x[:, :, a.channel], out)
    print(f"channel {a.channel} -> {out}")
    return 0


def cmd_inspect(a) -> int:
    path = a.path
    if path.is_dir():
        for f in sorted(path.rglob("*")):
            if f.is_file():
                print(f.relative_to(path))
        return 0
    if path.suffix == ".mask":
        m = selection.load_mask(path)
        print(f"mask grid {m.grid}, {len(m.spectral_keep)} channels, {m.feature_count} features")
        return 0
    t = dataset_io.load_tensor(path)
    print(f"tensor {'x'.join(str(d) for d in t.shape)} float32")
    meta = path.with_suffix(".meta")
    if meta.exists():
        for k, v in dataset_io.read_meta(meta).items():
            print(f"  {k} = {v}")
    return 0


def _run(a) -> int:
    if a.threads is not None:
        if a.threads < 1:
            raise ConfigError("--threads must be >= 1")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=a.threads):
            return a.func(a)
    return a.func(a)


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    log.debug("backend %s", _backend.BACKEND)
    try:
        return _run(a)
    except UsageError as e:
        parser.commands[a.command].print_usage(sys.stderr)
        print(f"saak {a.command}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"saak {a.command}: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, DataIOError, DomainError) as e:
        print(f"saak {a.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"saak {a.command}: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
