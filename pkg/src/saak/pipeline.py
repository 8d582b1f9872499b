"""End-to-end experiments: classification runs, kernel-stability studies and
evaluation on externally attacked images."""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _backend, classifier, dataset_io, selection
from .dataset_io import ImageSet
from .errors import ConfigError, DataIOError, DomainError
from .kernels import SaakKernelSet, StageConfig, kernel_cosine_similarity, load_kernels, save_kernels
from .transform import (
    SaakCascade,
    auto_stage_count,
    cascade_shapes,
    fit_cascade,
    forward_cascade,
    rmse_per_spectral,
)

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
DATA_ENV = "SAAK_DATA_DIR"
STREAMS = {"train_subset": 0, "test_subset": 1, "classifier": 2, "stability": 3, "probe": 4}
DATASETS = ("mnist", "cifar10", "stl10", "tensor")


def rng_for(seed: int, stream: str, *extra: int) -> np.random.Generator:
    """Independent generator per named stream, all derived from one seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, STREAMS[stream], *extra]))


def stratified_indices(labels, size: int, rng: np.random.Generator, class_count: int) -> np.ndarray:
    """Class-balanced sample without replacement; the first ``size % C``
    classes get one extra.  Asking for everything returns every index."""
    labels = np.asarray(labels)
    if size > labels.shape[0]:
        raise ConfigError(f"subset of {size} requested from {labels.shape[0]} images")
    if size < 1:
        raise ConfigError("subset size must be positive")
    if size == labels.shape[0]:
        return np.arange(size)
    base, extra = divmod(size, class_count)
    picked = []
    for c in range(class_count):
        pool = np.flatnonzero(labels == c)
        want = base + (1 if c < extra else 0)
        if want > pool.shape[0]:
            raise ConfigError(f"class {c} has {pool.shape[0]} images, {want} requested")
        picked.append(rng.choice(pool, size=want, replace=False))
    return np.sort(np.concatenate(picked))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: Path | None = None
    paths: dict = field(default_factory=dict)
    class_count: int = 10
    train_size: int | None = None
    test_size: int | None = None
    seed: int = 0
    stages: list = field(default_factory=lambda: [StageConfig(2, 1, True), StageConfig(2, 1, True)])
    bins: int = selection.DEFAULT_BINS
    spectral: float | int = 0.75
    spatial: float | int = 0.5
    scope: str = "final"
    classifier: str = "mlp"
    hyperparams: dict = field(default_factory=dict)
    out: Path = Path("saak-run")

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; expected one of {DATASETS}")
        if self.scope not in ("final", "concat"):
            raise ConfigError(f"scope must be 'final' or 'concat', got {self.scope!r}")
        if self.classifier not in classifier.TRAINERS:
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if not self.stages:
            raise ConfigError("at least one stage is required")
        self.out = Path(self.out)
        if self.data_dir is not None:
            self.data_dir = Path(self.data_dir)

    def resolved_data_dir(self) -> Path:
        if self.data_dir is not None:
            return self.data_dir
        root = os.environ.get(DATA_ENV)
        if not root:
            raise ConfigError(f"no data_dir in config and {DATA_ENV} is not set")
        return Path(root) / self.dataset


def _budget(text: str):
    return float(text) if "." in text else int(text)


def _stage_from_section(sec, name) -> StageConfig:
    known = {"kernel_size", "stride", "pool", "truncation", "min_components"}
    unknown = set(sec) - known
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    ks = sec.getint("kernel_size", 2)
    kw = StageConfig.parse_truncation(sec.get("truncation", "energy:0.995"))
    return StageConfig(
        kernel_size=ks,
        stride=sec.getint("stride", 1),
        pool=sec.getboolean("pool", False),
        min_components=sec.getint("min_components", 3),
        **kw,
    )


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment file.

    ``[experiment]`` holds version (must be 1), dataset, data_dir, the
    optional explicit paths train_images/train_labels/test_images/
    test_labels (plus class_count for ``tensor`` datasets), train_size,
    test_size, seed and out.  Stages are ``[stage.1]``, ``[stage.2]``, ...
    with kernel_size, stride, pool and truncation (all | energy:F | top:K);
    alternatively ``[stages] count = auto`` repeats ``[stage.1]`` as long
    as the image supports it.  ``[selection]`` has bins, spectral, spatial
    (integers are counts, decimals fractions) and scope (final | concat).
    ``[classifier]`` has kind (lr | mlp) and any training hyperparameters.
    Relative paths resolve against the config file's directory.
    """
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        with open(path) as f:
            cp.read_file(f)
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e})") from e
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return _config_from_parser(cp, path.parent)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _config_from_parser(cp: configparser.ConfigParser, base: Path) -> ExperimentConfig:
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    ex = cp["experiment"]
    version = ex.getint("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version}")

    def rel(p):
        p = Path(os.path.expanduser(p))
        return p if p.is_absolute() else base / p

    stage_names = sorted(
        (s for s in cp.sections() if s.startswith("stage.")), key=lambda s: int(s.split(".")[1])
    )
    if not stage_names:
        raise ConfigError("no [stage.N] sections")
    stages = [_stage_from_section(cp[s], s) for s in stage_names]
    if "stages" in cp and cp["stages"].get("count", "").strip() == "auto":
        first = stages[0]
        side = {"mnist": 28, "cifar10": 32, "stl10": 96}.get(ex.get("dataset", "mnist"))
        if side is None:
            raise ConfigError("[stages] count = auto needs a known image size")
        n = auto_stage_count(side, side, first.kernel_size, first.stride, first.pool)
        stages = [first] * n
    sel = cp["selection"] if "selection" in cp else {}
    clf = dict(cp["classifier"]) if "classifier" in cp else {}
    kind = clf.pop("kind", "mlp")
    hp = {k: classifier._hp_value(v) for k, v in clf.items()}
    paths = {
        k: rel(ex[k]) for k in ("train_images", "train_labels", "test_images", "test_labels") if k in ex
    }
    return ExperimentConfig(
        dataset=ex.get("dataset", "mnist"),
        data_dir=rel(ex["data_dir"]) if "data_dir" in ex else None,
        paths=paths,
        class_count=ex.getint("class_count", 10),
        train_size=ex.getint("train_size") if "train_size" in ex else None,
        test_size=ex.getint("test_size") if "test_size" in ex else None,
        seed=ex.getint("seed", 0),
        stages=stages,
        bins=int(sel.get("bins", selection.DEFAULT_BINS)),
        spectral=_budget(sel.get("spectral", "0.75")),
        spatial=_budget(sel.get("spatial", "0.5")),
        scope=sel.get("scope", "final"),
        classifier=kind,
        hyperparams=hp,
        out=rel(ex.get("out", "saak-run")),
    )


def dump_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    ex = {"version": str(CONFIG_VERSION), "dataset": cfg.dataset, "seed": str(cfg.seed), "out": str(cfg.out)}
    if cfg.data_dir is not None:
        ex["data_dir"] = str(cfg.data_dir)
    for k, v in cfg.paths.items():
        ex[k] = str(v)
    ex["class_count"] = str(cfg.class_count)
    if cfg.train_size is not None:
        ex["train_size"] = str(cfg.train_size)
    if cfg.test_size is not None:
        ex["test_size"] = str(cfg.test_size)
    cp["experiment"] = ex
    for i, s in enumerate(cfg.stages, start=1):
        cp[f"stage.{i}"] = {
            "kernel_size": str(s.kernel_size),
            "stride": str(s.stride),
            "pool": "yes" if s.pool else "no",
            "truncation": s.truncation_spec,
            "min_components": str(s.min_components),
        }
    cp["selection"] = {
        "bins": str(cfg.bins),
        "spectral": repr(cfg.spectral),
        "spatial": repr(cfg.spatial),
        "scope": cfg.scope,
    }
    cp["classifier"] = {"kind": cfg.classifier, **{k: str(v) for k, v in sorted(cfg.hyperparams.items())}}
    lines = []

    class _W:
        def write(self, s):
            lines.append(s)

    cp.write(_W())
    return "".join(lines)


# ---------------------------------------------------------------------------
# data


def _first_existing(d: Path, names) -> Path:
    for n in names:
        for cand in (d / n, d / (n + ".gz")):
            if cand.exists():
                return cand
    raise DataIOError(f"{d}: none of {list(names)} found")


def load_split(cfg: ExperimentConfig, split: str) -> ImageSet:
    """Load the full train or test split named by the config."""
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split {split!r}")
    p = cfg.paths
    if cfg.dataset == "tensor":
        try:
            images = dataset_io.load_tensor(p[f"{split}_images"])
            labels = dataset_io.load_tensor(p[f"{split}_labels"])
        except KeyError as e:
            raise ConfigError(f"tensor dataset needs {split}_images and {split}_labels paths") from e
        return ImageSet(images, np.rint(labels).astype(np.int64), cfg.class_count)
    if f"{split}_images" in p:
        img, lab = p[f"{split}_images"], p.get(f"{split}_labels")
    else:
        img = lab = None
    d = None if img else cfg.resolved_data_dir()
    if cfg.dataset == "mnist":
        prefix = "train" if split == "train" else "t10k"
        img = img or _first_existing(d, [f"{prefix}-images-idx3-ubyte", f"{prefix}-images.idx3-ubyte"])
        lab = lab or _first_existing(d, [f"{prefix}-labels-idx1-ubyte", f"{prefix}-labels.idx1-ubyte"])
        return dataset_io.load_mnist(img, lab)
    if cfg.dataset == "cifar10":
        if img:
            return dataset_io.load_cifar10([img])
        if (d / "cifar-10-batches-bin").is_dir():
            d = d / "cifar-10-batches-bin"
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        return dataset_io.load_cifar10([_first_existing(d, [n]) for n in names])
    img = img or _first_existing(d, [f"{split}_X.bin"])
    lab = lab or _first_existing(d, [f"{split}_y.bin"])
    return dataset_io.load_stl10(img, lab)


def load_subset(cfg: ExperimentConfig, split: str) -> ImageSet:
    full = load_split(cfg, split)
    size = cfg.train_size if split == "train" else cfg.test_size
    if size is None:
        return full
    idx = stratified_indices(full.labels, size, rng_for(cfg.seed, f"{split}_subset"), full.class_count)
    return full.subset(idx)


# ---------------------------------------------------------------------------
# fitted pipeline


@dataclass
class FittedPipeline:
    config: ExperimentConfig
    cascade: SaakCascade
    masks: list
    model: object
    image_shape: tuple
    entropy: list = field(default_factory=list)

    def stage_features(self, images) -> list[np.ndarray]:
        return forward_cascade(images, self.cascade)

    def pack(self, stage_features) -> np.ndarray:
        stages = range(len(stage_features)) if self.config.scope == "concat" else [len(stage_features) - 1]
        return np.concatenate(
            [selection.apply_selection(stage_features[i], self.masks[i], "packed") for i in stages], axis=1
        )

    def features(self, images) -> np.ndarray:
        return self.pack(self.stage_features(images))

    def predict(self, images) -> np.ndarray:
        return self.model.predict(self.features(images))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in self.cascade.kernels:
            h.update(k.basis().tobytes())
        for m in self.masks:
            h.update(m.flat_index().tobytes())
            h.update(repr(m.grid).encode())
        model = self.model
        for attr in ("standardizer",):
            s = getattr(model, attr, None)
            if s is not None:
                h.update(np.asarray(s.mean).tobytes())
                h.update(np.asarray(s.scale).tobytes())
        for p in getattr(model, "parameters", lambda: [])():
            h.update(np.asarray(p).tobytes())
        return h.hexdigest()


def _check_images(cfg: ExperimentConfig, images: ImageSet) -> None:
    h, w = images.shape[1:3]
    try:
        cascade_shapes(h, w, cfg.stages)
    except ConfigError as e:
        raise ConfigError(f"cascade does not fit {h}x{w} images: {e}") from e


def _classifier_seed(cfg: ExperimentConfig) -> int:
    return int(rng_for(cfg.seed, "classifier").integers(2**31 - 1))


def fit_pipeline(cfg: ExperimentConfig, train: ImageSet, estimator=None, timings=None) -> FittedPipeline:
    """Kernels, entropy maps, masks and classifier, from training images only."""
    timings = {} if timings is None else timings
    _check_images(cfg, train)
    t0 = time.perf_counter()
    cascade = fit_cascade(train, cfg.stages)
    timings["fit_kernels"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    feats = forward_cascade(train, cascade)
    timings["transform_train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    emaps, masks = [], []
    for i, f in enumerate(feats, start=1):
        try:
            em = selection.entropy_map(f, train.labels, train.class_count, cfg.bins)
            masks.append(selection.select(em, cfg.spectral, cfg.spatial))
        except ConfigError as e:
            raise ConfigError(f"stage {i} selection: {e}") from e
        emaps.append(em)
    timings["select"] = time.perf_counter() - t0

    fitted = FittedPipeline(cfg, cascade, masks, None, tuple(train.shape[1:]), emaps)
    X = fitted.pack(feats)
    t0 = time.perf_counter()
    if estimator is not None:
        fitted.model = estimator.fit(X, train.labels) or estimator
    else:
        hp = {**cfg.hyperparams}
        hp.setdefault("seed", _classifier_seed(cfg))
        fitted.model = classifier.TRAINERS[cfg.classifier](X, train.labels, train.class_count, **hp)
    timings["train"] = time.perf_counter() - t0
    fitted.train_accuracy = float((np.asarray(fitted.model.predict(X)) == train.labels).mean())
    return fitted


def evaluate_pipeline(fitted: FittedPipeline, images: ImageSet) -> float:
    if tuple(images.shape[1:]) != tuple(fitted.image_shape):
        raise DomainError(f"images {images.shape[1:]} differ from training shape {fitted.image_shape}")
    if len(images) == 0:
        raise DomainError("cannot evaluate on an empty set")
    pred = np.asarray(fitted.predict(images))
    return float((pred == images.labels).mean())


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    dataset: str
    backend: str
    seed: int
    train_size: int
    test_size: int
    image_shape: tuple
    stage_shapes: list
    retained: list
    selected: list
    classifier: str
    feature_count: int
    train_accuracy: float
    test_accuracy: float
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self, with_timings: bool = False) -> dict:
        d = asdict(self)
        if not with_timings:
            d.pop("timings")
        return d

    def render(self) -> str:
        lines = [
            "saak classification report",
            f"dataset        {self.dataset}",
            f"backend        {self.backend}",
            f"seed           {self.seed}",
            f"train images   {self.train_size}",
            f"test images    {self.test_size}",
            f"image shape    {'x'.join(str(d) for d in self.image_shape)}",
            "stage  D1 x D2 x K      kernels  selected",
        ]
        for i, (shape, r, s) in enumerate(zip(self.stage_shapes, self.retained, self.selected), start=1):
            dims = "x".join(str(d) for d in shape)
            lines.append(f"{i:<6} {dims:<16} {r:<8} {s}")
        lines += [
            f"classifier     {self.classifier} on {self.feature_count} features",
            f"train accuracy {self.train_accuracy:.4f}",
            f"test accuracy  {self.test_accuracy:.4f}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as e:
        raise DataIOError(f"{path}: {e}") from e


def write_report(out: Path, report: ExperimentReport, stem: str = "report") -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / f"{stem}.txt", report.render())
    _write_text(out / f"{stem}.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _write_text(out / "timings.json", json.dumps(report.timings, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run directory layout


def save_run(fitted: FittedPipeline, out: Path | None = None) -> Path:
    out = Path(out or fitted.config.out)
    for sub in ("kernels", "masks", "entropy"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    _write_text(out / "config.ini", dump_config(replace(fitted.config, out=out.resolve())))
    for i, k in enumerate(fitted.cascade.kernels, start=1):
        save_kernels(out / "kernels" / f"stage_{i}.saak", k)
    for i, m in enumerate(fitted.masks, start=1):
        selection.save_mask(out / "masks" / f"stage_{i}.mask", m)
    for i, em in enumerate(fitted.entropy, start=1):
        dataset_io.save_tensor(out / "entropy" / f"stage_{i}.saak", em.values)
    if hasattr(fitted.model, "parameters"):
        classifier.save_model(out / "model.saak", fitted.model)
    dataset_io.write_meta(
        out / "run.meta",
        "run",
        {"stages": len(fitted.cascade), "image_shape": list(fitted.image_shape), "backend": _backend.BACKEND},
    )
    return out


def load_cascade(out: Path, configs) -> SaakCascade:
    kernels = []
    for i in range(1, len(configs) + 1):
        kernels.append(load_kernels(Path(out) / "kernels" / f"stage_{i}.saak"))
    return SaakCascade(tuple(zip(configs, kernels)))


def load_run(out) -> FittedPipeline:
    out = Path(out)
    cfg = load_config(out / "config.ini")
    meta = dataset_io.read_meta(out / "run.meta", "run")
    cascade = load_cascade(out, cfg.stages)
    masks = [selection.load_mask(out / "masks" / f"stage_{i}.mask") for i in range(1, len(cfg.stages) + 1)]
    model = classifier.load_model(out / "model.saak")
    shape = tuple(dataset_io.parse_ints(meta["image_shape"]))
    return FittedPipeline(cfg, cascade, masks, model, shape)


# ---------------------------------------------------------------------------
# experiments


def run_classification(cfg: ExperimentConfig, estimator=None, save: bool = True) -> ExperimentReport:
    """Fit on the training subset, persist artifacts, then (and only then)
    load and score the test subset."""
    timings = {}
    t0 = time.perf_counter()
    train = load_subset(cfg, "train")
    timings["load_train"] = time.perf_counter() - t0
    log.info("train subset %s", train.shape)
    fitted = fit_pipeline(cfg, train, estimator, timings)
    sealed = fitted.fingerprint()
    if save:
        save_run(fitted, cfg.out)

    t0 = time.perf_counter()
    test = load_subset(cfg, "test")
    acc = evaluate_pipeline(fitted, test)
    timings["evaluate"] = time.perf_counter() - t0
    # test data must not have touched any fitted artifact
    assert fitted.fingerprint() == sealed, "leakage guard: fitted artifacts changed during evaluation"

    shapes = fitted.cascade.output_shapes(*train.shape[1:3])
    report = ExperimentReport(
        dataset=cfg.dataset,
        backend=_backend.BACKEND,
        seed=cfg.seed,
        train_size=len(train),
        test_size=len(test),
        image_shape=tuple(train.shape[1:]),
        stage_shapes=[list(s) for s in shapes],
        retained=[k.retained for k in fitted.cascade.kernels],
        selected=[m.feature_count for m in fitted.masks],
        classifier=cfg.classifier if estimator is None else type(estimator).__name__,
        feature_count=sum(
            m.feature_count for m in (fitted.masks if cfg.scope == "concat" else fitted.masks[-1:])
        ),
        train_accuracy=fitted.train_accuracy,
        test_accuracy=acc,
        timings=timings,
    )
    if save:
        write_report(cfg.out, report)
    return report


@dataclass
class StabilityReport:
    reference_size: int
    sizes: list
    similarity: dict  # size -> per-stage mean |cos|
    final_mean: dict  # size -> mean of final-stage coefficients on the probe set
    final_var: dict

    def render(self) -> str:
        n_stages = len(next(iter(self.similarity.values()))) if self.similarity else 0
        head = "size     " + "  ".join(f"stage {i:<3}" for i in range(1, n_stages + 1))
        lines = [f"kernel stability vs {self.reference_size} images (mean |cos|)", head]
        for s in self.sizes:
            lines.append(f"{s:<8} " + "  ".join(f"{v:.6f} " for v in self.similarity[s]))
        lines.append("final-stage coefficients on probe set: size, mean, variance")
        for s in self.sizes:
            lines.append(f"{s:<8} {self.final_mean[s]:.6f} {self.final_var[s]:.6f}")
        return "\n".join(lines) + "\n"


def _match_retained(configs, cascade: SaakCascade):
    return [
        replace(c, truncation="top", top_k=k.retained) for c, k in zip(configs, cascade.kernels)
    ]


def run_stability(cfg: ExperimentConfig, subset_sizes, probe_size: int = 500, save: bool = True) -> StabilityReport:
    """Fit the cascade on stratified subsets and compare every stage's
    kernels with those fitted on the reference (full) training set.  Subsets
    keep the reference's per-stage kernel counts so bases are comparable."""
    full = load_subset(cfg, "train")
    _check_images(cfg, full)
    for s in subset_sizes:
        if s > len(full):
            raise ConfigError(f"subset of {s} exceeds the {len(full)} training images")
    ref = fit_cascade(full, cfg.stages)
    matched = _match_retained(cfg.stages, ref)
    probe = full.subset(stratified_indices(full.labels, min(probe_size, len(full)), rng_for(cfg.seed, "probe"), full.class_count))
    out = Path(cfg.out) / "stability"
    if save:
        (out / "reference").mkdir(parents=True, exist_ok=True)
        for i, k in enumerate(ref.kernels, start=1):
            save_kernels(out / "reference" / f"stage_{i}.saak", k)
    sim, mean, var = {}, {}, {}
    for s in subset_sizes:
        idx = stratified_indices(full.labels, s, rng_for(cfg.seed, "stability", s), full.class_count)
        casc = ref if s == len(full) else fit_cascade(full.subset(idx), matched)
        sim[s] = [kernel_cosine_similarity(a, b).mean for a, b in zip(casc.kernels, ref.kernels)]
        last = forward_cascade(probe, casc)[-1].astype(np.float64)
        mean[s], var[s] = float(last.mean()), float(last.var())
        if save:
            d = out / f"subset_{s}"
            d.mkdir(parents=True, exist_ok=True)
            for i, k in enumerate(casc.kernels, start=1):
                save_kernels(d / f"stage_{i}.saak", k)
    report = StabilityReport(len(full), list(subset_sizes), sim, mean, var)
    if save:
        _write_text(out / "stability.txt", report.render())
        _write_text(
            out / "stability.json",
            json.dumps(
                {
                    "reference_size": report.reference_size,
                    "sizes": report.sizes,
                    "similarity": {str(k): v for k, v in sim.items()},
                    "final_mean": {str(k): v for k, v in mean.items()},
                    "final_var": {str(k): v for k, v in var.items()},
                },
                indent=2,
            )
            + "\n",
        )
    return report


@dataclass
class AdversarialReport:
    clean_accuracy: float
    attacked_accuracy: float
    rmse: list  # per stage, per channel
    normalized_rmse: list
    degenerate: list

    def render(self) -> str:
        lines = [
            "evaluation on attacked images (kernels, masks and classifier from the clean run)",
            f"clean accuracy    {self.clean_accuracy:.4f}",
            f"attacked accuracy {self.attacked_accuracy:.4f}",
        ]
        for i, (r, n) in enumerate(zip(self.rmse, self.normalized_rmse), start=1):
            lines.append(f"stage {i} max rmse {max(r):.6f}, max normalized rmse {max(n):.6f}")
        return "\n".join(lines) + "\n"


def run_adversarial_eval(fitted: FittedPipeline | str | Path, attacked_tensor_path, out=None) -> AdversarialReport:
    """Score attacked copies of the clean test subset (same order, same
    dims) with the clean-fitted pipeline and compare Saak coefficients."""
    if not isinstance(fitted, FittedPipeline):
        fitted = load_run(fitted)
    cfg = fitted.config
    clean = load_subset(cfg, "test")
    attacked_data = dataset_io.load_tensor(attacked_tensor_path)
    if attacked_data.shape != clean.data.shape:
        raise DomainError(
            f"{attacked_tensor_path}: attacked tensor {attacked_data.shape} != clean test set {clean.data.shape}"
        )
    attacked = ImageSet(attacked_data, clean.labels, clean.class_count)
    sealed = fitted.fingerprint()
    clean_feats = fitted.stage_features(clean)
    adv_feats = fitted.stage_features(attacked)
    clean_acc = float((np.asarray(fitted.model.predict(fitted.pack(clean_feats))) == clean.labels).mean())
    adv_acc = float((np.asarray(fitted.model.predict(fitted.pack(adv_feats))) == clean.labels).mean())
    assert fitted.fingerprint() == sealed, "leakage guard: fitted artifacts changed during evaluation"
    rm, nrm, deg = [], [], []
    for c, a in zip(clean_feats, adv_feats):
        rm.append(rmse_per_spectral(c, a).values.tolist())
        n = rmse_per_spectral(c, a, normalize=True)
        nrm.append(n.values.tolist())
        deg.append([int(v) for v in n.degenerate])
    report = AdversarialReport(clean_acc, adv_acc, rm, nrm, deg)
    out = Path(out) if out is not None else Path(cfg.out) / "adversarial"
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.txt", report.render())
    _write_text(out / "report.json", json.dumps(asdict(report), indent=2) + "\n")
    for i, (c, a) in enumerate(zip(clean_feats, adv_feats), start=1):
        rows = ["channel rmse normalized_rmse degenerate"]
        for ch in range(c.shape[3]):
            rows.append(f"{ch} {rm[i - 1][ch]!r} {nrm[i - 1][ch]!r} {deg[i - 1][ch]}")
        _write_text(out / f"rmse_stage_{i}.txt", "\n".join(rows) + "\n")
        diff = np.abs(c.astype(np.float64) - a).mean(axis=(0, 3))
        dataset_io.export_heatmap(diff, out / f"diff_stage_{i}.png")
    return report
