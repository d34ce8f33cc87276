"""Experiment runners behind the ``bnn`` command line.

Every run is fully determined by its :class:`ExperimentConfig`. Random
streams are children of ``Rng(config.seed)``:

====== =====================================================
index  use
====== =====================================================
0      dataset generation, subsetting and validation split
1      weight initialisation
2      training (minibatch order and training masks)
3      MC evaluation; repeat ``r`` uses ``spawn(3).spawn(r)``
4      test-set noise; grid level ``i`` uses ``spawn(4).spawn(i)``
5      boundary-grid MC predictions
====== =====================================================

Output directory layout (all files rewritten on every run)::

    config.json          resolved configuration
    checkpoint.json      trained parameters            (train)
    train_log.csv        per-epoch loss / val error    (train, boundary)
    metrics.json         error + calibration           (eval, boundary)
    curve_mc.csv, curve_meanfield.csv                  (eval)
    noise_sweep.csv                                    (noise-sweep)
    p_sweep.csv, p_sweep_log_<i>.csv                   (p-sweep)
    boundary_data.csv, boundary_grid.csv, boundary_samples.csv   (boundary)

CSV files start with one ``#`` comment line carrying the package version,
a hash of the configuration and the seed, followed by a header row.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import layers as L
from .data import Dataset, add_gaussian_noise, gen_two_gaussians, load_mnist, random_subset, split_validation
from .errors import ConfigError, DataError
from .inference import mc_sample_probs, predict_mc, predict_meanfield
from .masks import MaskKind, MaskSpec
from .metrics import calibration_curve, calibration_mse, classification_error
from .network import (
    BOUNDARY_INPUT_SHAPE,
    MNIST_INPUT_SHAPE,
    TrainConfig,
    boundary_net,
    init_params,
    load_checkpoint,
    mnist_cnn,
    save_checkpoint,
    train,
)
from .tensor import Rng

log = logging.getLogger(__name__)

EXPERIMENTS = ("boundary", "train", "eval", "noise-sweep", "p-sweep")
MNIST_NOISE_GRID = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
CIFAR_NOISE_GRID = [0.0, 0.25, 0.5, 0.75, 1.0]

STREAM_DATA, STREAM_INIT, STREAM_TRAIN, STREAM_EVAL, STREAM_NOISE, STREAM_BOUNDARY = range(6)


_SOURCE_DEFAULTS = {
    "two_gaussians": {
        "source": "two_gaussians",
        "mean0": [-2.0, 0.0],
        "mean1": [2.0, 0.0],
        "cov0": [[1.0, 0.0], [0.0, 1.0]],
        "cov1": [[1.0, 0.0], [0.0, 1.0]],
        "n_per_class": 100,
        "n_test_per_class": 100,
    },
    "mnist": {
        "source": "mnist",
        "mnist_dir": "data/mnist",
        "train_subset": 10000,
        "val_size": 10000,
        "val_subset": 2000,
        "test_subset": None,
    },
}

# Per-experiment defaults; a config file's sections are merged over these.
# boundary: plain SGD at a small step; momentum 0.9 at lr 0.05 lets the
# two noisy linear layers of the Gaussian kinds run away.
_BOUNDARY_DEFAULTS = {
    "architecture": {"name": "boundary", "hidden": 5},
    "data": {"source": "two_gaussians"},
    "train": {"lr": 0.01, "momentum": 0.0, "batch_size": 20, "epochs": 200, "l2": 1e-5},
    "mc_samples": 100,
}
_MNIST_DEFAULTS = {
    "architecture": {"name": "mnist", "conv1": 32, "conv2": 64, "hidden": 1024},
    "data": {"source": "mnist"},
    "train": {"lr": 0.01, "momentum": 0.9, "batch_size": 32, "epochs": 10, "l2": 1e-5},
    "mc_samples": 10,
}

# (p, p_dc) used when a mask kind is chosen without explicit probabilities
BOUNDARY_P = {"p": 0.4, "p_dc": 0.2}
MNIST_P = {
    MaskKind.BERNOULLI_DROPCONNECT: (0.1, 0.0),
    MaskKind.GAUSSIAN_DROPCONNECT: (0.1, 0.0),
    MaskKind.BERNOULLI_DROPOUT: (0.1, 0.0),
    MaskKind.GAUSSIAN_DROPOUT: (0.1, 0.0),
    MaskKind.SPIKE_SLAB_DROPOUT: (0.1, 0.1),
}


def read_config_file(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    return d


def experiment_defaults(experiment: str) -> dict:
    base = _BOUNDARY_DEFAULTS if experiment == "boundary" else _MNIST_DEFAULTS
    return copy.deepcopy(base)


def default_mask(experiment: str, kind) -> MaskSpec:
    """Mask with the default probabilities of ``kind`` for ``experiment``."""
    kind = MaskKind(kind) if not isinstance(kind, MaskKind) else kind
    if kind is MaskKind.MAP:
        return MaskSpec()
    if experiment == "boundary":
        p, p_dc = BOUNDARY_P["p"], BOUNDARY_P["p_dc"]
    else:
        p, p_dc = MNIST_P[kind]
    return MaskSpec(kind, p, p_dc if kind is MaskKind.SPIKE_SLAB_DROPOUT else 0.0)


def _merge_named(default: dict, given: dict | None, key: str) -> dict:
    """Overlay ``given`` on ``default`` when both name the same variant."""
    if not given:
        return dict(default)
    if given.get(key, default.get(key)) == default.get(key):
        return {**default, **given}
    return dict(given)


@dataclass
class ExperimentConfig:
    experiment: str = "train"
    seed: int = 0
    out: str = "runs/default"
    mask: MaskSpec = field(default_factory=MaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    architecture: dict = field(default_factory=lambda: dict(_MNIST_DEFAULTS["architecture"]))
    data: dict = field(default_factory=lambda: dict(_MNIST_DEFAULTS["data"]))
    mc_samples: int = 10
    eval_repeats: int = 5
    n_bins: int = 10
    noise_grid: list = field(default_factory=lambda: list(MNIST_NOISE_GRID))
    p_grid: list = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    boundary_grid: dict = field(default_factory=lambda: {"lo": -6.0, "hi": 6.0, "n": 101, "n_sample_grids": 10})
    chunk: int = 500

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.mc_samples < 1 or self.eval_repeats < 1:
            raise ConfigError("mc_samples and eval_repeats must be >= 1")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be >= 2")
        if not self.noise_grid or any(s < 0 for s in self.noise_grid):
            raise ConfigError("noise_grid must be a non-empty list of non-negative stds")
        if not self.p_grid or any(not 0 <= p < 1 for p in self.p_grid):
            raise ConfigError("p_grid must be a non-empty list of values in [0, 1)")
        source = self.data.get("source")
        if source not in _SOURCE_DEFAULTS:
            raise ConfigError(f"unknown data source {source!r}; expected two_gaussians or mnist")
        self.data = {**_SOURCE_DEFAULTS[source], **self.data}
        self.train.seed = self.seed

    # -- (de)serialisation ----------------------------------------------------

    def to_dict(self, include_out: bool = True) -> dict:
        d = {
            "experiment": self.experiment,
            "seed": self.seed,
            "mask": self.mask.to_dict(),
            "train": self.train.to_dict(),
            "architecture": self.architecture,
            "data": self.data,
            "mc_samples": self.mc_samples,
            "eval_repeats": self.eval_repeats,
            "n_bins": self.n_bins,
            "noise_grid": self.noise_grid,
            "p_grid": self.p_grid,
            "boundary_grid": self.boundary_grid,
            "chunk": self.chunk,
        }
        if include_out:
            d["out"] = self.out
        return copy.deepcopy(d)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        """Build from a (possibly partial) dict layered over the experiment's defaults."""
        d = copy.deepcopy(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        defaults = experiment_defaults(d.get("experiment", "train"))
        d["architecture"] = _merge_named(defaults["architecture"], d.get("architecture"), "name")
        d["data"] = _merge_named(defaults["data"], d.get("data"), "source")
        d["train"] = {**defaults["train"], **d.get("train", {})}
        d.setdefault("mc_samples", defaults["mc_samples"])
        try:
            if "mask" in d:
                d["mask"] = MaskSpec.from_dict(d["mask"])
            if "train" in d:
                d["train"] = TrainConfig.from_dict(d["train"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def default(cls, experiment: str) -> ExperimentConfig:
        return cls.from_dict({"experiment": experiment})

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(read_config_file(path))

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(include_out=False), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def stamp(self) -> str:
        return f"bnn {__version__} config_hash={self.config_hash()} seed={self.seed}"

    def rng(self, stream: int) -> Rng:
        return Rng(self.seed).spawn(stream)


# -- helpers -----------------------------------------------------------------

def build_architecture(arch: dict):
    arch = dict(arch)
    name = arch.pop("name", None)
    if name == "mnist":
        return mnist_cnn(**arch), MNIST_INPUT_SHAPE
    if name == "boundary":
        return boundary_net(**arch), BOUNDARY_INPUT_SHAPE
    if name == "custom":
        try:
            layers = [L.layer_from_dict(d) for d in arch["layers"]]
            input_shape = tuple(arch["input_shape"])
        except KeyError as exc:
            raise ConfigError(f"custom architecture needs {exc}") from None
        L.output_shape(layers, input_shape)
        return layers, input_shape
    raise ConfigError(f"unknown architecture {name!r}; expected mnist, boundary or custom")


@dataclass
class Splits:
    train: Dataset
    val: Dataset | None
    test: Dataset


def load_data(cfg: ExperimentConfig) -> Splits:
    data = cfg.data
    rng = cfg.rng(STREAM_DATA)
    source = data.get("source")
    if source == "two_gaussians":
        try:
            train_set = gen_two_gaussians(data["mean0"], data["mean1"], data["cov0"], data["cov1"],
                                          int(data["n_per_class"]), rng.spawn(0))
            test = gen_two_gaussians(data["mean0"], data["mean1"], data["cov0"], data["cov1"],
                                     int(data.get("n_test_per_class", data["n_per_class"])), rng.spawn(1))
        except KeyError as exc:
            raise ConfigError(f"two_gaussians data needs {exc}") from None
        test.split = "test"
        return Splits(train_set, None, test)
    if source == "mnist":
        full = load_mnist(data["mnist_dir"], "train")
        test = load_mnist(data["mnist_dir"], "test")
        val_size = int(data["val_size"])
        if val_size:
            train_set, val = split_validation(full, val_size, rng.spawn(0))
            val = random_subset(val, data.get("val_subset"), rng.spawn(2))
        else:
            train_set, val = full, None
        train_set = random_subset(train_set, data.get("train_subset"), rng.spawn(1))
        test = random_subset(test, data.get("test_subset"), rng.spawn(3))
        return Splits(train_set, val, test)
    raise ConfigError(f"unknown data source {source!r}; expected two_gaussians or mnist")


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(include_out=False), sort_keys=True, indent=2) + "\n")
    return out


def _write_csv(path: Path, cfg: ExperimentConfig, header, rows) -> None:
    buf = io.StringIO()
    buf.write(f"# {cfg.stamp()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


def _write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"bnn_version": __version__, "config_hash": cfg.config_hash(), "seed": cfg.seed, **payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _log_rows(history):
    return [(r.epoch, r.mean_loss, "" if r.val_error is None else r.val_error, r.lr) for r in history]


LOG_HEADER = ["epoch", "mean_loss", "val_error", "lr"]


def _train_network(cfg: ExperimentConfig, spec: MaskSpec, splits: Splits):
    layers, input_shape = build_architecture(cfg.architecture)
    params = init_params(layers, input_shape, cfg.rng(STREAM_INIT))
    params, history = train(params, layers, splits.train, spec, cfg.train, val=splits.val,
                            keep_best=splits.val is not None, rng=cfg.rng(STREAM_TRAIN))
    return layers, input_shape, params, history


def evaluate(params, layers, spec: MaskSpec, test: Dataset, cfg: ExperimentConfig, repeats: int | None = None) -> dict:
    """Error and calibration for mean-field and MC inference on one test set."""
    repeats = cfg.eval_repeats if repeats is None else repeats
    mf = predict_meanfield(params, layers, test.inputs, spec, cfg.chunk)
    mf_curve = calibration_curve(mf.mean_probs, test.labels, cfg.n_bins)
    mc_errors, mc_mses, mc_curve = [], [], None
    eval_rng = cfg.rng(STREAM_EVAL)
    for r in range(repeats):
        pb = predict_mc(params, layers, test.inputs, spec, cfg.mc_samples, eval_rng.spawn(r), cfg.chunk)
        curve = calibration_curve(pb.mean_probs, test.labels, cfg.n_bins)
        mc_errors.append(classification_error(pb.mean_probs, test.labels))
        mc_mses.append(calibration_mse(curve))
        if mc_curve is None:
            mc_curve = curve
    errs = np.asarray(mc_errors)
    return {
        "meanfield": {
            "error": classification_error(mf.mean_probs, test.labels),
            "calibration_mse": calibration_mse(mf_curve),
        },
        "mc": {
            "n_samples": cfg.mc_samples,
            "repeats": repeats,
            "errors": mc_errors,
            "error_mean": float(errs.mean()),
            # sample std across repeats, as reported alongside mean test error
            "error_std": float(errs.std(ddof=1)) if repeats > 1 else 0.0,
            "calibration_mses": mc_mses,
            "calibration_mse": float(np.mean(mc_mses)),
        },
        "_curves": {"meanfield": mf_curve, "mc": mc_curve},
    }


def _strip_curves(metrics: dict) -> dict:
    return {k: v for k, v in metrics.items() if not k.startswith("_")}


# -- runners -----------------------------------------------------------------

def run_train(cfg: ExperimentConfig) -> dict:
    out = _prepare_out(cfg)
    splits = load_data(cfg)
    layers, input_shape, params, history = _train_network(cfg, cfg.mask, splits)
    save_checkpoint(out / "checkpoint.json", params, layers, input_shape, cfg.mask, cfg.seed,
                    extra={"config_hash": cfg.config_hash()})
    _write_csv(out / "train_log.csv", cfg, LOG_HEADER, _log_rows(history))
    return {"history": history, "params": params, "layers": layers}


def _load_compatible(cfg: ExperimentConfig, checkpoint):
    ckpt = load_checkpoint(checkpoint)
    layers, input_shape = build_architecture(cfg.architecture)
    if ckpt.layers != layers or tuple(ckpt.input_shape) != tuple(input_shape):
        raise ConfigError(f"checkpoint {checkpoint} does not match the configured architecture")
    return ckpt


def run_eval(cfg: ExperimentConfig, checkpoint) -> dict:
    """Metrics for mean-field and MC inference (``eval_repeats`` MC seeds)."""
    out = _prepare_out(cfg)
    ckpt = _load_compatible(cfg, checkpoint)
    spec = ckpt.mask_spec
    test = load_data(cfg).test
    metrics = evaluate(ckpt.params, ckpt.layers, spec, test, cfg)
    curves = metrics["_curves"]
    (out / "curve_meanfield.csv").write_text(curves["meanfield"].to_csv(cfg.stamp()))
    (out / "curve_mc.csv").write_text(curves["mc"].to_csv(cfg.stamp()))
    result = {"mask_spec": spec.to_dict(), "n_test": len(test), **_strip_curves(metrics)}
    _write_json(out / "metrics.json", cfg, result)
    return result


NOISE_HEADER = ["noise_std", "mode", "n_samples", "error", "error_std", "calibration_mse"]


def run_noise_sweep(cfg: ExperimentConfig, checkpoint) -> list[dict]:
    out = _prepare_out(cfg)
    ckpt = _load_compatible(cfg, checkpoint)
    spec = ckpt.mask_spec
    test = load_data(cfg).test
    noise_rng = cfg.rng(STREAM_NOISE)
    rows = []
    for i, std in enumerate(cfg.noise_grid):
        noisy = add_gaussian_noise(test, float(std), noise_rng.spawn(i))
        m = evaluate(ckpt.params, ckpt.layers, spec, noisy, cfg)
        rows.append({"noise_std": float(std), "mode": "mc", "n_samples": cfg.mc_samples,
                     "error": m["mc"]["error_mean"], "error_std": m["mc"]["error_std"],
                     "calibration_mse": m["mc"]["calibration_mse"]})
        rows.append({"noise_std": float(std), "mode": "meanfield", "n_samples": 1,
                     "error": m["meanfield"]["error"], "error_std": 0.0,
                     "calibration_mse": m["meanfield"]["calibration_mse"]})
        log.info("noise std %g: mc error %.4f mse %.5f | mf error %.4f mse %.5f", std, rows[-2]["error"],
                 rows[-2]["calibration_mse"], rows[-1]["error"], rows[-1]["calibration_mse"])
    _write_csv(out / "noise_sweep.csv", cfg, NOISE_HEADER, [[r[h] for h in NOISE_HEADER] for r in rows])
    return rows


P_SWEEP_HEADER = ["p", "p_dc", "mode", "error", "calibration_mse"]


def run_p_sweep(cfg: ExperimentConfig) -> list[dict]:
    """One network per ``p`` (p_do for spike-and-slab, p_dc held fixed)."""
    out = _prepare_out(cfg)
    splits = load_data(cfg)
    rows = []
    for i, p in enumerate(cfg.p_grid):
        spec = cfg.mask.with_p(float(p))
        layers, _, params, history = _train_network(cfg, spec, splits)
        _write_csv(out / f"p_sweep_log_{i}.csv", cfg, LOG_HEADER, _log_rows(history))
        m = evaluate(params, layers, spec, splits.test, cfg, repeats=1)
        for mode in ("mc", "meanfield"):
            rows.append({"p": float(p), "p_dc": spec.p_dc, "mode": mode, "error": m[mode]["error_mean" if mode == "mc" else "error"],
                         "calibration_mse": m[mode]["calibration_mse"]})
    _write_csv(out / "p_sweep.csv", cfg, P_SWEEP_HEADER, [[r[h] for h in P_SWEEP_HEADER] for r in rows])
    return rows


def boundary_regions(points, mean0, mean1, far: float = 4.0, near: float = 1.0):
    """Masks for grid points far from both class means and near the segment joining them."""
    a = np.asarray(mean0, dtype=np.float64)
    b = np.asarray(mean1, dtype=np.float64)
    d0 = np.linalg.norm(points - a, axis=1)
    d1 = np.linalg.norm(points - b, axis=1)
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    dseg = np.linalg.norm(points - (a + t[:, None] * ab), axis=1)
    return (d0 > far) & (d1 > far), dseg <= near


def run_boundary(cfg: ExperimentConfig) -> dict:
    """Train on two 2-D Gaussians and map predictive mean/spread over a grid."""
    if cfg.data.get("source") != "two_gaussians":
        raise ConfigError("boundary experiment needs the two_gaussians data source")
    out = _prepare_out(cfg)
    splits = load_data(cfg)
    spec = cfg.mask
    layers, _, params, history = _train_network(cfg, spec, splits)
    _write_csv(out / "train_log.csv", cfg, LOG_HEADER, _log_rows(history))
    (out / "boundary_data.csv").write_text(splits.train.to_csv(cfg.stamp()))

    g = cfg.boundary_grid
    axis = np.linspace(float(g["lo"]), float(g["hi"]), int(g["n"]))
    gx, gy = np.meshgrid(axis, axis, indexing="xy")
    points = np.column_stack([gx.ravel(), gy.ravel()])
    rng = cfg.rng(STREAM_BOUNDARY)
    mc = predict_mc(params, layers, points, spec, cfg.mc_samples, rng, cfg.chunk)
    mf = predict_meanfield(params, layers, points, spec, cfg.chunk)
    _write_csv(out / "boundary_grid.csv", cfg, ["x1", "x2", "mc_mean_p1", "mc_std_p1", "meanfield_p1"],
               zip(points[:, 0].tolist(), points[:, 1].tolist(), mc.mean_probs[:, 1].tolist(),
                   mc.std_probs[:, 1].tolist(), mf.mean_probs[:, 1].tolist()))

    k = min(int(g.get("n_sample_grids", 10)), cfg.mc_samples)
    if spec.kind is MaskKind.MAP:
        samples = [mf.mean_probs[:, 1]] * k
    else:
        samples = [pr[:, 1] for pr in mc_sample_probs(params, layers, points, spec, k, rng, cfg.chunk)]
    _write_csv(out / "boundary_samples.csv", cfg, ["x1", "x2", *(f"sample_{i}" for i in range(k))],
               zip(points[:, 0].tolist(), points[:, 1].tolist(), *(s.tolist() for s in samples)))

    far, near = boundary_regions(points, cfg.data["mean0"], cfg.data["mean1"])
    train_probs = predict_meanfield(params, layers, splits.train.inputs, spec).mean_probs
    test_mc = predict_mc(params, layers, splits.test.inputs, spec, cfg.mc_samples, rng.spawn(10**6), cfg.chunk)
    summary = {
        "mask_spec": spec.to_dict(),
        "train_error_meanfield": classification_error(train_probs, splits.train.labels),
        "test_error_mc": classification_error(test_mc.mean_probs, splits.test.labels),
        "far_region_points": int(far.sum()),
        "near_region_points": int(near.sum()),
        "far_region_mean_std": float(mc.std_probs[far, 1].mean()),
        "near_region_mean_std": float(mc.std_probs[near, 1].mean()),
        "max_abs_mc_minus_meanfield": float(np.abs(mc.mean_probs[:, 1] - mf.mean_probs[:, 1]).max()),
    }
    _write_json(out / "metrics.json", cfg, summary)
    return summary


def run(cfg: ExperimentConfig, checkpoint=None):
    if cfg.experiment == "boundary":
        return run_boundary(cfg)
    if cfg.experiment == "train":
        return run_train(cfg)
    if cfg.experiment == "p-sweep":
        return run_p_sweep(cfg)
    checkpoint = checkpoint or Path(cfg.out) / "checkpoint.json"
    if not Path(checkpoint).exists():
        raise DataError(f"checkpoint not found: {checkpoint}")
    if cfg.experiment == "eval":
        return run_eval(cfg, checkpoint)
    return run_noise_sweep(cfg, checkpoint)
