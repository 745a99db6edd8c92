"""Experiment configs and drivers writing plot-ready CSV files.

Configs are INI files (``configparser``) with the sections below; every key
is optional and falls back to the default shown by ``ExperimentConfig()``::

    [experiment]   kind, seed, name
    [dataset]      source, n, d, data_seed, path, target, standardize, split
    [kernel]       family, ard, rq_alpha, outputscale, lengthscale, noise,
                   truth_outputscale, truth_lengthscale, truth_noise
    [preconditioner] kind, ranks, kinds
    [probes]       counts, repetitions, seed, share
    [solver]       max_iters, rel_tol
    [optimizer]    method, max_steps, memory, patience, runs, n_probes, include_exact
    [quality]      kernels, seeds

Lists are comma separated. ``ranks = matched`` pairs each probe count with a
preconditioner of the same rank. ``standardize = auto`` standardizes CSV
data and leaves synthetic data on its generating scale.
"""

import configparser
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .data import Dataset, gen_synthetic, load_csv, make_splits, write_dataset_csv
from .exceptions import InputError, NumericalError
from .kernels import Hyperparameters, KernelOperator, KernelSpec, kernel_block
from .krylov import CgConfig, batched_pcg
from .likelihood import backward_probes, evaluate_mll, mll_exact_op
from .optimizer import OptConfig, count_model_evaluations, optimize
from .oracle import DENSE_LIMIT, dense_matrix_function, dense_matrix_log
from .preconditioners import KINDS, build_preconditioner
from .predictive import gaussian_nlpd, rmse
from .trace_estimation import make_probes

logger = logging.getLogger(__name__)

EXPERIMENTS = ("bias_variance", "quality_curves", "training", "synth")
SCHEMA_VERSION = 1


def _fmt_list(values):
    return ", ".join(str(v) for v in values)


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# type tag -> (parse, format)
_CODECS = {
    "int": (int, str),
    "float": (float, repr),
    "str": (str.strip, str),
    "bool": (_parse_bool, lambda v: "true" if v else "false"),
    "auto_bool": (lambda t: None if t.strip().lower() == "auto" else _parse_bool(t),
                  lambda v: "auto" if v is None else ("true" if v else "false")),
    "ints": (lambda t: tuple(int(v) for v in _split_list(t)), _fmt_list),
    "floats": (lambda t: tuple(float(v) for v in _split_list(t)), lambda v: _fmt_list(repr(x) for x in v)),
    "strs": (lambda t: tuple(_split_list(t)), _fmt_list),
    "ranks": (lambda t: None if t.strip().lower() == "matched" else tuple(int(v) for v in _split_list(t)),
              lambda v: "matched" if v is None else _fmt_list(v)),
}


def _f(section, key, kind, default):
    return dataclasses.field(default=default, metadata={"section": section, "key": key, "kind": kind})


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs; see the module docstring for the file layout."""

    experiment: str = _f("experiment", "kind", "str", "bias_variance")
    seed: int = _f("experiment", "seed", "int", 0)
    name: str = _f("experiment", "name", "str", "")

    source: str = _f("dataset", "source", "str", "synthetic")
    n: int = _f("dataset", "n", "int", 500)
    d: int = _f("dataset", "d", "int", 1)
    data_seed: int = _f("dataset", "data_seed", "int", 0)
    path: str = _f("dataset", "path", "str", "")
    target: str = _f("dataset", "target", "str", "y")
    standardize: bool = _f("dataset", "standardize", "auto_bool", None)
    split: tuple = _f("dataset", "split", "floats", (0.64, 0.16, 0.20))

    family: str = _f("kernel", "family", "str", "rbf")
    ard: bool = _f("kernel", "ard", "bool", True)
    rq_alpha: float = _f("kernel", "rq_alpha", "float", 1.0)
    outputscale: float = _f("kernel", "outputscale", "float", 1.0)
    lengthscale: float = _f("kernel", "lengthscale", "float", 0.5)
    noise: float = _f("kernel", "noise", "float", 1e-2)
    truth_outputscale: float = _f("kernel", "truth_outputscale", "float", 1.0)
    truth_lengthscale: float = _f("kernel", "truth_lengthscale", "float", 0.5)
    truth_noise: float = _f("kernel", "truth_noise", "float", 1e-2)

    kind: str = _f("preconditioner", "kind", "str", "cholesky")
    ranks: tuple = _f("preconditioner", "ranks", "ranks", None)
    kinds: tuple = _f("preconditioner", "kinds", "strs", ("cholesky", "svd", "nystroem", "rff"))

    probe_counts: tuple = _f("probes", "counts", "ints", (4, 8, 16, 32, 64, 128))
    repetitions: int = _f("probes", "repetitions", "int", 25)
    probe_seed: int = _f("probes", "seed", "int", 0)
    share_probes: bool = _f("probes", "share", "bool", True)

    cg_max_iters: int = _f("solver", "max_iters", "int", 1000)
    cg_rel_tol: float = _f("solver", "rel_tol", "float", 1e-6)

    method: str = _f("optimizer", "method", "str", "lbfgs")
    max_steps: int = _f("optimizer", "max_steps", "int", 20)
    lbfgs_memory: int = _f("optimizer", "memory", "int", 10)
    patience: int = _f("optimizer", "patience", "int", 5)
    runs: int = _f("optimizer", "runs", "int", 1)
    n_probes: int = _f("optimizer", "n_probes", "int", 16)
    include_exact: bool = _f("optimizer", "include_exact", "bool", False)

    quality_kernels: tuple = _f("quality", "kernels", "strs", ("rbf",))
    quality_seeds: int = _f("quality", "seeds", "int", 5)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise InputError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.source not in ("synthetic", "csv"):
            raise InputError(f"dataset source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not os.path.isfile(self.path):
            raise InputError(f"dataset path {self.path!r} does not exist")
        if self.n < 1 or self.d < 1:
            raise InputError("dataset n and d must be positive")
        if self.repetitions < 1:
            raise InputError("repetitions must be >= 1")
        if self.runs < 1 or self.quality_seeds < 1:
            raise InputError("runs and quality seeds must be >= 1")
        if any(c < 1 for c in self.probe_counts) or not self.probe_counts:
            raise InputError("probe counts must be positive")
        if self.ranks is not None and any(r < 0 for r in self.ranks):
            raise InputError("ranks must be non-negative")
        for k in (self.kind,) + tuple(self.kinds):
            if k not in KINDS:
                raise InputError(f"unknown preconditioner {k!r}; expected one of {KINDS}")
        self.kernel_spec()
        for name in self.quality_kernels:
            KernelSpec.from_name(name, self.ard, self.rq_alpha)
        for v in (self.outputscale, self.lengthscale, self.noise,
                  self.truth_outputscale, self.truth_lengthscale, self.truth_noise):
            if not (np.isfinite(v) and v > 0):
                raise InputError("kernel hyperparameters must be positive and finite")
        self.cg_config()
        self.opt_config()

    def kernel_spec(self):
        return KernelSpec.from_name(self.family, self.ard, self.rq_alpha)

    def _params(self, o, ls, noise, d):
        return Hyperparameters.from_values(o, np.full(self.kernel_spec().n_lengthscales(d), ls), noise)

    def init_params(self, d):
        return self._params(self.outputscale, self.lengthscale, self.noise, d)

    def truth_params(self, d):
        return self._params(self.truth_outputscale, self.truth_lengthscale, self.truth_noise, d)

    def cg_config(self):
        return CgConfig(max_iters=self.cg_max_iters, rel_tol=self.cg_rel_tol)

    def opt_config(self):
        return OptConfig(method=self.method, max_steps=self.max_steps, lbfgs_memory=self.lbfgs_memory,
                         early_stop_patience=self.patience, validation_fraction=self.split[1])

    # -- serialization -------------------------------------------------------

    def to_ini(self):
        cp = configparser.ConfigParser()
        for f in dataclasses.fields(self):
            sec, key, kind = f.metadata["section"], f.metadata["key"], f.metadata["kind"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            cp.set(sec, key, _CODECS[kind][1](getattr(self, f.name)))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text, base_dir=None):
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise InputError(f"malformed config: {exc}") from exc
        by_key = {(f.metadata["section"], f.metadata["key"]): f for f in dataclasses.fields(cls)}
        values = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = by_key.get((sec, key))
                if f is None:
                    raise InputError(f"unknown config key [{sec}] {key}")
                try:
                    values[f.name] = _CODECS[f.metadata["kind"]][0](raw)
                except ValueError as exc:
                    raise InputError(f"bad value for [{sec}] {key}: {raw!r} ({exc})") from exc
        if base_dir and values.get("path") and not os.path.isabs(values["path"]):
            values["path"] = os.path.join(base_dir, values["path"])
        return cls(**values)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, base_dir=os.path.dirname(os.path.abspath(path)))

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# -- output helpers -----------------------------------------------------------


class CsvSink:
    """Row writer with a schema comment line; flushes every row."""

    def __init__(self, path, experiment, columns):
        self.path = path
        self.columns = list(columns)
        self._fh = open(path, "w", newline="")
        self._fh.write(f"# schema: precondgp/{experiment}/v{SCHEMA_VERSION}; columns: {' '.join(self.columns)}\n")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(self.columns)
        self.rows = 0

    def write(self, row):
        out = []
        for c in self.columns:
            v = row[c]
            if isinstance(v, (float, np.floating)):
                if not np.isfinite(v):
                    raise NumericalError(f"non-finite value in column {c!r} of {self.path}")
                v = repr(float(v))
            out.append(v)
        self._writer.writerow(out)
        self._fh.flush()
        self.rows += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_result_csv(path):
    """Parse a CSV written by :class:`CsvSink` into ``(schema_line, rows)``."""
    with open(path, newline="") as fh:
        schema = fh.readline().rstrip("\n")
        rows = list(csv.DictReader(fh))
    return schema, rows


def git_blob_hash(data):
    """Content hash in the style of ``git hash-object``."""
    h = hashlib.sha1()
    h.update(b"blob %d\0" % len(data))
    h.update(data)
    return h.hexdigest()


def write_run_summary(out_dir, cfg, outputs, extra_lines=()):
    lines = [f"precondgp {__version__}", f"experiment: {cfg.experiment}", f"seed: {cfg.seed}"]
    lines.append(f"config hash: {git_blob_hash(cfg.to_ini().encode())}")
    if cfg.source == "csv":
        with open(cfg.path, "rb") as fh:
            lines.append(f"dataset hash: {git_blob_hash(fh.read())} ({cfg.path})")
    lines += list(extra_lines)
    lines.append("outputs:")
    lines += [f"  {os.path.basename(p)}" for p in outputs]
    lines += ["", "config:", cfg.to_ini()]
    path = os.path.join(out_dir, "run_summary.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))
    return path


def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# -- datasets -----------------------------------------------------------------


def load_dataset(cfg):
    """Splits for the configured dataset; synthetic data keeps its ground truth."""
    if cfg.source == "csv":
        standardize = True if cfg.standardize is None else cfg.standardize
        return load_csv(cfg.path, cfg.target, standardize, cfg.split, cfg.seed), None
    ds = synthetic_dataset(cfg)
    standardize = False if cfg.standardize is None else cfg.standardize
    return make_splits(ds.X, ds.y, cfg.split, cfg.seed, standardize), ds


def synthetic_dataset(cfg):
    return gen_synthetic(cfg.n, cfg.d, cfg.data_seed, cfg.kernel_spec(), cfg.truth_params(cfg.d))


def full_dataset(cfg):
    """The whole dataset as one block (no split), for oracle experiments."""
    if cfg.source == "synthetic":
        return synthetic_dataset(cfg)
    splits = load_csv(cfg.path, cfg.target, True if cfg.standardize is None else cfg.standardize,
                      (1.0, 0.0, 0.0), cfg.seed)
    return Dataset(splits.X_train, splits.y_train)


def run_synth(cfg, out_dir):
    ds = synthetic_dataset(cfg)
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "dataset.csv")
    write_dataset_csv(data_path, ds.X, ds.y)
    truth_path = os.path.join(out_dir, "truth.json")
    with open(truth_path, "w") as fh:
        json.dump({"kernel": cfg.kernel_spec().name, "outputscale": ds.truth.outputscale,
                   "lengthscales": ds.truth.lengthscales.tolist(), "noise": ds.truth.noise,
                   "n": ds.n, "d": ds.d, "seed": cfg.data_seed}, fh, indent=2)
    outputs = [data_path, truth_path]
    outputs.append(write_run_summary(out_dir, cfg, outputs))
    return outputs


# -- bias and variance ---------------------------------------------------------


def _dense_op(cfg, ds, params):
    if ds.n > DENSE_LIMIT:
        raise InputError(f"this experiment needs the dense oracle: n={ds.n} exceeds {DENSE_LIMIT}")
    return KernelOperator(cfg.kernel_spec(), ds.X, params, mode="dense")


def run_bias_variance(cfg, out_dir):
    """Repeated estimates of ``L`` and its gradient against the dense oracle.

    Writes ``bias_variance_raw.csv`` (one row per repetition and
    configuration) and ``bias_variance_summary.csv`` (relative bias, sample
    variance and median relative error per probe count, rank and quantity).
    """
    os.makedirs(out_dir, exist_ok=True)
    ds = full_dataset(cfg)
    params = cfg.init_params(ds.d)
    op = _dense_op(cfg, ds, params)
    oracle_value, oracle_grad = mll_exact_op(ds.y, op)
    names = ["value"] + [f"grad_{k}" for k in params.names()]
    oracle = np.concatenate([[oracle_value], oracle_grad])
    cg = cfg.cg_config()

    raw_path = os.path.join(out_dir, "bias_variance_raw.csv")
    sum_path = os.path.join(out_dir, "bias_variance_summary.csv")
    raw_cols = ["probes", "preconditioner", "rank", "repetition", "probe_seed"] + names + ["cg_iterations"]
    sum_cols = ["probes", "preconditioner", "rank", "quantity", "oracle", "mean", "rel_bias",
                "variance", "rel_variance", "median_rel_error"]
    summary = []
    with CsvSink(raw_path, "bias_variance_raw", raw_cols) as raw:
        for count in cfg.probe_counts:
            configs = [("none", 0)]
            if cfg.kind == "exact":
                configs.append(("exact", ds.n))
            elif cfg.kind != "none":
                ranks = (count,) if cfg.ranks is None else cfg.ranks
                configs += [(cfg.kind, r) for r in ranks if r > 0]
            for kind, rank in configs:
                P = build_preconditioner(kind, op, rank, seed=_seed(cfg.seed, count, rank))
                est = np.empty((cfg.repetitions, len(names)))
                for rep in range(cfg.repetitions):
                    s = _seed(cfg.probe_seed, count, rep)
                    batch = make_probes(ds.n, count, s)
                    ev = evaluate_mll(ds.y, op, P, batch, cg,
                                      backward_batch=backward_probes(batch, cfg.share_probes))
                    est[rep] = np.concatenate([[ev.value], ev.gradient])
                    row = dict(zip(names, est[rep]))
                    row.update(probes=count, preconditioner=kind, rank=rank, repetition=rep, probe_seed=s,
                               cg_iterations=ev.max_probe_iterations)
                    raw.write(row)
                mean = est.mean(axis=0)
                var = est.var(axis=0, ddof=1) if cfg.repetitions > 1 else np.zeros(len(names))
                scale = np.abs(oracle)
                for j, q in enumerate(names):
                    summary.append(dict(
                        probes=count, preconditioner=kind, rank=rank, quantity=q, oracle=oracle[j],
                        mean=mean[j], rel_bias=abs(mean[j] - oracle[j]) / scale[j],
                        variance=var[j], rel_variance=var[j] / scale[j] ** 2,
                        median_rel_error=float(np.median(np.abs(est[:, j] - oracle[j]))) / scale[j],
                    ))
    with CsvSink(sum_path, "bias_variance_summary", sum_cols) as out:
        for row in summary:
            out.write(row)
    outputs = [raw_path, sum_path]
    outputs.append(write_run_summary(out_dir, cfg, outputs))
    return outputs


# -- preconditioner quality ----------------------------------------------------


def quality_rows(K_hat, builders, ranks, functions=("log", "inverse")):
    """Relative errors of ``K_hat`` and ``f(K_hat)`` against each preconditioner.

    ``builders`` maps a preconditioner name to ``rank -> preconditioner``.
    Yields dicts with ``rel_frobenius`` and one ``rel_<f>`` column per function.
    """
    fns = {"log": np.log, "inverse": np.reciprocal}
    K_hat = np.asarray(K_hat, dtype=float)
    refs = {f: dense_matrix_log(K_hat) if f == "log" else dense_matrix_function(K_hat, fns[f]) for f in functions}
    norm = np.linalg.norm(K_hat)
    for name, builder in builders.items():
        for r in ranks:
            P = builder(int(r)).dense()
            row = {"preconditioner": name, "rank": int(r), "rel_frobenius": np.linalg.norm(K_hat - P) / norm}
            for f in functions:
                fP = dense_matrix_log(P) if f == "log" else dense_matrix_function(P, fns[f])
                row[f"rel_{f}"] = np.linalg.norm(refs[f] - fP) / np.linalg.norm(refs[f])
            yield row


def _supported(kind, spec, d):
    if kind == "qff":
        return spec.family == "rbf" and d == 1
    if kind == "rff":
        return spec.family in ("rbf", "matern")
    return True


def run_quality_curves(cfg, out_dir):
    """Matrix and matrix-function approximation errors per kernel, builder, rank and seed.

    Each seed draws fresh synthetic inputs (``data_seed + seed``) and fresh
    randomness for the sampling-based builders. Writes ``quality_curves.csv``
    and ``quality_summary.csv`` (medians over seeds).
    """
    os.makedirs(out_dir, exist_ok=True)
    ranks = cfg.ranks if cfg.ranks is not None else (4, 8, 16, 32, 64)
    path = os.path.join(out_dir, "quality_curves.csv")
    sum_path = os.path.join(out_dir, "quality_summary.csv")
    cols = ["kernel", "preconditioner", "rank", "seed", "rel_frobenius", "rel_log", "rel_inverse"]
    collected = {}
    with CsvSink(path, "quality_curves", cols) as out:
        for kname in cfg.quality_kernels:
            spec = KernelSpec.from_name(kname, cfg.ard, cfg.rq_alpha)
            for s in range(cfg.quality_seeds):
                if cfg.source == "synthetic":
                    X = np.random.default_rng(cfg.data_seed + s).standard_normal((cfg.n, cfg.d))
                else:
                    X = full_dataset(cfg).X
                if X.shape[0] > DENSE_LIMIT:
                    raise InputError(f"quality curves need the dense oracle: n={X.shape[0]} exceeds {DENSE_LIMIT}")
                params = Hyperparameters.from_values(
                    cfg.outputscale, np.full(spec.n_lengthscales(X.shape[1]), cfg.lengthscale), cfg.noise)
                op = KernelOperator(spec, X, params)
                builders = {}
                for kind in cfg.kinds:
                    if not _supported(kind, spec, X.shape[1]):
                        logger.warning("skipping %s for kernel %s (d=%d)", kind, spec.name, X.shape[1])
                        continue
                    builders[kind] = (lambda k: lambda r: build_preconditioner(k, op, r, seed=_seed(cfg.seed, s, r)))(kind)
                for row in quality_rows(op.dense(), builders, ranks):
                    row.update(kernel=spec.name, seed=s)
                    out.write(row)
                    collected.setdefault((spec.name, row["preconditioner"], row["rank"]), []).append(row)
    with CsvSink(sum_path, "quality_summary", cols[:3] + ["seeds"] + cols[4:]) as out:
        for (kname, kind, r), rows in collected.items():
            med = {c: float(np.median([row[c] for row in rows])) for c in cols[4:]}
            out.write(dict(kernel=kname, preconditioner=kind, rank=r, seeds=len(rows), **med))
    outputs = [path, sum_path]
    outputs.append(write_run_summary(out_dir, cfg, outputs))
    return outputs


# -- training -----------------------------------------------------------------


def predictive_scores(spec, params, X_train, y_train, X_test, y_test, kind, rank, cg, seed=0):
    """Test RMSE and mean negative log predictive density via preconditioned CG."""
    op = KernelOperator(spec, X_train, params, mode="dense" if X_train.shape[0] <= DENSE_LIMIT else "matrix_free")
    P = build_preconditioner(kind if rank > 0 else "none", op, rank, seed=seed)
    Kx = kernel_block(spec, params, X_test, X_train)
    results = batched_pcg(op, np.column_stack([y_train, Kx.T]), P, cg)
    u = results[0].solution
    V = np.column_stack([r.solution for r in results[1:]])
    mean = Kx @ u
    var = np.maximum(params.outputscale**2 + params.noise - np.einsum("ij,ji->i", Kx, V), params.noise)
    return rmse(y_test, mean), gaussian_nlpd(y_test, mean, var)


def train_objective(spec, params, X, y, seed, n_probes, cg):
    """Final ``-L/n`` on the training split: exact when dense, else estimated."""
    if X.shape[0] <= DENSE_LIMIT:
        value, _ = mll_exact_op(y, KernelOperator(spec, X, params), gradient=False)
        return -value / X.shape[0], "exact"
    op = KernelOperator(spec, X, params, mode="matrix_free")
    P = build_preconditioner("cholesky", op, min(256, X.shape[0]), seed=seed)
    ev = evaluate_mll(y, op, P, make_probes(X.shape[0], max(n_probes, 64), seed), cg, gradient=False)
    return -ev.value / X.shape[0], "estimate"


def run_training(cfg, out_dir):
    """Paired hyperparameter optimization runs, baseline (rank 0) versus preconditioned.

    Both members of a pair share the dataset split and every probe seed.
    Writes ``training.csv``, ``standardization.json`` and ``run_summary.txt``.
    """
    os.makedirs(out_dir, exist_ok=True)
    splits, _ = load_dataset(cfg)
    spec = cfg.kernel_spec()
    d = splits.X_train.shape[1]
    init = cfg.init_params(d)
    rank = (cfg.ranks[-1] if cfg.ranks else 128)
    configs = [("none", 0), (cfg.kind, rank)]
    if cfg.include_exact:
        configs.append(("dense", 0))
    mode = "dense" if splits.X_train.shape[0] <= DENSE_LIMIT else "matrix_free"
    cg, opt = cfg.cg_config(), cfg.opt_config()

    stats_path = os.path.join(out_dir, "standardization.json")
    splits.standardizer.save(stats_path)
    path = os.path.join(out_dir, "training.csv")
    cols = ["run", "configuration", "preconditioner", "rank", "seed", "train_nll", "train_nll_method",
            "test_nlpd", "test_rmse", "model_evaluations", "steps", "stop_reason", "wall_time", "speedup"] + \
           [f"final_{k}" for k in init.names()]
    with CsvSink(path, "training", cols) as out:
        for run in range(cfg.runs):
            seed = _seed(cfg.seed, run)
            base_time = None
            for label, (kind, r) in zip(["baseline", "preconditioned", "dense"], configs):
                t0 = time.perf_counter()
                params, trace, _ = optimize(
                    splits.X_train, splits.y_train, spec, init, kind=kind if kind != "dense" else "none",
                    rank=r, n_probes=cfg.n_probes, cfg=opt, seed=seed, X_val=splits.X_val, y_val=splits.y_val,
                    cg=cg, exact=kind == "dense", mode=mode, share_probes=cfg.share_probes)
                wall = time.perf_counter() - t0
                base_time = wall if base_time is None else base_time
                train_nll, how = train_objective(spec, params, splits.X_train, splits.y_train, seed, cfg.n_probes, cg)
                if len(splits.y_test):
                    test_rmse, test_nlpd = predictive_scores(spec, params, splits.X_train, splits.y_train,
                                                             splits.X_test, splits.y_test, cfg.kind, rank, cg, seed)
                else:
                    test_rmse = test_nlpd = 0.0
                row = dict(run=run, configuration=label, preconditioner=kind, rank=r, seed=seed,
                           train_nll=train_nll, train_nll_method=how, test_nlpd=test_nlpd, test_rmse=test_rmse,
                           model_evaluations=count_model_evaluations(trace), steps=len(trace.steps) - 1,
                           stop_reason=trace.stop_reason, wall_time=wall, speedup=base_time / wall)
                row.update({f"final_{k}": v for k, v in zip(init.names(), params.raw_vector())})
                out.write(row)
    outputs = [path, stats_path]
    outputs.append(write_run_summary(out_dir, cfg, outputs))
    return outputs


RUNNERS = {
    "bias_variance": run_bias_variance,
    "quality_curves": run_quality_curves,
    "training": run_training,
    "synth": run_synth,
}


def run_experiment(cfg, out_dir):
    return RUNNERS[cfg.experiment](cfg, out_dir)
