"""Experiment drivers behind the command-line subcommands.

Every driver validates its configuration, loads datasets and the model, and
checks dimensions before it creates or writes anything under ``output_dir``.
"""
from __future__ import annotations

import logging
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .io import (ExperimentConfig, emit_config, emit_pgm, ingest_pgm, read_idx, write_csv)
from .lstm import load_model, save_model
from .rng import SplitMix64, derive_seed
from .signal_model import (NoiseSpec, block_transform, blockize, deblockize,
                           gen_measurement_ensemble, gen_sparse_ensemble, measure, nmse)
from .solvers import SolverConfig, solve
from .training import train

log = logging.getLogger(__name__)

# seed-derivation tags
TAG_A, TAG_TRAIN, TAG_VAL, TAG_TEST, TAG_NOISE, TAG_TRAINER, TAG_KDRAW, TAG_IMAGES = range(1, 9)

RESULT_HEADER = ["experiment", "solver", "item", "k", "m_over_n", "sigma", "trial_seed",
                 "nmse", "recovered", "wall_time_seconds"]
TRAINING_LOG_HEADER = ["epoch", "mean_batch_loss", "validation_nmse", "wall_time_seconds"]
MNIST_SIDE = 24


@dataclass
class ResultRow:
    experiment: str
    solver: str
    item: str
    k: int
    m_over_n: float
    sigma: float
    trial_seed: int
    nmse: float
    recovered: bool
    wall_time: float

    def as_list(self):
        return [self.experiment, self.solver, self.item, self.k, self.m_over_n, self.sigma,
                self.trial_seed, self.nmse, self.recovered, self.wall_time]


# -- data ---------------------------------------------------------------------

def sensing_matrix(cfg: ExperimentConfig, M: int | None = None) -> np.ndarray:
    M = cfg.M if M is None else M
    return gen_measurement_ensemble(M, cfg.N, derive_seed(cfg.seed, TAG_A, M)).A


def synthetic_matrices(cfg: ExperimentConfig, tag: int, count: int, k: int | None = None):
    """``count`` seeded sparse matrices; with ``k=None`` each channel's
    sparsity is drawn uniformly from ``k_grid`` (one draw per matrix for the
    joint pattern)."""
    out = []
    for i in range(count):
        if k is None:
            stream = SplitMix64(derive_seed(cfg.seed, TAG_KDRAW, tag, i))
            picks = stream.integers_below([len(cfg.k_grid)] * (1 if cfg.pattern == "joint" else cfg.L))
            ks = [cfg.k_grid[p] for p in picks]
            ks = ks * cfg.L if cfg.pattern == "joint" else ks
        else:
            ks = k
        out.append(gen_sparse_ensemble(cfg.N, cfg.L, ks, cfg.pattern, cfg.amplitude_law,
                                       seed=derive_seed(cfg.seed, tag, i)).S)
    return out


def center_crop(image, side: int = MNIST_SIDE) -> np.ndarray:
    rows, cols = image.shape
    if rows < side or cols < side:
        raise ConfigurationError(f"image of shape {image.shape} is smaller than the {side}x{side} crop")
    r0, c0 = (rows - side) // 2, (cols - side) // 2
    return image[r0:r0 + side, c0:c0 + side]


@dataclass
class ImageGroup:
    """Images decoded together plus their block-coefficient matrices."""

    name: str
    images: list
    matrices: list

    def reconstruct(self, estimates, cfg):
        """Rebuild the images from estimated ``N x L`` block matrices."""
        raise NotImplementedError


class _MnistGroup(ImageGroup):
    # channel j is digit class j; every block position gives one N x L matrix
    def reconstruct(self, estimates, cfg):
        cols = np.stack(estimates, axis=1)  # N x n_blocks x L
        return [block_transform(deblockize(cols[:, :, j], cfg.block, img.shape), cfg.block,
                                cfg.transform, "inverse") for j, img in enumerate(self.images)]


class _ImageGroup(ImageGroup):
    # channels are L consecutive blocks of a single image
    def reconstruct(self, estimates, cfg):
        cols = np.concatenate(estimates, axis=1)
        img = self.images[0]
        return [block_transform(deblockize(cols, cfg.block, img.shape), cfg.block, cfg.transform, "inverse")]


def _coefficients(image, cfg):
    return blockize(block_transform(image, cfg.block, cfg.transform, "forward"), cfg.block)


def _check_block_dims(cfg):
    if cfg.block * cfg.block != cfg.N:
        raise ConfigurationError(f"N, block: N={cfg.N} must equal block**2={cfg.block ** 2}")


def mnist_groups(cfg, images_path, labels_path, count, start=0):
    """Groups of ``L`` cropped digits, channel ``j`` holding class ``j``."""
    for key, path in (("images", images_path), ("labels", labels_path)):
        if not path or not os.path.isfile(path):
            raise ConfigurationError(f"{key} file not found: {path!r}")
    _check_block_dims(cfg)
    images = read_idx(images_path)
    labels = read_idx(labels_path, scale=False)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise ConfigurationError(f"{images_path} / {labels_path}: need rank-3 images and matching rank-1 labels, "
                                 f"got {images.shape} and {labels.shape}")
    by_class = [np.flatnonzero(labels == d) for d in range(cfg.L)]
    available = min(len(idx) for idx in by_class) - start
    if available < count:
        raise ConfigurationError(f"{labels_path}: only {max(available, 0)} groups of digits 0..{cfg.L - 1} "
                                 f"available after offset {start}, need {count}")
    groups = []
    for g in range(start, start + count):
        imgs = [center_crop(images[by_class[d][g]]) for d in range(cfg.L)]
        coefs = [_coefficients(img, cfg) for img in imgs]
        mats = [np.stack([c[:, b] for c in coefs], axis=1) for b in range(coefs[0].shape[1])]
        groups.append(_MnistGroup(f"group{g}", imgs, mats))
    return groups


def image_groups(cfg, paths):
    """One group per image; each matrix holds ``L`` consecutive blocks."""
    if not paths:
        raise ConfigurationError("image_paths: no images configured")
    _check_block_dims(cfg)
    groups = []
    for path in paths:
        if not os.path.isfile(path):
            raise ConfigurationError(f"image file not found: {path}")
        img = ingest_pgm(path)
        coefs = _coefficients(img, cfg)
        if coefs.shape[1] % cfg.L:
            raise ConfigurationError(f"{path}: {coefs.shape[1]} blocks do not split into groups of L={cfg.L}")
        mats = [coefs[:, b:b + cfg.L] for b in range(0, coefs.shape[1], cfg.L)]
        groups.append(_ImageGroup(os.path.splitext(os.path.basename(path))[0], [img], mats))
    return groups


def training_matrices(cfg):
    """``(train, validation)`` lists of sparse matrices for the configured experiment."""
    if cfg.experiment == "synthetic":
        return (synthetic_matrices(cfg, TAG_TRAIN, cfg.n_train),
                synthetic_matrices(cfg, TAG_VAL, cfg.n_validation))
    if cfg.experiment == "mnist":
        groups = mnist_groups(cfg, cfg.train_images, cfg.train_labels, cfg.n_train + cfg.n_validation)
    else:
        groups = image_groups(cfg, cfg.image_paths)
    mats = [m for g in groups for m in g.matrices]
    if cfg.experiment == "mnist":
        n_val = sum(len(g.matrices) for g in groups[cfg.n_train:])
    else:
        n_val = min(cfg.n_validation, len(mats) - 1)
    return mats[:len(mats) - n_val], mats[len(mats) - n_val:]


def test_groups(cfg):
    if cfg.experiment == "mnist":
        return mnist_groups(cfg, cfg.test_images, cfg.test_labels, cfg.n_test)
    return image_groups(cfg, cfg.test_image_paths)


# -- helpers ------------------------------------------------------------------

def _prepare_output(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.used"), "w", encoding="utf-8") as fh:
        fh.write(emit_config(cfg))


def _load_model_for(cfg, M):
    if "lstm-cs" not in cfg.solvers:
        return None
    if not os.path.isfile(cfg.model_path):
        raise ConfigurationError(f"model_path: model file not found: {cfg.model_path}")
    model = load_model(cfg.model_path)
    if (model.M, model.N) != (M, cfg.N):
        raise ConfigurationError(f"model_path: model has M={model.M}, N={model.N}; experiment needs M={M}, N={cfg.N}")
    return model


def _run_jobs(cfg, jobs, fn):
    """Evaluate ``fn`` on every job, concurrently if ``workers > 1``; results
    come back in job order."""
    if cfg.workers == 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(cfg.workers) as pool:
        return list(pool.map(fn, jobs))


def _solve_synthetic(cfg, A, S, solvers, k, sigma, noise_seed, model, item, mn, trial_seed):
    Y = measure(A, S, NoiseSpec(sigma, noise_seed))
    rows = []
    for name in solvers:
        res = solve(name, A, Y, SolverConfig(res_min=cfg.res_min, k_max=k, kind=name,
                                             support_mode=cfg.support_mode), model)
        err = nmse(S, res.Shat)
        rows.append(ResultRow(cfg.experiment, name, item, k, mn, sigma, trial_seed, err,
                              err <= cfg.recovery_threshold, res.wall_time))
    return rows


def _solve_group(cfg, A, group, solvers, k, sigma, noise_seed, model, mn):
    rows = []
    for name in solvers:
        scfg = SolverConfig(res_min=cfg.res_min, k_max=k, kind=name, support_mode=cfg.support_mode)
        estimates, elapsed = [], 0.0
        for b, S in enumerate(group.matrices):
            Y = measure(A, S, NoiseSpec(sigma, derive_seed(noise_seed, b)))
            res = solve(name, A, Y, scfg, model)
            estimates.append(res.Shat)
            elapsed += res.wall_time
        recon = group.reconstruct(estimates, cfg)
        for j, (img, rec) in enumerate(zip(group.images, recon)):
            err = nmse(img, rec)
            item = group.name if len(recon) == 1 else f"{group.name}:{j}"
            rows.append((ResultRow(cfg.experiment, name, item, k, mn, sigma, noise_seed, err,
                                   err <= cfg.recovery_threshold, elapsed / len(recon)), rec))
    return rows


def _check_k(k, M):
    if k > M:
        raise ConfigurationError(f"k_max: sparsity {k} exceeds M={M}")


# -- commands -----------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig):
    """Train a decoder and write the model file plus ``training_log.csv``."""
    train_m, val_m = training_matrices(cfg)
    if not train_m:
        raise ConfigurationError("n_train: no training matrices")
    A = sensing_matrix(cfg)
    _check_k(cfg.k_max, cfg.M)
    model_dir = os.path.dirname(os.path.abspath(cfg.model_path))
    if not os.path.isdir(model_dir):
        raise ConfigurationError(f"model_path: directory does not exist: {model_dir}")

    _prepare_output(cfg)
    result = train(train_m, A, n_cells=cfg.n_cells, variant=cfg.variant, epochs=cfg.epochs,
                   batch_size=cfg.batch_size, step_size=cfg.step_size, clip=cfg.clip,
                   k_max=cfg.k_max, include_initial_pair=cfg.include_initial_pair,
                   seed=derive_seed(cfg.seed, TAG_TRAINER), validation_matrices=val_m,
                   early_stopping=cfg.early_stopping, patience=cfg.patience or None,
                   res_min=cfg.res_min, init_scale=cfg.init_scale, momentum=cfg.momentum,
                   residual=cfg.residual_mode)
    save_model(result.params, cfg.model_path)
    write_csv(os.path.join(cfg.output_dir, "training_log.csv"), TRAINING_LOG_HEADER,
              [[r.epoch, r.mean_batch_loss, r.validation_nmse, r.wall_time] for r in result.history])
    log.info("trained %d epochs, best epoch %d -> %s", len(result.history), result.best_epoch, cfg.model_path)
    return result


def cmd_solve(cfg: ExperimentConfig):
    """Decode the test set with every configured solver; write ``results.csv``
    (and PGM reconstructions for image datasets)."""
    A = sensing_matrix(cfg)
    model = _load_model_for(cfg, cfg.M)
    if cfg.experiment == "synthetic":
        _check_k(cfg.k, cfg.M)
        mats = synthetic_matrices(cfg, TAG_TEST, cfg.n_test, cfg.k)
        _prepare_output(cfg)
        rows = []
        for i, S in enumerate(mats):
            seed = derive_seed(cfg.seed, TAG_NOISE, i)
            rows += _solve_synthetic(cfg, A, S, cfg.solvers, cfg.k, cfg.sigma, seed, model, str(i),
                                     cfg.M / cfg.N, seed)
    else:
        _check_k(cfg.k_max, cfg.M)
        groups = test_groups(cfg)
        _prepare_output(cfg)
        recon_dir = os.path.join(cfg.output_dir, "reconstructions")
        os.makedirs(recon_dir, exist_ok=True)
        rows = []
        for g, group in enumerate(groups):
            for row, rec in _solve_group(cfg, A, group, cfg.solvers, cfg.k_max, cfg.sigma,
                                         derive_seed(cfg.seed, TAG_NOISE, g), model, cfg.M / cfg.N):
                emit_pgm(np.clip(rec, 0.0, 1.0), os.path.join(recon_dir, f"{row.solver}_{row.item.replace(':', '_')}.pgm"))
                rows.append(row)
    write_csv(os.path.join(cfg.output_dir, "results.csv"), RESULT_HEADER, [r.as_list() for r in rows])
    return rows


def _sweep_points(cfg, axis):
    if axis == "k":
        return [(k, cfg.sigma, cfg.M) for k in cfg.k_grid]
    k = cfg.k if cfg.experiment == "synthetic" else cfg.k_max
    if axis == "sigma":
        return [(k, s, cfg.M) for s in cfg.sigma_grid]
    return [(k, cfg.sigma, max(1, int(round(mn * cfg.N)))) for mn in cfg.m_over_n_grid]


def cmd_sweep(cfg: ExperimentConfig, axis: str | None = None):
    """Sweep one axis (``k``, ``sigma`` or ``m_over_n``); writes ``sweep.csv``
    and, for ``m_over_n``, the recovery aggregate ``recovery.csv``."""
    axis = axis or cfg.axis
    if axis not in ("k", "sigma", "m_over_n"):
        raise ConfigurationError(f"axis: unknown sweep axis {axis!r}")
    points = _sweep_points(cfg, axis)
    for k, _, M in points:
        _check_k(k, M)
    if axis == "m_over_n" and "lstm-cs" in cfg.solvers and len({M for _, _, M in points}) > 1:
        raise ConfigurationError("solvers: lstm-cs needs one model per M and cannot sweep m_over_n; "
                                 "drop it from the solver list")
    model = _load_model_for(cfg, points[0][2])
    groups = None if cfg.experiment == "synthetic" else test_groups(cfg)
    _prepare_output(cfg)

    def job(spec):
        p, t = spec
        k, sigma, M = points[p]
        A = sensing_matrix(cfg, M)
        seed = derive_seed(cfg.seed, TAG_NOISE, p, t)
        if groups is None:
            S = gen_sparse_ensemble(cfg.N, cfg.L, k, cfg.pattern, cfg.amplitude_law,
                                    seed=derive_seed(cfg.seed, TAG_TEST, k, t)).S
            return _solve_synthetic(cfg, A, S, cfg.solvers, k, sigma, seed, model, str(t), M / cfg.N, seed)
        return [row for row, _ in _solve_group(cfg, A, groups[t], cfg.solvers, k, sigma, seed, model, M / cfg.N)]

    n_items = cfg.trials if groups is None else len(groups)
    jobs = [(p, t) for p in range(len(points)) for t in range(n_items)]
    rows = [row for part in _run_jobs(cfg, jobs, job) for row in part]
    write_csv(os.path.join(cfg.output_dir, "sweep.csv"), RESULT_HEADER, [r.as_list() for r in rows])
    if axis == "m_over_n":
        write_csv(os.path.join(cfg.output_dir, "recovery.csv"),
                  ["solver", "k", "m_over_n", "items", "recovered_fraction", "boundary_met"],
                  recovery_table(rows, cfg.recovery_fraction))
    return rows


def recovery_table(rows, fraction=0.9):
    """Per (solver, k, m/n): item count, fraction with the recovery flag set,
    and whether that fraction reaches ``fraction``."""
    table = {}
    for r in rows:
        table.setdefault((r.solver, r.k, r.m_over_n), []).append(r.recovered)
    out = []
    for (solver, k, mn), flags in table.items():
        frac = float(np.mean(flags))
        out.append([solver, k, mn, len(flags), frac, frac >= fraction])
    return out


def cmd_timing(cfg: ExperimentConfig):
    """Per-sparse-vector solve time for each solver; writes ``timing.csv``,
    ``timing_summary.csv`` and ``machine.txt``."""
    model = _load_model_for(cfg, cfg.M)
    A = sensing_matrix(cfg)
    if cfg.experiment == "synthetic":
        _check_k(cfg.k, cfg.M)
        k = cfg.k
        instances = [(str(i), S) for i, S in enumerate(synthetic_matrices(cfg, TAG_TEST, cfg.n_test, cfg.k))]
    else:
        _check_k(cfg.k_max, cfg.M)
        k = cfg.k_max
        instances = [(f"{g.name}:{b}", S) for g in test_groups(cfg) for b, S in enumerate(g.matrices)]
    _prepare_output(cfg)
    rows = timing_rows(A, instances, cfg.solvers, k, cfg.res_min, cfg.timing_repeats, model, cfg.support_mode)
    write_csv(os.path.join(cfg.output_dir, "timing.csv"),
              ["solver", "item", "per_vector_seconds", "std_seconds", "repeats"], rows)
    summary = []
    for name in cfg.solvers:
        times = np.array([r[2] for r in rows if r[0] == name])
        summary.append([name, len(times), float(times.mean()), float(times.std())])
    write_csv(os.path.join(cfg.output_dir, "timing_summary.csv"),
              ["solver", "instances", "mean_per_vector_seconds", "std_seconds"], summary)
    with open(os.path.join(cfg.output_dir, "machine.txt"), "w", encoding="utf-8") as fh:
        fh.write(machine_description())
    return rows, summary


def timing_rows(A, instances, solvers, k, res_min=1e-6, repeats=3, model=None, support_mode="per-channel"):
    """``[solver, item, mean seconds per vector, std, repeats]`` per solver and instance."""
    rows = []
    for name in solvers:
        scfg = SolverConfig(res_min=res_min, k_max=k, kind=name, support_mode=support_mode)
        for item, S in instances:
            Y = A @ S
            times = [solve(name, A, Y, scfg, model).wall_time / S.shape[1] for _ in range(repeats)]
            rows.append([name, item, float(np.mean(times)), float(np.std(times)), repeats])
    return rows


def machine_description() -> str:
    return (f"platform = {platform.platform()}\n"
            f"processor = {platform.processor() or platform.machine()}\n"
            f"python = {platform.python_version()}\n"
            f"numpy = {np.__version__}\n"
            f"cpus = {os.cpu_count()}\n")


def smooth_image(seed: int, side: int = 64) -> np.ndarray:
    """Seeded test image in ``[0, 1]``: a few Gaussian blobs on a gradient."""
    stream = SplitMix64(seed)
    yy, xx = np.mgrid[0:side, 0:side] / side
    params = stream.uniform(3 + 4 * 5)
    img = params[0] * xx + params[1] * yy + 0.2 * params[2]
    for b in range(5):
        cx, cy, w, a = params[3 + 4 * b: 7 + 4 * b]
        img += (a - 0.5) * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (0.005 + 0.05 * w))
    img -= img.min()
    return img / max(img.max(), 1e-12)


def cmd_gen_data(cfg: ExperimentConfig):
    """Emit seeded data sets.

    ``synthetic``: ``A.csv`` plus long-format ``S.csv`` / ``Y.csv`` for
    ``n_test`` instances at sparsity ``k``. ``image``: ``n_train + n_test``
    smooth 64x64 PGM images under ``images/``.
    """
    if cfg.experiment == "mnist":
        raise ConfigurationError("experiment: gen-data does not write IDX files; use synthetic or image")
    if cfg.experiment == "synthetic":
        _check_k(cfg.k, cfg.M)
        A = sensing_matrix(cfg)
        mats = synthetic_matrices(cfg, TAG_TEST, cfg.n_test, cfg.k)
        _prepare_output(cfg)
        write_csv(os.path.join(cfg.output_dir, "A.csv"), [f"c{j}" for j in range(cfg.N)], A.tolist())
        s_rows, y_rows = [], []
        for i, S in enumerate(mats):
            Y = measure(A, S, NoiseSpec(cfg.sigma, derive_seed(cfg.seed, TAG_NOISE, i)))
            s_rows += [[i, r, c, S[r, c]] for r, c in zip(*np.nonzero(S))]
            y_rows += [[i, r, c, Y[r, c]] for r in range(Y.shape[0]) for c in range(Y.shape[1])]
        write_csv(os.path.join(cfg.output_dir, "S.csv"), ["instance", "row", "channel", "value"], s_rows)
        write_csv(os.path.join(cfg.output_dir, "Y.csv"), ["instance", "row", "channel", "value"], y_rows)
        return mats
    _prepare_output(cfg)
    img_dir = os.path.join(cfg.output_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    paths = []
    for i in range(cfg.n_train + cfg.n_test):
        kind = "train" if i < cfg.n_train else "test"
        path = os.path.join(img_dir, f"{kind}_{i:03d}.pgm")
        emit_pgm(smooth_image(derive_seed(cfg.seed, TAG_IMAGES, i)), path)
        paths.append(path)
    return paths


COMMANDS = {"train": cmd_train, "solve": cmd_solve, "sweep": cmd_sweep,
            "timing": cmd_timing, "gen-data": cmd_gen_data}


def run(command: str, cfg: ExperimentConfig):
    start = time.perf_counter()
    out = COMMANDS[command](cfg)
    log.info("%s finished in %.2f s", command, time.perf_counter() - start)
    return out
