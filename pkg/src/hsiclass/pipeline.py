"""End-to-end orchestration: splits, cross-validation, and multi-run
two-stage classification with artifact emission.
"""

from __future__ import annotations

import csv
import io as _stdio
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import io as hio
from .core import DataError, HyperCube, LabelMap, ProbabilityTensor, SplitSpec, as_f32_grid, normalize_cube
from .denoise import AdmmDiagnostics, DenoiseParams, denoise_tensor
from .metrics import MetricsReport, classify_argmax, compute_metrics, misclassification_heatmap
from .svm import KernelSpec, predict_probabilities, predict_tensor, train_multiclass


def stratified_split(
    labels: LabelMap,
    seed: int,
    counts: dict[int, int] | None = None,
    percentage: float | None = None,
) -> SplitSpec:
    """Pick training pixels uniformly without replacement within each class.

    Exactly one of ``counts`` (1-based class -> pixel count) or
    ``percentage`` (of each class, minimum one pixel) must be given.  The
    result is canonical: training and testing triples are sorted by
    (row, col), so identical seeds give identical splits.
    """
    if (counts is None) == (percentage is None):
        raise DataError("specify exactly one of counts/percentage")
    labels.validate()
    rng = np.random.default_rng(seed)
    train_rows = []
    test_rows = []
    for k in range(1, labels.num_classes + 1):
        pixels = labels.class_pixels(k)
        n_k = len(pixels)
        if n_k == 0:
            continue
        if counts is not None:
            if k not in counts:
                raise DataError(f"no training count given for class {k}")
            take = int(counts[k])
            if take > n_k:
                raise DataError(f"class {k} has {n_k} pixels, cannot take {take}")
            if take < 1:
                raise DataError(f"training count for class {k} must be >= 1")
        else:
            if not 0.0 < percentage <= 100.0:
                raise DataError(f"percentage must be in (0, 100], got {percentage}")
            take = min(n_k, max(1, int(round(percentage / 100.0 * n_k))))
        order = rng.permutation(n_k)
        chosen = np.zeros(n_k, dtype=bool)
        chosen[order[:take]] = True
        train_rows.append(np.column_stack([pixels[chosen], np.full(take, k)]))
        test_rows.append(np.column_stack([pixels[~chosen], np.full(n_k - take, k)]))
    training = np.concatenate(train_rows) if train_rows else np.empty((0, 3), dtype=np.int64)
    testing = np.concatenate(test_rows) if test_rows else np.empty((0, 3), dtype=np.int64)
    training = training[np.lexsort((training[:, 1], training[:, 0]))]
    testing = testing[np.lexsort((testing[:, 1], testing[:, 0]))]
    if len(testing) == 0:
        warnings.warn("testing set is empty: every labeled pixel is a training pixel")
    split = SplitSpec(training, testing, seed)
    split.validate(labels)
    return split


@dataclass(frozen=True)
class CvResult:
    nu: float
    sigma: float
    accuracy: float
    table: np.ndarray  # rows of (nu, sigma, accuracy); accuracy -1 where infeasible
    folds: int


def cross_validate(
    cube: HyperCube,
    split: SplitSpec,
    nus: list[float],
    sigmas: list[float],
    seed: int = 0,
    folds: int = 5,
    threads: int = 1,
) -> CvResult:
    """Stratified k-fold accuracy over the training pixels for a (nu, sigma) grid.

    Testing pixels are never touched.  Ties prefer smaller sigma, then
    smaller nu.  Classes smaller than the fold count shrink it (with a
    warning); grid points infeasible for some class pair score -1.
    """
    tr = split.training
    class_sizes = [int(np.sum(tr[:, 2] == k)) for k in sorted({int(k) for k in tr[:, 2]})]
    usable = min(folds, min(class_sizes))
    if usable < folds:
        warnings.warn(f"smallest class has {usable} training pixels; using {usable} folds")
    folds = usable
    if folds < 2:
        raise DataError("cross-validation needs at least 2 usable folds")

    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(tr), dtype=np.int64)
    for k in sorted({int(k) for k in tr[:, 2]}):
        idx = np.nonzero(tr[:, 2] == k)[0]
        fold_of[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % folds

    spectra = cube.spectra()
    flat = tr[:, 0] * cube.width + tr[:, 1]
    rows = []
    for sigma in sigmas:
        for nu in nus:
            kernel = KernelSpec("rbf", sigma)
            correct = 0
            feasible = True
            for f in range(folds):
                held = fold_of == f
                sub = SplitSpec(tr[~held], tr[held], seed)
                try:
                    model = train_multiclass(cube, sub, nu, kernel, threads=threads)
                except DataError:
                    feasible = False
                    break
                P = predict_probabilities(model, spectra[flat[held]], threads=threads)
                pred = P.argmax(axis=1) + 1
                correct += int(np.sum(pred == tr[held, 2]))
            acc = correct / len(tr) if feasible else -1.0
            rows.append((nu, sigma, acc))
    table = np.array(rows)
    best = max(
        range(len(rows)),
        key=lambda i: (rows[i][2], -rows[i][1], -rows[i][0]),
    )
    if rows[best][2] < 0:
        raise DataError("every grid point was infeasible")
    return CvResult(nu=rows[best][0], sigma=rows[best][1], accuracy=rows[best][2], table=table, folds=folds)


@dataclass(frozen=True)
class RunConfig:
    nu: float = 0.3
    sigma: float = 1.0
    denoise: DenoiseParams = field(default_factory=DenoiseParams)
    num_runs: int = 1
    base_seed: int = 0
    counts: dict[int, int] | None = None
    percentage: float | None = None
    split_file: str | None = None
    threads: int = 1
    parallel_runs: bool = False  # opt-in: runs hold their tensors concurrently

    def __post_init__(self):
        if self.num_runs < 1:
            raise DataError("num_runs must be >= 1")
        sources = sum(x is not None for x in (self.counts, self.percentage, self.split_file))
        if sources != 1:
            raise DataError("specify exactly one split source (counts/percentage/split file)")


@dataclass
class RunArtifacts:
    split: SplitSpec
    stage1: MetricsReport
    stage2: MetricsReport
    pred_stage1: LabelMap
    pred_stage2: LabelMap
    denoise_diags: list[AdmmDiagnostics]


@dataclass
class TwoStageResult:
    runs: list[RunArtifacts]
    heatmap_stage1: np.ndarray
    heatmap_stage2: np.ndarray
    tested_mask: np.ndarray
    summary: dict  # {(stage, metric): (mean, std)}

    @property
    def all_converged(self) -> bool:
        return all(d.converged for run in self.runs for d in run.denoise_diags)


def _summary(runs: list[RunArtifacts]) -> dict:
    out = {}
    for stage, getter in (("stage1", lambda r: r.stage1), ("stage2", lambda r: r.stage2)):
        for metric in ("oa", "aa", "kappa"):
            vals = np.array([getattr(getter(r), metric) for r in runs])
            out[(stage, metric)] = (float(vals.mean()), float(vals.std()))
    return out


def _metrics_rows(runs: list[RunArtifacts], num_classes: int) -> list[list]:
    rows = []
    for idx, run in enumerate(runs, start=1):
        for stage, rep in (("1", run.stage1), ("2", run.stage2)):
            acc = ["" if np.isnan(a) else repr(float(a)) for a in rep.per_class_accuracy]
            acc += [""] * (num_classes - len(acc))
            rows.append([idx, stage, repr(rep.oa), repr(rep.aa), repr(rep.kappa)] + acc)
    return rows


def write_metrics_csv(path: str, runs: list[RunArtifacts], num_classes: int) -> None:
    def writer(fh):
        text = _stdio.StringIO()
        cw = csv.writer(text, lineterminator="\n")
        cw.writerow(["run", "stage", "oa", "aa", "kappa"] + [f"class_{k}" for k in range(1, num_classes + 1)])
        for row in _metrics_rows(runs, num_classes):
            cw.writerow(row)
        fh.write(text.getvalue().encode("utf-8"))

    hio.atomic_write(path, writer)


def write_heatmap_csv(path: str, counts: np.ndarray) -> None:
    def writer(fh):
        lines = "\n".join(",".join(str(int(v)) for v in row) for row in counts)
        fh.write((lines + "\n").encode("utf-8"))

    hio.atomic_write(path, writer)


def run_two_stage(
    config: RunConfig,
    cube: HyperCube,
    labels: LabelMap,
    out_dir: str | None = None,
) -> TwoStageResult:
    """Run split -> train -> probability maps -> restore -> argmax, repeatedly.

    Run r uses seed base_seed + r.  Stage-1 and Stage-2 predictions are both
    scored on the testing pixels of that run's split.  Probability tensors
    are rounded to the 32-bit float grid before scoring and restoration, so
    results match a pipeline that round-trips each artifact through disk.
    """
    labels.validate()
    if not cube.normalized:
        cube = normalize_cube(cube)
    kernel = KernelSpec("rbf", config.sigma)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    def one_run(r: int) -> RunArtifacts:
        seed = config.base_seed + r
        if config.split_file is not None:
            split = hio.read_split(config.split_file, labels)
        elif config.counts is not None:
            split = stratified_split(labels, seed, counts=config.counts)
        else:
            split = stratified_split(labels, seed, percentage=config.percentage)

        model = train_multiclass(cube, split, config.nu, kernel, threads=config.threads)
        v_raw = predict_tensor(model, cube, split, threads=config.threads)
        v = ProbabilityTensor(v_raw.height, v_raw.width, v_raw.num_classes, as_f32_grid(v_raw.values))
        pred1 = classify_argmax(v)

        mask = split.training_mask(labels.height, labels.width)
        u_raw, diags = denoise_tensor(v, mask, config.denoise, threads=config.threads)
        u = ProbabilityTensor(u_raw.height, u_raw.width, u_raw.num_classes, as_f32_grid(u_raw.values))
        pred2 = classify_argmax(u)

        stage1 = compute_metrics(pred1, labels, split.testing)
        stage2 = compute_metrics(pred2, labels, split.testing)

        if out_dir is not None:
            rd = os.path.join(out_dir, f"run_{r}")
            hio.write_split(os.path.join(rd, "split.hss"), split)
            hio.write_model(os.path.join(rd, "model.hsm"), model)
            hio.write_probabilities(os.path.join(rd, "prob_stage1.hsp"), v)
            hio.write_probabilities(os.path.join(rd, "prob_stage2.hsp"), u)
            hio.write_labels(os.path.join(rd, "pred_stage1.hsl"), pred1)
            hio.write_labels(os.path.join(rd, "pred_stage2.hsl"), pred2)
        return RunArtifacts(split, stage1, stage2, pred1, pred2, diags)

    run_ids = range(1, config.num_runs + 1)
    if config.parallel_runs and config.num_runs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(config.num_runs, config.threads or 1)) as pool:
            runs = list(pool.map(one_run, run_ids))
    else:
        runs = [one_run(r) for r in run_ids]

    testing_sets = [run.split.testing for run in runs]
    heat1, tested = misclassification_heatmap([r.pred_stage1 for r in runs], labels, testing_sets)
    heat2, _ = misclassification_heatmap([r.pred_stage2 for r in runs], labels, testing_sets)
    result = TwoStageResult(
        runs=runs,
        heatmap_stage1=heat1,
        heatmap_stage2=heat2,
        tested_mask=tested,
        summary=_summary(runs),
    )
    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), runs, labels.num_classes)
        hio.write_pgm(os.path.join(out_dir, "heatmap_stage2.pgm"), heat2, maxval=config.num_runs)
        write_heatmap_csv(os.path.join(out_dir, "heatmap_stage2.csv"), heat2)
    return result
