"""Command-line surface: reproducible batch jobs over the binary formats.

Exit codes: 0 success, 1 usage error, 2 data/file error, 3 numerical
failure (non-convergence under --strict).
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import os
import sys

import numpy as np

from . import io as hio
from .core import ConvergenceError, DataError, ProbabilityTensor, as_f32_grid, normalize_cube
from .denoise import DenoiseParams, denoise_tensor
from .metrics import compute_metrics, misclassification_heatmap
from .pipeline import RunConfig, cross_validate, run_two_stage, stratified_split, write_heatmap_csv
from .svm import KernelSpec, predict_tensor, train_multiclass

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_threads() -> int:
    env = os.environ.get("HSI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"HSI_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def parse_config_file(path: str) -> dict[str, str]:
    """Flat key = value text; '#' starts a comment, blank lines ignored."""
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, val = line.split("=", 1)
                out[key.strip().replace("-", "_")] = val.strip().strip("\"'")
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}")
    return out


def read_counts_csv(path: str) -> dict[int, int]:
    counts = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line or line.lower().replace(" ", "") == "class,count":
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"bad counts line: {raw.strip()!r}")
            counts[int(parts[0])] = int(parts[1])
    if not counts:
        raise DataError(f"no class counts found in {path}")
    return counts


def _add_denoise_flags(p):
    d = DenoiseParams()
    p.add_argument("--beta1", type=float, default=d.beta1, help="TV weight")
    p.add_argument("--beta2", type=float, default=d.beta2, help="smoothness weight")
    p.add_argument("--mu", type=float, default=d.mu, help="ADMM penalty")
    p.add_argument("--tol", type=float, default=d.tol, help="relative-change stopping tolerance")
    p.add_argument("--max-iters", type=int, default=d.max_iters)


def _add_common(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: HSI_THREADS or all cores)")


def build_parser() -> _Parser:
    parser = _Parser(prog="hsiclass", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="write a stratified training/testing split")
    p.add_argument("--labels", required=True)
    p.add_argument("--per-class-counts", help="CSV of class,count rows")
    p.add_argument("--percentage", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("cv", help="grid-search (nu, sigma) by stratified cross-validation")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--nus", required=True, help="comma-separated nu grid")
    p.add_argument("--sigmas", required=True, help="comma-separated sigma grid")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--cv-seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("train", help="train the pairwise classifier bank")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("predict", help="write the coupled probability tensor")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("denoise", help="restore a probability tensor")
    p.add_argument("--probs", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    _add_denoise_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics", help="per-iteration CSV trace")
    p.add_argument("--strict", action="store_true")
    _add_common(p)

    p = sub.add_parser("classify", help="full two-stage pipeline over one or more runs")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--split")
    p.add_argument("--per-class-counts")
    p.add_argument("--percentage", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nu", type=float, default=0.3)
    p.add_argument("--sigma", type=float, default=1.0)
    _add_denoise_flags(p)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--parallel-runs", action="store_true",
                   help="execute runs concurrently (one full tensor set per run in memory)")
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")
    _add_common(p)

    p = sub.add_parser("metrics", help="score a prediction over a split's testing pixels")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--split", required=True)
    _add_common(p)

    p = sub.add_parser("heatmap", help="per-pixel misclassification counts over runs")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", action="append", required=True)
    p.add_argument("--split", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    _add_common(p)
    return parser


_BOOLEAN_KEYS = {"strict", "parallel_runs"}


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags, ahead of explicit ones.

    argparse takes the last occurrence of a flag, so anything given on the
    command line overrides the file; unknown config keys surface as the
    usual unknown-flag usage errors.
    """
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None or not argv:
        return argv
    tokens: list[str] = []
    for key, raw in parse_config_file(path).items():
        flag = "--" + key.replace("_", "-")
        if key in _BOOLEAN_KEYS:
            if raw.lower() in ("1", "true", "yes", "on"):
                tokens.append(flag)
        else:
            tokens.extend([flag, raw])
    return [argv[0]] + tokens + argv[1:]


def _split_source(args, labels):
    given = [s for s in (args.split, args.per_class_counts, args.percentage) if s is not None]
    if len(given) != 1:
        raise UsageError("give exactly one of --split, --per-class-counts, --percentage")
    if args.split:
        return {"split_file": args.split}
    if args.per_class_counts:
        return {"counts": read_counts_csv(args.per_class_counts)}
    return {"percentage": args.percentage}


def _denoise_params(args) -> DenoiseParams:
    return DenoiseParams(
        beta1=args.beta1, beta2=args.beta2, mu=args.mu, tol=args.tol, max_iters=args.max_iters
    )


def _write_diag_csv(path: str, diags) -> None:
    def writer(fh):
        text = _stdio.StringIO()
        cw = csv.writer(text, lineterminator="\n")
        cw.writerow(["class", "iteration", "relative_change", "objective"])
        for k, d in enumerate(diags, start=1):
            for it, rel, obj in d.trace:
                cw.writerow([k, it, repr(rel), repr(obj)])
        fh.write(text.getvalue().encode("utf-8"))

    hio.atomic_write(path, writer)


def run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(_expand_config(argv))
    threads = args.threads if args.threads is not None else default_threads()

    if args.command == "split":
        labels = hio.read_labels(args.labels)
        if (args.per_class_counts is None) == (args.percentage is None):
            raise UsageError("give exactly one of --per-class-counts, --percentage")
        if args.per_class_counts:
            split = stratified_split(labels, args.seed, counts=read_counts_csv(args.per_class_counts))
        else:
            split = stratified_split(labels, args.seed, percentage=args.percentage)
        hio.write_split(args.out, split)
        print(f"wrote {args.out}: {len(split.training)} training, {len(split.testing)} testing")
        return EXIT_OK

    if args.command == "cv":
        cube = hio.read_cube(args.cube)
        if not cube.normalized:
            cube = normalize_cube(cube)
        labels = hio.read_labels(args.labels)
        split = hio.read_split(args.split, labels)
        nus = [float(x) for x in args.nus.split(",") if x]
        sigmas = [float(x) for x in args.sigmas.split(",") if x]
        res = cross_validate(cube, split, nus, sigmas, seed=args.cv_seed, folds=args.folds, threads=threads)
        for nu, sigma, acc in res.table:
            print(f"nu={nu:g} sigma={sigma:g} cv_accuracy={acc:.4f}")
        print(f"best: nu={res.nu:g} sigma={res.sigma:g} cv_accuracy={res.accuracy:.4f}")
        return EXIT_OK

    if args.command == "train":
        cube = hio.read_cube(args.cube)
        if not cube.normalized:
            cube = normalize_cube(cube)
        labels = hio.read_labels(args.labels)
        split = hio.read_split(args.split, labels)
        model = train_multiclass(cube, split, args.nu, KernelSpec("rbf", args.sigma), threads=threads)
        hio.write_model(args.out, model)
        n_sv = sum(len(m.alphas) for m in model.pairwise.values())
        print(f"wrote {args.out}: {len(model.pairwise)} pairwise machines, {n_sv} support vectors")
        return EXIT_OK

    if args.command == "predict":
        cube = hio.read_cube(args.cube)
        if not cube.normalized:
            cube = normalize_cube(cube)
        labels = hio.read_labels(args.labels)
        split = hio.read_split(args.split, labels)
        model = hio.read_model(args.model)
        v = predict_tensor(model, cube, split, threads=threads)
        v = ProbabilityTensor(v.height, v.width, v.num_classes, as_f32_grid(v.values))
        hio.write_probabilities(args.out, v)
        print(f"wrote {args.out}")
        return EXIT_OK

    if args.command == "denoise":
        tensor = hio.read_probabilities(args.probs)
        labels = hio.read_labels(args.labels)
        split = hio.read_split(args.split, labels)
        mask = split.training_mask(tensor.height, tensor.width)
        restored, diags = denoise_tensor(
            tensor, mask, _denoise_params(args), threads=threads,
            collect_trace=bool(args.diagnostics),
        )
        restored = ProbabilityTensor(
            restored.height, restored.width, restored.num_classes, as_f32_grid(restored.values)
        )
        hio.write_probabilities(args.out, restored)
        if args.diagnostics:
            _write_diag_csv(args.diagnostics, diags)
        bad = [k + 1 for k, d in enumerate(diags) if not d.converged]
        if bad:
            print(f"warning: classes {bad} did not converge", file=sys.stderr)
            if args.strict:
                raise ConvergenceError(f"denoising did not converge for classes {bad}")
        print(f"wrote {args.out}")
        return EXIT_OK

    if args.command == "classify":
        cube = hio.read_cube(args.cube)
        labels = hio.read_labels(args.labels)
        config = RunConfig(
            nu=args.nu,
            sigma=args.sigma,
            denoise=_denoise_params(args),
            num_runs=args.runs,
            base_seed=args.seed,
            threads=threads,
            parallel_runs=args.parallel_runs,
            **_split_source(args, labels),
        )
        result = run_two_stage(config, cube, labels, out_dir=args.out)
        for stage in ("stage1", "stage2"):
            mean_oa, std_oa = result.summary[(stage, "oa")]
            mean_aa, _ = result.summary[(stage, "aa")]
            mean_k, _ = result.summary[(stage, "kappa")]
            print(f"{stage}: oa={mean_oa:.4f}+/-{std_oa:.4f} aa={mean_aa:.4f} kappa={mean_k:.4f}")
        if not result.all_converged:
            print("warning: some denoising runs did not converge", file=sys.stderr)
            if args.strict:
                raise ConvergenceError("denoising did not converge in at least one run")
        return EXIT_OK

    if args.command == "metrics":
        pred = hio.read_labels(args.pred)
        truth = hio.read_labels(args.truth)
        split = hio.read_split(args.split, truth)
        rep = compute_metrics(pred, truth, split.testing)
        print(f"oa={rep.oa:.4f} aa={rep.aa:.4f} kappa={rep.kappa:.4f}")
        return EXIT_OK

    if args.command == "heatmap":
        truth = hio.read_labels(args.truth)
        if len(args.pred) != len(args.split):
            raise UsageError("need one --split per --pred")
        preds = [hio.read_labels(p) for p in args.pred]
        splits = [hio.read_split(s, truth).testing for s in args.split]
        counts, _ = misclassification_heatmap(preds, truth, splits)
        hio.write_pgm(args.out, counts, maxval=len(preds))
        if args.csv:
            write_heatmap_csv(args.csv, counts)
        print(f"wrote {args.out}")
        return EXIT_OK

    raise UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
