"""Command-line pipeline: calibrate, cat-fit, evaluate, sweep, demo.

Every command reads and writes under ``--out`` (the bundle lives at
``<out>/bundle.json``), never mutates its inputs, writes outputs atomically,
and is byte-reproducible for a fixed ``--seed``. Exit codes: 0 success,
1 internal error, 2 user/input error.

Data inputs come in two shapes:

* net mode (``--model`` given): ``--data`` holds input-sample tensors and
  logits are computed by running the model in full precision and under the
  bundle's quantization parameters.
* corpus mode (no ``--model``): ``--data`` holds precomputed logit tensors,
  paired as LQ then FP (``fit-lq fit-fp`` for cat-fit; ``eval-lq eval-fp``
  for evaluate; ``fit-lq fit-fp eval-lq eval-fp`` for sweep).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import io as cio
from .calibration import (
    DEFAULT_LAMBDA_P,
    DEFAULT_TEMPERATURE,
    CalibConfig,
    CalibState,
    eval_kl_out,
)
from .calibration import refine as refine_params
from .cat import (
    DEFAULT_ALPHA,
    DEFAULT_CLUSTERS,
    DEFAULT_EPSILON,
    DEFAULT_PCA_DIM,
    ClusterAffineCorrector,
    LogitPairSet,
)
from .errors import CatQuantError
from .net import QuantSpec, collect_quant_params, forward_fp, forward_lq
from .rng import SplitMix64
from .synthetic import make_demo_inputs, make_demo_net, make_group_affine_corpus

REPORT_COLUMNS = ["variant", "top1_agreement_fp", "top1_accuracy", "mean_kl_to_fp", "logit_mse"]
SWEEP_COLUMNS = ["axis", "value", "seed_count"] + REPORT_COLUMNS[1:]
TRACE_COLUMNS = ["round", "l_kl", "l_reg", "l_cat"]
SWEEP_AXES = ("alpha", "clusters", "pca_dim", "samples")


class UserError(CatQuantError):
    """Invalid invocation or inputs; maps to exit code 2."""


@contextmanager
def _stage(name: str):
    """Prefix any failure with the pipeline stage that raised it."""
    try:
        yield
    except (CatQuantError, ValueError, OSError) as exc:
        raise UserError(f"{name}: {exc}") from exc


def _bundle_path(out_dir: str) -> str:
    return os.path.join(out_dir, "bundle.json")


def _config_hash(parts: dict) -> str:
    return hashlib.sha256(
        json.dumps(parts, sort_keys=True).encode("utf-8")
    ).hexdigest()


def _read_labels(path, n_expected: int) -> np.ndarray:
    raw = cio.read_tensor(path)
    if raw.ndim != 1:
        raise UserError(f"{path}: labels must be a 1-D tensor, got rank {raw.ndim}")
    if raw.shape[0] != n_expected:
        raise UserError(
            f"{path}: {raw.shape[0]} labels for {n_expected} evaluation rows"
        )
    return np.rint(raw).astype(np.int64)


def _net_logit_pairs(model_path, data_path, quant_params, tag):
    net = cio.load_model(model_path)
    batch = cio.read_tensor(data_path)
    lq = forward_lq(net, batch, quant_params)
    fp = forward_fp(net, batch)
    return LogitPairSet(lq=lq, fp=fp, source_tag=tag)


def _corpus_logit_pairs(lq_path, fp_path, tag):
    return LogitPairSet(
        lq=cio.read_tensor(lq_path), fp=cio.read_tensor(fp_path), source_tag=tag
    )


def _load_pairs(args, paths: list[str], tag: str) -> LogitPairSet:
    if args.model is not None:
        if len(paths) != 1:
            raise UserError(
                f"net mode expects one input tensor for {tag}, got {len(paths)}"
            )
        bundle = cio.load_bundle(_bundle_path(args.out))
        return _net_logit_pairs(args.model, paths[0], bundle.quant_params, tag)
    if len(paths) != 2:
        raise UserError(
            f"corpus mode expects an lq,fp tensor pair for {tag}, got {len(paths)}"
        )
    return _corpus_logit_pairs(paths[0], paths[1], tag)


def _metrics(corrected, fp, labels, temperature: float) -> list[float]:
    pred = np.argmax(corrected, axis=1)
    return [
        float(np.mean(pred == np.argmax(fp, axis=1))),
        float(np.mean(pred == labels)),
        eval_kl_out(fp, corrected, temperature),
        float(np.mean((corrected - fp) ** 2)),
    ]


# ---------------------------------------------------------------------------
# commands


def cmd_calibrate(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    with _stage("calibrate/load-model"):
        net = cio.load_model(args.model)
    if len(args.data) != 1:
        raise UserError("calibrate expects exactly one calibration input tensor")
    with _stage("calibrate/load-data"):
        batch = cio.read_tensor(args.data[0])
    spec = QuantSpec(
        weight_bits=args.wbits, act_bits=args.abits, last_layer_bits=args.last_bits
    )
    config = CalibConfig(
        temperature=args.temp,
        lambda_p=args.lambda_p,
        seed=args.seed,
        sample_count=args.samples,
    )
    with _stage("calibrate/minmax-init"):
        params = collect_quant_params(net, batch, spec)
        state = CalibState.from_params(params)
    with _stage("calibrate/refine"):
        state = refine_params(net, batch, config, state)

    bundle = cio.ArtifactBundle(
        quant_params=state.current_params,
        provenance={
            "seed": args.seed,
            "config_hash": _config_hash(
                {
                    "command": "calibrate",
                    "wbits": args.wbits,
                    "abits": args.abits,
                    "last_bits": args.last_bits,
                    "temp": args.temp,
                    "lambda_p": args.lambda_p,
                    "samples": args.samples,
                    "seed": args.seed,
                }
            ),
            "tool_version": cio.TOOL_VERSION,
        },
    )
    with _stage("calibrate/save"):
        cio.save_bundle(_bundle_path(args.out), bundle)
        trace_rows = [[r, kl, reg, total] for r, kl, reg, total in state.objective_trace]
        cio.write_csv(
            os.path.join(args.out, "calibration_trace.csv"), TRACE_COLUMNS, trace_rows
        )
    first, last = state.objective_trace[0][3], state.objective_trace[-1][3]
    print(f"calibrate: objective {first:.6g} -> {last:.6g} over {len(state.objective_trace) - 1} rounds")
    print(f"calibrate: bundle written to {_bundle_path(args.out)}")


def _fit_corrector(pairs: LogitPairSet, args, n_clusters: int, seed: int):
    return ClusterAffineCorrector(
        n_clusters=n_clusters,
        pca_dim=args.pca_dim,
        alpha=args.alpha,
        epsilon=args.epsilon,
        seed=seed,
    ).fit(pairs, None)


def cmd_cat_fit(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    bundle_path = _bundle_path(args.out)
    if args.model is not None:
        with _stage("cat-fit/load-bundle"):
            bundle = cio.load_bundle(bundle_path)
        if len(args.data) != 1:
            raise UserError("net mode expects one fitting input tensor")
        with _stage("cat-fit/forward"):
            pairs = _net_logit_pairs(
                args.model, args.data[0], bundle.quant_params, "cat-fit"
            )
    else:
        if len(args.data) != 2:
            raise UserError("corpus mode expects fitting tensors: lq fp")
        with _stage("cat-fit/load-data"):
            pairs = _corpus_logit_pairs(args.data[0], args.data[1], "cat-fit")
        bundle = (
            cio.load_bundle(bundle_path)
            if os.path.exists(bundle_path)
            else cio.ArtifactBundle()
        )

    if args.samples is not None:
        if args.samples > pairs.n_samples:
            raise UserError(
                f"--samples {args.samples} exceeds available rows {pairs.n_samples}"
            )
        pairs = pairs.subset(SplitMix64(args.seed).subsample(pairs.n_samples, args.samples))
    if args.clusters > pairs.n_samples:
        raise UserError(
            f"--clusters {args.clusters} exceeds fitting sample count {pairs.n_samples}"
        )

    with _stage("cat-fit/fit"):
        bundle.cat = _fit_corrector(pairs, args, args.clusters, args.seed)
        bundle.plain_affine = _fit_corrector(pairs, args, 1, args.seed)
    bundle.provenance = {
        "seed": args.seed,
        "config_hash": _config_hash(
            {
                "command": "cat-fit",
                "clusters": args.clusters,
                "pca_dim": args.pca_dim,
                "alpha": args.alpha,
                "epsilon": args.epsilon,
                "samples": args.samples,
                "seed": args.seed,
                "previous": bundle.provenance.get("config_hash", ""),
            }
        ),
        "tool_version": cio.TOOL_VERSION,
    }
    with _stage("cat-fit/save"):
        cio.save_bundle(bundle_path, bundle)
    meta = bundle.cat.fit_meta_
    print(
        f"cat-fit: fit mse identity {meta['fit_mse_identity']:.6g} -> "
        f"cat {meta['fit_mse_cat']:.6g} "
        f"(plain affine {bundle.plain_affine.fit_meta_['fit_mse_cat']:.6g}) "
        f"on {meta['sample_count']} samples"
    )
    print(f"cat-fit: bundle updated at {bundle_path}")


def _evaluation_rows(bundle, pairs, labels, temperature):
    rows = [["no_correction"] + _metrics(pairs.lq, pairs.fp, labels, temperature)]
    rows.append(
        ["plain_affine"]
        + _metrics(bundle.plain_affine.apply(pairs.lq), pairs.fp, labels, temperature)
    )
    rows.append(
        ["cat"] + _metrics(bundle.cat.apply(pairs.lq), pairs.fp, labels, temperature)
    )
    return rows


def cmd_evaluate(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    with _stage("evaluate/load-bundle"):
        bundle = cio.load_bundle(_bundle_path(args.out))
    if bundle.cat is None or bundle.plain_affine is None:
        raise UserError("evaluate: bundle has no fitted correction; run cat-fit first")
    with _stage("evaluate/load-data"):
        pairs = _load_pairs(args, args.data, "evaluate")
    if args.labels is None:
        raise UserError("evaluate requires --labels")
    with _stage("evaluate/load-labels"):
        labels = _read_labels(args.labels, pairs.n_samples)

    rows = _evaluation_rows(bundle, pairs, labels, args.temp)
    report_path = os.path.join(args.out, "report.csv")
    with _stage("evaluate/save"):
        cio.write_csv(report_path, REPORT_COLUMNS, rows)
    for row in rows:
        print(
            f"evaluate: {row[0]}: agreement {row[1]:.4f}, accuracy {row[2]:.4f}, "
            f"kl {row[3]:.6g}, mse {row[4]:.6g}"
        )
    print(f"evaluate: report written to {report_path}")


def _parse_grid(axis: str, grid: str):
    if not grid or not grid.strip():
        raise UserError("sweep grid is empty")
    values = []
    for token in grid.split(","):
        token = token.strip()
        if not token:
            raise UserError("sweep grid contains an empty entry")
        try:
            values.append(float(token) if axis == "alpha" else int(token))
        except ValueError as exc:
            raise UserError(f"sweep grid entry {token!r}: {exc}") from exc
    return values


def cmd_sweep(args) -> None:
    os.makedirs(args.out, exist_ok=True)
    with _stage("sweep/load-bundle"):
        bundle = cio.load_bundle(_bundle_path(args.out))
    if bundle.cat is None:
        raise UserError("sweep: bundle has no fitted correction; run cat-fit first")
    grid = _parse_grid(args.axis, args.grid)

    if args.model is not None:
        if len(args.data) != 2:
            raise UserError("net mode sweep expects data tensors: fit-inputs eval-inputs")
        with _stage("sweep/forward"):
            fit_pairs = _load_pairs(args, [args.data[0]], "sweep-fit")
            eval_pairs = _load_pairs(args, [args.data[1]], "sweep-eval")
    else:
        if len(args.data) != 4:
            raise UserError(
                "corpus mode sweep expects data tensors: fit-lq fit-fp eval-lq eval-fp"
            )
        with _stage("sweep/load-data"):
            fit_pairs = _corpus_logit_pairs(args.data[0], args.data[1], "sweep-fit")
            eval_pairs = _corpus_logit_pairs(args.data[2], args.data[3], "sweep-eval")
    if args.labels is None:
        raise UserError("sweep requires --labels")
    with _stage("sweep/load-labels"):
        labels = _read_labels(args.labels, eval_pairs.n_samples)

    base = bundle.cat
    rows = []
    with _stage("sweep/run"):
        for value in grid:
            if args.axis == "alpha":
                if not 0.0 <= value <= 1.0:
                    raise UserError(f"alpha grid value {value} outside [0, 1]")
                metric_sets = [
                    _metrics(
                        base.apply(eval_pairs.lq, alpha=value),
                        eval_pairs.fp,
                        labels,
                        args.temp,
                    )
                ]
            else:
                metric_sets = []
                for seed in range(args.seed, args.seed + 3):
                    sub = fit_pairs
                    n_clusters = base.n_clusters
                    pca_dim = base.pca_dim
                    if args.axis == "clusters":
                        n_clusters = value
                    elif args.axis == "pca_dim":
                        pca_dim = value
                    elif args.axis == "samples":
                        if not 1 <= value <= fit_pairs.n_samples:
                            raise UserError(
                                f"samples grid value {value} outside "
                                f"[1, {fit_pairs.n_samples}]"
                            )
                        sub = fit_pairs.subset(
                            SplitMix64(seed).subsample(fit_pairs.n_samples, value)
                        )
                    corrector = ClusterAffineCorrector(
                        n_clusters=n_clusters,
                        pca_dim=pca_dim,
                        alpha=base.alpha,
                        epsilon=base.epsilon,
                        seed=seed,
                        variance_floor=base.variance_floor,
                    ).fit(sub, None)
                    metric_sets.append(
                        _metrics(
                            corrector.apply(eval_pairs.lq),
                            eval_pairs.fp,
                            labels,
                            args.temp,
                        )
                    )
            means = np.mean(np.asarray(metric_sets), axis=0)
            rows.append([args.axis, value, len(metric_sets)] + [float(m) for m in means])

    sweep_path = os.path.join(args.out, f"sweep_{args.axis}.csv")
    with _stage("sweep/save"):
        cio.write_csv(sweep_path, SWEEP_COLUMNS, rows)
    print(f"sweep: {len(rows)} grid points written to {sweep_path}")
    if args.axis == "alpha":
        best = max(rows, key=lambda row: row[3])
        print(
            f"sweep: best alpha on this grid by top-1 agreement: {best[1]} "
            f"(agreement {best[3]:.4f})"
        )


def cmd_demo(args) -> None:
    out = args.out
    data_dir = os.path.join(out, "data")
    os.makedirs(data_dir, exist_ok=True)
    seed = args.seed

    with _stage("demo/generate"):
        net = make_demo_net(seed)
        model_path = os.path.join(data_dir, "model.json")
        cio.save_model(model_path, net)
        calib, _ = make_demo_inputs(net, 256, seed=seed, split=0)
        fit, _ = make_demo_inputs(net, 512, seed=seed, split=1)
        holdout, labels = make_demo_inputs(net, 512, seed=seed, split=2)
        paths = {}
        for name, array in [("calib", calib), ("fit", fit), ("eval", holdout)]:
            paths[name] = os.path.join(data_dir, f"{name}.tns")
            cio.write_tensor(paths[name], array)
        labels_path = os.path.join(data_dir, "labels.tns")
        cio.write_tensor(labels_path, labels.astype(np.float64))

    base = argparse.Namespace(
        model=model_path,
        labels=labels_path,
        out=out,
        seed=seed,
        temp=args.temp,
        lambda_p=args.lambda_p,
        wbits=args.wbits,
        abits=args.abits,
        last_bits=args.last_bits,
        alpha=args.alpha,
        clusters=args.clusters,
        pca_dim=args.pca_dim,
        epsilon=args.epsilon,
        samples=None,
    )
    cmd_calibrate(argparse.Namespace(**vars(base), data=[paths["calib"]]))
    cmd_cat_fit(argparse.Namespace(**vars(base), data=[paths["fit"]]))
    cmd_evaluate(argparse.Namespace(**vars(base), data=[paths["eval"]]))
    cmd_sweep(
        argparse.Namespace(
            **vars(base),
            data=[paths["fit"], paths["eval"]],
            axis="alpha",
            grid="0.0,0.25,0.5,0.75,1.0",
        )
    )
    print(f"demo: complete; artifacts under {out}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser, *, bits=False, calib=False, cat=False):
    parser.add_argument("--model", default=None, help="model JSON path (net mode)")
    parser.add_argument(
        "--data", nargs="+", default=[], help="input tensor path(s); see module help"
    )
    parser.add_argument("--labels", default=None, help="label tensor path")
    parser.add_argument("--out", required=True, help="output/working directory")
    parser.add_argument("--seed", type=int, default=0, help="deterministic seed")
    parser.add_argument(
        "--temp", type=float, default=DEFAULT_TEMPERATURE, help="softmax temperature"
    )
    if bits:
        parser.add_argument("--wbits", type=int, default=8, help="weight bit-width")
        parser.add_argument("--abits", type=int, default=8, help="activation bit-width")
        parser.add_argument(
            "--last-bits", type=int, default=8, dest="last_bits",
            help="final-layer weight bit-width",
        )
    if calib:
        parser.add_argument(
            "--lambda-p", type=float, default=DEFAULT_LAMBDA_P, dest="lambda_p",
            help="parameter-drift regularizer weight",
        )
        parser.add_argument(
            "--samples", type=int, default=None, help="calibration/fitting sample cap"
        )
    if cat:
        parser.add_argument(
            "--alpha", type=float, default=DEFAULT_ALPHA, help="correction blend weight"
        )
        parser.add_argument(
            "--clusters", type=int, default=DEFAULT_CLUSTERS, help="cluster count"
        )
        parser.add_argument(
            "--pca-dim", type=int, default=DEFAULT_PCA_DIM, dest="pca_dim",
            help="clustering feature dimension",
        )
        parser.add_argument(
            "--epsilon", type=float, default=DEFAULT_EPSILON,
            help="variance regularizer in the affine fit",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catquant",
        description="Post-training quantization with cluster-wise affine logit correction",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="min-max init + KL refinement of quant params")
    _add_common(p, bits=True, calib=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("cat-fit", help="fit the cluster-wise affine correction")
    _add_common(p, calib=True, cat=True)
    p.set_defaults(func=cmd_cat_fit)

    p = sub.add_parser("evaluate", help="report no/plain/cluster correction metrics")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-sweep one hyperparameter axis")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--grid", required=True, help="comma-separated grid values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo", help="generate a synthetic corpus and run everything")
    _add_common(p, bits=True, calib=True, cat=True)
    p.set_defaults(
        wbits=2, abits=2, last_bits=8, clusters=3, pca_dim=3, func=cmd_demo
    )

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except UserError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    except (CatQuantError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error [{args.command}]: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
