"""Command-line interface: train, explain, interactions, finetune, eval, synth.

Every command writes a ``config.json`` with the fully resolved arguments
into the output directory, so a run can be replayed exactly.  Errors exit
with stable, documented codes and print ``error: <Name>: <message>`` on
stderr.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import errors, interactions, laplace, metrics
from .data import (
    CLASSIFICATION,
    REGRESSION,
    apply_standardization,
    kfold,
    load_csv,
    standardize,
    synth_interaction,
    synth_toy,
)
from .model import (
    AdditiveModel,
    TrainConfig,
    initialize_model,
    predict_distribution,
    train_map,
)

EXIT_CODES = {
    "UsageError": 2,
    "ConfigInvalid": 3,
    "ParseError": 10,
    "MissingColumn": 11,
    "NonBinaryTarget": 12,
    "InvalidTarget": 13,
    "ShapeMismatch": 14,
    "KTooLarge": 15,
    "DuplicatePair": 16,
    "SingleClass": 17,
    "IndexOutOfRange": 18,
    "NotPositiveDefinite": 20,
    "Diverged": 21,
    "StalePosterior": 22,
    "DegenerateParameters": 23,
}

LR_SWEEP = (0.1, 0.01, 0.001)
GRID_POINTS = 256


def _write_config(out_dir, command, args):
    resolved = {"command": command}
    resolved.update({k: v for k, v in sorted(vars(args).items()) if k != "func"})
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(args, seed=None):
    return TrainConfig(
        lr_params=args.lr,
        lr_hyper=args.hyper_lr,
        hyper_every=args.hyper_every,
        hyper_steps=args.hyper_steps,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        early_stop_patience=args.patience,
        seed=args.seed if seed is None else seed,
        hyper_method=args.hyper_method,
        kfac=args.kfac,
    )


def _load_standardized(args):
    ds = load_csv(args.data, args.target, args.task)
    return standardize(ds)


def _fit(train_ds, stats, args, lr=None):
    cfg = _train_config(args)
    if lr is not None:
        cfg.lr_params = lr
    model = initialize_model(
        train_ds.X, train_ds.y, task=train_ds.task, hidden=args.hidden,
        seed=args.seed, standardization=stats,
    )
    result = train_map(model, train_ds.X, train_ds.y, cfg)
    final = result.history.marglik[-1] if result.history.marglik else -np.inf
    return model, result, final


def _train_with_optional_sweep(train_ds, stats, args):
    """Pick the learning rate by the final marginal-likelihood bound."""
    if not args.lr_sweep:
        model, result, final = _fit(train_ds, stats, args)
        return model, result, [(args.lr, final)]
    trials = []
    for lr in LR_SWEEP:
        model, result, final = _fit(train_ds, stats, args, lr=lr)
        trials.append((lr, final, model, result))
    lr, final, model, result = max(trials, key=lambda t: t[1])
    return model, result, [(t[0], t[1]) for t in trials]


def _write_train_log(out_dir, history, n_lambdas):
    path = out_dir / "train_log.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "marglik", "sigma2"]
                        + [f"lambda_{i}" for i in range(n_lambdas)])
        refresh = dict(zip(history.refresh_epoch, range(len(history.refresh_epoch))))
        last = None
        for epoch, loss in zip(history.epoch, history.loss):
            if epoch in refresh:
                last = refresh[epoch]
            if last is None:
                row = [epoch, repr(loss), "", ""] + [""] * n_lambdas
            else:
                row = [epoch, repr(loss), repr(history.marglik[last]),
                       "" if history.sigma2[last] is None else repr(history.sigma2[last])]
                row += [repr(v) for v in history.lambdas[last]]
            writer.writerow(row)
    return path


def cmd_train(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "train", args)
    train_ds, stats = _load_standardized(args)
    model, result, sweep = _train_with_optional_sweep(train_ds, stats, args)
    model.save(out_dir / "model.json")
    _write_train_log(out_dir, result.history, model.lambdas.shape[0])
    if args.lr_sweep:
        with open(out_dir / "lr_sweep.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lr", "final_marglik"])
            for lr, final in sweep:
                writer.writerow([repr(lr), repr(final)])
    if args.export_posterior:
        posterior = laplace.fit_posterior(model, train_ds.X, kfac=args.kfac)
        with open(out_dir / "posterior.json", "w", encoding="utf-8") as fh:
            json.dump(laplace.export_posterior(posterior), fh)
            fh.write("\n")
    print(f"wrote {out_dir / 'model.json'}")
    return 0


def _model_and_data(args):
    model = AdditiveModel.load(args.model)
    ds = load_csv(args.data, args.target, args.task)
    stats = model.standardization
    if stats is None:
        std_ds, stats = standardize(ds)
        return model, std_ds, stats
    return model, apply_standardization(ds, stats), stats


def cmd_explain(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "explain", args)
    model, std_ds, stats = _model_and_data(args)
    posterior = laplace.fit_posterior(model, std_ds.X, kfac=args.kfac)
    y_scale = stats.target_std if stats.target_std is not None else 1.0

    with open(out_dir / "curves.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "grid_value", "mean", "std", "omitted"])
        for d, name in enumerate(stats.feature_names):
            lo = std_ds.X[:, d].min()
            hi = std_ds.X[:, d].max()
            grid_std = np.linspace(lo, hi, GRID_POINTS)
            mean, var = model.centered_curve(posterior, d, grid_std, std_ds.X)
            std = np.sqrt(var)
            # a curve whose two-sigma band never leaves zero carries no signal
            omitted = int(bool(np.all(np.abs(mean) <= 2.0 * std)))
            grid_orig = grid_std * stats.feature_std[d] + stats.feature_mean[d]
            for g, mu, sd in zip(grid_orig, mean * y_scale, std * y_scale):
                writer.writerow([name, repr(float(g)), repr(float(mu)),
                                 repr(float(sd)), omitted])

    sample_rows = range(std_ds.n_samples) if args.local_samples is None \
        else args.local_samples
    with open(out_dir / "local_explanations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "feature", "contribution", "std", "omitted"])
        X_local = std_ds.X[list(sample_rows)]
        _, per_net = laplace.predictive_variance(model, posterior, X_local)
        nets = model.networks()
        for row_pos, sample in enumerate(sample_rows):
            for i, net in enumerate(nets):
                name = "+".join(stats.feature_names[c] for c in net.columns)
                contrib = float(net.forward(
                    model.net_input(X_local[row_pos:row_pos + 1], net))[0]) * y_scale
                sd = float(np.sqrt(per_net[row_pos, i])) * y_scale
                omitted = int(abs(contrib) <= 2.0 * sd)
                writer.writerow([sample, name, repr(contrib), repr(sd), omitted])

    if args.export_posterior:
        with open(out_dir / "posterior.json", "w", encoding="utf-8") as fh:
            json.dump(laplace.export_posterior(posterior), fh)
            fh.write("\n")
    print(f"wrote {out_dir / 'curves.csv'}")
    return 0


def _scored_pairs(model, std_ds, posterior, scorer, lambda_last):
    mi_ranked = interactions.mi_scores(
        interactions.fit_last_layer(model, std_ds.X, lambda_last=lambda_last))
    gain_ranked = interactions.gain_scores(model, std_ds.X, posterior)
    if scorer == "mi-blockwise":
        blockwise = [
            interactions.InteractionScore(
                pair=s.pair,
                mi=float(interactions.mi_scores_blockwise(model, std_ds.X, s.pair)),
            )
            for s in mi_ranked
        ]
        mi_ranked = interactions._ranked(blockwise)
    primary = gain_ranked if scorer == "gain" else mi_ranked
    mi_by_pair = {s.pair: s.mi for s in mi_ranked}
    gain_by_pair = {s.pair: s.gain for s in gain_ranked}
    return primary, mi_by_pair, gain_by_pair


def cmd_interactions(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "interactions", args)
    model, std_ds, stats = _model_and_data(args)
    posterior = laplace.fit_posterior(model, std_ds.X, kfac=args.kfac)
    primary, mi_by_pair, gain_by_pair = _scored_pairs(
        model, std_ds, posterior, args.scorer, args.lambda_last)
    if args.top_k is not None:
        interactions.select_top_k(primary, args.top_k)  # validates k
    with open(out_dir / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_d", "pair_dprime", "mi", "gain", "rank"])
        for s in primary:
            writer.writerow([s.pair[0], s.pair[1], repr(mi_by_pair[s.pair]),
                             repr(gain_by_pair[s.pair]), s.rank])
    print(f"wrote {out_dir / 'scores.csv'}")
    return 0


def _parse_pairs(text):
    pairs = []
    for chunk in text.split(","):
        a, b = chunk.split(":")
        pairs.append((int(a), int(b)))
    return pairs


def cmd_finetune(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "finetune", args)
    model, std_ds, stats = _model_and_data(args)
    if args.pairs:
        pairs = _parse_pairs(args.pairs)
    else:
        posterior = laplace.fit_posterior(model, std_ds.X, kfac=args.kfac)
        primary, _, _ = _scored_pairs(model, std_ds, posterior, args.scorer,
                                      args.lambda_last)
        pairs = interactions.select_top_k(primary, args.top_k)
    cfg = _train_config(args)
    result = interactions.finetune_with_interactions(
        model, std_ds.X, std_ds.y, pairs, cfg,
        joint_hidden=args.joint_hidden, seed=args.seed,
    )
    model.save(out_dir / "model.json")
    _write_train_log(out_dir, result.history, model.lambdas.shape[0])
    print(f"wrote {out_dir / 'model.json'} with joint pairs {pairs}")
    return 0


def _fold_metrics(task, pred, y_true):
    if task == REGRESSION:
        return {
            "nll": metrics.nll(pred, y_true),
            "rmse": metrics.rmse(pred.mean, y_true),
            "quantile_calib": metrics.quantile_calibration(
                pred.mean, np.sqrt(pred.var), y_true),
        }
    return {
        "nll": metrics.nll(pred, y_true),
        "auroc": metrics.auroc(pred.prob, y_true),
        "auprc": metrics.auprc(pred.prob, y_true),
        "ece": metrics.ece(pred.prob, y_true),
        "brier_root": metrics.brier_root(pred.prob, y_true),
    }


def cross_validate(ds, k, args):
    """K-fold evaluation in original target units.

    Trains one model per fold (or scores the constant train-mean baseline
    with ``--constant-baseline``) and aggregates fold metrics into a
    :class:`~banam.metrics.MetricReport`; also returns pooled
    (confidence, correctness) rows for the retention table.
    """
    spec = kfold(ds, k, seed=args.seed)
    report = metrics.MetricReport(task=ds.task)
    confidences = []
    correctness = []
    for fold in range(k):
        tr_idx, te_idx = spec.split(fold)
        train_raw = ds.subset(tr_idx)
        test_raw = ds.subset(te_idx)
        train_std, stats = standardize(train_raw)
        test_std = apply_standardization(test_raw, stats)
        if args.constant_baseline and ds.task == REGRESSION:
            mu = float(train_raw.y.mean())
            var = float(train_raw.y.var())
            pred = metrics.GaussianPredictive(
                mean=np.full(test_raw.n_samples, mu),
                var=np.full(test_raw.n_samples, var),
            )
        else:
            model = initialize_model(
                train_std.X, train_std.y, task=ds.task, hidden=args.hidden,
                seed=args.seed, standardization=stats,
            )
            result = train_map(model, train_std.X, train_std.y,
                               _train_config(args, seed=args.seed + fold))
            pred = predict_distribution(model, result.posterior, test_std.X,
                                        plugin=args.plugin_predictive)
            if ds.task == REGRESSION:
                pred = metrics.GaussianPredictive(
                    mean=stats.inverse_transform_target(pred.mean),
                    var=pred.var * stats.target_std ** 2,
                )
        report.add_fold(_fold_metrics(ds.task, pred, test_raw.y))
        if ds.task == REGRESSION:
            confidences.append(-np.sqrt(pred.var))  # tighter predictive first
            correctness.append((pred.mean - test_raw.y) ** 2)
        else:
            confidences.append(np.abs(pred.prob - 0.5))
            correctness.append(((pred.prob >= 0.5) == test_raw.y).astype(float))
    return report, np.concatenate(confidences), np.concatenate(correctness)


def cmd_eval(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "eval", args)
    ds = load_csv(args.data, args.target, args.task)
    report, conf, correct = cross_validate(ds, args.folds, args)
    with open(out_dir / "metrics.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    frac, rolling = metrics.retention_table(conf, correct)
    if ds.task == REGRESSION:
        rolling = np.sqrt(rolling)  # rolling RMSE over retained samples
        header = ["fraction_retained", "rolling_rmse"]
    else:
        header = ["fraction_retained", "rolling_accuracy"]
    with open(out_dir / "retention.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for f, r in zip(frac, rolling):
            writer.writerow([repr(float(f)), repr(float(r))])
    print(report.format_table())
    return 0


def cmd_synth(args):
    out_dir = _out_dir(args)
    _write_config(out_dir, "synth", args)
    if args.kind == "toy":
        ds, _ = synth_toy(n=args.n, seed=args.seed, noise_std=args.noise_std)
        truth = {
            "kind": "toy",
            "shapes": ["8*(x-0.5)**2", "0.1*exp(-8*x+4)",
                       "5*exp(-2*(2*x-1)**2)", "0"],
        }
    else:
        ds, info = synth_interaction(n=args.n, seed=args.seed,
                                     noise_std=args.noise_std)
        truth = {
            "kind": "interaction",
            "additive": "8*(x1-0.5)**2",
            "interaction": "3*x2*x3",
            "pair": list(info.pair),
        }
    truth.update({
        "n": args.n, "seed": args.seed, "noise_std": args.noise_std,
        "generator": "numpy Philox (counter-based), key = seed",
    })
    with open(out_dir / "data.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.feature_names + ["target"])
        for row, target in zip(ds.X, ds.y):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out_dir / 'data.csv'}")
    return 0


def _add_common(parser, need_data=True):
    if need_data:
        parser.add_argument("--data", required=True, help="input CSV path")
        parser.add_argument("--target", required=True, help="target column name")
        parser.add_argument("--task", choices=[REGRESSION, CLASSIFICATION],
                            default=REGRESSION)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--kfac", action="store_true",
                        help="Kronecker-factored posterior blocks")


def _add_train_flags(parser):
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=1000)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=512)
    parser.add_argument("--lr", type=float, default=0.01)
    parser.add_argument("--lr-sweep", dest="lr_sweep", action="store_true",
                        help="pick lr from {0.1, 0.01, 0.001} by final marglik")
    parser.add_argument("--hyper-lr", dest="hyper_lr", type=float, default=0.1)
    parser.add_argument("--hyper-every", dest="hyper_every", type=int, default=100)
    parser.add_argument("--hyper-steps", dest="hyper_steps", type=int, default=30)
    parser.add_argument("--patience", type=int, default=10)
    parser.add_argument("--hyper-method", dest="hyper_method",
                        choices=["grad", "mackay"], default="grad")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="banam",
        description="Bayesian neural additive models with Laplace posteriors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a stage-one model")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--export-posterior", dest="export_posterior",
                   action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="global curves and local explanations")
    _add_common(p)
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--local-samples", dest="local_samples", type=int, nargs="*",
                   default=None, help="sample rows for local explanations")
    p.add_argument("--export-posterior", dest="export_posterior",
                   action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("interactions", help="rank candidate feature pairs")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--scorer", choices=["mi", "gain", "mi-blockwise"], default="mi")
    p.add_argument("--top-k", dest="top_k", type=int, default=None)
    p.add_argument("--lambda-last", dest="lambda_last", type=float,
                   default=interactions.DEFAULT_LAMBDA_LAST)
    p.set_defaults(func=cmd_interactions)

    p = sub.add_parser("finetune", help="append joint networks and re-train")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--pairs", default=None,
                   help="explicit pairs as 'd:dprime,d:dprime'")
    p.add_argument("--top-k", dest="top_k", type=int, default=1)
    p.add_argument("--scorer", choices=["mi", "gain", "mi-blockwise"], default="mi")
    p.add_argument("--lambda-last", dest="lambda_last", type=float,
                   default=interactions.DEFAULT_LAMBDA_LAST)
    p.add_argument("--joint-hidden", dest="joint_hidden", type=int, default=64)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="k-fold cross-validated metrics")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--constant-baseline", dest="constant_baseline",
                   action="store_true",
                   help="score the train-mean predictor instead of the model")
    p.add_argument("--plugin-predictive", dest="plugin_predictive",
                   action="store_true",
                   help="plug-in sigmoid instead of the probit adjustment")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write synthetic fixture CSVs")
    p.add_argument("--kind", choices=["toy", "interaction"], default="toy")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and args.noise_std is None:
        args.noise_std = 1.0 if args.kind == "toy" else 0.5
    try:
        return args.func(args)
    except errors.BanamError as err:
        name = type(err).__name__
        print(f"error: {name}: {err}", file=sys.stderr)
        return EXIT_CODES.get(name, 1)
    except OSError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
