"""Experiment runner: dataset synthesis, training, diagnostics, and gradient
checking, with seeded reproducible CSV artifacts and rendered figures.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 gradient-check failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from . import core, metrics, plots
from .config import ConfigError, ExperimentConfig, load_config, save_config_snapshot
from .data import (FeatureFileError, SyntheticSpec, generate_synthetic,
                   load_feature_file, save_feature_file)
from .model import CheckpointError, EncoderSpec, MultimodalModel, load_checkpoint, save_checkpoint

GRADCHECK_TOL = 1e-4
GRADCHECK_QUADRATIC_TOL = 1e-8
GRADCHECK_MAX_WIDTH = 16


def build_dataset(cfg: ExperimentConfig):
    if cfg.feature_file is not None:
        return load_feature_file(cfg.feature_file)
    return generate_synthetic(cfg.synthetic)


def build_model(cfg: ExperimentConfig, dataset) -> MultimodalModel:
    specs = [EncoderSpec(dim, cfg.hidden, cfg.feature_dim) for dim in dataset.dims]
    return MultimodalModel(specs, dataset.num_classes, seed=cfg.seed)


def _check_dims(model: MultimodalModel, dataset) -> None:
    if model.input_dims != dataset.dims or model.num_classes != dataset.num_classes:
        raise CheckpointError(
            f"checkpoint expects dims {model.input_dims} with "
            f"{model.num_classes} classes, dataset has {dataset.dims} with "
            f"{dataset.num_classes} classes"
        )


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------

def run_train(cfg: ExperimentConfig):
    """Train one model and write config snapshot, checkpoint, trace.csv,
    report.csv, and figures into the run directory."""
    cfg = cfg.resolved()
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    result = core.train(cfg, model, dataset)
    report = metrics.evaluate_model(model, dataset, cfg.seed)

    os.makedirs(cfg.out_dir, exist_ok=True)
    save_config_snapshot(cfg, os.path.join(cfg.out_dir, "config.ini"))
    save_checkpoint(model, os.path.join(cfg.out_dir, "model.ckpt"))
    metrics.write_trace_csv(result.trace, model.num_modalities,
                            os.path.join(cfg.out_dir, "trace.csv"))
    metrics.write_report_csv(report, os.path.join(cfg.out_dir, "report.csv"))
    if cfg.plots:
        plots.render_run(cfg.out_dir)
    return model, result, report


def _write_misaligned_csv(model, dataset, eval_set, path) -> None:
    probs, slot_labels, c_tilde, multi = metrics.misaligned_probs_and_stats(
        model, dataset, eval_set)
    m = model.num_modalities
    header = [f"label_{i + 1}" for i in range(m)]
    header += ["top2_first", "top2_second", "top2_hit"]
    header += [f"uni_conf_{i + 1}" for i in range(m)]
    header += [f"multi_conf_{i + 1}" for i in range(m)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(len(eval_set)):
            first, second = metrics.top2_classes(probs[k])
            labels = set(int(v) for v in slot_labels[k])
            hit = int(labels == {first, second}) if len(labels) == 2 else 0
            writer.writerow([
                *[str(int(v)) for v in slot_labels[k]],
                str(first), str(second), str(hit),
                *[repr(float(v)) for v in c_tilde[k]],
                *[repr(float(v)) for v in multi[k]],
            ])


def run_diagnose(checkpoint_path, cfg: ExperimentConfig, split: str, out_dir):
    """Evaluate a checkpoint on a dataset: report.csv plus a per-item
    misaligned diagnostics CSV."""
    dataset = build_dataset(cfg)
    model = load_checkpoint(checkpoint_path)
    _check_dims(model, dataset)
    report = metrics.evaluate_model(model, dataset, cfg.seed, split=split)

    os.makedirs(out_dir, exist_ok=True)
    metrics.write_report_csv(report, os.path.join(out_dir, "report.csv"))
    eval_set = metrics.build_misaligned_eval_set(dataset, "val", cfg.seed,
                                                 model.num_modalities)
    _write_misaligned_csv(model, dataset, eval_set,
                          os.path.join(out_dir, "misaligned.csv"))
    if cfg.plots:
        plots.render_run(out_dir)
    return report


def _gradcheck_config(cfg: ExperimentConfig | None) -> ExperimentConfig:
    if cfg is not None:
        return cfg.resolved()
    spec = SyntheticSpec(num_classes=3, dims=(5, 4), separations=(2.0, 1.0),
                         noise_scales=(0.5, 0.5), n_train=32, n_val=8, n_test=8,
                         seed=0)
    return ExperimentConfig(synthetic=spec, hidden=(8,), feature_dim=6,
                            batch_size=8, epochs=1).resolved()


def run_gradcheck(cfg: ExperimentConfig | None = None, h: float = 1e-5) -> dict[str, float]:
    """Finite-difference checks of every loss component on a small model.

    The labeling coefficients (plan, confidences, hard-sample weights, alpha)
    are frozen from the unperturbed parameters: they are constants of the
    objective, so the same constants must feed both gradient paths.
    """
    cfg = _gradcheck_config(cfg)
    widths = (*cfg.hidden, cfg.feature_dim)
    if any(w > GRADCHECK_MAX_WIDTH for w in widths):
        raise ConfigError(
            f"grad-check needs all widths <= {GRADCHECK_MAX_WIDTH}, got "
            f"{widths}; shrink [model] hidden/feature_dim"
        )
    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    params = model.parameters()
    num_modalities = model.num_modalities

    batch = dataset.split_indices("train")[:cfg.batch_size]
    xs = [dataset.features[m][batch] for m in range(num_modalities)]
    ys = dataset.labels[batch]

    plan = core.pair_batch(ys, np.random.default_rng([cfg.seed, 4]), num_modalities)
    feats0 = [model.encode(m, x).values for m, x in enumerate(xs)]
    uni_probs0 = [
        ad.softmax_values(model.unimodal_predict(m, ad.Tensor(f)).values)
        for m, f in enumerate(feats0)
    ]
    sources = plan.slot_sources()
    slot_labels = plan.slot_labels()
    slot_probs0 = np.stack(
        [uni_probs0[m][sources[:, m]] for m in range(num_modalities)], axis=1)
    c_tilde, _ = core.confidence_label(slot_probs0, slot_labels, model.num_classes)
    s_tilde = core.hard_sample_weights(feats0, plan)
    alpha = np.ones(num_modalities)
    m_hat = core.least_confident_modality(c_tilde)
    if m_hat is not None:
        alpha[m_hat] = 1.0 + cfg.eta

    def forward():
        feats, logits, uni_logits = model.forward_all(xs)
        l_align, l_uni = core.loss_align_uni(logits, uni_logits, ys)
        l_mis = None
        if len(plan):
            mis_logits = model.fuse_predict(core.build_misaligned_features(feats, plan))
            l_mis = core.loss_mis(mis_logits, c_tilde, slot_labels, alpha, s_tilde)
        return l_align, l_uni, l_mis

    lam = cfg.lam if cfg.lam > 0 else 1.0
    mis_weights = core.misaligned_anchor_weights(plan) if len(plan) else None

    def loss_align():
        return ad.mean(forward()[0])

    def loss_uni():
        return ad.mean(forward()[1])

    def loss_mis():
        return ad.sum_all(ad.mul(forward()[2], mis_weights))

    def loss_total():
        l_align, l_uni, l_mis = forward()
        return core.total_loss(l_align, l_uni, l_mis, plan, lam)

    w = ad.Tensor(np.array([0.5, -1.5, 2.0]), requires_grad=True)
    results = {
        "quadratic": ad.grad_check(lambda: ad.sum_all(ad.mul(w, w)), [w], h),
        "loss_align": ad.grad_check(loss_align, params, h),
        "loss_uni": ad.grad_check(loss_uni, params, h),
    }
    if len(plan):
        results["loss_mis"] = ad.grad_check(loss_mis, params, h)
    results["loss_total"] = ad.grad_check(loss_total, params, h)
    return results


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig(
        synthetic=SyntheticSpec(
            num_classes=4, dims=(16, 16), separations=(3.0, 0.75),
            noise_scales=(0.5, 0.5), n_train=2000, n_val=500, n_test=500,
            seed=getattr(args, "seed", None) or 0))
    updates = {}
    for attr, key in (("seed", "seed"), ("mode", "mode"), ("lam", "lam"),
                      ("eta", "eta"), ("epochs", "epochs"),
                      ("warmup_epochs", "warmup_epochs"),
                      ("batch_size", "batch_size"), ("lr", "learning_rate"),
                      ("out", "out_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "no_warmup", False):
        updates["warmup"] = False
    if getattr(args, "no_wm", False):
        updates["wm"] = False
    if getattr(args, "no_hs", False):
        updates["hs"] = False
    if getattr(args, "alpha_reset_per_epoch", False):
        updates["alpha_reset_per_epoch"] = True
    if getattr(args, "no_plots", False):
        updates["plots"] = False
    cfg = replace(cfg, **updates)
    if cfg.synthetic is not None and args.config is None and "seed" in updates:
        # Without a config file the data seed follows the run seed.
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=updates["seed"]))
    return cfg


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--no-plots", action="store_true",
                   help="skip figure rendering")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("midas", "joint"), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--no-warmup", action="store_true")
    p.add_argument("--no-wm", action="store_true")
    p.add_argument("--no-hs", action="store_true")
    p.add_argument("--alpha-reset-per-epoch", action="store_true")


def _cmd_synth_gen(args) -> int:
    cfg = _config_from_args(args)
    if cfg.synthetic is None:
        raise ConfigError("synth-gen needs a synthetic [data] section")
    dataset = generate_synthetic(cfg.synthetic)
    save_feature_file(dataset, args.out_file)
    print(f"wrote {len(dataset)} samples to {args.out_file}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    _, result, report = run_train(cfg)
    out = cfg.resolved().out_dir
    print(f"trained {cfg.mode} for {cfg.epochs} epochs -> {out}")
    print(f"top1={report.top1_acc:.2f}% macroF1={report.macro_f1:.2f}% "
          f"misTop2={report.mis_top2_acc:.2f}%")
    return 0


def _cmd_diagnose(args) -> int:
    cfg = _config_from_args(args)
    out = args.out or os.path.dirname(args.checkpoint) or "."
    report = run_diagnose(args.checkpoint, cfg, args.split, out)
    print(f"top1={report.top1_acc:.2f}% macroF1={report.macro_f1:.2f}% "
          f"misTop2={report.mis_top2_acc:.2f}% "
          f"zeroSub={['%.2f' % z for z in report.zero_sub_acc]}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = load_config(args.config) if args.config else None
    results = run_gradcheck(cfg)
    failed = False
    for name, err in results.items():
        tol = GRADCHECK_QUADRATIC_TOL if name == "quadratic" else GRADCHECK_TOL
        ok = err <= tol
        failed = failed or not ok
        print(f"grad-check {name}: max_rel_err={err:.3e} "
              f"(tol {tol:.0e}) {'PASS' if ok else 'FAIL'}")
    return 3 if failed else 0


def _cmd_plot(args) -> int:
    written = plots.render_run(args.run)
    for path in written:
        print(f"rendered {path}")
    if not written:
        print(f"no CSV artifacts found in {args.run}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="midas",
        description="Imbalance-aware multimodal training on misaligned samples")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset to a feature file")
    _add_common_flags(p)
    p.add_argument("out_file", help="feature file to write")
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("train", help="train a model and emit run artifacts")
    _add_common_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("diagnose", help="evaluate a checkpoint on a dataset")
    _add_common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="val")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("grad-check", help="finite-difference check of all losses")
    p.add_argument("--config", help="INI config file (small model enforced)")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("plot", help="re-render figures from a run directory")
    p.add_argument("--run", required=True, help="run directory with CSV artifacts")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (FeatureFileError, CheckpointError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
