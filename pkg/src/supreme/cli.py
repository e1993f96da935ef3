"""Command-line interface: ``supreme {synth,pretrain,init,train,eval}``.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment); keys are option names with dashes or underscores.
Explicit flags override the file. Exit codes: 0 success, 1 runtime failure,
2 validation failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .data import FormatError, SynthesisConfig, read_dataset, synthesize_transfer_pair, write_csv, write_dataset
from .data import Domain, EmbeddingDataset
from .metrics import evaluate
from .model import CheckpointError, HeadModel, ModelConfig, load_checkpoint, pretrain, save_checkpoint
from .objective import LossReport, LossWeights, PairScale, Supervision
from .pipeline import TrainConfig, make_prior, train
from .prior import PriorFormatError, load_prior, save_prior

log = logging.getLogger("supreme")


class UsageError(Exception):
    """Bad input: exit code 2."""


def read_config(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p


def _load_dataset(path: str) -> EmbeddingDataset:
    try:
        return read_dataset(_existing(path))
    except FormatError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _widths(text: str) -> list[int]:
    text = text.strip()
    return [int(t) for t in text.split(",") if t.strip()] if text and text != "none" else []


def _header(fh, items: dict) -> None:
    for k, v in items.items():
        fh.write(f"# {k} = {v}\n")


# subcommands


def cmd_synth(a) -> int:
    cfg = SynthesisConfig(
        d=a.d, k_source=a.k_source, k_target=a.k_target, per_class=a.per_class,
        separation=a.separation, std=a.std, shift=a.shift, seed=a.seed,
    )
    try:
        source, target, labels = synthesize_transfer_pair(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    held_out = EmbeddingDataset(target.features, target.k, Domain.TARGET, labels)
    files = {"source": source, "target": target, "target_labelled": held_out}
    for name, ds in files.items():
        write_dataset(ds, out / f"{name}.emb")
        if a.csv:
            write_csv(ds, out / f"{name}.csv")
    print(f"wrote {', '.join(str(out / f'{n}.emb') for n in files)}")
    return 0


def _model_config(a, source: EmbeddingDataset) -> ModelConfig:
    try:
        return ModelConfig(
            d_in=source.d, k_source=source.k, k_target=a.k_target, widths=_widths(a.widths),
            factor_dim=a.factor_dim, seed=a.seed, init_scale=a.init_scale,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_pretrain(a) -> int:
    source = _load_dataset(a.source)
    if not source.labelled:
        raise UsageError(f"{a.source}: pretraining needs a labelled source dataset")
    model = HeadModel(_model_config(a, source))
    report = pretrain(model, source, a.epochs, a.batch_size, a.lr, a.lambda_attr, a.seed)
    save_checkpoint(model, a.out)
    log_path = Path(a.log) if a.log else Path(a.out).with_suffix(".pretrain.csv")
    with open(log_path, "w", newline="") as fh:
        _header(fh, {"epochs": a.epochs, "batch_size": a.batch_size, "lr": a.lr, "lambda_attr": a.lambda_attr, "seed": a.seed})
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "acc"])
        for i, (loss, acc) in enumerate(zip(report.losses, report.accuracies), 1):
            w.writerow([i, repr(loss), repr(acc)])
    print(f"final_source_acc={report.final_accuracy:.6f}")
    return 0


def _target_views(a) -> tuple[EmbeddingDataset, np.ndarray | None]:
    target = _load_dataset(a.target)
    if target.labelled and not a.eval_labels:
        raise UsageError(
            f"{a.target} carries labels; pass --eval-labels to use them for evaluation only, "
            "or supply an unlabelled target file"
        )
    return target.unlabelled(), target.labels


def _train_config(a) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=a.epochs, batch_size=a.batch_size, lr=a.lr, tau=a.tau, alpha=a.alpha,
            weights=LossWeights(a.lambda_balance, a.lambda_attr, a.lambda_xent),
            perturb=a.perturb, supervision=a.supervision, freeze_encoder=a.freeze_encoder,
            include_diagonal=a.include_diagonal, pair_scale=a.pair_scale,
            refresh_prior=a.refresh_prior, kmeans_restarts=a.kmeans_restarts, seed=a.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path: str) -> HeadModel:
    try:
        return load_checkpoint(_existing(path))
    except CheckpointError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_init(a) -> int:
    model = _load_model(a.checkpoint)
    target, labels = _target_views(a)
    cfg = _train_config(a)
    if target.k > target.n:
        raise UsageError(f"k={target.k} exceeds the {target.n} target samples")
    if target.k != model.config.k_target or target.d != model.config.d_in:
        raise UsageError(f"{a.target} does not match the checkpoint (d_in={model.config.d_in}, k_target={model.config.k_target})")
    prior = make_prior(model, target, cfg)
    save_prior(prior, a.out)
    log_path = Path(a.log) if a.log else Path(a.out).with_suffix(".init.csv")
    with open(log_path, "w", newline="") as fh:
        _header(fh, {"alpha": cfg.alpha, "tau": cfg.tau, "seed": cfg.seed, "kmeans_restarts": cfg.kmeans_restarts})
        w = csv.writer(fh)
        w.writerow(["n", "k", "baseline_acc", "baseline_nmi"])
        row = [prior.n, prior.k, "", ""]
        if labels is not None:
            ev = evaluate(prior.labels, labels, a.nmi_norm)
            row[2:] = [repr(ev.acc), repr(ev.nmi)]
            print(f"kmeans_baseline_acc={ev.acc:.6f} kmeans_baseline_nmi={ev.nmi:.6f}")
        w.writerow(row)
    return 0


def cmd_train(a) -> int:
    model = _load_model(a.checkpoint)
    source = _load_dataset(a.source)
    target, labels = _target_views(a)
    try:
        prior = load_prior(_existing(a.prior))
    except PriorFormatError as exc:
        raise UsageError(f"{a.prior}: {exc}") from None
    cfg = _train_config(a)
    if not source.labelled:
        raise UsageError(f"{a.source}: joint training needs a labelled source dataset")
    if prior.n != target.n or prior.k != model.config.k_target:
        raise UsageError(f"{a.prior} ({prior.n}x{prior.k}) does not match {a.target} / checkpoint")

    log_path = Path(a.log) if a.log else Path(a.out).with_suffix(".steps.csv")
    epoch_path = log_path.with_name(log_path.stem + ".epochs.csv")
    settings = {
        "tau": cfg.tau, "alpha": cfg.alpha, "lambda_balance": cfg.weights.balance,
        "lambda_attr": cfg.weights.attr, "lambda_xent": cfg.weights.xent, "perturb": cfg.perturb,
        "supervision": cfg.supervision.value, "pair_scale": cfg.pair_scale.value, "epochs": cfg.epochs,
        "batch_size": cfg.batch_size, "lr": cfg.lr, "seed": cfg.seed, "freeze_encoder": cfg.freeze_encoder,
        "include_diagonal": cfg.include_diagonal, "refresh_prior": cfg.refresh_prior,
        "kmeans_restarts": cfg.kmeans_restarts,
    }
    with open(log_path, "w", newline="") as sfh, open(epoch_path, "w", newline="") as efh:
        _header(sfh, settings)
        _header(efh, settings)
        steps, epochs = csv.writer(sfh), csv.writer(efh)
        steps.writerow(["step", *LossReport.FIELDS])
        epochs.writerow(["epoch", *LossReport.FIELDS, "acc", "nmi"])
        counter = iter(range(1, 1 << 62))

        def on_step(rep: LossReport):
            steps.writerow([next(counter), *map(repr, rep.row())])

        def on_epoch(rec):
            extra = ["", ""] if rec.acc is None else [repr(rec.acc), repr(rec.nmi)]
            epochs.writerow([rec.epoch, *map(repr, rec.loss.row()), *extra])
            if rec.acc is not None:
                log.info("epoch %d total=%.5f acc=%.4f nmi=%.4f", rec.epoch, rec.loss.total, rec.acc, rec.nmi)

        train(model, prior, target, source, cfg, eval_labels=labels, on_epoch=on_epoch, on_step=on_step)
    save_checkpoint(model, a.out)
    if labels is not None:
        ev = evaluate(model.predict_target(target.features), labels, a.nmi_norm)
        print(f"final_acc={ev.acc:.6f} final_nmi={ev.nmi:.6f}")
    return 0


def cmd_eval(a) -> int:
    model = _load_model(a.checkpoint)
    target = _load_dataset(a.target)
    if not target.labelled:
        raise UsageError(f"{a.target}: evaluation needs a labelled target file")
    if target.d != model.config.d_in:
        raise UsageError(f"{a.target} has d={target.d}, checkpoint expects {model.config.d_in}")
    pred = model.predict_target(target.features)
    ev = evaluate(pred, target.labels, a.nmi_norm)
    print(f"{ev.acc!r},{ev.nmi!r}")
    if a.contingency:
        for row in ev.contingency:
            print(" ".join(str(int(v)) for v in row))
    if a.oracle:
        from .oracles import brute_force_matching

        try:
            best = brute_force_matching(ev.contingency).value
        except ValueError as exc:
            raise UsageError(f"--oracle: {exc}") from None
        print(f"# oracle_acc={best / target.n!r}")
    return 0


# argument parsing


def _add_common(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lambda-balance", type=float, default=1.0)
    p.add_argument("--lambda-attr", type=float, default=0.1)
    p.add_argument("--lambda-xent", type=float, default=1.0)
    p.add_argument("--perturb", default="noise:0.5")
    p.add_argument("--supervision", choices=[m.value for m in Supervision], default="joint")
    p.add_argument("--pair-scale", choices=[m.value for m in PairScale], default="mean")
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--include-diagonal", action="store_true", help="confidence softmax also covers diagonal pairs")
    p.add_argument("--refresh-prior", type=int, default=0, metavar="E", help="rebuild the prior every E epochs")
    p.add_argument("--kmeans-restarts", type=int, default=10)
    p.add_argument("--eval-labels", action="store_true", help="target labels are used for evaluation only")
    p.add_argument("--nmi-norm", choices=["geometric", "arithmetic", "max"], default="geometric")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="supreme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic source/target pair")
    _add_common(p)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--k-source", type=int, default=4)
    p.add_argument("--k-target", type=int, default=4)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--std", type=float, default=1.5)
    p.add_argument("--shift", type=float, default=8.0)
    p.add_argument("--csv", action="store_true", help="also export CSV copies")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="supervised training on the source domain")
    _add_common(p)
    p.add_argument("--source", default=None)
    p.add_argument("--out", default=None, help="SUP1 checkpoint path")
    p.add_argument("--log")
    p.add_argument("--k-target", type=int, default=None)
    p.add_argument("--widths", default="32", help="comma-separated encoder widths; 'none' for no encoder")
    p.add_argument("--factor-dim", type=int, default=None)
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lambda-attr", type=float, default=0.1)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("init", help="K-means on the pretrained embedding; write the PRI1 prior cache")
    _add_common(p)
    _add_training(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--log")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="joint training with transferred and perturbation pairs")
    _add_common(p)
    _add_training(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--prior", default=None)
    p.add_argument("--source", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--log", help="per-step CSV log (per-epoch log is written next to it)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print acc,nmi of a checkpoint on labelled target data")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--target", default=None)
    p.add_argument("--contingency", action="store_true")
    p.add_argument("--nmi-norm", choices=["geometric", "arithmetic", "max"], default="geometric")
    p.add_argument("--oracle", action="store_true", help="cross-check acc by brute-force matching (k <= 6)")
    p.set_defaults(func=cmd_eval)
    return parser


REQUIRED = {
    "synth": ["out"],
    "pretrain": ["source", "out", "k_target"],
    "init": ["checkpoint", "target", "out"],
    "train": ["checkpoint", "prior", "source", "target", "out"],
    "eval": ["checkpoint", "target"],
}


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    cfg_path = _config_path(argv)
    command = next((t for t in argv if t in REQUIRED), None)
    if cfg_path and command:
        try:
            values = read_config(_existing(cfg_path))
        except UsageError as exc:
            parser.exit(2, f"supreme: error: {exc}\n")
        sub = parser._subparsers._group_actions[0].choices[command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(known) - {"config"})
        if unknown:
            parser.exit(2, f"supreme: error: unknown config keys: {', '.join(unknown)}\n")
        defaults = {}
        for key, text in values.items():
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = text.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = action.type(text) if action.type else text
                except ValueError:
                    parser.exit(2, f"supreme: error: config key {key}: bad value {text!r}\n")
        sub.set_defaults(**defaults)
    args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        parser.exit(2, f"supreme {args.command}: error: missing required option(s): "
                    + ", ".join("--" + k.replace("_", "-") for k in missing) + "\n")
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"supreme: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"supreme: runtime failure: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
