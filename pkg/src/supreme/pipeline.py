"""End-to-end stages: pretrain on source, build the transfer prior, joint training, evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import grad as G
from .data import EmbeddingDataset
from .metrics import ClusterEvaluation, clustering_accuracy, evaluate
from .model import HeadModel, ModelConfig, embed_target, pretrain
from .objective import LossReport, LossWeights, PairScale, Supervision, remedy, total_loss
from .perturb import parse_spec, perturb
from .prior import TransferPrior, build_prior

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    tau: float = 0.5
    alpha: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    perturb: str = "noise:0.5"
    supervision: Supervision = Supervision.JOINT
    freeze_encoder: bool = False
    include_diagonal: bool = False
    pair_scale: PairScale = PairScale.MEAN
    refresh_prior: int = 0
    kmeans_restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        self.supervision = Supervision(self.supervision)
        self.pair_scale = PairScale(self.pair_scale)
        if self.epochs < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1 and lr > 0")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not self.alpha > 0:
            raise ValueError(
                f"alpha must be > 0, got {self.alpha}: the t kernel is undefined at 0, default is 1.0"
            )
        if self.refresh_prior < 0:
            raise ValueError("refresh_prior must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    loss: LossReport
    acc: float | None = None
    nmi: float | None = None


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _mean_report(reports: list[LossReport]) -> LossReport:
    n = sum(r.n for r in reports)
    vals = {f: sum(getattr(r, f) * r.n for r in reports) / n for f in LossReport.FIELDS}
    return LossReport(**vals, n=n)


def make_prior(model: HeadModel, target: EmbeddingDataset, cfg: TrainConfig, seed: int | None = None) -> TransferPrior:
    x = embed_target(model, target)
    return build_prior(
        x, target.k, cfg.alpha, cfg.tau, seed=cfg.seed if seed is None else seed, n_init=cfg.kmeans_restarts
    )


def train(
    model: HeadModel,
    prior: TransferPrior,
    target: EmbeddingDataset,
    source: EmbeddingDataset,
    cfg: TrainConfig,
    eval_labels: np.ndarray | None = None,
    on_epoch=None,
    on_step=None,
) -> list[EpochRecord]:
    """Joint training of the head on target pairs and source labels.

    ``target`` must be unlabelled; ``eval_labels`` are only used to score
    the model after each epoch and never enter a loss.
    """
    if target.labelled:
        raise ValueError("training takes an unlabelled target view; pass held-out labels as eval_labels")
    if not source.labelled:
        raise ValueError("joint training needs a labelled source dataset")
    if prior.n != target.n or prior.k != model.config.k_target:
        raise ValueError(f"prior ({prior.n}x{prior.k}) does not match target ({target.n}, k={model.config.k_target})")
    prior.tau = cfg.tau
    batch_rng, source_rng, noise_rng = _streams(cfg.seed)
    std = target.features.std(axis=0)
    spec = parse_spec(cfg.perturb, std)
    use_perturbation = cfg.supervision is not Supervision.TRANSFER

    params = model.params()
    if cfg.freeze_encoder:
        enc = {id(p) for p in model.encoder_params()}
        params = [p for p in params if id(p) not in enc]
        for p in model.encoder_params():
            p.requires_grad = False
    state = G.AdamState()
    xt, xs, ys = target.features, source.features, source.labels
    source_order = source_rng.permutation(source.n)
    source_pos = 0
    history = []
    try:
        for epoch in range(1, cfg.epochs + 1):
            if cfg.refresh_prior and epoch > 1 and (epoch - 1) % cfg.refresh_prior == 0:
                prior = make_prior(model, target, cfg, seed=cfg.seed + epoch)
            order = batch_rng.permutation(target.n)
            reports = []
            for lo in range(0, target.n, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                if source_pos + len(idx) > source.n:
                    source_order = source_rng.permutation(source.n)
                    source_pos = 0
                sidx = source_order[source_pos : source_pos + len(idx)]
                source_pos += len(idx)

                pw = prior.batch(idx, cfg.include_diagonal)
                r_tilde, w = remedy(pw.r_tilde, pw.w, cfg.supervision, cfg.pair_scale)
                x_pert = perturb(spec, xt[idx], noise_rng) if use_perturbation else None
                loss, report = total_loss(model, r_tilde, w, xt[idx], x_pert, xs[sidx], ys[sidx], cfg.weights)
                G.zero_grad(params)
                G.backward(loss)
                G.adam_step(params, state, cfg.lr)
                reports.append(report)
                if on_step is not None:
                    on_step(report)
            G.zero_grad(params)
            rec = EpochRecord(epoch, _mean_report(reports))
            if eval_labels is not None:
                ev = evaluate(model.predict_target(xt), eval_labels)
                rec.acc, rec.nmi = ev.acc, ev.nmi
            history.append(rec)
            if on_epoch is not None:
                on_epoch(rec)
    finally:
        for p in model.encoder_params():
            p.requires_grad = True
    return history


def evaluate_model(model: HeadModel, target: EmbeddingDataset, labels=None, nmi_norm="geometric") -> ClusterEvaluation:
    truth = target.labels if labels is None else labels
    if truth is None:
        raise ValueError("evaluation needs target labels")
    return evaluate(model.predict_target(target.features), truth, nmi_norm)


@dataclass
class RunResult:
    pretrain_acc: float
    baseline_acc: float
    final_acc: float
    final_nmi: float
    history: list[EpochRecord]


def run_all(
    source: EmbeddingDataset,
    target: EmbeddingDataset,
    target_labels: np.ndarray,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    pretrain_epochs: int | None = None,
    pretrained: HeadModel | None = None,
) -> RunResult:
    """pretrain -> prior -> joint training -> evaluation, all in memory."""
    if pretrained is None:
        model = HeadModel(model_cfg)
        rep = pretrain(
            model,
            source,
            epochs=cfg.epochs if pretrain_epochs is None else pretrain_epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            lambda_attr=cfg.weights.attr,
            seed=cfg.seed,
        )
        pre_acc = rep.final_accuracy
    else:
        model = pretrained.clone()
        pre_acc = float(np.mean(model.predict_source(source.features) == source.labels))
    unl = target.unlabelled()
    prior = make_prior(model, unl, cfg)
    base = clustering_accuracy(prior.labels, target_labels)
    hist = train(model, prior, unl, source, cfg)
    ev = evaluate_model(model, unl, target_labels)
    return RunResult(pre_acc, base, ev.acc, ev.nmi, hist)
