"""
The semi-supervised training loop: SGD with momentum and milestone decay over
the weighted sum of cross entropy, feature contrast and semantic contrast.
"""

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from semisup.contrast.augment import IMAGE_KINDS, AugmentPolicy, make_view_pair
from semisup.contrast.config import (
    DataConfig,
    ExperimentConfig,
    ModelConfig,
    TrainConfig,
    config,
    statsd,
)
from semisup.contrast.data import (
    Batch,
    ChannelStats,
    Dataset,
    SemiSplit,
    batch_iter,
    compute_stats,
    split_semi,
    standardize,
)
from semisup.contrast.data.blobs import synth_blobs
from semisup.contrast.data.cifar import load_cifar10
from semisup.contrast.diffcore import GradCheckReport, Tape, backward, grad_check
from semisup.contrast.exc import (
    ConfigurationError,
    ContractError,
    DomainError,
    NonFiniteGradient,
    ShapeError,
    TrainingDiverged,
)
from semisup.contrast.losses import (
    LossBreakdown,
    cross_entropy,
    feature_contrast,
    semantic_contrast,
    weighted_total,
)
from semisup.contrast.model import (
    ModelDims,
    ModelParams,
    ParamNodes,
    bind,
    classify_graph,
    encode,
    encode_graph,
    flatten_samples,
    init_params,
    predict,
)
from semisup.contrast.numerics import Rng, Tensor
from semisup.contrast.utils.checkpoint import save_checkpoint
from semisup.contrast.utils.csvio import METRICS_HEADER, features_header, write_csv

DIVERGENCE_FACTOR = 10.0
DIVERGENCE_EPOCHS = 5
EVAL_CHUNK = 1024


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """lr0 * decay_factor ** (number of milestones <= epoch); epochs count from 0."""
    if epoch < 0:
        raise DomainError("epoch must be >= 0, got {}".format(epoch))
    decays = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.lr0 * cfg.decay_factor**decays


@dataclass
class SgdState:
    velocity: Dict[str, Tensor]
    step_count: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "SgdState":
        return cls(velocity={name: np.zeros_like(a) for name, a in params.named_arrays()})


def sgd_step(
    params: ModelParams,
    grads: Dict[str, Tensor],
    state: SgdState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[ModelParams, SgdState]:
    """
    v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.

    Returns new params and state; the inputs are not modified.
    """
    updated = {}
    velocity = {}
    for name, p in params.named_arrays():
        if name not in grads:
            raise ContractError("no gradient for {}".format(name))
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(
                "gradient for {} has shape {}, expected {}".format(name, g.shape, p.shape)
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
        v = momentum * state.velocity[name] + g + weight_decay * p
        velocity[name] = v
        updated[name] = p - lr * v
    return (
        ModelParams.from_named(params.dims, updated),
        SgdState(velocity=velocity, step_count=state.step_count + 1),
    )


@dataclass(frozen=True)
class LossNodes:
    total: int
    ce: Optional[int]
    feature_contrast: Optional[int]
    semantic_contrast: Optional[int]


def build_total_loss(
    tape: Tape,
    nodes: ParamNodes,
    view1: int,
    view2: Optional[int],
    labels: Sequence[int],
    cfg: TrainConfig,
) -> LossNodes:
    """
    Record the weighted objective on the tape. Both views go through the same
    parameters; cross entropy uses the labeled rows of the clean view.
    Disabled contrast terms are not recorded at all.
    """
    w_ce, _, _ = cfg.loss_weights
    z = encode_graph(tape, nodes, view1)
    q = classify_graph(tape, nodes, z)

    ce = None
    if len(labels):
        ce = cross_entropy(tape, q, labels)
    elif w_ce > 0:
        raise ContractError("batch has no labeled samples but w_ce > 0")

    lz = lq = None
    if cfg.use_feature_contrast or cfg.use_semantic_contrast:
        if view2 is None:
            raise ContractError("contrast terms need an augmented view")
        z_aug = encode_graph(tape, nodes, view2)
        if cfg.use_feature_contrast:
            lz = feature_contrast(tape, z, z_aug, cfg.tau_f, cfg.normalize)
        if cfg.use_semantic_contrast:
            q_aug = classify_graph(tape, nodes, z_aug)
            lq = semantic_contrast(tape, q, q_aug, cfg.tau_s, cfg.normalize)

    total = weighted_total(tape, ce, lz, lq, cfg.loss_weights)
    return LossNodes(total=total, ce=ce, feature_contrast=lz, semantic_contrast=lq)


def _value(tape: Tape, node: Optional[int]) -> float:
    return 0.0 if node is None else float(tape.value(node))


def train_step(
    params: ModelParams,
    batch: Batch,
    cfg: TrainConfig,
    rng: Rng,
    policy: Optional[AugmentPolicy] = None,
) -> Tuple[Dict[str, Tensor], LossBreakdown]:
    """
    Gradients of the total loss for one batch.

    :param rng: The augmentation stream; each sample draws from
        `rng.derive(dataset_index)`.
    :return: (gradient per parameter name, loss values)
    """
    policy = policy or AugmentPolicy()
    tape = Tape()
    nodes = bind(tape, params)

    view1 = tape.constant(flatten_samples(batch.x))
    view2 = None
    if cfg.use_feature_contrast or cfg.use_semantic_contrast:
        _, augmented = make_view_pair(batch.x, rng, policy, sample_keys=batch.indices)
        view2 = tape.constant(flatten_samples(augmented))

    losses = build_total_loss(tape, nodes, view1, view2, batch.labels, cfg)
    grads = backward(tape.finalize(), losses.total)
    breakdown = LossBreakdown(
        ce=_value(tape, losses.ce),
        feature_contrast=_value(tape, losses.feature_contrast),
        semantic_contrast=_value(tape, losses.semantic_contrast),
        total=_value(tape, losses.total),
        weights=cfg.loss_weights,
    )
    return {name: grads[node] for name, node in nodes.by_name.items()}, breakdown


def evaluate(params: ModelParams, ds: Dataset) -> float:
    """Fraction of samples whose arg-max class matches the label."""
    correct = 0
    for start in range(0, len(ds), EVAL_CHUNK):
        chunk = slice(start, start + EVAL_CHUNK)
        correct += int(np.sum(predict(params, ds.x[chunk]) == ds.y[chunk]))
    return correct / len(ds)


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    lr: float
    loss_total: float
    loss_ce: float
    loss_z: float
    loss_q: float
    train_acc: float
    test_acc: float
    wall_ms: int = 0

    def as_row(self) -> Tuple:
        return (
            self.epoch,
            self.lr,
            self.loss_total,
            self.loss_ce,
            self.loss_z,
            self.loss_q,
            self.train_acc,
            self.test_acc,
            self.wall_ms,
        )


def write_metrics_csv(
    path: str, rows: Iterable[MetricsRow], banner: Iterable[Tuple[str, str]] = ()
) -> str:
    return write_csv(path, METRICS_HEADER, (r.as_row() for r in rows), banner=banner)


@dataclass
class FitResult:
    params: ModelParams
    metrics: List[MetricsRow]
    epoch_losses: List[float] = field(default_factory=list)


def model_dims(model_cfg: ModelConfig, ds: Dataset) -> ModelDims:
    return ModelDims(
        input_dim=ds.input_dim,
        feature_dim=model_cfg.feature_dim,
        classes=ds.classes,
        hidden=model_cfg.hidden,
    )


class Trainer:
    """
    Runs the full optimization for one configuration.

    Everything random derives from `Rng(config.seed)`, so two runs with the
    same configuration and data produce identical parameters and metrics.
    """

    def __init__(
        self,
        train_config: TrainConfig,
        policy: Optional[AugmentPolicy] = None,
        model: Optional[ModelConfig] = None,
        record_wall_time: Optional[bool] = None,
        logger: logging.Logger = None,
    ):
        self.config = train_config
        self.policy = policy or AugmentPolicy()
        self.model = model or ModelConfig()
        if record_wall_time is None:
            record_wall_time = config.RECORD_WALL_TIME
        self.record_wall_time = record_wall_time
        self.logger = logger or logging.getLogger(__name__)

    def initial_params(self, ds: Dataset) -> ModelParams:
        return init_params(Rng(self.config.seed).derive("init"), model_dims(self.model, ds))

    def fit(
        self,
        ds: Dataset,
        split: SemiSplit,
        test: Optional[Dataset] = None,
        params: Optional[ModelParams] = None,
        checkpoint_path: Optional[str] = None,
    ) -> FitResult:
        if self.policy.kind in IMAGE_KINDS and not ds.is_image:
            raise ConfigurationError(
                "augment kind {} needs image samples, got shape {}".format(
                    self.policy.kind, ds.x.shape[1:]
                )
            )
        cfg = self.config
        root = Rng(cfg.seed)
        params = params or self.initial_params(ds)
        state = SgdState.zeros(params)
        labeled = ds.subset(split.labeled_idx)
        started = time.monotonic()

        metrics: List[MetricsRow] = []
        epoch_losses: List[float] = []
        initial_total = None
        strikes = 0

        for epoch in range(cfg.epochs):
            lr = lr_at(cfg, epoch)
            augment_rng = root.derive("augment", epoch)
            sums = np.zeros(4)
            steps = 0
            for batch in batch_iter(ds, split, cfg.batch, root.derive("shuffle", epoch)):
                grads, losses = train_step(params, batch, cfg, augment_rng, self.policy)
                if not math.isfinite(losses.total):
                    self._diverged(epoch + 1, losses.total)
                params, state = sgd_step(
                    params, grads, state, lr, cfg.momentum, cfg.weight_decay
                )
                sums += (
                    losses.total,
                    losses.ce,
                    losses.feature_contrast,
                    losses.semantic_contrast,
                )
                steps += 1
                self.logger.debug(
                    "epoch {} step {}: total={:.6f} ce={:.6f} z={:.6f} q={:.6f}".format(
                        epoch + 1,
                        steps,
                        losses.total,
                        losses.ce,
                        losses.feature_contrast,
                        losses.semantic_contrast,
                    )
                )
            total, ce, lz, lq = (float(v) for v in sums / steps)
            epoch_losses.append(total)

            if initial_total is None:
                initial_total = total
            elif total > DIVERGENCE_FACTOR * initial_total:
                strikes += 1
                if strikes >= DIVERGENCE_EPOCHS:
                    self._diverged(epoch + 1, total)
            else:
                strikes = 0

            number = epoch + 1
            if number == 1 or number % cfg.eval_every == 0 or number == cfg.epochs:
                row = MetricsRow(
                    epoch=number,
                    lr=lr,
                    loss_total=total,
                    loss_ce=ce,
                    loss_z=lz,
                    loss_q=lq,
                    train_acc=evaluate(params, labeled),
                    test_acc=evaluate(params, test) if test is not None else float("nan"),
                    wall_ms=(
                        int(round((time.monotonic() - started) * 1000))
                        if self.record_wall_time
                        else 0
                    ),
                )
                metrics.append(row)
                self._report(row)

        if checkpoint_path:
            save_checkpoint(params, checkpoint_path)
        return FitResult(params=params, metrics=metrics, epoch_losses=epoch_losses)

    def _report(self, row: MetricsRow):
        self.logger.info(
            "epoch {}/{} lr={:.4g} loss={:.6f} (ce={:.6f} z={:.6f} q={:.6f}) "
            "train_acc={:.4f} test_acc={:.4f}".format(
                row.epoch,
                self.config.epochs,
                row.lr,
                row.loss_total,
                row.loss_ce,
                row.loss_z,
                row.loss_q,
                row.train_acc,
                row.test_acc,
            )
        )
        statsd.gauge("train.loss_total", row.loss_total)
        statsd.gauge("train.loss_ce", row.loss_ce)
        statsd.gauge("train.loss_z", row.loss_z)
        statsd.gauge("train.loss_q", row.loss_q)
        if not math.isnan(row.test_acc):
            statsd.gauge("train.test_acc", row.test_acc)

    def _diverged(self, epoch: int, loss_total: float):
        statsd.increment("train.diverged")
        self.logger.error("Training diverged at epoch {}: loss_total={!r}".format(epoch, loss_total))
        raise TrainingDiverged(epoch, loss_total)


def fit(
    cfg: TrainConfig,
    ds: Dataset,
    split: SemiSplit,
    test: Optional[Dataset] = None,
    policy: Optional[AugmentPolicy] = None,
    model: Optional[ModelConfig] = None,
    checkpoint_path: Optional[str] = None,
) -> Tuple[ModelParams, List[MetricsRow]]:
    result = Trainer(cfg, policy=policy, model=model).fit(
        ds, split, test=test, checkpoint_path=checkpoint_path
    )
    return result.params, result.metrics


@dataclass(frozen=True)
class PreparedData:
    train: Dataset
    test: Optional[Dataset]
    split: SemiSplit
    stats: Optional[ChannelStats] = None


def load_datasets(
    data_cfg: DataConfig, seed: int, cifar_dir: Optional[str] = None
) -> Tuple[Dataset, Optional[Dataset]]:
    """Raw (unstandardized) train and test sets for a data configuration."""
    root = Rng(seed).derive("data")
    if data_cfg.kind == "blobs":
        train = synth_blobs(
            root.derive("train"),
            data_cfg.classes,
            data_cfg.per_class,
            data_cfg.dim,
            data_cfg.spread,
            data_cfg.separation,
            name="blobs-train",
        )
        test = None
        if data_cfg.test_per_class > 0:
            test = synth_blobs(
                root.derive("test"),
                data_cfg.classes,
                data_cfg.test_per_class,
                data_cfg.dim,
                data_cfg.spread,
                data_cfg.separation,
                name="blobs-test",
            )
        return train, test

    directory = data_cfg.path or cifar_dir or config.CIFAR10_DIR
    test_subset = max(1, data_cfg.subset // 5) if data_cfg.subset else None
    return load_cifar10(directory, subset=data_cfg.subset, test_subset=test_subset)


def prepare_data(cfg: ExperimentConfig, cifar_dir: Optional[str] = None) -> PreparedData:
    """Datasets, standardization and the labeled split for an experiment."""
    train, test = load_datasets(cfg.data, cfg.train.seed, cifar_dir)
    stats = None
    if cfg.data.standardize:
        stats = compute_stats(train.x)
        train = standardize(train, stats)
        if test is not None:
            test = standardize(test, stats)
    split = split_semi(train, cfg.data.labels_per_class, Rng(cfg.train.seed).derive("split"))
    return PreparedData(train=train, test=test, split=split, stats=stats)


def stats_banner(stats: Optional[ChannelStats]) -> List[Tuple[str, str]]:
    if stats is None:
        return []
    return [
        ("stats.channel_mean", ",".join("%.9g" % v for v in stats.mean)),
        ("stats.channel_std", ",".join("%.9g" % v for v in stats.std)),
    ]


def export_features(params: ModelParams, ds: Dataset, path: str) -> str:
    """Write `sample_index,label,f0..f(p-1)` with one row per sample."""
    z = encode(params, ds.x)
    rows = (
        [i, int(label)] + [float(v) for v in features]
        for i, (label, features) in enumerate(zip(ds.y, z))
    )
    return write_csv(path, features_header(z.shape[1]), rows)


def _random_train_config(rng: Rng) -> TrainConfig:
    g = rng.generator
    return TrainConfig(
        tau_f=float(g.uniform(0.2, 1.0)),
        tau_s=float(g.uniform(0.3, 1.5)),
        w_ce=float(g.uniform(0.2, 2.0)),
        w_z=float(g.uniform(0.2, 2.0)),
        w_q=float(g.uniform(0.2, 2.0)),
        normalize=bool(g.random() < 0.75),
    )


def check_total_loss_gradients(
    seed: int = 0,
    trials: int = 20,
    batch: int = 16,
    h: float = 1e-5,
    tol: float = 1e-4,
) -> List[Tuple[str, GradCheckReport]]:
    """
    Grad-check the full objective (model and all three losses) with respect
    to every parameter array, on `trials` random configurations.
    """
    results = []
    for trial in range(trials):
        rng = Rng(seed).derive("gradcheck", trial)
        g = rng.generator
        classes = int(g.integers(2, 5))
        hidden = tuple(int(w) for w in g.integers(2, 6, size=int(g.integers(0, 3))))
        dims = ModelDims(
            input_dim=int(g.integers(2, 6)),
            feature_dim=int(g.integers(2, 5)),
            classes=classes,
            hidden=hidden,
        )
        params = init_params(rng.derive("init"), dims)
        x = g.normal(size=(batch, dims.input_dim))
        x_aug = x + g.normal(0.0, 0.1, size=x.shape)
        labels = g.integers(0, classes, size=int(g.integers(1, batch // 2 + 1)))
        cfg = _random_train_config(rng.derive("config"))

        for name, array in params.named_arrays():

            def fn(tape, leaf, name=name):
                nodes = bind(tape, params, trainable=False, recorded={name: leaf})
                return build_total_loss(
                    tape, nodes, tape.constant(x), tape.constant(x_aug), labels, cfg
                ).total

            report = grad_check(fn, array, h=h, tol=tol)
            results.append(("trial {} {}".format(trial, name), report))
    return results


ARMS: Dict[str, Tuple[bool, bool]] = {
    "full": (True, True),
    "no_feature_contrast": (False, True),
    "no_semantic_contrast": (True, False),
    "supervised_only": (False, False),
}


@dataclass(frozen=True)
class ArmSummary:
    labels_per_class: int
    arm: str
    seeds: Tuple[int, ...]
    accuracies: Tuple[float, ...]

    @property
    def mean_test_acc(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_test_acc(self) -> float:
        return float(np.std(self.accuracies))


def _arm_overrides(arm: str, seed: int, labels_per_class: int) -> Dict[str, str]:
    use_z, use_q = ARMS[arm]
    return {
        "seed": str(seed),
        "train.use_feature_contrast": "true" if use_z else "false",
        "train.use_semantic_contrast": "true" if use_q else "false",
        "data.labels_per_class": str(labels_per_class),
    }


def run_ablation(
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    labels_per_class: Optional[Sequence[int]] = None,
    arms: Sequence[str] = tuple(ARMS),
    output_dir: Optional[str] = None,
    logger: logging.Logger = None,
) -> List[ArmSummary]:
    """
    Train every arm for every seed (and labeled-set size) and summarize the
    final test accuracy. Per-run metrics CSVs go under `output_dir` when given.
    """
    logger = logger or logging.getLogger(__name__)
    unknown = set(arms) - set(ARMS)
    if unknown:
        raise DomainError("unknown ablation arms: {}".format(sorted(unknown)))
    summaries = []
    for k in labels_per_class or (cfg.data.labels_per_class,):
        for arm in arms:
            accuracies = []
            for seed in seeds:
                run_cfg = cfg.with_overrides(_arm_overrides(arm, seed, k))
                data = prepare_data(run_cfg)
                result = Trainer(
                    run_cfg.train, policy=run_cfg.augment, model=run_cfg.model, logger=logger
                ).fit(data.train, data.split, test=data.test)
                accuracy = evaluate(
                    result.params, data.test if data.test is not None else data.train
                )
                accuracies.append(accuracy)
                logger.info(
                    "labels_per_class={} arm={} seed={}: test_acc={:.4f}".format(
                        k, arm, seed, accuracy
                    )
                )
                if output_dir:
                    write_metrics_csv(
                        os.path.join(output_dir, str(k), arm, "seed{}.csv".format(seed)),
                        result.metrics,
                        banner=run_cfg.to_flat() + stats_banner(data.stats),
                    )
            summaries.append(ArmSummary(k, arm, tuple(seeds), tuple(accuracies)))
    return summaries


def ordering_holds(summaries: Sequence[ArmSummary]) -> bool:
    """mean(full) >= mean(supervised_only) for every labeled-set size."""
    by_key = {(s.labels_per_class, s.arm): s.mean_test_acc for s in summaries}
    for (k, arm), mean in by_key.items():
        if arm == "full" and (k, "supervised_only") in by_key:
            if mean < by_key[(k, "supervised_only")]:
                return False
    return True


@dataclass(frozen=True)
class MilestoneStep:
    milestone: int
    epoch_before: int
    loss_before: float
    epoch_after: int
    loss_after: float

    @property
    def non_increasing(self) -> bool:
        return self.loss_after <= self.loss_before


@dataclass(frozen=True)
class ConvergenceReport:
    first_epoch: int
    first_loss: float
    last_epoch: int
    last_loss: float
    milestones: Tuple[MilestoneStep, ...]

    @property
    def decreased(self) -> bool:
        return self.last_loss < self.first_loss


def convergence_report(rows: Sequence[MetricsRow], milestones: Sequence[int]) -> ConvergenceReport:
    """
    First and last logged total loss and the loss on either side of each lr
    milestone. A milestone m first applies in epoch m + 1 (epochs in metrics
    count from 1); rows nearest to that boundary stand in when not every
    epoch was logged.
    """
    if not rows:
        raise ContractError("no metrics rows")
    steps = []
    for m in milestones:
        before = [r for r in rows if r.epoch <= m]
        after = [r for r in rows if r.epoch >= m + 1]
        if before and after:
            steps.append(
                MilestoneStep(
                    milestone=m,
                    epoch_before=before[-1].epoch,
                    loss_before=before[-1].loss_total,
                    epoch_after=after[0].epoch,
                    loss_after=after[0].loss_total,
                )
            )
    return ConvergenceReport(
        first_epoch=rows[0].epoch,
        first_loss=rows[0].loss_total,
        last_epoch=rows[-1].epoch,
        last_loss=rows[-1].loss_total,
        milestones=tuple(steps),
    )
