"""Training loop: per-epoch frequency estimation, pseudo-label generation,
refinement and masking, composite loss, optimizer step, evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import adjust, losses
from .adjust import AdjustConfig, FrequencyTable
from .datagen import (
    DatasetSpec,
    RolsslSplits,
    build_splits,
    gen_synthetic_gaussian,
    load_cifar_binary,
    split_off_test,
)
from .evaluation import MetricsReport, group_report
from .model import SGD, Adam, ModelState, backward, forward, init_model, step
from .numerics import softmax, softmax_backward

log = logging.getLogger(__name__)

LOSS_TERMS = ("pair", "ce", "b_ce", "reg", "total")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec
    adjust: AdjustConfig = field(default_factory=AdjustConfig)
    hidden_dim: int = 128
    embed_dim: int = 64
    optimizer: str = "adam"
    lr: float = 5e-4
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 200
    seed: int = 0
    baseline_mode: bool = False
    separation: float = 6.0
    test_per_class: int = 200
    input_size: int | None = None  # S in the scale factor; None means input_dim
    pair_threshold: float = 0.95
    data_path: str | None = None  # binary image records; None means synthetic Gaussians
    test_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")

    def make_optimizer(self):
        if self.optimizer == "sgd":
            return SGD(self.lr, self.momentum)
        return Adam(self.lr)

    @property
    def scale_input_size(self) -> int:
        return self.input_size or self.dataset.input_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"]["regime"] = self.dataset.regime.value
        return d


@dataclass
class RunState:
    model: ModelState
    freq: FrequencyTable | None = None
    omega: np.ndarray | None = None
    weights: np.ndarray | None = None
    epoch: int = 0
    history: list[MetricsReport] = field(default_factory=list)
    loss_history: list[dict] = field(default_factory=list)


@dataclass
class BatchResult:
    components: dict[str, losses.LossValue]
    total: losses.LossValue
    embeddings: np.ndarray
    logits: np.ndarray


def pair_targets(labels, n_labeled: int, embeddings, threshold: float = 0.95):
    """Pairs ``i < j`` and their similarity targets.

    Two labeled rows form a pair with target 1 if they share a label, else 0.
    Any pair involving an unlabeled row is kept only when the embedding
    cosine similarity exceeds ``threshold``, with target 1.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    n = z.shape[0]
    unit = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    cos = unit @ unit.T
    i, j = np.triu_indices(n, k=1)
    both_labeled = j < n_labeled
    y = np.asarray(labels, dtype=np.int64)
    same = np.zeros(i.size, dtype=bool)
    same[both_labeled] = y[i[both_labeled]] == y[j[both_labeled]]
    keep = both_labeled | (cos[i, j] > threshold)
    target = np.where(both_labeled, same, True).astype(np.float64)
    return np.stack([i[keep], j[keep]], axis=1), target[keep]


def batch_loss(model: ModelState, xl, yl, xu, omega, weights, cfg: AdjustConfig,
               pair_threshold: float = 0.95) -> BatchResult:
    """Forward a mixed batch and assemble every loss term with gradients
    w.r.t. the concatenated logits (labeled rows first)."""
    xl = np.asarray(xl, dtype=np.float64)
    yl = np.asarray(yl, dtype=np.int64)
    nl = xl.shape[0]
    x = np.concatenate([xl, np.asarray(xu, dtype=np.float64)])
    z, f = forward(model, x)
    n, c_t = f.shape
    c_k = omega.size
    probs = softmax(f)
    fl, fu = f[:nl], f[nl:]

    def full(grad_l=None, grad_u=None):
        g = np.zeros_like(f)
        if grad_l is not None:
            g[:nl, :grad_l.shape[1]] = grad_l
        if grad_u is not None:
            g[nl:] = grad_u
        return g

    pairs, s = pair_targets(yl, nl, z, pair_threshold)
    lp = losses.pairwise_loss(probs, pairs, s)
    pair = losses.LossValue(lp.value, softmax_backward(probs, lp.grad))

    # plain branch: true labels, and thresholded argmax pseudo-labels
    ce_l = losses.ce_loss(fl, yl)
    q = np.argmax(fu, axis=1)
    mask_plain = adjust.confidence_mask(fu, cfg.rho) if fu.shape[0] else np.zeros(0, dtype=np.int64)
    ce_u = losses.masked_pseudo_ce(fu, q, mask_plain)
    ce = losses.LossValue(ce_l.value + ce_u.value, full(ce_l.grad, ce_u.grad))

    # adjusted branch
    bl = losses.balanced_ce_labeled(fl[:, :c_k], yl, omega, cfg.tau_1)
    f_hat = adjust.scale_logits(weights, fu)
    q_ref = adjust.refine_pseudo_label(fu, omega, cfg.tau_2)
    mask = adjust.confidence_mask(f_hat, cfg.rho) if fu.shape[0] else np.zeros(0, dtype=np.int64)
    bu = losses.masked_pseudo_ce(f_hat, q_ref, mask)
    b_ce = losses.LossValue(bl.value + bu.value, full(bl.grad, bu.grad * weights))

    lr_ = losses.entropy_reg(probs[nl:] if n > nl else probs)
    reg_grad = softmax_backward(probs[nl:], lr_.grad) if n > nl else softmax_backward(probs, lr_.grad)
    reg = losses.LossValue(lr_.value, full(None, reg_grad) if n > nl else reg_grad)

    comps = {"pair": pair, "ce": ce, "b_ce": b_ce, "reg": reg}
    for name, lv in comps.items():
        if not np.isfinite(lv.value):
            raise TrainingError(f"non-finite {name} loss")
    total = losses.total_loss(pair, ce, b_ce, reg, cfg.lambda_1, cfg.lambda_2)
    return BatchResult(comps, total, z, f)


def predict(model: ModelState, x, batch: int = 4096) -> np.ndarray:
    out = [np.argmax(forward(model, x[i:i + batch])[1], axis=1) for i in range(0, x.shape[0], batch)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def refresh_adjustment(state: RunState, splits: RolsslSplits, cfg: ExperimentConfig) -> None:
    """Re-estimate unlabeled class ratios from current predictions and rebuild
    the known-class margins and per-class logit weights."""
    c_t = splits.c_t
    counts = splits.labeled_counts()
    ratios = adjust.estimate_frequencies(predict(state.model, splits.unlabeled_x), c_t)
    state.freq = FrequencyTable(counts, ratios)
    if cfg.baseline_mode:
        state.omega = np.ones(splits.c_k)
        state.weights = np.ones(c_t)
    else:
        state.omega = adjust.compute_omega(counts, c_t, cfg.scale_input_size, cfg.adjust)
        state.weights = adjust.second_stage_weights(ratios, cfg.adjust.alpha, cfg.adjust.beta)


def train_epoch(state: RunState, splits: RolsslSplits, cfg: ExperimentConfig) -> dict[str, float]:
    """One pass over the unlabeled pool, with labeled rows spread evenly over
    the same number of steps. Updates ``state`` in place and returns the mean
    of each loss term."""
    refresh_adjustment(state, splits, cfg)
    rng = np.random.default_rng([cfg.seed, state.epoch, 17])
    n_u = splits.unlabeled_x.shape[0]
    n_l = splits.labeled_x.shape[0]
    perm_u = rng.permutation(n_u)
    perm_l = rng.permutation(n_l)
    steps = max(1, math.ceil(n_u / cfg.batch_size))
    bl = math.ceil(n_l / steps)
    opt = cfg.make_optimizer()
    sums = dict.fromkeys(LOSS_TERMS, 0.0)
    for s in range(steps):
        iu = perm_u[s * cfg.batch_size:(s + 1) * cfg.batch_size]
        il = perm_l[(s * bl) % n_l:(s * bl) % n_l + bl]
        try:
            res = batch_loss(
                state.model, splits.labeled_x[il], splits.labeled_y[il], splits.unlabeled_x[iu],
                state.omega, state.weights, cfg.adjust, cfg.pair_threshold,
            )
        except TrainingError as e:
            raise TrainingError(f"epoch {state.epoch} step {s}: {e}") from None
        for name, lv in {**res.components, "total": res.total}.items():
            sums[name] += lv.value
        x = np.concatenate([splits.labeled_x[il], splits.unlabeled_x[iu]])
        grads = backward(state.model, x, res.total.grad)
        state.model = step(state.model, grads, opt)
    state.epoch += 1
    stats = {k: v / steps for k, v in sums.items()}
    state.loss_history.append(stats)
    return stats


def evaluate(model: ModelState, x, truth, c_k: int, c_t: int, epoch: int) -> MetricsReport:
    return group_report(predict(model, x), truth, c_k, c_t, epoch)


def evaluate_unlabeled(model: ModelState, splits: RolsslSplits, epoch: int = 0) -> MetricsReport:
    """Transductive scores on the unlabeled pool; the only reader of its ground truth."""
    return evaluate(model, splits.unlabeled_x, splits.hidden_truth_for_eval(), splits.c_k, splits.c_t, epoch)


def make_data(cfg: ExperimentConfig):
    """Splits plus a balanced held-out test set.

    Synthetic data draws the test set from the same class means. For image
    records the test set comes from ``test_path`` when given, otherwise from
    the tail of each class pool.
    """
    spec = cfg.dataset
    if cfg.data_path is not None:
        pools = load_cifar_binary(cfg.data_path)
        if cfg.test_path is not None:
            test_pools = load_cifar_binary(cfg.test_path)
            per = min(cfg.test_per_class, min(len(p) for p in test_pools[:spec.c_t]))
            test_x = np.concatenate([p[:per] for p in test_pools[:spec.c_t]])
            test_y = np.repeat(np.arange(spec.c_t), per)
            return build_splits(spec, pools), test_x, test_y
        train, test_x, test_y = split_off_test(pools[:spec.c_t], cfg.test_per_class)
        return build_splits(spec, train), test_x, test_y
    need = max(
        int(spec.labeled_counts().max() + spec.unlabeled_known_counts().max()),
        int(spec.novel_counts().max()) if spec.c_n else 0,
    )
    pools = gen_synthetic_gaussian(spec.c_t, spec.input_dim, cfg.separation, spec.seed, need + cfg.test_per_class)
    train, test_x, test_y = split_off_test(pools, cfg.test_per_class)
    return build_splits(spec, train), test_x, test_y


@dataclass
class RunResult:
    history: list[MetricsReport]
    loss_history: list[dict]
    state: RunState
    unlabeled_report: MetricsReport

    @property
    def final(self) -> MetricsReport:
        return self.history[-1]


def run_experiment(cfg: ExperimentConfig, splits: RolsslSplits | None = None, test=None) -> RunResult:
    """Train for ``cfg.epochs`` epochs, scoring the held-out test set after each."""
    if splits is None:
        splits, test_x, test_y = make_data(cfg)
    else:
        test_x, test_y = test
    model = init_model(splits.input_dim, cfg.hidden_dim, cfg.embed_dim, splits.c_t, cfg.seed)
    state = RunState(model)
    for _ in range(cfg.epochs):
        stats = train_epoch(state, splits, cfg)
        report = evaluate(state.model, test_x, test_y, splits.c_k, splits.c_t, state.epoch)
        state.history.append(report)
        log.info("epoch %d loss %.4f %s", state.epoch, stats["total"], report.to_record())
    return RunResult(state.history, state.loss_history, state, evaluate_unlabeled(state.model, splits, state.epoch))
