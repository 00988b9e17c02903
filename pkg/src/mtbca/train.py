"""Losses, uncertainty-weighted joint objective, LR schedule and the training loop."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Adam, Tensor
from .errors import ConfigError, DataError, DimensionError, NumericError, TrainingError
from .model import MTBCACNN

log = logging.getLogger(__name__)


# losses


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c}): min={labels.min()} max={labels.max()}")
    onehot = np.zeros((n, c), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return -(ag.log_softmax(logits, axis=-1) * Tensor(onehot)).sum() / n


def mse_recon(recon, target):
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=recon.dtype))
    if recon.shape != target.shape:
        raise DimensionError(f"reconstruction {recon.shape} vs target {target.shape}")
    diff = recon - target
    return (diff * diff).mean()


@dataclass
class UncertaintyWeights:
    """Learned log-variances ``s = log rho^2`` for the two task losses."""

    s_cls: Tensor
    s_recon: Tensor

    @classmethod
    def create(cls, s_cls=0.0, s_recon=0.0, dtype=np.float32):
        return cls(
            Tensor(np.array(s_cls, dtype=dtype), requires_grad=True),
            Tensor(np.array(s_recon, dtype=dtype), requires_grad=True),
        )

    def tensors(self):
        return {"s_cls": self.s_cls, "s_recon": self.s_recon}

    def lambdas(self):
        """Effective task weights ``exp(-s)/2``."""
        return 0.5 * math.exp(-float(self.s_cls.data)), 0.5 * math.exp(-float(self.s_recon.data))

    def rhos(self):
        return math.exp(0.5 * float(self.s_cls.data)), math.exp(0.5 * float(self.s_recon.data))


def total_loss(l1, l2=None, uw=None, fixed=None):
    """Combine task losses.

    With ``uw``: ``exp(-s_c) L1/2 + exp(-s_r) L2/2 + (s_c + s_r)/2``.
    With ``fixed=(lam0, lam1)``: the plain weighted sum. With no ``l2``: ``L1``.
    """
    if l2 is None:
        return l1
    if fixed is not None:
        lam0, lam1 = fixed
        return l1 * lam0 + l2 * lam1
    if uw is None:
        raise ConfigError("total_loss needs either uncertainty weights or fixed lambdas")
    half = 0.5
    return (
        ag.exp(-uw.s_cls) * l1 * half
        + ag.exp(-uw.s_recon) * l2 * half
        + (uw.s_cls + uw.s_recon) * half
    )


# schedule and config


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 100
    lr_initial: float = 1e-3
    lr_after: float = 1e-4
    lr_step_epoch: int = 30
    seed: int = 0
    shuffle: bool = True
    # "uncertainty" learns s terms; "fixed" uses lambda_cls/lambda_recon
    weighting: str = "uncertainty"
    lambda_cls: float = 1.0
    lambda_recon: float = 1.0
    early_stop: bool = False
    patience: int = 15

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch statistics, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.weighting not in ("uncertainty", "fixed"):
            raise ConfigError(f"weighting must be 'uncertainty' or 'fixed', got {self.weighting!r}")
        if self.lr_initial <= 0 or self.lr_after <= 0:
            raise ConfigError("learning rates must be positive")

    def to_dict(self):
        return asdict(self)


def lr_schedule(epoch, config=TrainConfig()):
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return config.lr_initial if epoch < config.lr_step_epoch else config.lr_after


# history


HISTORY_COLUMNS = ("epoch", "L1", "L2", "L_total", "acc", "rho_cls", "rho_recon", "lr")


@dataclass
class EpochRecord:
    epoch: int
    L1: float
    L2: float
    L_total: float
    acc: float
    rho_cls: float
    rho_recon: float
    lr: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:])) for r in rows])


@dataclass
class TrainResult:
    model: MTBCACNN
    uncertainty: UncertaintyWeights
    history: TrainHistory
    stopped_early: bool = False

    def save(self, path, meta=None):
        from .checkpoint import save_checkpoint

        save_checkpoint(path, self.model, self.uncertainty, meta)


# loop


def accuracy(model, features, labels, batch_size=64):
    if len(labels) == 0:
        return float("nan")
    pred = model.predict_proba(features, batch_size).argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def _batches(order, size):
    """Consecutive slices of ``order``; a lone trailing sample joins the previous batch."""
    bounds = list(range(0, len(order), size)) + [len(order)]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < 2:
        del bounds[-2]
    return [order[a:b] for a, b in zip(bounds, bounds[1:])]


def train_step(model, uw, opt, xb, yb, config=TrainConfig()):
    """One forward/backward/Adam update; returns ``(L1, L2, L_total)`` as floats."""
    x = Tensor(xb)
    logits, recon = model(x)
    l1 = cross_entropy(logits, yb)
    l2 = mse_recon(recon, x) if recon is not None else None
    fixed = (config.lambda_cls, config.lambda_recon) if config.weighting == "fixed" else None
    loss = total_loss(l1, l2, uw, fixed)
    if not np.isfinite(loss.data):
        raise NumericError(f"non-finite total loss {float(loss.data)}")
    opt.zero_grad()
    loss.backward()
    opt.step()
    return float(l1.data), (float(l2.data) if l2 is not None else float("nan")), float(loss.data)


def train(model_config, features, labels, config=TrainConfig(), callback=None, model=None):
    """Fit a fresh model (or ``model``) on ``features[N,2,t,f]`` / ``labels[N]``.

    ``callback(record)`` runs after every epoch; returning True stops training.
    Train accuracy in the history is an eval-mode pass over the whole train set.
    """
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) == 0:
        raise DataError("training set is empty")
    if len(features) != len(labels):
        raise DimensionError(f"{len(features)} feature tensors but {len(labels)} labels")
    if labels.min() < 0 or labels.max() >= model_config.num_classes:
        raise DataError(f"labels must lie in [0, {model_config.num_classes})")

    model = model or MTBCACNN(model_config, seed=config.seed, dtype=np.float32)
    model.train()
    uw = UncertaintyWeights.create()
    params = dict(model.parameters())
    learn_s = model_config.enable_reconstruction and config.weighting == "uncertainty"
    if learn_s:
        params.update({f"uncertainty.{k}": v for k, v in uw.tensors().items()})
    opt = Adam(params, lr=lr_schedule(0, config))
    order_rng = np.random.default_rng(config.seed + 2)
    history = TrainHistory()
    best, stale, stopped = math.inf, 0, False
    n = len(labels)

    for epoch in range(config.epochs):
        opt.lr = lr_schedule(epoch, config)
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        sums = np.zeros(3)
        weight = 0
        for b, idx in enumerate(_batches(order, config.batch_size)):
            try:
                l1, l2, lt = train_step(model, uw, opt, features[idx], labels[idx], config)
            except NumericError as exc:
                raise TrainingError(
                    f"training diverged at epoch {epoch}, batch {b} (lr={opt.lr:g}): {exc}"
                ) from exc
            sums += np.array([l1, l2, lt]) * len(idx)
            weight += len(idx)
        means = sums / weight
        acc = accuracy(model, features, labels)
        model.train()
        rc, rr = uw.rhos() if learn_s else (1.0, 1.0)
        rec = EpochRecord(epoch, *(float(m) for m in means), acc, rc, rr, opt.lr)
        history.records.append(rec)
        log.info(
            "epoch %3d  L1 %.4f  L2 %.4f  total %.4f  acc %.3f  lr %g", epoch, means[0], means[1], means[2], acc, opt.lr
        )
        if callback is not None and callback(rec):
            stopped = True
            break
        if config.early_stop:
            if means[2] < best - 1e-6:
                best, stale = means[2], 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop: no train-loss improvement for %d epochs", stale)
                    stopped = True
                    break

    model.eval()
    return TrainResult(model, uw, history, stopped)


def fit_uncertainty_only(l1, l2, steps=3000, lr=0.05):
    """Optimise only ``s_cls``/``s_recon`` against constant task losses.

    Useful to inspect the objective's stationary point, ``exp(s) = L``.
    """
    uw = UncertaintyWeights.create(dtype=np.float64)
    opt = Adam(uw.tensors(), lr=lr)
    c1 = Tensor(np.array(l1, dtype=np.float64))
    c2 = Tensor(np.array(l2, dtype=np.float64))
    for step in range(steps):
        if step == steps // 2:
            opt.lr = lr / 10
        opt.zero_grad()
        total_loss(c1, c2, uw).backward()
        opt.step()
    return uw
