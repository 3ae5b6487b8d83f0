"""Forward/reverse losses, optimizers, the training loop and the ablation harness."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .data import Batch, NormStats, compute_stats, denormalize, normalize_batch, split_sequences, stack, substream, window_split
from .diffcore import NumericError, Tensor
from .metrics import EvalReport, HorizonSpec, fid, mpjpe_average, mpjpe_per_horizon
from .model import DECODER_MODES, ConfigError, ModelConfig, Td2ipModel, features, forward, forward_inverse, init_params

log = logging.getLogger(__name__)

LOSS_TERMS = ("forward", "reverse")
OPTIMIZERS = ("adam", "sgd")
ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    loss_terms: tuple[str, ...] = ("forward", "reverse")
    decoder_mode: str = "decoupled"
    squared_loss: bool = True
    seed: int = 0
    clip_norm: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "loss_terms", tuple(self.loss_terms))
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs!r}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size!r}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.loss_terms or any(t not in LOSS_TERMS for t in self.loss_terms):
            raise ConfigError(f"loss_terms must be a non-empty subset of {LOSS_TERMS}, got {list(self.loss_terms)}")
        if len(set(self.loss_terms)) != len(self.loss_terms):
            raise ConfigError(f"loss_terms has duplicates: {list(self.loss_terms)}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f"decoder_mode must be one of {DECODER_MODES}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive or null")

    @property
    def uses_forward(self) -> bool:
        return "forward" in self.loss_terms

    @property
    def uses_reverse(self) -> bool:
        return "reverse" in self.loss_terms


@dataclass(frozen=True)
class AblationVariant:
    name: str
    uses_Lf: bool
    uses_Lr: bool
    uses_TDD: bool

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        terms = tuple(t for t, on in (("forward", self.uses_Lf), ("reverse", self.uses_Lr)) if on)
        return replace(cfg, loss_terms=terms, decoder_mode="decoupled" if self.uses_TDD else "shared")


# row order of the ablation table
VARIANTS = (
    AblationVariant("Lf", True, False, False),
    AblationVariant("Lf+TDD", True, False, True),
    AblationVariant("Lf+Lr", True, True, False),
    AblationVariant("Lr+TDD", False, True, True),
    AblationVariant("Lf+Lr+TDD", True, True, True),
)


@dataclass
class EpochLog:
    epoch: int
    loss_f: float | None
    loss_r: float | None
    loss_total: float
    val_mpjpe: float


# ---------------------------------------------------------------- losses


def _point_loss(pred: Tensor, target, squared: bool) -> Tensor:
    target = dc._as_tensor(target)
    return dc.reduce_mean_sq_norm(pred, target) if squared else dc.reduce_mean_norm(pred, target)


def loss_forward(Y_hat_f: Tensor, Y_f, squared: bool = True) -> Tensor:
    """Mean over frames and joints of the squared (or plain) joint distance."""
    return _point_loss(dc._as_tensor(Y_hat_f), Y_f, squared)


def loss_reverse(Y_hat_r: Tensor, Y_r, squared: bool = True) -> Tensor:
    return _point_loss(dc._as_tensor(Y_hat_r), Y_r, squared)


def loss_total(L_f: Tensor | None, L_r: Tensor | None) -> Tensor:
    if L_f is None and L_r is None:
        raise ConfigError("no active loss term")
    if L_r is None:
        return L_f
    if L_f is None:
        return L_r
    return dc.add(L_f, L_r)


def compute_losses(model: Td2ipModel, batch: Batch, cfg: TrainConfig):
    """(L_f, L_r, L) for one batch; inactive terms are None and never built."""
    L_f = L_r = None
    if cfg.uses_forward:
        L_f = loss_forward(forward(model, batch.X), batch.Y_f, cfg.squared_loss)
    if cfg.uses_reverse:
        L_r = loss_reverse(forward_inverse(model, batch.X_r), batch.Y_r, cfg.squared_loss)
    return L_f, L_r, loss_total(L_f, L_r)


# ---------------------------------------------------------------- optimizers


@dataclass
class OptimState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState,
                   cfg: TrainConfig) -> tuple[dict[str, np.ndarray], OptimState]:
    """Update ``params`` in place and return them with the advanced state."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    if cfg.clip_norm is not None:
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if total > cfg.clip_norm:
            grads = {k: g * (cfg.clip_norm / total) for k, g in grads.items()}
    state.step += 1
    lr = cfg.learning_rate
    if cfg.optimizer == "sgd":
        for name, g in grads.items():
            params[name] -= lr * g
        return params, state
    c1 = 1.0 - ADAM_BETA1 ** state.step
    c2 = 1.0 - ADAM_BETA2 ** state.step
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return params, state


@dataclass
class StepLosses:
    loss_f: float | None
    loss_r: float | None
    loss_total: float


def gradients(model: Td2ipModel, batch: Batch, cfg: TrainConfig) -> tuple[StepLosses, dict[str, np.ndarray]]:
    with dc.Tape() as tape:
        L_f, L_r, L = compute_losses(model, batch, cfg)
        tape.backward(L)
    losses = StepLosses(
        None if L_f is None else L_f.item(), None if L_r is None else L_r.item(), L.item())
    if not np.isfinite(losses.loss_total):
        raise NumericError(f"non-finite training loss {losses.loss_total}")
    return losses, {k: tape.grad(p) for k, p in model.params.items()}


def train_step(model: Td2ipModel, batch: Batch, cfg: TrainConfig, state: OptimState | None = None):
    """One optimizer update on the batch-mean loss; both directions hit the same weights.

    Returns ``(losses, model)``; the model's parameters are updated in place.
    """
    state = state if state is not None else OptimState()
    losses, grads = gradients(model, batch, cfg)
    optimizer_step({k: p.values for k, p in model.params.items()}, grads, state, cfg)
    return losses, model


# ---------------------------------------------------------------- data prep & evaluation


@dataclass
class Prepared:
    train: Batch        # model space (normalised when enabled)
    val: Batch          # model space
    val_raw: Batch      # millimetres
    stats: NormStats
    t_p: int
    t_f: int


def prepare_data(seqs: Sequence, t_p: int, t_f: int, stride: int, normalize: bool = True,
                 val_fraction: float = 0.2) -> Prepared:
    train_seqs, val_seqs = split_sequences(seqs, val_fraction)
    train_w = [s for seq in train_seqs for s in window_split(seq, t_p, t_f, stride)]
    val_w = [s for seq in val_seqs for s in window_split(seq, t_p, t_f, stride)]
    if not train_w:
        raise ValueError("no training windows: sequences are shorter than t_p + t_f")
    if not val_w:
        raise ValueError("no validation windows: add sequences or lengthen them")
    train_raw, val_raw = stack(train_w), stack(val_w)
    stats = compute_stats(train_raw.X) if normalize else NormStats.identity()
    return Prepared(normalize_batch(train_raw, stats), normalize_batch(val_raw, stats), val_raw, stats, t_p, t_f)


def predict_mm(model: Td2ipModel, X_model: np.ndarray, stats: NormStats) -> np.ndarray:
    """Whole-window prediction in millimetres, ``B x T x J x 3``."""
    return denormalize(forward(model, X_model).values, stats)


def validation_mpjpe(model: Td2ipModel, data: Prepared, spec: HorizonSpec, over: str = "horizons") -> float:
    pred = predict_mm(model, data.val.X, data.stats)[:, data.t_p:]
    return mpjpe_average(pred, data.val_raw.Y, spec, over)


def evaluate_model(model: Td2ipModel, data: Prepared, spec: HorizonSpec, over: str = "horizons",
                   with_fid: bool = True) -> EvalReport:
    pred_model = forward(model, data.val.X).values
    pred = denormalize(pred_model, data.stats)[:, data.t_p:]
    per = mpjpe_per_horizon(pred, data.val_raw.Y, spec)
    avg = mpjpe_average(pred, data.val_raw.Y, spec, over)
    score = None
    if with_fid and len(data.val) >= 2:
        feat_pred, feat_gt = fid_features(model, data, pred_model)
        score = fid(feat_pred, feat_gt)
    return EvalReport(per, avg, score, model.param_count())


def fid_features(model: Td2ipModel, data: Prepared, pred_model: np.ndarray | None = None):
    """Encoder features of the last ``t_p`` frames of predicted vs true windows."""
    if pred_model is None:
        pred_model = forward(model, data.val.X).values
    t_p = data.t_p
    pred_window = np.concatenate([data.val.X, pred_model[:, t_p:]], axis=1)[:, -t_p:]
    true_window = data.val.Y_f[:, -t_p:]
    return features(model, pred_window), features(model, true_window)


def _dataset_losses(model: Td2ipModel, batch: Batch, cfg: TrainConfig) -> StepLosses:
    L_f, L_r, L = compute_losses(model, batch, cfg)
    return StepLosses(None if L_f is None else L_f.item(), None if L_r is None else L_r.item(), L.item())


# ---------------------------------------------------------------- loop


def run_training(data: Prepared, model_cfg: ModelConfig, cfg: TrainConfig, spec: HorizonSpec,
                 over: str = "horizons", model: Td2ipModel | None = None,
                 on_epoch: Callable[[EpochLog], None] | None = None) -> tuple[Td2ipModel, list[EpochLog]]:
    """Train from a seeded init; epoch 0 in the log is the untrained model."""
    if model_cfg.decoder_mode != cfg.decoder_mode:
        model_cfg = replace(model_cfg, decoder_mode=cfg.decoder_mode)
    if model is None:
        model = init_params(model_cfg, cfg.seed)
    train = data.train
    if not cfg.uses_reverse:
        train = Batch(train.X, train.Y, None, None)
    n = len(train)

    def record(epoch, lf, lr, lt):
        entry = EpochLog(epoch, lf, lr, lt, validation_mpjpe(model, data, spec, over))
        logs.append(entry)
        if on_epoch:
            on_epoch(entry)

    logs: list[EpochLog] = []
    init = _dataset_losses(model, train, cfg)
    record(0, init.loss_f, init.loss_r, init.loss_total)
    state = OptimState()
    for epoch in range(1, cfg.epochs + 1):
        order = substream(cfg.seed, "shuffle", epoch).permutation(n)
        sums = {"f": 0.0, "r": 0.0, "t": 0.0}
        for start in range(0, n, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            b = Batch(train.X[idx], train.Y[idx],
                      None if train.X_r is None else train.X_r[idx],
                      None if train.Y_r is None else train.Y_r[idx])
            losses, _ = train_step(model, b, cfg, state)
            k = len(idx)
            sums["t"] += losses.loss_total * k
            if losses.loss_f is not None:
                sums["f"] += losses.loss_f * k
            if losses.loss_r is not None:
                sums["r"] += losses.loss_r * k
        record(epoch,
               sums["f"] / n if cfg.uses_forward else None,
               sums["r"] / n if cfg.uses_reverse else None,
               sums["t"] / n)
        log.debug("epoch %d loss %.6f val %.3f", epoch, logs[-1].loss_total, logs[-1].val_mpjpe)
    return model, logs


EPOCH_HEADER = ("epoch", "loss_f", "loss_r", "loss_total", "val_mpjpe")


def write_epochs_csv(logs: Sequence[EpochLog], path) -> None:
    def cell(v):
        return "" if v is None else repr(float(v))

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_HEADER)
        for e in logs:
            w.writerow([e.epoch, cell(e.loss_f), cell(e.loss_r), cell(e.loss_total), cell(e.val_mpjpe)])


def read_epochs_csv(path) -> list[EpochLog]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))

    def val(s):
        return None if s == "" else float(s)

    return [EpochLog(int(r["epoch"]), val(r["loss_f"]), val(r["loss_r"]), float(r["loss_total"]),
                     float(r["val_mpjpe"])) for r in rows]


# ---------------------------------------------------------------- ablation


@dataclass
class AblationRow:
    variant: AblationVariant
    mpjpe: list[float]          # one entry per seed
    param_count: int
    initial_loss: list[float]
    final_loss: list[float]
    untrained_mpjpe: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.mpjpe))

    @property
    def std(self) -> float:
        return float(np.std(self.mpjpe, ddof=1)) if len(self.mpjpe) > 1 else 0.0

    def to_json(self) -> dict:
        v = self.variant
        return {
            "variant": v.name, "L_f": v.uses_Lf, "L_r": v.uses_Lr, "TDD": v.uses_TDD,
            "mpjpe_avg_mean": self.mean, "mpjpe_avg_std": self.std, "mpjpe_avg_per_seed": self.mpjpe,
            "param_count": self.param_count, "initial_loss": self.initial_loss,
            "final_loss": self.final_loss, "untrained_mpjpe": self.untrained_mpjpe,
        }


def ablation_run(data: Prepared, model_cfg: ModelConfig, base: TrainConfig, spec: HorizonSpec,
                 seeds: Sequence[int] | None = None, over: str = "horizons",
                 variants: Sequence[AblationVariant] = VARIANTS,
                 on_variant: Callable[[AblationVariant, int, list[EpochLog]], None] | None = None) -> list[AblationRow]:
    """Train every variant on the same data and seeds; one row per variant."""
    seeds = list(seeds) if seeds else [base.seed]
    rows = []
    for variant in variants:
        cfg_v = variant.apply(base)
        mp, init_l, final_l, untrained, count = [], [], [], [], 0
        for seed in seeds:
            cfg_s = replace(cfg_v, seed=seed)
            model, logs = run_training(data, model_cfg, cfg_s, spec, over)
            count = model.param_count()
            mp.append(logs[-1].val_mpjpe)
            untrained.append(logs[0].val_mpjpe)
            init_l.append(logs[0].loss_total)
            final_l.append(logs[-1].loss_total)
            if on_variant:
                on_variant(variant, seed, logs)
        rows.append(AblationRow(variant, mp, count, init_l, final_l, untrained))
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    tick = lambda on: "✓" if on else " "  # noqa: E731
    lines = [
        f"{'L_f':^5}{'L_r':^5}{'TDD':^5} | {'avg MPJPE (mm)':>22} | {'params':>7}",
        "-" * 52,
    ]
    for r in rows:
        v = r.variant
        lines.append(
            f"{tick(v.uses_Lf):^5}{tick(v.uses_Lr):^5}{tick(v.uses_TDD):^5} | "
            f"{r.mean:>10.3f} ± {r.std:<9.3f} | {r.param_count:>7d}"
        )
    return "\n".join(lines) + "\n"
