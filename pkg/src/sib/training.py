"""Three-stage training: main encoder + decoder, auxiliaries, aggregation weights."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .datasets import LabeledDataset, batches
from .independence import (discriminator_loss, encoder_independence_penalty,
                           make_adversarial_batch)
from .metrics import MiReport, evaluate
from .model import (Discriminator, SibModel, aggregate, decode, encode,
                    load_checkpoint, save_checkpoint)
from .objectives import (ObjectiveKind, Variant, compression_term, lagrangian,
                         prediction_loss)

log = logging.getLogger(__name__)

STAGES = ("stage1", "stage2", "stage3")


class NumericalAbort(FloatingPointError):
    def __init__(self, stage: str, epoch: int, batch: int, what: str):
        super().__init__(f"{what} at {stage}, epoch {epoch}, batch {batch}")
        self.stage, self.epoch, self.batch = stage, epoch, batch


class StageIsolationError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    beta: float = 1.0
    k: int = 0
    epochs: tuple[int, int, int] = (10, 5, 5)
    batch_size: int = 100
    lr: float = 1e-4
    weight_lr: float | None = None  # stage-3 learning rate, defaults to lr
    seed: int = 0
    variant: str = "vib"
    nib_var: float = 1.0
    kl_reduction: str = "mean"
    hidden_width: int = 256
    feature_dim: int = 16
    indep_coef: float = 1.0
    disc_hidden: tuple[int, int] = (1000, 2000)
    train_weights: bool = True

    def __post_init__(self):
        self.epochs = tuple(int(e) for e in self.epochs)
        self.disc_hidden = tuple(int(h) for h in self.disc_hidden)
        if len(self.epochs) != 3 or min(self.epochs) < 1:
            raise ValueError("epochs must be three positive integers")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        Variant(self.variant)

    @property
    def kind(self) -> ObjectiveKind:
        return ObjectiveKind(self.variant, self.beta, self.nib_var, kl_reduction=self.kl_reduction)


@dataclass
class EpochRecord:
    stage: str
    epoch: int
    encoder: int
    loss: float
    pred_loss: float
    compression: float
    accuracy: float
    i_xz: float
    i_zy: float
    penalty: float = float("nan")
    disc_loss: float = float("nan")
    wall: float = 0.0


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def stage(self, name: str) -> list[EpochRecord]:
        return [r for r in self.records if r.stage == name]

    def rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


class Streams:
    """Independent RNG streams derived from one seed."""

    names = ("init", "order", "noise", "disc", "eval")

    def __init__(self, seed: int):
        for name, ss in zip(self.names, np.random.SeedSequence(seed).spawn(len(self.names))):
            setattr(self, name, np.random.Generator(np.random.PCG64(ss)))

    def state(self) -> dict:
        return {n: getattr(self, n).bit_generator.state for n in self.names}

    def restore(self, state: dict) -> None:
        for n in self.names:
            getattr(self, n).bit_generator.state = state[n]


def param_hash(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def _check_finite(loss: dc.Node, stage: str, epoch: int, batch: int) -> None:
    if not np.isfinite(loss.value):
        raise NumericalAbort(stage, epoch, batch, "non-finite loss")


def _step(params, state, lr, stage, epoch, batch):
    try:
        dc.adam_step(params, state, lr)
    except dc.NonFiniteGradient as err:
        raise NumericalAbort(stage, epoch, batch, str(err)) from err


class _Meter:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.n = 0

    def add(self, **vals):
        self.n += 1
        for k, v in vals.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v)

    def mean(self, key) -> float:
        return self.sums.get(key, float("nan")) / max(self.n, 1)


def _ib_loss(model: SibModel, post, y):
    logits = decode(model.decoder, post.samples)
    pred = prediction_loss(logits, y)
    comp = compression_term(model.kind, post)
    acc = np.mean(np.argmax(logits.value, axis=1) == y)
    return lagrangian(model.kind, comp, pred), pred, comp, acc


def train_stage1(model: SibModel, data: LabeledDataset, cfg: TrainConfig,
                 streams: Streams, history: TrainHistory | None = None) -> TrainHistory:
    """Fit the main encoder and decoder on the IB Lagrangian, then freeze the decoder."""
    history = history if history is not None else TrainHistory()
    params = model.main.parameters() + model.decoder.parameters()
    state = dc.AdamState()
    for epoch in range(cfg.epochs[0]):
        t0, meter = time.perf_counter(), _Meter()
        for b, (x, y) in enumerate(batches(data, cfg.batch_size, streams.order)):
            post = encode(model.main, x, streams.noise, model.kind)
            loss, pred, comp, acc = _ib_loss(model, post, y)
            _check_finite(loss, "stage1", epoch, b)
            dc.zero_grad(params)
            dc.backward(loss)
            _step(params, state, cfg.lr, "stage1", epoch, b)
            meter.add(loss=loss.value, pred=pred.value, comp=comp.value, acc=acc)
        history.add(EpochRecord("stage1", epoch, 0, meter.mean("loss"), meter.mean("pred"),
                                meter.mean("comp"), meter.mean("acc"), meter.mean("comp"),
                                max(data.h_y - meter.mean("pred"), 0.0),
                                wall=time.perf_counter() - t0))
        log.info("stage1 epoch %d loss %.4f acc %.4f", epoch, meter.mean("loss"), meter.mean("acc"))
    model.set_trainable(model.decoder.parameters(), False)
    return history


def train_stage2(model: SibModel, data: LabeledDataset, cfg: TrainConfig, streams: Streams,
                 history: TrainHistory | None = None) -> tuple[TrainHistory, list[Discriminator]]:
    """Fit auxiliary encoders in order against a frozen decoder.

    Encoder ``i`` minimizes its own IB Lagrangian plus ``-log d(z_i, z + sum_{l<i} z_l)``
    while discriminator ``i`` learns to separate aligned from shuffled pairs.
    Epochs are the outer loop and encoders the inner loop.
    """
    history = history if history is not None else TrainHistory()
    if model.n_aux == 0:
        return history, []
    if any(p.trainable for p in model.decoder.parameters()):
        raise StageIsolationError("decoder must be frozen before stage 2")
    dec_hash = param_hash(model.decoder.parameters())
    discs = [Discriminator(model.feature_dim, streams.disc, f"disc{i + 1}", cfg.disc_hidden)
             for i in range(model.n_aux)]
    enc_states = [dc.AdamState() for _ in model.aux]
    disc_states = [dc.AdamState() for _ in discs]
    for epoch in range(cfg.epochs[1]):
        for i, (enc, disc) in enumerate(zip(model.aux, discs)):
            t0, meter = time.perf_counter(), _Meter()
            enc_params, disc_params = enc.parameters(), disc.parameters()
            earlier = [model.main, *model.aux[:i]]
            for b, (x, y) in enumerate(batches(data, cfg.batch_size, streams.order)):
                z_prev = sum(encode(e, x, streams.noise, model.kind).samples.value for e in earlier)
                post = encode(enc, x, streams.noise, model.kind)
                ib, pred, comp, acc = _ib_loss(model, post, y)
                penalty = encoder_independence_penalty(disc, post.samples, z_prev)
                loss = ib + cfg.indep_coef * penalty
                _check_finite(loss, "stage2", epoch, b)
                dc.zero_grad(enc_params + disc_params)
                dc.backward(loss)
                _step(enc_params, enc_states[i], cfg.lr, "stage2", epoch, b)

                adv = make_adversarial_batch(post.samples.value, z_prev, streams.order)
                d_loss = discriminator_loss(disc, adv)
                _check_finite(d_loss, "stage2", epoch, b)
                dc.zero_grad(disc_params)
                dc.backward(d_loss)
                _step(disc_params, disc_states[i], cfg.lr, "stage2", epoch, b)
                meter.add(loss=loss.value, pred=pred.value, comp=comp.value, acc=acc,
                          pen=penalty.value, dl=d_loss.value)
            history.add(EpochRecord("stage2", epoch, i + 1, meter.mean("loss"), meter.mean("pred"),
                                    meter.mean("comp"), meter.mean("acc"), meter.mean("comp"),
                                    max(data.h_y - meter.mean("pred"), 0.0), meter.mean("pen"),
                                    meter.mean("dl"), time.perf_counter() - t0))
            log.info("stage2 epoch %d encoder %d loss %.4f penalty %.4f disc %.4f",
                     epoch, i + 1, meter.mean("loss"), meter.mean("pen"), meter.mean("dl"))
    if param_hash(model.decoder.parameters()) != dec_hash:
        raise StageIsolationError("decoder parameters changed during stage 2")
    return history, discs


def train_stage3(model: SibModel, data: LabeledDataset, cfg: TrainConfig, streams: Streams,
                 history: TrainHistory | None = None) -> TrainHistory:
    """Tune only the aggregation weights on the IB Lagrangian of the aggregated feature."""
    history = history if history is not None else TrainHistory()
    others = [p for p in model.parameters() if p is not model.weights]
    before = param_hash(others)
    flags = [(p, p.trainable) for p in others]
    model.set_trainable(others, False)
    model.weights.trainable = True
    params, state = [model.weights], dc.AdamState()
    try:
        for epoch in range(cfg.epochs[2]):
            t0, meter = time.perf_counter(), _Meter()
            for b, (x, y) in enumerate(batches(data, cfg.batch_size, streams.order)):
                posts = [encode(e, x, streams.noise, model.kind) for e in model.encoders]
                agg = aggregate(model.weights, posts[0], posts[1:])
                loss, pred, comp, acc = _ib_loss(model, agg, y)
                _check_finite(loss, "stage3", epoch, b)
                model.weights.zero_grad()
                dc.backward(loss)
                _step(params, state, cfg.weight_lr or cfg.lr, "stage3", epoch, b)
                meter.add(loss=loss.value, pred=pred.value, comp=comp.value, acc=acc)
            history.add(EpochRecord("stage3", epoch, -1, meter.mean("loss"), meter.mean("pred"),
                                    meter.mean("comp"), meter.mean("acc"), meter.mean("comp"),
                                    max(data.h_y - meter.mean("pred"), 0.0),
                                    wall=time.perf_counter() - t0))
            log.info("stage3 epoch %d loss %.4f weights %s", epoch, meter.mean("loss"),
                     np.round(model.weights.value, 4))
    finally:
        for p, flag in flags:
            p.trainable = flag
    if param_hash(others) != before:
        raise StageIsolationError("network parameters changed during stage 3")
    return history


def build_model(cfg: TrainConfig, data: LabeledDataset, streams: Streams) -> SibModel:
    return SibModel.build(cfg.kind, cfg.k, streams.init, data.inputs.shape[1],
                          cfg.hidden_width, cfg.feature_dim, data.n_classes)


def run_full(cfg: TrainConfig, train: LabeledDataset, test: LabeledDataset,
             checkpoint_dir=None, resume: bool = False) -> tuple[SibModel, TrainHistory, MiReport]:
    """Stages 1 -> 2 -> 3, then test-split metrics.

    With ``checkpoint_dir`` a checkpoint is written after each stage; with
    ``resume`` the latest one is loaded (RNG streams included) and the
    remaining stages run.
    """
    streams = Streams(cfg.seed)
    model = build_model(cfg, train, streams)
    history = TrainHistory()
    done = 0
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None and resume:
        for n in range(3, 0, -1):
            path = ckdir / f"stage{n}.npz"
            if path.exists():
                model, meta = load_checkpoint(path)
                streams.restore(meta["extra"]["streams"])
                history = TrainHistory([EpochRecord(**r) for r in meta["extra"]["history"]])
                done = n
                break

    def checkpoint(n):
        if ckdir is not None:
            ckdir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(model, ckdir / f"stage{n}.npz",
                            extra={"streams": streams.state(), "history": history.rows(),
                                   "config": asdict(cfg)})

    if done < 1:
        train_stage1(model, train, cfg, streams, history)
        checkpoint(1)
    if done < 2:
        train_stage2(model, train, cfg, streams, history)
        checkpoint(2)
    if done < 3:
        if cfg.train_weights:
            train_stage3(model, train, cfg, streams, history)
        checkpoint(3)
    report = evaluate(model, test, np.random.default_rng(streams.eval.integers(2**63)))
    return model, history, report
