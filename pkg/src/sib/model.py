"""Main/auxiliary encoders, shared linear decoder, aggregation weights, discriminator."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .gaussian import VAR_FLOOR, rsample
from .objectives import BatchPosteriors, ObjectiveKind, Variant

CHECKPOINT_VERSION = 1


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        bound = 1.0 / np.sqrt(n_in)
        self.W = dc.Parameter(rng.uniform(-bound, bound, (n_in, n_out)), f"{name}.W")
        self.b = dc.Parameter(rng.uniform(-bound, bound, n_out), f"{name}.b")

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def __call__(self, x) -> dc.Node:
        return dc.matmul(x, self.W) + self.b

    def parameters(self) -> list[dc.Parameter]:
        return [self.W, self.b]


class MLP:
    """Affine layers with ReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, name: str):
        self.layers = [Linear(a, b, rng, f"{name}.{i}")
                       for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].n_in] + [l.n_out for l in self.layers]

    def __call__(self, x) -> dc.Node:
        h = dc.const(x)
        for i, layer in enumerate(self.layers):
            if h.shape[-1] != layer.n_in:
                raise dc.ShapeError(f"layer {i}", h.shape, layer.W.shape)
            h = layer(h)
            if i < len(self.layers) - 1:
                h = dc.relu(h)
        return h

    def parameters(self) -> list[dc.Parameter]:
        return [p for l in self.layers for p in l.parameters()]


class Encoder(MLP):
    """``input -> hidden -> hidden -> 2D`` (mean, log-variance) or ``-> D`` for NIB."""

    def __init__(self, input_dim: int, hidden: int, feature_dim: int, variant: Variant,
                 rng: np.random.Generator, name: str):
        self.feature_dim = feature_dim
        self.variant = Variant(variant)
        out = feature_dim if self.variant is Variant.NIB else 2 * feature_dim
        super().__init__([input_dim, hidden, hidden, out], rng, name)

    @property
    def input_dim(self) -> int:
        return self.layers[0].n_in

    @property
    def hidden(self) -> int:
        return self.layers[0].n_out


class Decoder(Linear):
    """Single affine layer from features to class logits."""


class Discriminator(MLP):
    def __init__(self, feature_dim: int, rng: np.random.Generator, name: str = "disc",
                 hidden: tuple[int, int] = (1000, 2000)):
        super().__init__([2 * feature_dim, *hidden, 1], rng, name)

    def __call__(self, x) -> dc.Node:
        return dc.sigmoid(dc.reshape(super().__call__(x), (x.shape[0],)))


def hidden_width(base: int, n_aux: int) -> int:
    """Structured models halve the encoder width (independently of K)."""
    return base if n_aux == 0 else base // 2


@dataclass
class SibModel:
    main: Encoder
    aux: list[Encoder]
    decoder: Decoder
    weights: dc.Parameter
    kind: ObjectiveKind
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, kind: ObjectiveKind, n_aux: int, rng: np.random.Generator,
              input_dim: int = 784, base_hidden: int = 1024, feature_dim: int = 16,
              n_classes: int = 10, hidden: int | None = None) -> "SibModel":
        width = hidden_width(base_hidden, n_aux) if hidden is None else hidden
        main = Encoder(input_dim, width, feature_dim, kind.variant, rng, "main")
        aux = [Encoder(input_dim, width, feature_dim, kind.variant, rng, f"aux{i + 1}")
               for i in range(n_aux)]
        decoder = Decoder(feature_dim, n_classes, rng, "decoder")
        w = np.full(n_aux + 1, 1.0 / (n_aux + 1))
        w[0] = 1.0
        return cls(main, aux, decoder, dc.Parameter(w, "weights"), kind,
                   meta={"base_hidden": base_hidden})

    @property
    def n_aux(self) -> int:
        return len(self.aux)

    @property
    def feature_dim(self) -> int:
        return self.main.feature_dim

    @property
    def encoders(self) -> list[Encoder]:
        return [self.main, *self.aux]

    def parameters(self) -> list[dc.Parameter]:
        ps = [p for e in self.encoders for p in e.parameters()]
        return ps + self.decoder.parameters() + [self.weights]

    def set_trainable(self, params, flag: bool) -> None:
        for p in params:
            p.trainable = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}


def encode(enc: Encoder, x, rng: np.random.Generator | None, kind: ObjectiveKind) -> BatchPosteriors:
    """Posteriors for a batch; draws one reparameterized sample per row.

    With ``rng=None`` the "sample" is the posterior mean.
    """
    x = np.asarray(x, dtype=np.float64) if not isinstance(x, dc.Node) else x
    if x.shape[-1] != enc.input_dim:
        raise dc.ShapeError("encode", x.shape, (enc.input_dim,))
    out = enc(x)
    d = enc.feature_dim
    if enc.variant is Variant.NIB:
        mean = out
        var = dc.const(np.full(mean.shape, kind.nib_var))
    else:
        mean = out[:, :d]
        var = dc.clip(dc.exp(out[:, d:]), VAR_FLOOR, np.inf)
    z = mean if rng is None else rsample(mean, var, rng)
    return BatchPosteriors(mean, var, z)


def aggregate(weights: dc.Node, main_post: BatchPosteriors,
              aux_posts: list[BatchPosteriors]) -> BatchPosteriors:
    """Weighted sum of independent Gaussian features, in closed form."""
    posts = [main_post, *aux_posts]
    if weights.shape != (len(posts),):
        raise ValueError(f"expected {len(posts)} weights, got shape {weights.shape}")
    mean = var = z = None
    for i, p in enumerate(posts):
        if p.mean.shape != main_post.mean.shape:
            raise dc.ShapeError("aggregate", main_post.mean.shape, p.mean.shape)
        w = weights[i]
        terms = (w * p.mean, dc.square(w) * p.var, w * p.samples)
        if mean is None:
            mean, var, z = terms
        else:
            mean, var, z = mean + terms[0], var + terms[1], z + terms[2]
    return BatchPosteriors(mean, var, z)


def decode(decoder: Decoder, z) -> dc.Node:
    z = dc.const(z)
    if z.shape[-1] != decoder.n_in:
        raise dc.ShapeError("decode", z.shape, decoder.W.shape)
    return decoder(z)


def discriminate(disc: Discriminator, z_i, z_prev) -> dc.Node:
    """Score near 1 reads as "shuffled / product" pair, near 0 as "joint" pair."""
    z_i, z_prev = dc.const(z_i), dc.const(z_prev)
    if z_i.shape != z_prev.shape:
        raise dc.ShapeError("discriminate", z_i.shape, z_prev.shape)
    return disc(dc.concat([z_i, z_prev], axis=1))


def drop_encoders(model: SibModel, n_drop: int) -> SibModel:
    """Copy of ``model`` without the ``n_drop`` auxiliaries of smallest |w|.

    The main encoder is never removed and surviving weights are kept as is.
    Ties go to the lowest index.
    """
    if n_drop < 0 or n_drop > model.n_aux:
        raise ValueError(f"can drop between 0 and {model.n_aux} auxiliary encoders, not {n_drop}")
    w = model.weights.value
    aux_idx = sorted(range(1, len(w)), key=lambda i: (abs(w[i]), i))
    drop = set(aux_idx[:n_drop])
    keep = [i for i in range(len(w)) if i not in drop]
    out = copy.copy(model)
    out.aux = [model.aux[i - 1] for i in keep[1:]]
    out.weights = dc.Parameter(w[keep], "weights", trainable=model.weights.trainable)
    out.meta = {**model.meta, "dropped": sorted(int(i) for i in drop)}
    return out


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: SibModel, path, rng: np.random.Generator | None = None,
                    extra: dict | None = None) -> Path:
    """Write an ``.npz`` with one array per parameter plus a JSON ``__meta__`` entry."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "variant": model.kind.variant.value,
        "beta": model.kind.beta,
        "nib_var": model.kind.nib_var,
        "kl_reduction": model.kind.kl_reduction,
        "n_aux": model.n_aux,
        "input_dim": model.main.input_dim,
        "hidden": model.main.hidden,
        "feature_dim": model.feature_dim,
        "n_classes": model.decoder.n_out,
        "weights": model.weights.value.tolist(),
        "aux_names": [e.layers[0].W.name.split(".")[0] for e in model.aux],
        "frozen": [p.name for p in model.parameters() if not p.trainable],
        "model_meta": model.meta,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    arrays = model.state_dict()
    arrays["__meta__"] = np.array(json.dumps(meta))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[SibModel, dict]:
    with np.load(Path(path), allow_pickle=False) as f:
        meta = json.loads(str(f["__meta__"]))
        arrays = {k: f[k] for k in f.files if k != "__meta__"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    kind = ObjectiveKind(meta["variant"], meta["beta"], meta["nib_var"],
                         kl_reduction=meta["kl_reduction"])
    model = SibModel.build(kind, meta["n_aux"], np.random.default_rng(0), meta["input_dim"],
                           feature_dim=meta["feature_dim"], n_classes=meta["n_classes"],
                           base_hidden=meta["model_meta"].get("base_hidden", meta["hidden"]),
                           hidden=meta["hidden"])
    model.meta = meta["model_meta"]
    for enc, name in zip(model.aux, meta["aux_names"]):
        for p in enc.parameters():
            p.name = name + p.name[p.name.index("."):]
    frozen = set(meta["frozen"])
    for p in model.parameters():
        if p.name not in arrays:
            raise KeyError(f"checkpoint is missing {p.name}")
        if arrays[p.name].shape != p.shape:
            raise dc.ShapeError(p.name, arrays[p.name].shape, p.shape)
        p.value = arrays[p.name].astype(np.float64)
        p.trainable = p.name not in frozen
    return model, meta
