"""Per-modality encoders and classifiers with analytic gradients.

Each modality owns a 2-layer tanh perceptron mapping its raw feature space
to a shared representation dimension, plus a linear-softmax classifier. A
fused classifier reads the horizontal concatenation of all modality
representations. Encoders are deterministic, so a representation carries no
information beyond its input.

No autodiff framework: the architecture is fixed and small, so backward
passes are spelled out. `model_backward` accepts gradient contributions
with respect to logits and representation matrices (both domains) and
accumulates parameter gradients through the shared encoders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix


@dataclass
class EncoderParams:
    """Weights of one modality encoder: d_in -> hidden (tanh) -> d_out."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ClassifierParams:
    """Linear layer mapping a representation to class logits."""

    w: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    """All trainable parameters: M encoders and M+1 classifiers.

    classifiers[-1] is the fused head and reads the concatenated
    representation of width M * rep_dim.
    """

    encoders: list
    classifiers: list

    @property
    def n_modalities(self) -> int:
        return len(self.encoders)


@dataclass(frozen=True)
class RepresentationSet:
    """Per-modality representation matrices and their concatenation."""

    z: list
    z_concat: np.ndarray


@dataclass(frozen=True)
class EncoderCache:
    """Forward intermediates needed by the encoder backward pass."""

    x: np.ndarray
    hidden: np.ndarray


@dataclass(frozen=True)
class ForwardState:
    """Everything produced by a forward pass on a source/target batch pair."""

    reps_src: RepresentationSet
    reps_tgt: RepresentationSet
    probs_src: list
    probs_tgt: list
    caches_src: list = field(repr=False, default=None)
    caches_tgt: list = field(repr=False, default=None)


def _uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder(d_in: int, hidden: int, d_out: int,
                 rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        w1=_uniform_init(rng, d_in, (d_in, hidden)),
        b1=_uniform_init(rng, d_in, (hidden,)),
        w2=_uniform_init(rng, hidden, (hidden, d_out)),
        b2=_uniform_init(rng, hidden, (d_out,)),
    )


def init_classifier(d_in: int, n_classes: int,
                    rng: np.random.Generator) -> ClassifierParams:
    return ClassifierParams(
        w=_uniform_init(rng, d_in, (d_in, n_classes)),
        b=_uniform_init(rng, d_in, (n_classes,)),
    )


def init_model(feature_dims, hidden: int, rep_dim: int, n_classes: int,
               rng: np.random.Generator) -> ModelParams:
    """Seeded model init: encoders in modality order, then classifiers."""
    encoders = [init_encoder(d, hidden, rep_dim, rng) for d in feature_dims]
    classifiers = [init_classifier(rep_dim, n_classes, rng)
                   for _ in feature_dims]
    classifiers.append(init_classifier(rep_dim * len(encoders), n_classes, rng))
    return ModelParams(encoders=encoders, classifiers=classifiers)


def encode(x: np.ndarray, enc: EncoderParams) -> np.ndarray:
    """Deterministic forward pass of one encoder."""
    z, _ = encode_cached(x, enc)
    return z


def encode_cached(x: np.ndarray, enc: EncoderParams):
    x = as_matrix(x, "x")
    if x.shape[1] != enc.w1.shape[0]:
        raise ValueError(
            f"input has {x.shape[1]} features, encoder expects {enc.w1.shape[0]}")
    hidden = np.tanh(x @ enc.w1 + enc.b1)
    z = hidden @ enc.w2 + enc.b2
    return z, EncoderCache(x=x, hidden=hidden)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax, max-stabilized so huge logits cannot overflow."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def classify(z: np.ndarray, clf: ClassifierParams) -> np.ndarray:
    """Class probabilities for a batch of representations."""
    z = as_matrix(z, "z")
    if z.shape[1] != clf.w.shape[0]:
        raise ValueError(
            f"representation has {z.shape[1]} dims, classifier expects {clf.w.shape[0]}")
    return softmax(z @ clf.w + clf.b)


def forward_all(features_src, features_tgt, params: ModelParams) -> ForwardState:
    """Forward both domain batches through every encoder and classifier."""
    m = params.n_modalities

    def run(features):
        zs, caches = [], []
        for x, enc in zip(features, params.encoders):
            z, cache = encode_cached(x, enc)
            zs.append(z)
            caches.append(cache)
        z_concat = np.hstack(zs)
        probs = [classify(z, clf) for z, clf in zip(zs, params.classifiers[:m])]
        probs.append(classify(z_concat, params.classifiers[m]))
        return RepresentationSet(z=zs, z_concat=z_concat), probs, caches

    if len(features_src) != m or len(features_tgt) != m:
        raise ValueError(f"expected {m} modalities per domain")
    reps_src, probs_src, caches_src = run(features_src)
    reps_tgt, probs_tgt, caches_tgt = run(features_tgt)
    return ForwardState(reps_src=reps_src, reps_tgt=reps_tgt,
                        probs_src=probs_src, probs_tgt=probs_tgt,
                        caches_src=caches_src, caches_tgt=caches_tgt)


def encoder_backward(cache: EncoderCache, enc: EncoderParams,
                     dz: np.ndarray) -> EncoderParams:
    """Parameter gradients of one encoder given dLoss/dZ for its batch."""
    dw2 = cache.hidden.T @ dz
    db2 = dz.sum(axis=0)
    dhidden = dz @ enc.w2.T
    dpre = dhidden * (1.0 - cache.hidden ** 2)
    dw1 = cache.x.T @ dpre
    db1 = dpre.sum(axis=0)
    return EncoderParams(w1=dw1, b1=db1, w2=dw2, b2=db2)


def classifier_backward(z: np.ndarray, clf: ClassifierParams,
                        dlogits: np.ndarray):
    """Parameter gradients and input gradient for one classifier head."""
    grads = ClassifierParams(w=z.T @ dlogits, b=dlogits.sum(axis=0))
    dz = dlogits @ clf.w.T
    return grads, dz


def zeros_like_params(params: ModelParams) -> ModelParams:
    return ModelParams(
        encoders=[EncoderParams(*(np.zeros_like(a) for a in
                                  (e.w1, e.b1, e.w2, e.b2)))
                  for e in params.encoders],
        classifiers=[ClassifierParams(w=np.zeros_like(c.w),
                                      b=np.zeros_like(c.b))
                     for c in params.classifiers],
    )


def param_arrays(params: ModelParams) -> list:
    """Parameter arrays in a fixed traversal order (shared with gradients)."""
    out = []
    for e in params.encoders:
        out.extend([e.w1, e.b1, e.w2, e.b2])
    for c in params.classifiers:
        out.extend([c.w, c.b])
    return out


def _accumulate_encoder(total: EncoderParams, part: EncoderParams) -> None:
    total.w1 += part.w1
    total.b1 += part.b1
    total.w2 += part.w2
    total.b2 += part.b2


def model_backward(params: ModelParams, state: ForwardState,
                   dlogits_src=None, dlogits_tgt=None,
                   dz_src=None, dz_tgt=None,
                   dz_concat_src=None, dz_concat_tgt=None) -> ModelParams:
    """Accumulate parameter gradients from per-head and per-representation
    loss gradients on both domain batches.

    dlogits_*: optional list of M+1 logit gradients (None entries allowed);
    dz_*: optional list of M extra gradients on the modality representations;
    dz_concat_*: optional extra gradient on the concatenated representation.
    Raises on any non-finite gradient.
    """
    m = params.n_modalities
    grads = zeros_like_params(params)

    def domain(reps, caches, dlogits, dz_extra, dz_concat):
        dzs = [np.zeros_like(z) for z in reps.z]
        if dz_extra is not None:
            for i, extra in enumerate(dz_extra):
                if extra is not None:
                    dzs[i] += extra
        if dlogits is not None:
            for i in range(m):
                if dlogits[i] is None:
                    continue
                cgrad, dz = classifier_backward(reps.z[i], params.classifiers[i],
                                                dlogits[i])
                grads.classifiers[i].w += cgrad.w
                grads.classifiers[i].b += cgrad.b
                dzs[i] += dz
        dcat = None
        if dlogits is not None and len(dlogits) > m and dlogits[m] is not None:
            cgrad, dcat = classifier_backward(reps.z_concat,
                                              params.classifiers[m], dlogits[m])
            grads.classifiers[m].w += cgrad.w
            grads.classifiers[m].b += cgrad.b
        if dz_concat is not None:
            dcat = dz_concat if dcat is None else dcat + dz_concat
        if dcat is not None:
            for i, block in enumerate(np.split(dcat, m, axis=1)):
                dzs[i] += block
        for i in range(m):
            egrad = encoder_backward(caches[i], params.encoders[i], dzs[i])
            _accumulate_encoder(grads.encoders[i], egrad)

    domain(state.reps_src, state.caches_src, dlogits_src, dz_src, dz_concat_src)
    domain(state.reps_tgt, state.caches_tgt, dlogits_tgt, dz_tgt, dz_concat_tgt)

    for arr in param_arrays(grads):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite gradient")
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: ModelParams) -> AdamState:
    arrays = param_arrays(params)
    return AdamState(m=[np.zeros_like(a) for a in arrays],
                     v=[np.zeros_like(a) for a in arrays])


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState,
              lr: float) -> ModelParams:
    """Bias-corrected Adam update, in place; returns params for chaining."""
    p_arrays = param_arrays(params)
    g_arrays = param_arrays(grads)
    for g in g_arrays:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
