"""A tiny autoregressive softmax policy with hand-written backprop.

The context for response position ``t`` is the mean of the prompt token
embeddings concatenated with the embedding of the previous token (a BOS
token, id ``vocab - 1``, at ``t = 0``)::

    x_t = [mean_i E[prompt_i], E[prev_t]]        (2 * d_emb,)
    h_t = tanh(x_t @ W_h + b_h)                  (d_hid,)
    logits_t = h_t @ W_o + b_o                   (vocab,)

``W_h`` and ``W_o`` are genuine linear layers, so the gradient of a summed
log-probability with respect to either one factors exactly as
``act_inᵀ @ grad_out`` over token rows; the :class:`LayerTape` records those
two factors.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, ShapeError

LAYER_NAMES = ("embed", "hidden_w", "hidden_b", "out_w", "out_b")
LINEAR_LAYERS = ("hidden_w", "out_w")

CHECKPOINT_MAGIC = b"PROMA-CKPT"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    embed: np.ndarray      # (vocab, d_emb)
    hidden_w: np.ndarray   # (2 * d_emb, d_hid)
    hidden_b: np.ndarray   # (d_hid,)
    out_w: np.ndarray      # (d_hid, vocab)
    out_b: np.ndarray      # (vocab,)

    def __post_init__(self):
        for name in LAYER_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} has non-finite entries")
        v, e = self.embed.shape
        h = self.hidden_b.shape[0]
        expected = {"hidden_w": (2 * e, h), "out_w": (h, v), "out_b": (v,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, "
                                 f"expected {shape}")

    @property
    def vocab(self) -> int:
        return self.embed.shape[0]

    @property
    def bos(self) -> int:
        return self.vocab - 1

    @property
    def num_params(self) -> int:
        return sum(getattr(self, n).size for n in LAYER_NAMES)

    def layers(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in LAYER_NAMES}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{n: a.copy() for n, a in self.layers().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.layers().values()])

    def checksum(self) -> str:
        import hashlib
        return hashlib.sha256(self.flat().tobytes()).hexdigest()

    @classmethod
    def from_layers(cls, layers) -> "PolicyParams":
        return cls(**{n: np.array(layers[n], dtype=np.float64) for n in LAYER_NAMES})


def zero_params(vocab: int, d_emb: int, d_hid: int) -> PolicyParams:
    return PolicyParams(
        embed=np.zeros((vocab, d_emb)),
        hidden_w=np.zeros((2 * d_emb, d_hid)),
        hidden_b=np.zeros(d_hid),
        out_w=np.zeros((d_hid, vocab)),
        out_b=np.zeros(vocab),
    )


def init_params(vocab: int, d_emb: int, d_hid: int, rng=None,
                embed_scale: float = 1.0, out_scale: float = 0.0) -> PolicyParams:
    """Random initialization.

    With the default ``out_scale=0`` the initial policy is exactly uniform,
    which puts the starting entropy at ``log(vocab)``.
    """
    gen = np.random.default_rng(rng)
    return PolicyParams(
        embed=embed_scale * gen.standard_normal((vocab, d_emb)),
        hidden_w=gen.standard_normal((2 * d_emb, d_hid)) / np.sqrt(2 * d_emb),
        hidden_b=np.zeros(d_hid),
        out_w=out_scale * gen.standard_normal((d_hid, vocab)) / np.sqrt(d_hid),
        out_b=np.zeros(vocab),
    )


@dataclass
class SequenceSample:
    prompt_tokens: list[int]
    response_tokens: list[int]
    logprob_sum: float
    per_token_logprobs: list[float] = field(default_factory=list)


@dataclass
class LayerTape:
    """Rows are response token positions across the whole batch."""

    layer_id: str
    act_in: np.ndarray     # (T, d_in)
    grad_out: np.ndarray   # (T, d_out), advantage-unweighted


@dataclass
class SequenceGradientMatrix:
    layer_id: str
    grads: np.ndarray      # (d_layer, k); column j is sequence j's gradient


@dataclass
class _Cache:
    prompts: np.ndarray    # (B, P)
    responses: np.ndarray  # (B, L)
    prev: np.ndarray       # (B, L)
    x: np.ndarray          # (B, L, 2E)
    h: np.ndarray          # (B, L, H)
    logp: np.ndarray       # (B, L, V) full log-softmax


def _log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _tokens(arr, vocab, name):
    arr = np.asarray(arr, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab):
        raise InputError(f"{name} contains token ids outside [0, {vocab})")
    return arr


def _context(params: PolicyParams, prompts, prev):
    pooled = params.embed[prompts].mean(axis=1)                 # (B, E)
    prev_emb = params.embed[prev]                               # (B, L, E)
    pooled = np.broadcast_to(pooled[:, None, :], prev_emb.shape)
    return np.concatenate([pooled, prev_emb], axis=-1)


def _head(params: PolicyParams, x):
    h = np.tanh(x @ params.hidden_w + params.hidden_b)
    return h, _log_softmax(h @ params.out_w + params.out_b)


def _forward(params: PolicyParams, prompts, responses) -> _Cache:
    prompts = _tokens(prompts, params.vocab, "prompt")
    responses = _tokens(responses, params.vocab, "response")
    if prompts.ndim != 2 or responses.ndim != 2 or prompts.shape[0] != responses.shape[0]:
        raise ShapeError("prompts and responses must be (B, P) and (B, L) arrays")
    if prompts.shape[1] == 0:
        raise ShapeError("prompts must be non-empty")
    b, length = responses.shape
    prev = np.full((b, length), params.bos, dtype=np.int64)
    prev[:, 1:] = responses[:, :-1]
    x = _context(params, prompts, prev)
    h, logp = _head(params, x)
    return _Cache(prompts, responses, prev, x, h, logp)


def token_logprobs(params: PolicyParams, prompts, responses) -> np.ndarray:
    """``(B, L)`` teacher-forced log-probabilities of ``responses``."""
    c = _forward(params, prompts, responses)
    return np.take_along_axis(c.logp, c.responses[..., None], axis=-1)[..., 0]


def forward_logprobs(params: PolicyParams, prompt, response) -> SequenceSample:
    prompt = list(map(int, prompt))
    response = list(map(int, response))
    if not response:
        return SequenceSample(prompt, response, 0.0, [])
    lp = token_logprobs(params, [prompt], [response])[0]
    return SequenceSample(prompt, response, float(lp.sum()), lp.tolist())


def sample_batch(params: PolicyParams, prompts, length: int, temperature: float = 1.0,
                 rng=None):
    """Sample ``length`` tokens for each prompt row.

    Returns ``(responses, token_logprobs)``, both ``(B, length)``; the
    log-probabilities are those of the untempered policy. ``temperature=0``
    selects greedy argmax decoding.
    """
    if temperature < 0:
        raise ValueError("temperature must be positive (0 means greedy)")
    prompts = _tokens(prompts, params.vocab, "prompt")
    gen = np.random.default_rng(rng)
    b = prompts.shape[0]
    responses = np.zeros((b, length), dtype=np.int64)
    logps = np.zeros((b, length))
    pooled = params.embed[prompts].mean(axis=1)
    prev = np.full(b, params.bos, dtype=np.int64)
    for t in range(length):
        x = np.concatenate([pooled, params.embed[prev]], axis=-1)
        _, logp = _head(params, x)
        if temperature == 0:
            tok = logp.argmax(axis=-1)
        else:
            scaled = _log_softmax(logp / temperature)
            cdf = np.cumsum(np.exp(scaled), axis=-1)
            u = gen.random(b)[:, None] * cdf[:, -1:]
            tok = np.minimum((cdf < u).sum(axis=-1), params.vocab - 1)
        responses[:, t] = tok
        logps[:, t] = logp[np.arange(b), tok]
        prev = tok
    return responses, logps


def sample_response(params: PolicyParams, prompt, max_len: int, temperature: float = 1.0,
                    rng=None) -> SequenceSample:
    responses, logps = sample_batch(params, [list(prompt)], max_len, temperature, rng)
    return SequenceSample(list(map(int, prompt)), responses[0].tolist(),
                          float(logps[0].sum()), logps[0].tolist())


def sequence_gradients(params: PolicyParams, prompts, responses, token_weights=None):
    """Per-sequence gradients of the summed response log-probability.

    With ``token_weights`` (shape ``(B, L)``) the gradient is of
    ``sum_t w[b, t] * log pi(y[b, t])`` instead, and the tapes carry the
    weighted output gradients.

    Returns ``(grads, tapes, logps)``: ``grads[name]`` has shape
    ``(B, *layer_shape)``, ``tapes[name]`` is the :class:`LayerTape` of each
    linear layer over all ``B * L`` token rows, and ``logps`` is ``(B, L)``.
    """
    c = _forward(params, prompts, responses)
    b, length = c.responses.shape
    v = params.vocab
    e = params.embed.shape[1]
    onehot = np.zeros((b, length, v))
    np.put_along_axis(onehot, c.responses[..., None], 1.0, axis=-1)
    probs = np.exp(c.logp)
    d_logits = onehot - probs                              # (B, L, V)
    if token_weights is not None:
        d_logits = d_logits * np.asarray(token_weights, dtype=np.float64)[..., None]
    d_h = d_logits @ params.out_w.T
    d_pre = d_h * (1.0 - c.h ** 2)                         # (B, L, H)
    d_x = d_pre @ params.hidden_w.T                        # (B, L, 2E)

    grads = {
        "out_w": np.einsum("blh,blv->bhv", c.h, d_logits),
        "out_b": d_logits.sum(axis=1),
        "hidden_w": np.einsum("bli,blh->bih", c.x, d_pre),
        "hidden_b": d_pre.sum(axis=1),
    }
    embed = np.zeros((b, v, e))
    rows = np.arange(b)[:, None]
    # pooled half: each prompt token gets 1/P of the summed pooled gradient
    d_pool = d_x[..., :e].sum(axis=1) / c.prompts.shape[1]              # (B, E)
    np.add.at(embed, (np.broadcast_to(rows, c.prompts.shape), c.prompts),
              np.broadcast_to(d_pool[:, None, :], c.prompts.shape + (e,)))
    np.add.at(embed, (np.broadcast_to(rows, c.prev.shape), c.prev), d_x[..., e:])
    grads["embed"] = embed

    tapes = {
        "hidden_w": LayerTape("hidden_w", c.x.reshape(b * length, -1),
                              d_pre.reshape(b * length, -1)),
        "out_w": LayerTape("out_w", c.h.reshape(b * length, -1),
                           d_logits.reshape(b * length, -1)),
    }
    logps = np.take_along_axis(c.logp, c.responses[..., None], axis=-1)[..., 0]
    return {n: grads[n] for n in LAYER_NAMES}, tapes, logps


def backward_sequence(params: PolicyParams, sample: SequenceSample):
    """Gradients of ``sample.logprob_sum`` per layer, plus the layer tapes."""
    if not sample.response_tokens:
        grads = {n: np.zeros_like(a) for n, a in params.layers().items()}
        tapes = {}
        for name in LINEAR_LAYERS:
            w = getattr(params, name)
            tapes[name] = LayerTape(name, np.zeros((0, w.shape[0])), np.zeros((0, w.shape[1])))
        return grads, tapes
    grads, tapes, _ = sequence_gradients(params, [sample.prompt_tokens],
                                         [sample.response_tokens])
    return {n: g[0] for n, g in grads.items()}, tapes


def seq_grad_matrices(grads) -> dict[str, SequenceGradientMatrix]:
    """Reshape batched per-sequence gradients into ``(d_layer, k)`` matrices."""
    out = {}
    for name, g in grads.items():
        out[name] = SequenceGradientMatrix(name, g.reshape(g.shape[0], -1).T.copy())
    return out


def next_token_distribution(params: PolicyParams, prompts, prefixes) -> np.ndarray:
    """``(B, vocab)`` probabilities of the token following each prefix."""
    prompts = _tokens(prompts, params.vocab, "prompt")
    prefixes = [list(p) for p in prefixes]
    b = prompts.shape[0]
    prev = np.array([p[-1] if p else params.bos for p in prefixes], dtype=np.int64)
    prev = _tokens(prev, params.vocab, "prefix")
    pooled = params.embed[prompts].mean(axis=1)
    x = np.concatenate([pooled, params.embed[prev]], axis=-1)
    _, logp = _head(params, x.reshape(b, -1))
    return np.exp(logp)


def position_logprobs(params: PolicyParams, prompts, responses) -> np.ndarray:
    """``(B, L, vocab)`` full log-distributions at every response position."""
    return _forward(params, prompts, responses).logp


def entropy(params: PolicyParams, contexts) -> float:
    """Mean next-token entropy (nats) over ``(prompt, prefix)`` contexts."""
    contexts = list(contexts)
    if not contexts:
        raise ValueError("entropy needs at least one context")
    prompts = [c[0] for c in contexts]
    if len({len(p) for p in prompts}) != 1:
        return float(np.mean([entropy(params, [c]) for c in contexts]))
    p = next_token_distribution(params, prompts, [c[1] for c in contexts])
    return float(np.mean(_entropy_rows(p)))


def _entropy_rows(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def position_entropy(params: PolicyParams, prompts, responses) -> float:
    """Mean entropy over every response position of a batch of rollouts."""
    logp = position_logprobs(params, prompts, responses)
    return float(np.mean(-(np.exp(logp) * logp).sum(axis=-1)))


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(params: PolicyParams, path) -> None:
    """Write ``params`` in the v1 checkpoint layout.

    Layout: the bytes ``PROMA-CKPT``, a little-endian uint32 version, a
    little-endian uint32 header length ``n``, ``n`` bytes of UTF-8 JSON
    ``{"layers": [[name, [dims...]], ...]}``, then every layer's entries as
    row-major little-endian float64, in header order.
    """
    header = json.dumps({"layers": [[n, list(a.shape)] for n, a in params.layers().items()]},
                        separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for a in params.layers().values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> PolicyParams:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise InputError(f"{path} is not a checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    layers = {}
    for name, shape in header["layers"]:
        n = int(np.prod(shape)) if shape else 1
        layers[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).copy()
        off += 8 * n
    return PolicyParams.from_layers(layers)
