"""Tiny differentiable autoregressive policy.

A two-block single-head causal transformer over a small token alphabet:
learned token + positional embeddings, pre-RMSNorm attention and tanh
feed-forward blocks, output head tied to the embedding table.  Forward,
sampling, per-token log-probabilities, and the exact reverse-mode
gradient of the clipped group-relative surrogate are all implemented
here in plain numpy (float64 throughout), so gradients can be checked
against finite differences.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInputError, UpdateRejectedError

__all__ = [
    "PolicyConfig", "PolicyParams", "PolicySnapshot", "GradItem", "GrpoHyper",
    "init_params", "param_shapes", "param_count", "logits", "sample_response",
    "sample_batch", "logprob", "response_logprobs_batch", "grad_objective",
    "apply_update", "Adam", "snapshot", "params_checksum",
    "save_checkpoint", "load_checkpoint", "CHECKPOINT_FORMAT_VERSION",
]

_INIT_STD = 0.02
_RMS_EPS = 1e-6
_MASK_FILL = -1e9

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    vocab_size: int
    d_model: int = 32
    n_blocks: int = 2
    context_window: int = 96
    ffn_mult: int = 4

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_blocks", "context_window", "ffn_mult"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be a positive integer")


def param_shapes(config: PolicyConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in fixed iteration order."""
    d, h = config.d_model, config.d_model * config.ffn_mult
    shapes: dict[str, tuple[int, ...]] = {
        "wte": (config.vocab_size, d),
        "wpe": (config.context_window, d),
    }
    for i in range(config.n_blocks):
        shapes[f"b{i}.norm1.g"] = (d,)
        shapes[f"b{i}.attn.wq"] = (d, d)
        shapes[f"b{i}.attn.wk"] = (d, d)
        shapes[f"b{i}.attn.wv"] = (d, d)
        shapes[f"b{i}.attn.wo"] = (d, d)
        shapes[f"b{i}.norm2.g"] = (d,)
        shapes[f"b{i}.ffn.w1"] = (d, h)
        shapes[f"b{i}.ffn.w2"] = (h, d)
    shapes["normf.g"] = (d,)
    return shapes


def param_count(config: PolicyConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(config).values())


@dataclass(frozen=True)
class PolicyParams:
    """Full parameter set; tensors are read-only float64 arrays."""

    config: PolicyConfig
    tensors: dict[str, np.ndarray]

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors.values())


@dataclass(frozen=True)
class PolicySnapshot:
    """Immutable copy of a parameter set with a version tag."""

    params: PolicyParams
    version: str


def _frozen_tensors(tensors: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    for name, t in tensors.items():
        arr = np.array(t, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        out[name] = arr
    return out


def init_params(config: PolicyConfig, rng: np.random.Generator) -> PolicyParams:
    """Gaussian init (std 0.02) for weights; norm gains start at 1."""
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = rng.normal(0.0, _INIT_STD, size=shape)
    return PolicyParams(config=config, tensors=_frozen_tensors(tensors))


def snapshot(params: PolicyParams, version: str) -> PolicySnapshot:
    return PolicySnapshot(params=PolicyParams(params.config, _frozen_tensors(params.tensors)),
                          version=version)


def params_checksum(params: PolicyParams) -> str:
    """SHA-256 over all tensor bytes, for immutability checks."""
    digest = hashlib.sha256()
    for name in sorted(params.tensors):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(params.tensors[name]).tobytes())
    return digest.hexdigest()


# --- forward / backward -------------------------------------------------

def _rms_fwd(x: np.ndarray, g: np.ndarray):
    r = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + _RMS_EPS)
    xn = x / r
    return g * xn, xn, r


def _rms_bwd(dy: np.ndarray, g: np.ndarray, xn: np.ndarray, r: np.ndarray):
    dg = np.sum(dy * xn, axis=tuple(range(dy.ndim - 1)))
    dxn = dy * g
    m = np.mean(dxn * xn, axis=-1, keepdims=True)
    dx = (dxn - xn * m) / r
    return dx, dg


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), _MASK_FILL), k=1)


def _forward(params: PolicyParams, tokens: np.ndarray, want_cache: bool):
    """Full forward over (batch, length) token ids -> (batch, length, vocab) logits."""
    cfg = params.config
    t = params.tensors
    B, L = tokens.shape
    if L > cfg.context_window:
        raise InvalidInputError(f"sequence length {L} exceeds context window {cfg.context_window}")
    scale = 1.0 / math.sqrt(cfg.d_model)
    mask = _causal_mask(L)

    x = t["wte"][tokens] + t["wpe"][:L]
    cache: dict = {"tokens": tokens, "blocks": []} if want_cache else None
    for i in range(cfg.n_blocks):
        g1, g2 = t[f"b{i}.norm1.g"], t[f"b{i}.norm2.g"]
        wq, wk, wv, wo = (t[f"b{i}.attn.{n}"] for n in ("wq", "wk", "wv", "wo"))
        w1, w2 = t[f"b{i}.ffn.w1"], t[f"b{i}.ffn.w2"]

        y1, xn1, r1 = _rms_fwd(x, g1)
        q, k, v = y1 @ wq, y1 @ wk, y1 @ wv
        scores = q @ k.transpose(0, 2, 1) * scale + mask
        p = _softmax_rows(scores)
        ao = p @ v
        x_mid = x + ao @ wo

        y2, xn2, r2 = _rms_fwd(x_mid, g2)
        a = np.tanh(y2 @ w1)
        x_out = x_mid + a @ w2

        if want_cache:
            cache["blocks"].append(dict(xn1=xn1, r1=r1, q=q, k=k, v=v, p=p, ao=ao,
                                        xn2=xn2, r2=r2, y2=y2, a=a))
        x = x_out

    yf, xnf, rf = _rms_fwd(x, t["normf.g"])
    out = yf @ t["wte"].T
    if want_cache:
        cache.update(xnf=xnf, rf=rf, yf=yf)
    return out, cache


def _forward_last(params: PolicyParams, tokens: np.ndarray) -> np.ndarray:
    """Next-token logits at the final position only -> (batch, vocab).

    All blocks but the last run in full (their outputs feed every later
    position); the last block and the head evaluate only the final row.
    Everything is recomputed from scratch each call; no state is kept
    between steps.
    """
    cfg = params.config
    t = params.tensors
    B, L = tokens.shape
    if L > cfg.context_window:
        raise InvalidInputError(f"sequence length {L} exceeds context window {cfg.context_window}")
    scale = 1.0 / math.sqrt(cfg.d_model)

    x = t["wte"][tokens] + t["wpe"][:L]
    for i in range(cfg.n_blocks):
        g1, g2 = t[f"b{i}.norm1.g"], t[f"b{i}.norm2.g"]
        wq, wk, wv, wo = (t[f"b{i}.attn.{n}"] for n in ("wq", "wk", "wv", "wo"))
        w1, w2 = t[f"b{i}.ffn.w1"], t[f"b{i}.ffn.w2"]
        last_block = i == cfg.n_blocks - 1

        y1, _, _ = _rms_fwd(x, g1)
        k, v = y1 @ wk, y1 @ wv
        if last_block:
            q = y1[:, -1:] @ wq
            scores = q @ k.transpose(0, 2, 1) * scale  # final row attends everywhere
            p = _softmax_rows(scores)
            xl = x[:, -1] + (p @ v)[:, 0] @ wo
            y2, _, _ = _rms_fwd(xl, g2)
            xl = xl + np.tanh(y2 @ w1) @ w2
            yf, _, _ = _rms_fwd(xl, t["normf.g"])
            return yf @ t["wte"].T
        q = y1 @ wq
        scores = q @ k.transpose(0, 2, 1) * scale + _causal_mask(L)
        p = _softmax_rows(scores)
        x_mid = x + (p @ v) @ wo
        y2, _, _ = _rms_fwd(x_mid, g2)
        x = x_mid + np.tanh(y2 @ w1) @ w2
    raise AssertionError("unreachable")


def _flat_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """d(objective)/dW for y = x @ W, accumulated over batch and position."""
    din, dout = x.shape[-1], dy.shape[-1]
    return x.reshape(-1, din).T @ dy.reshape(-1, dout)


def _backward(params: PolicyParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode accumulation of dlogits into parameter gradients."""
    cfg = params.config
    t = params.tensors
    tokens = cache["tokens"]
    scale = 1.0 / math.sqrt(cfg.d_model)
    grads = {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}

    # head (tied to the embedding table) and final norm
    dyf = dlogits @ t["wte"]
    grads["wte"] += _flat_grad(cache["yf"], dlogits).T
    dx, dgf = _rms_bwd(dyf, t["normf.g"], cache["xnf"], cache["rf"])
    grads["normf.g"] += dgf

    for i in reversed(range(cfg.n_blocks)):
        c = cache["blocks"][i]
        wq, wk, wv, wo = (t[f"b{i}.attn.{n}"] for n in ("wq", "wk", "wv", "wo"))
        w1, w2 = t[f"b{i}.ffn.w1"], t[f"b{i}.ffn.w2"]

        # feed-forward: x_out = x_mid + tanh(y2 @ w1) @ w2
        da = dx @ w2.T
        grads[f"b{i}.ffn.w2"] += _flat_grad(c["a"], dx)
        dh = da * (1.0 - c["a"] * c["a"])
        grads[f"b{i}.ffn.w1"] += _flat_grad(c["y2"], dh)
        dy2 = dh @ w1.T
        dx_norm, dg2 = _rms_bwd(dy2, t[f"b{i}.norm2.g"], c["xn2"], c["r2"])
        grads[f"b{i}.norm2.g"] += dg2
        dx_mid = dx + dx_norm

        # attention: x_mid = x_in + (softmax(q k^T * scale + mask) @ v) @ wo
        dao = dx_mid @ wo.T
        grads[f"b{i}.attn.wo"] += _flat_grad(c["ao"], dx_mid)
        dp = dao @ c["v"].transpose(0, 2, 1)
        dv = c["p"].transpose(0, 2, 1) @ dao
        ds = c["p"] * (dp - (dp * c["p"]).sum(axis=-1, keepdims=True))
        dq = ds @ c["k"] * scale
        dk = ds.transpose(0, 2, 1) @ c["q"] * scale
        y1 = t[f"b{i}.norm1.g"] * c["xn1"]
        grads[f"b{i}.attn.wq"] += _flat_grad(y1, dq)
        grads[f"b{i}.attn.wk"] += _flat_grad(y1, dk)
        grads[f"b{i}.attn.wv"] += _flat_grad(y1, dv)
        dy1 = dq @ wq.T + dk @ wk.T + dv @ wv.T
        dx_norm, dg1 = _rms_bwd(dy1, t[f"b{i}.norm1.g"], c["xn1"], c["r1"])
        grads[f"b{i}.norm1.g"] += dg1
        dx = dx_mid + dx_norm

    # embeddings
    L = tokens.shape[1]
    grads["wpe"][:L] += dx.sum(axis=0)
    np.add.at(grads["wte"], tokens.reshape(-1), dx.reshape(-1, cfg.d_model))
    return grads


# --- public operations ---------------------------------------------------

def _check_context(params: PolicyParams, context) -> np.ndarray:
    arr = np.asarray(context, dtype=np.int64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError("context must be a nonempty 1-D token sequence")
    if arr.size > params.config.context_window:
        raise InvalidInputError("context exceeds the context window")
    if arr.min() < 0 or arr.max() >= params.config.vocab_size:
        raise InvalidInputError("token id out of range")
    return arr


def logits(params: PolicyParams, context) -> np.ndarray:
    """Next-token logit vector (vocab,) after the given context."""
    arr = _check_context(params, context)
    return _forward_last(params, arr[None, :])[0]


def sample_batch(params: PolicyParams, prompts, temperature: float, max_len: int,
                 rng: np.random.Generator | None, stop_token: int | None,
                 greedy: bool = False):
    """Autoregressively sample one response per prompt (all prompts equal length).

    Returns a list of (tokens, trace, truncated): generated tokens
    (including the stop token when emitted), the (steps, vocab) raw logit
    trace, and whether the stop token was never produced.  Finished rows
    drop out of the batch; every step recomputes the forward pass over
    the full context.
    """
    if not greedy and not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInputError("temperature must be a finite positive real")
    if rng is None and not greedy:
        raise InvalidInputError("sampling requires a random generator")
    prompt_arrs = [_check_context(params, p) for p in prompts]
    plen = prompt_arrs[0].size
    if any(a.size != plen for a in prompt_arrs):
        raise InvalidInputError("all prompts in a batch must share one length")
    if plen + max_len > params.config.context_window:
        raise InvalidInputError("prompt plus max_len exceeds the context window")

    n = len(prompt_arrs)
    buf = np.zeros((n, plen + max_len), dtype=np.int64)
    buf[:, :plen] = np.stack(prompt_arrs)
    traces: list[list[np.ndarray]] = [[] for _ in range(n)]
    lengths = np.full(n, max_len, dtype=np.int64)
    truncated = np.ones(n, dtype=bool)
    active = np.arange(n)

    for step in range(max_len):
        if active.size == 0:
            break
        out = _forward_last(params, buf[active, :plen + step])
        for row, vec in zip(active, out):
            traces[row].append(np.array(vec))
        if greedy:
            nxt = np.argmax(out, axis=1)
        else:
            probs = _softmax_rows(out / temperature)
            u = rng.random(active.size)
            nxt = np.minimum((np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1),
                             params.config.vocab_size - 1)
        buf[active, plen + step] = nxt
        if stop_token is not None:
            done = nxt == stop_token
            if done.any():
                rows = active[done]
                lengths[rows] = step + 1
                truncated[rows] = False
                active = active[~done]

    results = []
    for i in range(n):
        toks = tuple(int(v) for v in buf[i, plen:plen + lengths[i]])
        trace = (np.stack(traces[i][:lengths[i]]) if lengths[i] > 0
                 else np.zeros((0, params.config.vocab_size)))
        results.append((toks, trace, bool(truncated[i])))
    return results


def sample_response(params: PolicyParams, prompt, temperature: float, max_len: int,
                    rng: np.random.Generator, stop_token: int | None):
    """Sample a single response; see ``sample_batch``."""
    return sample_batch(params, [prompt], temperature, max_len, rng, stop_token)[0]


def logprob(params: PolicyParams, prompt, response, temperature: float) -> np.ndarray:
    """Per-token log-probabilities of ``response`` after ``prompt``."""
    return response_logprobs_batch(params, [(prompt, response)], temperature)[0]


def response_logprobs_batch(params: PolicyParams, pairs, temperature: float):
    """log softmax(logits / T)[token] for each response token, batched.

    ``pairs`` is a list of (prompt, response) token sequences; prompts may
    differ in length.  Empty responses yield empty arrays.
    """
    if not (math.isfinite(temperature) and temperature > 0):
        raise InvalidInputError("temperature must be a finite positive real")
    seqs = []
    for prompt, response in pairs:
        p = _check_context(params, prompt)
        r = np.asarray(response, dtype=np.int64)
        if r.size and (r.min() < 0 or r.max() >= params.config.vocab_size):
            raise InvalidInputError("token id out of range")
        if p.size + r.size > params.config.context_window:
            raise InvalidInputError("sequence exceeds the context window")
        seqs.append((p, r))

    live = [(i, p, r) for i, (p, r) in enumerate(seqs) if r.size > 0]
    out: list[np.ndarray] = [np.zeros(0) for _ in seqs]
    if not live:
        return out
    lmax = max(p.size + r.size - 1 for _, p, r in live)
    tokens = np.zeros((len(live), lmax), dtype=np.int64)
    for row, (_, p, r) in enumerate(live):
        full = np.concatenate([p, r])
        tokens[row, :full.size - 1] = full[:-1]
    all_logits, _ = _forward(params, tokens, want_cache=False)
    for row, (i, p, r) in enumerate(live):
        pos = np.arange(p.size - 1, p.size + r.size - 1)
        z = all_logits[row, pos] / temperature
        z = z - z.max(axis=1, keepdims=True)
        logz = np.log(np.exp(z).sum(axis=1))
        out[i] = z[np.arange(r.size), r] - logz
    return out


@dataclass(frozen=True)
class GrpoHyper:
    """Hyperparameters of the clipped group-relative surrogate."""

    clip_eps: float
    kl_beta: float
    temperature: float
    aggregation: str = "token_mean"

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise InvalidInputError("clip_eps must lie strictly inside (0, 1)")
        if self.kl_beta < 0:
            raise InvalidInputError("kl_beta must be nonnegative")
        if self.aggregation not in ("token_mean", "token_sum"):
            raise InvalidInputError("aggregation must be 'token_mean' or 'token_sum'")


@dataclass(frozen=True)
class GradItem:
    """One response in a gradient batch."""

    prompt: tuple[int, ...]
    response: tuple[int, ...]
    advantage: float
    old_logprobs: np.ndarray
    ref_logprobs: np.ndarray


@dataclass(frozen=True)
class ObjectiveStats:
    value: float
    kl_mean: float
    clip_fraction: float


def grad_objective(params: PolicyParams, groups: list[list[GradItem]],
                   hyper: GrpoHyper) -> tuple[dict[str, np.ndarray], ObjectiveStats]:
    """Exact ascent gradient of the clipped surrogate with per-token KL penalty.

    Per response: token-aggregated min(ratio * A, clip(ratio) * A) minus
    kl_beta times the token-aggregated KL estimator against the reference;
    responses average within their group, groups average over the batch.
    Returns (gradients congruent with the parameter set, batch statistics).
    """
    if not groups or any(not g for g in groups):
        raise InvalidInputError("batch must contain at least one nonempty group")
    n_groups = len(groups)
    flat: list[tuple[GradItem, float]] = []
    for group in groups:
        for item in group:
            t_len = len(item.response)
            if item.old_logprobs.shape != (t_len,) or item.ref_logprobs.shape != (t_len,):
                raise InvalidInputError("old/ref logprob lengths must match the response")
            if t_len == 0:
                continue
            denom = n_groups * len(group) * (t_len if hyper.aggregation == "token_mean" else 1)
            flat.append((item, 1.0 / denom))
    if not flat:
        grads = {name: np.zeros(shape) for name, shape in param_shapes(params.config).items()}
        return grads, ObjectiveStats(0.0, 0.0, 0.0)

    lmax = max(len(it.prompt) + len(it.response) - 1 for it, _ in flat)
    tokens = np.zeros((len(flat), lmax), dtype=np.int64)
    for row, (it, _) in enumerate(flat):
        full = np.asarray(it.prompt + it.response, dtype=np.int64)
        tokens[row, :full.size - 1] = full[:-1]

    all_logits, cache = _forward(params, tokens, want_cache=True)
    dlogits = np.zeros_like(all_logits)
    value = 0.0
    kl_sum = 0.0
    clipped = 0
    n_tokens = 0
    for row, (it, w) in enumerate(flat):
        p_len, t_len = len(it.prompt), len(it.response)
        resp = np.asarray(it.response, dtype=np.int64)
        pos = np.arange(p_len - 1, p_len + t_len - 1)
        z = all_logits[row, pos] / hyper.temperature
        z = z - z.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        lp = np.log(probs[np.arange(t_len), resp])

        adv = it.advantage
        ratio = np.exp(lp - it.old_logprobs)
        unclipped = ratio * adv
        clipped_term = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * adv
        take_min = unclipped <= clipped_term
        term = np.where(take_min, unclipped, clipped_term)

        dref = it.ref_logprobs - lp
        rho = np.exp(dref)
        kl = np.expm1(dref) - dref

        value += w * float((term - hyper.kl_beta * kl).sum())
        dlp = w * (np.where(take_min, ratio * adv, 0.0) - hyper.kl_beta * (1.0 - rho))

        dz = -dlp[:, None] * probs
        dz[np.arange(t_len), resp] += dlp
        dlogits[row, pos] = dz / hyper.temperature

        kl_sum += float(kl.sum())
        clipped += int((~take_min).sum())
        n_tokens += t_len

    grads = _backward(params, cache, dlogits)
    stats = ObjectiveStats(value=value, kl_mean=kl_sum / n_tokens,
                           clip_fraction=clipped / n_tokens)
    return grads, stats


# --- updates -------------------------------------------------------------

def _check_congruent(tensors: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
    if set(tensors) != set(grads):
        raise InvalidInputError("gradient names do not match parameter names")
    for name, t in tensors.items():
        if grads[name].shape != t.shape:
            raise InvalidInputError(f"gradient shape mismatch for '{name}'")


def apply_update(params: PolicyParams, gradient: dict[str, np.ndarray],
                 learning_rate: float) -> PolicyParams:
    """Plain gradient-ascent step; rejects non-finite results atomically."""
    _check_congruent(params.tensors, gradient)
    new = {}
    for name, t in params.tensors.items():
        nt = t + learning_rate * gradient[name]
        if not np.all(np.isfinite(nt)):
            raise UpdateRejectedError(name)
        new[name] = nt
    return PolicyParams(params.config, _frozen_tensors(new))


class Adam:
    """Ascent optimizer with first/second moment accumulation.

    Either every tensor commits or none does: a non-finite result raises
    ``UpdateRejectedError`` and leaves both the parameters and the
    optimizer state untouched.
    """

    def __init__(self, learning_rate: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update_tensors(self, tensors: dict[str, np.ndarray],
                       grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        _check_congruent(tensors, grads)
        t_next = self.t + 1
        bc1 = 1.0 - self.beta1 ** t_next
        bc2 = 1.0 - self.beta2 ** t_next
        new_t, new_m, new_v = {}, {}, {}
        for name, theta in tensors.items():
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * g * g
            step = self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            nt = theta + step
            if not np.all(np.isfinite(nt)):
                raise UpdateRejectedError(name)
            new_t[name], new_m[name], new_v[name] = nt, m, v
        self.t, self.m, self.v = t_next, new_m, new_v
        return new_t

    def update(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> PolicyParams:
        return PolicyParams(params.config, _frozen_tensors(self.update_tensors(params.tensors, grads)))


# --- checkpoints ----------------------------------------------------------

def save_checkpoint(params: PolicyParams, path: str) -> None:
    """Write a self-describing checkpoint; write-then-rename for atomicity."""
    meta = {"format_version": CHECKPOINT_FORMAT_VERSION, "config": asdict(params.config)}
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                     **params.tensors)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def load_checkpoint(path: str) -> PolicyParams:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported checkpoint format version {meta.get('format_version')}")
        config = PolicyConfig(**meta["config"])
        tensors = {}
        for name, shape in param_shapes(config).items():
            if name not in data or data[name].shape != shape:
                raise InvalidInputError(f"checkpoint missing or misshaped tensor '{name}'")
            tensors[name] = data[name]
        return PolicyParams(config, _frozen_tensors(tensors))
