"""Numeric building blocks with hand-written backward passes.

Weights follow the ``(out, in)`` convention and forward passes are written as
``x @ W.T`` so that the same code runs on a single vector or on a batch with
leading dimensions.  Backward passes are only needed for the unbatched
training path and take the cache returned by the matching forward call.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

Params = dict  # name -> np.ndarray


class ShapeError(ValueError):
    pass


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray, axis: int = -1, mask: Optional[np.ndarray] = None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits of ``p = softmax(logits)`` (last axis)."""
    return p * (dp - (p * dp).sum(axis=-1, keepdims=True))


# -- dense tanh layer ------------------------------------------------------


def dense_tanh(W, b, x):
    _check(x.shape[-1] == W.shape[1], f"dense: input {x.shape[-1]} vs weight {W.shape}")
    return np.tanh(x @ W.T + b)


def dense_tanh_backward(W, x, y, dy):
    """Backward of ``y = tanh(W x + b)`` for a single vector or a row batch."""
    dpre = dy * (1.0 - y * y)
    if dpre.ndim == 1:
        return np.outer(dpre, x), dpre, W.T @ dpre
    return dpre.T @ x, dpre.sum(axis=0), dpre @ W


# -- LSTM ---------------------------------------------------------------------
# gate layout along the 4H axis: input, forget, output, candidate


def lstm_cell(W, b, x, h, c):
    H = h.shape[-1]
    _check(W.shape == (4 * H, x.shape[-1] + H), f"lstm: weight {W.shape} vs input {x.shape[-1]}, hidden {H}")
    xh = np.concatenate([x, h], axis=-1)
    a = xh @ W.T + b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H : 2 * H])
    o = sigmoid(a[..., 2 * H : 3 * H])
    g = np.tanh(a[..., 3 * H :])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    h2 = o * tc
    return h2, c2, (xh, c, i, f, o, g, tc)


def lstm_cell_backward(W, cache, dh2, dc2):
    """Returns ``(dW, db, dxh, dc)``; split ``dxh`` into input and hidden parts."""
    xh, c, i, f, o, g, tc = cache
    dc = dc2 + dh2 * o * (1.0 - tc * tc)
    da = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c * f * (1.0 - f), dh2 * tc * o * (1.0 - o), dc * i * (1.0 - g * g)]
    )
    return np.outer(da, xh), da, W.T @ da, dc * f


def lstm_scan(W, b, X, reverse_lengths: Optional[np.ndarray] = None, keep_cache: bool = False):
    """Run an LSTM from zero state over ``X`` of shape ``(B, N, d)``.

    With ``reverse_lengths`` each row is read right-to-left over its own
    length (padding stays at the end) and outputs are put back in reading
    order, which gives the backward half of a BiLSTM on ragged batches.
    """
    B, N, d = X.shape
    H = W.shape[0] // 4
    _check(W.shape == (4 * H, d + H), f"lstm: weight {W.shape} vs input {d}")
    if reverse_lengths is not None:
        perm = _reverse_index(reverse_lengths, N)
        X = np.take_along_axis(X, perm[:, :, None], axis=1)
    Wx, Wh = W[:, :d], W[:, d:]
    proj = X @ Wx.T + b
    h = np.zeros((B, H), dtype=X.dtype)
    c = np.zeros((B, H), dtype=X.dtype)
    out = np.empty((B, N, H), dtype=X.dtype)
    if keep_cache:
        gates = np.empty((B, N, 4, H), dtype=X.dtype)
        cells = np.empty((B, N + 1, H), dtype=X.dtype)
        cells[:, 0] = 0.0
    for t in range(N):
        a = proj[:, t] + h @ Wh.T
        i = sigmoid(a[:, :H])
        f = sigmoid(a[:, H : 2 * H])
        o = sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[:, t] = h
        if keep_cache:
            gates[:, t, 0], gates[:, t, 1], gates[:, t, 2], gates[:, t, 3] = i, f, o, g
            cells[:, t + 1] = c
    cache = (X, gates, cells, out) if keep_cache else None
    if reverse_lengths is not None:
        out = np.take_along_axis(out, perm[:, :, None], axis=1)
    return out, cache


def _reverse_index(lengths: np.ndarray, N: int) -> np.ndarray:
    t = np.arange(N)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def lstm_scan_backward(W, cache, dOut):
    """Backward of a full-length :func:`lstm_scan` (reading order of the scan)."""
    X, gates, cells, out = cache
    B, N, d = X.shape
    H = W.shape[0] // 4
    Wh = W[:, d:]
    dproj = np.empty((B, N, 4 * H), dtype=X.dtype)
    dh = np.zeros((B, H), dtype=X.dtype)
    dc = np.zeros((B, H), dtype=X.dtype)
    dWh = np.zeros((4 * H, H), dtype=X.dtype)
    for t in range(N - 1, -1, -1):
        i, f, o, g = gates[:, t, 0], gates[:, t, 1], gates[:, t, 2], gates[:, t, 3]
        c_prev, c = cells[:, t], cells[:, t + 1]
        tc = np.tanh(c)
        dh = dh + dOut[:, t]
        dc = dc + dh * o * (1.0 - tc * tc)
        da = dproj[:, t]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H :] = dc * i * (1.0 - g * g)
        if t > 0:
            dWh += da.T @ out[:, t - 1]
        dh = da @ Wh
        dc = dc * f
    flat = dproj.reshape(B * N, 4 * H)
    dWx = flat.T @ X.reshape(B * N, d)
    db = flat.sum(axis=0)
    dX = (flat @ W[:, :d]).reshape(B, N, d)
    return np.concatenate([dWx, dWh], axis=1), db, dX


def bilstm_encode(Wf, bf, Wb, bb, X, lengths: Optional[np.ndarray] = None, keep_cache: bool = False):
    """Bidirectional encoding; each output row is ``[forward_i; backward_i]``.

    ``X`` is ``(N, d)`` for a single sequence or ``(B, N, d)`` with ``lengths``.
    """
    single = X.ndim == 2
    if single:
        _check(X.shape[0] > 0, "bilstm: empty input")
        X = X[None]
    B, N, _ = X.shape
    if lengths is None:
        lengths = np.full(B, N)
    fwd, cf = lstm_scan(Wf, bf, X, keep_cache=keep_cache)
    bwd, cb = lstm_scan(Wb, bb, X, reverse_lengths=lengths, keep_cache=keep_cache)
    out = np.concatenate([fwd, bwd], axis=-1)
    if single:
        out = out[0]
    return out, (cf, cb, lengths)


def bilstm_backward(Wf, Wb, cache, dOut):
    cf, cb, lengths = cache
    single = dOut.ndim == 2
    if single:
        dOut = dOut[None]
    H = Wf.shape[0] // 4
    N = dOut.shape[1]
    dWf, dbf, dXf = lstm_scan_backward(Wf, cf, dOut[..., :H])
    perm = _reverse_index(lengths, N)
    dRev = np.take_along_axis(dOut[..., H:], perm[:, :, None], axis=1)
    dWb, dbb, dXr = lstm_scan_backward(Wb, cb, dRev)
    dX = dXf + np.take_along_axis(dXr, perm[:, :, None], axis=1)
    if single:
        dX = dX[0]
    return dWf, dbf, dWb, dbb, dX


# -- FactEditor blocks ------------------------------------------------------


def triple_embed(W_t, b_t, e_subj, e_pred, e_obj):
    """``t_j = tanh(W_t [e_subj; e_pred; e_obj] + b_t)`` (rows are triples)."""
    return dense_tanh(W_t, b_t, np.concatenate([e_subj, e_pred, e_obj], axis=-1))


def stream_init(W_s, b_s, *groups):
    """``s_1 = tanh(W_s [mean(g_1); mean(g_2); ...] + b_s)``; ``groups`` are row stacks."""
    for g in groups:
        _check(g.shape[-2] > 0, "stream init: empty list")
    means = np.concatenate([g.mean(axis=-2) for g in groups], axis=-1)
    return dense_tanh(W_s, b_s, means), means


def stream_init_backward(W_s, means, s1, ds1, group_sizes):
    dW, db, dmeans = dense_tanh_backward(W_s, means, s1, ds1)
    pieces = []
    offset = 0
    for n, width in group_sizes:
        pieces.append(np.broadcast_to(dmeans[offset : offset + width] / n, (n, width)))
        offset += width
    return dW, db, pieces


def additive_scores(Wq, v, q, K_proj):
    """``e_j = v . tanh(Wq q + K_proj_j)`` where ``K_proj = K @ Wk.T`` is precomputed."""
    u = np.tanh((q @ Wq.T)[..., None, :] + K_proj)
    return u @ v, u


def additive_scores_backward(Wq, v, q, u, de):
    """Returns ``(dq, dWq, dv, dK_proj)`` for a single query."""
    dpre = np.outer(de, v) * (1.0 - u * u)
    dsum = dpre.sum(axis=0)
    return Wq.T @ dsum, np.outer(dsum, q), u.T @ de, dpre


def attention(Wq, v, q, K, K_proj, mask=None):
    e, u = additive_scores(Wq, v, q, K_proj)
    alpha = softmax(e, mask=mask)
    ctx = np.einsum("...m,...md->...d", alpha, K)
    return alpha, ctx, u


def attention_backward(Wq, v, q, K, u, alpha, dctx):
    """Returns ``(dq, dWq, dv, dK_proj, dK)`` where ``dK`` is the weighted-sum path only."""
    de = softmax_backward(alpha, K @ dctx)
    dq, dWq, dv, dK_proj = additive_scores_backward(Wq, v, q, u, de)
    return dq, dWq, dv, dK_proj, np.outer(alpha, dctx)


def attend(W_alpha, v_alpha, s, b, ts, mask=None):
    """Memory attention: ``alpha_j ~ exp(v . tanh(W_alpha [s; b; t_j]))``, context ``sum alpha_j t_j``."""
    _check(ts.shape[-2] > 0, "attention over an empty memory")
    q = np.concatenate([s, b], axis=-1)
    dq = q.shape[-1]
    _check(W_alpha.shape[1] == dq + ts.shape[-1], f"attention weight {W_alpha.shape} vs inputs")
    K_proj = ts @ W_alpha[:, dq:].T
    alpha, ctx, _ = attention(W_alpha[:, :dq], v_alpha, q, ts, K_proj, mask)
    return alpha, ctx


def action_distribution(W_z, b_z, W_a, s, b, ctx):
    """``z = tanh(W_z [s; b; ctx] + b_z)`` and ``P(a | z) = softmax(W_a z)``."""
    z = dense_tanh(W_z, b_z, np.concatenate([s, b, ctx], axis=-1))
    return z, softmax(z @ W_a.T)


@dataclass
class WordDist:
    """Pieces of the gated generate/copy mixture for one step."""

    p_gen: np.ndarray
    p_copy: np.ndarray
    gate: float
    copy_u: np.ndarray

    def mixture(self, vocab_size: int, candidate_ids) -> np.ndarray:
        """Full distribution over ``vocab_size`` + extra candidate slots.

        ``candidate_ids[j]`` is the extended id of memory object ``j``: a vocab
        id, or ``vocab_size + k`` for the k-th out-of-vocabulary object word.
        """
        ids = np.asarray(candidate_ids, dtype=int)
        size = max(vocab_size, int(ids.max()) + 1 if ids.size else vocab_size)
        out = np.zeros(size, dtype=self.p_gen.dtype)
        out[:vocab_size] = self.gate * self.p_gen
        np.add.at(out, ids, (1.0 - self.gate) * self.p_copy)
        return out


def word_distribution(W_y, Wq_c, v_c, w_g, b_g, z, K_proj_c, mask=None) -> WordDist:
    """Generation ``softmax(W_y z)``, copy ``softmax_j v_c . tanh(W_c [z; t_j])`` and the gate."""
    _check(W_y.shape[0] > 0, "empty vocabulary")
    p_gen = softmax(z @ W_y.T)
    e, u = additive_scores(Wq_c, v_c, z, K_proj_c)
    p_copy = softmax(e, mask=mask)
    gate = sigmoid(z @ w_g + b_g[0])
    return WordDist(p_gen, p_copy, gate, u)


def word_nll(dist: WordDist, word_id: int, copy_mask: np.ndarray) -> float:
    """``-log(g P_gen(w) + (1-g) sum_{j: o_j = w} P_copy(j))``; ``word_id < 0`` means not in vocab."""
    gen = dist.p_gen[word_id] if word_id >= 0 else 0.0
    cp = float(dist.p_copy[copy_mask].sum()) if copy_mask.any() else 0.0
    return -math.log(dist.gate * gen + (1.0 - dist.gate) * cp)


def word_nll_backward(dist: WordDist, word_id: int, copy_mask: np.ndarray):
    """Gradients of :func:`word_nll` w.r.t. gen logits, copy scores and gate pre-activation."""
    g = dist.gate
    gen = dist.p_gen[word_id] if word_id >= 0 else 0.0
    cp = float(dist.p_copy[copy_mask].sum()) if copy_mask.any() else 0.0
    P = g * gen + (1.0 - g) * cp
    dP = -1.0 / P
    d_logits_y = np.zeros_like(dist.p_gen)
    if word_id >= 0:
        d_logits_y = -dist.p_gen * (dP * g * gen)
        d_logits_y[word_id] += dP * g * gen
    de_copy = dP * (1.0 - g) * dist.p_copy * (copy_mask.astype(dist.p_copy.dtype) - cp)
    d_gate_pre = dP * (gen - cp) * g * (1.0 - g)
    return d_logits_y, de_copy, d_gate_pre


def stream_step(W, b, inp, s, c):
    """One stream LSTM step; returns the new ``(s, c)``."""
    s2, c2, _ = lstm_cell(W, b, inp, s, c)
    return s2, c2


def loss_forward(action_probs, gold_actions, word_probs) -> float:
    """Negative log-likelihood of gold actions plus generated words.

    ``word_probs[t]`` is ``P(y_t | z_t)`` at Gen steps and ``None`` elsewhere
    (the null word contributes probability one).
    """
    _check(len(action_probs) == len(gold_actions) == len(word_probs), "trace/gold length mismatch")
    total = 0.0
    for probs, a, pw in zip(action_probs, gold_actions, word_probs):
        total -= math.log(probs[a])
        if pw is not None:
            total -= math.log(pw)
    return total


# -- optimizer ---------------------------------------------------------------


@dataclass
class AMSGrad:
    """Adam with the running maximum of the second moment (bias-corrected)."""

    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    v_max: dict = field(default_factory=dict)

    def step(self, params: Params, grads: Mapping[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in params.items():
            g = grads[name]
            _check(g.shape == p.shape, f"gradient shape {g.shape} for {name} {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
                self.v_max[name] = np.zeros_like(p)
            m, v, vmax = self.m[name], self.v[name], self.v_max[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            np.maximum(vmax, v, out=vmax)
            if self.lr:
                p -= (self.lr / bc1) * m / (np.sqrt(vmax / bc2) + self.eps)


# -- gradient checking -----------------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    checked: int
    status: str  # "ok" | "fail" | "unused"


@dataclass
class GradCheckReport:
    tolerance: float
    params: list[ParamCheck]

    @property
    def passed(self) -> bool:
        return all(p.status != "fail" for p in self.params)

    @property
    def failures(self) -> list[str]:
        return [p.name for p in self.params if p.status == "fail"]

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params if p.status == "ok"), default=0.0)


def grad_check(
    loss_fn: Callable[[Params], float],
    params: Params,
    grads: Mapping[str, np.ndarray],
    tolerance: float = 1e-4,
    eps: Union[float, Sequence[float]] = 1e-5,
    floor: float = 1e-6,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, entry by entry.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``.  With several step
    sizes in ``eps`` an entry over tolerance is retried with the next one and
    keeps its smallest error: truncation error shrinks with the step, a wrong
    gradient does not.  A parameter whose analytic and numeric gradients both
    vanish is reported as "unused".
    """
    steps = (eps,) if np.isscalar(eps) else tuple(eps)
    _check(len(steps) > 0, "no finite-difference step given")

    def central(flat, i, h):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn(params)
        flat[i] = orig - h
        down = loss_fn(params)
        flat[i] = orig
        return (up - down) / (2 * h)

    checks = []
    for name in sorted(params):
        p = params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        analytic = np.asarray(grads[name]).reshape(-1)[idx]
        numeric = np.empty(len(idx))
        errors = np.empty(len(idx))
        for k, i in enumerate(idx):
            best = None
            for h in steps:
                n = central(flat, i, h)
                err = abs(analytic[k] - n) / max(abs(analytic[k]), abs(n), floor)
                if best is None or err < best[0]:
                    best = (err, n)
                if err <= tolerance:
                    break
            errors[k], numeric[k] = best
        if not np.any(analytic) and np.max(np.abs(numeric), initial=0.0) < 1e-10:
            checks.append(ParamCheck(name, 0.0, len(idx), "unused"))
            continue
        err = float(errors.max()) if len(idx) else 0.0
        checks.append(ParamCheck(name, err, len(idx), "ok" if err <= tolerance else "fail"))
    return GradCheckReport(tolerance, checks)
