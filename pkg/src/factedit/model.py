"""FactEditor and the encoder-decoder baseline.

Both models keep their weights in a flat ``name -> ndarray`` dict.  Training
runs one instance at a time with teacher forcing and hand-written backward
passes; greedy decoding is batched over instances and reuses the same forward
blocks from :mod:`factedit.neural`.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import metrics
from .core import Action, ActionKind, Instance, Triple, gen
from .neural import (
    AMSGrad,
    GradCheckReport,
    additive_scores,
    additive_scores_backward,
    attention,
    attention_backward,
    bilstm_backward,
    bilstm_encode,
    dense_tanh,
    dense_tanh_backward,
    grad_check,
    lstm_cell,
    lstm_cell_backward,
    sigmoid,
    softmax,
    stream_init,
    stream_init_backward,
    word_distribution,
    word_nll,
    word_nll_backward,
)
from .oracle import derive_actions

log = logging.getLogger(__name__)

UNK, SEP, TEXT, BOS, EOS = "<unk>", "<sep>", "<text>", "<bos>", "<eos>"
SPECIALS = (UNK, SEP, TEXT, BOS, EOS)

KEEP_ID, DROP_ID, GEN_ID = 0, 1, 2
ACTION_IDS = {ActionKind.KEEP: KEEP_ID, ActionKind.DROP: DROP_ID, ActionKind.GEN: GEN_ID}


class ModelError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes.  ``buffer_hidden`` is per direction, so buffer vectors have twice that size."""

    word_dim: int = 100
    entity_dim: int = 100
    pred_dim: int = 100
    buffer_hidden: int = 100
    triple_dim: int = 200
    stream_hidden: int = 200
    attn_dim: int = 200
    dtype: str = "float64"

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if name != "dtype" and (not isinstance(value, int) or value <= 0):
                raise ModelError(f"{name} must be a positive integer, got {value!r}")
        if self.dtype not in ("float64", "float32"):
            raise ModelError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def buffer_dim(self) -> int:
        return 2 * self.buffer_hidden


PRESETS = {
    # embeddings 300, buffers and triples 300, stream 600
    "large": ModelConfig(300, 300, 300, 150, 300, 600, 300),
    # embeddings 100, buffers, triples and stream 200
    "small": ModelConfig(100, 100, 100, 100, 200, 200, 200),
    "tiny": ModelConfig(8, 8, 8, 4, 8, 8, 8),
}


@dataclass(frozen=True)
class DecodeLimits:
    max_consecutive_gen: int = 10
    max_length: Optional[int] = None  # encoder-decoder only; default 2N + 10
    min_length: int = 0  # encoder-decoder only; EOS masked before this length

    def __post_init__(self) -> None:
        if self.max_consecutive_gen < 1:
            raise ModelError("max_consecutive_gen must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0
    eval_every: int = 1
    stop_dev_em: Optional[float] = None
    min_freq: int = 1
    limits: DecodeLimits = field(default_factory=DecodeLimits)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ModelError("lr must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.eval_every < 1:
            raise ModelError("batch_size and eval_every must be positive, epochs non-negative")


# -- vocabulary --------------------------------------------------------------


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ModelError("duplicate vocabulary entries")
        if UNK not in self.stoi:
            raise ModelError("vocabulary lacks the unknown token")
        self.unk = self.stoi[UNK]

    @classmethod
    def build(cls, counts: Counter, min_freq: int = 1, specials: Sequence[str] = (UNK,)) -> "Vocab":
        words = sorted(w for w, c in counts.items() if c >= min_freq and w not in specials)
        return cls(list(specials) + words)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)


@dataclass
class Vocabs:
    words: Vocab
    entities: Vocab
    predicates: Vocab

    @classmethod
    def build(cls, instances: Sequence[Instance], min_freq: int = 1) -> "Vocabs":
        words, ents, preds = Counter(), Counter(), Counter()
        for inst in instances:
            words.update(inst.draft)
            words.update(inst.revised)
            for t in inst.triples:
                words.update((t.subj, t.pred, t.obj))
                ents.update((t.subj, t.obj))
                preds[t.pred] += 1
        return cls(
            Vocab.build(words, min_freq, SPECIALS),
            Vocab.build(ents, min_freq),
            Vocab.build(preds, min_freq),
        )

    def to_record(self) -> dict:
        return {"words": self.words.itos, "entities": self.entities.itos, "predicates": self.predicates.itos}

    @classmethod
    def from_record(cls, rec: dict) -> "Vocabs":
        return cls(Vocab(rec["words"]), Vocab(rec["entities"]), Vocab(rec["predicates"]))


def _extended_ids(tokens: Sequence[str], vocab: Vocab) -> tuple[np.ndarray, list[str]]:
    """Map copy candidates to vocab ids, or to ``len(vocab) + k`` for OOV words."""
    extra: dict[str, int] = {}
    ids = []
    for tok in tokens:
        if tok in vocab:
            ids.append(vocab.stoi[tok])
        else:
            ids.append(len(vocab) + extra.setdefault(tok, len(extra)))
    return np.array(ids, dtype=np.int64), list(extra)


@dataclass
class GoldWord:
    vocab_id: int  # -1 when the word is only reachable by copying
    copy_mask: np.ndarray
    input_id: int  # embedding fed back into the stream


def _gold_word(word: str, vocab: Vocab, candidates: Sequence[str]) -> GoldWord:
    mask = np.array([c == word for c in candidates], dtype=bool)
    if word in vocab:
        vid = vocab.stoi[word]
    elif mask.any():
        vid = -1
    else:
        vid = vocab.unk
    return GoldWord(vid, mask, vocab.id(word))


# -- initialization -------------------------------------------------------------


def _glorot(rng, shape, dtype):
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _lstm_bias(hidden, dtype):
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden : 2 * hidden] = 1.0
    return b


def init_params(shapes: dict, seed: int, dtype: str) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for name in sorted(shapes):
        shape = shapes[name]
        if name.startswith("emb_"):
            params[name] = rng.uniform(-0.1, 0.1, size=shape).astype(dtype)
        elif name in ("bilstm_fw_b", "bilstm_bw_b", "stream_b"):
            params[name] = _lstm_bias(shape[0] // 4, dtype)
        elif name.startswith("b_"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _glorot(rng, shape, dtype)
    return params


# -- shared model plumbing ---------------------------------------------------------


class Editor:
    kind = "editor"

    def __init__(self, config: ModelConfig, vocabs: Vocabs, params: Optional[dict] = None, seed: int = 0):
        self.config = config
        self.vocabs = vocabs
        self.dtype = np.dtype(config.dtype)
        shapes = self.param_shapes()
        if params is None:
            params = init_params(shapes, seed, config.dtype)
        else:
            check_params(params, shapes, config.dtype)
        self.params = params

    def param_shapes(self) -> dict:
        raise NotImplementedError

    def _bilstm_shapes(self) -> dict:
        c = self.config
        h = c.buffer_hidden
        return {
            "emb_word": (len(self.vocabs.words), c.word_dim),
            "bilstm_fw_W": (4 * h, c.word_dim + h),
            "bilstm_fw_b": (4 * h,),
            "bilstm_bw_W": (4 * h, c.word_dim + h),
            "bilstm_bw_b": (4 * h,),
        }

    def prepare(self, inst: Instance):
        raise NotImplementedError

    def loss(self, params: dict, example, want_grads: bool = True):
        """Returns ``(loss, grads or None, n_correct, n_steps)``."""
        raise NotImplementedError

    def decode_batch(self, items: Sequence[tuple[Sequence[str], Sequence[Triple]]], limits: DecodeLimits):
        raise NotImplementedError

    def edit(self, instances: Sequence[Instance], limits: DecodeLimits = DecodeLimits(), batch_size: int = 128):
        out = []
        for k in range(0, len(instances), batch_size):
            chunk = instances[k : k + batch_size]
            out.extend(tokens for _, tokens in self.decode_batch([(i.draft, i.triples) for i in chunk], limits))
        return out


def check_params(params: dict, shapes: dict, dtype: str) -> None:
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    if missing or extra:
        raise ModelError(f"parameter mismatch: missing {missing}, unexpected {extra}")
    for name, shape in shapes.items():
        if tuple(params[name].shape) != tuple(shape):
            raise ModelError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        if params[name].dtype != np.dtype(dtype):
            raise ModelError(f"parameter {name} has dtype {params[name].dtype}, expected {dtype}")


def _embed_words(P, ids):
    return P["emb_word"][ids]


def _bilstm(P, X, lengths=None, keep_cache=False):
    return bilstm_encode(
        P["bilstm_fw_W"], P["bilstm_fw_b"], P["bilstm_bw_W"], P["bilstm_bw_b"], X, lengths, keep_cache
    )


def _bilstm_grads(P, G, cache, dB, ids):
    dWf, dbf, dWb, dbb, dX = bilstm_backward(P["bilstm_fw_W"], P["bilstm_bw_W"], cache, dB)
    G["bilstm_fw_W"] += dWf
    G["bilstm_fw_b"] += dbf
    G["bilstm_bw_W"] += dWb
    G["bilstm_bw_b"] += dbb
    np.add.at(G["emb_word"], ids, dX)


def _word_grads(P, G, wd, gold: GoldWord, z, Wc_q, dK_copy):
    """Backward of the gated word loss; returns the gradient w.r.t. ``z``."""
    d_logits, de_copy, d_gate = word_nll_backward(wd, gold.vocab_id, gold.copy_mask)
    G["W_y"] += np.outer(d_logits, z)
    dz = P["W_y"].T @ d_logits
    dzq, dWq, dv, dK = additive_scores_backward(Wc_q, P["v_c"], z, wd.copy_u, de_copy)
    G["W_c"][:, : Wc_q.shape[1]] += dWq
    G["v_c"] += dv
    dK_copy += dK
    G["w_g"] += d_gate * z
    G["b_g"][0] += d_gate
    return dz + dzq + d_gate * P["w_g"]


def _pad(seqs: Sequence[np.ndarray], fill: int = 0) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), max(int(lengths.max(initial=0)), 1)), fill, dtype=np.int64)
    for k, s in enumerate(seqs):
        out[k, : len(s)] = s
    return out, lengths


def _masked_mean(X, lengths):
    mask = (np.arange(X.shape[1])[None, :] < lengths[:, None]).astype(X.dtype)
    return (X * mask[..., None]).sum(axis=1) / np.maximum(lengths, 1)[:, None]


def _best_words(wd_gate, p_gen, p_copy, cand_ext, V, n_extra):
    """Argmax over the gated mixture; candidates with id >= V are OOV copies."""
    scores = np.zeros((p_gen.shape[0], V + max(n_extra, 1)), dtype=p_gen.dtype)
    scores[:, :V] = wd_gate[:, None] * p_gen
    rows = np.arange(p_gen.shape[0])[:, None]
    np.add.at(scores, (np.broadcast_to(rows, cand_ext.shape), cand_ext), (1.0 - wd_gate)[:, None] * p_copy)
    return scores.argmax(axis=1)


# -- FactEditor --------------------------------------------------------------------


@dataclass
class FactExample:
    draft: tuple[str, ...]
    x_ids: np.ndarray
    subj_ids: np.ndarray
    pred_ids: np.ndarray
    obj_ids: np.ndarray
    objects: tuple[str, ...]
    actions: np.ndarray  # gold action ids
    words: list  # GoldWord at Gen steps, None elsewhere


class FactEditor(Editor):
    kind = "facteditor"

    def param_shapes(self) -> dict:
        c = self.config
        db, dt, ds, da = c.buffer_dim, c.triple_dim, c.stream_hidden, c.attn_dim
        shapes = self._bilstm_shapes()
        shapes.update(
            {
                "emb_entity": (len(self.vocabs.entities), c.entity_dim),
                "emb_pred": (len(self.vocabs.predicates), c.pred_dim),
                "W_t": (dt, 2 * c.entity_dim + c.pred_dim),
                "b_t": (dt,),
                "W_s": (ds, db + dt),
                "b_s": (ds,),
                "stream_W": (4 * ds, dt + db + ds),
                "stream_b": (4 * ds,),
                "W_alpha": (da, ds + db + dt),
                "v_alpha": (da,),
                "W_z": (ds, ds + db + dt),
                "b_z": (ds,),
                "W_a": (3, ds),
                "W_y": (len(self.vocabs.words), ds),
                "W_c": (da, ds + dt),
                "v_c": (da,),
                "w_g": (ds,),
                "b_g": (1,),
                "W_p": (db, c.word_dim),
            }
        )
        return shapes

    def encode_ids(self, draft: Sequence[str], triples: Sequence[Triple]):
        if not draft:
            raise ModelError("empty draft")
        if not triples:
            raise ModelError("empty triple set")
        v = self.vocabs
        return (
            v.words.ids(draft),
            v.entities.ids([t.subj for t in triples]),
            v.predicates.ids([t.pred for t in triples]),
            v.entities.ids([t.obj for t in triples]),
        )

    def prepare(self, inst: Instance, actions: Optional[Sequence[Action]] = None) -> FactExample:
        if actions is None:
            actions = derive_actions(inst.draft, inst.revised)
        x_ids, s_ids, p_ids, o_ids = self.encode_ids(inst.draft, inst.triples)
        objects = tuple(t.obj for t in inst.triples)
        n_consumed = sum(a.kind is not ActionKind.GEN for a in actions)
        if n_consumed != len(inst.draft):
            raise ModelError(f"gold actions consume {n_consumed} of {len(inst.draft)} draft tokens")
        if actions and actions[-1].kind is ActionKind.GEN:
            raise ModelError("gold actions end with Gen after the buffer is empty")
        words = [
            _gold_word(a.word, self.vocabs.words, objects) if a.kind is ActionKind.GEN else None for a in actions
        ]
        ids = np.array([ACTION_IDS[a.kind] for a in actions], dtype=np.int64)
        return FactExample(tuple(inst.draft), x_ids, s_ids, p_ids, o_ids, objects, ids, words)

    def encode(self, params, x_ids, s_ids, p_ids, o_ids, keep_cache=False):
        """Buffer vectors ``(N, 2h)``, triple vectors ``(M, d_t)`` and the first stream state."""
        P = params
        B, bcache = _bilstm(P, _embed_words(P, x_ids), keep_cache=keep_cache)
        cat = np.concatenate([P["emb_entity"][s_ids], P["emb_pred"][p_ids], P["emb_entity"][o_ids]], axis=-1)
        T = dense_tanh(P["W_t"], P["b_t"], cat)
        s1, means = stream_init(P["W_s"], P["b_s"], B, T)
        return B, T, s1, (bcache, cat, means)

    def encode_instance(self, draft, triples):
        B, T, s1, _ = self.encode(self.params, *self.encode_ids(draft, triples))
        return B, T, s1

    def loss(self, params: dict, ex: FactExample, want_grads: bool = True):
        P = params
        c = self.config
        db, dt, ds = c.buffer_dim, c.triple_dim, c.stream_hidden
        Bm, T, s1, (bcache, cat, means) = self.encode(P, ex.x_ids, ex.subj_ids, ex.pred_ids, ex.obj_ids, want_grads)
        Wa_q, Wa_k = P["W_alpha"][:, : ds + db], P["W_alpha"][:, ds + db :]
        Wc_q, Wc_k = P["W_c"][:, :ds], P["W_c"][:, ds:]
        TprojA = T @ Wa_k.T
        TprojC = T @ Wc_k.T

        s, cell = s1, np.zeros(ds, dtype=s1.dtype)
        idx = 0
        total = 0.0
        correct = 0
        steps = []
        for a, gold in zip(ex.actions, ex.words):
            bt = Bm[idx]
            q = np.concatenate([s, bt])
            alpha, ctx, uA = attention(Wa_q, P["v_alpha"], q, T, TprojA)
            zin = np.concatenate([q, ctx])
            z = np.tanh(P["W_z"] @ zin + P["b_z"])
            pa = softmax(P["W_a"] @ z)
            total -= math.log(pa[a])
            correct += int(np.argmax(pa) == a)
            wd = lcache = None
            if a == GEN_ID:
                wd = word_distribution(P["W_y"], Wc_q, P["v_c"], P["w_g"], P["b_g"], z, TprojC)
                total += word_nll(wd, gold.vocab_id, gold.copy_mask)
                inp = np.concatenate([ctx, P["W_p"] @ P["emb_word"][gold.input_id]])
            else:
                inp = np.concatenate([ctx, bt])
            if a != DROP_ID:
                s_new, c_new, lcache = lstm_cell(P["stream_W"], P["stream_b"], inp, s, cell)
            steps.append((a, gold, idx, q, alpha, ctx, uA, zin, z, pa, wd, lcache))
            if a != GEN_ID:
                idx += 1
            if a != DROP_ID:
                s, cell = s_new, c_new
        if not want_grads:
            return total, None, correct, len(steps)

        G = {name: np.zeros_like(p) for name, p in P.items()}
        dB = np.zeros_like(Bm)
        dT = np.zeros_like(T)
        dTprojA = np.zeros_like(TprojA)
        dTprojC = np.zeros_like(TprojC)
        d_s = np.zeros(ds, dtype=s1.dtype)
        d_c = np.zeros(ds, dtype=s1.dtype)
        for a, gold, i, q, alpha, ctx, uA, zin, z, pa, wd, lcache in reversed(steps):
            if a != DROP_ID:
                dW, dbias, dxh, d_c = lstm_cell_backward(P["stream_W"], lcache, d_s, d_c)
                G["stream_W"] += dW
                G["stream_b"] += dbias
                d_s = dxh[dt + db :].copy()
                dctx = dxh[:dt].copy()
                if a == KEEP_ID:
                    dbt = dxh[dt : dt + db].copy()
                else:
                    dproj = dxh[dt : dt + db]
                    G["W_p"] += np.outer(dproj, P["emb_word"][gold.input_id])
                    G["emb_word"][gold.input_id] += P["W_p"].T @ dproj
                    dbt = np.zeros(db, dtype=s1.dtype)
            else:
                dctx = np.zeros(dt, dtype=s1.dtype)
                dbt = np.zeros(db, dtype=s1.dtype)
            d_logits = pa.copy()
            d_logits[a] -= 1.0
            G["W_a"] += np.outer(d_logits, z)
            dz = P["W_a"].T @ d_logits
            if a == GEN_ID:
                dz = dz + _word_grads(P, G, wd, gold, z, Wc_q, dTprojC)
            dWz, dbz, dzin = dense_tanh_backward(P["W_z"], zin, z, dz)
            G["W_z"] += dWz
            G["b_z"] += dbz
            dq = dzin[: ds + db]
            dctx += dzin[ds + db :]
            dq_att, dWaq, dva, dK, dTctx = attention_backward(Wa_q, P["v_alpha"], q, T, uA, alpha, dctx)
            G["W_alpha"][:, : ds + db] += dWaq
            G["v_alpha"] += dva
            dTprojA += dK
            dT += dTctx
            dq = dq + dq_att
            d_s = d_s + dq[:ds]
            dB[i] += dbt + dq[ds:]
        G["W_alpha"][:, ds + db :] += dTprojA.T @ T
        dT += dTprojA @ Wa_k
        G["W_c"][:, ds:] += dTprojC.T @ T
        dT += dTprojC @ Wc_k
        dWs, dbs, (dBm, dTm) = stream_init_backward(P["W_s"], means, s1, d_s, [(len(Bm), db), (len(T), dt)])
        G["W_s"] += dWs
        G["b_s"] += dbs
        dB += dBm
        dT += dTm
        dWt, dbt_, dcat = dense_tanh_backward(P["W_t"], cat, T, dT)
        G["W_t"] += dWt
        G["b_t"] += dbt_
        de = c.entity_dim
        np.add.at(G["emb_entity"], ex.subj_ids, dcat[:, :de])
        np.add.at(G["emb_pred"], ex.pred_ids, dcat[:, de : de + c.pred_dim])
        np.add.at(G["emb_entity"], ex.obj_ids, dcat[:, de + c.pred_dim :])
        _bilstm_grads(P, G, bcache, dB, ex.x_ids)
        return total, G, correct, len(steps)

    def decode_batch(self, items, limits: DecodeLimits = DecodeLimits()):
        """Greedy decoding; returns ``[(actions, tokens), ...]`` in input order."""
        if not items:
            return []
        P = self.params
        c = self.config
        db, ds = c.buffer_dim, c.stream_hidden
        words = self.vocabs.words
        V = len(words)
        encoded = [self.encode_ids(x, ts) for x, ts in items]
        xpad, lengths = _pad([e[0] for e in encoded])
        spad, mlen = _pad([e[1] for e in encoded])
        ppad, _ = _pad([e[2] for e in encoded])
        opad, _ = _pad([e[3] for e in encoded])
        nB, Mmax = spad.shape
        tmask = np.arange(Mmax)[None, :] < mlen[:, None]
        cand = []
        extras = []
        for _, ts in items:
            ids, extra = _extended_ids([t.obj for t in ts], words)
            cand.append(ids)
            extras.append(extra)
        cand_ext, _ = _pad(cand)
        n_extra = max(len(e) for e in extras)

        Bm, _ = _bilstm(P, P["emb_word"][xpad], lengths)
        cat = np.concatenate([P["emb_entity"][spad], P["emb_pred"][ppad], P["emb_entity"][opad]], axis=-1)
        T = dense_tanh(P["W_t"], P["b_t"], cat)
        means = np.concatenate([_masked_mean(Bm, lengths), _masked_mean(T, mlen)], axis=-1)
        s = dense_tanh(P["W_s"], P["b_s"], means)
        cell = np.zeros_like(s)
        Wa_q, Wa_k = P["W_alpha"][:, : ds + db], P["W_alpha"][:, ds + db :]
        Wc_q, Wc_k = P["W_c"][:, :ds], P["W_c"][:, ds:]
        TprojA = T @ Wa_k.T
        TprojC = T @ Wc_k.T

        idx = np.zeros(nB, dtype=np.int64)
        consec = np.zeros(nB, dtype=np.int64)
        history: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        active = np.nonzero(idx < lengths)[0]
        while active.size:
            r = active
            bt = Bm[r, idx[r]]
            q = np.concatenate([s[r], bt], axis=-1)
            alpha, ctx, _ = attention(Wa_q, P["v_alpha"], q, T[r], TprojA[r], tmask[r])
            z = np.tanh(np.concatenate([q, ctx], axis=-1) @ P["W_z"].T + P["b_z"])
            logits = z @ P["W_a"].T
            logits[consec[r] >= limits.max_consecutive_gen, GEN_ID] = -np.inf
            act = logits.argmax(axis=1)
            word = np.full(len(r), -1, dtype=np.int64)
            g = np.nonzero(act == GEN_ID)[0]
            if g.size:
                p_gen = softmax(z[g] @ P["W_y"].T)
                e, _ = additive_scores(Wc_q, P["v_c"], z[g], TprojC[r[g]])
                p_copy = softmax(e, mask=tmask[r[g]])
                gate = sigmoid(z[g] @ P["w_g"] + P["b_g"][0])
                word[g] = _best_words(gate, p_gen, p_copy, cand_ext[r[g]], V, n_extra)
            upd = np.nonzero(act != DROP_ID)[0]
            if upd.size:
                feed = bt[upd].copy()
                gu = act[upd] == GEN_ID
                if gu.any():
                    wid = word[upd[gu]]
                    wid = np.where(wid < V, wid, words.unk)
                    feed[gu] = P["emb_word"][wid] @ P["W_p"].T
                inp = np.concatenate([ctx[upd], feed], axis=-1)
                s_new, c_new, _ = lstm_cell(P["stream_W"], P["stream_b"], inp, s[r[upd]], cell[r[upd]])
                s[r[upd]] = s_new
                cell[r[upd]] = c_new
            history.append((r, act, word))
            idx[r] += act != GEN_ID
            consec[r] = np.where(act == GEN_ID, consec[r] + 1, 0)
            active = r[idx[r] < lengths[r]]

        actions: list[list[Action]] = [[] for _ in items]
        streams: list[list[str]] = [[] for _ in items]
        pos = [0] * len(items)
        for r, act, word in history:
            for k, row in enumerate(r.tolist()):
                a = act[k]
                if a == GEN_ID:
                    w = int(word[k])
                    tok = words.itos[w] if w < V else extras[row][w - V]
                    actions[row].append(gen(tok))
                    streams[row].append(tok)
                elif a == KEEP_ID:
                    actions[row].append(Action(ActionKind.KEEP))
                    streams[row].append(items[row][0][pos[row]])
                    pos[row] += 1
                else:
                    actions[row].append(Action(ActionKind.DROP))
                    pos[row] += 1
        return [(tuple(a), tuple(t)) for a, t in zip(actions, streams)]

    def decode_greedy(self, draft, triples, limits: DecodeLimits = DecodeLimits()):
        return self.decode_batch([(draft, triples)], limits)[0]


# -- encoder-decoder baseline ------------------------------------------------------


def linearize(draft: Sequence[str], triples: Sequence[Triple]) -> tuple[str, ...]:
    """``subj pred obj <sep>`` per triple, then ``<text>`` and the draft."""
    out: list[str] = []
    for t in triples:
        out.extend((t.subj, t.pred, t.obj, SEP))
    out.append(TEXT)
    out.extend(draft)
    return tuple(out)


@dataclass
class SeqExample:
    source: tuple[str, ...]
    src_ids: np.ndarray
    targets: list  # GoldWord per output position, EOS last


class EncDecEditor(Editor):
    kind = "encdec"

    def param_shapes(self) -> dict:
        c = self.config
        db, ds, da = c.buffer_dim, c.stream_hidden, c.attn_dim
        shapes = self._bilstm_shapes()
        shapes.update(
            {
                "W_s": (ds, db),
                "b_s": (ds,),
                "stream_W": (4 * ds, db + db + ds),
                "stream_b": (4 * ds,),
                "W_alpha": (da, ds + db),
                "v_alpha": (da,),
                "W_z": (ds, ds + db),
                "b_z": (ds,),
                "W_y": (len(self.vocabs.words), ds),
                "W_c": (da, ds + db),
                "v_c": (da,),
                "w_g": (ds,),
                "b_g": (1,),
                "W_p": (db, c.word_dim),
            }
        )
        return shapes

    def prepare(self, inst: Instance) -> SeqExample:
        source = linearize(inst.draft, inst.triples)
        words = self.vocabs.words
        targets = [_gold_word(w, words, source) for w in inst.revised]
        targets.append(GoldWord(words.stoi[EOS], np.zeros(len(source), dtype=bool), words.stoi[EOS]))
        return SeqExample(source, words.ids(source), targets)

    def loss(self, params: dict, ex: SeqExample, want_grads: bool = True):
        P = params
        c = self.config
        db, ds = c.buffer_dim, c.stream_hidden
        H, bcache = _bilstm(P, _embed_words(P, ex.src_ids), keep_cache=want_grads)
        s1, means = stream_init(P["W_s"], P["b_s"], H)
        Wa_q, Wa_k = P["W_alpha"][:, :ds], P["W_alpha"][:, ds:]
        Wc_q, Wc_k = P["W_c"][:, :ds], P["W_c"][:, ds:]
        HprojA = H @ Wa_k.T
        HprojC = H @ Wc_k.T
        V = len(self.vocabs.words)
        cand_ext, _ = _extended_ids(ex.source, self.vocabs.words)

        s, cell = s1, np.zeros(ds, dtype=s1.dtype)
        total = 0.0
        correct = 0
        steps = []
        last = len(ex.targets) - 1
        for t, gold in enumerate(ex.targets):
            alpha, ctx, uA = attention(Wa_q, P["v_alpha"], s, H, HprojA)
            zin = np.concatenate([s, ctx])
            z = np.tanh(P["W_z"] @ zin + P["b_z"])
            wd = word_distribution(P["W_y"], Wc_q, P["v_c"], P["w_g"], P["b_g"], z, HprojC)
            total += word_nll(wd, gold.vocab_id, gold.copy_mask)
            best = int(wd.mixture(V, cand_ext).argmax())
            correct += int(best == gold.vocab_id or (best >= V and gold.copy_mask[cand_ext == best].any()))
            lcache = None
            if t < last:
                inp = np.concatenate([ctx, P["W_p"] @ P["emb_word"][gold.input_id]])
                s_new, c_new, lcache = lstm_cell(P["stream_W"], P["stream_b"], inp, s, cell)
            steps.append((gold, s, alpha, ctx, uA, zin, z, wd, lcache))
            if lcache is not None:
                s, cell = s_new, c_new
        if not want_grads:
            return total, None, correct, len(steps)

        G = {name: np.zeros_like(p) for name, p in P.items()}
        dH = np.zeros_like(H)
        dHprojA = np.zeros_like(HprojA)
        dHprojC = np.zeros_like(HprojC)
        d_s = np.zeros(ds, dtype=s1.dtype)
        d_c = np.zeros(ds, dtype=s1.dtype)
        for gold, s_t, alpha, ctx, uA, zin, z, wd, lcache in reversed(steps):
            if lcache is not None:
                dW, dbias, dxh, d_c = lstm_cell_backward(P["stream_W"], lcache, d_s, d_c)
                G["stream_W"] += dW
                G["stream_b"] += dbias
                d_s = dxh[2 * db :].copy()
                dctx = dxh[:db].copy()
                dproj = dxh[db : 2 * db]
                G["W_p"] += np.outer(dproj, P["emb_word"][gold.input_id])
                G["emb_word"][gold.input_id] += P["W_p"].T @ dproj
            else:
                dctx = np.zeros(db, dtype=s1.dtype)
            dz = _word_grads(P, G, wd, gold, z, Wc_q, dHprojC)
            dWz, dbz, dzin = dense_tanh_backward(P["W_z"], zin, z, dz)
            G["W_z"] += dWz
            G["b_z"] += dbz
            d_s = d_s + dzin[:ds]
            dctx += dzin[ds:]
            dq, dWaq, dva, dK, dHctx = attention_backward(Wa_q, P["v_alpha"], s_t, H, uA, alpha, dctx)
            G["W_alpha"][:, :ds] += dWaq
            G["v_alpha"] += dva
            dHprojA += dK
            dH += dHctx
            d_s = d_s + dq
        G["W_alpha"][:, ds:] += dHprojA.T @ H
        dH += dHprojA @ Wa_k
        G["W_c"][:, ds:] += dHprojC.T @ H
        dH += dHprojC @ Wc_k
        dWs, dbs, (dHm,) = stream_init_backward(P["W_s"], means, s1, d_s, [(len(H), db)])
        G["W_s"] += dWs
        G["b_s"] += dbs
        dH += dHm
        _bilstm_grads(P, G, bcache, dH, ex.src_ids)
        return total, G, correct, len(steps)

    def decode_batch(self, items, limits: DecodeLimits = DecodeLimits(), return_attention: bool = False):
        """Greedy decoding until ``<eos>`` or the length limit; returns ``[(None, tokens), ...]``."""
        if not items:
            return []
        P = self.params
        c = self.config
        db, ds = c.buffer_dim, c.stream_hidden
        words = self.vocabs.words
        V = len(words)
        eos = words.stoi[EOS]
        sources = [linearize(x, ts) for x, ts in items]
        src, lengths = _pad([words.ids(sq) for sq in sources])
        nB, L = src.shape
        smask = np.arange(L)[None, :] < lengths[:, None]
        cand, extras = zip(*(_extended_ids(sq, words) for sq in sources))
        cand_ext, _ = _pad(list(cand))
        n_extra = max(len(e) for e in extras)
        max_len = np.array(
            [limits.max_length if limits.max_length is not None else 2 * len(x) + 10 for x, _ in items]
        )

        H, _ = _bilstm(P, P["emb_word"][src], lengths)
        s = dense_tanh(P["W_s"], P["b_s"], _masked_mean(H, lengths))
        cell = np.zeros_like(s)
        Wa_q, Wa_k = P["W_alpha"][:, :ds], P["W_alpha"][:, ds:]
        Wc_q, Wc_k = P["W_c"][:, :ds], P["W_c"][:, ds:]
        HprojA = H @ Wa_k.T
        HprojC = H @ Wc_k.T

        outputs: list[list[str]] = [[] for _ in items]
        attn_log = []
        active = np.nonzero(max_len > 0)[0]
        t = 0
        while active.size:
            r = active
            alpha, ctx, _ = attention(Wa_q, P["v_alpha"], s[r], H[r], HprojA[r], smask[r])
            if return_attention:
                attn_log.append((r, alpha))
            z = np.tanh(np.concatenate([s[r], ctx], axis=-1) @ P["W_z"].T + P["b_z"])
            p_gen = softmax(z @ P["W_y"].T)
            if t < limits.min_length:
                p_gen[:, eos] = 0.0
            e, _ = additive_scores(Wc_q, P["v_c"], z, HprojC[r])
            p_copy = softmax(e, mask=smask[r])
            gate = sigmoid(z @ P["w_g"] + P["b_g"][0])
            word = _best_words(gate, p_gen, p_copy, cand_ext[r], V, n_extra)
            done = word == eos
            for k, row in enumerate(r.tolist()):
                if not done[k]:
                    w = int(word[k])
                    outputs[row].append(words.itos[w] if w < V else extras[row][w - V])
            t += 1
            keep = (~done) & (t < max_len[r])
            if not keep.any():
                break
            feed_ids = np.where(word < V, word, words.unk)[keep]
            inp = np.concatenate([ctx[keep], P["emb_word"][feed_ids] @ P["W_p"].T], axis=-1)
            s_new, c_new, _ = lstm_cell(P["stream_W"], P["stream_b"], inp, s[r[keep]], cell[r[keep]])
            s[r[keep]] = s_new
            cell[r[keep]] = c_new
            active = r[keep]
        result = [(None, tuple(o)) for o in outputs]
        if return_attention:
            return result, attn_log
        return result

    def decode_greedy(self, draft, triples, limits: DecodeLimits = DecodeLimits()):
        return self.decode_batch([(draft, triples)], limits)[0][1]


MODELS = {FactEditor.kind: FactEditor, EncDecEditor.kind: EncDecEditor}


def build_model(kind: str, config: ModelConfig, vocabs: Vocabs, seed: int = 0) -> Editor:
    try:
        cls = MODELS[kind]
    except KeyError:
        raise ModelError(f"unknown model {kind!r}; choose from {sorted(MODELS)}") from None
    return cls(config, vocabs, seed=seed)


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    model: Editor
    log: list[dict]
    best_epoch: int
    best_dev_bleu: float


def teacher_forced_accuracy(model: Editor, examples) -> float:
    """Percentage of gold decisions the model ranks first under teacher forcing."""
    hits = steps = 0
    for ex in examples:
        _, _, n_correct, n_steps = model.loss(model.params, ex, want_grads=False)
        hits += n_correct
        steps += n_steps
    return 100.0 * hits / max(steps, 1)


def batch_gradients(model: Editor, params: dict, examples) -> tuple[float, dict, int, int]:
    total = 0.0
    grads = None
    hits = steps = 0
    for ex in examples:
        loss, G, n_correct, n_steps = model.loss(params, ex)
        total += loss
        hits += n_correct
        steps += n_steps
        if grads is None:
            grads = G
        else:
            for name in grads:
                grads[name] += G[name]
    scale = 1.0 / len(examples)
    for g in grads.values():
        g *= scale
    return total, grads, hits, steps


def dev_scores(model: Editor, dev: Sequence[Instance], limits: DecodeLimits) -> tuple[float, float]:
    preds = model.edit(dev, limits)
    refs = [i.revised for i in dev]
    return metrics.bleu(preds, refs), metrics.exact_match(preds, refs)


def train(
    model: Editor,
    train_set: Sequence[Instance],
    dev_set: Sequence[Instance],
    config: TrainConfig,
    on_epoch: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Mini-batch AMSGrad training keeping the parameters with the best dev BLEU."""
    if not train_set:
        raise ModelError("empty training set")
    if not dev_set:
        raise ModelError("empty development set")
    examples = [model.prepare(inst) for inst in train_set]
    opt = AMSGrad(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rng = np.random.default_rng([config.seed, 1])  # shuffling stream, separate from initialization
    best = (-1.0, -1, {k: v.copy() for k, v in model.params.items()})
    records = []
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        hits = steps = 0
        for k in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[k : k + config.batch_size]]
            loss, grads, h, n = batch_gradients(model, model.params, batch)
            opt.step(model.params, grads)
            epoch_loss += loss
            hits += h
            steps += n
        rec = {
            "epoch": epoch,
            "loss": epoch_loss / len(examples),
            "train_step_acc": 100.0 * hits / max(steps, 1),
        }
        stop = False
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            bleu, em = dev_scores(model, dev_set, config.limits)
            rec["dev_bleu"] = bleu
            rec["dev_em"] = em
            if bleu > best[0]:
                best = (bleu, epoch, {k: v.copy() for k, v in model.params.items()})
            stop = config.stop_dev_em is not None and em >= config.stop_dev_em
        records.append(rec)
        log.info("epoch %d loss %.4f (%.1fs)", epoch, rec["loss"], time.perf_counter() - started)
        if on_epoch is not None:
            on_epoch(rec)
        if stop:
            break
    if best[1] > 0:
        model.params = best[2]
    return TrainResult(model, records, best[1], best[0])


# -- gradient check on whole models ------------------------------------------------


def gradcheck_model(model: Editor, inst: Instance, tolerance: float = 1e-4, **kwargs) -> GradCheckReport:
    if model.dtype != np.float64:
        raise ModelError("gradient checking needs double precision")
    ex = model.prepare(inst)
    _, grads, _, _ = model.loss(model.params, ex)
    return grad_check(lambda p: model.loss(p, ex, want_grads=False)[0], model.params, grads, tolerance, **kwargs)


# -- throughput ----------------------------------------------------------------------


def throughput(
    model: Editor, instances: Sequence[Instance], batch_size: int = 128, limits: DecodeLimits = DecodeLimits()
) -> tuple[float, float]:
    """Greedy-decoding speed as ``(draft words per second, seconds)``."""
    n_words = sum(len(i.draft) for i in instances)
    started = time.perf_counter()
    for k in range(0, len(instances), batch_size):
        chunk = instances[k : k + batch_size]
        model.decode_batch([(i.draft, i.triples) for i in chunk], limits)
    elapsed = time.perf_counter() - started
    return n_words / elapsed, elapsed


# -- checkpoints -------------------------------------------------------------------
#
# Layout (all integers little-endian):
#   8 bytes   magic b"FEDCKPT\0"
#   4 bytes   uint32 format version (1)
#   8 bytes   uint64 header length H
#   H bytes   UTF-8 JSON header, keys sorted:
#               {"format_version", "model", "config", "vocab",
#                "params": [{"name", "shape", "dtype", "offset", "nbytes"}, ...]}
#   rest      raw little-endian parameter arrays (C order) at the given offsets,
#             measured from the end of the header, in sorted name order

MAGIC = b"FEDCKPT\0"
FORMAT_VERSION = 1


def save_checkpoint(model: Editor, path: Union[str, Path], extra: Optional[dict] = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype=model.params[name].dtype.newbyteorder("<"))
        data = arr.tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset, "nbytes": len(data)}
        )
        blobs.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION,
        "model": model.kind,
        "config": asdict(model.config),
        "vocab": model.vocabs.to_record(),
        "params": entries,
    }
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(raw)))
        fh.write(raw)
        for data in blobs:
            fh.write(data)


def load_checkpoint(path: Union[str, Path], expect_model: Optional[str] = None) -> Editor:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ModelError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != FORMAT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    body = memoryview(blob)[20 + hlen :]
    kind = header["model"]
    if expect_model is not None and kind != expect_model:
        raise ModelError(f"{path}: checkpoint holds a {kind} model, not {expect_model}")
    if kind not in MODELS:
        raise ModelError(f"{path}: unknown model kind {kind!r}")
    config = ModelConfig(**header["config"])
    params = {}
    for e in header["params"]:
        dtype = np.dtype(e["dtype"]).newbyteorder("<")
        chunk = body[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(chunk, dtype=dtype).reshape(e["shape"])
        params[e["name"]] = arr.astype(np.dtype(e["dtype"]), copy=True)
    return MODELS[kind](config, Vocabs.from_record(header["vocab"]), params=params)


def bench_limits(kind: str, length: int) -> DecodeLimits:
    """Decode limits that make the amount of work a function of ``length`` only.

    FactEditor may emit one Gen between reads; the encoder-decoder must emit
    exactly ``length`` words, mirroring an editor that rewrites the draft.
    """
    if kind == EncDecEditor.kind:
        return DecodeLimits(max_consecutive_gen=1, max_length=length, min_length=length)
    return DecodeLimits(max_consecutive_gen=1)


def scaling_benchmark(
    kinds: Sequence[str],
    lengths: Sequence[int],
    config: ModelConfig,
    batch_size: int = 128,
    n_triples: int = 4,
    seed: int = 0,
) -> list[dict]:
    """Decode one batch of random drafts per length with randomly initialized models."""
    from .synthetic import bench_items

    workloads = {n: bench_items(batch_size, n, n_triples, seed + n) for n in lengths}
    tokens = sorted({t for _, toks in workloads.values() for t in toks})
    insts = [i for n in lengths for i in workloads[n][0]]
    words = Vocab(list(SPECIALS) + tokens)
    ents = Vocab([UNK] + sorted({e for i in insts for t in i.triples for e in (t.subj, t.obj)}))
    preds = Vocab([UNK] + sorted({t.pred for i in insts for t in i.triples}))
    vocabs = Vocabs(words, ents, preds)
    rows = []
    for kind in kinds:
        model = build_model(kind, config, vocabs, seed=seed)
        for n in lengths:
            wps, secs = throughput(model, workloads[n][0], batch_size, bench_limits(kind, n))
            rows.append({"model": kind, "batch_size": batch_size, "length": n, "seconds": secs, "words_per_second": wps})
            log.info("bench %s N=%d %.2fs", kind, n, secs)
    return rows


# -- gradient-check suite on random tiny problems --------------------------------------


def random_tiny_case(rng: np.random.Generator) -> tuple[ModelConfig, Instance]:
    """A random problem with dims <= 8, vocabulary <= 20, N <= 6 and M <= 3.

    The revised text always needs a generated word and a copied object so
    that every parameter receives gradient.
    """
    dims = [int(d) for d in rng.integers(2, 9, size=7)]
    config = ModelConfig(
        word_dim=dims[0], entity_dim=dims[1], pred_dim=dims[2], buffer_hidden=max(dims[3] // 2, 1),
        triple_dim=dims[4], stream_hidden=dims[5], attn_dim=dims[6],
    )
    alphabet = ["a", "b", "c", "d"]
    m = int(rng.integers(2, 4))  # one triple makes both attentions constant
    subj = "S"
    triples = tuple(Triple(subj, f"r{k}", f"O{k}") for k in range(m))
    n = int(rng.integers(2, 7))
    draft = [alphabet[k] for k in rng.integers(0, len(alphabet), n)]
    revised = list(draft)
    del revised[int(rng.integers(n))]
    revised.insert(int(rng.integers(len(revised) + 1)), f"O{int(rng.integers(m))}")
    revised.insert(int(rng.integers(len(revised) + 1)), "e")
    return config, Instance(triples, tuple(draft), tuple(revised))


@dataclass
class SuiteResult:
    config: ModelConfig
    model: str
    report: GradCheckReport
    seconds: float


def gradcheck_suite(
    seed: int, n_configs: int = 5, tolerance: float = 1e-4, kinds=(FactEditor.kind, EncDecEditor.kind),
    max_entries: Optional[int] = None, eps=(1e-4, 1e-5),
) -> list[SuiteResult]:
    """Finite-difference checks of both models on ``n_configs`` random tiny problems."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_configs):
        config, inst = random_tiny_case(rng)
        vocabs = Vocabs.build([inst])
        for kind in kinds:
            started = time.perf_counter()
            model = build_model(kind, config, vocabs, seed=seed * 1000 + k)
            # larger weights keep gradients well above the finite-difference noise floor
            for p in model.params.values():
                p *= 2.0
            report = gradcheck_model(model, inst, tolerance, eps=eps, max_entries=max_entries, rng=rng)
            out.append(SuiteResult(config, kind, report, time.perf_counter() - started))
    return out
