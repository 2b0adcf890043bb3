"""Encoder-decoder transformer with pluggable scene-aware attention heads.

Designated encoder self-attention heads multiply their post-softmax weights
elementwise by a structural mask (scene, parent-Gaussian, or tree-distance
families all plug in the same way, after the softmax). Designated decoder
cross-attention heads instead aggregate the encoder output over the mask to
form their keys, so source tokens with identical mask rows become
indistinguishable to every query. Unmasked heads are plain scaled
dot-product attention.

Training is a single deterministic stream: Adam on a Noam-shaped learning
rate, label-smoothed per-token cross entropy, seeded parameter init and
batch order. Decoding is beam search with GNMT-style length normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError, NumericError
from .masks import MaskSpec
from .textpipe import BOS, EOS

NEG_BIAS = -1e30  # additive pre-softmax bias for causally blocked positions


# -- configuration ---------------------------------------------------------------


@dataclass
class ModelConfig:
    src_vocab: int
    trg_vocab: int
    d_model: int = 256
    enc_layers: int = 4
    dec_layers: int = 4
    heads: int = 8
    d_ff: int = None
    max_len: int = 256

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model={self.d_model} not divisible by heads={self.heads}"
            )
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model

    @property
    def d_k(self):
        return self.d_model // self.heads


@dataclass(frozen=True)
class HeadSpec:
    """Placement of one mask family onto attention heads.

    site is "encoder" (self-attention, post-softmax multiplication) or
    "cross" (decoder cross-attention via aggregated keys). Layer and head
    indices are 1-based, as in the experiment grids.
    """

    site: str
    layers: frozenset
    heads: frozenset
    mask: MaskSpec
    label: str = None

    def __post_init__(self):
        if self.site not in ("encoder", "cross"):
            raise ConfigError(f"unknown head site {self.site!r}")
        object.__setattr__(self, "layers", frozenset(self.layers))
        object.__setattr__(self, "heads", frozenset(self.heads))
        if not self.layers or not self.heads:
            raise ConfigError("a head spec needs at least one layer and head")
        if self.label is None:
            object.__setattr__(self, "label", self.mask.family)


def sasa_default(mask=None):
    """Tuned placement for the scene-aware self-attention head."""
    return HeadSpec("encoder", {4}, {1}, mask or MaskSpec("binary"), "sasa")


def sacra_default(mask=None):
    """Tuned placement for the scene-aware cross-attention head."""
    return HeadSpec("cross", {2, 3}, {1}, mask or MaskSpec("binary"), "sacra")


def pascal_default():
    return HeadSpec("encoder", {1}, {1, 2, 3, 4, 5}, MaskSpec("pascal"), "pascal")


def udiscal_default():
    return HeadSpec("encoder", {1}, {1}, MaskSpec("udiscal"), "udiscal")


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 128
    seed: int = 0
    warmup: int = 4000
    label_smoothing: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-9
    eval_every: int = 0
    target_accuracy: float = None

    def __post_init__(self):
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label smoothing must lie in [0, 1)")
        if self.warmup < 1:
            raise ConfigError("warmup must be at least 1")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch size must be positive")


@dataclass
class DecodeConfig:
    beam: int = 4
    alpha: float = 0.6
    max_len: int = 64

    def __post_init__(self):
        if self.beam < 1:
            raise ConfigError("beam width must be at least 1")


# -- attention operations ----------------------------------------------------------


def _check_mask(mask, size):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (size, size):
        raise DimensionError(
            f"mask shape {mask.shape} does not match source length {size}"
        )
    if mask.min(initial=0.0) < 0.0 or mask.max(initial=0.0) > 1.0:
        raise DimensionError("mask values must lie in [0, 1]")
    return mask


def vanilla_attention(q, k, v, causal=False):
    """Scaled dot-product attention; optionally causally blocked."""
    d_k = q.shape[1]
    logits = ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(d_k))
    if causal:
        logits = ad.add(logits, Tensor(_causal_bias(q.shape[0])))
    return ad.matmul(ad.softmax_rows(logits), v)


def sasa_attention(q, k, v, mask):
    """Self-attention whose post-softmax weights are masked elementwise.

    No renormalization happens after masking, so a row's weights sum to at
    most 1 (exactly 1 only under an all-ones mask row).
    """
    mask = _check_mask(mask, q.shape[0])
    d_k = q.shape[1]
    s = ad.softmax_rows(ad.matmul(q, ad.transpose(k)) * (1.0 / math.sqrt(d_k)))
    return ad.matmul(ad.mul(s, Tensor(mask)), v)


def sacra_attention_weights(q_dec, x_enc, d_k, mask):
    """Attention weights over scene-aggregated keys.

    Keys are (mask @ x_enc) / L_src: each source position's key is the sum
    of encoder outputs over the positions its mask row admits, scaled by the
    source length. Source tokens with identical mask rows get identical keys
    and therefore identical weight columns. Queries must be d_model wide.
    """
    l_src = x_enc.shape[0]
    mask = _check_mask(mask, l_src)
    if q_dec.shape[1] != x_enc.shape[1]:
        raise DimensionError(
            "query width must equal encoder width for aggregated keys"
        )
    k_tilde = ad.matmul(Tensor(mask), x_enc) * (1.0 / l_src)
    return ad.softmax_rows(
        ad.matmul(q_dec, ad.transpose(k_tilde)) * (1.0 / math.sqrt(d_k))
    )


def sacra_attention(q_dec, x_enc, v, mask):
    """Cross-attention over scene-aggregated keys; scaling uses the value width."""
    return ad.matmul(sacra_attention_weights(q_dec, x_enc, v.shape[1], mask), v)


_CAUSAL_CACHE = {}


def _causal_bias(n):
    if n not in _CAUSAL_CACHE:
        _CAUSAL_CACHE[n] = np.triu(np.full((n, n), NEG_BIAS), k=1)
    return _CAUSAL_CACHE[n]


def sinusoidal_positions(max_len, d_model):
    pe = np.zeros((max_len, d_model))
    pos = np.arange(max_len)[:, None]
    div = np.exp(np.arange(0, d_model, 2) * (-math.log(10000.0) / d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return pe


# -- the transformer -----------------------------------------------------------------


class Model:
    def __init__(self, cfg, head_specs=(), seed=0):
        self.cfg = cfg
        self.head_specs = tuple(head_specs)
        self.enc_masked, self.cross_masked = self._resolve_specs()
        self.params = {}
        self._rng = np.random.default_rng(seed)
        self._build()
        self.positions = sinusoidal_positions(cfg.max_len, cfg.d_model)

    # spec resolution ---------------------------------------------------------

    def _resolve_specs(self):
        enc, cross = {}, {}
        labels = set()
        for spec in self.head_specs:
            if spec.label in labels:
                raise ConfigError(f"duplicate head-spec label {spec.label!r}")
            labels.add(spec.label)
            layer_count = (
                self.cfg.enc_layers if spec.site == "encoder" else self.cfg.dec_layers
            )
            table = enc if spec.site == "encoder" else cross
            for layer in spec.layers:
                if not 1 <= layer <= layer_count:
                    raise ConfigError(
                        f"layer {layer} outside 1..{layer_count} for site {spec.site}"
                    )
                for head in spec.heads:
                    if not 1 <= head <= self.cfg.heads:
                        raise ConfigError(
                            f"head {head} outside 1..{self.cfg.heads}"
                        )
                    key = (layer - 1, head - 1)
                    if key in table:
                        raise ConfigError(
                            f"{spec.site} layer {layer} head {head} masked twice"
                        )
                    table[key] = spec.label
        return enc, cross

    # parameters ----------------------------------------------------------------

    def _param(self, name, shape, scale=None):
        if scale is None:
            data = np.zeros(shape)
        else:
            data = self._rng.normal(0.0, scale, size=shape)
        t = Tensor(data, requires_grad=True)
        self.params[name] = t
        return t

    def _build(self):
        cfg = self.cfg
        d, dk, dff = cfg.d_model, cfg.d_k, cfg.d_ff
        emb_scale = 1.0 / math.sqrt(d)
        self._param("src_emb", (cfg.src_vocab, d), emb_scale)
        self._param("trg_emb", (cfg.trg_vocab, d), emb_scale)
        for l in range(cfg.enc_layers):
            for h in range(cfg.heads):
                p = f"enc.{l}.attn.{h}"
                self._param(f"{p}.wq", (d, dk), emb_scale)
                self._param(f"{p}.wk", (d, dk), emb_scale)
                self._param(f"{p}.wv", (d, dk), emb_scale)
                self._param(f"{p}.wo", (dk, d), 1.0 / math.sqrt(dk))
            self._ln_params(f"enc.{l}.ln1", d)
            self._ffn_params(f"enc.{l}", d, dff)
            self._ln_params(f"enc.{l}.ln2", d)
        for l in range(cfg.dec_layers):
            for h in range(cfg.heads):
                p = f"dec.{l}.self.{h}"
                self._param(f"{p}.wq", (d, dk), emb_scale)
                self._param(f"{p}.wk", (d, dk), emb_scale)
                self._param(f"{p}.wv", (d, dk), emb_scale)
                self._param(f"{p}.wo", (dk, d), 1.0 / math.sqrt(dk))
            self._ln_params(f"dec.{l}.ln1", d)
            for h in range(cfg.heads):
                p = f"dec.{l}.cross.{h}"
                if (l, h) in self.cross_masked:
                    # aggregated keys carry no learned projection; the query
                    # must span the full model width to meet them
                    self._param(f"{p}.wq", (d, d), emb_scale)
                else:
                    self._param(f"{p}.wq", (d, dk), emb_scale)
                    self._param(f"{p}.wk", (d, dk), emb_scale)
                self._param(f"{p}.wv", (d, dk), emb_scale)
                self._param(f"{p}.wo", (dk, d), 1.0 / math.sqrt(dk))
            self._ln_params(f"dec.{l}.ln2", d)
            self._ffn_params(f"dec.{l}", d, dff)
            self._ln_params(f"dec.{l}.ln3", d)
        # zero init keeps the step-0 loss at ln(vocab)
        self._param("out.w", (d, cfg.trg_vocab))
        self._param("out.b", (cfg.trg_vocab,))

    def _ln_params(self, prefix, d):
        gain = Tensor(np.ones(d), requires_grad=True)
        bias = Tensor(np.zeros(d), requires_grad=True)
        self.params[f"{prefix}.g"] = gain
        self.params[f"{prefix}.b"] = bias

    def _ffn_params(self, prefix, d, dff):
        self._param(f"{prefix}.ffn.w1", (d, dff), 1.0 / math.sqrt(d))
        self.params[f"{prefix}.ffn.b1"] = Tensor(np.zeros(dff), requires_grad=True)
        self._param(f"{prefix}.ffn.w2", (dff, d), 1.0 / math.sqrt(dff))
        self.params[f"{prefix}.ffn.b2"] = Tensor(np.zeros(d), requires_grad=True)

    # forward pass -----------------------------------------------------------------

    def _embed(self, table, ids):
        if len(ids) > self.cfg.max_len:
            raise DimensionError(
                f"sequence of {len(ids)} exceeds max length {self.cfg.max_len}"
            )
        x = ad.embedding(table, ids) * math.sqrt(self.cfg.d_model)
        return ad.add(x, Tensor(self.positions[: len(ids)]))

    def _ffn(self, prefix, x):
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.ffn.w1"]), p[f"{prefix}.ffn.b1"]))
        return ad.add(ad.matmul(h, p[f"{prefix}.ffn.w2"]), p[f"{prefix}.ffn.b2"])

    def _sublayer_norm(self, prefix, x, sub):
        p = self.params
        return ad.layer_norm(ad.add(x, sub), p[f"{prefix}.g"], p[f"{prefix}.b"])

    def _mask_for(self, masks, label, length):
        if label not in masks:
            raise ConfigError(f"missing mask {label!r} for a configured head")
        mask = np.asarray(masks[label])
        if mask.shape != (length, length):
            raise DimensionError(
                f"mask {label!r} has shape {mask.shape}, source length is {length}"
            )
        return mask

    def encode(self, src_ids, masks=None):
        masks = masks or {}
        p = self.params
        L = len(src_ids)
        x = self._embed(p["src_emb"], src_ids)
        for l in range(self.cfg.enc_layers):
            attn = None
            for h in range(self.cfg.heads):
                pre = f"enc.{l}.attn.{h}"
                q = ad.matmul(x, p[f"{pre}.wq"])
                k = ad.matmul(x, p[f"{pre}.wk"])
                v = ad.matmul(x, p[f"{pre}.wv"])
                label = self.enc_masked.get((l, h))
                if label is None:
                    o = vanilla_attention(q, k, v)
                else:
                    o = sasa_attention(q, k, v, self._mask_for(masks, label, L))
                contrib = ad.matmul(o, p[f"{pre}.wo"])
                attn = contrib if attn is None else ad.add(attn, contrib)
            x = self._sublayer_norm(f"enc.{l}.ln1", x, attn)
            x = self._sublayer_norm(f"enc.{l}.ln2", x, self._ffn(f"enc.{l}", x))
        return x

    def decode(self, trg_in_ids, enc_out, masks=None):
        masks = masks or {}
        p = self.params
        l_src = enc_out.shape[0]
        y = self._embed(p["trg_emb"], trg_in_ids)
        for l in range(self.cfg.dec_layers):
            attn = None
            for h in range(self.cfg.heads):
                pre = f"dec.{l}.self.{h}"
                q = ad.matmul(y, p[f"{pre}.wq"])
                k = ad.matmul(y, p[f"{pre}.wk"])
                v = ad.matmul(y, p[f"{pre}.wv"])
                contrib = ad.matmul(vanilla_attention(q, k, v, causal=True), p[f"{pre}.wo"])
                attn = contrib if attn is None else ad.add(attn, contrib)
            y = self._sublayer_norm(f"dec.{l}.ln1", y, attn)

            cross = None
            for h in range(self.cfg.heads):
                pre = f"dec.{l}.cross.{h}"
                v = ad.matmul(enc_out, p[f"{pre}.wv"])
                label = self.cross_masked.get((l, h))
                if label is None:
                    q = ad.matmul(y, p[f"{pre}.wq"])
                    k = ad.matmul(enc_out, p[f"{pre}.wk"])
                    o = vanilla_attention(q, k, v)
                else:
                    q = ad.matmul(y, p[f"{pre}.wq"])
                    o = sacra_attention(
                        q, enc_out, v, self._mask_for(masks, label, l_src)
                    )
                contrib = ad.matmul(o, p[f"{pre}.wo"])
                cross = contrib if cross is None else ad.add(cross, contrib)
            y = self._sublayer_norm(f"dec.{l}.ln2", y, cross)
            y = self._sublayer_norm(f"dec.{l}.ln3", y, self._ffn(f"dec.{l}", y))
        return ad.add(ad.matmul(y, p["out.w"]), p["out.b"])

    def forward(self, src_ids, trg_in_ids, masks=None):
        return self.decode(trg_in_ids, self.encode(src_ids, masks), masks)

    # persistence -------------------------------------------------------------------

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    def state_arrays(self):
        return {name: t.data for name, t in self.params.items()}

    def load_state(self, arrays):
        for name, t in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing tensor {name!r}")
            if arrays[name].shape != t.data.shape:
                raise DimensionError(
                    f"checkpoint tensor {name!r} has shape {arrays[name].shape}, "
                    f"expected {t.data.shape}"
                )
            t.data = arrays[name].astype(np.float64)


# -- schedule, loss, training ----------------------------------------------------------


def lr_schedule(step, warmup, d_model):
    """Noam learning rate: d^-0.5 * min(step^-0.5, step * warmup^-1.5)."""
    if step < 1:
        raise ConfigError("schedule steps are 1-based")
    return d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


@dataclass
class TrainResult:
    model: Model
    losses: list
    accuracy: float = None
    accuracy_history: list = field(default_factory=list)
    steps_run: int = 0
    stopped_early: bool = False


def token_accuracy(model, pairs, mask_provider=None):
    """Teacher-forced argmax accuracy over all target tokens."""
    provider = mask_provider or (lambda i: {})
    correct = total = 0
    with ad.no_grad():
        for i, (src, trg) in enumerate(pairs):
            logits = model.forward(src, [BOS] + list(trg), provider(i))
            pred = logits.data.argmax(axis=1)
            gold = np.array(list(trg) + [EOS])
            correct += int((pred == gold).sum())
            total += len(gold)
    return correct / total


def train(pairs, model_cfg, train_cfg, head_specs=(), mask_provider=None):
    """Train on (src_ids, trg_ids) pairs; deterministic given the seed.

    Raises ConfigError before the first step if any pair lacks a mask for a
    configured head spec, and NumericError (with the step index) if the loss
    goes non-finite.
    """
    provider = mask_provider or (lambda i: {})
    labels = {spec.label for spec in head_specs}
    if labels:
        for i in range(len(pairs)):
            missing = labels - set(provider(i))
            if missing:
                raise ConfigError(
                    f"pair {i} lacks masks for head specs: {sorted(missing)}"
                )

    model = Model(model_cfg, head_specs, seed=train_cfg.seed)
    batch_rng = np.random.default_rng(train_cfg.seed + 1)
    names = sorted(model.params)
    m_state = {n: np.zeros_like(model.params[n].data) for n in names}
    v_state = {n: np.zeros_like(model.params[n].data) for n in names}

    result = TrainResult(model, losses=[])
    for step in range(1, train_cfg.steps + 1):
        idx = batch_rng.integers(0, len(pairs), size=train_cfg.batch_size)
        model.zero_grads()
        total = None
        n_tokens = 0
        for i in idx:
            src, trg = pairs[i]
            logits = model.forward(src, [BOS] + list(trg), provider(int(i)))
            pair_loss = ad.cross_entropy_smoothed(
                logits, list(trg) + [EOS], train_cfg.label_smoothing
            )
            total = pair_loss if total is None else ad.add(total, pair_loss)
            n_tokens += len(trg) + 1
        loss = total * (1.0 / n_tokens)
        loss_value = loss.item()
        if not math.isfinite(loss_value):
            raise NumericError("loss went non-finite", step=step)
        result.losses.append(loss_value)
        loss.backward()

        lr = lr_schedule(step, train_cfg.warmup, model_cfg.d_model)
        b1, b2 = train_cfg.beta1, train_cfg.beta2
        for n in names:
            p = model.params[n]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m_state[n] = b1 * m_state[n] + (1 - b1) * g
            v_state[n] = b2 * v_state[n] + (1 - b2) * g * g
            m_hat = m_state[n] / (1 - b1 ** step)
            v_hat = v_state[n] / (1 - b2 ** step)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + train_cfg.adam_eps)

        result.steps_run = step
        if train_cfg.eval_every and step % train_cfg.eval_every == 0:
            acc = token_accuracy(model, pairs, provider)
            result.accuracy_history.append((step, acc))
            result.accuracy = acc
            if train_cfg.target_accuracy and acc >= train_cfg.target_accuracy:
                result.stopped_early = True
                break

    if result.accuracy is None:
        result.accuracy = token_accuracy(model, pairs, provider)
    return result


# -- decoding ----------------------------------------------------------------------


@dataclass
class BeamResult:
    tokens: list
    score: float
    finished: bool


def length_penalty(n_tokens, alpha):
    return ((5.0 + n_tokens) / 6.0) ** alpha


def beam_search(score_fn, bos, eos, cfg):
    """Beam search over a prefix scorer.

    `score_fn(prefix)` maps a token tuple (starting with `bos`) to a log
    probability vector for the next token. Candidates are ranked by
    cumulative log probability with ties broken toward smaller token ids;
    a candidate emitting `eos` is finalized with score
    logprob / ((5+len)/6)^alpha, provided it ranks above the point where
    the live beam fills. The search runs until the beam empties or
    `max_len` steps pass; if nothing finished, the best unfinished
    hypothesis is returned with finished=False.
    """
    beam = cfg.beam
    live = [(0.0, (bos,))]
    done = []
    for _ in range(cfg.max_len):
        candidates = []
        for lp, seq in live:
            logp = score_fn(seq)
            top = np.argsort(-logp, kind="stable")[:beam]
            for tok in top:
                candidates.append((lp + float(logp[tok]), seq + (int(tok),)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for lp, seq in candidates:
            if seq[-1] == eos:
                done.append((lp / length_penalty(len(seq) - 1, cfg.alpha), seq))
            else:
                live.append((lp, seq))
            if len(live) == beam:
                break
        if not live:
            break
    if done:
        done.sort(key=lambda c: (-c[0], c[1]))
        score, seq = done[0]
        return BeamResult(list(seq[1:]), score, True)
    if not live:
        return BeamResult([], -math.inf, False)
    ranked = sorted(
        ((lp / length_penalty(len(seq) - 1, cfg.alpha), seq) for lp, seq in live),
        key=lambda c: (-c[0], c[1]),
    )
    score, seq = ranked[0]
    return BeamResult(list(seq[1:]), score, False)


def greedy_decode(score_fn, bos, eos, max_len):
    """Argmax decoding; the reference implementation beam=1 must match."""
    seq = (bos,)
    total = 0.0
    for _ in range(max_len):
        logp = score_fn(seq)
        tok = int(np.argmax(logp))
        total += float(logp[tok])
        seq = seq + (tok,)
        if tok == eos:
            return BeamResult(
                list(seq[1:]), total / length_penalty(len(seq) - 1, 0.0), True
            )
    return BeamResult(list(seq[1:]), total, False)


def log_softmax(row):
    shifted = row - row.max()
    return shifted - math.log(np.exp(shifted).sum())


def translate(model, src_ids, masks=None, cfg=None, greedy=False):
    """Decode one source sentence into target ids (without BOS/EOS)."""
    cfg = cfg or DecodeConfig()
    with ad.no_grad():
        enc_out = model.encode(src_ids, masks)

        def score_fn(prefix):
            with ad.no_grad():
                logits = model.decode(list(prefix), enc_out, masks)
            return log_softmax(logits.data[-1])

        if greedy:
            result = greedy_decode(score_fn, BOS, EOS, cfg.max_len)
        else:
            result = beam_search(score_fn, BOS, EOS, cfg)
    tokens = [t for t in result.tokens if t != EOS]
    return replace(result, tokens=tokens)
