"""Full model assembly: embeddings through the prediction cascade.

The context flows through word/char embeddings, a highway fusion, a
contextual BiGRU, the query-decomposition and fine-grained attention block,
a modeling BiGRU with self-attention, and four stacked prediction BiGRUs
(supporting sentences, answer start, answer end, answer type). Both
attention strategies sit behind config flags so the ablation grid
(baseline / decomposition only / fine-grained only / both) runs on one
implementation.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import (
    AttentionTrace,
    FusionParams,
    SimilarityParams,
    cgde,
    context2query,
    fgin_q2c,
    fuse_g,
    similarity,
    vanilla_q2c,
)
from .autodiff import MASK_FILL, ShapeError, Tensor, UsageError, concat, no_grad
from .data import ANSWER_TYPES, Batch, Example
from .layers import (
    BiGruParams,
    CharCnnParams,
    EmbeddingTable,
    HighwayParams,
    bigru,
    char_cnn,
    embed_words,
    highway,
    linear,
    xavier_uniform,
)


@dataclass
class ModelConfig:
    d: int = 80
    dropout: float = 0.2
    use_cgde: bool = True
    use_fgin: bool = True
    lambda_a: float = 0.5
    lambda_s: float = 2.0
    c2q_source: str = "decomposed"      # decomposed | original
    fusion_variant: str = "paper"       # paper | bidaf
    max_span_len: int = 30
    sup_threshold: float = 0.5
    word_dim: int = 300
    char_dim: int = 8
    char_filters: int = 100
    max_word_len: int = 16
    train_word_emb: bool = False
    predict_support: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.lambda_a <= 0 or self.lambda_s <= 0:
            raise ValueError("loss weights must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.c2q_source not in ("decomposed", "original"):
            raise ValueError(f"unknown c2q_source {self.c2q_source!r}")
        if self.fusion_variant not in ("paper", "bidaf"):
            raise ValueError(f"unknown fusion_variant {self.fusion_variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unknown dtype {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class ModelOutputs:
    type_logits: Tensor                 # (B, 3)
    start_logits: Tensor                # (B, T), -1e30 at padding
    end_logits: Tensor                  # (B, T)
    sup_logits: Tensor                  # (B, S), -1e30 at padding
    trace: AttentionTrace | None = None


@dataclass
class Prediction:
    id: str
    answer_text: str
    answer_type: str
    supporting_facts: list[tuple[str, int]] = field(default_factory=list)


@dataclass
class SelfAttentionParams:
    sim: SimilarityParams
    proj_w: Tensor      # (8d, 2d)
    proj_b: Tensor


def self_attention(M: Tensor, p: SelfAttentionParams, mask=None) -> Tensor:
    """Bidirectional attention of a sequence against itself, fused the
    conventional way and projected back to the input width."""
    s = similarity(M, M, p.sim, context_mask=mask, query_mask=mask)
    c2q = context2query(M, s)
    q2c = vanilla_q2c(M, s)
    fused = fuse_g(M, c2q, q2c, variant="bidaf")
    return linear(fused, p.proj_w, p.proj_b)


class Model:
    """Parameter container plus the forward pass."""

    def __init__(self, config: ModelConfig, n_words: int, n_chars: int,
                 rng: np.random.Generator, word_vectors: np.ndarray | None = None):
        self.config = config
        dt = config.np_dtype
        d = config.d
        self._params: dict[str, Tensor] = {}

        if word_vectors is not None:
            if word_vectors.shape != (n_words, config.word_dim):
                raise ShapeError(f"word vectors {word_vectors.shape} != "
                                 f"({n_words}, {config.word_dim})")
            wt = word_vectors.astype(dt)
        else:
            wt = (rng.standard_normal((n_words, config.word_dim)) * 0.1).astype(dt)
            wt[0] = 0.0
        self.word_table = EmbeddingTable(n_words, config.word_dim,
                                         Tensor(wt, requires_grad=config.train_word_emb),
                                         trainable=config.train_word_emb)
        if config.train_word_emb:
            self._params["embed.word.table"] = self.word_table.weights
        self.unk_row = Tensor((rng.standard_normal((1, config.word_dim)) * 0.1).astype(dt),
                              requires_grad=True)
        self._params["embed.word.unk"] = self.unk_row

        self.char_params = CharCnnParams.create(n_chars, config.char_dim,
                                                config.char_filters, rng, dtype=dt)
        self._params["embed.char.table"] = self.char_params.table.weights
        self._params["embed.char.conv_w"] = self.char_params.conv_w
        self._params["embed.char.conv_b"] = self.char_params.conv_b

        fused_in = config.word_dim + config.char_filters
        self.proj_w = Tensor(xavier_uniform(rng, fused_in, d, dtype=dt), requires_grad=True)
        self.proj_b = Tensor(np.zeros(d, dtype=dt), requires_grad=True)
        self._params["embed.proj.w"] = self.proj_w
        self._params["embed.proj.b"] = self.proj_b

        self.highway = HighwayParams.create(d, rng, dtype=dt)
        for i in range(len(self.highway.gates_w)):
            self._params[f"highway.{i}.gate_w"] = self.highway.gates_w[i]
            self._params[f"highway.{i}.gate_b"] = self.highway.gates_b[i]
            self._params[f"highway.{i}.trans_w"] = self.highway.trans_w[i]
            self._params[f"highway.{i}.trans_b"] = self.highway.trans_b[i]

        self.encoder = BiGruParams.create(d, d, rng, dtype=dt)
        self._register_gru("encoder", self.encoder)

        width = 2 * d
        self.sim = SimilarityParams.create(width, rng, dtype=dt)
        self._params["att.sim.w_h"] = self.sim.w_h
        self._params["att.sim.w_u"] = self.sim.w_u
        self.fusion = FusionParams.create(width, rng, dtype=dt)
        self._params["att.fusion.w_s"] = self.fusion.w_s

        self.modeling = BiGruParams.create(4 * width, d, rng, dtype=dt)
        self._register_gru("modeling", self.modeling)

        self.selfatt = SelfAttentionParams(
            sim=SimilarityParams.create(width, rng, dtype=dt),
            proj_w=Tensor(xavier_uniform(rng, 4 * width, width, dtype=dt), requires_grad=True),
            proj_b=Tensor(np.zeros(width, dtype=dt), requires_grad=True))
        self._params["selfatt.sim.w_h"] = self.selfatt.sim.w_h
        self._params["selfatt.sim.w_u"] = self.selfatt.sim.w_u
        self._params["selfatt.proj.w"] = self.selfatt.proj_w
        self._params["selfatt.proj.b"] = self.selfatt.proj_b

        r_width = 4 * width + width                   # fused block + modeling output
        self.pred_grus = [BiGruParams.create(r_width, d, rng, dtype=dt)]
        for _ in range(3):
            self.pred_grus.append(BiGruParams.create(r_width + width, d, rng, dtype=dt))
        for i, p in enumerate(self.pred_grus, start=1):
            self._register_gru(f"pred{i}", p)

        def head(name, in_dim, out_dim):
            w = Tensor(xavier_uniform(rng, in_dim, out_dim, dtype=dt), requires_grad=True)
            b = Tensor(np.zeros(out_dim, dtype=dt), requires_grad=True)
            self._params[f"head.{name}.w"] = w
            self._params[f"head.{name}.b"] = b
            return w, b

        self.sup_head = head("sup", 2 * width, 1)
        self.start_head = head("start", width, 1)
        self.end_head = head("end", width, 1)
        self.type_head = head("type", width, 3)

    def _register_gru(self, name: str, p: BiGruParams) -> None:
        for dname, cell in (("fw", p.fw), ("bw", p.bw)):
            for f in dataclasses.fields(cell):
                self._params[f"{name}.{dname}.{f.name}"] = getattr(cell, f.name)

    def parameters(self) -> dict[str, Tensor]:
        """Trainable tensors by name, in registration order."""
        return dict(self._params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All persistent arrays, including a frozen word table."""
        out = {name: t.data for name, t in self._params.items()}
        if not self.config.train_word_emb:
            out["embed.word.table"] = self.word_table.weights.data
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        dt = self.config.np_dtype
        own = dict(self._params)
        own["embed.word.table"] = self.word_table.weights
        for name, t in own.items():
            if name not in arrays:
                raise KeyError(f"checkpoint missing tensor {name!r}")
            arr = arrays[name]
            if tuple(arr.shape) != t.shape:
                raise ShapeError(f"checkpoint tensor {name!r} has shape "
                                 f"{arr.shape}, expected {t.shape}")
            t.data = arr.astype(dt)

    # ------------------------------------------------------------------

    def _drop(self, x: Tensor, training: bool, rng) -> Tensor:
        return ad.dropout(x, self.config.dropout, training, rng)

    def _embed(self, word_ids, char_ids, training, rng) -> Tensor:
        words = embed_words(self.word_table, word_ids, unk_row=self.unk_row)
        chars = self._drop(char_cnn(char_ids, self.char_params), training, rng)
        fused = linear(concat([words, chars], axis=-1), self.proj_w, self.proj_b)
        return highway(fused, self.highway)

    def forward(self, batch: Batch, training: bool = False,
                rng: np.random.Generator | None = None,
                capture_trace: bool = False) -> ModelOutputs:
        cfg = self.config
        if training and cfg.dropout > 0 and rng is None:
            raise UsageError("forward: training with dropout requires an rng")
        dt = cfg.np_dtype
        cmask = batch.context_mask.astype(dt)
        qmask = batch.question_mask.astype(dt)
        b, t_len = cmask.shape

        ctx = self._embed(batch.context_words, batch.context_chars, training, rng)
        qry = self._embed(batch.question_words, batch.question_chars, training, rng)
        H = bigru(self._drop(ctx, training, rng), self.encoder, mask=cmask)
        U = bigru(self._drop(qry, training, rng), self.encoder, mask=qmask)

        trace = AttentionTrace(context_mask=cmask.copy(), query_mask=qmask.copy()) \
            if capture_trace else None
        S = similarity(H, U, self.sim, context_mask=cmask, query_mask=qmask)
        if trace is not None:
            trace.similarity = S.data.copy()
        if cfg.use_cgde:
            q_bar = cgde(H, U, S, self.fusion, trace=trace)
        else:
            q_bar = U
            if trace is not None:
                trace.decomposed_query = U.data
        S2 = similarity(H, q_bar, self.sim, context_mask=cmask, query_mask=qmask)
        if trace is not None:
            trace.similarity2 = S2.data.copy()
        if cfg.use_fgin:
            q2c = fgin_q2c(H, S2, trace=trace)
        else:
            q2c = vanilla_q2c(H, S2, trace=trace)
        c2q_rows = q_bar if cfg.c2q_source == "decomposed" else U
        c2q = context2query(c2q_rows, S2, trace=trace)
        G = fuse_g(H, c2q, q2c, variant=cfg.fusion_variant, trace=trace)
        G = G * Tensor(cmask[..., None])              # zero padded rows

        M0 = bigru(self._drop(G, training, rng), self.modeling, mask=cmask)
        M = self_attention(M0, self.selfatt, mask=cmask)
        R = concat([G, M], axis=-1)

        g1 = bigru(self._drop(R, training, rng), self.pred_grus[0], mask=cmask)
        sup_logits = self._sup_logits(g1, batch, training, rng)
        g2 = bigru(concat([R, g1], axis=-1), self.pred_grus[1], mask=cmask)
        start_logits = self._position_logits(g2, self.start_head, cmask, training, rng)
        g3 = bigru(concat([R, g2], axis=-1), self.pred_grus[2], mask=cmask)
        end_logits = self._position_logits(g3, self.end_head, cmask, training, rng)
        g4 = bigru(concat([R, g3], axis=-1), self.pred_grus[3], mask=cmask)
        type_logits = self._type_logits(g4, cmask, training, rng)
        return ModelOutputs(type_logits=type_logits, start_logits=start_logits,
                            end_logits=end_logits, sup_logits=sup_logits, trace=trace)

    def _sup_logits(self, g1: Tensor, batch: Batch, training, rng) -> Tensor:
        """Sentence representation: the BiGRU states at each sentence's first
        and last token, concatenated, then projected to one logit."""
        b, t_len, width = g1.shape
        s_max = batch.sentence_bounds.shape[1]
        flat = ad.reshape(g1, (b * t_len, width))
        offsets = (np.arange(b)[:, None] * t_len)
        first_idx = (batch.sentence_bounds[:, :, 0] + offsets).reshape(-1)
        last_idx = (batch.sentence_bounds[:, :, 1] + offsets).reshape(-1)
        firsts = ad.gather_rows(flat, first_idx)
        lasts = ad.gather_rows(flat, last_idx)
        pooled = concat([firsts, lasts], axis=-1)     # (B*S, 2*width)
        w, bias = self.sup_head
        logits = linear(self._drop(pooled, training, rng), w, bias)
        logits = ad.reshape(logits, (b, s_max))
        bias_mask = (1.0 - batch.sentence_mask.astype(logits.data.dtype)) * MASK_FILL
        return logits + Tensor(bias_mask)

    def _position_logits(self, g: Tensor, head, cmask, training, rng) -> Tensor:
        w, bias = head
        logits = linear(self._drop(g, training, rng), w, bias)
        logits = ad.reshape(logits, logits.shape[:-1])
        return logits + Tensor((1.0 - cmask) * MASK_FILL)

    def _type_logits(self, g4: Tensor, cmask, training, rng) -> Tensor:
        summed = ad.reduce_sum(g4 * Tensor(cmask[..., None]), axis=-2)
        inv_len = (1.0 / cmask.sum(axis=-1, keepdims=True)).astype(g4.data.dtype)
        pooled = summed * Tensor(inv_len)
        w, bias = self.type_head
        return linear(self._drop(pooled, training, rng), w, bias)


# ---------------------------------------------------------------------------
# loss


def combine_losses(l_type, l_start, l_end, l_sup, lambda_a: float, lambda_s: float):
    return lambda_a * (l_type + l_start + l_end) + lambda_s * l_sup


def joint_loss(outputs: ModelOutputs, batch: Batch, lambda_a: float,
               lambda_s: float) -> tuple[Tensor, dict[str, float]]:
    """Answer-type/start/end cross-entropies (summed over examples) plus the
    supporting-sentence binary cross-entropy (averaged over real sentences),
    weighted by the two coefficients. Span losses are masked out for yes/no
    examples and for answers that could not be located."""
    l_type = ad.cross_entropy(outputs.type_logits, batch.y_type, reduction="sum")
    l_start = ad.cross_entropy(outputs.start_logits, batch.y_start,
                               reduction="sum", mask=batch.span_mask)
    l_end = ad.cross_entropy(outputs.end_logits, batch.y_end,
                             reduction="sum", mask=batch.span_mask)
    l_sup = ad.binary_cross_entropy(outputs.sup_logits, batch.sup_labels,
                                    reduction="mean", mask=batch.sentence_mask)
    total = combine_losses(l_type, l_start, l_end, l_sup, lambda_a, lambda_s)
    parts = {"type": l_type.item(), "start": l_start.item(),
             "end": l_end.item(), "sup": l_sup.item(), "total": total.item()}
    return total, parts


# ---------------------------------------------------------------------------
# decoding


def _softmax_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def best_span(p_start: np.ndarray, p_end: np.ndarray, max_span_len: int) -> tuple[int, int]:
    """Argmax of p_start[s] * p_end[e] over s <= e <= s + max_span_len."""
    n = len(p_start)
    best = (0, 0)
    best_p = -1.0
    for s in range(n):
        hi = min(n, s + max_span_len + 1)
        e = s + int(np.argmax(p_end[s:hi]))
        p = p_start[s] * p_end[e]
        if p > best_p:
            best_p = p
            best = (s, e)
    return best


def decode_example(ex: Example, type_row: np.ndarray, start_row: np.ndarray,
                   end_row: np.ndarray, sup_row: np.ndarray,
                   config: ModelConfig) -> Prediction:
    answer_type = ANSWER_TYPES[int(np.argmax(type_row))]
    sup: list[tuple[str, int]] = []
    if config.predict_support:
        for k in range(len(ex.sentence_spans)):
            if 1.0 / (1.0 + np.exp(-float(sup_row[k]))) > config.sup_threshold:
                sup.append(ex.sentence_title(k))
    if answer_type in ("yes", "no"):
        return Prediction(id=ex.id, answer_text=answer_type,
                          answer_type=answer_type, supporting_facts=sup)
    t = ex.n_tokens
    p_start = _softmax_np(start_row[:t].astype(np.float64))
    p_end = _softmax_np(end_row[:t].astype(np.float64))
    s, e = best_span(p_start, p_end, config.max_span_len)
    text = " ".join(ex.context_tokens[s:e + 1])
    return Prediction(id=ex.id, answer_text=text, answer_type="span",
                      supporting_facts=sup)


def predict_batches(model: Model, batches: list[Batch]) -> dict[str, Prediction]:
    """Eval-mode decoding over a batch list."""
    preds: dict[str, Prediction] = {}
    with no_grad():
        for batch in batches:
            out = model.forward(batch, training=False)
            for i, ex in enumerate(batch.examples):
                preds[ex.id] = decode_example(
                    ex, out.type_logits.data[i], out.start_logits.data[i],
                    out.end_logits.data[i], out.sup_logits.data[i], model.config)
    return preds


def predictions_to_json(preds: dict[str, Prediction]) -> dict:
    """The interchange layout: an "answer" map and an "sp" map."""
    return {"answer": {pid: p.answer_text for pid, p in preds.items()},
            "sp": {pid: [[title, sid] for title, sid in p.supporting_facts]
                   for pid, p in preds.items()}}
