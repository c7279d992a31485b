"""Network layers: embeddings, character CNN, highway, linear, BiGRU.

All layers are parameter bundles plus pure forward functions; nothing here
holds per-call state, so bundles can be shared read-only between optimizer
steps. Forward functions accept either single-sequence inputs (T x ...) or
batched ones (B x T x ...): every op works on the trailing axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, concat, gather_rows, matmul, narrow

PAD_ID = 0
UNK_ID = 1


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)).astype(dtype)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: x @ w (+ b)."""
    out = matmul(x, w)
    if b is not None:
        out = ad.add(out, b)
    return out


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    """Row-per-id lookup table. Row 0 is the padding row: zero at init and
    never updated (its gradient is dropped even when the table trains)."""

    vocab_size: int
    dim: int
    weights: Tensor
    trainable: bool

    @classmethod
    def random(cls, vocab_size: int, dim: int, rng: np.random.Generator,
               trainable: bool, scale: float = 0.1, dtype=np.float32) -> "EmbeddingTable":
        w = (rng.standard_normal((vocab_size, dim)) * scale).astype(dtype)
        w[PAD_ID] = 0.0
        return cls(vocab_size, dim, Tensor(w, requires_grad=trainable), trainable)

    def lookup(self, ids: np.ndarray) -> Tensor:
        return gather_rows(self.weights, ids, pad_guard=True)


def embed_words(table: EmbeddingTable, ids: np.ndarray,
                unk_row: Tensor | None = None) -> Tensor:
    """Gather word vectors; an optional trainable ``unk_row`` replaces the
    table's (frozen) row for ids equal to UNK_ID."""
    out = table.lookup(ids)
    if unk_row is not None:
        is_unk = (np.asarray(ids) == UNK_ID).astype(table.weights.dtype)[..., None]
        out = ad.add(out, ad.mul(Tensor(is_unk), unk_row))
    return out


def load_glove(path: str, vocab_words: dict[str, int], dim: int = 300,
               dtype=np.float32) -> tuple[np.ndarray, dict[str, int]]:
    """Read GloVe text vectors for the given word->id map.

    Lines whose vector length differs from ``dim`` are skipped and counted.
    Returns (vocab_size x dim matrix, stats) where stats carries the number
    of skipped lines and of vocabulary words found.
    """
    vocab_size = max(vocab_words.values()) + 1
    table = np.zeros((vocab_size, dim), dtype=dtype)
    skipped = 0
    found = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                skipped += 1
                continue
            word = parts[0]
            wid = vocab_words.get(word)
            if wid is None or wid == PAD_ID:
                continue
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=dtype)
            except ValueError:
                skipped += 1
                continue
            table[wid] = vec
            found += 1
    return table, {"skipped_lines": skipped, "found": found,
                   "missing": len(vocab_words) - found}


# ---------------------------------------------------------------------------
# character CNN


@dataclass
class CharCnnParams:
    table: EmbeddingTable          # char embeddings, trainable
    conv_w: Tensor                 # (kernel * char_dim) x filters
    conv_b: Tensor                 # filters
    kernel: int

    @classmethod
    def create(cls, n_chars: int, char_dim: int, filters: int,
               rng: np.random.Generator, kernel: int = 5, dtype=np.float32) -> "CharCnnParams":
        table = EmbeddingTable.random(n_chars, char_dim, rng, trainable=True, dtype=dtype)
        k_in = kernel * char_dim
        return cls(table=table,
                   conv_w=Tensor(xavier_uniform(rng, k_in, filters, dtype=dtype), requires_grad=True),
                   conv_b=Tensor(np.zeros(filters, dtype=dtype), requires_grad=True),
                   kernel=kernel)


def char_cnn(char_ids: np.ndarray, p: CharCnnParams) -> Tensor:
    """Per-word character features: embed, width-``kernel`` convolution over
    the character axis, relu, max-pool over window positions.

    ``char_ids`` has shape (..., W) with W >= kernel; output (..., filters).
    """
    w = char_ids.shape[-1]
    if w < p.kernel:
        raise ShapeError(f"char_cnn: word width {w} shorter than kernel {p.kernel}")
    emb = p.table.lookup(char_ids)                       # (..., W, char_dim)
    windows = [narrow(emb, -2, k, w - p.kernel + 1) for k in range(p.kernel)]
    unfolded = concat(windows, axis=-1)                  # (..., W-k+1, kernel*char_dim)
    conv = ad.relu(linear(unfolded, p.conv_w, p.conv_b))
    return ad.max_reduce(conv, axis=-2)


# ---------------------------------------------------------------------------
# highway


@dataclass
class HighwayParams:
    gates_w: list[Tensor]
    gates_b: list[Tensor]
    trans_w: list[Tensor]
    trans_b: list[Tensor]

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, layers: int = 2,
               dtype=np.float32) -> "HighwayParams":
        mk = lambda: Tensor(xavier_uniform(rng, dim, dim, dtype=dtype), requires_grad=True)
        zb = lambda: Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        return cls(gates_w=[mk() for _ in range(layers)], gates_b=[zb() for _ in range(layers)],
                   trans_w=[mk() for _ in range(layers)], trans_b=[zb() for _ in range(layers)])


def highway(x: Tensor, p: HighwayParams) -> Tensor:
    """Gated residual stack: y = t * relu(W_h x + b_h) + (1 - t) * x."""
    if x.shape[-1] != p.gates_w[0].shape[0]:
        raise ShapeError(f"highway: width {x.shape[-1]} != params width {p.gates_w[0].shape[0]}")
    out = x
    for gw, gb, tw, tb in zip(p.gates_w, p.gates_b, p.trans_w, p.trans_b):
        t = ad.sigmoid(linear(out, gw, gb))
        h = ad.relu(linear(out, tw, tb))
        out = t * h + (1.0 - t) * out
    return out


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruCellParams:
    """One direction of a GRU: update (z), reset (r) and candidate (n)
    weights for the input and hidden paths, plus biases."""

    wx_z: Tensor
    wx_r: Tensor
    wx_n: Tensor
    wh_z: Tensor
    wh_r: Tensor
    wh_n: Tensor
    b_z: Tensor
    b_r: Tensor
    b_n: Tensor

    @classmethod
    def create(cls, in_dim: int, hidden: int, rng: np.random.Generator,
               dtype=np.float32) -> "GruCellParams":
        wx = lambda: Tensor(xavier_uniform(rng, in_dim, hidden, dtype=dtype), requires_grad=True)
        wh = lambda: Tensor(xavier_uniform(rng, hidden, hidden, dtype=dtype), requires_grad=True)
        b = lambda: Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True)
        return cls(wx_z=wx(), wx_r=wx(), wx_n=wx(),
                   wh_z=wh(), wh_r=wh(), wh_n=wh(),
                   b_z=b(), b_r=b(), b_n=b())

    @property
    def hidden(self) -> int:
        return self.wh_z.shape[0]


@dataclass
class BiGruParams:
    fw: GruCellParams
    bw: GruCellParams

    @classmethod
    def create(cls, in_dim: int, hidden: int, rng: np.random.Generator,
               dtype=np.float32) -> "BiGruParams":
        return cls(fw=GruCellParams.create(in_dim, hidden, rng, dtype),
                   bw=GruCellParams.create(in_dim, hidden, rng, dtype))


def _gru_direction(x: Tensor, p: GruCellParams, steps: list[int],
                   step_masks: list[np.ndarray] | None) -> list[Tensor]:
    """Run one GRU direction over the time axis (axis -2 of the last three).

    ``steps`` lists time indices in processing order; masked steps copy the
    previous hidden state, so padding never enters the recurrence. Returns
    hidden states indexed by position in ``steps``.
    """
    lead = x.shape[:-2]
    d = p.hidden
    # input-side projections for the whole sequence at once
    xz = linear(x, p.wx_z, p.b_z)
    xr = linear(x, p.wx_r, p.b_r)
    xn = linear(x, p.wx_n, p.b_n)
    h = Tensor(np.zeros(lead + (1, d), dtype=x.dtype))
    states: list[Tensor] = [h] * len(steps)
    for i, t in enumerate(steps):
        z = ad.sigmoid(narrow(xz, -2, t, 1) + matmul(h, p.wh_z))
        r = ad.sigmoid(narrow(xr, -2, t, 1) + matmul(h, p.wh_r))
        n = ad.tanh(narrow(xn, -2, t, 1) + matmul(r * h, p.wh_n))
        h_new = (1.0 - z) * h + z * n
        if step_masks is not None:
            h = h + Tensor(step_masks[t]) * (h_new - h)   # copy through padding
        else:
            h = h_new
        states[i] = h
    return states


def bigru(x: Tensor, p: BiGruParams, mask: np.ndarray | None = None) -> Tensor:
    """Bidirectional GRU over axis -2; outputs the two directions
    concatenated per position: (..., T, 2 * hidden).

    ``mask`` is (..., T) with 1.0 at real positions; padded steps keep the
    previous hidden state in both directions.
    """
    t_len = x.shape[-2]
    if t_len < 1:
        raise ShapeError("bigru: empty sequence")
    step_masks = None
    if mask is not None:
        m = np.asarray(mask, dtype=x.data.dtype)
        if m.shape != x.shape[:-1]:
            raise ShapeError(f"bigru: mask shape {m.shape} != sequence shape {x.shape[:-1]}")
        step_masks = [m[..., t:t + 1, None] for t in range(t_len)]
    fw_states = _gru_direction(x, p.fw, list(range(t_len)), step_masks)
    bw_states = _gru_direction(x, p.bw, list(range(t_len - 1, -1, -1)), step_masks)
    fw_seq = concat(fw_states, axis=-2) if t_len > 1 else fw_states[0]
    bw_seq = concat(bw_states[::-1], axis=-2) if t_len > 1 else bw_states[0]
    return concat([fw_seq, bw_seq], axis=-1)
