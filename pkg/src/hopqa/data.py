"""Dataset ingestion: tokenization, vocabularies, batching, synthesis.

Contexts arrive as documents made of sentences; they are concatenated into
one token sequence with document and sentence boundaries preserved, since
the supporting-fact head scores whole sentences. Contexts longer than the
cap are truncated at sentence boundaries only.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .autodiff import DataError
from .layers import PAD_ID, UNK_ID

MAX_CONTEXT_TOKENS = 2550
ANSWER_TYPES = ("span", "yes", "no")

_PUNCT = set(string.punctuation)


class Token(NamedTuple):
    text: str
    start: int
    end: int


class SentenceSpan(NamedTuple):
    start: int        # global token index, inclusive
    end: int          # global token index, exclusive
    doc_index: int
    sent_index: int   # index within the source document


def tokenize(text: str) -> list[Token]:
    """Whitespace split, then peel leading/trailing punctuation into their
    own single-char tokens. Offsets index the original string, so
    concatenating token ranges reproduces all non-space content."""
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        lo, hi = i, j
        while hi - lo > 1 and text[lo] in _PUNCT:
            tokens.append(Token(text[lo], lo, lo + 1))
            lo += 1
        tail: list[Token] = []
        while hi - lo > 1 and text[hi - 1] in _PUNCT:
            tail.append(Token(text[hi - 1], hi - 1, hi))
            hi -= 1
        tokens.append(Token(text[lo:hi], lo, hi))
        tokens.extend(reversed(tail))
        i = j
    return tokens


# ---------------------------------------------------------------------------
# examples


@dataclass
class Example:
    id: str
    question_tokens: list[str]
    context_tokens: list[str]
    doc_boundaries: list[tuple[str, int, int]]      # (title, token start, token end)
    sentence_spans: list[SentenceSpan]
    answer_type: str                                # span | yes | no
    answer_text: str
    answer_span: tuple[int, int] | None             # inclusive token indices
    sup_labels: list[int]                           # aligned with sentence_spans
    gold_sup: list[tuple[str, int]]                 # (title, sentence id) pairs
    answers: list[str]                              # gold strings for scoring

    @property
    def n_tokens(self) -> int:
        return len(self.context_tokens)

    def sentence_title(self, k: int) -> tuple[str, int]:
        span = self.sentence_spans[k]
        title = self.doc_boundaries[span.doc_index][0]
        return title, span.sent_index


@dataclass
class LoadStats:
    answers_not_found: int = 0
    sup_dropped: int = 0
    offsets_snapped: int = 0
    empty_sentences: int = 0

    @property
    def warnings_total(self) -> int:
        return (self.answers_not_found + self.sup_dropped
                + self.offsets_snapped + self.empty_sentences)


def _char_span_to_tokens(tokens: list[Token], lo: int, hi: int) -> tuple[int, int] | None:
    """Smallest token range covering chars [lo, hi); None if no overlap."""
    first = last = None
    for k, tok in enumerate(tokens):
        if tok.end > lo and tok.start < hi:
            if first is None:
                first = k
            last = k
    if first is None:
        return None
    return first, last


def _locate_answer(answer: str, sent_texts: list[str], sent_tokens: list[list[Token]],
                   spans: list[SentenceSpan], preferred: set[int]) -> tuple[int, int] | None:
    """First case-insensitive occurrence of ``answer``, preferring the
    given sentence indices; returns inclusive global token indices."""
    needle = answer.lower()
    order = [k for k in range(len(spans)) if k in preferred]
    order += [k for k in range(len(spans)) if k not in preferred]
    for k in order:
        pos = sent_texts[k].lower().find(needle)
        if pos < 0:
            continue
        hit = _char_span_to_tokens(sent_tokens[k], pos, pos + len(needle))
        if hit is None:
            continue
        base = spans[k].start
        return base + hit[0], base + hit[1]
    return None


def _example_from_hotpot_record(rec: dict, index: int, stats: LoadStats) -> Example:
    try:
        rec_id = str(rec["_id"])
        question = rec["question"]
        answer = rec["answer"]
        context = rec["context"]
        supporting = rec.get("supporting_facts", [])
    except (KeyError, TypeError) as exc:
        raise DataError(f"record {index}: missing field {exc}") from exc

    question_tokens = [t.text for t in tokenize(question)]
    context_tokens: list[str] = []
    doc_boundaries: list[tuple[str, int, int]] = []
    spans: list[SentenceSpan] = []
    sent_texts: list[str] = []
    sent_tokens: list[list[Token]] = []
    for doc_idx, entry in enumerate(context):
        title, sentences = entry[0], entry[1]
        doc_start = len(context_tokens)
        for sid, sent in enumerate(sentences):
            toks = tokenize(sent)
            if not toks:
                stats.empty_sentences += 1
                continue
            start = len(context_tokens)
            context_tokens.extend(t.text for t in toks)
            spans.append(SentenceSpan(start, len(context_tokens), doc_idx, sid))
            sent_texts.append(sent)
            sent_tokens.append(toks)
        doc_boundaries.append((title, doc_start, len(context_tokens)))

    by_title_sid = {(doc_boundaries[s.doc_index][0], s.sent_index): k
                    for k, s in enumerate(spans)}
    sup_labels = [0] * len(spans)
    gold_sup: list[tuple[str, int]] = []
    for fact in supporting:
        key = (fact[0], int(fact[1]))
        k = by_title_sid.get(key)
        if k is None:
            stats.sup_dropped += 1
            continue
        sup_labels[k] = 1
        gold_sup.append(key)

    answer_clean = answer.strip()
    if answer_clean.lower() in ("yes", "no"):
        answer_type = answer_clean.lower()
        answer_span = None
    else:
        answer_type = "span"
        preferred = {k for k, lab in enumerate(sup_labels) if lab}
        answer_span = _locate_answer(answer_clean, sent_texts, sent_tokens, spans, preferred)
        if answer_span is None:
            stats.answers_not_found += 1

    return Example(id=rec_id, question_tokens=question_tokens,
                   context_tokens=context_tokens, doc_boundaries=doc_boundaries,
                   sentence_spans=spans, answer_type=answer_type,
                   answer_text=answer_clean, answer_span=answer_span,
                   sup_labels=sup_labels, gold_sup=gold_sup, answers=[answer_clean])


def examples_from_hotpot_records(records: list, stats: LoadStats | None = None
                                 ) -> tuple[list[Example], LoadStats]:
    stats = stats or LoadStats()
    if not isinstance(records, list):
        raise DataError("hotpotqa: top-level JSON must be a list of records")
    return [_example_from_hotpot_record(r, i, stats) for i, r in enumerate(records)], stats


def load_hotpotqa(path: str) -> tuple[list[Example], LoadStats]:
    """Parse a HotpotQA-schema JSON file into examples."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}") from exc
    return examples_from_hotpot_records(records)


# ---------------------------------------------------------------------------
# SQuAD


_SENT_END = {".", "!", "?"}


def _split_sentences(tokens: list[Token]) -> list[tuple[int, int]]:
    bounds: list[tuple[int, int]] = []
    start = 0
    for k, tok in enumerate(tokens):
        if tok.text in _SENT_END:
            bounds.append((start, k + 1))
            start = k + 1
    if start < len(tokens):
        bounds.append((start, len(tokens)))
    return bounds


def load_squad(path: str) -> tuple[list[Example], LoadStats]:
    """Parse SQuAD v1.1 JSON; char answer offsets are snapped to covering
    tokens (counted when not already aligned). Supporting-fact labels stay
    empty: the single paragraph is one document."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: JSON parse error at line {exc.lineno}: {exc.msg}") from exc
    stats = LoadStats()
    examples: list[Example] = []
    for article in payload.get("data", []):
        title = article.get("title", "untitled")
        for para in article.get("paragraphs", []):
            context = para["context"]
            toks = tokenize(context)
            texts = [t.text for t in toks]
            spans = [SentenceSpan(s, e, 0, i)
                     for i, (s, e) in enumerate(_split_sentences(toks))]
            for qa in para.get("qas", []):
                question_tokens = [t.text for t in tokenize(qa["question"])]
                answers = []
                for a in qa.get("answers", []):
                    if a["text"] not in answers:
                        answers.append(a["text"])
                first = qa["answers"][0]
                lo = int(first["answer_start"])
                hi = lo + len(first["text"])
                hit = _char_span_to_tokens(toks, lo, hi)
                if hit is None:
                    stats.answers_not_found += 1
                    span = None
                else:
                    span = hit
                    if toks[hit[0]].start != lo or toks[hit[1]].end != hi:
                        stats.offsets_snapped += 1
                examples.append(Example(
                    id=str(qa["id"]), question_tokens=question_tokens,
                    context_tokens=list(texts),
                    doc_boundaries=[(title, 0, len(texts))],
                    sentence_spans=list(spans), answer_type="span",
                    answer_text=first["text"], answer_span=span,
                    sup_labels=[0] * len(spans), gold_sup=[],
                    answers=answers or [first["text"]]))
    return examples, stats


# ---------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocab:
    word_to_id: dict[str, int]
    char_to_id: dict[str, int]
    word_freq: Counter = field(default_factory=Counter)

    @property
    def n_words(self) -> int:
        return len(self.word_to_id) + 2

    @property
    def n_chars(self) -> int:
        return len(self.char_to_id) + 2

    def word_id(self, token: str) -> int:
        return self.word_to_id.get(token.lower(), UNK_ID)

    def char_id(self, ch: str) -> int:
        return self.char_to_id.get(ch, UNK_ID)


def build_vocab(examples: Iterable[Example], min_freq: int = 1) -> Vocab:
    """Deterministic vocabulary: words with frequency >= min_freq ordered by
    (freq desc, word asc); lookups are lowercased, characters keep case."""
    wfreq: Counter = Counter()
    cfreq: Counter = Counter()
    for ex in examples:
        for tok in ex.question_tokens + ex.context_tokens:
            wfreq[tok.lower()] += 1
            cfreq.update(tok)
    words = sorted((w for w, c in wfreq.items() if c >= min_freq),
                   key=lambda w: (-wfreq[w], w))
    chars = sorted(cfreq, key=lambda c: (-cfreq[c], c))
    return Vocab(word_to_id={w: i + 2 for i, w in enumerate(words)},
                 char_to_id={c: i + 2 for i, c in enumerate(chars)},
                 word_freq=wfreq)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    examples: list[Example]
    context_words: np.ndarray       # (B, T) int64
    context_chars: np.ndarray       # (B, T, W)
    question_words: np.ndarray      # (B, J)
    question_chars: np.ndarray      # (B, J, W)
    context_mask: np.ndarray        # (B, T) float32
    question_mask: np.ndarray       # (B, J)
    sentence_bounds: np.ndarray     # (B, S, 2) first/last token index, inclusive
    sentence_mask: np.ndarray       # (B, S)
    y_type: np.ndarray              # (B,)
    y_start: np.ndarray             # (B,)
    y_end: np.ndarray               # (B,)
    span_mask: np.ndarray           # (B,) 1.0 where the gold span is usable
    sup_labels: np.ndarray          # (B, S)

    @property
    def size(self) -> int:
        return len(self.examples)


@dataclass
class BatchStats:
    truncated_examples: int = 0
    spans_lost_to_truncation: int = 0


def truncate_example(ex: Example, max_tokens: int) -> tuple[Example, bool, bool]:
    """Drop trailing whole sentences until the context fits ``max_tokens``.

    Returns (example, truncated?, span_lost?)."""
    if ex.n_tokens <= max_tokens:
        return ex, False, False
    spans = [s for s in ex.sentence_spans if s.end <= max_tokens]
    cut = spans[-1].end if spans else 0
    docs = [(title, s, min(e, cut)) for (title, s, e) in ex.doc_boundaries if s < cut]
    span = ex.answer_span
    span_lost = False
    if span is not None and span[1] >= cut:
        span = None
        span_lost = ex.answer_type == "span"
    trimmed = Example(
        id=ex.id, question_tokens=ex.question_tokens,
        context_tokens=ex.context_tokens[:cut], doc_boundaries=docs,
        sentence_spans=spans, answer_type=ex.answer_type,
        answer_text=ex.answer_text, answer_span=span,
        sup_labels=ex.sup_labels[:len(spans)], gold_sup=ex.gold_sup,
        answers=ex.answers)
    return trimmed, True, span_lost


def _word_chars(token: str, vocab: Vocab, width: int) -> list[int]:
    ids = [vocab.char_id(c) for c in token[:width]]
    return ids + [PAD_ID] * (width - len(ids))


def make_batches(examples: list[Example], vocab: Vocab, batch_size: int,
                 max_context_tokens: int = MAX_CONTEXT_TOKENS,
                 max_word_len: int = 16, rng: np.random.Generator | None = None,
                 shuffle: bool = False) -> tuple[list[Batch], BatchStats]:
    """Pad examples into fixed arrays per batch. Training mode shuffles with
    the given rng; otherwise file order is kept."""
    stats = BatchStats()
    prepared: list[Example] = []
    for ex in examples:
        trimmed, truncated, span_lost = truncate_example(ex, max_context_tokens)
        stats.truncated_examples += int(truncated)
        stats.spans_lost_to_truncation += int(span_lost)
        prepared.append(trimmed)
    order = np.arange(len(prepared))
    if shuffle:
        if rng is None:
            raise ValueError("make_batches: shuffle requires an rng")
        rng.shuffle(order)
    batches: list[Batch] = []
    for lo in range(0, len(prepared), batch_size):
        chunk = [prepared[i] for i in order[lo:lo + batch_size]]
        batches.append(_assemble(chunk, vocab, max_word_len))
    return batches, stats


def _assemble(chunk: list[Example], vocab: Vocab, w: int) -> Batch:
    b = len(chunk)
    t_max = max(ex.n_tokens for ex in chunk)
    j_max = max(len(ex.question_tokens) for ex in chunk)
    s_max = max(len(ex.sentence_spans) for ex in chunk)

    cw = np.zeros((b, t_max), dtype=np.int64)
    cc = np.zeros((b, t_max, w), dtype=np.int64)
    qw = np.zeros((b, j_max), dtype=np.int64)
    qc = np.zeros((b, j_max, w), dtype=np.int64)
    cmask = np.zeros((b, t_max), dtype=np.float32)
    qmask = np.zeros((b, j_max), dtype=np.float32)
    sbounds = np.zeros((b, s_max, 2), dtype=np.int64)
    smask = np.zeros((b, s_max), dtype=np.float32)
    y_type = np.zeros(b, dtype=np.int64)
    y_start = np.zeros(b, dtype=np.int64)
    y_end = np.zeros(b, dtype=np.int64)
    span_mask = np.zeros(b, dtype=np.float32)
    sup = np.zeros((b, s_max), dtype=np.float32)

    for i, ex in enumerate(chunk):
        for k, tok in enumerate(ex.context_tokens):
            cw[i, k] = vocab.word_id(tok)
            cc[i, k] = _word_chars(tok, vocab, w)
        for k, tok in enumerate(ex.question_tokens):
            qw[i, k] = vocab.word_id(tok)
            qc[i, k] = _word_chars(tok, vocab, w)
        cmask[i, :ex.n_tokens] = 1.0
        qmask[i, :len(ex.question_tokens)] = 1.0
        for k, span in enumerate(ex.sentence_spans):
            sbounds[i, k] = (span.start, span.end - 1)
            smask[i, k] = 1.0
            sup[i, k] = ex.sup_labels[k]
        y_type[i] = ANSWER_TYPES.index(ex.answer_type)
        if ex.answer_type == "span" and ex.answer_span is not None:
            y_start[i], y_end[i] = ex.answer_span
            span_mask[i] = 1.0
    return Batch(examples=chunk, context_words=cw, context_chars=cc,
                 question_words=qw, question_chars=qc, context_mask=cmask,
                 question_mask=qmask, sentence_bounds=sbounds,
                 sentence_mask=smask, y_type=y_type, y_start=y_start,
                 y_end=y_end, span_mask=span_mask, sup_labels=sup)


# ---------------------------------------------------------------------------
# synthetic two-hop data


_SYLLABLES = ["ba", "den", "fil", "gor", "han", "jas", "kel", "lum", "mar",
              "nor", "pel", "quin", "ras", "sil", "tor", "vel", "wex", "yor",
              "zan", "bri"]
_CITIES = ["Ashford", "Brinmore", "Caldia", "Dunwell", "Eastmere", "Farholt"]
_UNITS = ["million", "thousand"]


def _coin_word(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 4))
    return "".join(rng.choice(_SYLLABLES) for _ in range(n)).capitalize()


def _artist_doc(title: str, value: str, city: str, year: int) -> list[str]:
    return [f"{title} grew up in {city} and began performing in {year}.",
            f"To date {title} has sold over {value} records worldwide."]


def _album_doc(title: str, artist: str, year: int) -> list[str]:
    return [f"{title} is the debut album by rapper {artist}.",
            f"The album was released in {year} to wide acclaim."]


def synth_two_hop_records(n: int, seed: int, n_distractors: int = 2) -> list[dict]:
    """Bridge-style records in the HotpotQA schema: the question names an
    album, the album's document names its artist, and the artist's document
    carries the sales figure that answers the question."""
    if n < 1:
        raise ValueError("synth_two_hop: n must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        album = _coin_word(rng) + " " + _coin_word(rng)
        artist = _coin_word(rng) + " " + _coin_word(rng)
        value = f"{int(rng.integers(2, 100))} {rng.choice(_UNITS)}"
        year = int(rng.integers(1980, 2021))
        city = str(rng.choice(_CITIES))
        docs = [(album, _album_doc(album, artist, year)),
                (artist, _artist_doc(artist, value, city, year + 1))]
        for _ in range(n_distractors):
            d_album = _coin_word(rng) + " " + _coin_word(rng)
            d_artist = _coin_word(rng) + " " + _coin_word(rng)
            d_value = f"{int(rng.integers(2, 100))} {rng.choice(_UNITS)}"
            d_year = int(rng.integers(1980, 2021))
            if rng.random() < 0.5:
                docs.append((d_album, _album_doc(d_album, d_artist, d_year)))
            else:
                docs.append((d_artist, _artist_doc(d_artist, d_value,
                                                   str(rng.choice(_CITIES)), d_year)))
        perm = rng.permutation(len(docs))
        records.append({
            "_id": f"synth-{seed}-{i}",
            "question": (f"The rapper whose debut album is {album} has sold "
                         "over how many records worldwide?"),
            "answer": value,
            "context": [[docs[k][0], docs[k][1]] for k in perm],
            "supporting_facts": [[album, 0], [artist, 1]],
            "type": "bridge",
            "level": "synthetic",
        })
    return records


def synth_two_hop(n: int, seed: int, n_distractors: int = 2) -> list[Example]:
    records = synth_two_hop_records(n, seed, n_distractors)
    examples, stats = examples_from_hotpot_records(records)
    assert stats.warnings_total == 0, "synthetic records must load cleanly"
    return examples
