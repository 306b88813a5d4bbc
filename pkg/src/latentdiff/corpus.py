"""Synthetic corpora: a tiny story grammar, rule-based paraphrase pairs,
word-level tokenization with special tokens, and split handling.

Story grammar
-------------
A story is 2-3 sentences. Each sentence is one of three templates
(brackets mark optional slots, every sentence ends with the "." token):

    T1: the [ADJ] NOUN VT the [ADJ] NOUN .
    T2: the [ADJ] NOUN VI [ADV] .
    T3: the [ADJ] NOUN VI in the PLACE .

Words come from fixed closed lists (`NOUNS`, `VT`, `VI`, `ADJECTIVES`,
`ADVERBS`, `PLACES`). The grammar deliberately ignores number and tense
agreement, and a handful of surface words appear in two roles
(`AMBIGUOUS`, e.g. "duck" is both a noun and an intransitive verb), so a
contextual encoder has something real to disambiguate. `validate_story`
checks membership in the grammar by exact template matching, which makes
"grammatical validity" of generated text machine-checkable.

Paraphrase pairs
----------------
Sources are single sentences from two mandatory-adjective templates:

    P1: the ADJ NOUN VT the ADJ NOUN .
    P2: the ADJ NOUN VI in the PLACE .

The target is a deterministic rewrite of the source: every adjective is
replaced by its partner in `SYNONYMS` (a fixed-point-free involution), and
P2 sentences additionally have their place phrase fronted
("... VI in the PLACE ." -> "in the PLACE the ... VI ."). Both rules are
invertible, so exact-match accuracy against the reference target is a
meaningful score.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

PAD, BOS, EOS, MASK, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<mask>", "<unk>")

AMBIGUOUS = ("duck", "watch", "play", "run", "walk")

NOUNS = (
    "fox", "dog", "cat", "bird", "duck", "fish", "bear", "wolf", "mouse",
    "horse", "farmer", "child", "baker", "teacher", "sailor", "poet",
    "king", "queen", "knight", "watch", "play", "run", "walk", "stone",
    "tree", "river", "cloud", "garden", "wagon", "lantern",
)

VT = (
    "chase", "find", "carry", "follow", "lift", "paint", "greet",
    "ignore", "admire", "drop", "grab", "trade", "guard", "help",
)

VI = (
    "sleep", "laugh", "wander", "stumble", "rest", "shout", "vanish",
    "wait", "duck", "watch", "play", "run", "walk", "dance",
)

# fixed-point-free involution used by the paraphrase rewrite
SYNONYMS: Dict[str, str] = {
    "big": "large", "large": "big",
    "small": "tiny", "tiny": "small",
    "happy": "glad", "glad": "happy",
    "quick": "fast", "fast": "quick",
    "quiet": "calm", "calm": "quiet",
    "bright": "shiny", "shiny": "bright",
}

ADJECTIVES = tuple(sorted(SYNONYMS))

ADVERBS = ("quickly", "slowly", "quietly", "loudly", "gently", "bravely",
           "sadly", "proudly")

PLACES = ("park", "forest", "garden", "village", "harbor", "meadow",
          "kitchen", "tower", "valley", "market")

FUNCTION_WORDS = ("the", "in", ".")


class TruncationError(ValueError):
    """Text longer than the fixed sequence length; never truncated silently."""


@dataclass(frozen=True)
class Vocab:
    """Token/id bijection with the five reserved special ids at 0..4."""

    words: Tuple[str, ...]

    @classmethod
    def default(cls) -> "Vocab":
        pool = set(NOUNS) | set(VT) | set(VI) | set(ADJECTIVES)
        pool |= set(ADVERBS) | set(PLACES) | set(FUNCTION_WORDS)
        return cls(words=tuple(sorted(pool)))

    def __len__(self) -> int:
        return len(SPECIAL_TOKENS) + len(self.words)

    def id_of(self, token: str) -> int:
        try:
            return len(SPECIAL_TOKENS) + self.words.index(token)
        except ValueError:
            return UNK

    def token_of(self, idx: int) -> str:
        if idx < len(SPECIAL_TOKENS):
            return SPECIAL_TOKENS[idx]
        return self.words[idx - len(SPECIAL_TOKENS)]

    def encode_words(self, tokens: Sequence[str]) -> List[int]:
        lookup = self._lookup()
        return [lookup.get(tok, UNK) for tok in tokens]

    def _lookup(self) -> Dict[str, int]:
        if not hasattr(self, "_cache"):
            object.__setattr__(
                self, "_cache",
                {w: i + len(SPECIAL_TOKENS) for i, w in enumerate(self.words)})
        return getattr(self, "_cache")


@dataclass
class TokenSeq:
    """Fixed-length padded id sequence: [BOS, w1..wk, EOS, PAD...]."""

    ids: np.ndarray
    true_length: int
    is_special: np.ndarray

    @property
    def m(self) -> int:
        return len(self.ids)


@dataclass
class PairExample:
    source: TokenSeq
    target: TokenSeq


def tokenize(text: str, m: int, vocab: Vocab) -> TokenSeq:
    """Word-split `text` into a fixed-length TokenSeq of length `m`.

    Raises `TruncationError` if the text has more than m-2 tokens.
    Unknown words map to UNK (which is not a special position).
    """
    tokens = text.split()
    if len(tokens) > m - 2:
        raise TruncationError(
            f"text has {len(tokens)} tokens, limit is {m - 2} for m={m}")
    ids = np.full(m, PAD, dtype=np.int64)
    ids[0] = BOS
    word_ids = vocab.encode_words(tokens)
    ids[1:1 + len(word_ids)] = word_ids
    ids[1 + len(word_ids)] = EOS
    true_length = len(word_ids) + 2
    is_special = np.zeros(m, dtype=bool)
    is_special[0] = True
    is_special[true_length - 1] = True
    is_special[true_length:] = True
    return TokenSeq(ids=ids, true_length=true_length, is_special=is_special)


def detokenize(seq: TokenSeq, vocab: Vocab) -> str:
    inner = seq.ids[1:seq.true_length - 1]
    return " ".join(vocab.token_of(int(i)) for i in inner)


def ids_to_text(ids: np.ndarray, vocab: Vocab) -> str:
    """Best-effort text from an arbitrary id array (e.g. decoded samples).

    Skips a leading BOS, stops at the first EOS or PAD, and renders any
    stray special token literally so that malformed output fails the
    grammar check instead of being cleaned up.
    """
    out = []
    for pos, idx in enumerate(np.asarray(ids).tolist()):
        if pos == 0 and idx == BOS:
            continue
        if idx in (EOS, PAD):
            break
        out.append(vocab.token_of(int(idx)))
    return " ".join(out)


# ---------------------------------------------------------------------------
# story generation and validation

_T1, _T2, _T3 = 0, 1, 2


def _sentence(rng: np.random.Generator) -> List[str]:
    kind = int(rng.integers(0, 3))
    toks = ["the"]
    if rng.random() < 0.5:
        toks.append(ADJECTIVES[rng.integers(0, len(ADJECTIVES))])
    toks.append(NOUNS[rng.integers(0, len(NOUNS))])
    if kind == _T1:
        toks.append(VT[rng.integers(0, len(VT))])
        toks.append("the")
        if rng.random() < 0.5:
            toks.append(ADJECTIVES[rng.integers(0, len(ADJECTIVES))])
        toks.append(NOUNS[rng.integers(0, len(NOUNS))])
    elif kind == _T2:
        toks.append(VI[rng.integers(0, len(VI))])
        if rng.random() < 0.5:
            toks.append(ADVERBS[rng.integers(0, len(ADVERBS))])
    else:
        toks.append(VI[rng.integers(0, len(VI))])
        toks.extend(["in", "the"])
        toks.append(PLACES[rng.integers(0, len(PLACES))])
    toks.append(".")
    return toks


def generate_story_corpus(seed: int, count: int) -> List[str]:
    """Deterministic templated mini-stories (2-3 sentences each)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    stories = []
    for _ in range(count):
        n_sent = int(rng.integers(2, 4))
        toks: List[str] = []
        for _ in range(n_sent):
            toks.extend(_sentence(rng))
        stories.append(" ".join(toks))
    return stories


def _match_noun_phrase(toks: List[str], i: int) -> List[int]:
    """Positions after consuming "the [ADJ] NOUN" starting at i; empty if none."""
    ends = []
    if i < len(toks) and toks[i] == "the":
        j = i + 1
        if j < len(toks) and toks[j] in SYNONYMS and j + 1 < len(toks) and toks[j + 1] in NOUNS:
            ends.append(j + 2)
        if j < len(toks) and toks[j] in NOUNS:
            ends.append(j + 1)
    return ends


def _valid_sentence(toks: List[str]) -> bool:
    if not toks or toks[-1] != ".":
        return False
    body = toks[:-1]
    for i in _match_noun_phrase(body, 0):
        rest = body[i:]
        # T1: VT followed by a noun phrase
        if rest and rest[0] in VT:
            for j in _match_noun_phrase(rest, 1):
                if j == len(rest):
                    return True
        # T2/T3: VI with optional adverb or place phrase
        if rest and rest[0] in VI:
            tail = rest[1:]
            if not tail:
                return True
            if len(tail) == 1 and tail[0] in ADVERBS:
                return True
            if len(tail) == 3 and tail[0] == "in" and tail[1] == "the" and tail[2] in PLACES:
                return True
    return False


def validate_story(text: str) -> bool:
    """True iff `text` parses as 2-3 grammar sentences."""
    toks = text.split()
    if not toks:
        return False
    sentences: List[List[str]] = []
    current: List[str] = []
    for tok in toks:
        current.append(tok)
        if tok == ".":
            sentences.append(current)
            current = []
    if current:
        return False
    if not 2 <= len(sentences) <= 3:
        return False
    return all(_valid_sentence(s) for s in sentences)


def duplicate_rate(texts: Sequence[str]) -> float:
    """Fraction of texts that are repeat occurrences of an earlier text."""
    seen = set()
    dups = 0
    for t in texts:
        if t in seen:
            dups += 1
        seen.add(t)
    return dups / len(texts)


def split_corpus(texts: Sequence[str], seed: int,
                 fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
                 ) -> Tuple[List[str], List[str], List[str]]:
    """Deduplicated train/val/test split; identical stories never straddle splits."""
    unique = list(dict.fromkeys(texts))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(unique))
    n = len(unique)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    idx = [unique[i] for i in order]
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


# ---------------------------------------------------------------------------
# paraphrase pairs

_P1, _P2 = 0, 1


def _pair_source(rng: np.random.Generator) -> str:
    kind = int(rng.integers(0, 2))
    adj = ADJECTIVES[rng.integers(0, len(ADJECTIVES))]
    noun = NOUNS[rng.integers(0, len(NOUNS))]
    if kind == _P1:
        adj2 = ADJECTIVES[rng.integers(0, len(ADJECTIVES))]
        noun2 = NOUNS[rng.integers(0, len(NOUNS))]
        vt = VT[rng.integers(0, len(VT))]
        return f"the {adj} {noun} {vt} the {adj2} {noun2} ."
    vi = VI[rng.integers(0, len(VI))]
    place = PLACES[rng.integers(0, len(PLACES))]
    return f"the {adj} {noun} {vi} in the {place} ."


def rewrite_paraphrase(text: str) -> str:
    """The documented paraphrase rewrite: synonym swap, then PP fronting."""
    toks = text.split()
    toks = [SYNONYMS.get(t, t) for t in toks]
    if len(toks) >= 5 and toks[-4] == "in" and toks[-3] == "the" and toks[-1] == ".":
        toks = toks[-4:-1] + toks[:-4] + ["."]
    return " ".join(toks)


def generate_paraphrase_pairs(seed: int, count: int) -> List[Tuple[str, str]]:
    """Deterministic (source, target) pairs; target is always a true rewrite."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        src = _pair_source(rng)
        pairs.append((src, rewrite_paraphrase(src)))
    return pairs


# ---------------------------------------------------------------------------
# corpus files: one example per line; pairs are source TAB target


def save_corpus(path: Path, texts: Sequence[str]) -> None:
    Path(path).write_text("\n".join(texts) + "\n", encoding="utf-8")


def load_corpus(path: Path) -> List[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def save_pairs(path: Path, pairs: Sequence[Tuple[str, str]]) -> None:
    Path(path).write_text(
        "\n".join(f"{s}\t{t}" for s, t in pairs) + "\n", encoding="utf-8")


def load_pairs(path: Path) -> List[Tuple[str, str]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        s, t = line.split("\t")
        out.append((s, t))
    return out


def tokenize_corpus(texts: Sequence[str], m: int, vocab: Vocab) -> List[TokenSeq]:
    return [tokenize(t, m, vocab) for t in texts]
