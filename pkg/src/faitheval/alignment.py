"""Map token-level language attributions onto a common word-level space.

Answer and explanation sides of a model may tokenize the same text
differently; comparing their attributions requires aggregating token
relevances onto a shared word sequence.  Aggregation is a plain sum, so the
total relevance is conserved.
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from typing import Sequence

from .core import AttributionVector, Modality
from .errors import AlignmentError, InvalidInput


@dataclass(frozen=True)
class TokenScheme:
    """How a token sequence encodes word boundaries.

    ``wordpiece``: continuation tokens carry a prefix (``##``); any unmarked
    token may start or continue a word depending on the running text.
    ``bpe``: word-initial tokens carry a marker; unmarked tokens continue.
    ``char_offsets``: tokens come with explicit (start, end) character spans.
    """

    kind: str
    continuation_prefix: str = "##"
    word_initial_marker: str = "Ġ"

    def __post_init__(self):
        if self.kind not in ("wordpiece", "bpe", "char_offsets"):
            raise InvalidInput(f"unknown token scheme {self.kind!r}")

    def strip(self, token: str, first_of_word: bool) -> str:
        if self.kind == "wordpiece":
            if token.startswith(self.continuation_prefix) and not first_of_word:
                return token[len(self.continuation_prefix) :]
            return token
        if self.kind == "bpe":
            if token.startswith(self.word_initial_marker):
                return token[len(self.word_initial_marker) :]
            return token
        return token


WORDPIECE = TokenScheme("wordpiece")
BPE = TokenScheme("bpe")
CHAR_OFFSETS = TokenScheme("char_offsets")


@dataclass(frozen=True)
class WordMap:
    """For each word index, the token indices composing it."""

    word_to_tokens: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "word_to_tokens", tuple(tuple(g) for g in self.word_to_tokens)
        )
        flat = [i for group in self.word_to_tokens for i in group]
        if any(not group for group in self.word_to_tokens):
            raise InvalidInput("every word must own at least one token")
        if flat != list(range(len(flat))):
            raise InvalidInput("token indices must partition the token sequence in order")

    @property
    def n_words(self) -> int:
        return len(self.word_to_tokens)

    @property
    def n_tokens(self) -> int:
        return sum(len(g) for g in self.word_to_tokens)


def segment_words(text: str) -> list[str]:
    """Deterministic word segmentation.

    Maximal runs of non-whitespace, with leading/trailing punctuation split
    off as standalone words (one word per punctuation character), so that
    e.g. a sentence-final "!" occupies its own slot in the word space.
    """
    words: list[str] = []
    for chunk in text.split():
        start = 0
        end = len(chunk)
        leading: list[str] = []
        while start < end and _is_punct(chunk[start]):
            leading.append(chunk[start])
            start += 1
        trailing: list[str] = []
        while end > start and _is_punct(chunk[end - 1]):
            trailing.append(chunk[end - 1])
            end -= 1
        words.extend(leading)
        if end > start:
            words.append(chunk[start:end])
        words.extend(reversed(trailing))
    return words


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _normalize(text: str) -> str:
    # Casefold plus accent strip: the fallback comparison when tokenizers
    # disagree on casing or diacritics conventions.
    decomposed = unicodedata.normalize("NFKD", text.casefold())
    return "".join(ch for ch in decomposed if not unicodedata.combining(ch))


def map_tokens_to_words(
    tokens: Sequence[str],
    scheme: TokenScheme,
    words: Sequence[str],
    spans: Sequence[tuple[int, int]] | None = None,
    text: str | None = None,
) -> WordMap:
    """Partition ``tokens`` over ``words``, preserving order.

    Matching is case-sensitive first, with a normalizing fallback (casefold +
    accent strip).  Raises :class:`AlignmentError` naming the first divergent
    span when the detokenized tokens do not reconstruct the word sequence.
    For the ``char_offsets`` scheme, ``spans`` are (start, end) offsets into
    ``text`` (defaulting to the words joined with single spaces).
    """
    if scheme.kind == "char_offsets":
        return _map_by_offsets(tokens, words, spans, text)
    groups: list[list[int]] = []
    token_index = 0
    for word_index, word in enumerate(words):
        group: list[int] = []
        assembled = ""
        while True:
            exact = assembled == word
            normalized = _normalize(assembled) == _normalize(word)
            if (exact or normalized) and group:
                break
            if token_index >= len(tokens):
                raise AlignmentError(
                    f"ran out of tokens while assembling word {word_index} ({word!r}); "
                    f"got {assembled!r}"
                )
            piece = scheme.strip(tokens[token_index], first_of_word=not group)
            candidate = assembled + piece
            if not (
                word.startswith(candidate) or _normalize(word).startswith(_normalize(candidate))
            ):
                raise AlignmentError(
                    f"token {token_index} ({tokens[token_index]!r}) diverges from word "
                    f"{word_index} ({word!r}) after {assembled!r}"
                )
            assembled = candidate
            group.append(token_index)
            token_index += 1
        groups.append(group)
    if token_index != len(tokens):
        raise AlignmentError(
            f"{len(tokens) - token_index} tokens left over after the last word "
            f"(first: {tokens[token_index]!r})"
        )
    return WordMap(tuple(tuple(g) for g in groups))


def _map_by_offsets(
    tokens: Sequence[str],
    words: Sequence[str],
    spans: Sequence[tuple[int, int]] | None,
    text: str | None,
) -> WordMap:
    if spans is None or len(spans) != len(tokens):
        raise InvalidInput("char_offsets scheme requires one (start, end) span per token")
    if text is None:
        text = " ".join(words)
    # Locate each word in the source text, in order; a token belongs to the
    # word whose character range contains the token's start offset.
    word_spans: list[tuple[int, int]] = []
    cursor = 0
    for word_index, word in enumerate(words):
        start = text.find(word, cursor)
        if start < 0:
            raise AlignmentError(f"word {word_index} ({word!r}) not found in text after {cursor}")
        word_spans.append((start, start + len(word)))
        cursor = start + len(word)
    groups: list[list[int]] = [[] for _ in words]
    for token_index, (start, end) in enumerate(spans):
        if end <= start:
            raise AlignmentError(f"token {token_index} has an empty span ({start}, {end})")
        owner = None
        for word_index, (ws, we) in enumerate(word_spans):
            if ws <= start < we:
                owner = word_index
                break
        if owner is None:
            raise AlignmentError(f"token {token_index} span ({start}, {end}) is outside every word")
        groups[owner].append(token_index)
    return WordMap(tuple(tuple(g) for g in groups))


def word_map_from_indices(word_indices: Sequence[int], n_words: int) -> WordMap:
    """Build a WordMap from a per-token word-index list."""
    groups: list[list[int]] = [[] for _ in range(n_words)]
    for token_index, word_index in enumerate(word_indices):
        if not 0 <= word_index < n_words:
            raise InvalidInput(f"word index {word_index} out of range")
        groups[word_index].append(token_index)
    return WordMap(tuple(tuple(g) for g in groups))


def aggregate_to_words(token_attrib: AttributionVector, word_map: WordMap) -> AttributionVector:
    """Word relevance = sum of member-token relevances (left-to-right)."""
    if token_attrib.modality is not Modality.LANGUAGE:
        raise InvalidInput("word aggregation applies to language attributions")
    if len(token_attrib) != word_map.n_tokens:
        raise InvalidInput(
            f"attribution covers {len(token_attrib)} tokens but the map has {word_map.n_tokens}"
        )
    values = token_attrib.values
    word_values = []
    for group in word_map.word_to_tokens:
        total = 0.0
        for token_index in group:
            total += float(values[token_index])
        word_values.append(total)
    return AttributionVector(
        Modality.LANGUAGE, tuple(range(word_map.n_words)), word_values
    )
