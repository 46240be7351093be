"""
Turning business descriptions into padded sequences of embedding rows.

Words missing from the pretrained vocabulary are replaced by the closest
pretrained word within a small edit distance or, failing that, get a fresh
randomly initialised vector.
"""
from __future__ import annotations

import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .checkpoint import read_container, write_container
from .errors import EmbeddingFormatError, InputError, ParameterError
from .types import FactorVector, IdArray, Matrix

__all__ = [
    "PAD_ROW",
    "EmbeddingTable",
    "Provenance",
    "TokenizedDoc",
    "bounded_edit_distance",
    "compact_table",
    "edit_distance",
    "load_docs",
    "load_embeddings",
    "nearest_alias",
    "prepare_docs",
    "resolve_token",
    "save_docs",
    "tokenize",
]

logger = logging.getLogger(__name__)

PAD_ROW = 0

_MAGIC = b"FFDC"
_VERSION = 1

# Letters and digits; the underscore counts as a separator.
_TOKEN = re.compile(r"[^\W_]+")


class Provenance(str, Enum):
    """Where an embedding row or vocabulary entry comes from."""

    PADDING = "padding"
    PRETRAINED = "pretrained"
    EDIT_DISTANCE_ALIAS = "edit_distance_alias"
    RANDOM_INIT = "random_init"


class EmbeddingTable:
    """
    A token → vector lookup table. Row 0 is the all-zero padding vector and
    belongs to no token. Rows are appended as unknown tokens are resolved;
    aliases map a token onto the row of an existing one.
    """

    def __init__(self, dim: int) -> None:
        """
        Arguments:
            dim: Dimensionality of every row.
        """
        if dim < 1:
            raise ParameterError(
                f"Embedding dimensionality must be positive, got {dim}."
            )

        self._dim = dim
        self._matrix = np.zeros((16, dim))
        self._size = 1
        self._row_provenance: List[Provenance] = [Provenance.PADDING]
        self._vocab: Dict[str, int] = {}
        self._token_provenance: Dict[str, Provenance] = {}
        self._alias_index: Optional[Dict[int, List[str]]] = None

    @classmethod
    def from_pretrained(
        cls, dim: int, tokens: Sequence[str], vectors: Matrix
    ) -> EmbeddingTable:
        """Create a table whose rows 1..n hold the given pretrained vectors."""
        vectors = np.asarray(vectors, dtype=np.float64).reshape(len(tokens), dim)
        table = cls(dim)
        table._matrix = np.vstack([np.zeros((1, dim)), vectors])
        table._size = len(tokens) + 1
        table._row_provenance.extend([Provenance.PRETRAINED] * len(tokens))
        for row, token in enumerate(tokens, start=1):
            table._vocab[token] = row
            table._token_provenance[token] = Provenance.PRETRAINED
        assert len(table._vocab) == len(tokens), "tokens must be distinct"
        return table

    def __len__(self) -> int:
        """Return the number of rows, the padding row included."""
        return self._size

    def __contains__(self, token: object) -> bool:
        return token in self._vocab

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def matrix(self) -> Matrix:
        """Return all rows. The array is a view into the table."""
        return self._matrix[: self._size]

    @property
    def vocab(self) -> Dict[str, int]:
        return self._vocab

    @property
    def row_provenance(self) -> Tuple[Provenance, ...]:
        return tuple(self._row_provenance)

    def token_provenance(self, token: str) -> Provenance:
        return self._token_provenance[token]

    def provenance_counts(self) -> Dict[Provenance, int]:
        """Return the number of vocabulary entries of every provenance."""
        return dict(Counter(self._token_provenance.values()))

    def row_of(self, token: str) -> Optional[int]:
        return self._vocab.get(token)

    def append(self, token: str, vector: FactorVector, provenance: Provenance) -> int:
        """
        Add a new row for a token not yet in the vocabulary.

        Returns:
            Index of the new row.
        """
        assert token not in self._vocab
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self._dim,):
            raise ParameterError(
                f"Expected a vector of length {self._dim}, got shape {vector.shape}."
            )

        if self._size == len(self._matrix):
            grown = np.zeros((2 * len(self._matrix), self._dim))
            grown[: self._size] = self._matrix[: self._size]
            self._matrix = grown

        row = self._size
        self._matrix[row] = vector
        self._size += 1
        self._row_provenance.append(provenance)
        self._vocab[token] = row
        self._token_provenance[token] = provenance
        if provenance is Provenance.PRETRAINED:
            self._alias_index = None
        return row

    def alias(self, token: str, row: int) -> None:
        """Map a token onto an existing row."""
        assert token not in self._vocab
        assert PAD_ROW < row < self._size
        self._vocab[token] = row
        self._token_provenance[token] = Provenance.EDIT_DISTANCE_ALIAS

    def alias_candidates(self) -> Dict[int, List[str]]:
        """Return the pretrained tokens grouped by length, each group sorted."""
        if self._alias_index is None:
            index: Dict[int, List[str]] = defaultdict(list)
            for token, provenance in self._token_provenance.items():
                if provenance is Provenance.PRETRAINED:
                    index[len(token)].append(token)
            for group in index.values():
                group.sort()
            self._alias_index = dict(index)
        return self._alias_index

    def copy(self) -> EmbeddingTable:
        table = EmbeddingTable(self._dim)
        table._matrix = self.matrix.copy()
        table._size = self._size
        table._row_provenance = list(self._row_provenance)
        table._vocab = dict(self._vocab)
        table._token_provenance = dict(self._token_provenance)
        return table

    def describe(self) -> Dict[str, object]:
        """Return the vocabulary and provenance as a JSON-serialisable mapping."""
        return {
            "dim": self._dim,
            "vocab": [
                [token, row, self._token_provenance[token].value]
                for token, row in self._vocab.items()
            ],
            "row_provenance": [kind.value for kind in self._row_provenance],
        }

    @classmethod
    def from_description(
        cls, description: Mapping[str, Any], matrix: Matrix
    ) -> EmbeddingTable:
        """Rebuild a table from `describe` output and its rows."""
        table = cls(description["dim"])
        table._matrix = np.asarray(matrix, dtype=np.float64).reshape(-1, table._dim)
        table._size = len(table._matrix)
        table._row_provenance = [
            Provenance(kind) for kind in description["row_provenance"]
        ]
        for token, row, provenance in description["vocab"]:
            table._vocab[token] = row
            table._token_provenance[token] = Provenance(provenance)
        if len(table._row_provenance) != table._size:
            raise InputError("Embedding rows and their provenance disagree.")
        return table


@dataclass(frozen=True, eq=False)
class TokenizedDoc:
    """
    A business description as embedding row indexes, padded with `PAD_ROW`.

    Attributes:
        business_id: The described business.
        token_ids: Row indexes, padded to the corpus-wide length.
        true_length: Number of tokens before padding.
    """

    business_id: str
    token_ids: IdArray
    true_length: int


def tokenize(text: str) -> List[str]:
    """Lowercase a text and split it at every non-alphanumeric character."""
    return _TOKEN.findall(text.lower())


def load_embeddings(path: Union[str, Path], dim: int = 300) -> EmbeddingTable:
    """
    Load word vectors in GloVe text format: a token followed by `dim`
    space-separated decimal numbers on every line.

    Only the first occurrence of a repeated token is kept.

    Raises:
        OSError: The file cannot be read.
        EmbeddingFormatError: A line does not have `dim` + 1 components.
    """
    tokens: List[str] = []
    vectors: List[np.ndarray] = []
    seen = set()
    duplicates = 0

    with open(path, "rb") as stream:
        for index, raw in enumerate(stream):
            if not raw.strip():
                continue
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as error:
                raise EmbeddingFormatError(index + 1, str(error)) from error
            parts = line.rstrip().split(" ")
            if len(parts) != dim + 1:
                raise EmbeddingFormatError(
                    index + 1, f"expected {dim + 1} components, found {len(parts)}"
                )
            token = parts[0]
            if token in seen:
                duplicates += 1
                continue
            try:
                vectors.append(np.asarray(parts[1:], dtype=np.float64))
            except ValueError as error:
                raise EmbeddingFormatError(index + 1, str(error)) from error
            tokens.append(token)
            seen.add(token)

    if duplicates:
        logger.warning(
            "Ignored %d repeated token(s) in ‘%s’; the first vector was kept",
            duplicates,
            path,
        )
    logger.info(
        "Loaded %d %d-dimensional word vectors from ‘%s’", len(tokens), dim, path
    )

    matrix = np.array(vectors) if vectors else np.zeros((0, dim))
    return EmbeddingTable.from_pretrained(dim, tokens, matrix)


def edit_distance(a: str, b: str) -> int:
    """
    Return the Levenshtein distance between two strings: the least number of
    single-character insertions, deletions and substitutions that turn one
    into the other.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)

    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, start=1):
        current = [i]
        for j, char_b in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (char_a != char_b),
                )
            )
        previous = current
    return previous[-1]


def bounded_edit_distance(a: str, b: str, limit: int) -> int:
    """
    Return the Levenshtein distance between two strings if it is at most
    `limit`, and `limit + 1` otherwise.

    Only the diagonal band of width 2 * limit + 1 of the dynamic programming
    table is filled, and the computation stops as soon as a whole row exceeds
    the limit.
    """
    over = limit + 1
    if abs(len(a) - len(b)) > limit:
        return over

    columns = len(b)
    previous = [j if j <= limit else over for j in range(columns + 1)]
    for i, char_a in enumerate(a, start=1):
        current = [over] * (columns + 1)
        current[0] = i if i <= limit else over
        for j in range(max(1, i - limit), min(columns, i + limit) + 1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (char_a != b[j - 1]),
                over,
            )
        if min(current) >= over:
            return over
        previous = current
    return min(previous[columns], over)


def nearest_alias(
    token: str, table: EmbeddingTable, max_distance: int = 2
) -> Optional[Tuple[str, int]]:
    """
    Find the pretrained token closest to `token` within `max_distance` edits.
    Ties are broken by the lexicographically smallest token.

    Returns:
        The matching token and its distance, or `None`.
    """
    candidates = table.alias_candidates()
    best: Optional[Tuple[int, str]] = None
    for length in range(len(token) - max_distance, len(token) + max_distance + 1):
        for candidate in candidates.get(length, ()):
            limit = max_distance if best is None else best[0]
            distance = bounded_edit_distance(token, candidate, limit)
            if distance <= limit and (best is None or (distance, candidate) < best):
                best = (distance, candidate)
    return None if best is None else (best[1], best[0])


def resolve_token(
    token: str,
    table: EmbeddingTable,
    rng: np.random.Generator,
    *,
    max_distance: int = 2,
    init_range: float = 0.25,
) -> int:
    """
    Return the embedding row of a token, extending the table if needed.

    A known token maps to its row. An unknown token within `max_distance`
    edits of a pretrained token becomes an alias of the closest one. Any
    other token gets a new row drawn uniformly from [-init_range, init_range].
    """
    if not token:
        raise ParameterError("Cannot resolve an empty token.")

    row = table.row_of(token)
    if row is not None:
        return row

    match = nearest_alias(token, table, max_distance)
    if match is not None:
        row = table.vocab[match[0]]
        table.alias(token, row)
        logger.debug("‘%s’ aliased to ‘%s’ (distance %d)", token, *match)
        return row

    vector = rng.uniform(-init_range, init_range, size=table.dim)
    return table.append(token, vector, Provenance.RANDOM_INIT)


def prepare_docs(
    descriptions: Iterable[Tuple[str, str]],
    table: EmbeddingTable,
    rng: np.random.Generator,
    *,
    max_length: Optional[int] = 1000,
    max_distance: int = 2,
    init_range: float = 0.25,
) -> List[TokenizedDoc]:
    """
    Tokenize descriptions and pad them to the length of the longest one.

    Tokens are resolved in document order and then token order, so random
    fallback vectors depend only on the input and the generator state.

    Arguments:
        descriptions: (business_id, text) pairs.
        table: Embedding table, extended with aliases and random rows.
        rng: Generator of fallback vectors.
        max_length: Longer descriptions are truncated to this many tokens.
            `None` disables truncation.
        max_distance: Edit distance threshold of aliases.
        init_range: Bound of random fallback components.

    Raises:
        ParameterError: Some descriptions contain no tokens; all such
            businesses are listed.
    """
    tokenized = [(business_id, tokenize(text)) for business_id, text in descriptions]
    empty = [business_id for business_id, tokens in tokenized if not tokens]
    if empty:
        raise ParameterError(f"Descriptions without any token: {', '.join(empty)}")

    if max_length is not None:
        truncated = sum(1 for _, tokens in tokenized if len(tokens) > max_length)
        if truncated:
            logger.info(
                "Truncated %d description(s) to %d tokens", truncated, max_length
            )
        tokenized = [(doc_id, tokens[:max_length]) for doc_id, tokens in tokenized]

    padded_length = max((len(tokens) for _, tokens in tokenized), default=0)
    docs = []
    for business_id, tokens in tokenized:
        token_ids = np.full(padded_length, PAD_ROW, dtype=np.int64)
        token_ids[: len(tokens)] = [
            resolve_token(
                token, table, rng, max_distance=max_distance, init_range=init_range
            )
            for token in tokens
        ]
        docs.append(TokenizedDoc(business_id, token_ids, len(tokens)))

    logger.info(
        "Prepared %d descriptions padded to %d tokens; vocabulary provenance %s",
        len(docs),
        padded_length,
        {kind.value: count for kind, count in table.provenance_counts().items()},
    )
    return docs


def compact_table(
    docs: Sequence[TokenizedDoc], table: EmbeddingTable
) -> Tuple[List[TokenizedDoc], EmbeddingTable]:
    """
    Return copies of the documents and a table that keeps only the padding
    row and the rows the documents reference, in their original order.
    """
    used = sorted(
        {int(row) for doc in docs for row in doc.token_ids.tolist() if row != PAD_ROW}
    )
    mapping = np.zeros(len(table), dtype=np.int64)
    mapping[used] = np.arange(1, len(used) + 1)

    compact = EmbeddingTable(table.dim)
    compact._matrix = np.vstack([np.zeros((1, table.dim)), table.matrix[used]])
    compact._size = len(used) + 1
    compact._row_provenance = [Provenance.PADDING] + [
        table.row_provenance[row] for row in used
    ]
    for token, row in table.vocab.items():
        if mapping[row]:
            compact._vocab[token] = int(mapping[row])
            compact._token_provenance[token] = table.token_provenance(token)

    remapped = [
        TokenizedDoc(doc.business_id, mapping[doc.token_ids], doc.true_length)
        for doc in docs
    ]
    return remapped, compact


def save_docs(
    path: Union[str, Path], docs: Sequence[TokenizedDoc], table: EmbeddingTable
) -> None:
    """
    Write prepared documents together with a snapshot of their embedding
    table. Arrays are stored as `matrix` (rows × dim) and `token_ids`
    (documents × padded length).
    """
    padded_length = len(docs[0].token_ids) if docs else 0
    token_ids = (
        np.vstack([doc.token_ids for doc in docs])
        if docs
        else np.zeros((0, 0), dtype=np.int64)
    )
    write_container(
        path,
        _MAGIC,
        _VERSION,
        {
            "padded_length": padded_length,
            "business_ids": [doc.business_id for doc in docs],
            "true_lengths": [doc.true_length for doc in docs],
            "table": table.describe(),
        },
        {"matrix": table.matrix, "token_ids": token_ids},
    )


def load_docs(path: Union[str, Path]) -> Tuple[List[TokenizedDoc], EmbeddingTable]:
    """Read documents and their table written by `save_docs`."""
    header, arrays = read_container(path, _MAGIC, _VERSION)

    table = EmbeddingTable.from_description(header["table"], arrays["matrix"])
    docs = [
        TokenizedDoc(business_id, arrays["token_ids"][position], true_length)
        for position, (business_id, true_length) in enumerate(
            zip(header["business_ids"], header["true_lengths"])
        )
    ]
    return docs, table
