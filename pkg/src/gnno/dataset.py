"""Interaction log ingestion, k-core filtering and leave-one-out splits."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed input data or corpus files."""


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class LineError:
    line_no: int
    line: str
    reason: str

    def __str__(self):
        return f"line {self.line_no}: {self.reason}: {self.line!r}"


def parse_log(
    lines: Iterable[str], delimiter: str = "\t", skip_header: bool = False
) -> tuple[list[InteractionRecord], list[LineError]]:
    """Parse ``user<delim>item<delim>timestamp`` lines.

    Returns the well-formed records in file order together with one
    ``LineError`` per rejected line (1-based line numbers). Blank lines
    are ignored. Extra trailing fields are allowed.
    """
    records: list[InteractionRecord] = []
    errors: list[LineError] = []
    for line_no, raw in enumerate(lines, start=1):
        if skip_header and line_no == 1:
            continue
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split(delimiter)
        if len(fields) < 3:
            errors.append(LineError(line_no, line, f"expected 3 fields, got {len(fields)}"))
            continue
        user, item, ts = fields[0].strip(), fields[1].strip(), fields[2].strip()
        try:
            timestamp = int(ts)
        except ValueError:
            try:
                value = float(ts)
            except ValueError:
                errors.append(LineError(line_no, line, "unparseable timestamp"))
                continue
            if value != value or value in (float("inf"), float("-inf")):
                errors.append(LineError(line_no, line, "non-finite timestamp"))
                continue
            timestamp = int(value)
        try:
            records.append(InteractionRecord(user, item, timestamp))
        except ValueError as exc:
            errors.append(LineError(line_no, line, str(exc)))
    return records, errors


def read_log(path, delimiter: str = "\t", skip_header: bool = False):
    with open(path, encoding="utf-8") as fh:
        return parse_log(fh, delimiter=delimiter, skip_header=skip_header)


def kcore_filter(records: list[InteractionRecord], k: int) -> list[InteractionRecord]:
    """Drop users and items with fewer than ``k`` interactions until both hold.

    Degrees count interactions (records), so repeated user-item pairs count
    more than once. Record order is preserved.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(records)
    while True:
        user_deg = Counter(r.user_id for r in kept)
        item_deg = Counter(r.item_id for r in kept)
        pruned = [r for r in kept if user_deg[r.user_id] >= k and item_deg[r.item_id] >= k]
        if len(pruned) == len(kept):
            break
        kept = pruned
    if records and not kept:
        warnings.warn(f"{k}-core filtering removed every interaction", RuntimeWarning, stacklevel=2)
    return kept


class Vocab:
    """Bidirectional token <-> dense index map, indices in first-seen order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.index.get(token)
        if idx is None:
            idx = len(self.tokens)
            self.index[token] = idx
            self.tokens.append(token)
        return idx

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token: str) -> int:
        return self.index[token]

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens


@dataclass
class InteractionCorpus:
    sequences: list[list[int]]
    item_vocab: Vocab
    user_vocab: Vocab

    @property
    def num_items(self) -> int:
        return len(self.item_vocab)

    @property
    def num_users(self) -> int:
        return len(self.user_vocab)

    def save(self, directory) -> None:
        """Write ``items.vocab``, ``users.vocab`` and ``sequences.txt``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, vocab in (("items.vocab", self.item_vocab), ("users.vocab", self.user_vocab)):
            with open(directory / name, "w", encoding="utf-8") as fh:
                for idx, tok in enumerate(vocab.tokens):
                    fh.write(f"{tok}\t{idx}\n")
        with open(directory / "sequences.txt", "w", encoding="utf-8") as fh:
            for user, seq in enumerate(self.sequences):
                fh.write(f"{user}\t{' '.join(map(str, seq))}\n")

    @classmethod
    def load(cls, directory) -> "InteractionCorpus":
        directory = Path(directory)
        vocabs = []
        for name in ("items.vocab", "users.vocab"):
            vocab = Vocab()
            with open(directory / name, encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    parts = line.rstrip("\n").split("\t")
                    if len(parts) != 2 or not parts[1].isdigit() or int(parts[1]) != len(vocab):
                        raise DataError(f"{name} line {line_no}: malformed vocab entry")
                    vocab.add(parts[0])
            vocabs.append(vocab)
        item_vocab, user_vocab = vocabs
        sequences: list[list[int]] = []
        with open(directory / "sequences.txt", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                user, _, items = line.rstrip("\n").partition("\t")
                try:
                    if int(user) != len(sequences):
                        raise ValueError
                    seq = [int(x) for x in items.split()]
                except ValueError:
                    raise DataError(f"sequences.txt line {line_no}: malformed") from None
                if any(i < 0 or i >= len(item_vocab) for i in seq):
                    raise DataError(f"sequences.txt line {line_no}: item index out of range")
                sequences.append(seq)
        if len(sequences) != len(user_vocab):
            raise DataError("sequence count does not match user vocabulary")
        return cls(sequences, item_vocab, user_vocab)


def build_corpus(records: list[InteractionRecord]) -> InteractionCorpus:
    """Group records per user and sort each sequence by (timestamp, file order)."""
    if not records:
        raise DataError("cannot build a corpus from zero records")
    item_vocab, user_vocab = Vocab(), Vocab()
    per_user: list[list[tuple[int, int, int]]] = []
    for order, rec in enumerate(records):
        u = user_vocab.add(rec.user_id)
        i = item_vocab.add(rec.item_id)
        if u == len(per_user):
            per_user.append([])
        per_user[u].append((rec.timestamp, order, i))
    sequences = [[i for _, _, i in sorted(events)] for events in per_user]
    return InteractionCorpus(sequences, item_vocab, user_vocab)


@dataclass
class SplitCorpus:
    """Leave-one-out view of a corpus.

    ``train[u]`` is the prefix used for training and graph building. Users
    with fewer than three interactions keep their full sequence in
    ``train`` and have no evaluation targets.
    """

    corpus: InteractionCorpus
    train: list[list[int]]
    valid_targets: dict[int, int]
    test_targets: dict[int, int]
    num_short: int = 0
    eval_users: list[int] = field(default_factory=list)

    def history(self, user: int, phase: str) -> list[int]:
        """Model input for evaluating ``user``: train prefix, plus the
        validation item when evaluating on the test target."""
        if phase == "valid":
            return self.train[user]
        if phase == "test":
            return self.train[user] + [self.valid_targets[user]]
        raise ValueError(f"unknown phase {phase!r}")

    def targets(self, phase: str) -> dict[int, int]:
        return {"valid": self.valid_targets, "test": self.test_targets}[phase]


def leave_one_out_split(corpus: InteractionCorpus) -> SplitCorpus:
    train, valid, test = [], {}, {}
    num_short = 0
    for user, seq in enumerate(corpus.sequences):
        if len(seq) < 3:
            train.append(list(seq))
            num_short += 1
            continue
        train.append(seq[:-2])
        valid[user] = seq[-2]
        test[user] = seq[-1]
    if num_short:
        logger.warning("%d users with fewer than 3 interactions excluded from evaluation", num_short)
    return SplitCorpus(corpus, train, valid, test, num_short, sorted(test))
