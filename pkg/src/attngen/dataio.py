"""Sequence encoding, corpus files, splitting, batching and synthetic corpora.

Tokens: 0 = pad / unknown (N), 1 = A, 2 = T, 3 = G, 4 = C.

Corpus CSV is UTF-8 with the header ``sequence,label``. To convert the
public ``demo_human_or_worm`` benchmark (one text file per sequence under
``<split>/<class>/``), write one row per file with the class directory mapped
to 0 (human) or 1 (worm).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from attngen.errors import DataError, InvalidCharacterError, ParseError
from attngen.rng import Xoshiro256pp, derive_seed

TOKEN_MAP = {"A": 1, "T": 2, "G": 3, "C": 4, "N": 0}
ALPHABET = "NATGC"  # index -> character
PAD = 0

# stream identifiers folded into the seed for each stochastic stage
STREAM_SPLIT = 1
STREAM_SHUFFLE = 2
STREAM_SYNTH = 3
STREAM_DROPOUT = 4
STREAM_INIT = 5
STREAM_RANDOM_MASK = 6
STREAM_OCCLUSION = 7


@dataclass
class EncodedSequence:
    tokens: np.ndarray
    label: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")


def encode_sequence(text: str, length: int) -> np.ndarray:
    """Map nucleotides to tokens (case-insensitive) and right-pad to ``length``.

    Positions in error messages are 1-based.
    """
    if len(text) > length:
        raise DataError(f"sequence of length {len(text)} exceeds L={length}")
    out = np.zeros(length, dtype=np.int64)
    for i, ch in enumerate(text):
        try:
            out[i] = TOKEN_MAP[ch.upper()]
        except KeyError:
            raise InvalidCharacterError(ch, i + 1) from None
    return out


def decode_tokens(tokens) -> str:
    return "".join(ALPHABET[t] for t in np.asarray(tokens))


def load_csv_corpus(path, length: int) -> list[EncodedSequence]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"corpus file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path} is not valid UTF-8: {exc}") from None
    lines = text.split("\n")
    if not lines or lines[0].strip() != "sequence,label":
        raise ParseError("missing 'sequence,label' header", line=1)
    corpus = []
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip() == "":
            continue
        parts = line.rstrip("\r").split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 2 fields, got {len(parts)}", line=lineno)
        seq, label = parts
        if label.strip() not in ("0", "1"):
            raise ParseError(f"label must be 0 or 1, got {label!r}", line=lineno)
        try:
            tokens = encode_sequence(seq.strip(), length)
        except DataError as exc:
            raise ParseError(str(exc), line=lineno) from None
        corpus.append(EncodedSequence(tokens, int(label)))
    return corpus


def write_csv_corpus(path, corpus) -> None:
    buf = io.StringIO()
    buf.write("sequence,label\n")
    for seq in corpus:
        buf.write(f"{decode_tokens(seq.tokens)},{seq.label}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def stack(sequences):
    """(tokens[N, L], labels[N]) arrays for a list of sequences."""
    if not sequences:
        return np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64)
    tokens = np.stack([s.tokens for s in sequences])
    labels = np.array([s.label for s in sequences], dtype=np.int64)
    return tokens, labels


@dataclass
class DatasetSplit:
    train: list
    validation: list
    seed: int
    train_index: np.ndarray = field(default=None, repr=False)
    validation_index: np.ndarray = field(default=None, repr=False)


def split_corpus(corpus, fraction_train=0.9, seed=42) -> DatasetSplit:
    """Stratified shuffled split.

    Each class is permuted with its own derived stream and the first
    ``round(fraction * n_class)`` members go to training. Both parts keep
    ascending corpus order.
    """
    if not 0 < fraction_train < 1:
        raise ValueError(f"fraction_train must lie in (0, 1), got {fraction_train}")
    labels = np.array([s.label for s in corpus], dtype=np.int64)
    train_idx, val_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise DataError(f"class {cls} has {len(members)} member(s); stratification needs at least 2")
        rng = Xoshiro256pp.from_keys(seed, STREAM_SPLIT, cls)
        perm = members[rng.permutation(len(members))]
        n_train = int(round(fraction_train * len(members)))
        n_train = min(max(n_train, 1), len(members) - 1)
        train_idx.append(perm[:n_train])
        val_idx.append(perm[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    val_idx = np.sort(np.concatenate(val_idx))
    return DatasetSplit(
        train=[corpus[i] for i in train_idx],
        validation=[corpus[i] for i in val_idx],
        seed=seed,
        train_index=train_idx,
        validation_index=val_idx,
    )


def make_batches(sequences, batch_size: int, seed=42, epoch=0):
    """Shuffle with a permutation keyed on (seed, epoch) and cut into batches.

    The final partial batch is kept.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if len(sequences) == 0:
        return []
    tokens, labels = stack(sequences)
    perm = Xoshiro256pp.from_keys(seed, STREAM_SHUFFLE, epoch).permutation(len(sequences))
    return [
        (tokens[perm[i:i + batch_size]], labels[perm[i:i + batch_size]])
        for i in range(0, len(sequences), batch_size)
    ]


@dataclass
class SyntheticSpec:
    count: int = 2000
    length: int = 200
    motif_class0: str = "GCGCGCGC"
    motif_class1: str = "ATATATAT"
    plant_probability: float = 1.0
    position_mode: str = "uniform"
    fixed_position: int = 0
    seed: int = 42

    def validate(self):
        for name in ("motif_class0", "motif_class1"):
            motif = getattr(self, name)
            bad = [c for c in motif.upper() if c not in "ACGT"]
            if bad:
                raise DataError(f"{name} contains non-ACGT character {bad[0]!r}")
            if not motif:
                raise DataError(f"{name} is empty")
            if len(motif) > self.length:
                raise DataError(f"{name} is longer than the sequence length {self.length}")
        if not 0 < self.plant_probability <= 1:
            raise DataError("plant_probability must lie in (0, 1]")
        if self.position_mode not in ("uniform", "fixed"):
            raise DataError(f"position_mode must be 'uniform' or 'fixed', got {self.position_mode!r}")
        if self.position_mode == "fixed":
            longest = max(len(self.motif_class0), len(self.motif_class1))
            if not 0 <= self.fixed_position <= self.length - longest:
                raise DataError("fixed_position places the motif outside the sequence")
        if self.count < 0:
            raise DataError("count must be nonnegative")


@dataclass
class PlantedSequence:
    sequence: EncodedSequence
    motif_start: int = -1
    motif_end: int = -1  # exclusive; -1 when nothing was planted

    @property
    def planted(self):
        return self.motif_start >= 0


def generate_synthetic(spec: SyntheticSpec) -> list[PlantedSequence]:
    """Uniform background with a class-specific motif planted at a recorded span.

    Labels alternate 0, 1, 0, 1, ... so an even count is exactly balanced.
    Per sequence the draws are: L background tokens, then (if
    plant_probability < 1) one uniform for the plant decision, then (in
    uniform mode) the start position via ``below(L - len(motif) + 1)``.
    """
    spec.validate()
    rng = Xoshiro256pp.from_keys(spec.seed, STREAM_SYNTH)
    motifs = [encode_sequence(m, len(m)) for m in (spec.motif_class0, spec.motif_class1)]
    out = []
    for i in range(spec.count):
        label = i % 2
        tokens = rng.nucleotides(spec.length)
        plant = spec.plant_probability >= 1 or rng.random() < spec.plant_probability
        start = end = -1
        if plant:
            motif = motifs[label]
            if spec.position_mode == "fixed":
                start = spec.fixed_position
            else:
                start = rng.below(spec.length - len(motif) + 1)
            end = start + len(motif)
            tokens[start:end] = motif
        out.append(PlantedSequence(EncodedSequence(tokens, label), start, end))
    return out


def write_ground_truth(path, planted) -> None:
    buf = io.StringIO()
    buf.write("index,label,motif_start,motif_end\n")
    for i, item in enumerate(planted):
        buf.write(f"{i},{item.sequence.label},{item.motif_start},{item.motif_end}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="\n")


def read_ground_truth(path):
    """Array of (label, motif_start, motif_end) rows indexed by corpus position."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "label", "motif_start", "motif_end"]:
            raise ParseError("missing 'index,label,motif_start,motif_end' header", line=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([int(v) for v in row[1:]])
            except (ValueError, IndexError):
                raise ParseError(f"malformed row {row!r}", line=lineno) from None
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def check_tokens(X, length=None, vocab=5):
    """Validate and coerce classifier input to an int64 (N, L) token array.

    Accepts token arrays or iterables of nucleotide strings.
    """
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], str):
        if length is None:
            length = max(len(s) for s in X)
        return np.stack([encode_sequence(s, length) for s in X])
    arr = np.asarray(X)
    if arr.ndim != 2:
        raise DataError(f"expected a 2-d token array, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DataError("token array must hold integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= vocab):
        raise DataError(f"tokens must lie in [0, {vocab})")
    if length is not None and arr.shape[1] != length:
        raise DataError(f"expected sequences of length {length}, got {arr.shape[1]}")
    return arr
