"""Sparse binary feature space, datasets and their text format.

Samples are sets of active feature indices in ``{0, ..., d-1}``. Datasets
convert to CSR matrices for the estimators via :meth:`LabeledDataset.to_csr`.

Text format (one sample per line, ``#d=<int>`` header)::

    #d=6
    1 0:1 3:1
    0
    0.25 2:1 5:1 # round=3
"""
from __future__ import annotations

import io
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Category",
    "FeatureSpace",
    "ManipulabilityMask",
    "SparseBinaryVector",
    "Perturbation",
    "LabeledDataset",
    "SparseFormatError",
    "SynthSpec",
    "parse_sparse_file",
    "write_sparse_file",
    "read_dataset",
    "save_dataset",
    "apply_perturbation",
    "hamming_distance",
    "synth_generate",
    "signature_blocks",
]


class SparseFormatError(ValueError):
    """Malformed sparse text input; ``lineno`` is 1-based."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Category:
    name: str
    start: int
    stop: int
    add_only: bool = False

    def __contains__(self, index):
        return self.start <= index < self.stop


@dataclass(frozen=True)
class ManipulabilityMask:
    """Indices eligible for perturbation plus the add-only constraint.

    ``add_only`` is a boolean array over the full dimension.
    """

    eligible: np.ndarray
    add_only: np.ndarray

    @property
    def dimension(self):
        return int(self.add_only.shape[0])

    def __len__(self):
        return int(self.eligible.shape[0])


@dataclass(frozen=True)
class FeatureSpace:
    """A ``d``-dimensional binary space partitioned into named categories."""

    dimension: int
    categories: tuple = ()

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        cats = tuple(self.categories)
        if not cats:
            cats = self._default_categories(self.dimension)
        object.__setattr__(self, "categories", cats)
        names = [c.name for c in cats]
        if len(set(names)) != len(names):
            raise ValueError("category names must be unique")
        pos = 0
        for c in sorted(cats, key=lambda c: c.start):
            if c.start != pos or c.stop < c.start:
                raise ValueError("category ranges must partition [0, d)")
            pos = c.stop
        if pos != self.dimension:
            raise ValueError("category ranges must partition [0, d)")

    @staticmethod
    def _default_categories(d):
        half = d // 2
        if half == 0:
            return (Category("code", 0, d, add_only=False),)
        return (
            Category("manifest", 0, half, add_only=True),
            Category("code", half, d, add_only=False),
        )

    def category_of(self, index):
        for c in self.categories:
            if index in c:
                return c
        raise IndexError(f"feature index {index} outside [0, {self.dimension})")

    def add_only_mask(self):
        mask = np.zeros(self.dimension, dtype=bool)
        for c in self.categories:
            if c.add_only:
                mask[c.start:c.stop] = True
        return mask

    def manipulability(self, eligible=None):
        """Build the perturbation mask; ``eligible=None`` means every index."""
        if eligible is None:
            idx = np.arange(self.dimension, dtype=np.int64)
        else:
            idx = np.unique(np.asarray(list(eligible), dtype=np.int64))
            if idx.size and (idx[0] < 0 or idx[-1] >= self.dimension):
                raise ValueError("eligible indices outside the feature space")
        return ManipulabilityMask(eligible=idx, add_only=self.add_only_mask())

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "categories": [
                {"name": c.name, "start": c.start, "stop": c.stop, "add_only": c.add_only}
                for c in self.categories
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            int(doc["dimension"]),
            tuple(Category(**c) for c in doc.get("categories", ())),
        )


@dataclass(frozen=True)
class SparseBinaryVector:
    indices: tuple
    dimension: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        object.__setattr__(self, "indices", idx)
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        prev = -1
        for i in idx:
            if i <= prev:
                raise ValueError("indices must be strictly increasing")
            prev = i
        if idx and (idx[0] < 0 or idx[-1] >= self.dimension):
            raise ValueError(f"indices must lie in [0, {self.dimension})")

    @classmethod
    def from_indices(cls, indices, dimension):
        return cls(tuple(sorted(set(int(i) for i in indices))), dimension)

    @classmethod
    def from_dense(cls, row):
        row = np.asarray(row).ravel()
        return cls(tuple(np.flatnonzero(row).tolist()), row.shape[0])

    def __contains__(self, index):
        i = np.searchsorted(self.indices, index)
        return i < len(self.indices) and self.indices[i] == index

    def __len__(self):
        return len(self.indices)

    def to_dense(self):
        out = np.zeros(self.dimension, dtype=np.float64)
        out[list(self.indices)] = 1.0
        return out

    def to_csr(self):
        n = len(self.indices)
        return sp.csr_matrix(
            (np.ones(n), np.asarray(self.indices, dtype=np.int64), [0, n]),
            shape=(1, self.dimension),
        )


@dataclass(frozen=True)
class Perturbation:
    """Signed perturbation; ``entries`` maps index to -1 or +1, absent is 0."""

    entries: tuple
    dimension: int

    def __post_init__(self):
        items = self.entries.items() if isinstance(self.entries, dict) else self.entries
        pairs = tuple(sorted((int(i), int(v)) for i, v in items))
        for i, v in pairs:
            if v not in (-1, 1):
                raise ValueError("perturbation values must be -1 or +1")
            if not 0 <= i < self.dimension:
                raise ValueError(f"perturbation index {i} outside [0, {self.dimension})")
        if len({i for i, _ in pairs}) != len(pairs):
            raise ValueError("duplicate perturbation index")
        object.__setattr__(self, "entries", pairs)

    @classmethod
    def from_dense(cls, delta):
        delta = np.asarray(delta).ravel()
        nz = np.flatnonzero(delta)
        return cls(tuple(zip(nz.tolist(), delta[nz].astype(int).tolist())), delta.shape[0])

    def as_dict(self):
        return dict(self.entries)

    @property
    def nnz(self):
        return len(self.entries)

    def to_dense(self):
        out = np.zeros(self.dimension, dtype=np.int8)
        for i, v in self.entries:
            out[i] = v
        return out


def apply_perturbation(x, delta):
    """``clip(x + delta, 0, 1)`` on sparse operands; ``x`` is left untouched."""
    if x.dimension != delta.dimension:
        raise ValueError(
            f"dimension mismatch: vector {x.dimension}, perturbation {delta.dimension}"
        )
    active = set(x.indices)
    for i, v in delta.entries:
        if v > 0:
            active.add(i)
        else:
            active.discard(i)
    return SparseBinaryVector(tuple(sorted(active)), x.dimension)


def hamming_distance(x, other):
    if x.dimension != other.dimension:
        raise ValueError(f"dimension mismatch: {x.dimension} vs {other.dimension}")
    return len(set(x.indices).symmetric_difference(other.indices))


@dataclass(frozen=True)
class LabeledDataset:
    """Samples with real-valued labels in [0, 1] and optional round tags."""

    samples: tuple
    labels: tuple
    dimension: int
    rounds: Optional[tuple] = None

    def __post_init__(self):
        samples = tuple(self.samples)
        labels = tuple(float(v) for v in self.labels)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        if len(samples) != len(labels):
            raise ValueError("samples and labels differ in length")
        for v in labels:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"label {v} outside [0, 1]")
        for s in samples:
            if s.dimension != self.dimension:
                raise ValueError("sample dimension differs from dataset dimension")
        if self.rounds is not None:
            rounds = tuple(None if r is None else int(r) for r in self.rounds)
            if len(rounds) != len(samples):
                raise ValueError("rounds and samples differ in length")
            object.__setattr__(self, "rounds", rounds)

    def __len__(self):
        return len(self.samples)

    @property
    def is_discrete(self):
        return all(v in (0.0, 1.0) for v in self.labels)

    @property
    def y(self):
        return np.asarray(self.labels, dtype=np.float64)

    def to_csr(self):
        indptr = np.zeros(len(self.samples) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(s) for s in self.samples])
        indices = np.fromiter(
            (i for s in self.samples for i in s.indices), dtype=np.int64, count=indptr[-1]
        )
        return sp.csr_matrix(
            (np.ones(indices.shape[0]), indices, indptr),
            shape=(len(self.samples), self.dimension),
        )

    @classmethod
    def from_matrix(cls, X, y, rounds=None):
        X = sp.csr_matrix(X)
        X.eliminate_zeros()
        d = X.shape[1]
        samples = tuple(
            SparseBinaryVector(tuple(np.sort(X.indices[X.indptr[r]:X.indptr[r + 1]]).tolist()), d)
            for r in range(X.shape[0])
        )
        return cls(samples, tuple(np.asarray(y, dtype=np.float64).tolist()), d, rounds)

    def subset(self, idx):
        idx = [int(i) for i in idx]
        rounds = None if self.rounds is None else tuple(self.rounds[i] for i in idx)
        return LabeledDataset(
            tuple(self.samples[i] for i in idx),
            tuple(self.labels[i] for i in idx),
            self.dimension,
            rounds,
        )

    def with_labels(self, labels):
        return LabeledDataset(self.samples, tuple(labels), self.dimension, self.rounds)


_HEADER = re.compile(r"^#\s*d\s*=\s*(\d+)\s*$")
_ROUND = re.compile(r"^round\s*=\s*(-?\d+)$")


def parse_sparse_file(stream):
    """Parse the sparse text format from a string or text stream."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    declared = None
    rows = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _HEADER.match(line)
            if m:
                if rows or declared is not None:
                    raise SparseFormatError(lineno, "#d header must precede samples")
                declared = int(m.group(1))
            continue
        body, _, comment = line.partition("#")
        rnd = None
        if comment.strip():
            m = _ROUND.match(comment.strip())
            if not m:
                raise SparseFormatError(lineno, f"unrecognised suffix {comment.strip()!r}")
            rnd = int(m.group(1))
        tokens = body.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise SparseFormatError(lineno, f"bad label {tokens[0]!r}") from None
        if not 0.0 <= label <= 1.0:
            raise SparseFormatError(lineno, f"label {label} outside [0, 1]")
        indices = []
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            if not sep or val != "1" or not idx.isdigit():
                raise SparseFormatError(lineno, f"bad feature token {tok!r}")
            i = int(idx)
            if indices and i <= indices[-1]:
                raise SparseFormatError(lineno, "non-increasing feature indices")
            if declared is not None and i >= declared:
                raise SparseFormatError(lineno, f"index {i} >= declared d={declared}")
            indices.append(i)
        rows.append((label, indices, rnd))
    if declared is None:
        declared = 1 + max((r[1][-1] for r in rows if r[1]), default=0)
    samples = tuple(SparseBinaryVector(tuple(r[1]), declared) for r in rows)
    labels = tuple(r[0] for r in rows)
    rounds = None
    if any(r[2] is not None for r in rows):
        rounds = tuple(r[2] for r in rows)
    return LabeledDataset(samples, labels, declared, rounds)


def _format_label(v):
    if v == 0.0 or v == 1.0:
        return str(int(v))
    return repr(float(v))


def write_sparse_file(dataset, stream=None):
    """Serialize ``dataset``; returns the text when ``stream`` is None."""
    out = io.StringIO() if stream is None else stream
    out.write(f"#d={dataset.dimension}\n")
    for n, (s, v) in enumerate(zip(dataset.samples, dataset.labels)):
        parts = [_format_label(v)]
        parts.extend(f"{i}:1" for i in s.indices)
        line = " ".join(parts)
        if dataset.rounds is not None and dataset.rounds[n] is not None:
            line += f" # round={dataset.rounds[n]}"
        out.write(line + "\n")
    if stream is None:
        return out.getvalue()
    return None


def read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        return parse_sparse_file(fh)


def save_dataset(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        write_sparse_file(dataset, fh)


@dataclass(frozen=True)
class SynthSpec:
    """Planted-signature generator settings."""

    d: int = 200
    n_samples: int = 1000
    malware_ratio: float = 0.1
    n_signature_features: int = 10
    noise_rate: float = 0.02

    def validate(self):
        if self.n_signature_features < 1:
            raise ValueError("n_signature_features must be >= 1")
        if self.d < 4 * self.n_signature_features:
            raise ValueError("d must be >= 4 * n_signature_features")
        if not 0.0 < self.malware_ratio < 1.0:
            raise ValueError("malware_ratio must lie in (0, 1)")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must lie in [0, 1]")
        n_mal = int(round(self.n_samples * self.malware_ratio))
        if n_mal < 1 or n_mal >= self.n_samples:
            raise ValueError("spec yields a single-class dataset")
        return n_mal


def _signature_blocks(rng, spec):
    perm = rng.permutation(spec.d)
    s = spec.n_signature_features
    return np.sort(perm[:s]), np.sort(perm[s:2 * s])


def signature_blocks(spec, seed):
    """The (malicious, benign) signature indices ``synth_generate`` plants."""
    spec.validate()
    return _signature_blocks(np.random.default_rng(seed), spec)


def synth_generate(spec, seed):
    """Draw a labeled dataset with planted class signatures.

    Malware turns on each malicious-signature feature with probability 0.9
    and each benign-signature feature with probability 0.1; goodware the
    reverse. All other features fire at ``noise_rate`` for both classes.
    """
    n_mal = spec.validate()
    rng = np.random.default_rng(seed)
    mal_sig, ben_sig = _signature_blocks(rng, spec)
    probs = np.full((2, spec.d), spec.noise_rate)
    probs[1, mal_sig], probs[1, ben_sig] = 0.9, 0.1
    probs[0, mal_sig], probs[0, ben_sig] = 0.1, 0.9
    labels = np.zeros(spec.n_samples, dtype=np.int64)
    labels[:n_mal] = 1
    labels = labels[rng.permutation(spec.n_samples)]
    dense = rng.random((spec.n_samples, spec.d)) < probs[labels]
    samples = tuple(
        SparseBinaryVector(tuple(np.flatnonzero(row).tolist()), spec.d) for row in dense
    )
    return LabeledDataset(samples, tuple(labels.astype(float).tolist()), spec.d)
