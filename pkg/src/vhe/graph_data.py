"""Attributed-network loading, edge splits and training-pair sampling."""
from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

PAD = "<pad>"
UNK = "<unk>"


class DataError(ValueError):
    pass


class Edge(enum.IntEnum):
    ABSENT = 0
    PRESENT = 1
    UNKNOWN = -1


@dataclass
class Vocabulary:
    tokens: list[str]
    min_count: int = 1
    index: dict[str, int] = field(init=False)

    pad_id = 0
    unk_id = 1

    def __post_init__(self):
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @classmethod
    def build(cls, docs: list[list[str]], min_count: int = 1) -> "Vocabulary":
        counts = Counter(t for doc in docs for t in doc)
        words = sorted(t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK))
        return cls([PAD, UNK] + words, min_count)

    def encode(self, words: list[str], max_len: int) -> tuple[np.ndarray, int]:
        ids = [self.index.get(w, self.unk_id) for w in words[:max_len]]
        out = np.full(max_len, self.pad_id, dtype=np.int64)
        out[: len(ids)] = ids
        return out, len(ids)

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids if i != self.pad_id]


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class Network:
    """Undirected attributed network. ``edges`` holds (i, j) with i < j."""

    n_vertices: int
    edges: set
    tokens: np.ndarray  # (N, L) int64, padded with pad id 0
    lengths: np.ndarray  # (N,) true lengths
    labels: np.ndarray | None = None
    self_loops_dropped: int = 0

    @property
    def max_len(self) -> int:
        return self.tokens.shape[1]

    @property
    def masks(self) -> np.ndarray:
        return np.arange(self.max_len)[None, :] < self.lengths[:, None]

    @property
    def sparsity(self) -> float:
        n = self.n_vertices
        return len(self.edges) / (n * (n - 1) / 2)

    def edge_array(self) -> np.ndarray:
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(self.edges), dtype=np.int64)

    def subnetwork(self, keep: np.ndarray) -> tuple["Network", np.ndarray]:
        """Induced subgraph on ``keep`` (sorted ids). Returns it and the old->new id map."""
        keep = np.sort(np.asarray(keep))
        remap = -np.ones(self.n_vertices, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        edges = {
            (int(remap[i]), int(remap[j]))
            for i, j in self.edges
            if remap[i] >= 0 and remap[j] >= 0
        }
        labels = None if self.labels is None else self.labels[keep]
        sub = Network(len(keep), edges, self.tokens[keep], self.lengths[keep], labels)
        return sub, remap


def canonical(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                yield lineno, line.rstrip("\n")


def load_network(
    edge_path,
    text_path,
    label_path=None,
    max_len: int = 128,
    min_count: int = 1,
) -> tuple[Network, Vocabulary]:
    """Read the edge / text / label files into a :class:`Network`.

    Tokens are lowercased and whitespace split. Words seen fewer than
    ``min_count`` times map to ``<unk>``. Reversed and duplicate edges collapse
    to one; self-loops are dropped and counted in the log.
    """
    for p in (edge_path, text_path, label_path):
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")

    docs: dict[int, list[str]] = {}
    for lineno, line in _read_lines(text_path):
        key, sep, text = line.partition("\t")
        try:
            vid = int(key)
        except ValueError:
            raise DataError(f"{text_path}:{lineno}: cannot parse vertex id from {line!r}") from None
        if not sep or vid < 0:
            raise DataError(f"{text_path}:{lineno}: expected 'id<TAB>text', got {line!r}")
        docs[vid] = tokenize(text)

    edges = set()
    self_loops = 0
    for lineno, line in _read_lines(edge_path):
        parts = line.split()
        try:
            i, j = (int(x) for x in parts)
        except ValueError:
            raise DataError(f"{edge_path}:{lineno}: expected 'i j', got {line!r}") from None
        if i < 0 or j < 0:
            raise DataError(f"{edge_path}:{lineno}: negative vertex id in {line!r}")
        for v in (i, j):
            if v not in docs:
                raise DataError(f"vertex {v} (edge file line {lineno}) has no text line")
        if i == j:
            self_loops += 1
            continue
        edges.add(canonical(i, j))
    if self_loops:
        log.warning("dropped %d self-loop(s) from %s", self_loops, edge_path)

    n = max(docs) + 1 if docs else 0
    vocab = Vocabulary.build(list(docs.values()), min_count)
    tokens = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for vid, words in docs.items():
        tokens[vid], lengths[vid] = vocab.encode(words, max_len)

    labels = None
    if label_path is not None:
        labels = -np.ones(n, dtype=np.int64)
        for lineno, line in _read_lines(label_path):
            parts = line.split("\t")
            try:
                vid, cls = int(parts[0]), int(parts[1])
            except (ValueError, IndexError):
                raise DataError(f"{label_path}:{lineno}: expected 'id<TAB>class', got {line!r}") from None
            if not 0 <= vid < n:
                raise DataError(f"{label_path}:{lineno}: vertex {vid} out of range")
            labels[vid] = cls
    return Network(n, edges, tokens, lengths, labels, self_loops), vocab


def write_network(net: Network, vocab: Vocabulary, prefix) -> dict[str, Path]:
    """Write ``prefix.edges``, ``prefix.texts`` and (if labelled) ``prefix.labels``."""
    prefix = Path(prefix)
    paths = {"edges": prefix.with_suffix(".edges"), "texts": prefix.with_suffix(".texts")}
    with open(paths["edges"], "w") as fh:
        for i, j in sorted(net.edges):
            fh.write(f"{i} {j}\n")
    with open(paths["texts"], "w") as fh:
        for v in range(net.n_vertices):
            words = vocab.decode(net.tokens[v, : net.lengths[v]])
            fh.write(f"{v}\t{' '.join(words)}\n")
    if net.labels is not None:
        paths["labels"] = prefix.with_suffix(".labels")
        with open(paths["labels"], "w") as fh:
            for v, c in enumerate(net.labels):
                fh.write(f"{v}\t{int(c)}\n")
    return paths


def write_word_vectors(vocab: Vocabulary, vectors: np.ndarray, path) -> None:
    """One ``word<TAB>v1 v2 ...`` line per vocabulary entry (pad and unk included)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[0] != len(vocab):
        raise ValueError(f"{vectors.shape[0]} vectors for a vocabulary of {len(vocab)}")
    with open(path, "w") as fh:
        for word, row in zip(vocab.tokens, vectors):
            fh.write(word + "\t" + " ".join(f"{x:.17g}" for x in row) + "\n")


def read_word_vectors(path) -> dict[str, np.ndarray]:
    """Read ``word v1 v2 ...`` lines (any whitespace separates the fields)."""
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")
    out = {}
    dim = None
    for lineno, line in _read_lines(path):
        word, *rest = line.split()
        try:
            row = np.array([float(x) for x in rest])
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse vector for {word!r}") from None
        if row.size == 0:
            raise DataError(f"{path}:{lineno}: expected 'word v1 v2 ...', got {line!r}")
        if dim is not None and row.size != dim:
            raise DataError(f"{path}:{lineno}: vector has {row.size} values, earlier ones {dim}")
        dim = row.size
        out[word] = row
    return out


def vector_table(vocab: Vocabulary, vectors: dict, d_w: int, emb_init: float, rng) -> np.ndarray:
    """Word-embedding table for ``vocab``: known words take their vector, the
    rest are drawn uniformly from [-emb_init, emb_init]."""
    table = rng.uniform(-emb_init, emb_init, size=(len(vocab), d_w))
    for word, i in vocab.index.items():
        v = vectors.get(word)
        if v is None:
            continue
        if v.size != d_w:
            raise DataError(f"word vector for {word!r} has {v.size} values, d_w is {d_w}")
        table[i] = v
    return table


@dataclass
class EdgeSplit:
    train_pos: np.ndarray  # (E_train, 2)
    test_pos: np.ndarray  # (E_test, 2)
    n_vertices: int
    seed: int
    ratio: float

    def train_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.train_pos}


def split_edges(network: Network, ratio: float, seed: int) -> EdgeSplit:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    edges = network.edge_array()
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(edges))
    n_train = int(round(ratio * len(edges)))
    train = edges[np.sort(perm[:n_train])]
    test = edges[np.sort(perm[n_train:])]
    return EdgeSplit(train.reshape(-1, 2), test.reshape(-1, 2), network.n_vertices, seed, ratio)


@dataclass(frozen=True)
class PairObservation:
    i: int
    j: int
    w: Edge

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError(f"self pair ({self.i}, {self.j})")


def sample_non_edge(n: int, exclude: set, rng, max_tries: int = 1000) -> tuple[int, int]:
    for _ in range(max_tries):
        i, j = rng.integers(0, n, size=2)
        if i == j:
            continue
        pair = canonical(int(i), int(j))
        if pair not in exclude:
            return pair
    raise RuntimeError(f"no non-edge found after {max_tries} draws; network too dense")


def sample_pair_batch(
    split: EdgeSplit,
    batch_size: int,
    neg_per_pos: int,
    alpha: float,
    rng: np.random.Generator,
    positives: np.ndarray | None = None,
    train_set: set | None = None,
) -> list[PairObservation]:
    """Training observations for one step.

    ``batch_size`` positives are drawn from the training edges (or taken from
    ``positives``); each turns Unknown with probability ``alpha``. Every positive
    brings ``neg_per_pos`` uniformly drawn pairs that are not training edges,
    labelled Absent.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if neg_per_pos < 0:
        raise ValueError("neg_per_pos must be non-negative")
    if train_set is None:
        train_set = split.train_set()
    if positives is None:
        n_train = len(split.train_pos)
        idx = rng.choice(n_train, size=batch_size, replace=batch_size > n_train)
        positives = split.train_pos[idx]
    dropped = rng.random(len(positives)) < alpha
    obs = []
    for (i, j), drop in zip(positives, dropped):
        obs.append(PairObservation(int(i), int(j), Edge.UNKNOWN if drop else Edge.PRESENT))
        for _ in range(neg_per_pos):
            a, b = sample_non_edge(split.n_vertices, train_set, rng)
            obs.append(PairObservation(a, b, Edge.ABSENT))
    return obs
