"""Random-projection-forest approximate nearest-neighbour index.

Angular metric over unit vectors: dist(a, b) = sqrt(2 - 2*<a, b>). Each tree
splits nodes by the hyperplane equidistant between two randomly chosen items;
queries walk all trees through a shared priority queue ordered by
margin-to-hyperplane, then rank the collected candidates by exact distance.
A brute-force scan over the same item store serves as the exactness oracle.

Vectors are held as float32 (the persisted width); all distance and margin
arithmetic is done in float64 from those float32 values, so a saved and
reloaded index answers queries identically.
"""

from __future__ import annotations

import heapq
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import UnitRef

MAGIC = b"TAIX"
FORMAT_VERSION = 1

DEFAULT_TREE_COUNT = 16
DEFAULT_MAX_LEAF_SIZE = 16


class AnnIndexError(Exception):
    """Base class for index failures."""


class DimensionMismatch(AnnIndexError):
    pass


class IoFailure(AnnIndexError):
    pass


class FormatVersionMismatch(AnnIndexError):
    pass


class ChecksumMismatch(AnnIndexError):
    pass


def default_search_budget(k: int) -> int:
    return max(4 * k, 64)


def angular_distance(a: np.ndarray, b: np.ndarray) -> float:
    cos = float(np.dot(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)))
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * cos)))


@dataclass(frozen=True, eq=False)
class IndexItem:
    item_id: int
    ref: UnitRef
    vector: np.ndarray  # unit-norm, any float dtype; stored as float32


@dataclass(eq=False)
class SplitNode:
    normal: np.ndarray  # float32, unit norm
    offset: float
    left: int
    right: int


@dataclass(eq=False)
class LeafNode:
    item_ids: tuple[int, ...]


@dataclass(eq=False)
class Tree:
    root: int
    nodes: list  # SplitNode | LeafNode


class AnnIndex:
    def __init__(self, dimension: int, item_ids: np.ndarray, refs: list[UnitRef],
                 vectors: np.ndarray, trees: list[Tree],
                 tree_count: int, max_leaf_size: int, seed: int):
        self.dimension = dimension
        self.metric = "angular"
        self.item_ids = item_ids            # (n,) int64
        self.refs = refs                    # parallel to item_ids
        self.vectors = vectors              # (n, d) float32
        self.trees = trees
        self.tree_count = tree_count
        self.max_leaf_size = max_leaf_size
        self.seed = seed
        self._vectors64 = vectors.astype(np.float64)
        self._pos_by_id = {int(i): pos for pos, i in enumerate(item_ids)}

    def __len__(self) -> int:
        return int(self.item_ids.shape[0])

    def ref_for(self, item_id: int) -> UnitRef:
        return self.refs[self._pos_by_id[item_id]]

    # -- queries ------------------------------------------------------------

    def query(self, q: np.ndarray, k: int, search_budget: int | None = None) -> list[tuple[int, float]]:
        """Top-k by exact angular distance over candidates gathered from all
        trees; ties broken by ascending item_id. With search_budget >= item
        count this reproduces the brute-force ranking exactly."""
        q64 = self._check_query(q)
        if k < 1:
            raise ValueError("k must be >= 1")
        budget = default_search_budget(k) if search_budget is None else search_budget
        if budget < k:
            raise ValueError("search_budget must be >= k")

        # Max-heap via negated priority; counter keeps pop order total.
        heap: list[tuple[float, int, int, int]] = []
        counter = 0
        for t, tree in enumerate(self.trees):
            heap.append((-np.inf, counter, t, tree.root))
            counter += 1
        heapq.heapify(heap)

        candidates: set[int] = set()
        while heap and len(candidates) < budget:
            neg_pri, _, t, node_id = heapq.heappop(heap)
            pri = -neg_pri
            node = self.trees[t].nodes[node_id]
            if isinstance(node, LeafNode):
                candidates.update(node.item_ids)
                continue
            margin = float(np.dot(node.normal.astype(np.float64), q64)) - node.offset
            heapq.heappush(heap, (-min(pri, +margin), counter, t, node.left))
            counter += 1
            heapq.heappush(heap, (-min(pri, -margin), counter, t, node.right))
            counter += 1

        positions = [self._pos_by_id[i] for i in candidates]
        return self._rank(positions, q64, k)

    def brute_force(self, q: np.ndarray, k: int) -> list[tuple[int, float]]:
        q64 = self._check_query(q)
        if k < 1:
            raise ValueError("k must be >= 1")
        return self._rank(list(range(len(self))), q64, k)

    def _check_query(self, q: np.ndarray) -> np.ndarray:
        q64 = np.asarray(q, dtype=np.float64)
        if q64.shape != (self.dimension,):
            raise DimensionMismatch(f"query has shape {q64.shape}, index dimension is {self.dimension}")
        return q64

    def _rank(self, positions: list[int], q64: np.ndarray, k: int) -> list[tuple[int, float]]:
        if not positions:
            return []
        pos = np.asarray(positions, dtype=np.int64)
        cos = self._vectors64[pos] @ q64
        dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * cos))
        ids = self.item_ids[pos]
        order = np.lexsort((ids, dist))[: min(k, len(positions))]
        return [(int(ids[i]), float(dist[i])) for i in order]

    # -- invariant helpers ----------------------------------------------------

    def leaf_coverage(self) -> list[set[int]]:
        """Per tree, the set of item ids reachable through its leaves."""
        coverage = []
        for tree in self.trees:
            seen: set[int] = set()
            stack = [tree.root]
            while stack:
                node = tree.nodes[stack.pop()]
                if isinstance(node, LeafNode):
                    seen.update(node.item_ids)
                else:
                    stack.extend((node.left, node.right))
            coverage.append(seen)
        return coverage


def brute_force_query(items: list[IndexItem], q: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Exact top-k by angular distance, ties by ascending item_id."""
    if not items:
        return []
    d = items[0].vector.shape[0]
    q64 = np.asarray(q, dtype=np.float64)
    if q64.shape != (d,):
        raise DimensionMismatch(f"query has shape {q64.shape}, items have dimension {d}")
    vectors = np.stack([np.asarray(it.vector, dtype=np.float32) for it in items]).astype(np.float64)
    ids = np.asarray([it.item_id for it in items], dtype=np.int64)
    cos = vectors @ q64
    dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * cos))
    order = np.lexsort((ids, dist))[: min(k, len(items))]
    return [(int(ids[i]), float(dist[i])) for i in order]


# ---------------------------------------------------------------------------
# Build
# ---------------------------------------------------------------------------

_SPLIT_ATTEMPTS = 8


def build(items: list[IndexItem], tree_count: int = DEFAULT_TREE_COUNT,
          max_leaf_size: int = DEFAULT_MAX_LEAF_SIZE, seed: int = 0) -> AnnIndex:
    """Build a forest of tree_count trees; deterministic in (items order,
    tree_count, max_leaf_size, seed). Each tree gets its own rng stream
    seeded by (seed, tree_index), so trees could be built in parallel
    without changing the result."""
    if not items:
        raise ValueError("items must be non-empty")
    if tree_count < 1:
        raise ValueError("tree_count must be >= 1")
    if max_leaf_size < 2:
        raise ValueError("max_leaf_size must be >= 2")

    dimension = int(np.asarray(items[0].vector).shape[0])
    vectors = np.empty((len(items), dimension), dtype=np.float32)
    ids = np.empty(len(items), dtype=np.int64)
    refs: list[UnitRef] = []
    seen_ids: set[int] = set()
    for pos, item in enumerate(items):
        vec = np.asarray(item.vector, dtype=np.float32)
        if vec.shape != (dimension,):
            raise DimensionMismatch(f"item {item.item_id} has shape {vec.shape}, expected ({dimension},)")
        if item.item_id < 0 or item.item_id in seen_ids:
            raise ValueError(f"item_id {item.item_id} is negative or duplicated")
        seen_ids.add(item.item_id)
        vectors[pos] = vec
        ids[pos] = item.item_id
        refs.append(item.ref)

    vectors64 = vectors.astype(np.float64)
    trees = []
    for t in range(tree_count):
        rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, t]))
        nodes: list = []
        root = _build_node(np.arange(len(items)), vectors, vectors64, ids,
                           max_leaf_size, rng, nodes)
        trees.append(Tree(root=root, nodes=nodes))
    return AnnIndex(dimension, ids, refs, vectors, trees, tree_count, max_leaf_size, seed)


def _build_node(positions: np.ndarray, vectors: np.ndarray, vectors64: np.ndarray,
                ids: np.ndarray, max_leaf_size: int, rng: np.random.Generator,
                nodes: list) -> int:
    if positions.shape[0] <= max_leaf_size:
        return _push_leaf(positions, ids, nodes)

    for _ in range(_SPLIT_ATTEMPTS):
        i, j = rng.choice(positions.shape[0], size=2, replace=False)
        a64 = vectors64[positions[i]]
        b64 = vectors64[positions[j]]
        diff = a64 - b64
        norm = float(np.linalg.norm(diff))
        if norm == 0.0:
            continue  # coincident pair; try another
        normal32 = (diff / norm).astype(np.float32)
        normal64 = normal32.astype(np.float64)
        offset = float(np.float32(np.dot(normal64, (a64 + b64) / 2.0)))

        margins = vectors64[positions] @ normal64 - offset
        side = margins > 0.0
        on_plane = margins == 0.0
        if on_plane.any():
            # Seeded coin flip per boundary point, fixed at build time.
            side = side.copy()
            side[on_plane] = rng.integers(0, 2, size=int(on_plane.sum())) == 1
        left_positions = positions[side]
        right_positions = positions[~side]
        if left_positions.shape[0] == 0 or right_positions.shape[0] == 0:
            continue  # degenerate hyperplane; try another pair

        node_id = len(nodes)
        nodes.append(SplitNode(normal=normal32, offset=offset, left=-1, right=-1))
        left_id = _build_node(left_positions, vectors, vectors64, ids, max_leaf_size, rng, nodes)
        right_id = _build_node(right_positions, vectors, vectors64, ids, max_leaf_size, rng, nodes)
        nodes[node_id].left = left_id
        nodes[node_id].right = right_id
        return node_id

    # All candidate pairs coincident or unsplittable: oversized leaf, never an error.
    return _push_leaf(positions, ids, nodes)


def _push_leaf(positions: np.ndarray, ids: np.ndarray, nodes: list) -> int:
    node_id = len(nodes)
    nodes.append(LeafNode(item_ids=tuple(int(ids[p]) for p in positions)))
    return node_id


# ---------------------------------------------------------------------------
# Persistence: TAIX binary format with trailing CRC-32
# ---------------------------------------------------------------------------


def save(index: AnnIndex, destination: str | Path) -> None:
    parts = [MAGIC,
             struct.pack("<HIQH", FORMAT_VERSION, index.dimension, len(index), index.tree_count)]
    for pos in range(len(index)):
        ref_bytes = str(index.refs[pos]).encode("utf-8")
        parts.append(struct.pack("<QH", int(index.item_ids[pos]), len(ref_bytes)))
        parts.append(ref_bytes)
        parts.append(index.vectors[pos].astype("<f4").tobytes())
    for tree in index.trees:
        parts.append(struct.pack("<QQ", len(tree.nodes), tree.root))
        for node in tree.nodes:
            if isinstance(node, SplitNode):
                parts.append(b"\x00")
                parts.append(node.normal.astype("<f4").tobytes())
                parts.append(struct.pack("<fQQ", node.offset, node.left, node.right))
            else:
                parts.append(b"\x01")
                parts.append(struct.pack("<I", len(node.item_ids)))
                parts.append(struct.pack(f"<{len(node.item_ids)}Q", *node.item_ids))
    body = b"".join(parts)
    payload = body + struct.pack("<I", zlib.crc32(body))
    try:
        Path(destination).write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write index to {destination}: {exc}") from exc


def load(source: str | Path) -> AnnIndex:
    try:
        blob = Path(source).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read index from {source}: {exc}") from exc

    if len(blob) >= 4 and blob[:4] != MAGIC:
        raise FormatVersionMismatch(f"bad magic bytes {blob[:4]!r}")
    if len(blob) < 4 + struct.calcsize("<HIQH") + 4:
        raise ChecksumMismatch("file too short to hold header and checksum")
    body, (crc_stored,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc_stored:
        raise ChecksumMismatch("CRC-32 mismatch: file is truncated or corrupt")

    off = 4
    version, dimension, item_count, tree_count = struct.unpack_from("<HIQH", body, off)
    off += struct.calcsize("<HIQH")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")

    try:
        ids = np.empty(item_count, dtype=np.int64)
        refs: list[UnitRef] = []
        vectors = np.empty((item_count, dimension), dtype=np.float32)
        vec_bytes = 4 * dimension
        for pos in range(item_count):
            item_id, ref_len = struct.unpack_from("<QH", body, off)
            off += struct.calcsize("<QH")
            refs.append(UnitRef.parse(body[off:off + ref_len].decode("utf-8")))
            off += ref_len
            vectors[pos] = np.frombuffer(body, dtype="<f4", count=dimension, offset=off)
            off += vec_bytes
            ids[pos] = item_id

        trees = []
        for _ in range(tree_count):
            node_count, root = struct.unpack_from("<QQ", body, off)
            off += struct.calcsize("<QQ")
            nodes: list = []
            for _ in range(node_count):
                tag = body[off]
                off += 1
                if tag == 0:
                    normal = np.frombuffer(body, dtype="<f4", count=dimension, offset=off).copy()
                    off += vec_bytes
                    offset_val, left, right = struct.unpack_from("<fQQ", body, off)
                    off += struct.calcsize("<fQQ")
                    nodes.append(SplitNode(normal=normal, offset=float(offset_val), left=left, right=right))
                elif tag == 1:
                    (count,) = struct.unpack_from("<I", body, off)
                    off += 4
                    leaf_ids = struct.unpack_from(f"<{count}Q", body, off)
                    off += 8 * count
                    nodes.append(LeafNode(item_ids=tuple(int(i) for i in leaf_ids)))
                else:
                    raise FormatVersionMismatch(f"unknown node tag {tag}")
            trees.append(Tree(root=root, nodes=nodes))
    except (struct.error, IndexError) as exc:
        raise ChecksumMismatch(f"index body shorter than declared: {exc}") from exc

    # Build params are not persisted; keep the declared shape, mark seed unknown.
    return AnnIndex(dimension, ids, refs, vectors, trees, tree_count,
                    max_leaf_size=0, seed=-1)


def structurally_equal(a: AnnIndex, b: AnnIndex) -> bool:
    """Same items, same vectors (bit-exact f32) and same tree structure."""
    if (a.dimension != b.dimension or len(a) != len(b) or a.tree_count != b.tree_count):
        return False
    if not np.array_equal(a.item_ids, b.item_ids) or a.refs != b.refs:
        return False
    if not np.array_equal(a.vectors, b.vectors):
        return False
    for ta, tb in zip(a.trees, b.trees):
        if ta.root != tb.root or len(ta.nodes) != len(tb.nodes):
            return False
        for na, nb in zip(ta.nodes, tb.nodes):
            if type(na) is not type(nb):
                return False
            if isinstance(na, SplitNode):
                if (not np.array_equal(na.normal, nb.normal) or na.offset != nb.offset
                        or na.left != nb.left or na.right != nb.right):
                    return False
            else:
                if na.item_ids != nb.item_ids:
                    return False
    return True
