"""Jaccard-weighted frame graphs and the evolving key-frame map."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import chain
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .trace import Frame


def jaccard(a, b) -> float:
    """Jaccard coefficient |a∩b| / |a∪b| of two feature-point sets.

    Defined as 0.0 when both sets are empty (the undefined corner case).
    """
    if not a or not b:
        return 0.0
    inter = len(a & b)
    if inter == 0:
        return 0.0
    return inter / (len(a) + len(b) - inter)


def _ekey(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class WeightedFrameGraph:
    """Undirected frame graph with Jaccard edge weights in [0, 1].

    Zero-weight edges are stored implicitly: any absent pair weighs 0.0.
    Instances are snapshots; map updates return a new graph.
    """

    nodes: dict[int, "Frame"]
    edges: dict[tuple[int, int], float]

    def __len__(self) -> int:
        return len(self.nodes)

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def weight(self, a: int, b: int) -> float:
        if a == b:
            return 0.0
        return self.edges.get(_ekey(a, b), 0.0)

    def max_incident_weight(self, frame_id: int, exclude: set[int] | None = None) -> float:
        best = 0.0
        for (u, v), w in self.edges.items():
            if u != frame_id and v != frame_id:
                continue
            other = v if u == frame_id else u
            if exclude and other in exclude:
                continue
            if w > best:
                best = w
        return best

    def adjacency(self, order: Sequence[int] | None = None) -> np.ndarray:
        """Dense symmetric weight matrix in the given node order (sorted ids by default)."""
        ids = list(order) if order is not None else self.node_ids()
        pos = {fid: i for i, fid in enumerate(ids)}
        mat = np.zeros((len(ids), len(ids)))
        for (u, v), w in self.edges.items():
            if u in pos and v in pos:
                mat[pos[u], pos[v]] = w
                mat[pos[v], pos[u]] = w
        return mat


def empty_graph() -> WeightedFrameGraph:
    return WeightedFrameGraph({}, {})


def build_graph(frames: Iterable["Frame"]) -> WeightedFrameGraph:
    """Complete Jaccard-weighted graph over the given frames (zero edges omitted)."""
    flist = list(frames)
    nodes: dict[int, "Frame"] = {}
    for f in flist:
        if f.frame_id in nodes:
            raise ValueError(f"duplicate frame_id {f.frame_id} in graph input")
        nodes[f.frame_id] = f
    edges: dict[tuple[int, int], float] = {}
    for i, f in enumerate(flist):
        for g in flist[i + 1:]:
            w = jaccard(f.fps, g.fps)
            if w > 0.0:
                edges[_ekey(f.frame_id, g.frame_id)] = w
    return WeightedFrameGraph(nodes, edges)


@dataclass(frozen=True)
class CullConfig:
    """Map maintenance policy: redundancy pruning plus a hard size cap."""

    max_map_size: int = 80
    redundancy_threshold: float = 0.92

    def validate(self) -> None:
        if self.max_map_size < 1:
            raise ValueError("max_map_size must be >= 1")
        if not 0.0 <= self.redundancy_threshold <= 1.0:
            raise ValueError("redundancy_threshold must lie in [0, 1]")


def cull(map_graph: WeightedFrameGraph, cfg: CullConfig) -> set[int]:
    """Select key frames to drop from the map.

    Two passes: (1) repeatedly drop the node with the highest incident weight
    while that weight is >= redundancy_threshold (ties broken toward the lower,
    i.e. older, frame_id); (2) drop oldest nodes until the size cap holds.
    The newest key frame is never dropped.
    """
    cfg.validate()
    if not map_graph.nodes:
        return set()
    newest = max(map_graph.nodes)
    removed: set[int] = set()

    # adjacency as dicts so incident maxima stay cheap to recompute after removals
    adj: dict[int, dict[int, float]] = {fid: {} for fid in map_graph.nodes}
    for (u, v), w in map_graph.edges.items():
        adj[u][v] = w
        adj[v][u] = w
    cur_max = {fid: (max(d.values()) if d else 0.0) for fid, d in adj.items()}

    while True:
        best_id, best_w = None, -1.0
        for fid, w in cur_max.items():
            if fid == newest or fid in removed or w < cfg.redundancy_threshold:
                continue
            if w > best_w or (w == best_w and fid < best_id):
                best_id, best_w = fid, w
        if best_id is None:
            break
        removed.add(best_id)
        for nb in adj[best_id]:
            if nb not in removed:
                cur_max[nb] = max(
                    (wt for o, wt in adj[nb].items() if o not in removed), default=0.0
                )

    survivors = sorted(fid for fid in map_graph.nodes if fid not in removed)
    excess = len(survivors) - cfg.max_map_size
    for fid in survivors:
        if excess <= 0:
            break
        if fid == newest:
            continue
        removed.add(fid)
        excess -= 1
    return removed


def update_map(
    map_graph: WeightedFrameGraph,
    new_keys: Sequence["Frame"],
    cfg: CullConfig,
) -> tuple[WeightedFrameGraph, set[int]]:
    """Insert freshly uploaded key frames, then apply the culling policy.

    Edge weights are computed for the inserted nodes only; surviving edges are
    carried over. Returns the new map snapshot and the culled frame ids.
    """
    nodes = dict(map_graph.nodes)
    edges = dict(map_graph.edges)
    for f in new_keys:
        if f.frame_id in nodes:
            raise ValueError(f"duplicate insertion of frame {f.frame_id}")
        for gid, g in nodes.items():
            w = jaccard(f.fps, g.fps)
            if w > 0.0:
                edges[_ekey(f.frame_id, gid)] = w
        nodes[f.frame_id] = f
    grown = WeightedFrameGraph(nodes, edges)
    culled = cull(grown, cfg)
    if culled:
        nodes = {fid: f for fid, f in nodes.items() if fid not in culled}
        edges = {k: w for k, w in edges.items() if k[0] not in culled and k[1] not in culled}
    return WeightedFrameGraph(nodes, edges), culled


def dump_graph_csv(graph: WeightedFrameGraph, path) -> None:
    """Debug dump: one `frame_id_a,frame_id_b,weight` row per stored edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame_id_a,frame_id_b,weight\n")
        for (u, v), w in sorted(graph.edges.items()):
            fh.write(f"{u},{v},{w!r}\n")


class SetJaccardIndex:
    """Inverted index over feature-point sets for batched Jaccard queries.

    Postings map each feature-point id to the member slots containing it, so a
    query touches only members sharing at least one feature point instead of
    intersecting against every member. Used for key-frame labeling (query
    against every prior key frame) and per-slot cross weights to the map.
    """

    def __init__(self) -> None:
        self._ids: list[int] = []
        self._sets: list[frozenset[int]] = []
        self._sizes = np.zeros(16, dtype=np.int64)
        self._postings: dict[int, list[int]] = {}
        self._pos: dict[int, int] = {}
        self._holes: list[int] = []

    def __len__(self) -> int:
        return len(self._pos)

    def __contains__(self, ext_id: int) -> bool:
        return ext_id in self._pos

    def member_ids(self) -> list[int]:
        return sorted(self._pos)

    def add(self, ext_id: int, fps: frozenset[int]) -> None:
        if ext_id in self._pos:
            raise ValueError(f"id {ext_id} already indexed")
        if self._holes:
            slot = self._holes.pop()
            self._ids[slot] = ext_id
            self._sets[slot] = fps
        else:
            slot = len(self._ids)
            self._ids.append(ext_id)
            self._sets.append(fps)
            if slot >= len(self._sizes):
                self._sizes = np.resize(self._sizes, 2 * len(self._sizes))
        self._sizes[slot] = len(fps)
        self._pos[ext_id] = slot
        for e in fps:
            self._postings.setdefault(e, []).append(slot)

    def remove(self, ext_id: int) -> None:
        slot = self._pos.pop(ext_id)
        for e in self._sets[slot]:
            lst = self._postings[e]
            lst.remove(slot)
            if not lst:
                del self._postings[e]
        self._ids[slot] = -1
        self._sets[slot] = frozenset()
        self._sizes[slot] = 0
        self._holes.append(slot)

    def _overlaps(self, fps) -> tuple[np.ndarray, np.ndarray]:
        """(member slots, jaccard weights) for members sharing >= 1 feature point."""
        chunks = [self._postings[e] for e in fps if e in self._postings]
        if not chunks:
            return np.empty(0, dtype=np.int64), np.empty(0)
        total = sum(len(c) for c in chunks)
        flat = np.fromiter(chain.from_iterable(chunks), dtype=np.int64, count=total)
        slots, inter = np.unique(flat, return_counts=True)
        union = self._sizes[slots] + len(fps) - inter
        return slots, inter / union

    def jaccard_to_all(self, fps) -> tuple[list[int], np.ndarray]:
        """(member ids, weights) of the query set against every indexed set."""
        ids = self.member_ids()
        w = np.zeros(len(ids))
        col = {fid: j for j, fid in enumerate(ids)}
        slots, sw = self._overlaps(fps)
        for slot, wv in zip(slots, sw):
            w[col[self._ids[slot]]] = wv
        return ids, w

    def max_jaccard(self, fps) -> float:
        _, w = self._overlaps(fps)
        return float(w.max()) if w.size else 0.0

    def weights_matrix(self, fps_list: Sequence[frozenset[int]]) -> tuple[np.ndarray, tuple[int, ...]]:
        """Rows = query sets, columns = indexed sets (id order of member_ids())."""
        ids = self.member_ids()
        mat = np.zeros((len(fps_list), len(ids)))
        if not ids:
            return mat, tuple(ids)
        col = {fid: j for j, fid in enumerate(ids)}
        for i, fps in enumerate(fps_list):
            slots, w = self._overlaps(fps)
            for slot, wv in zip(slots, w):
                mat[i, col[self._ids[slot]]] = wv
        return mat, tuple(ids)
