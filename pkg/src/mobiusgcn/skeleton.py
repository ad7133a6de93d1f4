"""Skeleton topology, graph matrices and the cached Laplacian eigenbasis."""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .linalg import EigenResult, sym_eigendecompose


class TopologyError(ValueError):
    pass


class DegreeError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    root_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        self.validate()

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def validate(self):
        n = self.num_joints
        if n == 0:
            raise TopologyError("topology has no joints")
        if len(set(self.joint_names)) != n:
            raise TopologyError("duplicate joint names")
        if not 0 <= self.root_index < n:
            raise TopologyError(f"root index {self.root_index} out of range for {n} joints")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise TopologyError(f"edge ({i}, {j}) references a joint outside 0..{n - 1}")
            if i == j:
                raise TopologyError(f"self-loop at joint {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge {key}")
            seen.add(key)
        if not self._connected():
            raise TopologyError("skeleton graph is not connected")

    def _connected(self) -> bool:
        nbrs = self.neighbours()
        stack, seen = [0], {0}
        while stack:
            for k in nbrs[stack.pop()]:
                if k not in seen:
                    seen.add(k)
                    stack.append(k)
        return len(seen) == self.num_joints

    def neighbours(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return nbrs

    def parents(self) -> list[int]:
        """Breadth-first parent of every joint, rooted at ``root_index`` (root -> -1)."""
        parent = [-2] * self.num_joints
        parent[self.root_index] = -1
        queue = [self.root_index]
        nbrs = self.neighbours()
        for node in queue:
            for k in sorted(nbrs[node]):
                if parent[k] == -2:
                    parent[k] = node
                    queue.append(k)
        return parent

    def kinematic_order(self) -> list[int]:
        """Joints in breadth-first order from the root; parents precede children."""
        parent = self.parents()
        order = [self.root_index]
        for node in order:
            order.extend(k for k in range(self.num_joints) if parent[k] == node)
        return order

    def dumps(self) -> str:
        lines = [
            f"root = {self.joint_names[self.root_index]}",
            "joint_names = " + ", ".join(self.joint_names),
            "edges:",
        ]
        lines += [f"{self.joint_names[i]} {self.joint_names[j]}" for i, j in self.edges]
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def permuted(self, perm) -> "SkeletonTopology":
        """Relabel so that old joint ``k`` becomes new joint ``perm[k]``."""
        perm = [int(p) for p in perm]
        names = [""] * self.num_joints
        for old, new in enumerate(perm):
            names[new] = self.joint_names[old]
        return SkeletonTopology(
            tuple(names),
            tuple((perm[i], perm[j]) for i, j in self.edges),
            perm[self.root_index],
        )


def parse_topology(text: str) -> SkeletonTopology:
    fields: dict[str, str] = {}
    edge_names: list[tuple[str, str]] = []
    in_edges = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if in_edges:
            parts = line.split()
            if len(parts) != 2:
                raise TopologyError(f"line {lineno}: expected two joint names, got {line!r}")
            edge_names.append((parts[0], parts[1]))
        elif line.rstrip(":").strip() == "edges" and line.endswith(":"):
            in_edges = True
        elif "=" in line:
            key, value = (s.strip() for s in line.split("=", 1))
            fields[key] = value
        else:
            raise TopologyError(f"line {lineno}: cannot parse {line!r}")
    for key in ("joint_names", "root"):
        if key not in fields:
            raise TopologyError(f"missing field {key!r}")
    names = [n.strip() for n in fields["joint_names"].split(",") if n.strip()]
    index = {n: k for k, n in enumerate(names)}
    try:
        edges = [(index[a], index[b]) for a, b in edge_names]
        root = index[fields["root"]]
    except KeyError as exc:
        raise TopologyError(f"unknown joint name {exc.args[0]!r}") from None
    return SkeletonTopology(tuple(names), tuple(edges), root)


def load_topology(path: str | Path | None = None) -> SkeletonTopology:
    """Load a topology file; ``None`` gives the bundled 16-joint skeleton."""
    if path is None:
        text = resources.files("mobiusgcn.resources").joinpath("skeleton16.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_topology(text)


def default_topology() -> SkeletonTopology:
    return load_topology(None)


def build_adjacency(topo: SkeletonTopology) -> np.ndarray:
    n = topo.num_joints
    adj = np.zeros((n, n))
    for i, j in topo.edges:
        adj[i, j] = adj[j, i] = 1.0
    return adj


def normalized_laplacian(adj) -> np.ndarray:
    """I - D^{-1/2} A D^{-1/2}; no self-loops are added."""
    adj = np.asarray(adj, dtype=np.float64)
    deg = adj.sum(axis=1)
    isolated = np.flatnonzero(deg <= 0)
    if isolated.size:
        raise DegreeError(f"isolated vertex {int(isolated[0])}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(len(deg)) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]
    return 0.5 * (lap + lap.T)


@dataclass(frozen=True)
class SpectralDecomposition:
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return len(self.eigenvalues)


_cache: dict[str, SpectralDecomposition] = {}
_cache_lock = threading.Lock()


def decompose(topo: SkeletonTopology) -> SpectralDecomposition:
    """Eigenbasis of the normalized Laplacian, computed once per topology hash."""
    key = topo.hash()
    with _cache_lock:
        hit = _cache.get(key)
        if hit is not None:
            return hit
        lap = normalized_laplacian(build_adjacency(topo))
        eig: EigenResult = sym_eigendecompose(lap)
        for arr in (lap, eig.eigenvalues, eig.eigenvectors):
            arr.setflags(write=False)
        dec = SpectralDecomposition(lap, eig.eigenvalues, eig.eigenvectors)
        _cache[key] = dec
        return dec
