"""Dense-matrix numeric kernel with reverse-mode gradients.

Everything learnable in the model runs through the `Node` type defined
here: a 2-D float64 value plus a gradient buffer and a vector-Jacobian
closure.  `backward` replays the recorded graph in reverse topological
order, accumulating gradients additively across uses.  The module also
provides a deterministic splitmix64 PRNG, a named-tensor parameter
store with a versioned binary checkpoint format, and `grad_check`, the
central-difference harness used throughout the test suite.

All arrays are row-major float64.  There is no broadcasting magic
beyond what numpy allows for equal-or-1 dimensions; shape mismatches
raise `ShapeError` naming both shapes.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, NumericError, ShapeError

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Deterministic PRNG
# ---------------------------------------------------------------------------


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash, used to derive per-tensor seeds from names."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class SplitMix64:
    """Tiny 64-bit PRNG; identical streams on every platform."""

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        # 53 random mantissa bits -> double in [0, 1)
        u = self.next_u64() >> 11
        return lo + (hi - lo) * (u * (1.0 / (1 << 53)))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("below() needs n >= 1")
        limit = _MASK64 - (_MASK64 % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items: Sequence):
        return items[self.below(len(items))]


def seeded(master_seed: int, name: str) -> SplitMix64:
    """Derive an independent stream for `name` from the master seed."""
    return SplitMix64((master_seed & _MASK64) ^ fnv1a64(name))


# ---------------------------------------------------------------------------
# Computation graph
# ---------------------------------------------------------------------------


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


class Node:
    """One value in the computation graph.

    `value` and `grad` always share a shape; `grad` starts at zero and
    is filled by `backward`.  Leaf nodes have no parents and no vjp.
    """

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value: np.ndarray, parents: tuple = (), vjp: Callable | None = None):
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape  # type: ignore[return-value]

    # Arithmetic sugar; python numbers become 1x1 constants.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Node:
    """Leaf node that never receives a meaningful gradient."""
    return Node(_as_matrix(value))


def _wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    return constant(np.array([[float(x)]]))


def backward(root: Node) -> None:
    """Populate gradients of every node reachable from `root`.

    `root` must be 1x1 (a scalar loss).  Gradients accumulate
    additively, so a node used twice receives the sum of both paths.
    """
    if root.value.shape != (1, 1):
        raise ShapeError(f"backward() needs a 1x1 scalar root, got {root.value.shape}")
    # Iterative post-order walk; recursion would overflow on long tapes.
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    root.grad[...] = 1.0
    for node in reversed(order):
        if node.vjp is not None:
            node.vjp(node.grad)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and out.shape[0] > 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] > 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
    out = Node(a.value @ b.value, (a, b))

    def vjp(g: np.ndarray) -> None:
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out.vjp = vjp
    return out


def add(a: Node, b: Node) -> Node:
    if not _broadcastable(a.value.shape, b.value.shape):
        raise ShapeError(f"add: {a.value.shape} + {b.value.shape}")
    out = Node(a.value + b.value, (a, b))

    def vjp(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g, a.value.shape)
        b.grad += _unbroadcast(g, b.value.shape)

    out.vjp = vjp
    return out


def hadamard(a: Node, b: Node) -> Node:
    if not _broadcastable(a.value.shape, b.value.shape):
        raise ShapeError(f"hadamard: {a.value.shape} * {b.value.shape}")
    out = Node(a.value * b.value, (a, b))

    def vjp(g: np.ndarray) -> None:
        a.grad += _unbroadcast(g * b.value, a.value.shape)
        b.grad += _unbroadcast(g * a.value, b.value.shape)

    out.vjp = vjp
    return out


def scale(a: Node, c: float) -> Node:
    out = Node(a.value * c, (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += g * c

    out.vjp = vjp
    return out


def concat_cols(*nodes: Node) -> Node:
    rows = {n.value.shape[0] for n in nodes}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ, {[n.value.shape for n in nodes]}")
    out = Node(np.concatenate([n.value for n in nodes], axis=1), tuple(nodes))
    widths = [n.value.shape[1] for n in nodes]

    def vjp(g: np.ndarray) -> None:
        at = 0
        for node, w in zip(nodes, widths):
            node.grad += g[:, at : at + w]
            at += w

    out.vjp = vjp
    return out


def concat_rows(*nodes: Node) -> Node:
    cols = {n.value.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ, {[n.value.shape for n in nodes]}")
    out = Node(np.concatenate([n.value for n in nodes], axis=0), tuple(nodes))
    heights = [n.value.shape[0] for n in nodes]

    def vjp(g: np.ndarray) -> None:
        at = 0
        for node, h in zip(nodes, heights):
            node.grad += g[at : at + h, :]
            at += h

    out.vjp = vjp
    return out


def transpose(a: Node) -> Node:
    out = Node(a.value.T.copy(), (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += g.T

    out.vjp = vjp
    return out


def sigmoid(a: Node) -> Node:
    v = a.value
    # Split by sign so exp never overflows.
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    out = Node(s, (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += g * s * (1.0 - s)

    out.vjp = vjp
    return out


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    out = Node(t, (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += g * (1.0 - t * t)

    out.vjp = vjp
    return out


def row_softmax(a: Node) -> Node:
    v = a.value
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Node(s, (a,))

    def vjp(g: np.ndarray) -> None:
        inner = (g * s).sum(axis=1, keepdims=True)
        a.grad += s * (g - inner)

    out.vjp = vjp
    return out


def mean_rows(a: Node) -> Node:
    n = a.value.shape[0]
    if n == 0:
        raise ShapeError(f"mean_rows of empty matrix {a.value.shape}")
    out = Node(a.value.mean(axis=0, keepdims=True), (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += np.repeat(g, n, axis=0) / n

    out.vjp = vjp
    return out


def masked_fill(a: Node, keep, fill: float) -> Node:
    """Keep entries where `keep` is true, overwrite the rest with `fill`.

    `keep` is a boolean array broadcastable to the operand's shape; no
    gradient flows through filled positions.
    """
    keep_arr = np.broadcast_to(np.asarray(keep, dtype=bool), a.value.shape)
    out = Node(np.where(keep_arr, a.value, fill), (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += np.where(keep_arr, g, 0.0)

    out.vjp = vjp
    return out


def log(a: Node) -> Node:
    if np.any(a.value <= 0):
        raise NumericError("log of a non-positive value")
    out = Node(np.log(a.value), (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += g / a.value

    out.vjp = vjp
    return out


def clip(a: Node, lo: float, hi: float) -> Node:
    inside = (a.value >= lo) & (a.value <= hi)
    out = Node(np.clip(a.value, lo, hi), (a,))

    def vjp(g: np.ndarray) -> None:
        a.grad += np.where(inside, g, 0.0)

    out.vjp = vjp
    return out


def rows(table: Node, idx) -> Node:
    """Gather rows of `table`; the backward pass scatter-adds into them."""
    index = np.asarray(idx, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"rows: index must be 1-D, got shape {index.shape}")
    out = Node(table.value[index, :], (table,))

    def vjp(g: np.ndarray) -> None:
        np.add.at(table.grad, index, g)

    out.vjp = vjp
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def glorot_limit(rows_: int, cols_: int) -> float:
    return float(np.sqrt(6.0 / (rows_ + cols_)))


def _uniform_matrix(rng: SplitMix64, rows_: int, cols_: int, lo: float, hi: float) -> np.ndarray:
    flat = np.empty(rows_ * cols_, dtype=np.float64)
    for i in range(flat.size):
        flat[i] = rng.uniform(lo, hi)
    return flat.reshape(rows_, cols_)


class ParamStore:
    """Named float64 tensors with deterministic, order-independent init.

    Each tensor's initializer stream is seeded from (master seed, name),
    so adding or removing unrelated tensors never changes the values of
    the ones that remain.
    """

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed
        self._tensors: dict[str, np.ndarray] = {}

    def names(self) -> list[str]:
        return list(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._tensors[name] = _as_matrix(value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self._tensors:
            raise ValueError(f"parameter {name!r} already exists")
        self._tensors[name] = _as_matrix(np.array(value, dtype=np.float64))
        return self._tensors[name]

    def add_glorot(self, name: str, rows_: int, cols_: int) -> np.ndarray:
        a = glorot_limit(rows_, cols_)
        return self.add(name, _uniform_matrix(seeded(self.seed, name), rows_, cols_, -a, a))

    def add_uniform(self, name: str, rows_: int, cols_: int, lo: float, hi: float) -> np.ndarray:
        return self.add(name, _uniform_matrix(seeded(self.seed, name), rows_, cols_, lo, hi))

    def add_zeros(self, name: str, rows_: int, cols_: int) -> np.ndarray:
        return self.add(name, np.zeros((rows_, cols_)))

    def copy(self) -> "ParamStore":
        dup = ParamStore(self.seed)
        for name, arr in self._tensors.items():
            dup._tensors[name] = arr.copy()
        return dup

    def total_size(self) -> int:
        return sum(arr.size for arr in self._tensors.values())

    def shapes(self) -> dict[str, tuple[int, int]]:
        return {name: arr.shape for name, arr in self._tensors.items()}


class ParamLeaves:
    """One forward pass's view of a store: at most one leaf per tensor."""

    def __init__(self, store: ParamStore) -> None:
        self.store = store
        self._nodes: dict[str, Node] = {}

    def __getitem__(self, name: str) -> Node:
        node = self._nodes.get(name)
        if node is None:
            node = Node(self.store[name])
            self._nodes[name] = node
        return node

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients for every tensor, zero when the tensor went unused."""
        out = {}
        for name in self.store.names():
            node = self._nodes.get(name)
            out[name] = node.grad if node is not None else np.zeros_like(self.store[name])
        return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"GNCKPT1\n"


def save_checkpoint(store: ParamStore, path) -> None:
    """Write tensors to a versioned binary container (sorted by name)."""
    names = sorted(store.names())
    manifest = {
        "version": 1,
        "seed": store.seed,
        "tensors": [
            {"name": n, "rows": store[n].shape[0], "cols": store[n].shape[1]} for n in names
        ],
    }
    header = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for n in names:
            fh.write(np.ascontiguousarray(store[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_CKPT_MAGIC):
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    at = len(_CKPT_MAGIC)
    header_len = int.from_bytes(blob[at : at + 8], "little")
    at += 8
    try:
        manifest = json.loads(blob[at : at + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint manifest ({exc})") from exc
    at += header_len
    if manifest.get("version") != 1:
        raise DataError(f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    store = ParamStore(int(manifest.get("seed", 0)))
    for entry in manifest["tensors"]:
        r, c = int(entry["rows"]), int(entry["cols"])
        nbytes = r * c * 8
        if at + nbytes > len(blob):
            raise DataError(f"{path}: checkpoint truncated at tensor {entry['name']!r}")
        arr = np.frombuffer(blob[at : at + nbytes], dtype="<f8").reshape(r, c).copy()
        store.add(entry["name"], arr)
        at += nbytes
    if at != len(blob):
        raise DataError(f"{path}: {len(blob) - at} trailing bytes after tensor data")
    return store


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    build_loss: Callable[[ParamLeaves], Node],
    store: ParamStore,
    eps: float = 1e-5,
    names: Iterable[str] | None = None,
) -> float:
    """Max relative error between analytic and central-difference grads.

    `build_loss` must construct a fresh 1x1 loss node from the leaves it
    is given; it is re-evaluated twice per parameter entry with that
    entry nudged by +/-eps.  Relative error per entry is
    |a - n| / max(1e-8, |a| + |n|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    leaves = ParamLeaves(store)
    root = build_loss(leaves)
    if not np.isfinite(root.value).all():
        raise NumericError("loss is not finite")
    backward(root)
    analytic = leaves.grads()

    def loss_value() -> float:
        node = build_loss(ParamLeaves(store))
        val = float(node.value[0, 0])
        if not np.isfinite(val):
            raise NumericError("loss is not finite during finite differencing")
        return val

    worst = 0.0
    for name in names if names is not None else store.names():
        arr = store[name]
        grad = analytic[name]
        for i in range(arr.size):
            original = arr.flat[i]
            arr.flat[i] = original + eps
            plus = loss_value()
            arr.flat[i] = original - eps
            minus = loss_value()
            arr.flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = grad.flat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
