"""Dense rank-4 tensors with reverse-mode automatic differentiation.

The value type of the whole library is a (batch, channel, height, width)
float array.  Operations on tensors (see :mod:`apcnn.ops`) record a
define-by-run graph; :func:`backward` walks it in reverse topological
order and accumulates gradients into every reachable tensor that
requires them.  The graph is rebuilt on every forward pass.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A rank-4 float array plus an optional gradient buffer.

    ``data`` is float32 by default; float64 is supported so that
    gradient checks can run the whole engine in double precision.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are rank-4 (N,C,H,W); got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.parents = parents
        self.op = op
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A leaf copy sharing this tensor's values but not its graph."""
        return Tensor(self.data.copy(), op="leaf")

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        from .ops import broadcast_add

        return broadcast_add(self, other)

    def __mul__(self, other):
        from .ops import ewise_mul

        return ewise_mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op!r})"


def as_tensor4(x, dtype=None) -> Tensor:
    """Coerce arrays (rank <= 4, trailing dims padded with 1) to a Tensor."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Parameter):
        return x.tensor
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    if arr.ndim > 4:
        raise ShapeError(f"cannot coerce rank-{arr.ndim} array to a rank-4 tensor")
    arr = arr.reshape(arr.shape + (1,) * (4 - arr.ndim))
    return Tensor(arr)


class Parameter:
    """A trainable tensor with a stable unique identifier.

    Modules that share a parameter hold the same ``Parameter`` object, so
    both observe one buffer and one id.
    """

    __slots__ = ("id", "tensor", "velocity")

    def __init__(self, pid: str, data):
        self.id = pid
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = True
        self.tensor = t
        self.velocity: Optional[np.ndarray] = None  # SGD momentum buffer

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.id!r}, shape={self.tensor.shape})"


class Rng:
    """Deterministic random source: a seed driving a counter-based Philox stream.

    The same seed plus the same call sequence yields bit-identical draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype)

    def uniform(self) -> float:
        return float(self._gen.random())

    def integers(self, n: int) -> int:
        return int(self._gen.integers(n))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def derive(self, tag: int) -> "Rng":
        """An independent substream, reproducible from (seed, tag)."""
        return Rng(np.random.SeedSequence([self.seed, int(tag)]).generate_state(1)[0])


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss.

    Gradients of this pass are accumulated (+=) into ``.grad`` of every
    reachable tensor with ``requires_grad``; repeated calls without
    zeroing therefore accumulate, and unreachable grads are untouched.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss; got shape {loss.shape}")
    order = _toposort(loss)
    # Per-pass gradient map so that calling backward twice on one graph
    # accumulates exactly one extra copy into .grad.
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    for node in order:
        g = grads.get(id(node))
        if g is None or not node.requires_grad:
            continue
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad += g


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Create a graph node. ``backward_fn(g)`` yields (parent, parent_grad) pairs."""
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents), parents=tuple(parents), op=op)
    if out.requires_grad:
        out._backward = backward_fn
    return out


def first_nonfinite(root: Tensor) -> Optional[Tensor]:
    """Earliest tensor in the graph below ``root`` holding a NaN/Inf, if any.

    "Earliest" means all of its parents are finite; used for training
    abort diagnostics.
    """
    for node in _toposort(root):
        if not np.all(np.isfinite(node.data)):
            if all(np.all(np.isfinite(p.data)) for p in node.parents):
                return node
    return None


def collect_ids(params: Iterable[Parameter]) -> list[str]:
    """Parameter ids, verifying uniqueness."""
    ids = [p.id for p in params]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate parameter ids: {dupes}")
    return ids
