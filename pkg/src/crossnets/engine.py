"""Dense float64 matrix engine with tape-based reverse-mode autodiff.

Everything downstream (interaction blocks, training) is expressed through
the primitives here. Matrices are plain 2-D float64 numpy arrays; a Tape
records one forward pass and replays it in exact reverse order for
gradients, so results are deterministic for fixed inputs.

The tape can carry a FlopCounter. Each primitive charges a fixed,
documented cost when a counter is attached:

    matmul / matmul_t (m.k)@(k.n)   2*m*k*n
    elementwise over n entries      n        (hadamard, add, relu, sigmoid)
    row bias over an m.n matrix     m*n
    softmax over m rows of width k  5*m*k
    layernorm over m rows, width d  5*m*d
    gated combine, m.d output       m*d      (one fused elementwise pass)
    sum_all over n entries          n
    embedding lookup / concat       0        (memory traffic, not FLOPs)

With a single-row input this reproduces the analytic per-inference
accounting in crossnets.analysis; the two are cross-checked in tests.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Matrix",
    "Param",
    "Node",
    "FlopCounter",
    "Tape",
    "as_matrix",
    "gradcheck",
    "stable_sigmoid",
    "rng_from_seed",
]

Matrix = np.ndarray  # 2-D, float64, row-major


def rng_from_seed(seed: int) -> np.random.Generator:
    """Seed a generator from any 64-bit integer (negatives wrap)."""
    return np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    """Coerce to a 2-D float64 array, optionally checking the shape."""
    a = np.ascontiguousarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got shape {a.shape}")
    return a


class Param:
    """A named trainable matrix with a persistent gradient buffer."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value) -> None:
        self.name = name
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Param({self.name!r}, shape={self.value.shape})"


class Node:
    """One value on the tape. Gradients are allocated lazily in backward."""

    __slots__ = ("value", "grad")

    def __init__(self, value: Matrix) -> None:
        self.value = value
        self.grad: Matrix | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def _accum(self, g: Matrix) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


class FlopCounter:
    """Accumulates FLOPs charged by tape primitives."""

    __slots__ = ("total",)

    def __init__(self) -> None:
        self.total = 0

    def add(self, n: int) -> None:
        self.total += int(n)


def _require_same_shape(op: str, a: Node, b: Node) -> None:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


class Tape:
    """Records one forward pass; backward() visits ops in reverse order.

    A tape is single-threaded and single-use: build the graph, call
    backward once, then discard it. Params persist across tapes.
    """

    def __init__(self, counter: FlopCounter | None = None) -> None:
        self._records: list[tuple[Node, Callable[[Matrix], None]]] = []
        self._param_nodes: dict[int, tuple[Param, Node]] = {}
        self.counter = counter
        self.relu_saw_exact_zero = False

    def _charge(self, flops: int) -> None:
        if self.counter is not None:
            self.counter.add(flops)

    def _emit(self, value: Matrix, backward: Callable[[Matrix], None] | None) -> Node:
        out = Node(value)
        if backward is not None:
            self._records.append((out, backward))
        return out

    # -- leaves ----------------------------------------------------------

    def param(self, p: Param) -> Node:
        """Leaf node bound to a Param; one node per param per tape."""
        hit = self._param_nodes.get(id(p))
        if hit is not None:
            return hit[1]
        node = Node(p.value)
        self._param_nodes[id(p)] = (p, node)
        return node

    def constant(self, value) -> Node:
        return Node(as_matrix(value))

    # -- primitives ------------------------------------------------------

    def matmul(self, a: Node, b: Node) -> Node:
        m, k = a.value.shape
        k2, n = b.value.shape
        if k != k2:
            raise ShapeError(f"matmul: inner dims differ, {a.value.shape} @ {b.value.shape}")
        self._charge(2 * m * k * n)
        out_value = a.value @ b.value

        def backward(g: Matrix) -> None:
            a._accum(g @ b.value.T)
            b._accum(a.value.T @ g)

        return self._emit(out_value, backward)

    def matmul_t(self, a: Node, b: Node) -> Node:
        """a @ b.T without materialising a transpose node."""
        m, k = a.value.shape
        n, k2 = b.value.shape
        if k != k2:
            raise ShapeError(f"matmul_t: inner dims differ, {a.value.shape} @ {b.value.shape}.T")
        self._charge(2 * m * k * n)
        out_value = a.value @ b.value.T

        def backward(g: Matrix) -> None:
            a._accum(g @ b.value)
            b._accum(g.T @ a.value)

        return self._emit(out_value, backward)

    def hadamard(self, a: Node, b: Node) -> Node:
        _require_same_shape("hadamard", a, b)
        self._charge(a.value.size)
        out_value = a.value * b.value

        def backward(g: Matrix) -> None:
            a._accum(g * b.value)
            b._accum(g * a.value)

        return self._emit(out_value, backward)

    def add(self, a: Node, b: Node) -> Node:
        _require_same_shape("add", a, b)
        self._charge(a.value.size)
        out_value = a.value + b.value

        def backward(g: Matrix) -> None:
            a._accum(g)
            b._accum(g)

        return self._emit(out_value, backward)

    def add_row_bias(self, x: Node, bias: Node) -> Node:
        """x + bias with bias a 1 x n row broadcast over rows; the only
        broadcasting the engine performs."""
        if bias.value.shape != (1, x.value.shape[1]):
            raise ShapeError(
                f"add_row_bias: bias shape {bias.value.shape} does not match "
                f"1x{x.value.shape[1]} for input {x.value.shape}"
            )
        self._charge(x.value.size)
        out_value = x.value + bias.value

        def backward(g: Matrix) -> None:
            x._accum(g)
            bias._accum(g.sum(axis=0, keepdims=True))

        return self._emit(out_value, backward)

    def relu(self, x: Node) -> Node:
        self._charge(x.value.size)
        if np.any(x.value == 0.0):
            self.relu_saw_exact_zero = True
        out_value = np.maximum(x.value, 0.0)
        mask = x.value > 0.0  # subgradient 0 at exactly 0

        def backward(g: Matrix) -> None:
            x._accum(g * mask)

        return self._emit(out_value, backward)

    def sigmoid(self, x: Node) -> Node:
        self._charge(x.value.size)
        out_value = stable_sigmoid(x.value)

        def backward(g: Matrix) -> None:
            x._accum(g * out_value * (1.0 - out_value))

        return self._emit(out_value, backward)

    def softmax_rows(self, x: Node) -> Node:
        m, k = x.value.shape
        self._charge(5 * m * k)
        shifted = x.value - x.value.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out_value = e / e.sum(axis=1, keepdims=True)

        def backward(g: Matrix) -> None:
            dot = (g * out_value).sum(axis=1, keepdims=True)
            x._accum(out_value * (g - dot))

        return self._emit(out_value, backward)

    def layernorm_rows(self, x: Node, gain: Node, bias: Node, eps: float) -> Node:
        """Per-row normalisation to zero mean / unit population variance
        (eps added inside the square root), then affine gain and bias."""
        if eps <= 0.0:
            raise ContractError(f"layernorm_rows: eps must be > 0, got {eps}")
        m, d = x.value.shape
        if gain.value.shape != (1, d) or bias.value.shape != (1, d):
            raise ShapeError(
                f"layernorm_rows: gain {gain.value.shape} / bias {bias.value.shape} "
                f"must both be 1x{d}"
            )
        self._charge(5 * m * d)
        mu = x.value.mean(axis=1, keepdims=True)
        xc = x.value - mu
        var = (xc * xc).mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out_value = xhat * gain.value + bias.value

        def backward(g: Matrix) -> None:
            bias._accum(g.sum(axis=0, keepdims=True))
            gain._accum((g * xhat).sum(axis=0, keepdims=True))
            dxhat = g * gain.value
            x._accum(
                inv
                * (
                    dxhat
                    - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
                )
            )

        return self._emit(out_value, backward)

    def concat_cols(self, parts: Sequence[Node]) -> Node:
        if not parts:
            raise ShapeError("concat_cols: empty part list")
        rows = parts[0].value.shape[0]
        for p in parts:
            if p.value.shape[0] != rows:
                raise ShapeError(
                    f"concat_cols: row counts differ, {p.value.shape[0]} vs {rows}"
                )
        out_value = np.concatenate([p.value for p in parts], axis=1)
        widths = [p.value.shape[1] for p in parts]

        def backward(g: Matrix) -> None:
            at = 0
            for p, w in zip(parts, widths):
                p._accum(g[:, at : at + w])
                at += w

        return self._emit(out_value, backward)

    def embedding_lookup(self, table: Param, ids: np.ndarray) -> Node:
        """Rows of `table` selected by integer ids; gradients scatter back
        into table.grad. Lookups are free under the FLOPs convention."""
        ids = np.asarray(ids)
        out_value = table.value[ids]

        def backward(g: Matrix) -> None:
            np.add.at(table.grad, ids, g)

        return self._emit(out_value, backward)

    def gated_combine(
        self, gates: Node, experts: Sequence[Node], residual: Node | None = None
    ) -> Node:
        """residual + sum_i gates[:, i] * experts[i], the per-instance gate
        scalar broadcast over columns. Counted as one fused elementwise
        pass over the output."""
        m, k = gates.value.shape
        if len(experts) != k:
            raise ShapeError(f"gated_combine: {k} gate columns for {len(experts)} experts")
        shape = experts[0].value.shape
        for e in experts:
            if e.value.shape != shape:
                raise ShapeError(
                    f"gated_combine: expert shapes differ, {e.value.shape} vs {shape}"
                )
        if shape[0] != m:
            raise ShapeError(f"gated_combine: gates {gates.value.shape} vs experts {shape}")
        if residual is not None and residual.value.shape != shape:
            raise ShapeError(
                f"gated_combine: residual {residual.value.shape} vs experts {shape}"
            )
        self._charge(shape[0] * shape[1])
        out_value = np.zeros(shape) if residual is None else residual.value.copy()
        for i, e in enumerate(experts):
            out_value += gates.value[:, i : i + 1] * e.value

        def backward(g: Matrix) -> None:
            if residual is not None:
                residual._accum(g)
            gate_grad = np.empty_like(gates.value)
            for i, e in enumerate(experts):
                gate_grad[:, i] = (g * e.value).sum(axis=1)
                e._accum(g * gates.value[:, i : i + 1])
            gates._accum(gate_grad)

        return self._emit(out_value, backward)

    def sum_all(self, x: Node) -> Node:
        self._charge(x.value.size)
        out_value = np.array([[x.value.sum()]])

        def backward(g: Matrix) -> None:
            x._accum(np.full_like(x.value, g[0, 0]))

        return self._emit(out_value, backward)

    def bce_with_logits(self, logits: Node, labels: np.ndarray) -> Node:
        """Mean softplus-stabilised binary cross-entropy over the batch:
        max(z,0) - z*y + log(1 + exp(-|z|))."""
        y = as_matrix(labels)
        if y.shape != logits.value.shape:
            raise ShapeError(f"bce: labels {y.shape} vs logits {logits.value.shape}")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ContractError("bce: labels must be exactly 0 or 1")
        z = logits.value
        n = z.size
        self._charge(5 * n)
        per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
        out_value = np.array([[per.sum() / n]])

        def backward(g: Matrix) -> None:
            logits._accum(g[0, 0] * (stable_sigmoid(z) - y) / n)

        return self._emit(out_value, backward)

    # -- reverse sweep ---------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(param) into every reachable Param.grad."""
        if loss.value.shape != (1, 1):
            raise ContractError(f"backward: loss must be 1x1, got {loss.value.shape}")
        loss._accum(np.ones((1, 1)))
        for node, rule in reversed(self._records):
            if node.grad is not None:
                rule(node.grad)
        for p, node in self._param_nodes.values():
            if node.grad is not None:
                p.grad += node.grad


def stable_sigmoid(x: Matrix) -> Matrix:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gradcheck(
    forward_fn: Callable[[], tuple[Tape, Node]],
    params: Sequence[Param],
    step: float = 1e-5,
) -> float:
    """Compare analytic gradients against central finite differences.

    forward_fn must rebuild the graph from scratch and return (tape, loss)
    with a 1x1 loss. Returns the worst relative error over all parameter
    entries, with denominator max(|analytic|, |numeric|, 1e-8). Entries
    whose center or perturbed passes hit an exact ReLU kink (pre-activation
    exactly 0) are excluded: the subgradient-0 convention is not the
    two-sided limit there.
    """
    if step <= 0.0:
        raise ContractError(f"gradcheck: step must be > 0, got {step}")

    tape1, loss1 = forward_fn()
    tape2, loss2 = forward_fn()
    if loss1.value[0, 0] != loss2.value[0, 0]:
        raise ContractError(
            "gradcheck: forward_fn is not deterministic "
            f"({loss1.value[0, 0]!r} != {loss2.value[0, 0]!r})"
        )

    for p in params:
        p.zero_grad()
    tape, loss = forward_fn()
    center_kink = tape.relu_saw_exact_zero
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def eval_at() -> tuple[float, bool]:
        t, out = forward_fn()
        return out.value[0, 0], t.relu_saw_exact_zero

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus, kink_plus = eval_at()
            flat[i] = orig - step
            f_minus, kink_minus = eval_at()
            flat[i] = orig
            if center_kink or kink_plus or kink_minus:
                continue
            numeric = (f_plus - f_minus) / (2.0 * step)
            an = a.reshape(-1)[i]
            err = abs(an - numeric) / max(abs(an), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return float(worst)
