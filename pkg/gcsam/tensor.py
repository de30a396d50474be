"""
Minimal reverse-mode differentiation over dense float64 tensors.

Primitives accept plain Tensors, recorded Vars or array-likes. When any
operand is a Var the operation is appended to that Var's Tape together with a
closure computing its vector-Jacobian product; otherwise the operation is
evaluated eagerly and nothing is recorded. The same loss function therefore
serves both gradient computation and gradient-free evaluation.

Nonsmooth points use a fixed subgradient: relu'(0) = 0.
"""
import hashlib
import logging
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from pydantic import BaseModel, Field

from .errors import ContractError, EvaluationError, InvalidInputError, ShapeError

logger = logging.getLogger(__name__)

__all__ = [
    "Tensor",
    "Var",
    "Tape",
    "ParamSet",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "transpose",
    "matmul",
    "bias_add",
    "relu",
    "tanh",
    "softmax_cross_entropy",
    "mse",
    "backward",
    "value_and_grad",
    "NonsmoothPoint",
    "FiniteDiffResult",
    "finite_diff_gradient",
    "max_relative_error",
]

VJP = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Tensor:
    """Immutable dense row-major float64 array."""

    __slots__ = ("_data",)

    def __init__(self, data: Union["Tensor", np.ndarray, float, int, Sequence]):
        if isinstance(data, Tensor):
            self._data = data._data
        else:
            self._data = _readonly(np.array(data, dtype=np.float64))

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # Takes ownership of a freshly computed array without copying it.
        tensor = Tensor.__new__(Tensor)
        tensor._data = _readonly(np.asarray(array, dtype=np.float64))
        return tensor

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        if self._data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self._data.reshape(()))

    def tolist(self):
        return self._data.tolist()

    def equals(self, other: "Tensor") -> bool:
        """Bitwise equality of shape and payload."""
        return self.shape == other.shape and self._data.tobytes() == other.data.tobytes()

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self._data.tolist()})"


class Var(Tensor):
    """A Tensor recorded as node `index` on `tape`."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int, array: np.ndarray):
        self._data = _readonly(np.asarray(array, dtype=np.float64))
        self.tape = tape
        self.index = index

    def __repr__(self) -> str:
        return f"Var(node={self.index}, shape={self.shape})"


class _Node(NamedTuple):
    op: str
    inputs: Tuple[int, ...]
    vjp: Optional[VJP]
    shape: Tuple[int, ...]


class Tape:
    """
    Ordered record of primitive operations from one forward evaluation.

    Nodes are appended after their inputs exist, so the record is
    topologically ordered by construction. `backward` only reads the tape:
    it may be replayed any number of times and yields identical gradients.
    """

    def __init__(self):
        self._nodes: List[_Node] = []
        self._leaves: Dict[str, int] = {}
        self._output: Optional[Var] = None

    def watch(self, name: str, value: Union[Tensor, np.ndarray, float, Sequence]) -> Var:
        """Register a named leaf whose gradient backward() will report."""
        if name in self._leaves:
            raise ContractError(f"leaf '{name}' is already tracked on this tape")
        data = value.data if isinstance(value, Tensor) else np.array(value, dtype=np.float64)
        index = len(self._nodes)
        self._nodes.append(_Node("leaf", (), None, data.shape))
        self._leaves[name] = index
        var = Var(self, index, data)
        self._output = var
        return var

    def _record(self, op: str, operands: Sequence[Tensor], value: np.ndarray, vjp: VJP) -> Var:
        inputs = tuple(x.index if isinstance(x, Var) else -1 for x in operands)
        index = len(self._nodes)
        self._nodes.append(_Node(op, inputs, vjp, value.shape))
        var = Var(self, index, value)
        self._output = var
        return var

    @property
    def output(self) -> Optional[Var]:
        """The most recently recorded node."""
        return self._output

    @property
    def leaves(self) -> List[str]:
        return list(self._leaves)

    def __len__(self) -> int:
        return len(self._nodes)


# ---------------------------------------------------------------------------
# ParamSet
# ---------------------------------------------------------------------------

class ParamSet(Mapping[str, Tensor]):
    """
    Ordered collection of named tensors with optional paired gradients.

    Optimizers act on ParamSets; gradients are themselves ParamSets with the
    same names and shapes. Instances are immutable: every helper returns a
    new ParamSet.
    """

    __slots__ = ("_values", "_grads")

    def __init__(
        self,
        values: Optional[Mapping[str, Union[Tensor, np.ndarray, float, Sequence]]] = None,
        grads: Optional[Mapping[str, Union[Tensor, np.ndarray, float, Sequence]]] = None,
    ):
        self._values: Dict[str, Tensor] = {}
        for name, value in (values or {}).items():
            if not isinstance(name, str) or not name:
                raise InvalidInputError(f"parameter names must be non-empty strings, got {name!r}")
            self._values[name] = Tensor._wrap(value.data) if isinstance(value, Tensor) else Tensor(value)
        self._grads: Dict[str, Tensor] = {}
        for name, grad in (grads or {}).items():
            if name not in self._values:
                raise ContractError(f"gradient supplied for unknown parameter '{name}'")
            tensor = Tensor._wrap(grad.data) if isinstance(grad, Tensor) else Tensor(grad)
            if tensor.shape != self._values[name].shape:
                raise ShapeError("grad", [self._values[name].shape, tensor.shape], f"parameter '{name}'")
            self._grads[name] = tensor

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamSet":
        """Build from freshly computed arrays, taking ownership without copies."""
        out = cls.__new__(cls)
        out._values = {name: Tensor._wrap(array) for name, array in arrays.items()}
        out._grads = {}
        return out

    # Mapping protocol
    def __getitem__(self, name: str) -> Tensor:
        return self._values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __repr__(self) -> str:
        inner = ", ".join(f"{name}: {tensor.shape}" for name, tensor in self._values.items())
        return f"ParamSet({{{inner}}})"

    # Gradients
    def grad(self, name: str) -> Optional[Tensor]:
        return self._grads.get(name)

    @property
    def grads(self) -> Optional["ParamSet"]:
        if not self._grads:
            return None
        return ParamSet.from_arrays({name: self._grads[name].data for name in self._values if name in self._grads})

    def with_grads(self, grads: Mapping[str, Tensor]) -> "ParamSet":
        return ParamSet(self._values, grads)

    # Structure
    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self._values.items()}

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tensor.shape for name, tensor in self._values.items()}

    @property
    def num_elements(self) -> int:
        return int(np.sum([tensor.size for tensor in self._values.values()], dtype=np.int64))

    def replace(self, name: str, value: Union[Tensor, np.ndarray, Sequence]) -> "ParamSet":
        if name not in self._values:
            raise ContractError(f"unknown parameter '{name}'")
        values = dict(self._values)
        values[name] = value if isinstance(value, Tensor) else Tensor(value)
        return ParamSet(values)

    def _check_compatible(self, other: "ParamSet") -> None:
        if list(self._values) != list(other._values):
            raise ContractError(
                f"parameter names differ: {list(self._values)} vs {list(other._values)}"
            )
        for name, tensor in self._values.items():
            if tensor.shape != other._values[name].shape:
                raise ShapeError("paramset", [tensor.shape, other._values[name].shape], f"parameter '{name}'")

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet.from_arrays({name: fn(tensor.data) for name, tensor in self._values.items()})

    def zip_with(self, other: "ParamSet", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ParamSet":
        self._check_compatible(other)
        return ParamSet.from_arrays(
            {name: fn(tensor.data, other._values[name].data) for name, tensor in self._values.items()}
        )

    # Arithmetic
    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_with(other, np.add)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_with(other, np.subtract)

    def scale(self, factor: float) -> "ParamSet":
        return self.map(lambda a: a * factor)

    def zeros_like(self) -> "ParamSet":
        return self.map(np.zeros_like)

    def dot(self, other: "ParamSet") -> float:
        self._check_compatible(other)
        return float(np.sum([np.vdot(t.data, other._values[n].data) for n, t in self._values.items()]))

    def sq_norm(self) -> float:
        return float(np.sum([np.vdot(t.data, t.data) for t in self._values.values()]))

    def norm(self) -> float:
        return float(np.sqrt(self.sq_norm()))

    def flatten(self) -> np.ndarray:
        if not self._values:
            return np.zeros(0)
        return np.concatenate([tensor.data.ravel() for tensor in self._values.values()])

    def unflatten(self, vector: np.ndarray) -> "ParamSet":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.num_elements,):
            raise ShapeError("unflatten", [vector.shape, (self.num_elements,)])
        arrays, offset = {}, 0
        for name, tensor in self._values.items():
            arrays[name] = vector[offset:offset + tensor.size].reshape(tensor.shape).copy()
            offset += tensor.size
        return ParamSet.from_arrays(arrays)

    # Checks
    def first_non_finite(self) -> Optional[str]:
        for name, tensor in self._values.items():
            if not np.all(np.isfinite(tensor.data)):
                return name
        return None

    def equals(self, other: "ParamSet") -> bool:
        """Bitwise equality of names, order, shapes and payloads."""
        if list(self._values) != list(other._values):
            return False
        return all(tensor.equals(other._values[name]) for name, tensor in self._values.items())

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, tensor in self._values.items():
            h.update(name.encode("utf-8"))
            h.update(repr(tensor.shape).encode("ascii"))
            h.update(np.ascontiguousarray(tensor.data).tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def _operand(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(operands: Sequence[Tensor]) -> Optional[Tape]:
    tape = None
    for x in operands:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ContractError("operands are recorded on different tapes")
    return tape


def _emit(op: str, operands: Sequence[Tensor], value: np.ndarray, vjp: VJP) -> Tensor:
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"{op}: non-finite output")
    tape = _tape_of(operands)
    if tape is None:
        return Tensor._wrap(value)
    return tape._record(op, operands, value, vjp)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, [a.shape, b.shape])


def add(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a, factor: float) -> Tensor:
    a = _operand(a)
    factor = float(factor)
    return _emit("scale", (a,), a.data * factor, lambda g: (g * factor,))


def sum(a) -> Tensor:  # noqa: A001 - mirrors the numpy name
    a = _operand(a)
    shape = a.shape
    return _emit("sum", (a,), np.sum(a.data), lambda g: (np.full(shape, g, dtype=np.float64),))


def transpose(a) -> Tensor:
    a = _operand(a)
    if a.ndim != 2:
        raise ShapeError("transpose", [a.shape], "rank 2 required")
    return _emit("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def matmul(a, b) -> Tensor:
    a, b = _operand(a), _operand(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", [a.shape, b.shape], "inner dimensions must agree")
    ad, bd = a.data, b.data
    return _emit("matmul", (a, b), ad @ bd, lambda g: (g @ bd.T, ad.T @ g))


def bias_add(a, b) -> Tensor:
    """Add row vector `b` to every row of the rank-2 tensor `a`."""
    a, b = _operand(a), _operand(b)
    if a.ndim != 2 or b.ndim != 1 or a.shape[1] != b.shape[0]:
        raise ShapeError("bias_add", [a.shape, b.shape])
    return _emit("bias_add", (a, b), a.data + b.data, lambda g: (g, g.sum(axis=0)))


def relu(a) -> Tensor:
    a = _operand(a)
    mask = a.data > 0
    return _emit("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = _operand(a)
    y = np.tanh(a.data)
    return _emit("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def _class_labels(labels, rows: int, classes: int) -> np.ndarray:
    raw = np.asarray(labels.data if isinstance(labels, Tensor) else labels)
    raw = raw.reshape(-1)
    if raw.shape[0] != rows:
        raise ShapeError("softmax_cross_entropy", [(rows, classes), raw.shape], "one label per row")
    if raw.dtype.kind == "f":
        if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
            raise InvalidInputError("class labels must be integers")
    elif raw.dtype.kind not in "iub":
        raise InvalidInputError(f"class labels must be integers, got dtype {raw.dtype}")
    idx = raw.astype(np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= classes):
        bad = idx[(idx < 0) | (idx >= classes)][0]
        raise InvalidInputError(f"label {bad} outside [0, {classes})")
    return idx


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Row-mean cross entropy of softmax(logits) against integer class labels."""
    logits = _operand(logits)
    original_shape = logits.shape
    if logits.ndim == 1:
        z = logits.data.reshape(1, -1)
    elif logits.ndim == 2:
        z = logits.data
    else:
        raise ShapeError("softmax_cross_entropy", [original_shape], "rank 1 or 2 logits required")
    rows, classes = z.shape
    if rows == 0 or classes == 0:
        raise ShapeError("softmax_cross_entropy", [original_shape], "empty logits")
    idx = _class_labels(labels, rows, classes)
    shifted = z - z.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows_idx = np.arange(rows)
    value = -np.mean(log_probs[rows_idx, idx])

    def vjp(g):
        delta = np.exp(log_probs)
        delta[rows_idx, idx] -= 1.0
        return ((delta * (g / rows)).reshape(original_shape),)

    return _emit("softmax_cross_entropy", (logits,), value, vjp)


def mse(pred, target) -> Tensor:
    """Mean over all elements of the squared difference."""
    pred, target = _operand(pred), _operand(target)
    _same_shape("mse", pred, target)
    diff = pred.data - target.data
    count = diff.size
    if count == 0:
        raise ShapeError("mse", [pred.shape], "empty operands")

    def vjp(g):
        gp = diff * (2.0 * g / count)
        return (gp, -gp)

    return _emit("mse", (pred, target), np.mean(diff * diff), vjp)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

def backward(tape: Tape, seed: float = 1.0, output: Optional[Var] = None) -> ParamSet:
    """
    Exact reverse-mode gradients of a scalar output with respect to every
    watched leaf, keyed by leaf name in registration order.

    `output` defaults to the most recently recorded node. The tape is not
    modified.
    """
    out = output if output is not None else tape.output
    if out is None:
        raise ContractError("backward on an empty tape")
    if out.tape is not tape:
        raise ContractError("output is not recorded on this tape")
    if out.shape != ():
        raise ContractError(f"backward needs a scalar output, got shape {out.shape}")

    nodes = tape._nodes
    grads: List[Optional[np.ndarray]] = [None] * (out.index + 1)
    grads[out.index] = np.asarray(float(seed), dtype=np.float64)
    for i in range(out.index, -1, -1):
        g = grads[i]
        node = nodes[i]
        if g is None or node.vjp is None:
            continue
        for source, part in zip(node.inputs, node.vjp(g)):
            if source < 0 or part is None:
                continue
            grads[source] = part if grads[source] is None else grads[source] + part

    result = {}
    for name, index in tape._leaves.items():
        g = grads[index] if index < len(grads) else None
        result[name] = np.zeros(nodes[index].shape) if g is None else np.array(g, dtype=np.float64)
    return ParamSet.from_arrays(result)


def value_and_grad(
    fn: Callable[[Dict[str, Var]], Tensor],
    params: ParamSet,
    seed: float = 1.0,
) -> Tuple[float, ParamSet]:
    """Evaluate `fn` on tracked copies of `params` and backpropagate."""
    tape = Tape()
    tracked = {name: tape.watch(name, tensor) for name, tensor in params.items()}
    out = fn(tracked)
    if not isinstance(out, Var):
        # The loss does not depend on any parameter.
        return _scalar(out), params.zeros_like()
    return out.item(), backward(tape, seed, output=out)


def _scalar(value) -> float:
    tensor = _operand(value)
    if tensor.shape != ():
        raise ContractError(f"loss must be a scalar, got shape {tensor.shape}")
    return tensor.item()


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------

class NonsmoothPoint(BaseModel):
    """A coordinate whose one-sided difference quotients disagree."""

    name: str
    index: List[int]
    forward: float = Field(description="(L(w+h·e) − L(w)) / h")
    backward: float = Field(description="(L(w) − L(w−h·e)) / h")


class FiniteDiffResult(NamedTuple):
    grads: ParamSet
    nonsmooth: List[NonsmoothPoint]


def finite_diff_gradient(
    loss_fn: Callable[[ParamSet], Union[float, Tensor]],
    params: ParamSet,
    h: float = 1e-6,
) -> FiniteDiffResult:
    """
    Central-difference gradient estimate, one coordinate at a time:
    (L(w + h·eᵢ) − L(w − h·eᵢ)) / (2h).

    Raises:
        InvalidInputError: h is not positive.
        EvaluationError: a loss evaluation was not finite; carries the
            parameter name and element index.
    """
    if not h > 0:
        raise InvalidInputError(f"finite-difference step must be positive, got {h}")

    def evaluate(p: ParamSet, name: Optional[str], index: Optional[Tuple[int, ...]]) -> float:
        value = _scalar(loss_fn(p))
        if not np.isfinite(value):
            where = f" at {name}{list(index)}" if name is not None else ""
            raise EvaluationError(f"non-finite loss{where}", name=name, index=index)
        return value

    base = evaluate(params, None, None)
    grads: Dict[str, np.ndarray] = {}
    flagged: List[NonsmoothPoint] = []
    for name, tensor in params.items():
        work = tensor.data.astype(np.float64).ravel()
        estimate = np.empty_like(work)
        for i in range(work.size):
            index = tuple(int(k) for k in np.unravel_index(i, tensor.shape))
            original = work[i]
            work[i] = original + h
            up = evaluate(params.replace(name, work.reshape(tensor.shape)), name, index)
            work[i] = original - h
            down = evaluate(params.replace(name, work.reshape(tensor.shape)), name, index)
            work[i] = original
            estimate[i] = (up - down) / (2.0 * h)
            forward, backward_q = (up - base) / h, (base - down) / h
            if abs(forward - backward_q) > max(1e-4, 1e-3 * max(abs(forward), abs(backward_q))):
                logger.warning(
                    "Nonsmooth point at %s%s: one-sided quotients %.6g vs %.6g",
                    name, list(index), forward, backward_q,
                )
                flagged.append(NonsmoothPoint(name=name, index=list(index), forward=forward, backward=backward_q))
        grads[name] = estimate.reshape(tensor.shape)
    return FiniteDiffResult(ParamSet.from_arrays(grads), flagged)


def max_relative_error(a, b, abs_floor: float = 1e-7) -> float:
    """
    Largest elementwise relative error between two ParamSets or arrays.
    Differences at or below `abs_floor` count as zero.
    """
    if isinstance(a, ParamSet) and isinstance(b, ParamSet):
        a._check_compatible(b)
        x, y = a.flatten(), b.flatten()
    else:
        x = np.asarray(a, dtype=np.float64).ravel()
        y = np.asarray(b, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise ShapeError("max_relative_error", [x.shape, y.shape])
    if x.size == 0:
        return 0.0
    diff = np.abs(x - y)
    scale_ = np.maximum(np.abs(x), np.abs(y))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale_ > 0, scale_, 1.0))
    return float(rel.max())
