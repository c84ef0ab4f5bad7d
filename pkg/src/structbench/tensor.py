"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly the primitives the rest of the package needs: conv2d,
relu, pooling, linear, gram matrices, softmax cross-entropy and the
elementwise glue to combine them into losses. No broadcasting; shapes
are always explicit.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TensorError",
    "DimensionError",
    "GraphError",
    "NonFiniteError",
    "conv2d",
    "relu",
    "avg_pool2",
    "max_pool2",
    "linear",
    "softmax_cross_entropy",
    "gram",
    "backward",
]


class TensorError(Exception):
    """Base class for tensor engine contract violations."""


class DimensionError(TensorError):
    """Shape or rank mismatch between operands."""


class GraphError(TensorError):
    """Misuse of the computation graph (double backward, non-scalar loss)."""


class NonFiniteError(TensorError):
    """A NaN or Inf value appeared where all values must be finite."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value in {where}")


class Tensor:
    """A dense float64 array with an optional gradient slot.

    Tensors produced by the ops below remember their parents and a
    backward closure; ``backward()`` on a scalar loss walks that tape
    in reverse topological order.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._consumed = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- elementwise / reduction arithmetic -------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        _same_shape(self, other, "add")
        out = _from_op(self.data + other.data, (self, other),
                       lambda g: (g, g))
        return out

    def __sub__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        _same_shape(self, other, "sub")
        return _from_op(self.data - other.data, (self, other),
                        lambda g: (g, -g))

    def __mul__(self, other: "Tensor") -> "Tensor":
        other = _as_tensor(other)
        _same_shape(self, other, "mul")
        return _from_op(self.data * other.data, (self, other),
                        lambda g: (g * other.data, g * self.data))

    def scale(self, c: float) -> "Tensor":
        """Multiply every element by the python scalar ``c``."""
        c = float(c)
        return _from_op(self.data * c, (self,), lambda g: (g * c,))

    def sum(self) -> "Tensor":
        shape = self.data.shape
        return _from_op(np.asarray(self.data.sum()), (self,),
                        lambda g: (np.full(shape, float(g)),))

    def square(self) -> "Tensor":
        return _from_op(self.data ** 2, (self,), lambda g: (g * 2.0 * self.data,))

    def reshape(self, *shape: int) -> "Tensor":
        old = self.data.shape
        return _from_op(self.data.reshape(shape), (self,),
                        lambda g: (g.reshape(old),))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} vs {b.shape}")


def _from_op(data: np.ndarray, parents: tuple,
             backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    _check_finite(data, "op output")
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.requires_grad = False
    out.grad = None
    out._consumed = False
    tracked = any(p.requires_grad or p._backward_fn is not None for p in parents)
    if tracked:
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


# -- convolution -----------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """x: (N, C, H, W) -> columns (N, H'*W', C*k*k) plus output extents."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    s0, s1, s2, s3 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, h_out, w_out, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, h_out * w_out, c * k * k)
    return np.ascontiguousarray(cols), h_out, w_out


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of _im2col: scatter column gradients back onto the image."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    h_out = (hp - k) // stride + 1
    w_out = (wp - k) // stride + 1
    grad = np.zeros((n, c, hp, wp))
    cols = cols.reshape(n, h_out, w_out, c, k, k)
    for di in range(k):
        for dj in range(k):
            grad[:, :, di:di + stride * h_out:stride, dj:dj + stride * w_out:stride] += \
                cols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
    if padding:
        grad = grad[:, :, padding:hp - padding, padding:wp - padding]
    return grad


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x`` is (C,H,W) or batched (N,C,H,W);
    ``weight`` is (C_out, C_in, k, k)."""
    batched = x.data.ndim == 4
    if x.data.ndim not in (3, 4) or weight.data.ndim != 4:
        raise DimensionError(
            f"conv2d: input shape {x.shape}, weight shape {weight.shape}")
    xd = x.data if batched else x.data[None]
    n, c_in, h, w = xd.shape
    c_out, wc_in, kh, kw = weight.data.shape
    if kh != kw:
        raise DimensionError(f"conv2d: non-square kernel {weight.shape}")
    k = kh
    if wc_in != c_in:
        raise DimensionError(
            f"conv2d: input channels {x.shape} vs weight {weight.data.shape}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(
            f"conv2d: kernel {k} exceeds padded input {xd.shape} with padding {padding}")
    if stride < 1:
        raise DimensionError(f"conv2d: stride must be positive, got {stride}")

    cols, h_out, w_out = _im2col(xd, k, stride, padding)
    wmat = weight.data.reshape(c_out, c_in * k * k)
    out = cols @ wmat.T                             # (N, H'*W', C_out)
    out = out.transpose(0, 2, 1).reshape(n, c_out, h_out, w_out)
    if not batched:
        out = out[0]

    x_shape = xd.shape

    def bw(g: np.ndarray):
        gb = g if batched else g[None]
        gmat = gb.reshape(n, c_out, h_out * w_out).transpose(0, 2, 1)  # (N, HW', C_out)
        gw = np.einsum("npo,npk->ok", gmat, cols).reshape(weight.data.shape)
        gcols = gmat @ wmat                          # (N, HW', C*k*k)
        gx = _col2im(gcols, x_shape, k, stride, padding)
        if not batched:
            gx = gx[0]
        return gx, gw

    return _from_op(out, (x, weight), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _from_op(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _pool_check(x: Tensor) -> tuple:
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"pool: expected (C,H,W) or (N,C,H,W), got {x.shape}")
    h, w = x.data.shape[-2], x.data.shape[-1]
    if h % 2 or w % 2:
        raise DimensionError(f"pool: odd spatial extents {x.shape}; pad the input explicitly")
    return h, w


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2. Odd extents are an error."""
    h, w = _pool_check(x)
    lead = x.data.shape[:-2]
    xv = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    out = xv.mean(axis=(-3, -1))

    def bw(g: np.ndarray):
        gx = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
        return (gx,)

    return _from_op(out, (x,), bw)


def spatial_mean(x: Tensor) -> Tensor:
    """Average over the trailing spatial axes: (C,H,W) -> (C,), (N,C,H,W) -> (N,C)."""
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"spatial_mean: expected (C,H,W) or (N,C,H,W), got {x.shape}")
    h, w = x.data.shape[-2], x.data.shape[-1]
    out = x.data.mean(axis=(-2, -1))

    def bw(g: np.ndarray):
        gx = np.broadcast_to(g[..., None, None] / (h * w), x.data.shape)
        return (np.ascontiguousarray(gx),)

    return _from_op(out, (x,), bw)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2. Odd extents are an error.

    Ties route the gradient to the first maximal position in the window.
    """
    h, w = _pool_check(x)
    lead = x.data.shape[:-2]
    nlead = len(lead)
    # windows: (..., H/2, W/2, 4) with the 2x2 window flattened last
    xv = x.data.reshape(*lead, h // 2, 2, w // 2, 2)
    xv = np.moveaxis(xv, -3, -2).reshape(*lead, h // 2, w // 2, 4)
    win_idx = xv.argmax(axis=-1)
    out = np.take_along_axis(xv, win_idx[..., None], axis=-1)[..., 0]

    def bw(g: np.ndarray):
        gwin = np.zeros_like(xv)
        np.put_along_axis(gwin, win_idx[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(*lead, h // 2, w // 2, 2, 2)
        gx = np.moveaxis(gx, -2, -3).reshape(x.data.shape)
        return (gx,)

    return _from_op(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map. ``x`` is (D,) or batched (N,D); weight (M,D); bias (M,)."""
    if weight.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError(f"linear: weight {weight.shape}, bias {bias.shape}")
    m, d = weight.data.shape
    if bias.data.shape[0] != m:
        raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    batched = x.data.ndim == 2
    if x.data.shape[-1] != d or x.data.ndim not in (1, 2):
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")

    if batched:
        out = x.data @ weight.data.T + bias.data

        def bw(g: np.ndarray):
            return g @ weight.data, g.T @ x.data, g.sum(axis=0)
    else:
        out = weight.data @ x.data + bias.data

        def bw(g: np.ndarray):
            return weight.data.T @ g, np.outer(g, x.data), g

    return _from_op(out, (x, weight, bias), bw)


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Cross-entropy of softmax(logits) against an integer class label.

    ``logits`` may be (K,) with a scalar label, or (N,K) with a length-N
    label sequence (mean loss over the batch).
    """
    if logits.data.ndim == 1:
        k = logits.data.shape[0]
        label = int(label)
        if not 0 <= label < k:
            raise IndexError(f"label {label} out of range for {k} classes")
        z = logits.data - logits.data.max()
        logp = z - np.log(np.exp(z).sum())
        p = np.exp(logp)
        out = np.asarray(-logp[label])

        def bw(g: np.ndarray):
            grad = p.copy()
            grad[label] -= 1.0
            return (grad * float(g),)

        return _from_op(out, (logits,), bw)

    if logits.data.ndim == 2:
        n, k = logits.data.shape
        labels = np.asarray(label, dtype=np.int64)
        if labels.shape != (n,):
            raise DimensionError(f"labels shape {labels.shape} vs logits {logits.shape}")
        if labels.min() < 0 or labels.max() >= k:
            raise IndexError(f"label out of range for {k} classes")
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        out = np.asarray(-logp[np.arange(n), labels].mean())

        def bw(g: np.ndarray):
            grad = p.copy()
            grad[np.arange(n), labels] -= 1.0
            return (grad * (float(g) / n),)

        return _from_op(out, (logits,), bw)

    raise DimensionError(f"softmax_cross_entropy: logits shape {logits.shape}")


def gram(a: Tensor) -> Tensor:
    """Channel-wise Gram matrix of a (C,H,W) activation, normalized by H*W.

    G[i,j] = sum_{h,w} A[i,h,w]*A[j,h,w] / (H*W). Symmetric by construction.
    """
    if a.data.ndim != 3:
        raise DimensionError(f"gram: expected (C,H,W), got {a.shape}")
    c, h, w = a.data.shape
    if c < 1 or h * w < 1:
        raise DimensionError(f"gram: degenerate shape {a.shape}")
    flat = a.data.reshape(c, h * w)
    g = flat @ flat.T
    g = (g + g.T) * (0.5 / (h * w))

    def bw(up: np.ndarray):
        sym = (up + up.T) * (0.5 / (h * w))
        return ((2.0 * sym @ flat).reshape(c, h, w),)

    return _from_op(g, (a,), bw)


# -- backward pass ----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    The loss must be scalar. Running backward twice on the same graph
    without rebuilding it is an error.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward: graph already consumed; rebuild it before "
                         "calling backward again")
    if loss._backward_fn is None and not loss.requires_grad:
        raise GraphError("backward: loss is not connected to any requires_grad tensor")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
        node._consumed = True
    loss._consumed = True


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()
