"""Reverse-mode autodiff over dense f32/f64 arrays with block tags,
explicit activation release, and byte-exact live-memory accounting.

Forward evaluation is eager; every operation appends a Node to the tape.
A Node's `saved` list holds exactly the buffers its backward rule needs.
The memory meter charges, per node, the bytes of saved buffers that are
*activations* (produced by earlier ops) plus any auxiliary arrays; buffers
owned by leaves (parameters, dataset constants) are never charged because
they live outside the activation budget.

Charged buffers per primitive:
    matmul        both operand values (when non-leaf)
    add/scale/transpose/reshape/concat-rows   nothing
    gather-rows / scatter-rows                the index vector
    layernorm     input value (when non-leaf) + per-row mean and inv-std
    softmax-lastdim   its own output
    gelu          input value (when non-leaf)
    mse-masked    prediction value (when non-leaf)
    boundary      its own (copied) value

Releasing a node drops its saved buffers and decreases the live counter by
exactly the node's charged bytes; running backward through a released node
is a lifecycle error.
"""

import numpy as np
from scipy.special import erf

LN_EPS = 1e-6

PRIMITIVES = (
    "matmul", "add", "scale", "transpose", "reshape", "gather-rows",
    "scatter-rows", "concat-rows", "layernorm", "softmax-lastdim",
    "gelu", "mse-masked",
)


class TapeError(Exception):
    """Base class for tape failures."""


class DimensionError(TapeError):
    pass


class ContractError(TapeError):
    pass


class LifecycleError(TapeError):
    pass


class NumericError(TapeError):
    pass


def _check_dtype(arr):
    if arr.dtype not in (np.float32, np.float64):
        raise ContractError(f"tensors must be f32 or f64, got {arr.dtype}")


class Node:
    """One recorded value: a dense buffer plus its graph linkage.

    `saved` holds the arrays the backward rule will read; `bytes` is the
    charged size of those arrays (leaf-owned buffers charge zero).
    """

    __slots__ = ("kind", "value", "inputs", "block", "requires_grad",
                 "is_leaf", "name", "attrs", "saved", "bytes", "disposed")

    def __init__(self, kind, value, inputs=(), block=None, requires_grad=False,
                 is_leaf=False, name=None, attrs=None):
        self.kind = kind
        self.value = value
        self.inputs = tuple(inputs)
        self.block = block
        self.requires_grad = requires_grad
        self.is_leaf = is_leaf
        self.name = name
        self.attrs = attrs or {}
        self.saved = []
        self.bytes = 0
        self.disposed = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        tag = f" block={self.block}" if self.block is not None else ""
        nm = f" name={self.name!r}" if self.name else ""
        return f"<Node {self.kind} {tuple(self.shape)}{tag}{nm}>"


class MeterSnapshot:
    """Byte counts at one instant: (live, peak, param, grad, optimizer)."""

    __slots__ = ("live_activation_bytes", "peak_activation_bytes",
                 "param_bytes", "grad_bytes", "optimizer_state_bytes")

    def __init__(self, live, peak, param, grad, opt):
        self.live_activation_bytes = live
        self.peak_activation_bytes = peak
        self.param_bytes = param
        self.grad_bytes = grad
        self.optimizer_state_bytes = opt

    def as_tuple(self):
        return (self.live_activation_bytes, self.peak_activation_bytes,
                self.param_bytes, self.grad_bytes, self.optimizer_state_bytes)


class MemoryMeter:
    """Running account of bytes held by saved activations.

    live is the sum over undisposed nodes of their charged bytes; peak is
    the running maximum.  Parameter / gradient / optimizer-state bytes are
    per-model constants set once by the training harness.
    """

    def __init__(self):
        self.live_activation_bytes = 0
        self.peak_activation_bytes = 0
        self.param_bytes = 0
        self.grad_bytes = 0
        self.optimizer_state_bytes = 0

    def charge(self, nbytes):
        self.live_activation_bytes += nbytes
        if self.live_activation_bytes > self.peak_activation_bytes:
            self.peak_activation_bytes = self.live_activation_bytes

    def discharge(self, nbytes):
        self.live_activation_bytes -= nbytes
        if self.live_activation_bytes < 0:
            raise LifecycleError("live activation bytes went negative")

    def set_model_constants(self, param_bytes, grad_bytes, optimizer_state_bytes):
        self.param_bytes = param_bytes
        self.grad_bytes = grad_bytes
        self.optimizer_state_bytes = optimizer_state_bytes

    def snapshot(self):
        return MeterSnapshot(self.live_activation_bytes, self.peak_activation_bytes,
                             self.param_bytes, self.grad_bytes,
                             self.optimizer_state_bytes)


class _BlockScope:
    def __init__(self, tape, tag):
        self.tape = tape
        self.tag = tag
        self.prev = None

    def __enter__(self):
        self.prev = self.tape._block
        self.tape._block = self.tag
        return self.tape

    def __exit__(self, *exc):
        self.tape._block = self.prev
        return False


class Tape:
    """Eagerly evaluated graph confined to one training step.

    Nodes are appended in creation order, which is therefore a topological
    order; backward walks it in reverse.
    """

    def __init__(self):
        self.nodes = []
        self.meter = MemoryMeter()
        self._block = None
        self._released_blocks = set()
        self._backwarded_blocks = set()

    # ----- recording -------------------------------------------------

    def block(self, tag):
        """Context manager: ops recorded inside carry block tag `tag`."""
        return _BlockScope(self, tag)

    def leaf(self, value, name=None, block=None, requires_grad=False):
        """Register a constant or parameter; never charged to the meter."""
        value = np.ascontiguousarray(value)
        _check_dtype(value)
        node = Node("leaf", value, block=block if block is not None else self._block,
                    requires_grad=requires_grad, is_leaf=True, name=name)
        self.nodes.append(node)
        return node

    def _register(self, node, saved_pairs):
        """saved_pairs: (array, charged) tuples retained for backward."""
        nbytes = 0
        for arr, charged in saved_pairs:
            node.saved.append(arr)
            if charged:
                nbytes += arr.nbytes
        node.bytes = nbytes
        if node.block is None:
            node.block = self._block
        self.nodes.append(node)
        self.meter.charge(nbytes)
        return node

    @staticmethod
    def _act(x):
        """saved-pair helper: charge only activation (non-leaf) buffers."""
        return (x.value, not x.is_leaf)

    # ----- primitives ------------------------------------------------

    def matmul(self, a, b, block=None):
        av, bv = a.value, b.value
        if av.ndim == 2 and bv.ndim == 2:
            pass
        elif av.ndim == 3 and bv.ndim in (2, 3):
            pass
        else:
            raise DimensionError(
                f"matmul supports [m,k]x[k,n], [b,m,k]x[k,n], [b,m,k]x[b,k,n]; "
                f"got {av.shape} x {bv.shape}")
        if av.shape[-1] != bv.shape[-2] or (
                av.ndim == 3 and bv.ndim == 3 and av.shape[0] != bv.shape[0]):
            raise DimensionError(f"matmul extent mismatch: {av.shape} x {bv.shape}")
        out = av @ bv
        node = Node("matmul", np.ascontiguousarray(out), (a, b), block=block,
                    requires_grad=a.requires_grad or b.requires_grad)
        return self._register(node, [self._act(a), self._act(b)])

    def add(self, x, y, block=None):
        xs, ys = x.value.shape, y.value.shape
        if xs != ys and ys != xs[len(xs) - len(ys):]:
            raise DimensionError(
                f"add requires equal shapes or a trailing-shape broadcast; "
                f"got {xs} + {ys}")
        node = Node("add", x.value + y.value, (x, y), block=block,
                    requires_grad=x.requires_grad or y.requires_grad,
                    attrs={"y_ndim": y.value.ndim})
        return self._register(node, [])

    def scale(self, x, c, block=None):
        node = Node("scale", x.value * x.value.dtype.type(c), (x,), block=block,
                    requires_grad=x.requires_grad, attrs={"c": float(c)})
        return self._register(node, [])

    def transpose(self, x, block=None):
        if x.value.ndim < 2:
            raise DimensionError(f"transpose needs rank >= 2, got {x.value.shape}")
        out = np.ascontiguousarray(np.swapaxes(x.value, -1, -2))
        node = Node("transpose", out, (x,), block=block,
                    requires_grad=x.requires_grad)
        return self._register(node, [])

    def reshape(self, x, shape, block=None):
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != x.value.size:
            raise DimensionError(f"reshape {x.value.shape} -> {shape}: size mismatch")
        out = np.ascontiguousarray(x.value).reshape(shape).copy()
        node = Node("reshape", out, (x,), block=block,
                    requires_grad=x.requires_grad, attrs={"in_shape": x.value.shape})
        return self._register(node, [])

    @staticmethod
    def _check_row_ids(ids, n_rows, op):
        if ids.ndim not in (1, 2):
            raise DimensionError(f"{op} ids must be rank 1 or 2, got {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
            raise DimensionError(
                f"{op} ids out of range [0, {n_rows}): min={ids.min()} max={ids.max()}")

    def gather_rows(self, x, ids, block=None):
        """Select rows (axis -2) by index; ids rank 2 selects per batch entry."""
        xv = x.value
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        self._check_row_ids(ids, xv.shape[-2], "gather-rows")
        if xv.ndim == 2 and ids.ndim == 1:
            out = xv[ids]
        elif xv.ndim == 3 and ids.ndim == 1:
            out = xv[:, ids, :]
        elif xv.ndim == 3 and ids.ndim == 2:
            if ids.shape[0] != xv.shape[0]:
                raise DimensionError(
                    f"gather-rows batch mismatch: ids {ids.shape} vs x {xv.shape}")
            out = np.take_along_axis(xv, ids[:, :, None], axis=1)
        else:
            raise DimensionError(
                f"gather-rows: unsupported ranks x={xv.shape} ids={ids.shape}")
        node = Node("gather-rows", np.ascontiguousarray(out), (x,), block=block,
                    requires_grad=x.requires_grad,
                    attrs={"ids": ids, "in_shape": xv.shape})
        return self._register(node, [(ids, True)])

    def scatter_rows(self, x, ids, num_rows, block=None):
        """Place row j of x at row ids[j] of a zero output with num_rows rows."""
        xv = x.value
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        self._check_row_ids(ids, num_rows, "scatter-rows")
        if ids.shape[-1] != xv.shape[-2]:
            raise DimensionError(
                f"scatter-rows: {xv.shape[-2]} rows but {ids.shape[-1]} ids")
        uniq_axis = ids if ids.ndim == 1 else ids[0]
        if np.unique(uniq_axis).size != uniq_axis.size or (
                ids.ndim == 2 and any(np.unique(r).size != r.size for r in ids)):
            raise ContractError("scatter-rows ids must be unique per sample")
        if xv.ndim == 2 and ids.ndim == 1:
            out = np.zeros((num_rows, xv.shape[-1]), dtype=xv.dtype)
            out[ids] = xv
        elif xv.ndim == 3 and ids.ndim == 1:
            out = np.zeros((xv.shape[0], num_rows, xv.shape[-1]), dtype=xv.dtype)
            out[:, ids, :] = xv
        elif xv.ndim == 3 and ids.ndim == 2:
            if ids.shape[0] != xv.shape[0]:
                raise DimensionError(
                    f"scatter-rows batch mismatch: ids {ids.shape} vs x {xv.shape}")
            out = np.zeros((xv.shape[0], num_rows, xv.shape[-1]), dtype=xv.dtype)
            np.put_along_axis(out, ids[:, :, None], xv, axis=1)
        else:
            raise DimensionError(
                f"scatter-rows: unsupported ranks x={xv.shape} ids={ids.shape}")
        node = Node("scatter-rows", out, (x,), block=block,
                    requires_grad=x.requires_grad,
                    attrs={"ids": ids, "num_rows": num_rows})
        return self._register(node, [(ids, True)])

    def concat_rows(self, xs, block=None):
        """Concatenate along axis -2."""
        if len(xs) < 1:
            raise ContractError("concat-rows needs at least one input")
        shapes = [x.value.shape for x in xs]
        base = shapes[0]
        for s in shapes[1:]:
            if len(s) != len(base) or s[:-2] != base[:-2] or s[-1] != base[-1]:
                raise DimensionError(f"concat-rows shape mismatch: {shapes}")
        out = np.concatenate([x.value for x in xs], axis=-2)
        node = Node("concat-rows", np.ascontiguousarray(out), tuple(xs), block=block,
                    requires_grad=any(x.requires_grad for x in xs),
                    attrs={"sizes": [s[-2] for s in shapes]})
        return self._register(node, [])

    def layernorm(self, x, gamma, beta, block=None):
        xv = x.value
        d = xv.shape[-1]
        if gamma.value.shape != (d,) or beta.value.shape != (d,):
            raise DimensionError(
                f"layernorm affine shapes {gamma.value.shape}/{beta.value.shape} "
                f"do not match feature dim {d}")
        mu = xv.mean(axis=-1, keepdims=True)
        var = xv.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + xv.dtype.type(LN_EPS))
        xhat = (xv - mu) * inv_std
        out = xhat * gamma.value + beta.value
        node = Node("layernorm", out, (x, gamma, beta), block=block,
                    requires_grad=(x.requires_grad or gamma.requires_grad
                                   or beta.requires_grad))
        return self._register(node, [self._act(x), (mu, True), (inv_std, True),
                                      self._act(gamma)])

    def softmax(self, x, block=None):
        xv = x.value
        shifted = xv - xv.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=-1, keepdims=True)
        node = Node("softmax-lastdim", out, (x,), block=block,
                    requires_grad=x.requires_grad)
        return self._register(node, [(out, True)])

    def gelu(self, x, block=None):
        xv = x.value
        out = 0.5 * xv * (1.0 + erf(xv / np.sqrt(xv.dtype.type(2.0))))
        node = Node("gelu", out.astype(xv.dtype, copy=False), (x,), block=block,
                    requires_grad=x.requires_grad)
        return self._register(node, [self._act(x)])

    def mse_masked(self, pred, target, mask, block=None):
        """Mean squared error over masked rows only (mask entry 1 = masked).

        pred/target are [..., N, P]; mask is [..., N].  The per-row error is
        averaged over P, then averaged over rows with mask == 1.
        """
        pv, tv, mv = pred.value, target.value, mask.value
        if pv.shape != tv.shape:
            raise DimensionError(f"mse-masked pred {pv.shape} vs target {tv.shape}")
        if mv.shape != pv.shape[:-1]:
            raise DimensionError(f"mse-masked mask {mv.shape} vs rows {pv.shape[:-1]}")
        total = mv.sum()
        if total == 0:
            raise ContractError("mse-masked: no masked rows, loss undefined")
        per_row = ((pv - tv) ** 2).mean(axis=-1)
        out = np.asarray((per_row * mv).sum() / total, dtype=pv.dtype)
        node = Node("mse-masked", out, (pred, target, mask), block=block,
                    requires_grad=pred.requires_grad)
        return self._register(node, [self._act(pred), self._act(target),
                                      self._act(mask)])

    def boundary(self, x, block=None):
        """Duplicate x into a detached, metered buffer.

        The copy feeds the next block as a constant leaf, so gradients from
        later losses terminate here; it stays charged until disposed.
        """
        node = Node("boundary", x.value.copy(), (), block=block,
                    requires_grad=False, is_leaf=True)
        return self._register(node, [(node.value, True)])

    def record(self, op_kind, inputs, block=None, **attrs):
        """Generic entry point dispatching on the primitive name."""
        ops = {
            "matmul": lambda: self.matmul(*inputs, block=block),
            "add": lambda: self.add(*inputs, block=block),
            "scale": lambda: self.scale(inputs[0], attrs["c"], block=block),
            "transpose": lambda: self.transpose(inputs[0], block=block),
            "reshape": lambda: self.reshape(inputs[0], attrs["shape"], block=block),
            "gather-rows": lambda: self.gather_rows(inputs[0], attrs["ids"], block=block),
            "scatter-rows": lambda: self.scatter_rows(
                inputs[0], attrs["ids"], attrs["num_rows"], block=block),
            "concat-rows": lambda: self.concat_rows(list(inputs), block=block),
            "layernorm": lambda: self.layernorm(*inputs, block=block),
            "softmax-lastdim": lambda: self.softmax(inputs[0], block=block),
            "gelu": lambda: self.gelu(inputs[0], block=block),
            "mse-masked": lambda: self.mse_masked(*inputs, block=block),
        }
        if op_kind not in ops:
            raise ContractError(f"unknown primitive {op_kind!r}; valid: {PRIMITIVES}")
        return ops[op_kind]()

    # ----- backward ----------------------------------------------------

    def backward(self, loss, boundary_block=None):
        """Gradients of a scalar loss w.r.t. reachable named parameters.

        With boundary_block set, nodes tagged with a smaller block id are
        treated as constant leaves: traversal and the returned table stop
        at the block boundary.
        """
        if loss.disposed:
            raise LifecycleError("backward from a released loss node")
        if loss.value.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {loss.value.shape}")

        def frozen(node):
            return (boundary_block is not None and node.block is not None
                    and node.block < boundary_block)

        # Ancestors of the loss, pruned at leaves and frozen nodes.
        visited = set()
        order = []
        stack = [loss]
        while stack:
            node = stack.pop()
            if id(node) in visited:
                continue
            visited.add(id(node))
            order.append(node)
            if node.is_leaf or frozen(node):
                continue
            if node.disposed:
                raise LifecycleError(
                    f"backward reached released node {node!r}")
            stack.extend(node.inputs)

        grads = {id(loss): np.ones_like(loss.value)}
        # Creation order is topological; filter to the visited subgraph.
        sub = [n for n in self.nodes if id(n) in visited]
        for node in reversed(sub):
            if node.is_leaf or frozen(node):
                continue
            g = grads.get(id(node))
            if g is None:
                continue
            for inp, contrib in zip(node.inputs, _VJP[node.kind](node, g)):
                if contrib is None:
                    continue
                if inp.is_leaf and not inp.requires_grad:
                    continue
                acc = grads.get(id(inp))
                grads[id(inp)] = contrib if acc is None else acc + contrib

        table = {}
        for node in sub:
            if not (node.is_leaf and node.requires_grad and node.name):
                continue
            if frozen(node):
                continue
            g = grads.get(id(node))
            if g is None:
                g = np.zeros_like(node.value)
            table[node.name] = g
        self._backwarded_blocks.update(
            n.block for n in sub if n.block is not None and not n.is_leaf
            and not frozen(n))
        return table

    # ----- release -----------------------------------------------------

    def release_block_activations(self, block_id, keep=None):
        """Drop saved buffers of all nodes tagged block_id, except `keep`.

        Requires that the block's backward already ran; repeated release of
        the same block is an error.  Returns the number of bytes freed.
        """
        if block_id in self._released_blocks:
            raise LifecycleError(f"block {block_id} already released")
        if block_id not in self._backwarded_blocks:
            raise LifecycleError(
                f"release of block {block_id} before its backward pass")
        freed = 0
        for node in self.nodes:
            if node.block == block_id and not node.disposed and node is not keep:
                freed += self._dispose(node)
        self._released_blocks.add(block_id)
        return freed

    def dispose(self, node):
        """Explicitly free one node (e.g. a boundary buffer no longer needed)."""
        if node.disposed:
            raise LifecycleError(f"node {node!r} already disposed")
        return self._dispose(node)

    def _dispose(self, node):
        freed = node.bytes
        self.meter.discharge(freed)
        node.saved = None
        node.disposed = True
        if not node.is_leaf:
            node.value = None
        return freed

    def snapshot(self):
        return self.meter.snapshot()


# ----- backward rules ----------------------------------------------------

def _vjp_matmul(node, g):
    a, b = node.saved[0], node.saved[1]
    if a.ndim == 2 and b.ndim == 2:
        return (g @ b.T, a.T @ g)
    if a.ndim == 3 and b.ndim == 2:
        da = g @ b.T
        db = np.einsum("bmk,bmn->kn", a, g)
        return (da, db)
    da = g @ np.swapaxes(b, -1, -2)
    db = np.swapaxes(a, -1, -2) @ g
    return (da, db)


def _vjp_add(node, g):
    gy = g
    extra = g.ndim - node.attrs["y_ndim"]
    if extra:
        gy = g.sum(axis=tuple(range(extra)))
    return (g, gy)


def _vjp_scale(node, g):
    return (g * g.dtype.type(node.attrs["c"]),)


def _vjp_transpose(node, g):
    return (np.swapaxes(g, -1, -2),)


def _vjp_reshape(node, g):
    return (g.reshape(node.attrs["in_shape"]),)


def _vjp_gather_rows(node, g):
    ids = node.saved[0]
    dx = np.zeros(node.attrs["in_shape"], dtype=g.dtype)
    if dx.ndim == 2:
        np.add.at(dx, ids, g)
    elif ids.ndim == 1:
        np.add.at(dx, (slice(None), ids), g)
    else:
        # per-batch ids; rows are unique per sample in every caller, but
        # add.at keeps this safe for duplicates too
        b = np.arange(dx.shape[0])[:, None]
        np.add.at(dx, (b, ids), g)
    return (dx,)


def _vjp_scatter_rows(node, g):
    ids = node.saved[0]
    if g.ndim == 2:
        return (g[ids],)
    if ids.ndim == 1:
        return (g[:, ids, :],)
    return (np.take_along_axis(g, ids[:, :, None], axis=1),)


def _vjp_concat_rows(node, g):
    sizes = node.attrs["sizes"]
    outs = []
    start = 0
    for s in sizes:
        outs.append(np.ascontiguousarray(g[..., start:start + s, :]))
        start += s
    return tuple(outs)


def _vjp_layernorm(node, g):
    x, mu, inv_std, gamma = node.saved
    xhat = (x - mu) * inv_std
    dgamma = (g * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
    dbeta = g.reshape(-1, x.shape[-1]).sum(axis=0)
    dxhat = g * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return (dx, dgamma, dbeta)


def _vjp_softmax(node, g):
    y = node.saved[0]
    s = (g * y).sum(axis=-1, keepdims=True)
    return (y * (g - s),)


def _vjp_gelu(node, g):
    x = node.saved[0]
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(x.dtype.type(2.0))))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(x.dtype.type(2.0 * np.pi))
    return ((g * (cdf + x * pdf)).astype(x.dtype, copy=False),)


def _vjp_mse_masked(node, g):
    pred, target, mask = node.saved
    p = pred.shape[-1]
    total = mask.sum()
    dpred = 2.0 * (pred - target) * mask[..., None] / (p * total)
    return ((dpred * g).astype(pred.dtype, copy=False), None, None)


_VJP = {
    "matmul": _vjp_matmul,
    "add": _vjp_add,
    "scale": _vjp_scale,
    "transpose": _vjp_transpose,
    "reshape": _vjp_reshape,
    "gather-rows": _vjp_gather_rows,
    "scatter-rows": _vjp_scatter_rows,
    "concat-rows": _vjp_concat_rows,
    "layernorm": _vjp_layernorm,
    "softmax-lastdim": _vjp_softmax,
    "gelu": _vjp_gelu,
    "mse-masked": _vjp_mse_masked,
}


def finite_diff(fn, point, eps=1e-6):
    """Central-difference gradient of a scalar function at `point`.

    fn maps an ndarray to a float; this is the independent oracle used to
    check every backward rule.
    """
    point = np.asarray(point, dtype=np.float64)
    if eps <= 0:
        raise ContractError("finite_diff needs eps > 0")
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(point))
        flat[i] = orig - eps
        fm = float(fn(point))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
