"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

A dynamic tape: every op returns a Tensor holding its value, its parents and
a closure that pushes the upstream gradient to the parents.  ``backward()``
on a scalar tensor runs the tape in reverse topological order.  The op set
is exactly what the recognition model and the loss family here need; there
is no broadcasting magic beyond elementwise add/sub/mul/div, no higher-order
gradients, no GPU.

The heavy sequence kernels (LSTM scan, CTC recursion) live in
``seqda.kernels`` with a compiled and a numpy backend.
"""

import numpy as np

from . import kernels


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A node in the tape: value, accumulated gradient, backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def backward(self):
        if self.data.ndim != 0 and self.data.size != 1:
            raise ValueError("backward() requires a scalar objective, got shape %s"
                             % (self.data.shape,))
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.data.shape, self.requires_grad)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _ew(a, b, out_data, da, db):
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(da(g), a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(db(g), b.data.shape))

    return Tensor(out_data, parents=(a, b), backward=bwd)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _ew(a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _ew(a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _ew(a, b, a.data * b.data, lambda g: g * b.data, lambda g: g * a.data)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _ew(a, b, a.data / b.data,
               lambda g: g / b.data,
               lambda g: -g * a.data / (b.data * b.data))


def _unary(a, out_data, da):
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a._accum(da(g))

    return Tensor(out_data, parents=(a,), backward=bwd)


def square(a):
    a = as_tensor(a)
    return _unary(a, a.data * a.data, lambda g: 2.0 * g * a.data)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _unary(a, out, lambda g: 0.5 * g / out)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _unary(a, out, lambda g: g * out)


def log(a):
    a = as_tensor(a)
    return _unary(a, np.log(a.data), lambda g: g / a.data)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _unary(a, out, lambda g: g * (1.0 - out * out))


def sigmoid(a):
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _unary(a, out, lambda g: g * out * (1.0 - out))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _unary(a, np.where(mask, a.data, 0.0), lambda g: g * mask)


def tsum(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def da(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _unary(a, out, da)


def tmean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands, got %s and %s"
                         % (a.data.shape, b.data.shape))
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError("matmul shape mismatch: %s @ %s" % (a.data.shape, b.data.shape))

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor(a.data @ b.data, parents=(a, b), backward=bwd)


def transpose(a):
    a = as_tensor(a)
    return _unary(a, a.data.T.copy(), lambda g: g.T)


def reshape(a, shape):
    a = as_tensor(a)
    return _unary(a, a.data.reshape(shape).copy(), lambda g: g.reshape(a.data.shape))


def reverse(a, axis):
    a = as_tensor(a)
    return _unary(a, np.flip(a.data, axis=axis).copy(), lambda g: np.flip(g, axis=axis))


def concat(parts, axis):
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for p, a0, a1 in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(a0, a1)
                p._accum(g[tuple(sl)])

    return Tensor(np.concatenate([p.data for p in parts], axis=axis),
                  parents=tuple(parts), backward=bwd)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along `axis`."""
    a = as_tensor(a)
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def da(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return _unary(a, a.data[sl].copy(), da)


def take_flat(a, idx):
    """Gather entries of the flattened tensor; idx is a fixed int array."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)

    def da(g):
        full = np.zeros(a.data.size)
        np.add.at(full, idx, g)
        return full.reshape(a.data.shape)

    return _unary(a, a.data.reshape(-1)[idx].copy(), da)


def mean_center(a, axis):
    """Subtract the mean along `axis` (the centering used by CORAL-style losses)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    n = a.data.shape[axis]

    def da(g):
        return g - g.sum(axis=axis, keepdims=True) / n

    return _unary(a, a.data - mu, da)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse

    def da(g):
        return g - np.exp(out) * g.sum(axis=axis, keepdims=True)

    return _unary(a, out, da)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def affine(x, w, b):
    """x (..., F) @ w (F, G) + b (G,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError("affine shape mismatch: input %s vs weight %s"
                         % (x.data.shape, w.data.shape))
    lead = x.data.shape[:-1]
    x2 = reshape(x, (-1, x.data.shape[-1]))
    y = add(matmul(x2, w), b)
    return reshape(y, lead + (w.data.shape[1],))


def conv1d(x, w, b, stride=1):
    """Same-padded 1-D convolution over time.

    x: (B, T, C), w: (K, C, F), b: (F,) -> (B, ceil(T/stride), F).
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    B, T, C = x.data.shape
    K, Cw, F = w.data.shape
    if C != Cw:
        raise ValueError("conv1d channel mismatch: input %d vs kernel %d" % (C, Cw))
    t_out = -(-T // stride)
    pad_total = max((t_out - 1) * stride + K - T, 0)
    pl = pad_total // 2
    xp = np.zeros((B, T + pad_total, C))
    xp[:, pl:pl + T, :] = x.data
    out = np.broadcast_to(b.data, (B, t_out, F)).copy()
    for k in range(K):
        seg = xp[:, k:k + (t_out - 1) * stride + 1:stride, :]
        out += seg @ w.data[k]

    def bwd(g):
        if b.requires_grad:
            b._accum(g.sum(axis=(0, 1)))
        if w.requires_grad or x.requires_grad:
            dxp = np.zeros_like(xp) if x.requires_grad else None
            dw = np.zeros_like(w.data) if w.requires_grad else None
            for k in range(K):
                seg = xp[:, k:k + (t_out - 1) * stride + 1:stride, :]
                if dw is not None:
                    dw[k] = np.einsum("btc,btf->cf", seg, g)
                if dxp is not None:
                    dxp[:, k:k + (t_out - 1) * stride + 1:stride, :] += g @ w.data[k].T
            if dw is not None:
                w._accum(dw)
            if dxp is not None:
                x._accum(dxp[:, pl:pl + T, :])

    return Tensor(out, parents=(x, w, b), backward=bwd)


def adaptive_max_pool_time(x, out_len):
    """Max-pool (B, T, F) -> (B, out_len, F) with near-uniform time bins.

    Bin i covers [floor(i*T/P), ceil((i+1)*T/P)); for T divisible by P this
    is plain kernel=stride=T/P pooling.
    """
    x = as_tensor(x)
    B, T, F = x.data.shape
    if out_len > T:
        raise ValueError("pooled length %d exceeds input length %d" % (out_len, T))
    out = np.empty((B, out_len, F))
    argidx = np.empty((B, out_len, F), dtype=np.intp)
    for i in range(out_len):
        a0 = (i * T) // out_len
        a1 = -(-((i + 1) * T) // out_len)
        seg = x.data[:, a0:a1, :]
        am = seg.argmax(axis=1)
        out[:, i, :] = np.take_along_axis(seg, am[:, None, :], axis=1)[:, 0, :]
        argidx[:, i, :] = am + a0

    def da(g):
        dx = np.zeros_like(x.data)
        bi = np.arange(B)[:, None, None]
        fi = np.arange(F)[None, None, :]
        np.add.at(dx, (bi, argidx, fi), g)
        return dx

    return _unary(x, out, da)


def lstm_seq(x, wx, wh, b, reverse_time=False):
    """LSTM over a batched sequence: x (B, T, C) -> (B, T, H)."""
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    if x.data.shape[-1] != wx.data.shape[0]:
        raise ValueError("lstm input dim %d vs wx %s" % (x.data.shape[-1], wx.data.shape))
    xt = np.ascontiguousarray(x.data.transpose(1, 0, 2))
    h, cache = kernels.lstm_forward(xt, wx.data, wh.data, b.data, reverse=reverse_time)

    def bwd(g):
        dx, dwx, dwh, db = kernels.lstm_backward(
            np.ascontiguousarray(g.transpose(1, 0, 2)), cache)
        if x.requires_grad:
            x._accum(dx.transpose(1, 0, 2))
        if wx.requires_grad:
            wx._accum(dwx)
        if wh.requires_grad:
            wh._accum(dwh)
        if b.requires_grad:
            b._accum(db)

    return Tensor(h.transpose(1, 0, 2), parents=(x, wx, wh, b), backward=bwd)


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """One LSTM step on (B, C) input; returns (h, c) as Tensors.

    Composed from primitive ops (gate order i, f, g, o).
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    wx, wh, b = as_tensor(wx), as_tensor(wh), as_tensor(b)
    H = wh.data.shape[0]
    z = add(add(matmul(x, wx), matmul(h_prev, wh)), b)
    i = sigmoid(narrow(z, 1, 0, H))
    f = sigmoid(narrow(z, 1, H, H))
    g = tanh(narrow(z, 1, 2 * H, H))
    o = sigmoid(narrow(z, 1, 3 * H, H))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def outer_power_mean(x, p):
    """mean_i x_i^{tensor power p} for x (n, H); result has shape (H,)*p."""
    x = as_tensor(x)
    n, H = x.data.shape
    if H ** p > 10 ** 7:
        raise ValueError("H^p = %d exceeds the dense-tensor guard; "
                         "use the sampled variant" % (H ** p))
    d = x.data
    if p == 1:
        out = d.mean(axis=0)
    elif p == 2:
        out = d.T @ d / n
    elif p == 3:
        out = np.einsum("ia,ib,ic->abc", d, d, d) / n
    else:
        raise ValueError("tensor power order %d not supported" % p)

    def da(g):
        if p == 1:
            return np.broadcast_to(g / n, d.shape).copy()
        if p == 2:
            return d @ (g + g.T) / n
        return (np.einsum("abc,ib,ic->ia", g, d, d)
                + np.einsum("bac,ib,ic->ia", g, d, d)
                + np.einsum("bca,ib,ic->ia", g, d, d)) / n

    return _unary(x, out, da)


def monomial_features(x, idx):
    """Map rows of x (n, H) to products over sampled index tuples.

    idx: (T, p) int array; out[i, t] = prod_k x[i, idx[t, k]].
    """
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    T, p = idx.shape
    cols = x.data[:, idx]            # (n, T, p)
    out = cols.prod(axis=2)

    def da(g):
        dx = np.zeros_like(x.data)
        for k in range(p):
            rest = np.ones_like(out)
            for k2 in range(p):
                if k2 != k:
                    rest = rest * cols[:, :, k2]
            contrib = g * rest       # (n, T)
            np.add.at(dx.T, idx[:, k], contrib.T)
        return dx

    return _unary(x, out, da)


def matinv(a):
    a = as_tensor(a)
    inv = np.linalg.inv(a.data)

    def da(g):
        return -inv.T @ g @ inv.T

    return _unary(a, inv, da)


def logdet(a):
    a = as_tensor(a)
    sign, val = np.linalg.slogdet(a.data)
    if sign <= 0 or not np.isfinite(val):
        raise ValueError("log-determinant undefined after regularization")
    inv_t = np.linalg.inv(a.data).T
    return _unary(a, val, lambda g: g * inv_t)


def ctc_objective(log_probs, labels, blank):
    """-log P(labels | log_probs) as a scalar tape node; log_probs (T, K+1)."""
    log_probs = as_tensor(log_probs)
    loss, grad = kernels.ctc_forward_backward(log_probs.data, labels, blank)

    def bwd(g):
        if log_probs.requires_grad:
            log_probs._accum(g * grad)

    return Tensor(loss, parents=(log_probs,), backward=bwd)


class Graph:
    """A static computation recipe: named parameters + a builder callable.

    `build(params, inputs)` receives dicts of Tensors and returns a dict of
    named output Tensors; one of them (default "objective") may serve as the
    scalar training objective.  Input shapes, when declared, are validated.
    """

    def __init__(self, build, params=None, input_shapes=None):
        self.build = build
        self.params = {k: parameter(v, name=k) for k, v in (params or {}).items()}
        self.input_shapes = dict(input_shapes or {})

    def _wrap_inputs(self, inputs):
        wrapped = {}
        for k, v in inputs.items():
            arr = _as_array(v)
            want = self.input_shapes.get(k)
            if want is not None and tuple(arr.shape) != tuple(want):
                raise ValueError("input '%s' has shape %s, expected %s"
                                 % (k, arr.shape, tuple(want)))
            wrapped[k] = Tensor(arr)
        return wrapped

    def forward(self, inputs):
        outs = self.build(self.params, self._wrap_inputs(inputs))
        return {k: v.data.copy() for k, v in outs.items()}

    def grad(self, inputs, objective="objective", wrt=None):
        for p in self.params.values():
            p.zero_grad()
        outs = self.build(self.params, self._wrap_inputs(inputs))
        if objective not in outs:
            raise ValueError("unknown objective '%s'" % objective)
        obj = outs[objective]
        if obj.data.ndim != 0 and obj.data.size != 1:
            raise ValueError("objective '%s' is not scalar (shape %s)"
                             % (objective, obj.data.shape))
        obj.backward()
        names = wrt if wrt is not None else list(self.params)
        result = {}
        for n in names:
            if n not in self.params:
                raise ValueError("unknown parameter '%s'" % n)
            p = self.params[n]
            result[n] = (p.grad if p.grad is not None
                         else np.zeros_like(p.data))
        return result


def forward(graph, inputs):
    return graph.forward(inputs)


def grad(graph, inputs, objective="objective", wrt=None):
    return graph.grad(inputs, objective=objective, wrt=wrt)
