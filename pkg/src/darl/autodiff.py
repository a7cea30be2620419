"""Dense-tensor reverse-mode autodiff on float64 numpy arrays.

Small tape-based engine covering exactly the layer set the networks in this
project need: valid (unpadded) conv2d, linear, relu/tanh/exp/log, layernorm,
log_softmax, concat, reductions, and a gradient-reversal pseudo-op. Everything
is float64; gradients accumulate additively until zero_grads().
"""

import numpy as np

_FLOAT = np.float64


class Tensor:
    """N-d float64 array with optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_FLOAT)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """Value-equal tensor with no grad flag and no tape linkage."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    # convenience operators (all route through the taped ops below)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Tape:
    """Ordered record of ops for one backward pass.

    Use as a context manager; ops executed inside record themselves when any
    input is live (a requires_grad leaf or an earlier output on this tape).
    """

    _active = None

    def __init__(self):
        self.nodes = []  # (out_tensor, input_tensors, backward_fn)
        self.next_id = 0
        self._live = set()

    def __enter__(self):
        if Tape._active is not None:
            raise RuntimeError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False

    def _is_live(self, t):
        return t.requires_grad or id(t) in self._live

    def record(self, out, inputs, backward_fn):
        self.nodes.append((out, inputs, backward_fn))
        self._live.add(id(out))
        self.next_id += 1


class no_grad:
    """Suspend recording on the active tape (target/eval branches)."""

    def __enter__(self):
        self._saved = Tape._active
        Tape._active = None
        return self

    def __exit__(self, *exc):
        Tape._active = self._saved
        return False


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


def _record(out, inputs, backward_fn):
    tape = Tape._active
    if tape is not None and any(tape._is_live(t) for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def backward(tape, loss):
    """Reverse sweep: writes d(loss)/d(leaf) into each requires_grad leaf.

    Gradients accumulate additively across calls; callers zero explicitly.
    """
    if loss.size != 1:
        raise ContractError("backward requires a scalar loss, got shape %s" % (loss.shape,))
    grads = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for out, inputs, backward_fn in reversed(tape.nodes):
        gy = grads.pop(id(out), None)
        if gy is None:
            continue
        tensors.pop(id(out), None)
        for t, g in zip(inputs, backward_fn(gy)):
            if g is None:
                continue
            if tape._is_live(t):
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    tensors[key] = t
    for key, g in grads.items():
        t = tensors[key]
        if t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g


def zero_grads(params):
    for p in params:
        p.zero_grad()


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def bwd(gy):
        return _unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def bwd(gy):
        return _unbroadcast(gy * b.data, a.shape), _unbroadcast(gy * a.data, b.shape)

    return _record(out, (a, b), bwd)


def relu(x):
    out = Tensor(np.maximum(x.data, 0.0))
    mask = x.data > 0.0

    def bwd(gy):
        return (gy * mask,)

    return _record(out, (x,), bwd)


def tanh(x):
    out = Tensor(np.tanh(x.data))

    def bwd(gy):
        return (gy * (1.0 - out.data * out.data),)

    return _record(out, (x,), bwd)


def exp(x):
    out = Tensor(np.exp(x.data))

    def bwd(gy):
        return (gy * out.data,)

    return _record(out, (x,), bwd)


def log(x):
    out = Tensor(np.log(x.data))

    def bwd(gy):
        return (gy / x.data,)

    return _record(out, (x,), bwd)


def mean(x):
    out = Tensor(x.data.mean())
    n = x.data.size

    def bwd(gy):
        return (np.full_like(x.data, float(gy) / n),)

    return _record(out, (x,), bwd)


def sum_squares(x):
    out = Tensor(np.sum(x.data * x.data))

    def bwd(gy):
        return (2.0 * float(gy) * x.data,)

    return _record(out, (x,), bwd)


def sum_axis(x, axis):
    out = Tensor(x.data.sum(axis=axis))

    def bwd(gy):
        return (np.broadcast_to(np.expand_dims(gy, axis), x.shape).copy(),)

    return _record(out, (x,), bwd)


def concat(tensors, axis):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(gy):
        return tuple(np.split(gy, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def select_labels(logp, labels):
    """Pick logp[i, labels[i]] per row; backward scatters into the row."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= logp.shape[1]:
        raise DimensionError(
            "select_labels: label out of range [0, %d)" % logp.shape[1]
        )
    n = logp.shape[0]
    out = Tensor(logp.data[np.arange(n), labels])

    def bwd(gy):
        g = np.zeros_like(logp.data)
        g[np.arange(n), labels] = gy
        return (g,)

    return _record(out, (logp,), bwd)


# ---------------------------------------------------------------------------
# layers


def linear(x, w, b):
    """x: (N, in), w: (in, out), b: (out,)."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            "linear: input features %d != weight rows %d" % (x.shape[-1], w.shape[0])
        )
    out = Tensor(x.data @ w.data + b.data)

    def bwd(gy):
        return gy @ w.data.T, x.data.T @ gy, gy.sum(axis=0)

    return _record(out, (x, w, b), bwd)


def _im2col(x, kh, kw, stride):
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
    )
    return windows.reshape(n * oh * ow, c * kh * kw), oh, ow


def conv2d(x, w, b, stride):
    """Valid convolution. x: (N,C,H,W), w: (F,C,kh,kw), b: (F,)."""
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError("conv2d: input channels %d != kernel channels %d" % (c, cw))
    if h < kh or wd < kw:
        raise DimensionError("conv2d: input %dx%d smaller than kernel %dx%d" % (h, wd, kh, kw))
    cols, oh, ow = _im2col(x.data, kh, kw, stride)
    wmat = w.data.reshape(f, -1)
    y = cols @ wmat.T + b.data
    out = Tensor(np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)))

    def bwd(gy):
        gmat = gy.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = gmat.sum(axis=0)
        gcols = (gmat @ wmat).reshape(n, oh, ow, c, kh, kw)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def nchw_to_nhwc(x):
    """Layout change for the conv stack; backward transposes the gradient."""
    out = Tensor(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)))

    def bwd(gy):
        return (gy.transpose(0, 3, 1, 2),)

    return _record(out, (x,), bwd)


def conv2d_nhwc(x, w, b, stride):
    """Valid convolution, channels-last. x: (N,H,W,C), w: (kh,kw,C,F).

    Same math as conv2d; this layout keeps im2col rows near-contiguous,
    which is what makes the training loop fast.
    """
    n, h, wd, c = x.shape
    kh, kw, cw, f = w.shape
    if c != cw:
        raise DimensionError("conv2d: input channels %d != kernel channels %d" % (c, cw))
    if h < kh or wd < kw:
        raise DimensionError("conv2d: input %dx%d smaller than kernel %dx%d" % (h, wd, kh, kw))
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    sn, sh, sw, sc = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data,
        shape=(n, oh, ow, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
    )
    cols = windows.reshape(n * oh * ow, kh * kw * c)
    wmat = w.data.reshape(kh * kw * c, f)
    out = Tensor((cols @ wmat + b.data).reshape(n, oh, ow, f))

    def bwd(gy):
        gmat = gy.reshape(-1, f)
        gw = (cols.T @ gmat).reshape(w.shape)
        gb = gmat.sum(axis=0)
        gcols = (gmat @ wmat.T).reshape(n, oh, ow, kh, kw, c)
        gx = np.zeros_like(x.data)
        for i in range(kh):
            for j in range(kw):
                gx[:, i : i + stride * oh : stride, j : j + stride * ow : stride, :] += (
                    gcols[:, :, :, i, j, :]
                )
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


_LN_EPS = 1e-5


def layernorm(x, gamma, beta):
    """Normalize over the last axis, then elementwise affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    d = x.shape[-1]

    def bwd(gy):
        gxhat = gy * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = _unbroadcast(gy * xhat, gamma.shape)
        gbeta = _unbroadcast(gy, beta.shape)
        return gx, ggamma, gbeta

    return _record(out, (x, gamma, beta), bwd)


def log_softmax(x):
    """Log-softmax over the last axis; rows satisfy logsumexp(out) == 0."""
    m = x.data.max(axis=-1, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse)

    def bwd(gy):
        return (gy - np.exp(out.data) * gy.sum(axis=-1, keepdims=True),)

    return _record(out, (x,), bwd)


def grad_reverse(z, lam):
    """Identity forward; backward multiplies the incoming gradient by -lam."""
    if lam < 0:
        raise ValueError("grad_reverse: lambda must be nonnegative, got %g" % lam)
    out = Tensor(z.data.copy())

    def bwd(gy):
        return (-lam * gy,)

    return _record(out, (z,), bwd)


_LOG_2PI = np.log(2.0 * np.pi)
_TANH_EPS = 1e-6


def gaussian_rsample(mu, log_std, eps):
    """Reparameterized squashed-Gaussian sample.

    Returns (action, log_prob): action = tanh(mu + exp(log_std) * eps) with
    the tanh Jacobian correction sum(log(1 - action^2 + 1e-6)) subtracted from
    the Gaussian log-density. log_prob has shape (N,).
    """
    eps = np.asarray(eps, dtype=_FLOAT)
    std = exp(log_std)
    u = add(mu, mul(std, eps))
    a = tanh(u)
    # Gaussian log-density of u under N(mu, std): -0.5*eps^2 - log_std - 0.5*log(2pi)
    const = -0.5 * eps * eps - 0.5 * _LOG_2PI
    logp_gauss = add(mul(log_std, -1.0), const)
    correction = log(add(mul(mul(a, a), -1.0), 1.0 + _TANH_EPS))
    logp = sum_axis(add(logp_gauss, mul(correction, -1.0)), axis=-1)
    return a, logp
