"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tape records every operation as a Node in construction order, so the
reverse topological order is just the recorded list reversed.  Each node
keeps vector-Jacobian closures for its parents; gradients from multiple
consumers accumulate additively.  The graph is rebuilt from the raw
parameter arrays on every iteration, which keeps memory bounded by a
single forward pass and avoids stale values.

Every forward value is checked for finiteness at creation.  A NaN or inf
raises NonFiniteError at the op that produced it instead of silently
corrupting the following update.
"""

import numpy as np


class NonFiniteError(ArithmeticError):
    """A forward value or parameter gradient is NaN or infinite."""


def _unbroadcast(g, shape):
    """Sum a gradient over the axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Node:
    """One recorded value.  grad is populated by Tape.backward."""

    __slots__ = ("value", "grad", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Operation recorder.  All ops are methods so they share the record."""

    def __init__(self):
        self._nodes = []
        self._params = {}

    # -- node creation -----------------------------------------------------

    def _record(self, value, parents=(), vjps=(), op="op"):
        value = np.asarray(value, dtype=np.float64)
        # A single sum is NaN or inf iff any entry is non-finite (entries
        # here are O(1), so no spurious overflow of the sum itself).
        if not np.isfinite(value.sum()):
            raise NonFiniteError(f"non-finite value produced by '{op}'")
        node = Node(value, parents, vjps)
        self._nodes.append(node)
        return node

    def param(self, value, name=None):
        """Wrap a trainable array.  Named params appear in param_grads."""
        node = self._record(value, op=f"param:{name or 'unnamed'}")
        if name is not None:
            if name in self._params:
                raise ValueError(f"duplicate parameter name '{name}'")
            self._params[name] = node
        return node

    def const(self, value):
        """Wrap a non-trainable array or float; receives no gradient."""
        return self._record(value, op="const")

    def _wrap(self, x):
        return x if isinstance(x, Node) else self.const(x)

    # -- elementwise and linear ops ----------------------------------------

    def add(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        return self._record(
            a.value + b.value,
            (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
            op="add",
        )

    def sub(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        return self._record(
            a.value - b.value,
            (a, b),
            (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
            op="sub",
        )

    def mul(self, a, b):
        a, b = self._wrap(a), self._wrap(b)
        return self._record(
            a.value * b.value,
            (a, b),
            (
                lambda g: _unbroadcast(g * b.value, a.shape),
                lambda g: _unbroadcast(g * a.value, b.shape),
            ),
            op="mul",
        )

    def matmul(self, a, b):
        return self._record(
            a.value @ b.value,
            (a, b),
            (lambda g: g @ b.value.T, lambda g: a.value.T @ g),
            op="matmul",
        )

    def relu(self, x):
        mask = x.value > 0.0
        return self._record(
            np.where(mask, x.value, 0.0), (x,), (lambda g: g * mask,), op="relu"
        )

    def powf(self, x, p):
        """Elementwise x**p for a Python float p.

        Non-integer exponents assume a positive domain; a zero or negative
        base then yields NaN and trips the finiteness check here or at the
        gradient consumer.
        """
        p = float(p)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = x.value**p

        def vjp(g):
            with np.errstate(invalid="ignore", divide="ignore"):
                return g * p * x.value ** (p - 1.0)

        return self._record(out, (x,), (vjp,), op=f"powf({p})")

    def exp(self, x):
        with np.errstate(over="ignore"):
            out = np.exp(x.value)
        return self._record(out, (x,), (lambda g: g * out,), op="exp")

    def clamp_min(self, x, floor):
        """max(x, floor).  Gradient flows only where x exceeds the floor."""
        floor = float(floor)
        mask = x.value > floor
        return self._record(
            np.maximum(x.value, floor), (x,), (lambda g: g * mask,), op="clamp_min"
        )

    # -- reductions and shape ops --------------------------------------------

    def mean(self, x):
        size = x.value.size
        return self._record(
            x.value.mean(),
            (x,),
            (lambda g: np.broadcast_to(g / size, x.shape).copy(),),
            op="mean",
        )

    def sum_axis(self, x, axis):
        return self._record(
            x.value.sum(axis=axis),
            (x,),
            (lambda g: np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),),
            op="sum_axis",
        )

    def tile_rows(self, x, reps):
        """Stack reps copies of a (M, D) block into (reps*M, D).

        Backward sums the gradient over the copies, so a stratified batch
        that repeats each row costs one pass through the small block.
        """
        m = x.shape[0]
        return self._record(
            np.tile(x.value, (reps, 1)),
            (x,),
            (lambda g: g.reshape(reps, m, -1).sum(axis=0),),
            op="tile_rows",
        )

    def stop_gradient(self, x):
        """Pass the value through and block the gradient."""
        return self._record(x.value, op="stop_gradient")

    # -- fused and composite ops ---------------------------------------------

    def softmax_cross_entropy(self, logits, labels):
        """Mean cross-entropy in nats between softmax(logits) and labels.

        logits is (B, M); labels an int array of shape (B,).  Fusing the
        softmax keeps the backward pass the exact (softmax - onehot) / B
        form, which stays finite for any logit magnitude.
        """
        z = logits.value
        labels = np.asarray(labels)
        b = z.shape[0]
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        sez = ez.sum(axis=1, keepdims=True)
        lse = np.log(sez)[:, 0] + zmax[:, 0]
        loss = np.mean(lse - z[np.arange(b), labels])
        softmax = ez / sez

        def vjp(g):
            grad = softmax.copy()
            grad[np.arange(b), labels] -= 1.0
            return grad * (g / b)

        return self._record(loss, (logits,), (vjp,), op="softmax_cross_entropy")

    def power_normalize(self, x):
        """Scale a (M, 2N) coordinate block so the mean row power is 1.

        Row power is the sum of the squared coordinates in the row; the
        scale is a single positive constant, so the geometry is preserved
        and gradients flow through the normalization.
        """
        msq = self.mean(self.mul(x, x))
        mean_power = self.mul(msq, float(x.shape[1]))
        return self.mul(x, self.powf(mean_power, -0.5))

    # -- backward ------------------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(node) into .grad for every reachable node."""
        if loss.value.shape != ():
            raise ValueError(f"backward target must be scalar, got shape {loss.value.shape}")
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones(())
        for node in reversed(self._nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.zeros(parent.shape)
                parent.grad += contrib

    def param_grads(self):
        """Gradients of named parameters after backward, validated finite."""
        out = {}
        for name, node in self._params.items():
            g = node.grad if node.grad is not None else np.zeros(node.shape)
            if not np.isfinite(g.sum()):
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
            out[name] = g
        return out


class Adam:
    """Adam optimizer with bias correction, updating arrays in place.

    lr_overrides maps parameter names to their own learning rate; anything
    not listed uses lr.
    """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, lr_overrides=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_overrides = dict(lr_overrides or {})
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name not in self._m:
                self._m[name] = np.zeros_like(params[name])
                self._v[name] = np.zeros_like(params[name])
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1**self.t)
            vhat = v / (1.0 - b2**self.t)
            lr = self.lr_overrides.get(name, self.lr)
            params[name] -= lr * mhat / (np.sqrt(vhat) + self.eps)


def gradient_check(f, params, grads, n_samples=5, h=1e-6, seed=0, atol=1e-4):
    """Max relative error between analytic grads and central differences.

    f(params) must return the scalar loss as a pure function of the mapping
    of name -> ndarray.  For each parameter, n_samples coordinates are
    drawn with the given seed, perturbed by +-h, and compared against the
    entries of grads.

    The relative error denominator is floored at atol: central differences
    of an O(1) loss carry ~eps_machine/h of absolute noise (~1e-10 here),
    so a coordinate whose true gradient is below ~1e-5 cannot be resolved
    to any relative accuracy by the oracle itself.  Below the floor the
    comparison is effectively absolute at atol * tolerance, far tighter
    than any real vjp defect would land.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        k = min(n_samples, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            up = f(params)
            flat[i] = keep - h
            dn = f(params)
            flat[i] = keep
            fd = (up - dn) / (2.0 * h)
            an = grads[name].reshape(-1)[i]
            err = abs(fd - an) / max(abs(fd), abs(an), atol)
            worst = max(worst, err)
    return worst
