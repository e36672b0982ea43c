"""Adaptive-moment optimizer with step-decay learning rate, plus a
finite-difference gradient checker used by the test suite and selfcheck."""
import numpy as np

from bevdrive import tensor as T


class OptimState:
    """Per-parameter first/second moment buffers and the decay schedule.

    The effective learning rate is ``lr * decay_factor ** (step // decay_interval)``
    when an interval is configured, counted in optimizer steps.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 decay_factor=1.0, decay_interval=None):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay_factor = float(decay_factor)
        self.decay_interval = decay_interval
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def effective_lr(self):
        if self.decay_interval:
            return self.lr * self.decay_factor ** (self.step // self.decay_interval)
        return self.lr


def adam_step(state, grads=None):
    """One bias-corrected adaptive-moment update over state.params.

    grads defaults to each parameter's accumulated .grad; missing grads are
    treated as zero. Gradients are cleared after the update.
    """
    lr = state.effective_lr()
    state.step += 1
    t = state.step
    b1, b2, eps = state.beta1, state.beta2, state.eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(state.params):
        g = grads[i] if grads is not None else p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise T.ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)
        p.grad = None


def grad_check(fn, points, epsilon=1e-5):
    """Max relative error between analytic and central-difference gradients.

    fn maps a list of Tensors to a scalar Tensor; called in 64-bit mode.
    Error per element: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    with T.precision("f64"):
        pts = [T.Tensor(p.data.astype(np.float64), requires_grad=True) for p in points]
        loss = fn(pts)
        T.backward(loss)
        worst = 0.0
        with T.no_grad():
            for p in pts:
                analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
                flat = p.data.ravel()
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + epsilon
                    hi = fn(pts).item()
                    flat[i] = orig - epsilon
                    lo = fn(pts).item()
                    flat[i] = orig
                    numeric = (hi - lo) / (2.0 * epsilon)
                    a = analytic.ravel()[i]
                    err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
                    worst = max(worst, err)
    return worst
