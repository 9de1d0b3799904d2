"""Parameter storage, Adam, and the finite-difference gradient verifier."""

import numpy as np

from .tensor import Tensor, backward, no_grad


class ParameterStore:
    """Named trainable tensors plus Adam moments and a step counter."""

    def __init__(self):
        self.params = {}
        self.m = {}
        self.v = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        return t

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(sorted(self.params))

    def items(self):
        return ((k, self.params[k]) for k in sorted(self.params))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def num_values(self):
        return sum(t.data.size for t in self.params.values())

    def state_arrays(self):
        """Flat name -> array map covering parameters and optimizer moments."""
        out = {}
        for name, t in self.params.items():
            out[f"param/{name}"] = t.data
            if name in self.m:
                out[f"adam_m/{name}"] = self.m[name]
                out[f"adam_v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, step):
        for key, arr in arrays.items():
            kind, name = key.split("/", 1)
            if kind == "param":
                if name in self.params:
                    self.params[name].data = np.array(arr, dtype=np.float64)
                else:
                    self.add(name, arr)
            elif kind == "adam_m":
                self.m[name] = np.array(arr, dtype=np.float64)
            elif kind == "adam_v":
                self.v[name] = np.array(arr, dtype=np.float64)
        self.step = int(step)

    def copy(self):
        other = ParameterStore()
        other.load_state_arrays(self.state_arrays(), self.step)
        return other


def adam_step(store, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter, then zero grads."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if name not in store.m:
            store.m[name] = np.zeros_like(p.data)
            store.v[name] = np.zeros_like(p.data)
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.grad = None


def finite_diff_check(f, store, eps=1e-6, names=None):
    """Max relative error between reverse-mode and central differences.

    ``f(store)`` must return a scalar Tensor and be deterministic. The error
    per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    names = list(store) if names is None else list(names)
    store.zero_grad()
    loss = f(store)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss is not finite")
    backward(loss)
    analytic = {n: (store[n].grad.copy() if store[n].grad is not None else np.zeros_like(store[n].data))
                for n in names}
    store.zero_grad()

    worst = 0.0
    with no_grad():
        for n in names:
            data = store[n].data
            flat = data.reshape(-1)
            a_flat = analytic[n].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f(store).data)
                flat[i] = orig - eps
                down = float(f(store).data)
                flat[i] = orig
                num = (up - down) / (2.0 * eps)
                a = a_flat[i]
                if not (np.isfinite(num) and np.isfinite(a)):
                    raise FloatingPointError(f"non-finite gradient at {n}[{i}]")
                err = abs(a - num) / max(1.0, abs(a), abs(num))
                worst = max(worst, err)
    return worst
