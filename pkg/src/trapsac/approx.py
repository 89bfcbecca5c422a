"""Small ReLU MLPs with hand-written reverse mode, Adam, and checkpoints."""

import json

import numpy as np

from . import kernels

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = float(np.log(PROB_FLOOR))
CHECKPOINT_VERSION = 1


class Mlp:
    """Fully connected network ``in -> hidden... -> out`` with ReLU hidden units.

    Parameters are stored as ``[W0, b0, W1, b1, ...]`` with ``W`` shaped
    ``(fan_in, fan_out)`` so that a batch ``x`` of shape ``(B, fan_in)`` maps
    to ``x @ W + b``.
    """

    def __init__(self, sizes, rng: np.random.Generator | None = None,
                 out_scale: float = 0.01, dtype=np.float64):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {sizes}")
        self.dtype = np.dtype(dtype)
        shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self.shapes = shapes
        # every parameter is a view into one buffer so optimisers see a flat vector
        self.buffer = np.zeros(sum(int(np.prod(sh)) for sh in shapes), self.dtype)
        self.params = self._views(self.buffer)
        if rng is None:
            return
        last = len(shapes) // 2 - 1
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, (fan_in, fan_out))
            b = rng.uniform(-bound, bound, fan_out)
            if k == last:
                w *= out_scale
                b *= out_scale
            self.params[2 * k][...] = w
            self.params[2 * k + 1][...] = b

    def _views(self, flat):
        views, i = [], 0
        for sh in self.shapes:
            size = int(np.prod(sh))
            views.append(flat[i:i + size].reshape(sh))
            i += size
        return views

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, x, cache: bool = False):
        """Return the output (and the activations needed by :meth:`backward`)."""
        h = np.asarray(x, dtype=self.dtype)
        acts = [h]
        last = self.n_layers - 1
        for k in range(self.n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < last:
                np.maximum(h, 0.0, out=h)
            acts.append(h)
        if cache:
            return h, acts
        return h

    __call__ = forward

    def backward(self, grad_out, acts, flat: bool = False):
        """Gradients of a scalar loss with respect to every parameter.

        ``grad_out`` is dLoss/dOutput for the batch that produced ``acts``.
        Returns a list shaped like :attr:`params`, or with ``flat=True`` one
        vector laid out like :attr:`buffer`.
        """
        g = np.asarray(grad_out, dtype=self.dtype)
        gflat = np.empty_like(self.buffer)
        grads = self._views(gflat)
        for k in range(self.n_layers - 1, -1, -1):
            np.matmul(acts[k].T, g, out=grads[2 * k])
            np.sum(g, axis=0, out=grads[2 * k + 1])
            if k > 0:
                g = g @ self.params[2 * k].T
                g *= acts[k] > 0
        return gflat if flat else grads

    def copy(self) -> "Mlp":
        twin = Mlp(self.sizes, None, dtype=self.dtype)
        twin.buffer[...] = self.buffer
        return twin

    def flat(self) -> np.ndarray:
        return self.buffer.copy()

    def set_flat(self, vec) -> None:
        self.buffer[...] = vec

    def check_finite(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p)):
                raise FloatingPointError("non-finite network parameter")


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_head(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Categorical probabilities and floored log-probabilities from logits."""
    logp = log_softmax(logits)
    probs = np.exp(logp)
    return probs, np.maximum(logp, LOG_PROB_FLOOR)


class Adam:
    """Adaptive-moment optimiser with bias correction over one flat buffer."""

    def __init__(self, buffer: np.ndarray, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if buffer.ndim != 1:
            raise ValueError("Adam works on a flat parameter buffer")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros_like(buffer)
        self.v = np.zeros_like(buffer)

    def step(self, buffer: np.ndarray, grad: np.ndarray) -> None:
        """Update ``buffer`` in place from the flat gradient ``grad``."""
        if buffer.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {buffer.shape}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        # folding both corrections into the step size and epsilon gives
        # exactly lr * mhat / (sqrt(vhat) + eps)
        step = self.lr * np.sqrt(c2) / c1
        kernels.adam_update(buffer, grad.astype(buffer.dtype, copy=False), self.m, self.v,
                            step, self.beta1, self.beta2, self.eps * np.sqrt(c2))


def soft_update(target: Mlp, online: Mlp, tau: float) -> None:
    """``target <- (1 - tau) * target + tau * online``, elementwise."""
    kernels.polyak_blend(target.buffer, online.buffer, tau)


def save_checkpoint(path, nets: dict, meta: dict | None = None) -> None:
    """Write named networks to an ``.npz`` archive with a JSON header."""
    header = {"format_version": CHECKPOINT_VERSION, "meta": meta or {},
              "nets": {name: {"sizes": list(net.sizes), "dtype": net.dtype.str}
                       for name, net in nets.items()}}
    arrays = {"__header__": np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8)}
    for name, net in nets.items():
        for k, p in enumerate(net.params):
            arrays[f"{name}/{k}"] = p
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(nets, meta)``."""
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode())
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
        nets = {}
        for name, entry in header["nets"].items():
            net = Mlp(entry["sizes"], None, dtype=np.dtype(entry["dtype"]))
            for k, p in enumerate(net.params):
                p[...] = data[f"{name}/{k}"]
            nets[name] = net
    return nets, header["meta"]
