"""Minimal dense feed-forward network stack with analytic backprop and Adam.

Everything runs in float64 and is deterministic given a seed. Networks are
plain sequential stacks of affine layers with relu / sigmoid / linear
activations; composite architectures (branched critics) are assembled from
several ``Mlp`` instances by the agent code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

_ACTIVATIONS = ("relu", "sigmoid", "linear")

_MLP_FORMAT = "evcsim-mlp"
_MLP_VERSION = 1


class ShapeError(ValueError):
    """Input or upstream-gradient dimensions do not match the network."""


class StateError(RuntimeError):
    """Operation requires cached forward activations that are not present."""


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer: ``y = act(x @ w + b)`` with ``w`` of shape (n_in, n_out)."""

    n_in: int
    n_out: int
    activation: str = "linear"

    def __post_init__(self) -> None:
        if self.n_in < 1 or self.n_out < 1:
            raise ShapeError(f"layer dims must be positive, got {self.n_in}x{self.n_out}")
        if self.activation not in _ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")


@dataclass
class OptimConfig:
    """Adam hyper-parameters plus L2 and global gradient-norm clipping."""

    lr: float = 1e-3
    grad_clip_norm: float = 1.0
    l2: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # Numerically stable piecewise logistic.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


class Mlp:
    """Sequential dense network holding its own parameters and Adam state.

    ``forward`` caches activations; ``backward`` consumes that cache and
    returns exact reverse-mode gradients of ``sum(output * upstream)``.
    """

    def __init__(self, layers: Sequence[LayerSpec], seed: int):
        layers = tuple(layers)
        if not layers:
            raise ShapeError("network needs at least one layer")
        for prev, cur in zip(layers, layers[1:]):
            if prev.n_out != cur.n_in:
                raise ShapeError(
                    f"layer chain mismatch: {prev.n_out} outputs feed {cur.n_in} inputs"
                )
        self.layers = layers
        self.seed = int(seed)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for spec in layers:
            if spec.activation == "relu":
                limit = np.sqrt(6.0 / spec.n_in)
            else:
                limit = np.sqrt(6.0 / (spec.n_in + spec.n_out))
            w = rng.uniform(-limit, limit, size=(spec.n_in, spec.n_out))
            self.weights.append(np.asarray(w, dtype=np.float64))
            self.biases.append(np.zeros(spec.n_out, dtype=np.float64))
        self._cache: tuple[list[np.ndarray], list[np.ndarray]] | None = None

    # ---------------------------------------------------------------- shapes

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # --------------------------------------------------------------- forward

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the network; accepts a single vector or an (n, d) batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"expected input with {self.n_in} features, got shape {x.shape}")
        acts = [x]
        pres = []
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            z = acts[-1] @ w + b
            pres.append(z)
            acts.append(_act(spec.activation, z))
        self._cache = (acts, pres)
        out = acts[-1]
        return out[0] if single else out

    # -------------------------------------------------------------- backward

    def backward(
        self, upstream: np.ndarray
    ) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Reverse-mode gradients for the most recent ``forward`` call.

        Returns ``(per_layer, input_grad)`` where ``per_layer[k]`` is
        ``(dW_k, db_k)``. Gradients are of ``sum(output * upstream)``, so mean
        losses are handled by pre-scaling ``upstream``.
        """
        if self._cache is None:
            raise StateError("backward called without a cached forward pass")
        acts, pres = self._cache
        u = np.asarray(upstream, dtype=np.float64)
        single = u.ndim == 1
        if single:
            u = u[None, :]
        if u.shape != acts[-1].shape:
            raise ShapeError(
                f"upstream shape {u.shape} does not match output shape {acts[-1].shape}"
            )
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.layers)  # type: ignore
        delta = u
        for k in range(len(self.layers) - 1, -1, -1):
            spec = self.layers[k]
            delta = delta * _act_grad(spec.activation, pres[k], acts[k + 1])
            grads[k] = (acts[k].T @ delta, delta.sum(axis=0))
            delta = delta @ self.weights[k].T
        return grads, (delta[0] if single else delta)

    # ------------------------------------------------------------ parameters

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.param_arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected flat vector of length {self.n_params}")
        ofs = 0
        for a in self.param_arrays():
            a[...] = vec[ofs : ofs + a.size].reshape(a.shape)
            ofs += a.size

    def copy_from(self, other: "Mlp") -> None:
        if [tuple(s.__dict__.values()) for s in self.layers] != [
            tuple(s.__dict__.values()) for s in other.layers
        ]:
            raise ShapeError("cannot copy parameters between different topologies")
        for dst, src in zip(self.param_arrays(), other.param_arrays()):
            dst[...] = src

    # --------------------------------------------------------- serialization

    def manifest(self) -> dict:
        return {
            "format": _MLP_FORMAT,
            "version": _MLP_VERSION,
            "seed": self.seed,
            "layers": [[s.n_in, s.n_out, s.activation] for s in self.layers],
            "dtype": "<f8",
        }

    def to_bytes(self) -> bytes:
        header = json.dumps(self.manifest(), sort_keys=True).encode("utf-8")
        body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.param_arrays())
        return header + b"\n" + body

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Mlp":
        head, _, body = blob.partition(b"\n")
        meta = json.loads(head.decode("utf-8"))
        if meta.get("format") != _MLP_FORMAT or meta.get("version") != _MLP_VERSION:
            raise ValueError("unrecognized network serialization")
        specs = [LayerSpec(int(i), int(o), str(a)) for i, o, a in meta["layers"]]
        net = cls(specs, seed=int(meta.get("seed", 0)))
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        net.set_flat(flat)
        return net

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


class AdamState:
    """Adam moments for an arbitrary list of parameter arrays.

    One instance may cover several networks (e.g. the branched critic), so the
    gradient-norm clip is global across everything it optimizes.
    """

    def __init__(self, params: Sequence[np.ndarray]):
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(
        self,
        params: Sequence[np.ndarray],
        grads: Sequence[np.ndarray],
        cfg: OptimConfig,
    ) -> None:
        """In-place update: L2 added to gradients, global-norm clip, then Adam."""
        if len(params) != len(self._m) or len(grads) != len(self._m):
            raise ShapeError("parameter/gradient list does not match optimizer state")
        if cfg.l2:
            grads = [g + cfg.l2 * p for g, p in zip(grads, params)]
        else:
            grads = [np.asarray(g, dtype=np.float64) for g in grads]
        if cfg.grad_clip_norm:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if total > cfg.grad_clip_norm:
                scale = cfg.grad_clip_norm / total
                grads = [g * scale for g in grads]
        self.t += 1
        b1c = 1.0 - cfg.beta1**self.t
        b2c = 1.0 - cfg.beta2**self.t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            p -= cfg.lr * (m / b1c) / (np.sqrt(v / b2c) + cfg.eps)


def adam_step(net: Mlp, grads: Sequence[tuple[np.ndarray, np.ndarray]], cfg: OptimConfig) -> Mlp:
    """Apply one Adam step to ``net`` given per-layer ``(dW, db)`` gradients.

    The optimizer state is created lazily and kept on the network instance.
    """
    flat_grads: list[np.ndarray] = []
    for dw, db in grads:
        flat_grads.append(dw)
        flat_grads.append(db)
    opt = getattr(net, "_adam", None)
    if opt is None:
        opt = AdamState(net.param_arrays())
        net._adam = opt  # type: ignore[attr-defined]
    opt.step(net.param_arrays(), flat_grads, cfg)
    return net
