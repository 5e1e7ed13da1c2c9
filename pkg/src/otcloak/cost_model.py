"""Learned ground cost c(z, z') = ||L (h(z) - h(z'))||^2 with a small MLP h.

Inputs are standardized per coordinate before the MLP. ReLU follows every
affine layer except the last. Gradients are written out by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import EmptyNeighborhood, FormatError, ShapeError
from .features import NeighborMeasure
from .ot import CostMatrix

MAGIC = b"OTGEO1"
FORMAT_VERSION = 1


@dataclass
class OtGeometry:
    weights: list  # [(W (out, in), b (out,)), ...]
    L: np.ndarray
    feat_mean: np.ndarray
    feat_scale: np.ndarray
    seed: int = 0
    version: int = FORMAT_VERSION

    @property
    def input_dim(self) -> int:
        return self.weights[0][0].shape[1]

    @property
    def embed_dim(self) -> int:
        return self.L.shape[0]

    @property
    def M(self) -> np.ndarray:
        return self.L.T @ self.L

    def copy(self) -> "OtGeometry":
        return OtGeometry([(W.copy(), b.copy()) for W, b in self.weights], self.L.copy(),
                          self.feat_mean.copy(), self.feat_scale.copy(), self.seed, self.version)

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in self.weights:
            out += [W, b]
        return out + [self.L]

    def equals(self, other: "OtGeometry") -> bool:
        mine = self.params() + [self.feat_mean, self.feat_scale]
        theirs = other.params() + [other.feat_mean, other.feat_scale]
        return (self.seed == other.seed and len(mine) == len(theirs)
                and all(x.shape == y.shape and x.tobytes() == y.tobytes() for x, y in zip(mine, theirs)))


@dataclass
class CostGradients:
    weights: list
    L: np.ndarray

    @classmethod
    def zeros_like(cls, geo: OtGeometry) -> "CostGradients":
        return cls([(np.zeros_like(W), np.zeros_like(b)) for W, b in geo.weights], np.zeros_like(geo.L))

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in self.weights:
            out += [W, b]
        return out + [self.L]

    def __iadd__(self, other: "CostGradients"):
        for (W, b), (dW, db) in zip(self.weights, other.weights):
            W += dW
            b += db
        self.L += other.L
        return self

    def scaled(self, s: float) -> "CostGradients":
        return CostGradients([(W * s, b * s) for W, b in self.weights], self.L * s)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(p * p) for p in self.params())))


def init_geometry(input_dim: int, hidden: int = 128, embed: int = 256, seed: int = 0,
                  feat_mean=None, feat_scale=None) -> OtGeometry:
    """Fan-in scaled uniform MLP weights and L = I."""
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in ((input_dim, hidden), (hidden, embed)):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append((rng.uniform(-bound, bound, (fan_out, fan_in)),
                        rng.uniform(-bound, bound, fan_out)))
    mean = np.zeros(input_dim) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64)
    scale = np.ones(input_dim) if feat_scale is None else np.asarray(feat_scale, dtype=np.float64)
    return OtGeometry(weights, np.eye(embed), mean.copy(), scale.copy(), int(seed))


def standardization(atoms: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and scale; constant columns get scale 1."""
    atoms = np.asarray(atoms, dtype=np.float64)
    mean = atoms.mean(axis=0)
    std = atoms.std(axis=0)
    return mean, np.where(std > 1e-12, std, 1.0)


def _check_input(geo, X):
    X = np.asarray(X, dtype=np.float64)
    squeeze = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != geo.input_dim:
        raise ShapeError(f"input dimension {X.shape[1]} != {geo.input_dim}")
    return X, squeeze


def _forward(geo: OtGeometry, X: np.ndarray):
    """Returns the list of layer inputs and the final embeddings."""
    h = (X - geo.feat_mean) / geo.feat_scale
    acts = [h]
    last = len(geo.weights) - 1
    for k, (W, b) in enumerate(geo.weights):
        h = h @ W.T + b
        if k < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def embed(geo: OtGeometry, z) -> np.ndarray:
    X, squeeze = _check_input(geo, z)
    E = _forward(geo, X)[-1]
    return E[0] if squeeze else E


def project(geo: OtGeometry, X) -> np.ndarray:
    """Rows of L h(x); squared distances between rows are the ground costs."""
    X, _ = _check_input(geo, X)
    return _forward(geo, X)[-1] @ geo.L.T


def pairwise_sq(Qa: np.ndarray, Qb: np.ndarray) -> np.ndarray:
    diff = Qa[:, None, :] - Qb[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def ground_cost(geo: OtGeometry, z, zp) -> float:
    q = project(geo, np.stack([np.asarray(z, dtype=np.float64), np.asarray(zp, dtype=np.float64)]))
    d = q[0] - q[1]
    return float(d @ d)


def cost_matrix_for(geo: OtGeometry, mu_a: NeighborMeasure, mu_b: NeighborMeasure) -> CostMatrix:
    if len(mu_a) == 0 or len(mu_b) == 0:
        raise EmptyNeighborhood("empty measure")
    return CostMatrix(pairwise_sq(project(geo, mu_a.atoms), project(geo, mu_b.atoms)),
                      mu_a.weights, mu_b.weights)


def backward_atoms(geo: OtGeometry, X, G_q) -> CostGradients:
    """Chain rule from d(loss)/d(q_i) on atoms X back to every parameter."""
    X, _ = _check_input(geo, X)
    G_q = np.atleast_2d(np.asarray(G_q, dtype=np.float64))
    acts = _forward(geo, X)
    E = acts[-1]
    dL = G_q.T @ E
    g = G_q @ geo.L
    grads = [None] * len(geo.weights)
    for k in range(len(geo.weights) - 1, -1, -1):
        W, _ = geo.weights[k]
        if k < len(geo.weights) - 1:
            g = g * (acts[k + 1] > 0)
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        g = g @ W
    return CostGradients(grads, dL)


def block_atom_grads(Qa: np.ndarray, Qb: np.ndarray, W: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """d/dq of sum_ij W_ij ||qa_i - qb_j||^2 for both atom blocks."""
    ga = 2.0 * (W.sum(axis=1)[:, None] * Qa - W @ Qb)
    gb = 2.0 * (W.sum(axis=0)[:, None] * Qb - W.T @ Qa)
    return ga, gb


def backward(geo: OtGeometry, pairs) -> CostGradients:
    """Gradient of sum_k w_k c(z_k, z'_k) over (z, z', w) triples."""
    pairs = list(pairs)
    if not pairs:
        return CostGradients.zeros_like(geo)
    Z = np.stack([np.asarray(p[0], dtype=np.float64) for p in pairs])
    Zp = np.stack([np.asarray(p[1], dtype=np.float64) for p in pairs])
    w = np.array([float(p[2]) for p in pairs])
    X, _ = _check_input(geo, np.concatenate([Z, Zp]))
    Q = project(geo, X)
    n = len(pairs)
    d = Q[:n] - Q[n:]
    G = np.concatenate([2.0 * w[:, None] * d, -2.0 * w[:, None] * d])
    return backward_atoms(geo, X, G)


def apply_step(geo: OtGeometry, grads: CostGradients, lr: float) -> None:
    for (W, b), (dW, db) in zip(geo.weights, grads.weights):
        W -= lr * dW
        b -= lr * db
    geo.L -= lr * grads.L


def save(geo: OtGeometry, path) -> None:
    arrays = []
    for W, b in geo.weights:
        arrays += [W, b]
    arrays += [geo.L, geo.feat_mean, geo.feat_scale]
    container.dump(path, MAGIC, [geo.version, len(geo.weights), geo.seed], arrays)


def load(path) -> OtGeometry:
    header, arrays = container.load(path, MAGIC)
    if len(header) != 3 or header[0] != FORMAT_VERSION:
        raise FormatError(f"unsupported geometry format {header[:1]}")
    n_layers = header[1]
    if len(arrays) != 2 * n_layers + 3:
        raise FormatError("layer count does not match payload")
    weights = [(arrays[2 * k], arrays[2 * k + 1]) for k in range(n_layers)]
    L, mean, scale = arrays[-3:]
    prev = mean.shape[0]
    for W, b in weights:
        if W.ndim != 2 or W.shape[1] != prev or b.shape != (W.shape[0],):
            raise FormatError("inconsistent layer shapes")
        prev = W.shape[0]
    if L.shape != (prev, prev) or scale.shape != mean.shape:
        raise FormatError("inconsistent metric shapes")
    return OtGeometry(weights, L, mean, scale, int(header[2]), int(header[0]))
