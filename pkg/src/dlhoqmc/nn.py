"""Feed-forward networks in plain numpy.

The network applies ``sigma(W y + b)`` on layers ``1..L-1`` and a bare
affine map on layer ``L``.  Everything runs in float64 on full batches;
inputs are arrays of shape ``(n, d0)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("tanh", "logistic", "softmax", "relu", "identity")
MODEL_FORMAT = "dlhoqmc-model"
MODEL_VERSION = 1


class TrainingDiverged(FloatingPointError):
    """Raised when the objective becomes non-finite during training."""


@dataclass(frozen=True)
class Architecture:
    widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("need at least input and output widths (L >= 1)")
        if any(w < 1 for w in self.widths):
            raise ValueError("layer widths must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def depth(self) -> int:
        return len(self.widths) - 1

    @classmethod
    def constant_width(cls, d_in: int, depth: int, width: int, d_out: int = 1,
                       activation: str = "tanh") -> "Architecture":
        """``depth`` affine maps with ``depth - 1`` hidden layers of equal width."""
        if depth < 1:
            raise ValueError("depth must be >= 1")
        return cls((d_in,) + (width,) * (depth - 1) + (d_out,), activation)


@dataclass
class NetParams:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        w = self.arch.widths
        if len(self.weights) != self.arch.depth or len(self.biases) != self.arch.depth:
            raise ValueError("one weight matrix and bias per layer required")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[l + 1], w[l]) or b.shape != (w[l + 1],):
                raise ValueError(f"layer {l + 1} has inconsistent shapes")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l + 1} has non-finite entries")

    def copy(self) -> "NetParams":
        return NetParams(self.arch, [W.copy() for W in self.weights],
                         [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "NetParams":
        out, k = [], 0
        for a in self.arrays():
            out.append(np.asarray(theta[k:k + a.size], dtype=np.float64).reshape(a.shape).copy())
            k += a.size
        L = self.arch.depth
        return NetParams(self.arch, out[:L], out[L:])

    def equals(self, other: "NetParams") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


def init_xavier(arch: Architecture, seed) -> NetParams:
    """Xavier-normal weights (variance ``2/(fan_in+fan_out)``), zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    w = arch.widths
    Ws = [rng.normal(0.0, math.sqrt(2.0 / (w[l] + w[l + 1])), size=(w[l + 1], w[l]))
          for l in range(arch.depth)]
    bs = [np.zeros(w[l + 1]) for l in range(arch.depth)]
    return NetParams(arch, Ws, bs)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if kind == "softmax":
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_back(kind: str, z: np.ndarray, a: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull the upstream gradient ``g`` (w.r.t. ``a = sigma(z)``) back to ``z``."""
    if kind == "tanh":
        return g * (1.0 - a * a)
    if kind == "logistic":
        return g * a * (1.0 - a)
    if kind == "softmax":
        return a * (g - (g * a).sum(axis=1, keepdims=True))
    if kind == "relu":
        # subgradient 0 at the kink
        return g * (z > 0.0)
    return g


def _as_batch(y, d0: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape[1] != d0:
        raise ValueError(f"input width {y.shape[1]} does not match d0={d0}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite network input")
    return y


def forward(params: NetParams, y) -> np.ndarray:
    """Network output for a point ``(d0,)`` or batch ``(n, d0)``."""
    single = np.ndim(y) == 1
    a = _as_batch(y, params.arch.widths[0])
    L = params.arch.depth
    for l in range(L - 1):
        a = _act(params.arch.activation, a @ params.weights[l].T + params.biases[l])
    out = a @ params.weights[L - 1].T + params.biases[L - 1]
    return out[0] if single else out


def _forward_cache(params: NetParams, x: np.ndarray):
    zs, acts = [], [x]
    a = x
    L = params.arch.depth
    for l in range(L - 1):
        z = a @ params.weights[l].T + params.biases[l]
        a = _act(params.arch.activation, z)
        zs.append(z)
        acts.append(a)
    out = a @ params.weights[L - 1].T + params.biases[L - 1]
    return out, zs, acts


def _backward(params: NetParams, zs, acts, gout: np.ndarray):
    L = params.arch.depth
    gW = [None] * L
    gb = [None] * L
    g = gout
    for l in range(L - 1, -1, -1):
        gW[l] = g.T @ acts[l]
        gb[l] = g.sum(axis=0)
        if l > 0:
            ga = g @ params.weights[l]
            g = _act_back(params.arch.activation, zs[l - 1], acts[l], ga)
    return gW, gb


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _targets2d(targets, n: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim == 1:
        t = t[:, None]
    if t.shape[0] != n:
        raise ValueError("need one target per input point")
    return t


def _residual_power(res: np.ndarray, q: float):
    """Per-point ``|r|**q`` and its gradient w.r.t. ``r`` (Euclidean norm over outputs)."""
    if res.shape[1] == 1:
        r = res[:, 0]
        ar = np.abs(r)
        if q == 2:
            return r * r, 2.0 * res
        val = ar**q
        with np.errstate(divide="ignore", invalid="ignore"):
            gr = np.where(ar > 0, q * ar ** (q - 1) * np.sign(r), 0.0)
        return val, gr[:, None]
    nrm = np.sqrt((res * res).sum(axis=1))
    if q == 2:
        return nrm * nrm, 2.0 * res
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > 0, q * nrm ** (q - 2), 0.0)
    return nrm**q, scale[:, None] * res


def mean_power_error(params: NetParams, points, targets, q_loss: float = 2) -> float:
    """``(1/n) sum |g(y) - phi(y)|**q`` over a point set."""
    x = _as_batch(points, params.arch.widths[0])
    if x.shape[0] == 0:
        raise ValueError("empty point set")
    res = forward(params, x) - _targets2d(targets, x.shape[0])
    return float(_residual_power(res, q_loss)[0].mean())


def loss_ipl(params: NetParams, points, targets, q_loss: float = 2) -> float:
    """Mean ``|g - phi|**q`` on one lattice; the squared training error when q=2."""
    return mean_power_error(params, points, targets, q_loss)


def loss_epl(params: NetParams, pts_m, tgt_m, pts_m1, tgt_m1, q_loss: float = 2) -> float:
    """Sign-safe upper bound ``2 E_m + E_{m-1}`` used as EPL training objective."""
    n_m, n_m1 = np.shape(pts_m)[0], np.shape(pts_m1)[0]
    if n_m != 2 * n_m1:
        raise ValueError(f"EPL point sets must have sizes 2^m and 2^(m-1), got {n_m}, {n_m1}")
    return (2.0 * mean_power_error(params, pts_m, tgt_m, q_loss)
            + mean_power_error(params, pts_m1, tgt_m1, q_loss))


@dataclass
class TrainingSet:
    """Point sets with quadrature coefficients.

    ``coeffs`` are the rule coefficients (``(1,)`` for IPL/plain, ``(2, -1)``
    for EPL with alpha 2).  The training objective uses their absolute values;
    the reported error keeps the signs.
    """

    points: list[np.ndarray]
    targets: list[np.ndarray]
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.points) == len(self.targets) == len(self.coeffs)) or not self.points:
            raise ValueError("need matching point sets, targets and coefficients")
        self.points = [np.asarray(p, dtype=np.float64) for p in self.points]
        self.targets = [_targets2d(t, p.shape[0]) for p, t in zip(self.points, self.targets)]
        if len(self.points) > 1:
            for a, b in zip(self.points, self.points[1:]):
                if a.shape[0] != 2 * b.shape[0]:
                    raise ValueError("extrapolated point sets must halve in size")

    @classmethod
    def single(cls, points, targets) -> "TrainingSet":
        return cls([points], [targets], (1.0,))

    @classmethod
    def epl(cls, pts_m, tgt_m, pts_m1, tgt_m1) -> "TrainingSet":
        return cls([pts_m, pts_m1], [tgt_m, tgt_m1], (2.0, -1.0))

    @property
    def n_points(self) -> int:
        return sum(p.shape[0] for p in self.points)


def objective_terms(params: NetParams, data: TrainingSet, q_loss: float = 2) -> list[float]:
    return [mean_power_error(params, p, t, q_loss) for p, t in zip(data.points, data.targets)]


def training_objective(params: NetParams, data: TrainingSet, q_loss: float = 2) -> float:
    return sum(abs(c) * e for c, e in zip(data.coeffs, objective_terms(params, data, q_loss)))


def reported_error(params: NetParams, data: TrainingSet, q_loss: float = 2) -> float:
    """Training error ``|sum_tau a_tau E_tau|**(1/q)`` with signed coefficients."""
    val = sum(c * e for c, e in zip(data.coeffs, objective_terms(params, data, q_loss)))
    return abs(val) ** (1.0 / q_loss)


# ---------------------------------------------------------------------------
# Gradient and training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    lam: float = 1e-6
    q_reg: int = 2
    q_loss: float = 2
    epochs: int = 20000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("regularization strength must be >= 0")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")
        if self.q_reg not in (1, 2):
            raise ValueError("q_reg must be 1 or 2")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")


def regularizer(params: NetParams, q_reg: int) -> float:
    """``||theta_W||_q^q`` over all weight entries (biases excluded)."""
    return float(sum(np.sum(np.abs(W) ** q_reg) for W in params.weights))


def objective(params: NetParams, data: TrainingSet, cfg: TrainConfig) -> float:
    return (training_objective(params, data, cfg.q_loss)
            + cfg.lam * regularizer(params, cfg.q_reg))


def _objective_and_grad(params: NetParams, data: TrainingSet, cfg: TrainConfig):
    L = params.arch.depth
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]
    total = 0.0
    for c, x, t in zip(data.coeffs, data.points, data.targets):
        out, zs, acts = _forward_cache(params, x)
        val, gr = _residual_power(out - t, cfg.q_loss)
        w = abs(c) / x.shape[0]
        total += w * float(val.sum())
        dW, db = _backward(params, zs, acts, w * gr)
        for l in range(L):
            gW[l] += dW[l]
            gb[l] += db[l]
    if cfg.lam:
        for l, W in enumerate(params.weights):
            if cfg.q_reg == 2:
                total += cfg.lam * float(np.sum(W * W))
                gW[l] += 2.0 * cfg.lam * W
            else:
                total += cfg.lam * float(np.sum(np.abs(W)))
                gW[l] += cfg.lam * np.sign(W)
    return total, gW, gb


def gradient(params: NetParams, data: TrainingSet, cfg: TrainConfig) -> NetParams:
    """Gradient of ``J + lam * R`` as a parameter-shaped object."""
    _, gW, gb = _objective_and_grad(params, data, cfg)
    return NetParams(params.arch, gW, gb)


@dataclass
class TrainResult:
    params: NetParams
    losses: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)


def train(params: NetParams, data: TrainingSet, cfg: TrainConfig) -> TrainResult:
    """Full-batch Adam for ``cfg.epochs`` steps.

    Returns the final parameters and the objective before each step.
    Raises :class:`TrainingDiverged` on a non-finite objective.
    """
    p = params.copy()
    arrays = p.arrays()
    m1 = [np.zeros_like(a) for a in arrays]
    m2 = [np.zeros_like(a) for a in arrays]
    losses = np.empty(cfg.epochs)
    b1, b2 = cfg.beta1, cfg.beta2
    for k in range(cfg.epochs):
        # overflow shows up as a non-finite objective and is reported below
        with np.errstate(over="ignore", invalid="ignore"):
            val, gW, gb = _objective_and_grad(p, data, cfg)
        if not math.isfinite(val):
            raise TrainingDiverged(
                f"objective became {val} at epoch {k}; learning rate {cfg.lr} may be too large")
        losses[k] = val
        step = cfg.lr * math.sqrt(1.0 - b2 ** (k + 1)) / (1.0 - b1 ** (k + 1))
        for a, g, s1, s2 in zip(arrays, gW + gb, m1, m2):
            s1 *= b1
            s1 += (1.0 - b1) * g
            s2 *= b2
            s2 += (1.0 - b2) * (g * g)
            a -= step * s1 / (np.sqrt(s2) + cfg.eps)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise TrainingDiverged("parameters became non-finite")
    return TrainResult(p, losses, cfg)


# ---------------------------------------------------------------------------
# Holomorphy constraints
# ---------------------------------------------------------------------------

STRIP_CONSTANTS = {
    "tanh": (math.pi / 4, 1.0),
    "logistic": (math.pi / 2, 0.5),
    "softmax": (math.pi / 4, 2.0 * math.sqrt(2.0)),
}


@dataclass(frozen=True)
class HolomorphyBudget:
    """Strip half-widths ``(R, R')`` of the activation plus first-layer bounds ``beta``.

    ``epsilon`` is carried along for reports; none of the checks use it.
    """

    R: float
    Rprime: float
    beta: tuple[float, ...]
    epsilon: float = 0.5
    activation: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.R <= 0 or self.Rprime <= 0:
            raise ValueError("strip widths must be positive")
        if any(b <= 0 for b in self.beta):
            raise ValueError("beta_j must be positive")
        if not 0 < self.epsilon < 2 * self.R:
            raise ValueError("need 0 < epsilon < 2R")

    @classmethod
    def for_activation(cls, activation: str, beta: Sequence[float],
                       epsilon: float | None = None) -> "HolomorphyBudget":
        if activation not in STRIP_CONSTANTS:
            raise ValueError(f"no holomorphy strip constants for {activation!r}")
        R, Rp = STRIP_CONSTANTS[activation]
        return cls(R, Rp, tuple(beta), R if epsilon is None else epsilon, activation)

    @property
    def row_bound(self) -> float:
        return self.R / self.Rprime


@dataclass
class LayerCheck:
    layer: int
    kind: str  # "input", "inner" or "free"
    passed: bool
    margin: float


@dataclass
class HolomorphyReport:
    layers: list[LayerCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.layers)

    def __str__(self) -> str:
        lines = [f"layer {c.layer} ({c.kind}): {'pass' if c.passed else 'FAIL'} "
                 f"margin={c.margin:.6g}" for c in self.layers]
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _check_budget(params: NetParams, budget: HolomorphyBudget) -> np.ndarray:
    if budget.activation is not None and budget.activation != params.arch.activation:
        raise ValueError(f"budget is for {budget.activation}, network uses "
                         f"{params.arch.activation}")
    d0 = params.arch.widths[0]
    if len(budget.beta) < d0:
        raise ValueError(f"budget has {len(budget.beta)} beta values, network input is {d0}")
    return np.asarray(budget.beta[:d0])


def check_holomorphy(params: NetParams, budget: HolomorphyBudget) -> HolomorphyReport:
    """Check the sufficient weight conditions layer by layer.

    Layer 1 needs ``max_i |W_ij| <= beta_j``; layers ``2..L-1`` need every
    absolute row sum ``<= R/R'``.  The output layer and biases are free.  A
    single affine map (``L == 1``) has no constrained layer.
    """
    beta = _check_budget(params, budget)
    L = params.arch.depth
    out = []
    for l, W in enumerate(params.weights, start=1):
        if l == L:
            out.append(LayerCheck(l, "free", True, math.inf))
        elif l == 1:
            margin = float(np.min(beta - np.abs(W).max(axis=0)))
            out.append(LayerCheck(l, "input", margin >= 0.0, margin))
        else:
            margin = float(budget.row_bound - np.abs(W).sum(axis=1).max())
            out.append(LayerCheck(l, "inner", margin >= 0.0, margin))
    return HolomorphyReport(out)


def _scale_rows(W: np.ndarray, bound: float) -> np.ndarray:
    W = W.copy()
    sums = np.abs(W).sum(axis=1)
    for i in np.flatnonzero(sums > bound):
        s = bound / sums[i]
        row = W[i] * s
        while np.abs(row).sum() > bound:
            s = np.nextafter(s, 0.0)
            row = W[i] * s
        W[i] = row
    return W


def clamp_holomorphy(params: NetParams, budget: HolomorphyBudget) -> NetParams:
    """Project onto the constraint set: clip layer 1, rescale inner rows.

    Idempotent; the output layer and all biases are returned untouched.
    """
    beta = _check_budget(params, budget)
    L = params.arch.depth
    out = params.copy()
    if L == 1:
        return out
    out.weights[0] = np.clip(out.weights[0], -beta, beta)
    for l in range(1, L - 1):
        out.weights[l] = _scale_rows(out.weights[l], budget.row_bound)
    return out


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def save_model(params: NetParams, path, meta: dict | None = None) -> None:
    """JSON text dump; floats are written with ``repr`` and round-trip exactly."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "activation": params.arch.activation,
        "widths": list(params.arch.widths),
        "layers": [{"W": W.ravel().tolist(), "b": b.tolist()}
                   for W, b in zip(params.weights, params.biases)],
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> NetParams:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    arch = Architecture(tuple(doc["widths"]), doc["activation"])
    w = arch.widths
    Ws = [np.array(lay["W"], dtype=np.float64).reshape(w[l + 1], w[l])
          for l, lay in enumerate(doc["layers"])]
    bs = [np.array(lay["b"], dtype=np.float64) for lay in doc["layers"]]
    return NetParams(arch, Ws, bs)
