"""Convergence studies: generate QMC training data, fit or draw networks,
record training and generalization errors over a range of lattice sizes
and fit the algebraic rate of their gap.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .lattice import (SpodWeights, epl_rule, ipl_rule, plain_rule,
                      ExtrapolatedRule, InterlacedRule, LatticeRule)
from .nn import (Architecture, HolomorphyBudget, NetParams, TrainConfig, TrainingDiverged,
                 TrainingSet, clamp_holomorphy, init_xavier, reported_error, train)
from .targets import Target, make_target

MODES = ("trained", "untrained-clamped", "untrained-free")
DESIGNS = ("epl", "ipl", "plain")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleSpec:
    """Hyper-parameter grid; every combination times ``n_init`` seeds is one member."""

    lambdas: tuple[float, ...] = (1e-6,)
    depths: tuple[int, ...] = (4, 8)
    widths: tuple[int, ...] = (12,)
    n_init: int = 2
    epochs: int = 20000
    lr: float = 1e-4
    q_reg: int = 2
    activation: str = "tanh"

    @classmethod
    def desk(cls, **kw) -> "EnsembleSpec":
        return cls(**kw)

    @classmethod
    def full_grid(cls, target: str = "rational", design: str = "epl") -> "EnsembleSpec":
        """Full grid; the parabolic problem uses weaker regularization and longer runs."""
        if target == "parabolic":
            return cls((1e-7, 1e-8, 1e-9), (4, 8, 16), (6, 12, 24), 2, 100000)
        lr = 1e-3 if (target == "rational" and design == "ipl") else 1e-4
        return cls((1e-5, 1e-6, 1e-7), (4, 8, 16), (6, 12, 24), 2, 20000, lr)

    def members(self, trained: bool = True) -> list[tuple[float, int, int, int]]:
        """``(lam, depth, width, init)`` tuples; untrained ensembles ignore ``lam``."""
        lams = self.lambdas if trained else (0.0,)
        return [(lam, L, w, k) for lam in lams for L in self.depths for w in self.widths
                for k in range(self.n_init)]


@dataclass(frozen=True)
class StudyConfig:
    target: str = "rational"
    d: int = 8
    mesh: int = 64
    dt: float = 5e-3
    T: float = 0.5
    eta: float = 2.5
    design: str = "epl"
    alpha: int = 2
    criterion: str = "product"
    m_min: int = 5
    m_max: int = 10
    test_m: int = 0  # 0 means m_max + 2
    mode: str = "trained"
    q_loss: float = 2.0
    free_scale: float = 1.0
    aggregate: str = "mean"
    seed: int = 0
    workers: int = 1
    paper_scale: bool = False
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.design not in DESIGNS:
            raise ValueError(f"design must be one of {DESIGNS}")
        if self.aggregate not in ("mean", "best"):
            raise ValueError("aggregate must be 'mean' or 'best'")
        if self.m_min > self.m_max:
            raise ValueError("empty m range")
        if self.design == "epl" and self.m_min - self.alpha + 1 < 2:
            raise ValueError("EPL designs need m_min >= alpha + 1")
        if self.test_m and self.test_m <= self.m_max:
            raise ValueError("test lattice must be larger than every training lattice")

    @property
    def test_level(self) -> int:
        return self.test_m or self.m_max + 2

    def with_paper_scale(self) -> "StudyConfig":
        return _replace(self, paper_scale=True,
                        ensemble=EnsembleSpec.full_grid(self.target, self.design))

    # text round trip -------------------------------------------------------
    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp["study"] = {f.name: _fmt(getattr(self, f.name)) for f in fields(self)
                       if f.name != "ensemble"}
        cp["ensemble"] = {k: _fmt(v) for k, v in asdict(self.ensemble).items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str) -> "StudyConfig":
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_string(text)
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for k, v in (cp["study"].items() if cp.has_section("study") else []):
            if k not in known or k == "ensemble":
                raise ValueError(f"unknown study key {k!r}")
            kw[k] = _parse(v, getattr(cls, k))
        ens = {}
        base = EnsembleSpec()
        ekeys = {f.name for f in fields(EnsembleSpec)}
        for k, v in (cp["ensemble"].items() if cp.has_section("ensemble") else []):
            if k not in ekeys:
                raise ValueError(f"unknown ensemble key {k!r}")
            ens[k] = _parse(v, getattr(base, k))
        cfg = cls(**kw)
        if kw.get("paper_scale") and not ens:
            return cfg.with_paper_scale()
        return _replace(cfg, ensemble=EnsembleSpec(**{**asdict(base), **ens}))

    @classmethod
    def from_file(cls, path) -> "StudyConfig":
        return cls.from_text(Path(path).read_text())


def _replace(cfg, **kw):
    d = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    d.update(kw)
    return type(cfg)(**d)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "1", "yes")
    if isinstance(like, tuple):
        elem = like[0] if like else 0.0
        return tuple(_parse(t, elem) for t in text.split(",") if t.strip())
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


# ---------------------------------------------------------------------------
# Targets, rules and cached data
# ---------------------------------------------------------------------------

@lru_cache(maxsize=16)
def get_target(name: str, d: int, mesh: int = 64, dt: float = 5e-3, T: float = 0.5,
               eta: float = 2.5) -> Target:
    return make_target(name, d, n=mesh, dt=dt, T=T, eta=eta)


def study_target(cfg: StudyConfig) -> Target:
    if cfg.target == "rational":
        return get_target("rational", cfg.d)
    if cfg.target == "elliptic":
        return get_target("elliptic", cfg.d, cfg.mesh, eta=cfg.eta)
    return get_target(cfg.target, cfg.d, cfg.mesh, cfg.dt, cfg.T, cfg.eta)


_VALUES: dict = {}


def _rule_key(rule: LatticeRule) -> tuple:
    return (rule.m, rule.p.bits, tuple(q.bits for q in rule.q))


def target_values(target: Target, rule: LatticeRule, points: np.ndarray | None = None,
                  key: tuple | None = None) -> np.ndarray:
    """Target at the rule's points, memoized per (target, point set).

    Consecutive extrapolated designs share their component lattices, so a
    study evaluates each lattice once.
    """
    k = (id(target), key or _rule_key(rule))
    if k not in _VALUES:
        pts = rule.points() if points is None else points
        # hold the target so its id cannot be recycled
        _VALUES[k] = (target, target(pts))
    return _VALUES[k][1]


def clear_value_cache() -> None:
    _VALUES.clear()


def design_rule(cfg: StudyConfig, m: int, beta) -> LatticeRule | InterlacedRule | ExtrapolatedRule:
    w = SpodWeights(cfg.alpha if cfg.design != "plain" else 1, beta)
    if cfg.design == "epl":
        return epl_rule(m, cfg.d, cfg.alpha, w, kind=cfg.criterion)
    if cfg.design == "ipl":
        return ipl_rule(m, cfg.d, cfg.alpha, w, kind=cfg.criterion)
    return plain_rule(m, cfg.d, w, kind=cfg.criterion)


def test_rule(cfg: StudyConfig, beta) -> ExtrapolatedRule:
    """Second-order extrapolated lattice family, larger than every training set."""
    return epl_rule(cfg.test_level, cfg.d, 2, SpodWeights(2, beta), kind=cfg.criterion)


def rule_data(target: Target, rule) -> TrainingSet:
    """Training set (points, values, coefficients) for any rule type."""
    if isinstance(rule, ExtrapolatedRule):
        pts = [r.points() for r in rule.rules]
        vals = [target_values(target, r, p) for r, p in zip(rule.rules, pts)]
        return TrainingSet(pts, vals, tuple(float(a) for a in rule.coeffs))
    if isinstance(rule, InterlacedRule):
        pts = rule.points()
        key = ("ipl", rule.alpha) + _rule_key(rule.base)
        return TrainingSet.single(pts, target_values(target, rule.base, pts, key))
    pts = rule.points()
    return TrainingSet.single(pts, target_values(target, rule, pts))


def estimate_generalization(params: NetParams, test: TrainingSet, q_loss: float = 2) -> float:
    """QMC estimate of ``||g - phi||_{L^q}`` on a held-out rule."""
    return reported_error(params, test, q_loss)


def overlap_fraction(train: TrainingSet, test: TrainingSet) -> float:
    """Share of training points that also occur in the test set."""
    seen = {tuple(r) for p in test.points for r in p}
    pts = np.vstack(train.points)
    return sum(tuple(r) in seen for r in pts) / len(pts)


# ---------------------------------------------------------------------------
# Rate fitting and reports
# ---------------------------------------------------------------------------

def fit_rate(N: Sequence[float], err: Sequence[float]) -> float:
    """Negated least-squares slope of ``log err`` against ``log N``."""
    N = np.asarray(N, dtype=np.float64)
    err = np.asarray(err, dtype=np.float64)
    if N.size < 3 or N.size != err.size:
        raise ValueError("need at least three (N, error) pairs")
    if np.any(N <= 0) or np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("rates need positive finite errors")
    slope = np.polyfit(np.log(N), np.log(err), 1)[0]
    return float(-slope)


@dataclass
class MemberResult:
    m: int
    label: str
    E_T: float
    E_G: float
    diverged: bool = False

    @property
    def gap(self) -> float:
        return abs(self.E_G - self.E_T)


@dataclass
class ConvergenceRow:
    m: int
    N: int
    E_T: float
    E_G: float
    gap: float
    members: int
    diverged: int


@dataclass
class ConvergenceReport:
    rows: list[ConvergenceRow]
    config: StudyConfig
    members: list[MemberResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def N(self) -> np.ndarray:
        return np.array([r.N for r in self.rows], dtype=np.float64)

    @property
    def gaps(self) -> np.ndarray:
        return np.array([r.gap for r in self.rows])

    @property
    def rate(self) -> float:
        ok = [r for r in self.rows if r.members > 0 and r.gap > 0]
        if len(ok) < 3:
            return math.nan
        return fit_rate([r.N for r in ok], [r.gap for r in ok])

    def rate_of(self, column: str) -> float:
        return fit_rate(self.N, [getattr(r, column) for r in self.rows])

    def summary(self) -> str:
        lines = [f"{'m':>3} {'N':>7} {'E_T':>12} {'E_G':>12} {'gap':>12} members"]
        for r in self.rows:
            lines.append(f"{r.m:>3} {r.N:>7} {r.E_T:12.5e} {r.E_G:12.5e} {r.gap:12.5e} "
                         f"{r.members}/{r.members + r.diverged}")
        lines.append(f"gap rate: {self.rate:.3f}")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def _aggregate(m: int, N: int, res: list[MemberResult], how: str = "mean") -> ConvergenceRow:
    ok = [r for r in res if not r.diverged]
    if not ok:
        return ConvergenceRow(m, N, math.nan, math.nan, math.nan, 0, len(res))
    if how == "best":
        b = min(ok, key=lambda r: r.E_T)
        return ConvergenceRow(m, N, b.E_T, b.E_G, b.gap, len(ok), len(res) - len(ok))
    # gap is the ensemble mean of per-member gaps, so sign changes cannot cancel
    return ConvergenceRow(m, N, float(np.mean([r.E_T for r in ok])),
                          float(np.mean([r.E_G for r in ok])),
                          float(np.mean([r.gap for r in ok])), len(ok), len(res) - len(ok))


def _member_seed(seed: int, idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(idx,)))


def _untrained_net(arch: Architecture, rng: np.random.Generator, scale: float) -> NetParams:
    p = init_xavier(arch, rng)
    p.weights = [scale * W for W in p.weights]
    return p


def _train_job(args):
    label, m, params, data, cfg, test, q_loss = args
    try:
        res = train(params, data, cfg)
    except TrainingDiverged:
        return MemberResult(m, label, math.nan, math.nan, True)
    return MemberResult(m, label, reported_error(res.params, data, q_loss),
                        estimate_generalization(res.params, test, q_loss))


def run_study(cfg: StudyConfig, target: Target | None = None, progress=None) -> ConvergenceReport:
    """Sweep ``m`` over ``[m_min, m_max]`` and record ensemble-averaged errors.

    Untrained modes draw each member once and evaluate the same network on
    every design.  Trained members restart from the same initialization at
    every ``m``.  Members whose training diverges are excluded and counted.
    """
    target = target or study_target(cfg)
    if target.d != cfg.d:
        raise ValueError("target dimension does not match the study")
    beta = np.asarray(target.beta)
    test = rule_data(target, test_rule(cfg, beta))
    ens = cfg.ensemble
    trained = cfg.mode == "trained"
    members = ens.members(trained)
    budget = HolomorphyBudget.for_activation(ens.activation, beta) \
        if ens.activation in ("tanh", "logistic", "softmax") else None
    if cfg.mode == "untrained-clamped" and budget is None:
        raise ValueError(f"cannot clamp {ens.activation} networks")

    nets = []
    for idx, (lam, L, w, k) in enumerate(members):
        arch = Architecture.constant_width(cfg.d, L, w, 1, ens.activation)
        rng = _member_seed(cfg.seed, idx)
        if trained:
            p = init_xavier(arch, rng)
        else:
            p = _untrained_net(arch, rng, cfg.free_scale)
            if cfg.mode == "untrained-clamped":
                p = clamp_holomorphy(p, budget)
        nets.append((f"lam={lam:g},L={L},w={w},init={k}", lam, p))

    rows, all_members, notes = [], [], []
    pool = ProcessPoolExecutor(cfg.workers) if (trained and cfg.workers > 1) else None
    try:
        for m in range(cfg.m_min, cfg.m_max + 1):
            rule = design_rule(cfg, m, beta)
            data = rule_data(target, rule)
            frac = overlap_fraction(data, test)
            if frac > 0.5:
                notes.append(f"m={m}: {frac:.0%} of training points lie in the test set")
            if trained:
                jobs = [(label, m, p, data,
                         TrainConfig(lr=ens.lr, lam=lam, q_reg=ens.q_reg, q_loss=cfg.q_loss,
                                     epochs=ens.epochs, seed=cfg.seed), test, cfg.q_loss)
                        for label, lam, p in nets]
                res = list(pool.map(_train_job, jobs)) if pool else [_train_job(j) for j in jobs]
            else:
                res = [MemberResult(m, label, reported_error(p, data, cfg.q_loss),
                                    estimate_generalization(p, test, cfg.q_loss))
                       for label, _, p in nets]
            row = _aggregate(m, rule.n_points, res, cfg.aggregate)
            rows.append(row)
            all_members.extend(res)
            if progress:
                progress(row)
    finally:
        if pool:
            pool.shutdown()
    if any(r.diverged for r in rows):
        notes.append("some members diverged and were excluded")
    return ConvergenceReport(rows, cfg, all_members, notes)


def report_csv(report: ConvergenceReport) -> str:
    cfg = report.config
    out = [f"# dlhoqmc {__version__}", f"# config_hash={cfg.hash}"]
    out += [f"# {ln}" for ln in cfg.to_text().splitlines() if ln.strip()]
    out.append(f"# test_m={cfg.test_level}")
    out.append(f"# gap_rate={report.rate!r}")
    out += [f"# warning={w}" for w in report.warnings]
    out.append("m,N,E_T,E_G,gap,members,diverged")
    for r in report.rows:
        out.append(f"{r.m},{r.N},{r.E_T!r},{r.E_G!r},{r.gap!r},{r.members},{r.diverged}")
    return "\n".join(out) + "\n"


def read_report_csv(path) -> tuple[dict, list[dict]]:
    meta, rows, header = {}, [], None
    for ln in Path(path).read_text().splitlines():
        if ln.startswith("#"):
            body = ln[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
        elif header is None:
            header = ln.split(",")
        elif ln.strip():
            rows.append(dict(zip(header, ln.split(","))))
    return meta, rows


def loglog_svg(series: dict[str, tuple[Sequence[float], Sequence[float]]], title: str = "",
               width: int = 480, height: int = 360) -> tuple[str, tuple[float, float, float, float]]:
    """Minimal log-log line plot; returns the SVG text and the axis extents (log10)."""
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()])
    ok = (xs > 0) & (ys > 0) & np.isfinite(ys)
    lx, ly = np.log10(xs[ok]), np.log10(ys[ok])
    x0, x1 = math.floor(lx.min() * 10) / 10, math.ceil(lx.max() * 10) / 10
    y0, y1 = math.floor(ly.min()), math.ceil(ly.max())
    if x1 <= x0:
        x1 = x0 + 1
    if y1 <= y0:
        y1 = y0 + 1
    pad = 50

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
             f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
             'fill="none" stroke="black"/>']
    for e in range(int(y0), int(y1) + 1):
        parts.append(f'<text x="{pad - 4}" y="{py(e) + 4:.1f}" text-anchor="end" '
                     f'font-size="10">1e{e}</text>')
    for e in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{px(e):.1f}" y="{height - pad + 14}" text-anchor="middle" '
                     f'font-size="10">{10 ** e:.3g}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        keep = (x > 0) & (y > 0) & np.isfinite(y)
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}"
                       for a, b in zip(np.log10(x[keep]), np.log10(y[keep])))
        c = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{c}"/>')
        parts.append(f'<text x="{width - pad + 2}" y="{pad + 14 * (i + 1)}" font-size="10" '
                     f'fill="{c}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n", (x0, x1, float(y0), float(y1))


def emit_report(report: ConvergenceReport, outdir, stem: str = "study") -> dict[str, Path]:
    """Write CSV, SVG and the config echo; every artifact carries the config hash."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = report.config
    paths = {"csv": outdir / f"{stem}.csv", "svg": outdir / f"{stem}.svg",
             "config": outdir / f"{stem}.ini"}
    paths["csv"].write_text(report_csv(report))
    paths["config"].write_text(f"# dlhoqmc {__version__} config_hash={cfg.hash}\n" + cfg.to_text())
    ok = [r for r in report.rows if r.members > 0]
    series = {"E_T": ([r.N for r in ok], [r.E_T for r in ok]),
              "E_G": ([r.N for r in ok], [r.E_G for r in ok]),
              "gap": ([r.N for r in ok], [r.gap for r in ok])}
    title = (f"{cfg.target} d={cfg.d} {cfg.design} {cfg.mode}: gap rate {report.rate:.2f} "
             f"[{cfg.hash}]")
    svg, _ = loglog_svg(series, title)
    paths["svg"].write_text(svg)
    return paths


# ---------------------------------------------------------------------------
# Data files
# ---------------------------------------------------------------------------

def write_points_csv(path, points: np.ndarray, meta: dict | None = None) -> None:
    d = points.shape[1]
    with open(path, "w") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join(f"y{j + 1}" for j in range(d)) + "\n")
        np.savetxt(fh, points, delimiter=",", fmt="%.17g")


def write_training_data(path, points: np.ndarray, values: np.ndarray, meta: dict) -> None:
    """CSV with ``# key=value`` header lines and columns ``y1..yd,g``."""
    d = points.shape[1]
    with open(path, "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={v}\n")
        fh.write(",".join([f"y{j + 1}" for j in range(d)] + ["g"]) + "\n")
        np.savetxt(fh, np.column_stack((points, values)), delimiter=",", fmt="%.17g")


def read_csv_data(path) -> tuple[np.ndarray, np.ndarray | None, dict]:
    """Read a points or training-data CSV; values are ``None`` without a ``g`` column."""
    meta, header, rows = {}, None, []
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln:
                continue
            if ln.startswith("#"):
                if "=" in ln:
                    k, v = ln[1:].split("=", 1)
                    meta[k.strip()] = v.strip()
            elif header is None:
                header = [h.strip() for h in ln.split(",")]
            else:
                rows.append([float(t) for t in ln.split(",")])
    if header is None:
        raise ValueError(f"{path}: missing column header")
    arr = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    if header[-1] == "g":
        return arr[:, :-1], arr[:, -1], meta
    return arr, None, meta
