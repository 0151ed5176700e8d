"""Command-line entry point: ``dlhoqmc <subcommand> ...``."""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from pathlib import Path


from . import __version__
from .fem import FemError, manufactured_l2_errors
from .harness import (StudyConfig, _member_seed, _replace, emit_report,
                      get_target, read_csv_data, run_study, write_points_csv)
from .lattice import (ExtrapolatedRule, InterlacedRule, SpodWeights, epl_rule,
                      ipl_rule, make_criterion, cbc_construct, plain_rule, qmc_integrate,
                      read_coeffs_file, write_generating_vector)
from .nn import (Architecture, HolomorphyBudget, TrainConfig, TrainingDiverged, TrainingSet,
                 check_holomorphy, init_xavier, load_model, reported_error, save_model, train)
from .targets import eigenmode_decay_error


def _config_hash(args: argparse.Namespace, skip=("out", "func", "workers")) -> str:
    items = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
             if k not in skip}
    text = json.dumps(items, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _read_beta(path) -> list[float]:
    vals = []
    for ln in Path(path).read_text().splitlines():
        ln = ln.split("#", 1)[0].strip()
        if ln:
            vals.extend(float(t) for t in ln.replace(",", " ").split())
    if not vals:
        raise ValueError(f"{path}: no weights found")
    return vals


def _weights(args, order: int) -> SpodWeights:
    if args.weights:
        beta = _read_beta(args.weights)
        if len(beta) < args.d:
            raise ValueError(f"weights file has {len(beta)} values, need {args.d}")
        return SpodWeights(order, beta[:args.d])
    return SpodWeights.power_decay(args.d, order)


def _rule_from_args(args):
    kind = args.kind
    alpha = args.alpha if args.alpha is not None else (1 if kind == "plain" else 2)
    crit = getattr(args, "criterion", "product")
    w = _weights(args, alpha)
    if kind == "plain":
        return plain_rule(args.m, args.d, w, kind=crit), alpha
    if kind == "ipl":
        return ipl_rule(args.m, args.d, alpha, w, kind=crit), alpha
    coeffs = read_coeffs_file(args.coeffs) if getattr(args, "coeffs", None) else None
    return epl_rule(args.m, args.d, alpha, w, kind=crit, coeffs=coeffs), alpha


def _rule_header(rule) -> dict:
    return {"m": rule.m, "p": f"{rule.p.bits:x}", "q": [f"{q.bits:x}" for q in rule.q]}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_points(args) -> int:
    rule, alpha = _rule_from_args(args)
    stamp = {"tool": "dlhoqmc", "version": __version__, "config_hash": _config_hash(args),
             "kind": args.kind, "m": args.m, "d": args.d, "alpha": alpha}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(rule, ExtrapolatedRule):
        files, comps = [], []
        for r in rule.rules:
            path = out.with_name(f"{out.stem}_m{r.m}{out.suffix or '.csv'}")
            write_points_csv(path, r.points(), {"dlhoqmc": __version__,
                                                "config_hash": stamp["config_hash"],
                                                "m": r.m})
            files.append(path.name)
            comps.append({**_rule_header(r), "file": path.name})
        stamp.update(coeffs=[str(a) for a in rule.coeffs], rules=comps)
        print("\n".join(str(out.with_name(f)) for f in files))
    else:
        base = rule.base if isinstance(rule, InterlacedRule) else rule
        write_points_csv(out, rule.points(), {"dlhoqmc": __version__,
                                              "config_hash": stamp["config_hash"], "m": rule.m})
        stamp.update(_rule_header(base))
        if isinstance(rule, InterlacedRule):
            stamp["base_dimension"] = base.d
        print(out)
    Path(str(out) + ".json").write_text(json.dumps(stamp, indent=1) + "\n")
    return 0


def cmd_cbc(args) -> int:
    if args.interlaced:
        w = _weights(args, args.alpha)
        crit = make_criterion(w, args.criterion, order=1, repeat=args.alpha)
        rule = cbc_construct(args.m, args.d * args.alpha, crit)
    else:
        w = _weights(args, args.alpha)
        rule = cbc_construct(args.m, args.d, make_criterion(w, args.criterion))
    write_generating_vector(args.out, rule)
    print(args.out)
    return 0


def _target_from_args(args, d: int):
    return get_target(args.target, d, args.mesh, args.dt, args.T, args.eta)


def cmd_integrate(args) -> int:
    rule, _ = _rule_from_args(args)
    target = _target_from_args(args, args.d)
    print(repr(qmc_integrate(target, rule, d=args.d)))
    return 0


def _read_train_config(path) -> dict:
    cp = configparser.ConfigParser()
    cp.read_string(Path(path).read_text())
    sec = cp["train"] if cp.has_section("train") else {}
    known = {"depth": 4, "width": 12, "activation": "tanh", "lr": 1e-4, "lam": 1e-6,
             "q_reg": 2, "q_loss": 2.0, "epochs": 20000, "seed": 0}
    out = dict(known)
    for k, v in sec.items():
        if k not in known:
            raise ValueError(f"unknown train key {k!r}")
        out[k] = type(known[k])(v)
    return out


def cmd_train(args) -> int:
    cfg = _read_train_config(args.config)
    if len(args.design) > 2:
        raise ValueError("pass one design file (single rule) or two (EPL: 2^m then 2^(m-1))")
    pts, vals, metas = [], [], []
    target = None
    for path in args.design:
        p, v, meta = read_csv_data(path)
        if v is None:
            target = target or _target_from_args(args, p.shape[1])
            v = target(p)
        pts.append(p)
        vals.append(v)
        metas.append(meta)
    data = TrainingSet.epl(pts[0], vals[0], pts[1], vals[1]) if len(pts) == 2 \
        else TrainingSet.single(pts[0], vals[0])
    d = pts[0].shape[1]
    arch = Architecture.constant_width(d, cfg["depth"], cfg["width"], 1, cfg["activation"])
    params = init_xavier(arch, _member_seed(cfg["seed"], 0))
    tc = TrainConfig(lr=cfg["lr"], lam=cfg["lam"], q_reg=cfg["q_reg"], q_loss=cfg["q_loss"],
                     epochs=cfg["epochs"], seed=cfg["seed"])
    res = train(params, data, tc)
    err = reported_error(res.params, data, tc.q_loss)
    cfg_hash = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
    save_model(res.params, args.out, {"version": __version__, "config_hash": cfg_hash,
                                      "train_config": cfg, "target": args.target,
                                      "training_error": err})
    print(f"training_error={err!r}")
    return 0


def _read_budget(path, d: int, activation: str) -> HolomorphyBudget:
    cp = configparser.ConfigParser()
    cp.read_string(Path(path).read_text())
    if not cp.has_section("budget"):
        raise ValueError(f"{path}: missing [budget] section")
    sec = cp["budget"]
    if "beta" in sec:
        beta = [float(t) for t in sec["beta"].replace(",", " ").split()]
    elif "target" in sec:
        beta = list(get_target(sec["target"], d).beta)
    else:
        raise ValueError("budget needs 'beta' or 'target'")
    eps = float(sec["epsilon"]) if "epsilon" in sec else None
    if "R" in sec or "Rprime" in sec:
        R, Rp = float(sec["R"]), float(sec["Rprime"])
        return HolomorphyBudget(R, Rp, beta, eps if eps is not None else R)
    return HolomorphyBudget.for_activation(sec.get("activation", activation), beta, eps)


def cmd_check_holo(args) -> int:
    params = load_model(args.model)
    budget = _read_budget(args.budget, params.arch.widths[0], params.arch.activation)
    print(check_holomorphy(params, budget))
    return 0


def cmd_fem_check(args) -> int:
    for label, variable in (("constant", False), ("variable", True)):
        errs, rates = manufactured_l2_errors(tuple(args.n), variable)
        for n, e in zip(args.n, errs):
            print(f"manufactured coefficient={label} n={n} l2_error={e:.6e}")
        print(f"manufactured coefficient={label} l2_rates=" + ",".join(f"{r:.4f}" for r in rates))
    dev = eigenmode_decay_error(args.eig_n, args.dt, args.T)
    print(f"eigenmode n={args.eig_n} dt={args.dt:g} T={args.T:g} relative_deviation={dev:.4e}")
    return 0


def cmd_study(args) -> int:
    base = StudyConfig.from_file(args.config) if args.config else StudyConfig()
    over = {k: v for k, v in {
        "target": args.target, "d": args.d, "alpha": args.alpha, "design": args.design,
        "m_min": args.m_min, "m_max": args.m_max, "mode": args.mode, "q_loss": args.q_loss,
        "mesh": args.mesh, "dt": args.dt, "T": args.T, "test_m": args.test_m,
        "seed": args.seed, "aggregate": args.aggregate, "free_scale": args.free_scale,
    }.items() if v is not None}
    over["workers"] = args.workers
    cfg = _replace(base, **over)
    if args.paper_scale:
        cfg = cfg.with_paper_scale()
    report = run_study(cfg, progress=(lambda r: print(
        f"m={r.m} N={r.N} E_T={r.E_T:.4e} E_G={r.E_G:.4e} gap={r.gap:.4e}",
        file=sys.stderr)) if args.verbose else None)
    paths = emit_report(report, args.out, args.stem)
    print(report.summary())
    for p in paths.values():
        print(p)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_rule_args(p, kinds=("plain", "ipl", "epl")):
    p.add_argument("--kind", choices=kinds, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--alpha", type=int, default=None,
                   help="interlacing/extrapolation order (default 1 for plain, else 2)")
    p.add_argument("--weights", type=Path, help="file with beta_1..beta_d")
    p.add_argument("--criterion", choices=("product", "spod"), default="product")
    p.add_argument("--coeffs", type=Path, help="extrapolation coefficients for alpha > 2")


def _add_target_args(p, required=True):
    p.add_argument("--target", choices=("rational", "elliptic", "parabolic"), required=required)
    p.add_argument("--mesh", type=int, default=64)
    p.add_argument("--dt", type=float, default=5e-3)
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--eta", type=float, default=2.5)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlhoqmc", description=__doc__)
    ap.add_argument("--version", action="version", version=f"dlhoqmc {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-points", help="write lattice points as CSV plus a JSON sidecar")
    _add_rule_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_points)

    p = sub.add_parser("cbc", help="construct a generating vector")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--alpha", type=int, default=1)
    p.add_argument("--weights", type=Path)
    p.add_argument("--criterion", choices=("product", "spod"), default="product")
    p.add_argument("--interlaced", action="store_true",
                   help="first-order search in dimension alpha*d for interlacing")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_cbc)

    p = sub.add_parser("integrate", help="apply a QMC rule to a target and print the value")
    _add_rule_args(p)
    _add_target_args(p)
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("train", help="train one network on a design")
    _add_target_args(p, required=False)
    p.add_argument("--design", type=Path, nargs="+", required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("check-holo", help="check the holomorphy weight conditions of a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--budget", type=Path, required=True)
    p.set_defaults(func=cmd_check_holo)

    p = sub.add_parser("fem-check", help="run the FEM verification oracles")
    p.add_argument("--n", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--eig-n", type=int, default=64)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--T", type=float, default=0.05)
    p.set_defaults(func=cmd_fem_check)

    p = sub.add_parser("study", help="run a convergence study and write CSV/SVG reports")
    p.add_argument("--config", type=Path)
    p.add_argument("--target", choices=("rational", "elliptic", "parabolic"))
    p.add_argument("--d", type=int)
    p.add_argument("--alpha", type=int, choices=(1, 2))
    p.add_argument("--design", choices=("epl", "ipl", "plain"))
    p.add_argument("--m-min", type=int)
    p.add_argument("--m-max", type=int)
    p.add_argument("--test-m", type=int)
    p.add_argument("--mode", choices=("trained", "untrained-clamped", "untrained-free"))
    p.add_argument("--q-loss", type=float)
    p.add_argument("--mesh", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--aggregate", choices=("mean", "best"))
    p.add_argument("--free-scale", type=float)
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--stem", default="study")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_study)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        ap.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, NotImplementedError, OSError, FemError, TrainingDiverged,
            KeyError, configparser.Error) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
