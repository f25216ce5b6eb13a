"""Experiment orchestration: ``python -m treetasep.cli <command> [flags]``.

Every output file carries the command, the base seed and a hash of the
config, and is reproducible from them.  Replica seeds come from
``numpy.random.SeedSequence(seed).spawn(replicas)``; replica r also samples
its own tree from the key (tree seed, r).  Exit status is 1 when a check of
the run fails, 2 on configuration or module errors.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _hashing as hs
from . import bounds as B
from . import couplings as C
from . import engine as E
from . import equilibrium as Q
from . import lpp as L
from .config import COMMANDS, FORMATS, ConfigError, ExperimentConfig, parse_config, replica_seeds
from .rates import classify_flow, profile_for
from .tree import Tree


@dataclass
class Result:
    header: list
    rows: list
    report: dict
    ok: bool = True
    series: list = field(default_factory=list)     # (label, xs, ys)
    xlabel: str = "x"
    ylabel: str = "y"


def _tree(cfg: ExperimentConfig, r: int) -> Tree:
    seed = cfg.tree_seed if cfg.offspring_law().is_dirac else hs.derive(cfg.tree_seed, r) >> 1
    return Tree(cfg.offspring_law(), seed)


def _ctx(cfg: ExperimentConfig, tree=None, depth=None):
    return B.context(cfg.family(), cfg.offspring_law(), cfg.delta, tree, depth)


# per-command replica functions ---------------------------------------------------------

def _rep_simulate(cfg, r, seed):
    tree = _tree(cfg, r)
    sc = E.SimConfig(tree, cfg.family(), cfg.lam, cfg.stop_rule(), seed=seed, clock=cfg.clock)
    st, log = E.run(sc)
    T = st.t
    pts = int(cfg.param("points"))
    times = np.linspace(0.0, T, pts).tolist() if pts > 1 else [T]
    rows = [(r, t, E.current(log, t, vertex=Tree.ROOT), E.max_generation(log, t)[0])
            for t in times]
    return {"rows": rows, "events": st.n_events, "entered": st.n_entered, "T": T,
            "truncated": st.truncated}


def _agg_simulate(cfg, reps):
    rows = [row for rep in reps for row in rep["rows"]]
    pts = len(reps[0]["rows"])
    xs = [reps[0]["rows"][k][1] for k in range(pts)]
    ys = [float(np.mean([rep["rows"][k][2] for rep in reps])) for k in range(pts)]
    report = {"replicas": [{k: rep[k] for k in ("events", "entered", "T", "truncated")}
                           for rep in reps]}
    ok = not any(rep["truncated"] for rep in reps)
    return Result(["replica", "t", "J_root", "max_generation"], rows, report, ok,
                  [("mean J_root", xs, ys)], "t", "J_root(t)")


def _rep_disentangle(cfg, r, seed):
    n = int(cfg.param("n"))
    tree = _tree(cfg, r)
    G = math.ceil(_ctx(cfg).M(n))
    sc = E.SimConfig(tree, cfg.family(), cfg.lam, E.Crossings(n, G), seed=seed,
                     clock=cfg.clock, max_entries=n)
    _, log = E.run(sc)
    try:
        g = E.disentanglement_generation(log, n)
    except E.NotYet:
        g = -1          # not separated by generation G
    return {"generation": g, "within": 0 <= g <= G}


def _agg_disentangle(cfg, reps):
    n = int(cfg.param("n"))
    Mn = _ctx(cfg).M(n)
    frac = float(np.mean([rep["within"] for rep in reps]))
    rows = [(r, rep["generation"], int(rep["within"])) for r, rep in enumerate(reps)]
    gens = sorted(rep["generation"] for rep in reps)
    report = {"n": n, "M_n": Mn, "fraction_within": frac, "max_generation": gens[-1]}
    return Result(["replica", "generation", "within"], rows, report, frac >= 0.99,
                  [("disentanglement generation", list(range(len(gens))), gens)],
                  "rank", "generation")


def _window(cfg):
    n = int(cfg.param("n"))
    ctx = _ctx(cfg)
    ell = cfg.param("ell")
    ell = math.ceil(ctx.M(n)) if ell is None else int(ell)
    return n, ell, ctx, ctx.time_window(n, ell, theta_n=cfg.param("theta_n"))


def _rep_current_window(cfg, r, seed):
    n, ell, ctx, tw = _window(cfg)
    tree = _tree(cfg, r)
    # later particles never affect earlier ones: the first n are simulated alone
    sc = E.SimConfig(tree, cfg.family(), cfg.lam, E.Crossings(n, ell), seed=seed,
                     clock=cfg.clock, max_entries=n)
    _, log = E.run(sc)
    return {"J_low": E.current(log, tw.t_low, generation=ell),
            "J_up": E.current(log, tw.t_up, generation=ell)}


def _agg_current_window(cfg, reps):
    n, ell, ctx, tw = _window(cfg)
    late = B.late_arrival_bound(ctx.profile, cfg.lam, ell, tw.t_low)
    need = (1.0 - cfg.delta) * n
    low = float(np.mean([rep["J_low"] == 0 for rep in reps]))
    up = float(np.mean([rep["J_up"] >= need for rep in reps]))
    rows = [(r, rep["J_low"], rep["J_up"]) for r, rep in enumerate(reps)]
    report = {"n": n, "ell": ell, "t_low": tw.t_low, "t_up": tw.t_up, "theta": tw.theta,
              "theta_n": tw.theta_n, "late_arrival_bound": late,
              "fraction_empty_at_t_low": low - late, "fraction_full_at_t_up": up}
    ok = low - late >= 0.95 and up >= 0.95
    return Result(["replica", "J_ell(t_low)", "J_ell(t_up)"], rows, report, ok,
                  [("J_ell(t_up)", list(range(len(reps))), [rep["J_up"] for rep in reps])],
                  "replica", "J")


def _gen_windows(cfg):
    """General window and, for exponential rates on the matching regular tree, the refined one."""
    t = float(cfg.param("t"))
    gw = _ctx(cfg).generation_window(t)
    fam, law = cfg.family(), cfg.offspring_law()
    refined = None
    if fam.kind == "exponential" and law.is_dirac and law.support[0] == fam.d - 1:
        refined = B.exp_regular_window(math.log(fam.d - 1), t, cfg.delta)
    return t, gw, refined


def _rep_generation_window(cfg, r, seed):
    t, gw, refined = _gen_windows(cfg)
    tree = _tree(cfg, r)
    sc = E.SimConfig(tree, cfg.family(), cfg.lam, E.Horizon(5 * t), seed=seed, clock=cfg.clock)
    _, log = E.run(sc)
    out = {"J_up": E.current(log, t, generation=gw.L_up),
           "J_low": E.current(log, 5 * t, generation=math.ceil(gw.L_low)),
           "S": E.max_generation(log, t)[0]}
    if refined is not None:
        out["J_up_refined"] = E.current(log, t, generation=refined[0])
    return out


def _agg_generation_window(cfg, reps):
    t, gw, refined = _gen_windows(cfg)
    rows = [(r, rep["S"], rep["J_up"], rep["J_low"]) for r, rep in enumerate(reps)]
    general = [rep["J_up"] == 0 and rep["J_low"] >= gw.n_t for rep in reps]
    report = {"t": t, "n_t": gw.n_t, "L_low": gw.L_low, "L_up": gw.L_up, "L1_up": gw.L1_up,
              "L2_up": gw.L2_up, "fraction_in_window": float(np.mean(general))}
    frac = float(np.mean(general))
    if refined is not None:
        ref = [rep["J_up_refined"] == 0 and rep["J_low"] >= gw.n_t for rep in reps]
        frac = float(np.mean(ref))
        report["refined_L_up"] = refined[0]
        report["fraction_in_refined_window"] = frac
    return Result(["replica", "S(t)", "J_Lup(t)", "J_Llow(5t)"], rows, report, frac >= 0.95,
                  [("S(t)", list(range(len(reps))), [rep["S"] for rep in reps])],
                  "replica", "max generation")


def _rep_lpp(cfg, r, seed):
    n, m, Mn = (int(cfg.param(k)) for k in ("n", "m", "M_n"))
    fam = cfg.family()
    rmin = fam if fam.symbolic else profile_for(fam, cfg.offspring_law(), _tree(cfg, r), n + Mn)
    Gs, env = C.slowed_passage_times(n, m, Mn, cfg.lam, rmin, seed)
    D = L.passage_table(env, Mn)
    mask = ~np.isnan(Gs)
    return {"equal": bool(np.array_equal(Gs[mask], D[mask])), "G": D[n + m, n] if m <= Mn else None,
            "table": D if r == 0 else None}


def _agg_lpp(cfg, reps):
    n, m, Mn = (int(cfg.param(k)) for k in ("n", "m", "M_n"))
    fam = cfg.family()
    prof = profile_for(fam, cfg.offspring_law(), _tree(cfg, 0), n + Mn)
    tail = L.tail_check(prof, n, Mn, float(cfg.param("alpha")), int(cfg.param("samples")),
                        cfg.lam, seed=replica_seeds(cfg.seed, 1)[0])
    D = reps[0]["table"]
    rows = [(i, j, float(D[i, j])) for i in range(1, D.shape[0]) for j in range(1, D.shape[1])
            if not math.isnan(D[i, j])]
    equal = all(rep["equal"] for rep in reps)
    report = {"n": n, "m": m, "M_n": Mn, "slowed_equals_dp": equal,
              "G": [rep["G"] for rep in reps], "tail_threshold": tail.threshold,
              "tail_exceed_rate": tail.exceed_rate, "tail_samples": tail.samples}
    diag = [(k, float(D[k + m, k])) for k in range(1, n + 1) if not math.isnan(D[k + m, k])]
    return Result(["i", "j", "G"], rows, report, equal and tail.exceed_rate <= 0.05,
                  [(f"G(j+{m}, j)", [a for a, _ in diag], [b for _, b in diag])], "j", "G")


def _rep_couple(cfg, r, seed):
    kind = cfg.param("kind")
    T = float(cfg.param("T"))
    tree = _tree(cfg, r)
    fam = cfg.family()
    if kind == "canonical":
        run = C.canonical_pair(tree, fam, cfg.lam, float(cfg.param("lam2")), seed, T, strict=False)
        cert = run.certificate
    elif kind == "irw":
        cert = C.irw_pair(tree, fam, cfg.lam, seed, T, strict=False).certificate
    elif kind == "slowed":
        cert = C.slowed_real_pair(tree, fam, cfg.lam, seed, T, strict=False).certificate
    else:
        raise ConfigError("params.kind", "must be canonical, irw or slowed")
    return {"holds": cert.holds}


def _agg_couple(cfg, reps):
    rows = [(r, k, int(h)) for r, rep in enumerate(reps) for k, h in enumerate(rep["holds"])]
    viol = [len(rep["holds"]) - sum(rep["holds"]) for rep in reps]
    report = {"kind": cfg.param("kind"), "events": [len(rep["holds"]) for rep in reps],
              "violations": viol}
    return Result(["replica", "event_index", "holds"], rows, report, sum(viol) == 0,
                  [("violations", list(range(len(reps))), viol)], "replica", "violations")


def _rep_equilibrium(cfg, r, seed):
    return {}


def _agg_equilibrium(cfg, reps):
    depth, rho, nf = int(cfg.param("depth")), float(cfg.param("rho")), int(cfg.param("functions"))
    tree = _tree(cfg, 0)
    fam = cfg.family()
    pis = [Q.exact_stationary(Q.Truncation(tree, fam, n, cfg.lam)) for n in range(depth + 1)]
    mono = [Q.monotone_check(pis[n], pis[n + 1], nf, seed=cfg.seed + n) for n in range(depth)]
    bern = Q.bernoulli_check(pis[-1], rho, nf, seed=cfg.seed)
    prof = Q.density_profile(pis[-1], depth)
    report = {"residuals": [p.residual for p in pis],
              "monotone": [c.ok for c in mono],
              "monotone_worst_gap": [c.worst_gap for c in mono],
              "bernoulli_rho": rho, "bernoulli_dominated": bern.ok,
              "bernoulli_worst_gap": bern.worst_gap,
              "root_empty": float(1.0 - pis[-1].marginals()[0])}
    ok = all(p.residual <= 1e-10 for p in pis) and all(c.ok for c in mono)
    return Result(["generation", "density"], [(g, float(v)) for g, v in enumerate(prof)],
                  report, ok, [("density", list(range(depth + 1)), prof.tolist())],
                  "generation", "density")


def _rep_none(cfg, r, seed):
    return {}


def _agg_classify(cfg, reps):
    h = int(cfg.param("horizon"))
    tree = _tree(cfg, 0)
    rep = classify_flow(cfg.family(), tree, h)
    summary = {"flow": f"Flow, strength {rep.strength:g}" if rep.strength is not None else "Flow",
               "superflow": "Superflow", "subflow": "Subflow",
               "unclassified": "Unclassified"}[rep.kind]
    report = {"class": rep.kind, "summary": summary, "strength": rep.strength,
              "horizon": h, "level_sums": rep.level_sums}
    rows = [(g, s) for g, s in enumerate(rep.level_sums)]
    return Result(["generation", "out_rate_sum"], rows, report, True,
                  [("sum of r_x over Z_l", list(range(h)), rep.level_sums)], "generation", "rate")


def _agg_bounds(cfg, reps):
    n = int(cfg.param("n"))
    ctx = _ctx(cfg)
    b = ctx.bound(n)
    report = {"n": n, "D_n": b.D_n, "M_n": ctx.M(n), "c_o": ctx.c_o, "epsilon": ctx.epsilon,
              "c_low": ctx.c_low, "kappa": ctx.kappa, "delta": ctx.delta,
              "generation": math.ceil(ctx.M(n))}
    ell = cfg.param("ell")
    if ell is not None or math.isfinite(ctx.M(n)):
        ell = math.ceil(ctx.M(n)) if ell is None else int(ell)
        tw = ctx.time_window(n, ell)
        report["time_window"] = {"ell": ell, "t_low": tw.t_low, "t_up": tw.t_up,
                                 "theta": tw.theta, "theta_n": tw.theta_n}
    if cfg.param("t") is not None:
        gw = ctx.generation_window(float(cfg.param("t")))
        report["generation_window"] = {"t": gw.t, "n_t": gw.n_t, "L_low": gw.L_low,
                                       "L_up": gw.L_up}
    ks = list(range(1, n + 1))
    return Result(["k", "M_k"], [(k, ctx.M(k)) for k in ks], report, True,
                  [("M_k", ks, [ctx.M(k) for k in ks])], "k", "M_k")


COMMANDS_IMPL = {
    "simulate": (_rep_simulate, _agg_simulate),
    "disentangle": (_rep_disentangle, _agg_disentangle),
    "current-window": (_rep_current_window, _agg_current_window),
    "generation-window": (_rep_generation_window, _agg_generation_window),
    "lpp": (_rep_lpp, _agg_lpp),
    "couple": (_rep_couple, _agg_couple),
    "equilibrium": (_rep_none, _agg_equilibrium),
    "classify-rates": (_rep_none, _agg_classify),
    "bounds": (_rep_none, _agg_bounds),
}
assert set(COMMANDS_IMPL) == set(COMMANDS)


def _replica(args):
    cfg_dict, r, seed = args
    cfg = parse_config(cfg_dict)
    return COMMANDS_IMPL[cfg.command][0](cfg, r, seed)


def run_experiment(cfg: ExperimentConfig) -> tuple[Result, Path]:
    rep_fn, agg_fn = COMMANDS_IMPL[cfg.command]
    seeds = replica_seeds(cfg.seed, cfg.replicas)
    jobs = [(cfg.to_dict(), r, s) for r, s in enumerate(seeds)]
    if cfg.workers > 1 and cfg.replicas > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            reps = list(ex.map(_replica, jobs))
    else:
        reps = [rep_fn(cfg, r, s) for _, r, s in jobs]
    res = agg_fn(cfg, reps)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.command}.{cfg.format}"
    path.write_text(render(cfg, res))
    return res, path


# emission ------------------------------------------------------------------------------

def _embedded(cfg: ExperimentConfig) -> dict:
    """Config as echoed into outputs; the output directory is not part of the experiment."""
    d = cfg.to_dict()
    d.pop("out")
    return d


def _meta(cfg: ExperimentConfig) -> dict:
    return {"command": cfg.command, "seed": cfg.seed, "config_hash": cfg.hash(),
            "config": _embedded(cfg)}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    return str(v)


def render(cfg: ExperimentConfig, res: Result) -> str:
    meta = _meta(cfg)
    if cfg.format == "json":
        return json.dumps({"meta": meta, "ok": res.ok, "report": res.report}, indent=2,
                          default=_json_default) + "\n"
    if cfg.format == "csv":
        lines = [f"# command={cfg.command} seed={cfg.seed} config_hash={meta['config_hash']}",
                 "# config=" + json.dumps(_embedded(cfg), separators=(",", ":")),
                 ",".join(res.header)]
        lines += [",".join(_fmt(v) for v in row) for row in res.rows]
        return "\n".join(lines) + "\n"
    return svg_chart(res.series, res.xlabel, res.ylabel,
                     f"{cfg.command} seed={cfg.seed} config_hash={meta['config_hash']}")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def svg_chart(series, xlabel: str, ylabel: str, title: str,
              width: int = 640, height: int = 400) -> str:
    """Static line chart; coordinates are printed with fixed precision."""
    pad = 50
    pts = [(float(x), float(y)) for _, xs, ys in series for x, y in zip(xs, ys)
           if math.isfinite(float(x)) and math.isfinite(float(y))]
    x0 = min((p[0] for p in pts), default=0.0)
    x1 = max((p[0] for p in pts), default=1.0)
    y0 = min((p[1] for p in pts), default=0.0)
    y1 = max((p[1] for p in pts), default=1.0)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    esc = lambda s: s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f"<!-- {esc(title)} -->",
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">{esc(xlabel)}</text>',
           f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {height / 2:.1f})">{esc(ylabel)}</text>',
           f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{x0:.4g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">{x1:.4g}</text>',
           f'<text x="{pad - 5}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{pad - 5}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    colours = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
    for k, (label, xs, ys) in enumerate(series):
        coords = " ".join(f"{px(float(x)):.2f},{py(float(y)):.2f}" for x, y in zip(xs, ys)
                          if math.isfinite(float(x)) and math.isfinite(float(y)))
        c = colours[k % len(colours)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" font-size="11" fill="{c}" '
                   f'text-anchor="end">{esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treetasep", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file (version 1 schema)")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=FORMATS)
    return p


def config_from_args(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {"version": 1}
    if raw.get("command", args.command) != args.command:
        raise ConfigError("command", f"config is for {raw['command']!r}, not {args.command!r}")
    raw["command"] = args.command
    for key in ("seed", "replicas", "out", "format"):
        v = getattr(args, key)
        if v is not None:
            raw[key] = v
    return parse_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        res, path = run_experiment(cfg)
    except (ValueError, LookupError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"{path} ok={res.ok}")
    return 0 if res.ok else 1


if __name__ == "__main__":
    sys.exit(main())
