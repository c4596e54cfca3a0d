"""Experiment orchestration: evolve, evaluate, generalize, analyze, report.

Every command writes into an output directory and records what it wrote in
that directory's ``manifest.json``. Tables are CSV with a leading
``# config_hash=...`` comment line and no timestamps, so identical inputs
produce byte-identical files.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .environment import (
    DEG,
    TRAINING_OMEGAS,
    TRAINING_THETAS_DEG,
    CompiledNetwork,
    PhysicsParams,
    RayConfig,
    TrialConfig,
    evaluate_fitness,
    generalization_grid,
    run_trial,
    training_conditions,
)
from .errors import ArtifactIOError, ConfigError, SchemaError
from .evolution import Evaluator, ranked, run_evolution
from .infotheory import POOLED, mi_matrix, one_sample_t_test, paired_t_test
from .network import Genotype, decode
from .trace import Trace

log = logging.getLogger(__name__)

HIGHLIGHT_TRIAL = (-6.0, 0.001)
CLASS_COMPARISONS = (("V_vs_R", "V", "R"), ("R_vs_M", "R", "M"))


# --------------------------------------------------------------------------
# small IO helpers
# --------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_table(path, header, rows, config_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_table(path):
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, body = rows[0], rows[1:]
    return [dict(zip(header, r)) for r in body]


def _ensure_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise ArtifactIOError(f"output directory {path} is not writable: {err}") from None
    return path


class Manifest:
    """Lists the artifacts of one output directory."""

    def __init__(self, root, cfg, command):
        self.root = Path(root)
        self.data = {
            "tool": "spikebalance",
            "version": __version__,
            "command": command,
            "config_hash": cfg.config_hash(),
            "seeds": {},
            "artifacts": [],
        }

    def add(self, path):
        rel = Path(path).resolve().relative_to(self.root.resolve()).as_posix()
        if rel not in self.data["artifacts"]:
            self.data["artifacts"].append(rel)

    def write(self):
        self.data["artifacts"].sort()
        path = self.root / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return path


# --------------------------------------------------------------------------
# fitness
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskFitness:
    """Picklable genotype -> 16-trial fitness map."""

    physics: PhysicsParams
    rays: RayConfig
    duration: float
    gain_range: tuple = (1.0, 5.0)

    def params(self, genotype):
        return decode(genotype, gain_range=self.gain_range, f_max=self.physics.f_max)

    def __call__(self, genotype):
        return evaluate_fitness(self.params(genotype), self.physics, self.rays, self.duration)

    @classmethod
    def from_config(cls, cfg, duration=None):
        return cls(cfg.physics, cfg.rays, duration or cfg.task.duration, tuple(cfg.task.gain_range))


# --------------------------------------------------------------------------
# evolve
# --------------------------------------------------------------------------

def cmd_evolve(cfg, out, resume=True):
    """Run ``cfg.runs`` independent evolutionary runs into ``out``."""
    out = _ensure_dir(out)
    h = cfg.config_hash()
    cfg.save(out / "config.json")
    man = Manifest(out, cfg, "evolve")
    man.add(out / "config.json")
    fitness = TaskFitness.from_config(cfg)
    histories, bests = [], []
    with Evaluator(fitness, cfg.workers) as ev:
        for k in range(cfg.runs):
            ea = cfg.ea_for_run(k)
            run_dir = out / "runs" / f"run_{k:02d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            man.data["seeds"][f"run_{k:02d}"] = ea.seed
            ckpt = run_dir / "checkpoint.json"
            if not resume and ckpt.exists():
                ckpt.unlink()

            def progress(st, k=k):
                log.info("run %d gen %d best %.4f mean %.4f", k, st.generation, st.best, st.mean)

            res = run_evolution(ea, ev, checkpoint=ckpt, on_generation=progress)
            histories.append(res.history)
            bests.append(res.best)
            man.add(ckpt)
            man.add(write_table(run_dir / "history.csv",
                                ["generation", "best", "mean", "std", "evaluations"],
                                [(s.generation, s.best, s.mean, s.std, s.evaluations)
                                 for s in res.history], h))
            path = run_dir / "best_genotype.json"
            res.best.genotype.save(path, fitness=res.best.fitness, run=k, seed=ea.seed,
                                   config_hash=h)
            man.add(path)

    n_rows = max(len(hh) for hh in histories)
    rows = []
    for g in range(n_rows):
        rows.append([g] + [hh[g].best if g < len(hh) else "" for hh in histories])
    man.add(write_table(out / "fitness_history.csv",
                        ["generation"] + [f"run_{k:02d}" for k in range(cfg.runs)], rows, h))

    # best-of-run agents ranked by canonical fitness; stable sort keeps run order on ties
    order = sorted(range(cfg.runs), key=lambda k: -bests[k].fitness)
    top_rows = [(rank, f"run_{k:02d}", cfg.run_seed(k), bests[k].fitness)
                for rank, k in enumerate(order)]
    man.add(write_table(out / "top_agents.csv", ["rank", "run", "seed", "fitness"], top_rows, h))
    man.write()
    return out


def top_agents(run_dir, k=None):
    """Best-genotype paths of a run directory, best first."""
    run_dir = Path(run_dir)
    rows = read_table(run_dir / "top_agents.csv")
    paths = [run_dir / "runs" / r["run"] / "best_genotype.json" for r in rows]
    return paths if k is None else paths[:k]


# --------------------------------------------------------------------------
# evaluate / generalize
# --------------------------------------------------------------------------

def load_genotype(path):
    try:
        return Genotype.load(path)
    except OSError as err:
        raise ArtifactIOError(f"cannot read genotype {path}: {err}") from None
    except (KeyError, ValueError) as err:
        if isinstance(err, SchemaError):
            raise
        raise SchemaError(f"{path}: malformed genotype file ({err})") from None


def cmd_evaluate(cfg, genotype_path, out, record=False, trials=None, duration=None):
    """Score a genotype on the canonical trials or on explicit ``(theta0_deg, omega0)`` pairs."""
    out = _ensure_dir(out)
    h = cfg.config_hash()
    genotype, _ = load_genotype(genotype_path)
    fitness = TaskFitness.from_config(cfg, duration)
    params = fitness.params(genotype)
    net = CompiledNetwork(params)
    if trials is None:
        conds = training_conditions(fitness.duration, record)
    else:
        conds = [TrialConfig.from_degrees(th, om, fitness.duration, record) for th, om in trials]
    man = Manifest(out, cfg, "evaluate")
    rows = []
    for i, tc in enumerate(conds):
        res = run_trial(net, tc, cfg.physics, cfg.rays)
        rows.append((i, round(tc.theta0 / DEG, 9), tc.omega0, res.fitness, res.steps, res.outcome))
        if record:
            res.trace.meta["genotype"] = Path(genotype_path).name
            res.trace.meta["trial_index"] = i
            res.trace.meta["config_hash"] = h
            path = out / "traces" / f"trial_{i:02d}.csv"
            path.parent.mkdir(parents=True, exist_ok=True)
            res.trace.to_csv(path, header_comment=f"config_hash={h}")
            man.add(path)
            man.add(path.with_suffix(".json"))
    man.add(write_table(out / "fitness.csv",
                        ["trial", "theta0_deg", "omega0", "fitness", "steps", "outcome"], rows, h))
    mean = math.fsum(r[3] for r in rows) / len(rows)
    man.data["mean_fitness"] = mean
    man.write()
    return mean, rows


def cmd_generalize(cfg, genotype_path, out, resolution=None, theta_range_deg=None,
                   omega_range=None, duration=None):
    out = _ensure_dir(out)
    h = cfg.config_hash()
    gc = cfg.generalization
    resolution = tuple(resolution or gc.resolution)
    if min(resolution) < 2:
        raise ConfigError(f"grid resolution must be >= 2 per axis, got {resolution}")
    genotype, _ = load_genotype(genotype_path)
    fitness = TaskFitness.from_config(cfg, duration or gc.duration)
    grid = generalization_grid(
        fitness.params(genotype), tuple(theta_range_deg or gc.theta_range_deg),
        tuple(omega_range or gc.omega_range), resolution, cfg.physics, cfg.rays,
        fitness.duration)
    man = Manifest(out, cfg, "generalize")
    man.add(write_table(out / "grid.csv", ["theta0_deg", "omega0", "fitness", "training"],
                        grid.rows(), h))
    matrix_rows = [[float(th)] + [float(f) for f in grid.fitness[i]]
                   for i, th in enumerate(grid.thetas_deg)]
    man.add(write_table(out / "grid_matrix.csv",
                        ["theta0_deg\\omega0"] + [_fmt(float(o)) for o in grid.omegas],
                        matrix_rows, h))
    params = fitness.params(genotype)
    net = CompiledNetwork(params)
    train_rows = []
    for th in TRAINING_THETAS_DEG:
        for om in TRAINING_OMEGAS:
            res = run_trial(net, TrialConfig.from_degrees(th, om, fitness.duration),
                            cfg.physics, cfg.rays)
            train_rows.append((th, om, res.fitness))
    man.add(write_table(out / "training_points.csv", ["theta0_deg", "omega0", "fitness"],
                        train_rows, h))
    man.write()
    return grid


# --------------------------------------------------------------------------
# analyze
# --------------------------------------------------------------------------

def discover_traces(trace_dir):
    """``{agent: [trace paths]}`` for a flat or one-level-nested directory."""
    trace_dir = Path(trace_dir)
    if not trace_dir.is_dir():
        raise ArtifactIOError(f"trace directory {trace_dir} does not exist")

    def trials(d):
        files = sorted(d.glob("trial_*.csv"))
        if not files and (d / "traces").is_dir():
            files = sorted((d / "traces").glob("trial_*.csv"))
        return files

    own = trials(trace_dir)
    if own:
        return {trace_dir.name: own}
    agents = {}
    for sub in sorted(p for p in trace_dir.iterdir() if p.is_dir()):
        files = trials(sub)
        if files:
            agents[sub.name] = files
    if not agents:
        raise ArtifactIOError(f"no trial_*.csv traces found under {trace_dir}")
    return agents


def _convert_angles(trace, units):
    if units == "rad":
        return trace
    cols = dict(trace.columns)
    cols["theta"] = cols["theta"] / DEG
    cols["omega"] = cols["omega"] / DEG
    return Trace(cols, trace.meta)


def _is_highlight(trace):
    tc = trace.meta.get("trial", {})
    if not tc:
        return False
    return (abs(tc.get("theta0", 0.0) / DEG - HIGHLIGHT_TRIAL[0]) < 1e-9
            and abs(tc.get("omega0", 0.0) - HIGHLIGHT_TRIAL[1]) < 1e-12)


def _skip_row(comparison, level, agent, variable, n, reason):
    return (comparison, level, agent, variable, n, math.nan, "", math.nan, "", math.nan,
            f"skipped: {reason}")


def _ttest_row(comparison, level, agent, variable, x, y=None, mu0=None):
    n = len(x)
    if n < 2:
        return _skip_row(comparison, level, agent, variable, n, "fewer than 2 paired samples")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if y is not None:
            r = paired_t_test(x, y)
            diff = math.fsum(a - b for a, b in zip(x, y)) / n
        else:
            r = one_sample_t_test(x, mu0)
            diff = math.fsum(x) / n - mu0
    return (comparison, level, agent, variable, n, r.t, r.df, r.p, r.degenerate, diff, "")


STATS_HEADER = ["comparison", "level", "agent", "variable", "n", "t", "df", "p",
                "degenerate", "mean_diff", "note"]


def analyze_traces(agents, cfg):
    """MI matrices and significance rows for ``{agent: [Trace]}``."""
    width, agg = cfg.analysis.bin_width, cfg.analysis.aggregator
    mats = {name: mi_matrix([_convert_angles(t, cfg.analysis.angle_units) for t in traces],
                            width, agg)
            for name, traces in agents.items()}
    stats = []
    variables = ("theta", "omega", "x", "v")
    for comp, a_cls, b_cls in CLASS_COMPARISONS:
        for name, m in mats.items():
            for var in variables:
                stats.append(_ttest_row(comp, "trials", name, var,
                                        m.per_trial(a_cls, var), m.per_trial(b_cls, var)))
        for var in variables:
            xs = [math.fsum(m.per_trial(a_cls, var)) / len(m.trials) for m in mats.values()]
            ys = [math.fsum(m.per_trial(b_cls, var)) / len(m.trials) for m in mats.values()]
            stats.append(_ttest_row(comp, "agents", "all", var, xs, ys))
    for name, m in mats.items():
        for element in ("V", "V1", "V2"):
            stats.append(_ttest_row(f"pooled_vs_trial_{element}", "trials", name, "theta",
                                    m.per_trial(element, "theta"),
                                    mu0=m.get(element, "theta", POOLED)))
    return mats, stats


def observations(mats, stats):
    """Directional findings per agent, as (agent, finding, value, holds, p)."""
    pvals = {(r[0], r[2], r[3]): r[7] for r in stats if r[1] == "trials"}
    out = []
    for name, m in mats.items():
        mean = lambda e, v: math.fsum(m.per_trial(e, v)) / len(m.trials)
        d_vr = mean("V", "theta") - mean("R", "theta")
        d_mr = mean("M", "theta") - mean("R", "theta")
        d_pool = m.get("V", "theta", POOLED) - mean("V", "theta")
        out.append((name, "MI(V;theta) > MI(R;theta)", d_vr, d_vr > 0,
                    pvals.get(("V_vs_R", name, "theta"), math.nan)))
        out.append((name, "MI(M;theta) > MI(R;theta)", d_mr, d_mr > 0,
                    pvals.get(("R_vs_M", name, "theta"), math.nan)))
        p_pool = pvals.get(("pooled_vs_trial_V", name, "theta"), math.nan)
        out.append((name, "pooled MI(V;theta) < trial-wise MI(V;theta)", d_pool,
                    d_pool < 0 and (p_pool < 0.05 if not math.isnan(p_pool) else False),
                    p_pool))
    return out


def cmd_analyze(cfg, trace_dir, out):
    out = _ensure_dir(out)
    h = cfg.config_hash()
    paths = discover_traces(trace_dir)
    agents = {name: [Trace.from_csv(p) for p in files] for name, files in paths.items()}
    mats, stats = analyze_traces(agents, cfg)
    man = Manifest(out, cfg, "analyze")

    long_rows = [(name, e, v, t, mi) for name, m in mats.items() for e, v, t, mi in m.rows()]
    man.add(write_table(out / "mi_long.csv", ["agent", "element", "variable", "trial", "mi_bits"],
                        long_rows, h))

    chain = ("S1", "S2", "S3", "S4", "S5", "S6", "S7", "V1", "V2", "spike1", "spike2",
             "R1", "R2", "M1", "M2")
    d_rows = []
    for name, m in mats.items():
        for t, tr in zip(m.trials, agents[name]):
            for e in chain:
                d_rows.append((name, t, _is_highlight(tr), e, m.get(e, "theta", t)))
    man.add(write_table(out / "mi_theta_by_element.csv",
                        ["agent", "trial", "highlighted", "element", "mi_bits"], d_rows, h))

    e_rows = []
    for name, m in mats.items():
        for e in ("V1", "V2", "V"):
            for t in m.trials:
                e_rows.append((name, e, t, m.get(e, "theta", t)))
            e_rows.append((name, e, POOLED, m.get(e, "theta", POOLED)))
    man.add(write_table(out / "mi_trial_vs_pooled.csv", ["agent", "element", "trial", "mi_bits"],
                        e_rows, h))

    c_rows = []
    for cls in ("V", "R", "M"):
        for var in ("theta", "omega", "x", "v"):
            per_agent = [math.fsum(m.per_trial(cls, var)) / len(m.trials) for m in mats.values()]
            pooled = [m.get(cls, var, POOLED) for m in mats.values()]
            c_rows.append((cls, var, math.fsum(per_agent) / len(per_agent),
                           math.fsum(pooled) / len(pooled), len(per_agent)))
    man.add(write_table(out / "mi_classes.csv",
                        ["class", "variable", "mean_trial_mi", "mean_pooled_mi", "agents"],
                        c_rows, h))

    man.add(write_table(out / "stats.csv", STATS_HEADER, stats, h))
    obs = observations(mats, stats)
    man.add(write_table(out / "observations.csv", ["agent", "finding", "value", "holds", "p"],
                        obs, h))
    skipped = sum(1 for r in stats if r[-1].startswith("skipped"))
    if skipped:
        log.warning("%d statistical tests skipped (too few samples)", skipped)
    man.write()
    return mats, stats, obs


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

REPORT_INPUTS = {
    "evolve": ("fitness_history.csv", "top_agents.csv"),
    "generalize": ("generalize/grid.csv", "generalize/training_points.csv"),
    "analyze": ("analysis/mi_classes.csv", "analysis/stats.csv", "analysis/observations.csv"),
}


def _md_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(rows_) + " |" for rows_ in rows]
    return "\n".join(lines)


def _num(s, digits=4):
    try:
        x = float(s)
    except (TypeError, ValueError):
        return str(s)
    if math.isnan(x):
        return "n/a"
    if x != 0 and (abs(x) < 1e-3 or abs(x) >= 1e5):
        return f"{x:.3e}"
    return f"{x:.{digits}f}"


def cmd_report(run_dir, out=None):
    run_dir = Path(run_dir)
    missing = [p for files in REPORT_INPUTS.values() for p in files if not (run_dir / p).exists()]
    if missing:
        raise ArtifactIOError("missing upstream artifacts: " + ", ".join(missing))
    manifest = json.loads((run_dir / "manifest.json").read_text()) \
        if (run_dir / "manifest.json").exists() else {}
    hist = read_table(run_dir / "fitness_history.csv")
    top = read_table(run_dir / "top_agents.csv")
    grid = read_table(run_dir / "generalize/grid.csv")
    train = read_table(run_dir / "generalize/training_points.csv")
    classes = read_table(run_dir / "analysis/mi_classes.csv")
    stats = read_table(run_dir / "analysis/stats.csv")
    obs = read_table(run_dir / "analysis/observations.csv")

    runs = [c for c in hist[0] if c.startswith("run_")]
    final = {r: float(hist[-1][r]) for r in runs if hist[-1][r] != ""}
    lines = ["# Experiment report", ""]
    lines += [f"- tool: spikebalance {manifest.get('version', __version__)}",
              f"- config hash: `{manifest.get('config_hash', 'unknown')}`",
              f"- runs: {len(runs)}, generations: {len(hist) - 1}", ""]

    lines += ["## Evolution", ""]
    lines += [_md_table(["rank", "run", "seed", "fitness"],
                        [[r["rank"], r["run"], r["seed"], _num(r["fitness"])] for r in top]), ""]
    vals = sorted(final.values(), reverse=True)
    for thr in (0.90, 0.95, 0.99):
        lines.append(f"- runs with best fitness >= {thr:.2f}: {sum(v >= thr for v in vals)}"
                     f"/{len(vals)}")
    lines.append("")

    lines += ["## Generalization (best agent)", ""]
    gf = [float(r["fitness"]) for r in grid]
    tf = [float(r["fitness"]) for r in train]
    lines += [f"- grid points: {len(gf)}, mean fitness {_num(sum(gf) / len(gf))}, "
              f"min {_num(min(gf))}",
              f"- training conditions: mean fitness {_num(sum(tf) / len(tf))}", ""]

    lines += ["## Mutual information by element class", ""]
    lines += [_md_table(["class", "variable", "mean trial MI (bits)", "mean pooled MI (bits)"],
                        [[r["class"], r["variable"], _num(r["mean_trial_mi"]),
                          _num(r["mean_pooled_mi"])] for r in classes]), ""]

    lines += ["## Significance tests", ""]
    lines += [_md_table(["comparison", "level", "agent", "variable", "n", "t", "df", "p",
                         "degenerate", "note"],
                        [[r["comparison"], r["level"], r["agent"], r["variable"], r["n"],
                          _num(r["t"]), r["df"], _num(r["p"]), r["degenerate"], r["note"]]
                         for r in stats]), ""]

    lines += ["## Directional findings", ""]
    lines += [_md_table(["agent", "finding", "difference (bits)", "holds", "p"],
                        [[r["agent"], r["finding"], _num(r["value"]),
                          "yes" if r["holds"] == "1" else "no", _num(r["p"])] for r in obs]), ""]
    by_finding = {}
    for r in obs:
        by_finding.setdefault(r["finding"], []).append(r["holds"] == "1")
    for finding, holds in by_finding.items():
        lines.append(f"- {finding}: held for {sum(holds)}/{len(holds)} agents")
    lines.append("")

    text = "\n".join(lines)
    out = Path(out) if out else run_dir / "report.md"
    out.write_text(text)
    return out


# --------------------------------------------------------------------------
# full pipeline
# --------------------------------------------------------------------------

def cmd_pipeline(cfg, out, resume=True):
    """evolve -> record top agents -> generalize best -> analyze -> report."""
    out = Path(out)
    cmd_evolve(cfg, out, resume=resume)
    agents = top_agents(out, cfg.analysis.top_k)
    duration = cfg.analysis.record_duration or cfg.task.duration
    for rank, path in enumerate(agents):
        cmd_evaluate(cfg, path, out / "eval" / f"agent_{rank:02d}", record=True,
                     duration=duration)
    cmd_generalize(cfg, agents[0], out / "generalize")
    cmd_analyze(cfg, out / "eval", out / "analysis")
    report = cmd_report(out)
    man = Manifest(out, cfg, "pipeline")
    man.data["seeds"] = {f"run_{k:02d}": cfg.run_seed(k) for k in range(cfg.runs)}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path != out / "manifest.json":
            man.add(path)
    man.write()
    return report
