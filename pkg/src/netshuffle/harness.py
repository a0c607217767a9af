"""Experiment orchestration: configs, sweeps, and the verification suites.

Configs are flat `key = value` text with dotted sections, mirrored 1:1 by CLI
flags (CLI overrides file).  The canonical serialization is hashed and the
hash embedded in every CSV, so outputs are attributable and reruns are
byte-comparable.
"""

from __future__ import annotations

import dataclasses
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import algorithms, metrics, stepsize, unified
from .data import load_cifar10
from .objective import (central_difference_grad, logistic_from_samples,
                        make_logistic, make_nonconvex_logistic, make_quadratic)
from .shuffling import PermutationStream, rr_variance
from .topology import (MixingMatrix, TopologyError, build_graph, lazify,
                       metropolis_weights, read_edge_file)

GENERATOR_TAG = "netshuffle 0.1.0"


class ConfigError(ValueError):
    """Bad experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    # objective block
    objective: str = "quadratic"      # quadratic | logistic | ncvx-logistic
    n: int = 16
    m: int = 10
    dim: int = 5
    rho: float = 0.2
    eta: float = 0.2
    condition: float = 1.0
    hetero: bool = True
    hetero_scale: float = 1.0
    spread: float = 1.0
    scale: float = 1.0
    data_seed: int = 0
    cifar10: str = ""
    # topology block
    graph: str = "ring"               # ring | grid:RxC | complete | star | custom:<file>
    tau: float = 0.0
    # run block
    methods: tuple = ("gtrr",)
    sampling: str = "rr"
    epochs: int = 100
    seeds: tuple = (0,)
    init: str = "same"
    init_scale: float = 1.0
    stepsize: str = "const:0.001"
    regime: str = "ncvx"
    theta: float = 20.0
    strict_alg2: bool = False
    inner_metrics: bool = False
    worst_case_constants: bool = False
    workers: int = 1
    outdir: str = "results"
    timings: bool = False


_KEYMAP = {
    "objective.family": "objective", "objective.n": "n", "objective.m": "m",
    "objective.dim": "dim", "objective.rho": "rho", "objective.eta": "eta",
    "objective.condition": "condition", "objective.hetero": "hetero",
    "objective.hetero_scale": "hetero_scale", "objective.spread": "spread",
    "objective.scale": "scale", "objective.data_seed": "data_seed",
    "objective.cifar10": "cifar10",
    "topology.graph": "graph", "topology.tau": "tau",
    "run.methods": "methods", "run.sampling": "sampling", "run.epochs": "epochs",
    "run.seeds": "seeds", "run.init": "init", "run.init_scale": "init_scale",
    "run.stepsize": "stepsize", "run.regime": "regime", "run.theta": "theta",
    "run.strict_alg2": "strict_alg2", "run.inner_metrics": "inner_metrics",
    "run.worst_case_constants": "worst_case_constants", "run.workers": "workers",
    "run.outdir": "outdir", "run.timings": "timings",
}
_FIELD_TO_KEY = {v: k for k, v in _KEYMAP.items()}


def _coerce(field_name: str, raw):
    field = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[field_name]
    if isinstance(raw, str):
        raw = raw.strip()
        if field.type in ("tuple", tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            if field_name == "seeds":
                return tuple(int(p) for p in parts)
            return tuple(parts)
        if field.type in ("bool", bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if field.type in ("int", int):
            return int(raw)
        if field.type in ("float", float):
            return float(raw)
        return raw
    if field_name == "seeds":
        return tuple(int(s) for s in raw)
    if field_name == "methods":
        return tuple(raw)
    return raw


def config_from_mapping(entries: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    updates = {}
    for key, raw in entries.items():
        field_name = _KEYMAP.get(key, key if key in _FIELD_TO_KEY else None)
        if field_name is None:
            raise ConfigError(f"unknown config key {key!r}")
        updates[field_name] = _coerce(field_name, raw)
    return dataclasses.replace(cfg, **updates)


def config_from_file(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    entries = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return config_from_mapping(entries, base)


# execution details that do not influence the produced numbers; kept out of
# the canonical text so reruns in other directories or at other worker counts
# hash (and therefore serialize) identically
_NON_SEMANTIC_FIELDS = ("outdir", "workers", "timings")


def canonical_text(cfg: ExperimentConfig) -> str:
    lines = []
    for field_name, key in sorted(_FIELD_TO_KEY.items(), key=lambda kv: kv[1]):
        if field_name in _NON_SEMANTIC_FIELDS:
            continue
        value = getattr(cfg, field_name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def build_mix(cfg: ExperimentConfig) -> MixingMatrix:
    spec = cfg.graph
    try:
        if spec.startswith("grid:"):
            rows, cols = (int(v) for v in spec.split(":", 1)[1].lower().split("x"))
            graph = build_graph("grid", rows=rows, cols=cols)
        elif spec.startswith("custom:"):
            path = spec.split(":", 1)[1]
            graph = build_graph("custom", n=cfg.n, edges=read_edge_file(path))
        elif spec in ("ring", "complete", "star"):
            graph = build_graph(spec, n=cfg.n)
        else:
            raise ConfigError(f"unknown graph spec {spec!r}")
        mix = metropolis_weights(graph)
        if cfg.tau > 0.0:
            mix = lazify(mix, cfg.tau)
        return mix
    except TopologyError as exc:
        raise ConfigError(str(exc)) from exc


def build_objective(cfg: ExperimentConfig):
    if cfg.objective == "quadratic":
        return make_quadratic(cfg.n, cfg.m, cfg.dim, cfg.data_seed,
                              condition=cfg.condition, hetero=cfg.hetero_scale,
                              spread=cfg.spread)
    if cfg.objective in ("logistic", "ncvx-logistic"):
        if cfg.cifar10:
            feats, labels = load_cifar10(cfg.cifar10)
            eta = cfg.eta if cfg.objective == "ncvx-logistic" else None
            return logistic_from_samples(feats, labels, cfg.n, cfg.m, rho=cfg.rho,
                                         heterogeneous=cfg.hetero,
                                         seed=cfg.data_seed, nonconvex_eta=eta)
        if cfg.objective == "logistic":
            return make_logistic(cfg.n, cfg.m, cfg.dim, cfg.data_seed, rho=cfg.rho,
                                 heterogeneous=cfg.hetero, scale=cfg.scale)
        return make_nonconvex_logistic(cfg.n, cfg.m, cfg.dim, cfg.data_seed,
                                       eta=cfg.eta, heterogeneous=cfg.hetero,
                                       scale=cfg.scale)
    raise ConfigError(f"unknown objective {cfg.objective!r}")


# only the reshuffling members of the two-matrix family carry transformed
# state, so only they get Lyapunov/e columns and auto stepsizes
_PRESET_FOR_METHOD = {"gtrr": "gtrr", "edrr": "edrr", "edrr-pd": "edrr"}


def method_transform(method: str, mix: MixingMatrix) -> unified.TransformData | None:
    preset = _PRESET_FOR_METHOD.get(method)
    if preset is None:
        return None
    op = unified.gtrr_operator(mix) if preset == "gtrr" else unified.edrr_operator(mix)
    return unified.transform_data(op)


def build_schedule(cfg: ExperimentConfig, method: str, objective,
                   transform) -> stepsize.Schedule:
    consts = objective.constants
    if cfg.stepsize == "auto":
        if transform is None:
            raise ConfigError(f"auto stepsize is undefined for method {method!r}")
        worst = _PRESET_FOR_METHOD[method] if cfg.worst_case_constants else None
        sched = stepsize.recommend_alpha(
            transform, cfg.m, consts.L, consts.mu, max(cfg.epochs, 1),
            regime=cfg.regime, theta=cfg.theta, worst_case=worst)
        if isinstance(sched, stepsize.ConstantSchedule):
            tc = stepsize.theory_constants(transform, cfg.m, consts.L, consts.mu,
                                           max(cfg.epochs, 1), worst_case=worst)
            assert sched.value <= tc.alpha_max_ncvx * (1 + 1e-12), \
                "auto stepsize exceeded the admissible bound"
        return sched
    try:
        return stepsize.parse_schedule(cfg.stepsize, mu=consts.mu, m=cfg.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def run_one(cfg: ExperimentConfig, method: str, seed: int, objective=None,
            mix: MixingMatrix | None = None) -> list:
    objective = objective if objective is not None else build_objective(cfg)
    mix = mix if mix is not None else build_mix(cfg)
    transform = method_transform(method, mix)
    schedule = build_schedule(cfg, method, objective, transform)
    return algorithms.run(
        method, objective, mix, schedule, cfg.epochs, seed,
        sampling=cfg.sampling, init=cfg.init, init_scale=cfg.init_scale,
        init_seed=cfg.data_seed, transform=transform,
        strict_alg2=cfg.strict_alg2, inner_metrics=cfg.inner_metrics,
        timings=cfg.timings,
    )


def run_sweep(cfg: ExperimentConfig) -> dict:
    """Run methods x seeds, write one CSV per run plus per-method means.

    All method/schedule combinations are validated before any run starts, so
    an invalid pairing (say exact diffusion on an indefinite W) fails fast.
    Returns {path: records}; raises ConfigError on invalid configs.
    """
    outdir = Path(cfg.outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output dir {outdir}: {exc}") from exc
    objective = build_objective(cfg)
    mix = build_mix(cfg)
    plans = {}
    for method in cfg.methods:
        try:
            algorithms.make_method(method, objective, mix, seed=0,
                                   sampling=cfg.sampling, strict_alg2=cfg.strict_alg2)
            transform = method_transform(method, mix)
            build_schedule(cfg, method, objective, transform)
        except (ValueError, unified.OperatorError) as exc:
            raise ConfigError(f"method {method!r}: {exc}") from exc
        plans[method] = transform

    jobs = [(method, seed) for method in cfg.methods for seed in cfg.seeds]

    def work(job):
        method, seed = job
        return algorithms.run(
            method, objective, mix, build_schedule(cfg, method, objective, plans[method]),
            cfg.epochs, seed, sampling=cfg.sampling, init=cfg.init,
            init_scale=cfg.init_scale, init_seed=cfg.data_seed,
            transform=plans[method], strict_alg2=cfg.strict_alg2,
            inner_metrics=cfg.inner_metrics, timings=cfg.timings)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = dict(zip(jobs, pool.map(work, jobs)))
    else:
        results = {job: work(job) for job in jobs}

    digest = config_hash(cfg)
    written = {}
    f_prov = objective.constants.tag("f_star")
    for method in cfg.methods:
        per_seed = []
        for seed in cfg.seeds:
            records = results[(method, seed)]
            per_seed.append(records)
            meta = {
                "config_hash": digest, "method": method, "seed": seed,
                "sampling": cfg.sampling if algorithms.METHODS[method].uses_rr else "iid",
                "f_star_provenance": f_prov, "generated_by": GENERATOR_TAG,
            }
            path = outdir / f"{method}_seed{seed}.csv"
            metrics.write_csv(path, records, meta)
            written[path] = records
        mean_records = metrics.aggregate(per_seed)
        meta = {
            "config_hash": digest, "method": method,
            "seeds": ",".join(str(s) for s in cfg.seeds), "aggregate": "mean",
            "f_star_provenance": f_prov, "generated_by": GENERATOR_TAG,
        }
        path = outdir / f"{method}_mean.csv"
        metrics.write_csv(path, mean_records, meta)
        written[path] = mean_records
    return written


def all_diverged(results: dict) -> bool:
    runs = [recs for path, recs in results.items() if "seed" in path.name]
    return bool(runs) and all(recs and recs[-1].diverged for recs in runs)


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: float
    tol: float
    note: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: measured {self.measured:.3e} vs tol {self.tol:.3e} {self.note}"


def _check(name, measured, tol, larger_ok=False, note=""):
    ok = measured >= tol if larger_ok else measured <= tol
    return CheckResult(name, bool(ok), float(measured), float(tol), note)


def verify_spectral() -> list:
    out = []
    complete = metropolis_weights(build_graph("complete", n=16))
    out.append(_check("complete n=16 lambda == 0", abs(complete.spectral.lam), 1e-12))
    ring = metropolis_weights(build_graph("ring", n=16))
    grid = metropolis_weights(build_graph("grid", rows=4, cols=4))
    k = np.arange(16)
    circulant = np.sort((1.0 + 2.0 * np.cos(2.0 * np.pi * k / 16)) / 3.0)[::-1]
    dev = np.max(np.abs(np.sort(ring.spectral.eigenvalues)[::-1] - circulant))
    out.append(_check("ring n=16 circulant eigenvalues", dev, 1e-9))
    out.append(_check("ring gap < grid gap (n=16)",
                      grid.spectral.gap - ring.spectral.gap, 0.0, larger_ok=True,
                      note=f"(ring {ring.spectral.gap:.4f}, grid {grid.spectral.gap:.4f})"))
    for name, mix in (("ring16", ring), ("grid4x4", grid)):
        s = mix.spectral
        recon = s.eigvecs @ np.diag(s.eigenvalues) @ s.eigvecs.T
        out.append(_check(f"{name} eigendecomposition reconstructs W",
                          np.linalg.norm(recon - mix.w), 1e-9))
        out.append(_check(f"{name} doubly stochastic",
                          max(np.abs(mix.w.sum(0) - 1).max(),
                              np.abs(mix.w.sum(1) - 1).max()), 1e-12))
        direct = np.linalg.norm(mix.w - np.ones((16, 16)) / 16.0, 2)
        out.append(_check(f"{name} lambda equals ||W - J/n||_2",
                          abs(s.lam - direct), 1e-9))
    lazy = lazify(ring, 0.5)
    out.append(_check("lazify tau=0.5 keeps rows stochastic",
                      np.abs(lazy.w.sum(1) - 1).max(), 1e-14))
    out.append(_check("lazify tau=0.5 makes ring n=16 PD",
                      lazy.spectral.lambda_min, 0.0, larger_ok=True))
    return out


def verify_shuffle() -> list:
    out = []
    rng = np.random.default_rng(7)
    for m in range(2, 7):
        X = rng.normal(size=(m, 3))
        worst = 0.0
        for ell in range(1, m + 1):
            emp, pred = rr_variance(X, ell)
            worst = max(worst, abs(emp - pred))
        out.append(_check(f"without-replacement variance m={m}", worst, 1e-12))
    stream = PermutationStream(12345, "rr")
    counts = {}
    for t in range(120_000):
        key = tuple(stream.permutation(0, t, 3))
        counts[key] = counts.get(key, 0) + 1
    dev = max(abs(c - 20_000) for c in counts.values())
    out.append(_check("uniformity m=3 over 120000 epochs (max count dev)", dev, 500,
                      note=f"counts {sorted(counts.values())}"))
    same = np.array_equal(stream.permutation(3, 9, 8), stream.permutation(3, 9, 8))
    out.append(_check("keyed determinism", 0.0 if same else 1.0, 0.5))
    return out


def _trajectory_gap(traj_a, traj_b):
    worst = 0.0
    for Xa, Xb in zip(traj_a, traj_b):
        worst = max(worst, np.linalg.norm(Xa - Xb) / max(1.0, np.linalg.norm(Xa)))
    return worst


def _epoch_trajectory(machine, T, alpha):
    traj = []
    for t in range(T):
        machine.epoch(t, alpha)
        traj.append(machine.X.copy())
    return traj


def verify_abc(seed: int = 11, epochs: int = 5) -> list:
    out = []
    obj = make_quadratic(8, 5, 4, seed, condition=2.0)
    ring = metropolis_weights(build_graph("ring", n=8))
    lazy = lazify(ring, 0.5)
    x0 = algorithms.initial_iterates(obj, "same", 1.0, init_seed=seed)
    alpha = 0.02
    stream = lambda: PermutationStream(seed, "rr")  # noqa: E731
    native = algorithms.GTRR(obj, ring, stream())
    native.reset(x0)
    engine = unified.AbcEngine(unified.gtrr_operator(ring), obj, stream())
    engine.reset(x0)
    xformed = unified.TransformedEngine(unified.gtrr_operator(ring), obj, stream())
    xformed.reset(x0)
    t_native = _epoch_trajectory(native, epochs, alpha)
    t_engine = _epoch_trajectory(engine, epochs, alpha)
    t_xform = _epoch_trajectory(xformed, epochs, alpha)
    out.append(_check("gtrr == abc(W, I-W, W)", _trajectory_gap(t_native, t_engine), 1e-9))
    out.append(_check("gtrr == transformed recursion", _trajectory_gap(t_native, t_xform), 1e-9))

    native = algorithms.EDRR(obj, lazy, stream())
    native.reset(x0)
    pd = algorithms.EDRRPrimalDual(obj, lazy, stream())
    pd.reset(x0)
    engine = unified.AbcEngine(unified.edrr_operator(lazy), obj, stream())
    engine.reset(x0)
    xformed = unified.TransformedEngine(unified.edrr_operator(lazy), obj, stream())
    xformed.reset(x0)
    t_native = _epoch_trajectory(native, epochs, alpha)
    t_pd = _epoch_trajectory(pd, epochs, alpha)
    t_engine = _epoch_trajectory(engine, epochs, alpha)
    t_xform = _epoch_trajectory(xformed, epochs, alpha)
    out.append(_check("edrr x-only == primal-dual", _trajectory_gap(t_native, t_pd), 1e-9))
    out.append(_check("edrr == abc(W, (I-W)^1/2, I)", _trajectory_gap(t_native, t_engine), 1e-9))
    out.append(_check("edrr == transformed recursion", _trajectory_gap(t_native, t_xform), 1e-9))

    worst_track = 0.0
    worst_avg = {}

    def tracking_probe(info):
        nonlocal worst_track
        ybar = info.Y_before.mean(axis=0)
        gbar = info.grads.mean(axis=0)
        worst_track = max(worst_track, float(np.max(np.abs(ybar - gbar))))

    gt = algorithms.GTRR(obj, ring, stream())
    gt.reset(x0)
    for t in range(epochs):
        gt.epoch(t, alpha, probe=tracking_probe)
    out.append(_check("tracker average equals mean shuffled gradient", worst_track, 1e-10))

    for name in ("crr", "drr", "gtrr"):
        machine = algorithms.make_method(name, obj, ring, seed)
        machine.reset(x0)
        worst_avg[name] = 0.0

        def avg_probe(info, _name=name):
            expected = info.X_before.mean(axis=0) - info.alpha * info.grads.mean(axis=0)
            got = info.X_after.mean(axis=0)
            worst_avg[_name] = max(worst_avg[_name], float(np.max(np.abs(got - expected))))

        for t in range(epochs):
            machine.epoch(t, alpha, probe=avg_probe)
    machine = algorithms.make_method("edrr", obj, lazy, seed)
    machine.reset(x0)
    worst_avg["edrr"] = 0.0

    def avg_probe_ed(info):
        expected = info.X_before.mean(axis=0) - info.alpha * info.grads.mean(axis=0)
        got = info.X_after.mean(axis=0)
        worst_avg["edrr"] = max(worst_avg["edrr"], float(np.max(np.abs(got - expected))))

    for t in range(epochs):
        machine.epoch(t, alpha, probe=avg_probe_ed)
    for name, worst in worst_avg.items():
        out.append(_check(f"mean-iterate identity {name}", worst, 1e-10))
    return out


def verify_gradcheck(points: int = 100) -> list:
    out = []
    rng = np.random.default_rng(3)
    families = {
        "quadratic": make_quadratic(3, 4, 5, 5, condition=4.0),
        "logistic": make_logistic(3, 4, 5, 5, rho=0.2),
        "ncvx-logistic": make_nonconvex_logistic(3, 4, 5, 5, eta=0.2),
    }
    for name, obj in families.items():
        worst = 0.0
        for _ in range(points):
            i = int(rng.integers(obj.n))
            l = int(rng.integers(obj.m))
            x = rng.normal(size=obj.p)
            g = obj.component_grad(i, l, x)
            ghat = central_difference_grad(lambda z: obj.component_value(i, l, z), x)
            worst = max(worst, float(np.linalg.norm(g - ghat))
                        / max(1.0, float(np.linalg.norm(g))))
        out.append(_check(f"{name} gradient vs central differences", worst, 1e-6))
    return out


SUITES = {
    "spectral": verify_spectral,
    "shuffle": verify_shuffle,
    "abc": verify_abc,
    "gradcheck": verify_gradcheck,
}


def verify(suite: str = "all") -> list:
    if suite == "all":
        results = []
        for fn in SUITES.values():
            results.extend(fn())
        return results
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or all")
    return SUITES[suite]()
