"""Command-line front end.

Every command reads a JSON config (or the shipped defaults), runs one
experiment and writes JSON/CSV artifacts into ``--out``. Results are written
to a staging directory and moved into place only after the whole run
succeeded. Timestamps go to ``metadata.json`` so result files are
byte-identical across reruns of the same config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, bundle, models, observables
from .errors import ConfigError, DegeneracyError, FluxLabError
from .evolution import (
    TWO_PI,
    GeneratorField,
    IntegratorSettings,
    decompose_big_loop,
    loop_unitary,
)
from .flux import FluxFamily, LatticeFamily
from .quasiadiabatic import (
    alpha_of_L,
    lieb_robinson_velocity,
    shell_envelope,
    shell_norms,
)
from .spectral import eig

COMMANDS = ("conductance", "loopscan", "decompose", "locality", "bundle", "obstruction", "fractional", "selftest")
DENSE_MODELS = {"two_level_toy": models.two_level_toy}


@dataclass
class ExperimentConfig:
    model: str = "two_level_toy"
    overrides: dict = field(default_factory=dict)
    Q: int | None = None
    filled: int | None = None
    alpha: float | str = 2.0
    r_values: list = field(default_factory=lambda: [0.05, 0.1, 0.2])
    N_values: list = field(default_factory=lambda: [2, 3])
    n_grid: int = 8
    kernel_half_width: int = 1
    steps_per_2pi: int = 256
    tol: float = 1e-8
    max_refine: int = 3
    term: int | None = None
    k_max: int | None = None
    obstruction_to: str = "trivial_atomic"
    obstruction_overrides: dict = field(default_factory=dict)
    obstruction_points: int = 41
    q: int = 2
    l: int = 2
    seed: int = 0
    threads: int = 1

    def settings(self) -> IntegratorSettings:
        return IntegratorSettings(self.steps_per_2pi, True, self.tol, self.max_refine)

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _known_model(name) -> bool:
    return name in DENSE_MODELS or name in models.PRESETS


def load_config(data: dict) -> ExperimentConfig:
    """Validate a config mapping; every violated field is listed in one error."""
    problems = []
    names = set(ExperimentConfig.__dataclass_fields__)
    for k in data:
        if k not in names:
            problems.append(f"{k}: unknown field")
    cfg = ExperimentConfig(**{k: v for k, v in data.items() if k in names})

    def need(cond, name, msg):
        if not cond:
            problems.append(f"{name}: {msg}")

    need(isinstance(cfg.model, str) and _known_model(cfg.model), "model", f"unknown model {cfg.model!r}")
    need(isinstance(cfg.overrides, dict), "overrides", "must be an object")
    need(cfg.Q is None or (isinstance(cfg.Q, int) and cfg.Q >= 0), "Q", "must be a non-negative integer")
    need(cfg.filled is None or (isinstance(cfg.filled, int) and cfg.filled >= 1), "filled", "must be a positive integer")
    need(
        cfg.alpha == "paper-formula" or (isinstance(cfg.alpha, (int, float)) and not isinstance(cfg.alpha, bool) and cfg.alpha > 0),
        "alpha",
        "must be positive or 'paper-formula'",
    )
    need(
        isinstance(cfg.r_values, list) and all(isinstance(r, (int, float)) and 0 <= r <= TWO_PI for r in cfg.r_values),
        "r_values",
        "must be a list of numbers in [0, 2pi]",
    )
    need(isinstance(cfg.N_values, list) and all(isinstance(n, int) and n >= 1 for n in cfg.N_values), "N_values", "must be positive integers")
    need(isinstance(cfg.n_grid, int) and cfg.n_grid >= 2, "n_grid", "must be an integer >= 2")
    need(isinstance(cfg.kernel_half_width, int) and cfg.kernel_half_width >= 0, "kernel_half_width", "must be a non-negative integer")
    need(isinstance(cfg.steps_per_2pi, int) and cfg.steps_per_2pi >= 4, "steps_per_2pi", "must be an integer >= 4")
    need(isinstance(cfg.tol, (int, float)) and cfg.tol > 0, "tol", "must be positive")
    need(isinstance(cfg.max_refine, int) and cfg.max_refine >= 0, "max_refine", "must be a non-negative integer")
    need(cfg.term is None or (isinstance(cfg.term, int) and cfg.term >= 0), "term", "must be a non-negative integer")
    need(cfg.k_max is None or (isinstance(cfg.k_max, int) and cfg.k_max >= 1), "k_max", "must be a positive integer")
    need(isinstance(cfg.obstruction_to, str) and _known_model(cfg.obstruction_to), "obstruction_to", "unknown model")
    need(isinstance(cfg.obstruction_points, int) and cfg.obstruction_points >= 3, "obstruction_points", "must be an integer >= 3")
    need(isinstance(cfg.q, int) and cfg.q >= 1, "q", "must be a positive integer")
    need(isinstance(cfg.l, int) and cfg.l >= 0, "l", "must be a non-negative integer")
    need(isinstance(cfg.seed, int), "seed", "must be an integer")
    need(isinstance(cfg.threads, int) and cfg.threads >= 1, "threads", "must be a positive integer")
    if problems:
        raise ConfigError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


# ------------------------------------------------------------------ helpers
@dataclass
class System:
    family: FluxFamily
    preset: models.ModelPreset | None
    filled: int | None

    @property
    def spec(self):
        return None if self.preset is None else self.preset.spec


def build_system(cfg: ExperimentConfig, name: str | None = None, overrides: dict | None = None) -> System:
    name = name or cfg.model
    ov = cfg.overrides if overrides is None else overrides
    if name in DENSE_MODELS:
        try:
            return System(DENSE_MODELS[name](**ov), None, None)
        except TypeError as exc:
            raise ConfigError(f"overrides: {exc}") from exc
    p = models.build_preset(name, **ov)
    Q = cfg.Q if (cfg.Q is not None and name == cfg.model) else p.Q
    sector = p.spec.sector(Q)
    filled = cfg.filled if cfg.filled is not None else p.filled
    return System(LatticeFamily(p.spec, sector), p, filled)


def resolve_alpha(cfg: ExperimentConfig, sys_: System) -> float:
    if cfg.alpha != "paper-formula":
        return float(cfg.alpha)
    if sys_.spec is None:
        raise ConfigError("alpha: 'paper-formula' needs a lattice model")
    lat = sys_.spec.lattice
    return alpha_of_L(lat.L, lat.R, sys_.spec.J, lat.Q_max)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return {"re": o.real.tolist(), "im": o.imag.tolist()}
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o).__name__}")


def _pmap(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as ex:
        return list(ex.map(fn, items))


# ------------------------------------------------------------------ commands
def cmd_conductance(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    rep = observables.kubo_sigma_xy(s.family, filled=s.filled)
    fhs = observables.chern_fhs(s.family, cfg.n_grid, filled=s.filled)
    out = rep.to_dict()
    out["fhs_chern"] = fhs.chern
    out["fhs_raw"] = fhs.raw
    return {"conductance.json": out, "fhs_scan.csv": fhs.scan_csv()}


def cmd_loopscan(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    alpha = resolve_alpha(cfg, s)
    st = cfg.settings()
    gf = GeneratorField(s.family, alpha)
    _, Phi = observables.ground_frame(s.family, 0.0, 0.0, s.filled)
    rows = []
    for r in cfg.r_values:
        line = observables.berry_phase_loop(s.family, r, "line-integral", filled=s.filled, check_margin=False)
        surf = observables.berry_phase_loop(s.family, r, "surface-integral", filled=s.filled, check_margin=False)
        ov = observables.overlap(Phi, loop_unitary(gf, (0.0, 0.0), r, st).matrix @ Phi) if r > 0 else 1.0
        rows.append((r, line, surf, float(np.real(ov)), float(np.imag(ov)), float(np.angle(ov))))
    ledgers = {}
    terms = []
    for N in cfg.N_values:
        led = observables.main_bound_decomposition(s.family, N, alpha, filled=s.filled, settings=st)
        ledgers[str(N)] = led.to_dict()
        t = led.bound_terms
        terms.append((N, TWO_PI / N, t["power_vs_conductance"], t["big_loop_triviality"], t["stokes_difference"], led.final_bound))
    return {
        "loopscan.csv": _csv(["r", "phi_line", "phi_surface", "overlap_re", "overlap_im", "overlap_phase"], rows),
        "main_bound.csv": _csv(["N", "r", "T1", "T2", "T3", "bound"], terms),
        "ledger.json": {"alpha": alpha, "ledgers": ledgers},
    }


def cmd_decompose(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    alpha = resolve_alpha(cfg, s)
    gf = GeneratorField(s.family, alpha)
    out = {}
    for N in cfg.N_values:
        d = decompose_big_loop(gf, N, cfg.settings())
        out[str(N)] = {"residual": d.residual, "error_budget": d.error_budget}
    return {"decompose.json": {"alpha": alpha, "residuals": out}}


def cmd_locality(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    if s.spec is None:
        raise ConfigError("model: locality needs a lattice model")
    alpha = resolve_alpha(cfg, s)
    fam = s.family
    spec = fam.spec
    lat = spec.lattice
    k = cfg.term if cfg.term is not None else int(fam.moving_terms("x")[0])
    if k >= len(spec.terms):
        raise ConfigError(f"term: index {k} out of range ({len(spec.terms)} terms)")
    Z = list(spec.terms[k].support)
    A = fam.term_dh(0.0, 0.0, "x", k)
    k_max = cfg.k_max or lat.L
    norms, resid, _ = shell_norms(fam, A, Z, 0.0, 0.0, alpha, k_max)
    sigma = 2 * alpha * lieb_robinson_velocity(lat.R, spec.J)
    nA = float(np.linalg.norm(A, 2))
    rows = []
    for i, nrm in enumerate(norms):
        shell = lat.R + i
        env = float(shell_envelope(shell - 1, alpha, sigma, lat.R, nA))
        rows.append((shell, float(nrm), env))
    return {
        "shells.csv": _csv(["k", "shell_norm", "envelope"], rows),
        "locality.json": {"alpha": alpha, "term": k, "support": Z, "telescoping_residual": resid, "sigma": sigma},
    }


def cmd_bundle(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    alpha = resolve_alpha(cfg, s)
    bf = bundle.build_bundle_field(s.family, cfg.n_grid, alpha, cfg.kernel_half_width, cfg.settings())
    chern = observables.chern_fhs(None, cfg.n_grid, source="bundle-projector", states=bf.vectors)
    summary = json.loads(bf.to_json())
    summary["projector_chern"] = chern.chern
    return {"bundle.json": summary, "bundle.csv": bf.to_csv()}


def cmd_obstruction(cfg: ExperimentConfig) -> dict:
    a = build_system(cfg)
    b = build_system(cfg, cfg.obstruction_to, cfg.obstruction_overrides)
    if a.spec is None or b.spec is None:
        raise ConfigError("model: obstruction needs two lattice models")
    sector = a.family.sector
    ss = np.linspace(0.0, 1.0, cfg.obstruction_points)

    def point(sv):
        spec = models.interpolate(a.spec, b.spec, float(sv))
        fam = LatticeFamily(spec, sector)
        sd = eig(fam.h(0.0, 0.0), ground_dim=a.filled or 1)
        try:
            sig = observables.kubo_from_spectrum(sd, fam.dh(0, 0, "x"), fam.dh(0, 0, "y"), filled=a.filled).sigma_xy
        except DegeneracyError:
            sig = float("nan")
        return float(sv), sd.gap, sig

    rows = _pmap(point, ss, cfg.threads)
    gaps = np.array([r[1] for r in rows])
    i = int(np.argmin(gaps))
    return {
        "obstruction.csv": _csv(["s", "gap", "sigma_xy"], rows),
        "obstruction.json": {
            "min_gap": float(gaps[i]),
            "min_gap_s": float(rows[i][0]),
            "endpoint_gaps": [float(gaps[0]), float(gaps[-1])],
            "dip": bool(gaps[i] < min(gaps[0], gaps[-1])),
        },
    }


def cmd_fractional(cfg: ExperimentConfig) -> dict:
    s = build_system(cfg)
    if s.spec is None:
        raise ConfigError("model: fractional needs a lattice model")
    alpha = resolve_alpha(cfg, s)
    probes = observables.local_probes(s.spec, s.family.sector, cfg.l)
    out = observables.fractional_diagnostics(s.family, cfg.q, alpha, probes=probes, l=cfg.l, settings=cfg.settings())
    out["alpha"] = alpha
    return {"fractional.json": out}


def selftest_checks() -> list[tuple[str, bool, str]]:
    """Quick property checks on the shipped defaults."""
    from .quasiadiabatic import naive_bound, s_op, s_op_quadrature

    out = []
    rng = np.random.default_rng(0)

    b = rng.uniform(0, 1, 20000)
    th = rng.uniform(-0.6, 0.6, 20000)
    m = rng.integers(1, 51, 20000)
    eps = np.abs(b - np.exp(1j * th))
    keep = eps <= 0.5
    lhs = np.abs(b**m - np.exp(1j * m * th))
    bad = int(np.sum((lhs > math.sqrt(7 / 3) * m * eps + 1e-12) & keep))
    out.append(("power inequality", bad == 0, f"{bad} violations"))

    worst = 0.0
    ok_norm = True
    for _ in range(5):
        d = 6
        X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        H = X + X.conj().T
        H = 2 * H / np.linalg.norm(H, 2)
        Y = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        A = Y + Y.conj().T
        S = s_op(eig(H), A, 1.0)
        worst = max(worst, float(np.abs(S - s_op_quadrature(H, A, 1.0)).max()))
        ok_norm &= np.linalg.norm(S, 2) <= naive_bound(1.0, np.linalg.norm(A, 2)) + 1e-12
    out.append(("S_alpha spectral vs quadrature", worst <= 1e-6, f"max diff {worst:.2e}"))
    out.append(("S_alpha naive bound", bool(ok_norm), ""))

    fam = models.two_level_toy()
    k = observables.kubo_sigma_xy(fam, at=(0.3, 0.2)).sigma_xy
    c = observables.chern_fhs(fam, 8).chern
    avg = observables.kubo_mesh_average(fam, 8)
    out.append(("FHS Chern equals rounded mesh average", c == round(avg), f"C={c}, avg={avg:.4f}, local={k:.4f}"))

    p = models.build_preset("trivial_atomic")
    sig = observables.kubo_sigma_xy(p.spec, p.sector).sigma_xy
    out.append(("trivial insulator conductance", abs(sig) <= 1e-10, f"{sig:.2e}"))

    line = observables.berry_phase_loop(fam, 0.2, "line-integral")
    surf = observables.berry_phase_loop(fam, 0.2, "surface-integral")
    out.append(("Berry line vs surface", abs(line - surf) <= 1e-6, f"{abs(line - surf):.2e}"))
    return out


def cmd_selftest(cfg: ExperimentConfig) -> dict:
    checks = selftest_checks()
    lines = [f"{'PASS' if ok else 'FAIL'} {name} {info}".rstrip() for name, ok, info in checks]
    return {"selftest.txt": "\n".join(lines) + "\n", "_ok": all(ok for _, ok, _ in checks)}


HANDLERS = {
    "conductance": cmd_conductance,
    "loopscan": cmd_loopscan,
    "decompose": cmd_decompose,
    "locality": cmd_locality,
    "bundle": cmd_bundle,
    "obstruction": cmd_obstruction,
    "fractional": cmd_fractional,
    "selftest": cmd_selftest,
}


def run(command: str, cfg: ExperimentConfig, out_dir: str) -> int:
    """Run ``command`` and write its artifacts; returns the exit status."""
    if command not in HANDLERS:
        raise ConfigError(f"command: unknown command {command!r}")
    np.random.seed(cfg.seed)
    start = time.time()
    artifacts = HANDLERS[command](cfg)
    ok = artifacts.pop("_ok", True)
    digest = cfg.digest()
    os.makedirs(out_dir, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=out_dir)
    try:
        for name, content in artifacts.items():
            if isinstance(content, dict):
                content = _json({"config_hash": digest, "command": command, "result": content})
            elif name.endswith(".csv"):
                content = f"# config_hash={digest}\n" + content
            with open(os.path.join(stage, name), "w") as fh:
                fh.write(content)
        meta = {
            "config_hash": digest,
            "config": asdict(cfg),
            "command": command,
            "version": __version__,
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(start)),
            "elapsed_s": round(time.time() - start, 3),
        }
        with open(os.path.join(stage, "metadata.json"), "w") as fh:
            fh.write(_json(meta))
        for name in os.listdir(stage):
            os.replace(os.path.join(stage, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    if command == "selftest":
        sys.stdout.write(artifacts["selftest.txt"])
    return 0 if ok else 3


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fluxlab", description="Quasi-adiabatic flux threading experiments.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file (defaults are used when omitted)")
    ap.add_argument("--out", default="fluxlab-out", help="output directory")
    ap.add_argument("--threads", type=int, help="worker threads")
    ap.add_argument("--seed", type=int, help="random seed")
    ap.add_argument("--tolerance", type=float, help="integrator tolerance")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = parser().parse_args(argv)
    try:
        data = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    data = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"config: cannot read {args.config}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError("config: top level must be an object")
        for flag, key in ((args.threads, "threads"), (args.seed, "seed"), (args.tolerance, "tol")):
            if flag is not None:
                data[key] = flag
        cfg = load_config(data)
        return run(args.command, cfg, args.out)
    except FluxLabError as exc:
        print(f"fluxlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except MemoryError as exc:
        print(f"fluxlab: out of memory: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
