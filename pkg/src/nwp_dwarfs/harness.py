"""Configuration, dispatch, reporting and the pinned-value regression suite."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import platform
import time
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from nwp_dwarfs import __version__

OUT_ENV = "NWP_DWARFS_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
DWARFS = ("sht", "bifourier", "gcr", "cloudsc", "laitri", "sladv")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


# -- schema ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Param:
    kind: str  # int, float, bool, str, ints, grid, hill
    default: Any
    choices: tuple = ()


HILL_KEYS = {"lon": "float", "lat": "float", "height": "float", "half_width": "float"}

SCHEMAS: dict[str, dict[str, Param]] = {
    "sht": {
        "truncation": Param("int", 21),
        "nlev": Param("int", 1),
        "iters": Param("int", 100),
        "fields": Param("int", 1),
        "norms": Param("bool", True),
        "reduced": Param("bool", False),
        "tol": Param("float", 1e-9),
    },
    "bifourier": {
        "nx": Param("int", 56),
        "ny": Param("int", 40),
        "ext": Param("int", 8),
        "kind": Param("str", "linear", ("linear", "quadratic", "cubic")),
        "nfld": Param("int", 1),
        "iters": Param("int", 100),
        "tol": Param("float", 1e-12),
    },
    "gcr": {
        "problem": Param("str", "laplacian2d", ("laplacian2d", "potential3d")),
        "grid": Param("grid", 31),
        "k": Param("int", 3),
        "eps": Param("float", 1e-8),
        "max_restarts": Param("int", 1000),
        "preconditioner": Param("str", "default", ("default", "identity", "jacobi")),
        "hill": Param("hill", {}),
        "H": Param("float", 4000.0),
        "tol": Param("float", 1e-6),
    },
    "cloudsc": {
        "ngptot": Param("int", 100),
        "klev": Param("int", 137),
        "nproma": Param("ints", [1, 10, 100]),
    },
    "laitri": {
        "kqm": Param("int", 0, (0, 1, 2)),
        "npoints": Param("int", 100000),
        "nlev": Param("int", 8),
        "truncation": Param("int", 31),
    },
    "sladv": {
        "init": Param("int", 1, (1, 2)),
        "nlev": Param("int", 4),
        "halo": Param("int", 2),
        "iout": Param("int", 0),
        "dp_meth": Param("int", 2, (1, 2)),
        "dp_extrap": Param("int", 2, (1, 2)),
        "interp_meth": Param("int", 4, (1, 3, 4)),
        "lqm": Param("bool", True),
        "ndp_iter": Param("int", 3),
        "nsteps": Param("int", 43),
        "ntrac": Param("int", 1),
        "truncation": Param("int", 63),
        "alpha": Param("float", math.pi / 4),
    },
}
COMMON = {"seed": Param("int", 0), "threads": Param("int", 1)}


def _check_value(p: Param, v: Any, path: str) -> Any:
    def need(ok, what):
        if not ok:
            raise ConfigError(f"expected {what}, got {json.dumps(v)}", path)

    if p.kind == "int":
        need(isinstance(v, int) and not isinstance(v, bool), "an integer")
    elif p.kind == "float":
        need(isinstance(v, (int, float)) and not isinstance(v, bool), "a number")
        v = float(v)
    elif p.kind == "bool":
        # lqm and friends are 0/1 flags in the original namelists
        need(isinstance(v, bool) or v in (0, 1), "a boolean or 0/1")
        v = bool(v)
    elif p.kind == "str":
        need(isinstance(v, str), "a string")
    elif p.kind == "ints":
        need(isinstance(v, list) and v and all(isinstance(x, int) and not isinstance(x, bool) and x > 0 for x in v), "a list of positive integers")
    elif p.kind == "grid":
        ok = isinstance(v, int) and not isinstance(v, bool)
        ok = ok or (isinstance(v, list) and len(v) == 3 and all(isinstance(x, int) for x in v))
        need(ok, "a truncation or [nx, ny, nz]")
    elif p.kind == "hill":
        need(isinstance(v, dict), "an object")
        for k, x in v.items():
            if k not in HILL_KEYS:
                raise ConfigError("unknown key", f"{path}.{k}")
            _check_value(Param("float", None), x, f"{path}.{k}")
        v = {k: float(x) for k, x in v.items()}
    if p.choices and v not in p.choices:
        raise ConfigError(f"must be one of {list(p.choices)}, got {json.dumps(v)}", path)
    return v


@dataclasses.dataclass(frozen=True)
class DwarfConfig:
    dwarf: str
    parameters: dict
    seed: int = 0
    threads: int = 1

    def to_dict(self) -> dict:
        return {"dwarf": self.dwarf, "seed": self.seed, "threads": self.threads, **self.parameters}


def config_from_dict(doc: Any) -> DwarfConfig:
    if not isinstance(doc, dict):
        raise ConfigError("top level must be an object")
    if "dwarf" not in doc:
        raise ConfigError("missing key", "dwarf")
    dwarf = doc["dwarf"]
    if dwarf not in SCHEMAS:
        raise ConfigError(f"unknown dwarf {json.dumps(dwarf)}; expected one of {list(DWARFS)}", "dwarf")
    schema = SCHEMAS[dwarf]
    params, common = {}, {}
    for key, value in doc.items():
        if key == "dwarf":
            continue
        if key in COMMON:
            common[key] = _check_value(COMMON[key], value, key)
        elif key in schema:
            params[key] = _check_value(schema[key], value, key)
        else:
            raise ConfigError(f"unknown key for dwarf {dwarf}", key)
    for key, p in schema.items():
        params.setdefault(key, p.default)
    seed = common.get("seed", 0)
    threads = common.get("threads", 1)
    if seed < 0 or seed >= 2**64:
        raise ConfigError("must be an unsigned 64-bit integer", "seed")
    if threads < 1:
        raise ConfigError("must be >= 1", "threads")
    return DwarfConfig(dwarf, params, seed, threads)


def parse_config_text(text: str) -> DwarfConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    return config_from_dict(doc)


def parse_config(path: str | Path) -> DwarfConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    return parse_config_text(text)


def serialize_config(cfg: DwarfConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# -- reports --------------------------------------------------------------------------


@dataclasses.dataclass
class RunReport:
    dwarf: str
    seconds: float
    metrics: list[tuple[str, Any]]
    threads: int
    build_id: str
    checksum: str
    passed: bool
    rows: list[dict] = dataclasses.field(default_factory=list)
    energy_j: float | None = None  # filled in by external power measurement, never here

    def metric(self, name: str) -> Any:
        for k, v in self.metrics:
            if k == name:
                return v
        raise KeyError(name)

    def write_csv(self, path: str | Path) -> None:
        lines = ["name,value"]
        stamp = [("dwarf", self.dwarf), ("passed", self.passed), ("seconds", self.seconds), ("threads", self.threads), ("build_id", self.build_id), ("checksum", self.checksum)]
        for k, v in stamp + list(self.metrics) + [("energy_j", "" if self.energy_j is None else self.energy_j)]:
            lines.append(f"{k},{_fmt(v)}")
        Path(path).write_text("\n".join(lines) + "\n")

    def write_rows_csv(self, path: str | Path) -> None:
        if not self.rows:
            return
        cols = list(self.rows[0])
        out = [",".join(cols)] + [",".join(_fmt(r[c]) for c in cols) for r in self.rows]
        Path(path).write_text("\n".join(out) + "\n")


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def build_id() -> str:
    return f"nwp_dwarfs-{__version__} numpy-{np.__version__} python-{platform.python_version()}"


def _is_timing(name: str) -> bool:
    return name == "seconds" or name.endswith("_seconds") or name.endswith("per_second")


def report_checksum(dwarf: str, metrics: list[tuple[str, Any]], data: str) -> str:
    stable = [(k, _fmt(v)) for k, v in metrics if not _is_timing(k)]
    return hashlib.sha256(json.dumps([dwarf, stable, data]).encode()).hexdigest()


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


# -- drivers ---------------------------------------------------------------------------
# each returns (rows, metrics, data digest, passed); the kernel wall time is
# measured inside so setup is excluded


def _run_sht(p: dict, cfg: DwarfConfig):
    from nwp_dwarfs.sht import sht_roundtrip_bench

    rep = sht_roundtrip_bench(p["truncation"], p["nlev"] * p["fields"], p["iters"], cfg.seed, p["reduced"])
    rows = [{"iter": i + 1, "seconds": s, "max_err": e} for i, (s, e) in enumerate(zip(rep.seconds, rep.max_err))]
    if not p["norms"]:
        rows = [{"iter": r["iter"], "seconds": r["seconds"]} for r in rows]
    max_err = rep.final_max_err
    metrics = [("max_err", max_err), ("iters", p["iters"]), ("kernel_seconds", float(sum(rep.seconds)))]
    return rows, metrics, _digest(rep.max_err), bool(max_err <= p["tol"])


def _run_bifourier(p: dict, cfg: DwarfConfig):
    from nwp_dwarfs.bifourier import bifourier_bench
    from nwp_dwarfs.grids import ContractError, LamGrid

    try:
        grid = LamGrid(p["nx"], p["ny"], p["ext"], p["ext"], grid_kind=p["kind"])
    except ContractError as e:
        raise ConfigError(str(e), "nx") from None
    rows = bifourier_bench(grid, p["nfld"], p["iters"])
    diff = max(r.spectral_norm_diff for r in rows)
    metrics = [("max_spectral_norm_diff", diff), ("kernel_seconds", float(sum(r.seconds for r in rows)))]
    return [dataclasses.asdict(r) for r in rows], metrics, _digest([r.spectral_norm_diff for r in rows]), bool(diff <= p["tol"])


def _run_gcr(p: dict, cfg: DwarfConfig):
    from nwp_dwarfs import gcr
    from nwp_dwarfs.grids import make_gaussian_grid

    gc = gcr.GcrConfig(k=p["k"], eps=p["eps"], max_restarts=p["max_restarts"])
    hill = p["hill"]
    if p["problem"] == "laplacian2d":
        if not isinstance(p["grid"], int):
            raise ConfigError("laplacian2d takes a truncation", "grid")
        if "half_width" in hill:
            raise ConfigError("laplacian2d hill has lon, lat, height", "hill.half_width")
        pc = "identity" if p["preconditioner"] == "default" else p["preconditioner"]
        rep = gcr.solve_laplacian_benchmark(make_gaussian_grid(p["grid"]), hill, gc, pc)
        g, err = rep.gcr, rep.err_bar
        metrics = [("converged", g.converged), ("iterations", g.iterations), ("err_bar", err)]
        passed = g.converged and err <= p["tol"]
        data = _digest(rep.psi)
    else:
        grid = p["grid"] if isinstance(p["grid"], list) else [48, 24, 8]
        bad = sorted(set(hill) - {"height", "half_width"})
        if bad:
            raise ConfigError("potential3d hill has height, half_width", f"hill.{bad[0]}")
        pc = "jacobi" if p["preconditioner"] == "default" else p["preconditioner"]
        m = gcr.build_terrain_metrics(*grid, H=p["H"], hill=hill or None)
        rep = gcr.solve_potential_flow(m, gc, preconditioner=pc)
        g = rep.gcr
        metrics = [("converged", g.converged), ("iterations", g.iterations), ("divergence_linf", rep.divergence_linf)]
        passed = g.converged and rep.divergence_linf <= 10 * p["eps"]
        data = _digest(rep.phi)
    metrics.append(("final_residual", g.residual_history[-1] if g.residual_history else float("nan")))
    metrics.append(("kernel_seconds", g.seconds))
    rows = [{"iter": i, "residual": r} for i, r in enumerate(g.residual_history)]
    return rows, metrics, data, bool(passed)


def _run_cloudsc(p: dict, cfg: DwarfConfig):
    from nwp_dwarfs.cloudsc import cloudsc_bench

    rows = cloudsc_bench(p["ngptot"], p["klev"], p["nproma"], cfg.threads, cfg.seed)
    sums = {r.checksum for r in rows}
    metrics = [("ngptot", p["ngptot"]), ("tendency_checksum", rows[0].checksum), ("kernel_seconds", float(sum(r.seconds for r in rows)))]
    return [dataclasses.asdict(r) for r in rows], metrics, rows[0].checksum, len(sums) == 1


def _run_laitri(p: dict, cfg: DwarfConfig):
    from nwp_dwarfs import interp
    from nwp_dwarfs.grids import Field3d, make_gaussian_grid

    rep = interp.laitri_bench(p["npoints"], p["nlev"], p["kqm"], p["truncation"], cfg.seed)
    # self-check: targets on grid nodes return the stored values bit-exactly
    grid = make_gaussian_grid(p["truncation"])
    levels = np.linspace(0.0, 1.0, p["nlev"]) if p["nlev"] > 1 else np.zeros(1)
    rng = np.random.default_rng(cfg.seed)
    f = Field3d(grid, rng.standard_normal((levels.size, grid.npoints)))
    k = rng.integers(0, grid.npoints, 1000)
    L = rng.integers(0, levels.size, 1000)
    lon, lat = grid.coordinates()
    st, w = interp.locate(grid, levels, lon[k], lat[k], levels[L], p["kqm"])
    nodes_ok = bool(np.array_equal(interp.laitri(f, st, w), f.values[L, k]))
    metrics = [("npoints", rep.npoints), ("kernel_checksum", rep.checksum), ("node_reproduction", nodes_ok), ("kernel_seconds", rep.seconds), ("points_per_second", rep.points_per_second)]
    return [dataclasses.asdict(rep)], metrics, rep.checksum, nodes_ok


def _run_sladv(p: dict, cfg: DwarfConfig, out_dir: Path | None = None):
    from nwp_dwarfs import sladv
    from nwp_dwarfs.grids import ContractError

    try:
        sc = sladv.SlConfig(**p)
    except ContractError as e:
        raise ConfigError(str(e)) from None
    rep = sladv.run_advection(sc, out_dir=out_dir, threads=cfg.threads)
    fin = rep.final
    over = rep.max_overshoot()
    under = rep.max_undershoot()
    finite = bool(np.all(np.isfinite(rep.tracers[0].values)))
    # accuracy against the exact solution is resolution dependent and lives in the pinned suite
    passed = finite and (over <= 1e-12 and under <= 1e-12 if sc.lqm else True)
    metrics = [("linf_err", fin.linf_err), ("l2_err", fin.l2_err), ("max_overshoot", over), ("max_undershoot", under), ("min", fin.min), ("max", fin.max), ("clamp_events", rep.clamp_events), ("kernel_seconds", rep.seconds)]
    rows = [dataclasses.asdict(r) for r in rep.records]
    return rows, metrics, _digest(*(t.values for t in rep.tracers)), bool(passed)


DRIVERS: dict[str, Callable] = {
    "sht": _run_sht,
    "bifourier": _run_bifourier,
    "gcr": _run_gcr,
    "cloudsc": _run_cloudsc,
    "laitri": _run_laitri,
    "sladv": _run_sladv,
}


def default_out_dir() -> Path | None:
    v = os.environ.get(OUT_ENV)
    return Path(v) if v else None


def run_dwarf(cfg: DwarfConfig, out_dir: str | Path | None = None) -> RunReport:
    """Run one dwarf; writes ``<dwarf>.csv`` and ``<dwarf>_report.csv`` when an output dir is set."""
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    driver = DRIVERS[cfg.dwarf]
    t0 = time.perf_counter()
    if cfg.dwarf == "sladv":
        rows, metrics, data, passed = driver(cfg.parameters, cfg, out)
    else:
        rows, metrics, data, passed = driver(cfg.parameters, cfg)
    wall = time.perf_counter() - t0
    rep = RunReport(cfg.dwarf, wall, metrics, cfg.threads, build_id(), report_checksum(cfg.dwarf, metrics, data), passed, rows)
    if out is not None:
        rep.write_rows_csv(out / f"{cfg.dwarf}.csv")
        rep.write_csv(out / f"{cfg.dwarf}_report.csv")
    return rep


# -- regression suite ------------------------------------------------------------------


@dataclasses.dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclasses.dataclass
class RegressSummary:
    checks: list[CheckResult]
    checksum: str

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        out = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]
        out.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed; checksum {self.checksum}")
        return out


def pinned_dir() -> Path:
    return Path(str(resources.files("nwp_dwarfs") / "data"))


def _load_pins(path: Path) -> list[dict]:
    doc = json.loads(path.read_text())
    checks = doc["checks"]
    for c in checks:
        if not isinstance(c.get("name"), str) or not isinstance(c.get("config"), dict) or not isinstance(c.get("pinned"), dict):
            raise ValueError("each check needs name, config and pinned")
        for metric, pin in c["pinned"].items():
            if not (isinstance(pin, dict) and "value" in pin):
                raise ValueError(f"pinned metric {metric} needs a value")
    return checks


def _compare(v: Any, pin: dict) -> bool:
    want = pin["value"]
    if isinstance(want, (bool, str)) or isinstance(v, (bool, str)):
        return v == want
    tol = pin.get("tol", 0.0)
    rel = pin.get("rel", 0.0)
    return bool(abs(v - want) <= tol + rel * abs(want))


def regress(suite: str = "all", pinned: str | Path | None = None, include_slow: bool = False) -> RegressSummary:
    """Run the pinned-value checks of one dwarf (or all) plus rerun and thread-invariance checks."""
    if suite != "all" and suite not in DWARFS:
        raise ConfigError(f"unknown suite {json.dumps(suite)}; expected all or one of {list(DWARFS)}", "suite")
    base = Path(pinned) if pinned is not None else pinned_dir()
    names = list(DWARFS) if suite == "all" else [suite]
    results: list[CheckResult] = []
    sums: list[str] = []
    for dwarf in names:
        path = base / f"{dwarf}.json"
        try:
            checks = _load_pins(path)
        except (OSError, ValueError, KeyError, TypeError) as e:
            results.append(CheckResult(f"{dwarf}/pinned", False, f"cannot load {path.name}: {e}"))
            continue
        for c in checks:
            if c.get("slow") and not include_slow:
                continue
            name = f"{dwarf}/{c['name']}"
            try:
                cfg = config_from_dict({"dwarf": dwarf, **c["config"]})
                rep = run_dwarf(cfg, out_dir=None)
            except Exception as e:  # surfaced as a failed check
                results.append(CheckResult(name, False, f"{type(e).__name__}: {e}"))
                continue
            sums.append(rep.checksum)
            bad = []
            for metric, pin in c["pinned"].items():
                try:
                    got = rep.metric(metric)
                except KeyError:
                    bad.append(f"{metric} missing")
                    continue
                if not _compare(got, pin):
                    bad.append(f"{metric}={_fmt(got)} pinned {_fmt(pin['value'])}")
            if not rep.passed:
                bad.append("self-verification failed")
            results.append(CheckResult(name, not bad, "; ".join(bad) if bad else f"{len(c['pinned'])} pinned values match"))
            for extra in c.get("threads", []):
                other = run_dwarf(dataclasses.replace(cfg, threads=int(extra)), out_dir=None)
                same = other.checksum == rep.checksum
                results.append(CheckResult(f"{name}/threads={extra}", same, "checksum matches" if same else "checksum differs"))
            if c.get("rerun"):
                again = run_dwarf(cfg, out_dir=None)
                same = again.checksum == rep.checksum
                results.append(CheckResult(f"{name}/rerun", same, "checksum matches" if same else "checksum differs"))
    digest = hashlib.sha256("".join(sums).encode()).hexdigest()
    return RegressSummary(results, digest)
