"""Grid sweeps over SystemParams with CSV/JSON output.

Configuration is a flat ``key = value`` text format::

    # base parameters are plain SystemParams field names
    J = 30
    temperature = 1e-3
    method = langevin
    outputs = g2_aa, G1, G2
    axis1.name = delta
    axis1.start = -1
    axis1.stop = 0.5
    axis1.count = 151
    axis1.scale = linear        # or log
    axis2.name = temperature
    axis2.values = 1e-3, 1e-2, 5e-2
    tau.start = 0               # g2tau only
    tau.stop = 2
    tau.count = 201
    fock.n_a_max = 4            # master equation truncation
    rtol = 1e-10
    workers = 4

Every key can also be given as ``--set key=value`` on the command line.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import langevin, master
from .params import (
    SystemParams,
    optimal_coupling,
    optimal_coupling_asymptotic,
    optimal_detuning,
    optimal_detuning_asymptotic,
)

METHODS = ("langevin", "master", "both")
STATUSES = ("ok", "unconverged", "unstable", "error")

LANGEVIN_OUTPUTS = ("g2_aa", "G1", "G2", "fields")
MASTER_OUTPUTS = ("g2_aa", "g2_bb", "g2_ab")
FIELD_COLUMNS = ("alpha0_re", "alpha0_im", "beta0_re", "beta0_im", "q0", "max_real_eigenvalue")
DEFAULT_OUTPUTS = {"langevin": ("g2_aa", "G1", "G2"), "master": MASTER_OUTPUTS, "both": ("g2_aa",)}
DEVIATION_FLAG = 0.10


class ConfigError(ValueError):
    """Bad configuration; raised before any computation starts."""


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple[float, ...]

    @classmethod
    def from_range(cls, name, start, stop, count, scale="linear"):
        if name not in SystemParams.field_names():
            raise ConfigError(f"axis name {name!r} is not a parameter (choose from {', '.join(SystemParams.field_names())})")
        if int(count) != count or count < 2:
            raise ConfigError(f"axis {name!r}: count must be an integer >= 2, got {count!r}")
        if scale == "linear":
            vals = np.linspace(start, stop, int(count))
        elif scale == "log":
            if not (start > 0 and stop > 0):
                raise ConfigError(f"axis {name!r}: log scale needs positive start/stop")
            vals = np.geomspace(start, stop, int(count))
        else:
            raise ConfigError(f"axis {name!r}: scale must be 'linear' or 'log', got {scale!r}")
        return cls(name, tuple(float(v) for v in vals))


@dataclass(frozen=True)
class SweepSpec:
    base: SystemParams = field(default_factory=SystemParams)
    axes: tuple[Axis, ...] = ()
    method: str = "langevin"
    outputs: tuple[str, ...] = ()
    tau: tuple[float, ...] | None = None
    fock: master.FockConfig = field(default_factory=master.FockConfig)
    rtol: float = 1e-10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if len(self.axes) > 2:
            raise ConfigError("at most two axes are supported")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate axis names {names}")
        for a in self.axes:
            if a.name not in SystemParams.field_names():
                raise ConfigError(f"axis name {a.name!r} is not a parameter")
            if len(a.values) < 2:
                raise ConfigError(f"axis {a.name!r} needs at least two values")
        if not self.outputs:
            object.__setattr__(self, "outputs", DEFAULT_OUTPUTS[self.method])
        allowed = {
            "langevin": LANGEVIN_OUTPUTS,
            "master": MASTER_OUTPUTS,
            "both": tuple(dict.fromkeys(LANGEVIN_OUTPUTS + MASTER_OUTPUTS)),
        }[self.method]
        bad = [o for o in self.outputs if o not in allowed]
        if bad:
            raise ConfigError(f"outputs {bad} not available with method={self.method} (allowed: {', '.join(allowed)})")
        if self.tau is not None:
            if self.method != "langevin":
                raise ConfigError("a tau grid is only valid with method=langevin")
            if len(self.tau) == 0 or any(t < 0 for t in self.tau):
                raise ConfigError("tau grid must be non-empty and non-negative")
        # every grid point must be a valid parameter set
        for values in self.points():
            try:
                self.base.replace(**values)
            except ValueError as exc:
                raise ConfigError(f"grid point {values}: {exc}") from None

    def points(self) -> list[dict]:
        """Grid points in row-major order (first axis slowest)."""
        if not self.axes:
            return [{}]
        shape = [len(a.values) for a in self.axes]
        return [
            {a.name: a.values[i] for a, i in zip(self.axes, idx)}
            for idx in np.ndindex(*shape)
        ]

    def columns(self) -> list[str]:
        cols = [a.name for a in self.axes]
        if self.tau is not None:
            cols.append("tau")
        for o in self.outputs:
            if o == "fields":
                cols.extend(FIELD_COLUMNS)
            elif self.method == "both" and o == "g2_aa":
                cols.extend(["g2_aa_langevin", "g2_aa_master", "rel_deviation"])
            else:
                cols.append(o)
        cols.append("status")
        return cols


@dataclass
class RunManifest:
    points: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    spec: dict = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in STATUSES}
        for pt in self.points:
            out[pt["status"]] += 1
        return out

    @property
    def all_ok(self) -> bool:
        return all(pt["status"] == "ok" for pt in self.points)

    def to_dict(self) -> dict:
        return {"spec": self.spec, "counts": self.counts(), "wall_time": self.wall_time, "points": self.points}

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, default=_json_default)
            fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(repr(obj))


# ---------------------------------------------------------------- config

def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _float(key, value) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _int(key, value) -> int:
    x = _float(key, value)
    if int(x) != x:
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return int(x)


def _floats(key, value) -> tuple[float, ...]:
    return tuple(_float(key, v) for v in value.split(",") if v.strip())


def spec_from_mapping(cfg: dict[str, str]) -> tuple[SweepSpec, dict]:
    """Build a SweepSpec; returns it with the leftover run options (workers, optimum.*)."""
    cfg = dict(cfg)
    params = {}
    for name in SystemParams.field_names():
        if name in cfg:
            params[name] = _float(name, cfg.pop(name))
    try:
        base = SystemParams(**params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    axes = []
    for i in (1, 2, 3):
        keys = {k: cfg.pop(k) for k in list(cfg) if k.startswith(f"axis{i}.")}
        if not keys:
            continue
        if i == 3:
            raise ConfigError("at most two axes are supported")
        sub = {k.split(".", 1)[1]: v for k, v in keys.items()}
        unknown = set(sub) - {"name", "start", "stop", "count", "scale", "values"}
        if unknown:
            raise ConfigError(f"unknown axis{i} keys: {sorted(unknown)}")
        if "name" not in sub:
            raise ConfigError(f"axis{i}.name is required")
        name = sub["name"]
        if name not in SystemParams.field_names():
            raise ConfigError(f"axis{i}.name={name!r} is not a parameter (choose from {', '.join(SystemParams.field_names())})")
        if "values" in sub:
            vals = _floats(f"axis{i}.values", sub["values"])
            if len(vals) < 2:
                raise ConfigError(f"axis{i}.values needs at least two entries")
            axes.append(Axis(name, vals))
        else:
            missing = [k for k in ("start", "stop", "count") if k not in sub]
            if missing:
                raise ConfigError(f"axis{i} is missing {missing}")
            axes.append(Axis.from_range(
                name,
                _float(f"axis{i}.start", sub["start"]),
                _float(f"axis{i}.stop", sub["stop"]),
                _int(f"axis{i}.count", sub["count"]),
                sub.get("scale", "linear"),
            ))
    if "axis2.name" in cfg and not axes:
        raise ConfigError("axis2 given without axis1")

    tau = None
    tkeys = {k.split(".", 1)[1]: cfg.pop(k) for k in list(cfg) if k.startswith("tau.")}
    if tkeys:
        unknown = set(tkeys) - {"start", "stop", "count", "values"}
        if unknown:
            raise ConfigError(f"unknown tau keys: {sorted(unknown)}")
        if "values" in tkeys:
            tau = _floats("tau.values", tkeys["values"])
        else:
            n = _int("tau.count", tkeys.get("count", "2"))
            if n < 1:
                raise ConfigError("tau.count must be >= 1")
            tau = tuple(float(t) for t in np.linspace(
                _float("tau.start", tkeys.get("start", "0")), _float("tau.stop", tkeys.get("stop", "0")), n))

    fkeys = {k.split(".", 1)[1]: cfg.pop(k) for k in list(cfg) if k.startswith("fock.")}
    unknown = set(fkeys) - {"n_a_max", "n_b_max", "n_m_max"}
    if unknown:
        raise ConfigError(f"unknown fock keys: {sorted(unknown)}")
    try:
        fock = master.FockConfig(**{k: _int(f"fock.{k}", v) for k, v in fkeys.items()})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    method = cfg.pop("method", "langevin")
    outputs = tuple(o.strip() for o in cfg.pop("outputs", "").split(",") if o.strip())
    rtol = _float("rtol", cfg.pop("rtol", "1e-10"))

    run = {}
    if "workers" in cfg:
        run["workers"] = _int("workers", cfg.pop("workers"))
        if run["workers"] < 1:
            raise ConfigError("workers must be >= 1")
    for k in list(cfg):
        if k.startswith("optimum."):
            run[k] = _float(k, cfg.pop(k))
    if cfg:
        raise ConfigError(f"unknown configuration keys: {sorted(cfg)}")

    spec = SweepSpec(base, tuple(axes), method, outputs, tau, fock, rtol)
    return spec, run


def load_spec(path=None, overrides=None, method=None) -> tuple[SweepSpec, dict]:
    cfg = {}
    if path is not None:
        try:
            with open(path) as fh:
                cfg = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg.update(overrides or {})
    if method is not None:
        cfg["method"] = method
    return spec_from_mapping(cfg)


def spec_to_dict(spec: SweepSpec) -> dict:
    return {
        "base": spec.base.to_dict(),
        "axes": [{"name": a.name, "values": list(a.values)} for a in spec.axes],
        "method": spec.method,
        "outputs": list(spec.outputs),
        "tau": None if spec.tau is None else list(spec.tau),
        "fock": list(spec.fock.dims),
        "rtol": spec.rtol,
    }


# ---------------------------------------------------------------- evaluation

_SEVERITY = {s: i for i, s in enumerate(STATUSES)}


def _worst(*statuses):
    return max(statuses, key=_SEVERITY.__getitem__)


def _langevin_point(p, spec):
    out = {}
    info = {}
    try:
        ss = langevin.solve_steady_state(p)
    except langevin.SteadyStateError as exc:
        return {}, "error", {"error": str(exc)}
    out.update(
        alpha0_re=ss.alpha0.real, alpha0_im=ss.alpha0.imag,
        beta0_re=ss.beta0.real, beta0_im=ss.beta0.imag,
        q0=ss.q0, max_real_eigenvalue=ss.max_real_eigenvalue,
    )
    info["max_real_eigenvalue"] = ss.max_real_eigenvalue
    info["steady_state_residual"] = max(ss.residuals)
    if not ss.stable:
        return out, "unstable", info
    tau = (0.0,) if spec.tau is None else spec.tau
    try:
        cs = langevin.g2_tau(p, np.asarray(tau), ss=ss, rtol=spec.rtol)
    except (langevin.SingularResponseError, langevin.IntegrationError, langevin.UndefinedCorrelationError) as exc:
        info["error"] = str(exc)
        return out, "error", info
    out["g2_aa"] = cs.g2
    out["G1"] = cs.g1_part
    out["G2"] = cs.g2_part
    return out, "ok", info


def _master_point(p, spec):
    info = {}
    try:
        res = master.solve_master(p, spec.fock)
        g2aa, g2bb, g2ab = master.correlations_equal_time(res.rho, res.fock)
    except (master.ResourceError, master.MasterSolveError, langevin.UndefinedCorrelationError) as exc:
        return {}, "error", {"error": str(exc)}
    info["truncation"] = {"dims": list(res.fock.dims), "tails": res.tail_populations, "converged": res.converged}
    info["residual"] = res.residual
    info["trace"] = float(np.trace(res.rho).real)
    info["hermiticity_delta"] = res.hermiticity_delta
    info["min_eigenvalue"] = res.min_eigenvalue
    return {"g2_aa": g2aa, "g2_bb": g2bb, "g2_ab": g2ab}, ("ok" if res.converged else "unconverged"), info


def evaluate_point(spec: SweepSpec, index: int, values: dict):
    """Compute one grid point; returns (csv rows, manifest entry). Never raises for numerical failures."""
    t0 = time.perf_counter()
    p = spec.base.replace(**values)
    info = {}
    if spec.method == "langevin":
        q, status, info = _langevin_point(p, spec)
    elif spec.method == "master":
        q, status, info = _master_point(p, spec)
    else:
        ql, sl, il = _langevin_point(p, spec)
        qm, sm, im = _master_point(p, spec)
        status = _worst(sl, sm)
        q = dict(ql)
        for k, v in qm.items():
            if k != "g2_aa":
                q[k] = v
        gl = ql.get("g2_aa", [math.nan])[0]
        gm = qm.get("g2_aa", math.nan)
        q["g2_aa_langevin"] = gl
        q["g2_aa_master"] = gm
        q["rel_deviation"] = abs(gl - gm) / abs(gm) if gm != 0 else math.inf
        info = {"langevin": il, "master": im}

    cols = spec.columns()
    ntau = 1 if spec.tau is None else len(spec.tau)
    rows = []
    for k in range(ntau):
        row = dict(values)
        if spec.tau is not None:
            row["tau"] = spec.tau[k]
        for c in cols:
            if c in row or c == "status":
                continue
            v = q.get(c, math.nan)
            if isinstance(v, np.ndarray):
                v = v[k]
            row[c] = float(v)
        rows.append(row)
    # nan is reserved for flagged rows: an ok point with a non-finite value is an error
    if status == "ok" and any(not math.isfinite(r[c]) for r in rows for c in cols if c not in ("status",)):
        status = "error"
        info["error"] = "non-finite result"
    if status in ("unstable", "error"):
        for r in rows:
            for c in cols:
                if c not in values and c not in ("status", "tau", *FIELD_COLUMNS):
                    r[c] = math.nan
    for r in rows:
        r["status"] = status
    entry = {
        "index": index,
        "values": dict(values),
        "params": p.to_dict(),
        "status": status,
        "wall_time": time.perf_counter() - t0,
    }
    entry.update(info)
    return rows, entry


def _evaluate_star(args):
    return evaluate_point(*args)


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, workers: int | None = None) -> tuple[list[dict], RunManifest]:
    """Evaluate every grid point; rows are ordered by grid index whatever the worker count."""
    t0 = time.perf_counter()
    pts = spec.points()
    jobs = [(spec, i, v) for i, v in enumerate(pts)]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        results = [_evaluate_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            # map yields in submission order, so completion order never leaks into the table
            results = list(pool.map(_evaluate_star, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    rows = [r for rs, _ in results for r in rs]
    manifest = RunManifest([e for _, e in results], time.perf_counter() - t0, spec_to_dict(spec))
    return rows, manifest


# ---------------------------------------------------------------- CSV

def format_value(x) -> str:
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0.0"
    if abs(x) < 1e-3 or abs(x) >= 1e16:
        return np.format_float_scientific(x, unique=True, trim="-", exp_digits=2)
    return np.format_float_positional(x, unique=True, trim="0")


def write_csv(rows: list[dict], columns: list[str], dest=None) -> str:
    """RFC-4180 table; returns the text and writes it to ``dest`` (path or stream) if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r[c]) for c in columns])
    text = buf.getvalue()
    if dest is not None:
        if hasattr(dest, "write"):
            dest.write(text)
        else:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
    return text


# ---------------------------------------------------------------- reports

@dataclass
class CrossValidation:
    rows: list[dict]
    manifest: RunManifest
    deviations: np.ndarray
    quantiles: dict[str, float]
    flagged: list[int]

    def lines(self) -> list[str]:
        out = [f"points: {len(self.rows)}, flagged (> {DEVIATION_FLAG:.0%} or not ok): {len(self.flagged)}"]
        out += [f"deviation {k}: {format_value(v)}" for k, v in self.quantiles.items()]
        return out


def cross_validate(spec: SweepSpec, workers: int | None = None) -> CrossValidation:
    """Langevin vs master-equation g2_aa(0) on every grid point."""
    if spec.method != "both":
        raise ConfigError("cross-validation needs method=both")
    if "g2_aa" not in spec.outputs:
        raise ConfigError("cross-validation needs g2_aa among the outputs")
    rows, manifest = run_sweep(spec, workers)
    dev = np.array([r["rel_deviation"] for r in rows])
    ok = np.array([r["status"] == "ok" for r in rows])
    good = dev[ok & np.isfinite(dev)]
    if good.size:
        qs = {f"q{int(q * 100):02d}": float(np.quantile(good, q)) for q in (0.0, 0.5, 0.9, 1.0)}
    else:
        qs = {}
    flagged = [i for i, r in enumerate(rows) if r["status"] != "ok" or not r["rel_deviation"] <= DEVIATION_FLAG]
    return CrossValidation(rows, manifest, dev, qs, flagged)


@dataclass
class OptimumReport:
    values: dict[str, float]
    errors: list[str]

    def lines(self) -> list[str]:
        out = [f"{k}: {format_value(v)}" for k, v in self.values.items()]
        out += [f"ERROR {e}" for e in self.errors]
        return out


def optimum_report(
    J: float,
    kappa: float = 1.0,
    omega_m: float = 100.0,
    base: SystemParams | None = None,
    scan: bool = True,
    window: float = 0.1,
    step: float = 0.01,
    workers: int | None = None,
) -> OptimumReport:
    """Closed-form optimum, its large-J limit, and (optionally) the scanned g2(0) argmin.

    The scan covers +-window around the closed-form point with spacing ``step``.
    """
    vals, errors = {}, []
    d_opt = g_opt = None
    try:
        d_opt = optimal_detuning(J, kappa)
        vals["delta_opt"] = d_opt
    except ValueError as exc:
        errors.append(f"optimal detuning: {exc}")
    vals["delta_opt_asymptotic"] = optimal_detuning_asymptotic(kappa)
    try:
        g_opt = optimal_coupling(J, kappa, omega_m)
        vals["g0_opt"] = g_opt
    except ValueError as exc:
        errors.append(f"optimal coupling: {exc}")
    if J > 0:
        vals["g0_opt_asymptotic"] = optimal_coupling_asymptotic(J, kappa, omega_m)
        if g_opt:
            vals["g0_asymptotic_rel_diff"] = abs(vals["g0_opt_asymptotic"] - g_opt) / g_opt
    if d_opt:
        vals["delta_asymptotic_rel_diff"] = abs(vals["delta_opt_asymptotic"] - d_opt) / abs(d_opt)
    if scan and d_opt is not None and g_opt is not None:
        base = base or SystemParams()
        base = base.replace(J=J, kappa_a=kappa, kappa_b=kappa, omega_m=omega_m)
        n = int(round(window / step))
        d_axis = Axis("delta", tuple(float(v) for v in np.round(d_opt / step) * step + step * np.arange(-n, n + 1)))
        g_lo = max(0.0, round(g_opt / step) * step - n * step)
        g_axis = Axis("g0", tuple(float(v) for v in g_lo + step * np.arange(0, 2 * n + 1)))
        spec = SweepSpec(base, (d_axis, g_axis), "langevin", ("g2_aa",))
        rows, _ = run_sweep(spec, workers)
        g2 = np.array([r["g2_aa"] if r["status"] == "ok" else np.inf for r in rows])
        if np.all(~np.isfinite(g2)):
            errors.append("scan: no valid grid point")
        else:
            best = rows[int(np.argmin(g2))]
            vals.update(
                delta_scan=best["delta"], g0_scan=best["g0"], g2_scan_min=best["g2_aa"],
                delta_scan_offset=best["delta"] - d_opt, g0_scan_offset=best["g0"] - g_opt,
                scan_step=step,
            )
    return OptimumReport(vals, errors)
