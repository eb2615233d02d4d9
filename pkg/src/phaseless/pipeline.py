"""End-to-end runs: phantom, forward data, extraction, reconstruction, metrics.

A run is described by a JSON config (see :data:`DEFAULTS`); every key is
optional and the effective values are echoed into the report.
"""

from __future__ import annotations

import json
import logging
import os
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import io as pkio
from ._validation import check_choice, check_scalar, merge_defaults
from .elliptic import VolumeGrid
from .errors import ConfigError, PhaselessError, ShapeMismatchError
from .extract import ObservablesTable, extract_observables, los_tolerance
from .forward import KGrid, f1_values, free_space_amplitude, linearized_observables
from .geometry import BallConfig, chord_grid
from .phantom import Bump, Phantom, eval_beta
from .quadrature import ball_clip

log = logging.getLogger(__name__)

METHODS = ("radon", "abel", "both")
FIDELITIES = ("linearized", "geodesic")
SWEEPS = ("auto", "always", "never")

DEFAULTS = {
    "ball": {"B": 1.0, "R": 0.8, "grid_n": 128},
    "phantom": {"bumps": [{"center": [0.0, 0.0, 0.0], "radius": 0.5, "amplitude": 0.01}]},
    "kgrid": {"k0": 50.0, "k_max": 450.0, "dk": 0.5},
    "chords": {"n_z": 64, "n_alpha": 256, "n_s": 256},
    "extraction": {"tol": 1e-6, "fallback": True},
    "sweep": "auto",
    "max_sweep_chords": 50000,
    "write_scan": False,
    "method": "both",
    "fidelity": "linearized",
    "noise": 0.0,
    "seed": 0,
    "radon": {"apodization": "cosine"},
    "abel": {"N": None, "M": None, "method": "iterate", "fill": "zero"},
    "poisson": {"rtol": 1e-8},
    "threads": 1,
    "dump_csv": False,
}


@dataclass
class PipelineConfig:
    """Validated run configuration.

    Build with :meth:`from_dict` or :meth:`load`; ``values`` holds the full
    config with defaults filled in.
    """

    values: dict = field(default_factory=lambda: merge_defaults({}, DEFAULTS))

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, d):
        if d is None:
            d = {}
        # "phantom" is replaced wholesale, not merged bump by bump
        user = dict(d)
        phantom = user.pop("phantom", None)
        vals = merge_defaults(user, DEFAULTS)
        if phantom is not None:
            if not isinstance(phantom, dict):
                raise ConfigError("phantom must be a JSON object")
            vals["phantom"] = {"bumps": list(phantom.get("bumps", []))}
            if "ball" in phantom and "ball" not in d:
                vals["ball"] = merge_defaults(phantom["ball"], DEFAULTS["ball"], "phantom.ball")
        return cls(vals)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                              f"{exc.msg}") from exc
        return cls.from_dict(data)

    def __getitem__(self, key):
        return self.values[key]

    def validate(self):
        v = self.values
        self.ball = BallConfig.from_dict(v["ball"])
        self.phantom = Phantom(tuple(Bump(b["center"], float(b["radius"]), float(b["amplitude"]))
                                     for b in v["phantom"]["bumps"]), self.ball)
        kg = v["kgrid"]
        for key in ("k0", "k_max", "dk"):
            check_scalar(kg[key], f"kgrid.{key}", low=0.0, low_inclusive=False)
        self.kgrid = KGrid.from_step(kg["k0"], kg["k_max"], kg["dk"])
        for key in ("n_z", "n_alpha", "n_s"):
            check_scalar(v["chords"][key], f"chords.{key}", int, low=1)
        check_scalar(v["extraction"]["tol"], "extraction.tol", low=0.0, low_inclusive=False)
        check_choice(v["extraction"]["fallback"], "extraction.fallback", (True, False))
        check_choice(v["sweep"], "sweep", SWEEPS)
        check_scalar(v["max_sweep_chords"], "max_sweep_chords", int, low=0)
        check_choice(v["write_scan"], "write_scan", (True, False))
        check_choice(v["method"], "method", METHODS)
        check_choice(v["fidelity"], "fidelity", FIDELITIES)
        check_scalar(v["noise"], "noise", low=0.0)
        check_scalar(v["seed"], "seed", int, low=0)
        check_choice(v["radon"]["apodization"], "radon.apodization", ("none", "cosine"))
        ab = v["abel"]
        check_scalar(ab["N"], "abel.N", int, low=0, allow_none=True)
        check_scalar(ab["M"], "abel.M", int, low=8, allow_none=True)
        check_choice(ab["method"], "abel.method", ("iterate", "dense"))
        check_choice(ab["fill"], "abel.fill", ("zero", "hold"))
        check_scalar(v["poisson"]["rtol"], "poisson.rtol", low=0.0, low_inclusive=False)
        check_scalar(v["threads"], "threads", int, low=1)
        check_choice(v["dump_csv"], "dump_csv", (True, False))
        if v["noise"] > 0 and v["sweep"] == "never":
            raise ConfigError("noise needs synthesized sweeps; set sweep to 'auto' or 'always'")
        return self

    def n_chords(self):
        c = self.values["chords"]
        return c["n_z"] * c["n_alpha"] * c["n_s"]

    def use_sweeps(self):
        mode = self.values["sweep"]
        if mode == "auto":
            return self.values["noise"] > 0 or self.n_chords() <= self.values["max_sweep_chords"]
        return mode == "always"

    def to_dict(self):
        return json.loads(json.dumps(self.values))


@dataclass
class RunReport:
    """Timings, metrics and the echoed config of one run."""

    config: dict
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "timings": self.timings, "metrics": self.metrics,
                "warnings": self.warnings, "outputs": self.outputs}

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@contextmanager
def stage(name, report=None):
    """Time a stage, collect its warnings and tag its errors with ``name``."""
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            yield
        except PhaselessError as exc:
            if exc.args and isinstance(exc.args[0], str):
                exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
            exc.stage = name
            raise
        finally:
            if report is not None:
                report.timings[name] = time.perf_counter() - t0
                seen = set()
                for w in caught:
                    msg = f"[{name}] {w.message}"
                    if msg not in seen:
                        seen.add(msg)
                        report.warnings.append(msg)
    log.info("%s done in %.2fs", name, time.perf_counter() - t0)


# -- metrics -----------------------------------------------------------------

def resample_volume(src, like):
    """Trilinear resampling of ``src`` onto the grid of ``like`` (0 outside)."""
    axes = tuple(src.axis(i) for i in range(3))
    interp = RegularGridInterpolator(axes, src.values, bounds_error=False, fill_value=0.0)
    vals = interp(like.points().reshape(-1, 3)).reshape(like.shape)
    return like.like(vals)


def compare_volumes(a, b, R=None, resample=False):
    """Error of ``a`` against the reference ``b``, masked to ``|x| < R``.

    Parameters
    ----------
    R : float, optional
        Mask radius; default covers the whole grid.
    resample : bool
        Resample ``b`` onto the grid of ``a`` when the grids differ
        (trilinear, zero outside ``b``'s grid) instead of raising.

    Returns
    -------
    dict
        ``rel_l2 = ||a - b|| / ||b||`` (``||a - b|| / ||a||`` when ``b``
        vanishes, so ``b = 0, a != 0`` gives 1 and ``a = b = 0`` gives 0),
        ``linf = max |a - b|`` and per-slice ``rel_l2`` along the last axis.

    Raises
    ------
    ShapeMismatchError
        Grids differ and ``resample`` is false.
    """
    if not a.same_grid(b):
        if not resample:
            raise ShapeMismatchError(f"volumes differ: shape {a.shape} vs {b.shape}, "
                                     f"spacing {a.spacing} vs {b.spacing}")
        b = resample_volume(b, a)
    mask = a.mask(R) if R is not None else np.ones(a.shape, dtype=bool)
    diff = np.where(mask, a.values - b.values, 0.0)
    ref = np.where(mask, b.values, 0.0)
    alt = np.where(mask, a.values, 0.0)

    def rel(d, r, s):
        nd, nr = np.linalg.norm(d), np.linalg.norm(r)
        if nr > 0:
            return float(nd / nr)
        ns = np.linalg.norm(s)
        return float(nd / ns) if ns > 0 else 0.0

    per_slice = [rel(diff[:, :, k], ref[:, :, k], alt[:, :, k]) for k in range(a.shape[2])]
    return {"rel_l2": rel(diff, ref, alt), "linf": float(np.max(np.abs(diff), initial=0.0)),
            "per_slice": per_slice, "z": a.axis(2).tolist(),
            "mask_radius": None if R is None else float(R)}


def true_beta(phantom, n=None):
    return VolumeGrid.from_function(lambda x: eval_beta(phantom, x), phantom.cfg, n)


# -- forward data ------------------------------------------------------------

def geodesic_observables(phantom, x, y, batch=512):
    """``(tau, A, dist)`` from ray tracing for chords meeting a bump.

    Chords that miss every bump are straight rays of the background
    (``beta >= 0`` means no bent path is shorter).  Expensive: each hit
    chord costs 37 two-point ray solves for the amplitude.
    """
    from .geodesic import amplitude_geodesic, tau_geodesic
    d = np.linalg.norm(x - y, axis=1)
    tau = d.copy()
    A = free_space_amplitude(d)
    hit = np.zeros(d.size, dtype=bool)
    for b in phantom.bumps:
        if b.amplitude > 0:
            lo, hi = ball_clip(x, y, b.center, b.radius)
            hit |= hi > lo
    rows = np.flatnonzero(hit)
    for start in range(0, rows.size, batch):
        sel = rows[start:start + batch]
        tau[sel] = tau_geodesic(phantom, x[sel], y[sel])
    for i in rows:
        A[i] = amplitude_geodesic(phantom, x[i], y[i])
    return tau, A, d


def forward_observables(cfg, chords):
    """Exact ``(tau, A, dist)`` per chord for the configured fidelity."""
    if cfg["fidelity"] == "geodesic":
        return geodesic_observables(cfg.phantom, chords.x, chords.y)
    return linearized_observables(cfg.phantom, chords.x, chords.y)


def simulate(cfg, chords, scan_path=None, chunk=4096, chord_file="chords.pkchord"):
    """Observables table for ``chords``.

    With sweeps, F1 intensities are synthesized on the k-grid (with noise
    from the seeded generator), optionally streamed to ``scan_path``, and
    passed through extraction.  Without sweeps the exact observables are
    used directly.  ``chord_file`` is the chord-set name recorded in the
    scan header.
    """
    tau, A, d = forward_observables(cfg, chords)
    if not cfg.use_sweeps():
        return ObservablesTable.from_chords(chords, tau, A, np.isclose(tau, d, rtol=0, atol=0))
    grid = cfg.kgrid
    rng = np.random.default_rng(cfg["seed"])
    noise = cfg["noise"]
    tol = max(cfg["extraction"]["tol"], los_tolerance(noise, grid.n_k)) if noise else \
        cfg["extraction"]["tol"]
    out = {k: np.empty(d.size) for k in ("A_hat", "tau_hat", "quality")}
    los = np.empty(d.size, dtype=bool)
    writer = None
    if scan_path is not None:
        writer = pkio.ScanWriter(scan_path, d.size, grid, "F1", cfg.ball, chords=chord_file,
                                 meta={"noise": noise, "seed": cfg["seed"]})
    try:
        for start in range(0, d.size, chunk):
            sl = slice(start, min(d.size, start + chunk))
            vals = f1_values(A[sl], tau[sl], d[sl], grid.k, noise=noise, rng=rng)
            if writer is not None:
                writer.write(vals)
            res = extract_observables(vals, grid, d[sl], tol, cfg["extraction"]["fallback"])
            for key in out:
                out[key][sl] = res[key]
            los[sl] = res["line_of_sight"]
    finally:
        if writer is not None:
            writer.close()
    return ObservablesTable(chords.z, chords.alpha, chords.s, d, out["A_hat"], out["tau_hat"],
                            los, out["quality"])


# -- the run -----------------------------------------------------------------

def run_pipeline(config, output=None):
    """Run every stage of ``config`` and write artifacts to ``output``.

    Files: ``phantom.json``, ``beta_true.pkvol``, ``chords.pkchord``,
    ``observables.pkobs`` (plus ``scan.pkscan`` when requested),
    ``beta_radon.pkvol``, ``q_abel.pkvol``, ``beta_abel.pkvol`` and
    ``report.json``.  ``output=None`` keeps everything in memory.

    Returns
    -------
    RunReport
        ``metrics`` holds ``radon`` and/or ``abel`` errors against the
        true ``beta`` and, for ``method="both"``, ``radon_vs_abel``.
    """
    from .abelgeo import reconstruct_beta_abel
    from .radon import reconstruct_beta_radon

    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.from_dict(config)
    report = RunReport(cfg.to_dict())
    if output is not None:
        os.makedirs(output, exist_ok=True)

    def path(name):
        return None if output is None else os.path.join(output, name)

    def record(name, p):
        if p is not None:
            report.outputs[name] = p

    method = cfg["method"]
    workers = cfg["threads"]
    with stage("phantom", report):
        cfg.phantom.check_smallness()
        truth = true_beta(cfg.phantom)
        if output is not None:
            cfg.phantom.save(path("phantom.json"))
            pkio.write_volume(path("beta_true.pkvol"), truth)
            record("phantom", path("phantom.json"))
            record("beta_true", path("beta_true.pkvol"))
    with stage("simulate", report):
        ch = cfg["chords"]
        chords = chord_grid(cfg.ball, ch["n_z"], ch["n_alpha"], ch["n_s"])
        scan = path("scan.pkscan") if cfg["write_scan"] and cfg.use_sweeps() else None
        if output is not None:
            chords.save(path("chords.pkchord"))
            record("chords", path("chords.pkchord"))
        table = simulate(cfg, chords, scan)
        record("scan", scan)
        if output is not None:
            table.save(path("observables.pkobs"))
            record("observables", path("observables.pkobs"))
    R = cfg.ball.R
    vols = {}
    if method in ("radon", "both"):
        with stage("recon-radon", report):
            vols["radon"] = reconstruct_beta_radon(table, cfg.ball,
                                                   apodization=cfg["radon"]["apodization"],
                                                   workers=workers)
            report.metrics["radon"] = compare_volumes(vols["radon"], truth, R)
            if output is not None:
                pkio.write_volume(path("beta_radon.pkvol"), vols["radon"])
                record("beta_radon", path("beta_radon.pkvol"))
    if method in ("abel", "both"):
        ab = cfg["abel"]
        with stage("recon-abel", report):
            beta, q = reconstruct_beta_abel(table, cfg.ball, N=ab["N"], M=ab["M"],
                                            method=ab["method"], fill=ab["fill"],
                                            rtol=cfg["poisson"]["rtol"], workers=workers)
            vols["abel"] = beta
            report.metrics["abel"] = compare_volumes(beta, truth, R)
            if output is not None:
                pkio.write_volume(path("q_abel.pkvol"), q)
                pkio.write_volume(path("beta_abel.pkvol"), beta)
                record("q_abel", path("q_abel.pkvol"))
                record("beta_abel", path("beta_abel.pkvol"))
    if method == "both":
        report.metrics["radon_vs_abel"] = compare_volumes(vols["abel"], vols["radon"], R)
    if output is not None:
        if cfg["dump_csv"]:
            for name, vol in vols.items():
                pkio.dump_volume_csv(path(f"beta_{name}.csv"), vol, truth)
                record(f"csv_{name}", path(f"beta_{name}.csv"))
        record("report", path("report.json"))
        report.save(path("report.json"))
    report.volumes = vols
    report.truth = truth
    return report


def load_any_config(path):
    """Pipeline config from a pipeline JSON or a bare phantom JSON."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                              f"{exc.msg}") from exc
    return PipelineConfig.from_dict(data)


__all__ = ["DEFAULTS", "PipelineConfig", "RunReport", "compare_volumes", "resample_volume",
           "run_pipeline", "simulate", "true_beta"]
