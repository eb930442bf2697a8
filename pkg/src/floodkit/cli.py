"""Batch command-line front end.

Verbs: simulate, detect, metrics, residual, raincheck, meshgen. Every verb
accepts ``--threads N`` (execution is single-threaded and deterministic
regardless; the flag is kept for interface stability) and ``--out PATH``
for its JSON report (stdout otherwise).

Exit codes: 0 success or rain trigger, 1 invalid input, 2 no rain trigger,
3 numerical instability.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import observe, rainfall, residuals, snapshot, swe
from .kernels import SpectralPlan
from .mesh import CurvilinearMesh, MeshBoundary, elliptic_mesh
from .raster import DegenerateRangeError, Mask, RasterFormatError, read_esri_ascii, write_esri_ascii

log = logging.getLogger("floodkit")

EXIT_OK, EXIT_INVALID, EXIT_NO_TRIGGER, EXIT_UNSTABLE = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid run config:\n" + "\n".join(f"  - {e}" for e in self.errors))


_SIDE = {"enum": list(swe.SIDES)}
_FACES = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}

RUN_CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["dem", "duration", "snapshot_every", "output_dir"],
    "properties": {
        "dem": {"type": "string"},
        "manning": {"type": "string"},
        "manning_uniform": {"type": "number", "exclusiveMinimum": 0},
        "landcover": {"type": "string"},
        "manning_table": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "infiltration_mm_h": {"type": "string"},
        "rain_manifest": {"type": "string"},
        "init_state": {"type": "string"},
        "inflow": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["csv", "side"],
                "properties": {
                    "csv": {"type": "string"},
                    "side": _SIDE,
                    "faces": _FACES,
                    "n_faces": {"type": "integer", "minimum": 1},
                },
            },
        },
        "outflow": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["side", "slope"],
                "properties": {"side": _SIDE, "slope": {"type": "number", "exclusiveMinimum": 0}, "faces": _FACES},
            },
        },
        "scheme": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in ("theta", "alpha", "h_dry", "h_flow_min", "dt_max")},
        },
        "duration": {"type": "number", "minimum": 0},
        "snapshot_every": {"type": "number", "exclusiveMinimum": 0},
        "output_dir": {"type": "string"},
    },
}

_PATH_KEYS = ("dem", "manning", "landcover", "infiltration_mm_h", "rain_manifest", "init_state")


@dataclass
class RunConfig:
    raw: dict
    base: Path

    def path(self, key_or_value) -> Path:
        p = Path(self.raw.get(key_or_value, key_or_value))
        return p if p.is_absolute() else self.base / p

    @property
    def scheme(self) -> swe.SchemeParams:
        return swe.SchemeParams(**self.raw.get("scheme", {}))


def validate_config(raw, base=".") -> RunConfig:
    """Check schema, file existence and parameter ranges; raise one
    ConfigError listing every problem found."""
    base = Path(base)
    errors = []
    for err in sorted(Draft202012Validator(RUN_CONFIG_SCHEMA).iter_errors(raw), key=lambda e: list(e.path)):
        where = "/".join(str(p) for p in err.path) or "<root>"
        errors.append(f"{where}: {err.message}")
    if not isinstance(raw, dict):
        raise ConfigError(errors)

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    for key in _PATH_KEYS:
        if isinstance(raw.get(key), str) and not resolve(raw[key]).exists():
            errors.append(f"{key}: file not found: {raw[key]}")
    for i, item in enumerate(raw.get("inflow") or []):
        if isinstance(item, dict) and isinstance(item.get("csv"), str) and not resolve(item["csv"]).exists():
            errors.append(f"inflow/{i}/csv: file not found: {item['csv']}")

    roughness = [k for k in ("manning", "manning_uniform", "landcover") if k in raw]
    if len(roughness) != 1:
        errors.append(f"exactly one of manning, manning_uniform, landcover is required (got {roughness or 'none'})")
    if "manning_table" in raw and "landcover" not in raw:
        errors.append("manning_table is only meaningful with landcover")

    scheme = raw.get("scheme", {})
    if isinstance(scheme, dict) and all(isinstance(v, (int, float)) for v in scheme.values()):
        known = {k: v for k, v in scheme.items() if k in swe.SchemeParams.__dataclass_fields__}
        errors.extend(f"scheme: {m}" for m in swe.scheme_violations(**known))

    if errors:
        raise ConfigError(errors)
    return RunConfig(raw, base)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return validate_config(raw, path.parent)


# ---------------------------------------------------------------------------
# model assembly


def build_run(cfg: RunConfig):
    raw = cfg.raw
    dem = read_esri_ascii(cfg.path("dem"))
    if "manning" in raw:
        manning = read_esri_ascii(cfg.path("manning"))
    elif "landcover" in raw:
        table = {int(k): v for k, v in raw["manning_table"].items()} if "manning_table" in raw else None
        manning = swe.manning_from_landcover(read_esri_ascii(cfg.path("landcover")), table)
    else:
        manning = dem.with_values(np.full(dem.shape, float(raw["manning_uniform"])))
    infil = None
    if "infiltration_mm_h" in raw:
        g = read_esri_ascii(cfg.path("infiltration_mm_h"))
        infil = g.with_values(g.values * swe.MM_PER_HOUR)
    model = swe.BasinModel(dem, manning, infil)

    rain = rainfall.load_rain_series(cfg.path("rain_manifest")) if "rain_manifest" in raw else None
    if rain is not None and rain.shape != dem.shape:
        rain = rainfall.resample_rain(rain, *dem.shape)

    inflows = []
    for item in raw.get("inflow", []):
        hyd = swe.Hydrograph.from_csv(cfg.path(item["csv"]))
        if "faces" in item:
            faces = tuple(item["faces"])
            inflows.append(swe.InflowSegment(item["side"], faces, hyd, item.get("n_faces", len(faces))))
        else:
            inflows.append(swe.InflowSegment.centred(dem, item["side"], hyd, item.get("n_faces", 10)))
    outflows = [
        swe.OutflowSegment(o["side"], o["slope"], tuple(o["faces"]) if "faces" in o else None)
        for o in raw.get("outflow", [])
    ]
    bc = swe.BoundarySpec(tuple(inflows), tuple(outflows))
    bc.validate(dem.shape)

    if "init_state" in raw:
        snap = snapshot.read_snapshot(cfg.path("init_state"))
        if (snap.rows, snap.cols) != dem.shape:
            raise ValueError(f"init_state is {snap.rows}x{snap.cols}, DEM is {dem.shape}")
        init = swe.StaggeredState.at_rest(snap["h"], snap.t_seconds)
    else:
        init = swe.StaggeredState.dry(dem.shape)
    return model, init, rain, bc


def _write_mass_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_seconds", "stored_m3", "rain_m3", "infiltration_m3", "inflow_m3", "outflow_m3", "clamped_m3",
                    "closure"])
        for r in report.records:
            scale = max(report.initial, r.stored)
            closure = abs(r.stored - r.expected(report.initial)) / scale if scale > 0 else 0.0
            w.writerow([repr(v) for v in (r.t, r.stored, r.rain, r.infiltration, r.inflow, r.outflow, r.clamped,
                                          closure)])


def run_simulation(cfg: RunConfig, figures=None) -> dict:
    model, init, rain, bc = build_run(cfg)
    out = cfg.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def sink(index, state):
        name = "initial.fcsn" if index == 0 else f"snapshot_{index:06d}.fcsn"
        snapshot.write_snapshot(out / name, snapshot.state_snapshot(state, model.dx, model.z))
        if index > 0:
            written.append(name)

    result = swe.simulate(
        model, init, rain, bc, cfg.scheme, float(cfg.raw["duration"]), float(cfg.raw["snapshot_every"]), sink
    )
    closure = swe.mass_balance(result.report)
    report = {
        "snapshots": len(written),
        "steps": result.steps,
        "t_end": result.final.t,
        "mass_closure": closure,
        "mass": result.report.to_dict(),
    }
    (out / "mass_report.json").write_text(json.dumps(report, indent=2))
    _write_mass_csv(result.report, out / "mass_report.csv")
    if figures:
        from . import plotting

        plotting.depth_map(result.final.h, Path(figures) / "final_depth.png", cell_size=model.dx)
        plotting.mass_balance_curve(result.report, Path(figures) / "mass_balance.png")
    return report


# ---------------------------------------------------------------------------
# verbs


def _emit(report: dict, out):
    text = json.dumps(report, indent=2, allow_nan=False)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    report = run_simulation(cfg, args.figures)
    print(f"mass closure {report['mass_closure']:.3e} over {report['snapshots']} snapshots", file=sys.stderr)
    summary = {k: report[k] for k in ("snapshots", "steps", "t_end", "mass_closure")}
    _emit(summary, args.out)
    return EXIT_OK


def _read_channels(paths):
    return [read_esri_ascii(p) for p in paths]


def cmd_detect(args) -> int:
    before = _read_channels(args.before)
    after = _read_channels(args.after)
    if args.smooth:
        before = [observe.mean_filter_3x3(g) for g in before]
        after = [observe.mean_filter_3x3(g) for g in after]
    diff = observe.cva_difference(after, before)
    valid = diff.values[~diff.nodata]
    if valid.size == 0:
        raise DegenerateRangeError("difference layer has no valid pixels")
    if not valid.any():
        t_otsu, t = None, 1.0
        fmap = observe.FloodMap(Mask(np.zeros(diff.shape, bool)), t, args.k, (), diff.transform)
        log.info("before and after images are identical; flood map is empty")
    else:
        t_otsu = observe.otsu_threshold(diff, args.bins)
        t = observe.scaled_threshold(t_otsu, args.k)
        fmap = observe.classify(diff, t, args.k)
    if args.dem:
        dem = read_esri_ascii(args.dem)
        perm = read_esri_ascii(args.permanent_water) if args.permanent_water else None
        fmap = observe.refine(fmap, dem, perm, args.min_neighbors)
    for rule, removed in fmap.refinement_log:
        print(f"{rule}: removed {removed} pixels", file=sys.stderr)
    observe.save_flood_map(fmap, args.map, diff.transform)
    report = {"threshold_otsu": t_otsu, **fmap.sidecar(), "flooded_pixels": fmap.count(), "map": str(args.map)}
    if args.depth:
        if not args.dem:
            raise ValueError("--depth needs --dem")
        write_esri_ascii(observe.fwdet_depth(fmap, dem), args.depth)
        report["depth"] = str(args.depth)
    if args.figures:
        from . import plotting

        plotting.flood_map(fmap.bits, Path(args.figures) / "flood_map.png", background=diff.masked())
    _emit(report, args.out)
    return EXIT_OK


def _read_mask(path):
    g = read_esri_ascii(path)
    return Mask((g.values != 0) & ~g.nodata)


def cmd_metrics(args) -> int:
    if args.mode == "extent":
        if len(args.pred) != 1 or len(args.ref) != 1:
            raise ValueError("extent mode takes exactly one --pred and one --ref grid")
        m = observe.confusion_metrics(_read_mask(args.pred[0]), _read_mask(args.ref[0]))
        report = m.to_dict()
    else:
        pred = [read_esri_ascii(p) for p in args.pred]
        ref = [read_esri_ascii(p) for p in args.ref]
        report = observe.depth_errors(pred, ref).to_dict()
    _emit(report, args.out)
    return EXIT_OK


def _uniform_dt(snaps):
    t = np.array([s.t_seconds for s in snaps])
    dts = np.diff(t)
    if len(dts) == 0 or np.any(dts <= 0) or not np.allclose(dts, dts[0], rtol=1e-12, atol=0):
        raise ValueError("snapshots must be equally spaced in time")
    return float(dts[0]), float(t[0])


def cmd_residual(args) -> int:
    if args.equation == "convection":
        if args.analytic:
            plan = SpectralPlan.periodic_1d(args.n)
            u = residuals.convection_analytic(args.beta, args.nt, args.T, plan)
        else:
            snaps = [snapshot.read_snapshot(p) for p in args.snapshots]
            dt, t0 = _uniform_dt(snaps)
            plan = SpectralPlan.periodic_1d(snaps[0].cols)
            u = residuals.SpaceTimeField(np.stack([s["u"] for s in snaps]), dt, plan, t0)
        rep = residuals.convection_residual(u, args.beta, args.scheme, lam=args.lam if args.lam is not None else 1.0)
        report = rep.report.to_dict()
    elif args.equation == "swe":
        snaps = [snapshot.read_snapshot(p) for p in args.snapshots]
        dt, t0 = _uniform_dt(snaps)
        dem = read_esri_ascii(args.dem)
        if args.manning:
            manning = read_esri_ascii(args.manning)
        else:
            manning = dem.with_values(np.full(dem.shape, args.n_uniform))
        model = swe.BasinModel(dem, manning)
        rain = rainfall.load_rain_series(args.rain) if args.rain else None
        fields = [
            residuals.SpaceTimeField(np.stack([s[name] for s in snaps]), dt, model.dx, t0) for name in ("h", "qx", "qy")
        ]
        res = residuals.swe_residual(*fields, model, rain, lam=args.lam if args.lam is not None else 10.0)
        report = {**res.report.to_dict(), "continuity_max": res.continuity_max, "momentum_max": res.momentum_max}
    else:
        snap = snapshot.read_snapshot(args.snapshots[0])
        mesh = read_mesh(args.mesh)
        res = residuals.ns_residual(snap["vx"], snap["vy"], snap["p"], mesh, args.nu)
        report = res.report.to_dict()
    _emit(report, args.out)
    return EXIT_OK


def cmd_raincheck(args) -> int:
    series = rainfall.load_rain_series(args.manifest)
    if args.resample:
        series = rainfall.resample_rain(series, *args.resample)
    if args.region:
        series = rainfall.mask_extract(series, _read_mask(args.region))
    policy = rainfall.ThresholdPolicy(args.two_day_mm, args.daily_mm)
    report = rainfall.extreme_events(series, policy)
    if args.figures:
        from . import plotting

        plotting.rain_events(report, Path(args.figures) / "rain_events.png")
    _emit(report.to_dict(), args.out)
    return EXIT_OK if report.trigger else EXIT_NO_TRIGGER


def write_mesh(mesh: CurvilinearMesh, path) -> None:
    if mesh.d_eta != mesh.d_xi:
        raise ValueError("mesh files need equal computational steps in eta and xi")
    snap = snapshot.Snapshot(mesh.n_eta, mesh.n_xi, mesh.d_eta, 0.0, mesh.fields())
    snapshot.write_snapshot(path, snap)


def read_mesh(path) -> CurvilinearMesh:
    snap = snapshot.read_snapshot(path)
    return CurvilinearMesh(snap["x"], snap["y"], snap.cell_size, snap.cell_size)


def cmd_meshgen(args) -> int:
    boundary = MeshBoundary.from_json(args.boundary)
    mesh = elliptic_mesh(boundary, tol=args.tol, max_iter=args.max_iter, omega=args.omega)
    write_mesh(mesh, args.mesh_out)
    report = {
        "converged": mesh.converged,
        "iterations": mesh.iterations,
        "residual": mesh.residual,
        "jac_min": float(mesh.jac.min()),
        "shape": list(mesh.shape),
        "mesh": str(args.mesh_out),
    }
    if args.figures:
        from . import plotting

        plotting.mesh_plot(mesh, Path(args.figures) / "mesh.png")
    _emit(report, args.out)
    return EXIT_OK if mesh.converged else EXIT_INVALID


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads (runs are single-threaded)")
    common.add_argument("--out", type=Path, help="write the JSON report here instead of stdout")
    common.add_argument("--figures", type=Path, help="directory for PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="floodkit", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run the shallow-water solver from a JSON config")
    s.add_argument("config", type=Path)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect", parents=[common], help="map flooding from before/after imagery")
    s.add_argument("--before", nargs="+", required=True, help="one ESRI ASCII grid per channel")
    s.add_argument("--after", nargs="+", required=True)
    s.add_argument("--k", type=float, default=observe.DEFAULT_K, help="Otsu scale factor")
    s.add_argument("--bins", type=int, default=256)
    s.add_argument("--dem")
    s.add_argument("--permanent-water")
    s.add_argument("--min-neighbors", type=int, default=5)
    s.add_argument("--smooth", action="store_true", help="3x3 mean filter before differencing")
    s.add_argument("--map", type=Path, default=Path("flood_map.asc"))
    s.add_argument("--depth", type=Path, help="write boundary-interpolated depth grid here")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("metrics", parents=[common], help="accuracy of extents or depths")
    s.add_argument("--mode", choices=("extent", "depth"), required=True)
    s.add_argument("--pred", nargs="+", required=True)
    s.add_argument("--ref", nargs="+", required=True)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("residual", parents=[common], help="PDE residuals of stored fields")
    s.add_argument("--equation", choices=("convection", "swe", "ns"), required=True)
    s.add_argument("--snapshots", nargs="*", default=[])
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--beta", type=float, default=20.0)
    s.add_argument("--scheme", choices=("fftps", "fd4"), default="fftps")
    s.add_argument("--analytic", action="store_true", help="evaluate the exact convection solution")
    s.add_argument("--n", type=int, default=256)
    s.add_argument("--nt", type=int, default=100)
    s.add_argument("--T", type=float, default=1.0)
    s.add_argument("--dem")
    s.add_argument("--manning")
    s.add_argument("--n-uniform", type=float, default=0.03)
    s.add_argument("--rain", help="rain manifest")
    s.add_argument("--mesh")
    s.add_argument("--nu", type=float, default=0.01)
    s.set_defaults(func=cmd_residual)

    s = sub.add_parser("raincheck", parents=[common], help="rainfall trigger decision")
    s.add_argument("manifest", type=Path)
    s.add_argument("--region", help="ESRI ASCII mask, nonzero inside")
    s.add_argument("--resample", nargs=2, type=int, metavar=("ROWS", "COLS"))
    s.add_argument("--two-day-mm", type=float, default=10.0)
    s.add_argument("--daily-mm", type=float, default=50.0)
    s.set_defaults(func=cmd_raincheck)

    s = sub.add_parser("meshgen", parents=[common], help="elliptic mesh from boundary curves")
    s.add_argument("boundary", type=Path, help="JSON with eta_min, eta_max, xi_min, xi_max point lists")
    s.add_argument("--mesh-out", type=Path, default=Path("mesh.fcsn"))
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iter", type=int, default=50_000)
    s.add_argument("--omega", type=float, default=1.0)
    s.set_defaults(func=cmd_meshgen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except swe.InstabilityError as exc:
        print(f"error: numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, RasterFormatError, OSError, KeyError, snapshot.SnapshotFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
