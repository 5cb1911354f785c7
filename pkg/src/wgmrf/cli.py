"""Command-line front end.

Commands: simulate, mesh (build/inspect), fit, predict, cv, metrics,
eda (hist/variogram). Every artifact-producing command writes a
manifest.json (seed, config hash, input hashes, package version) next to
its outputs, sufficient to reproduce them bitwise.

Exit codes: 0 success, 2 input/validation error, 3 numeric failure,
4 resource limit.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .baselines import (
    IidWnConfig,
    IidWnSamples,
    LowRankConfig,
    LowRankSamples,
    fit_iid_wn,
    fit_lowrank,
)
from .circular import wrap_angle
from .dataio import Dataset, file_sha256, load_dataset, save_dataset, write_manifest
from .errors import (
    NumericError,
    ParseError,
    ResourceLimitError,
    ValidationError,
    WgmrfError,
)
from .mesh import (
    build_planar_mesh,
    build_spherical_mesh,
    fem_matrices,
    load_mesh,
    save_mesh,
)
from .model import PosteriorSamples, WgmrfConfig, WgmrfParams, fit, simulate
from .prediction import predict_iid, predict_lowrank, predict_wgmrf
from .validation import (
    circular_histogram,
    empirical_semivariogram_sincos,
    metrics_suite,
    spatial_block_folds,
)

TWO_PI = 2.0 * math.pi

PAPER_SIM_TRUTH = {"mu": 3.0, "sigma2": 10.0 / 3.0, "psi": 3.0, "r": 0.95}


def _load_config(path, overrides):
    config = {}
    if path:
        with open(path, "r", encoding="ascii") as fh:
            config = yaml.safe_load(fh) or {}
        if not isinstance(config, dict):
            raise ValidationError("config file must hold a mapping")
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"override path {key!r} crosses a scalar")
        node[parts[-1]] = value
    return config


def _mesh_from_config(config):
    spec = config.get("mesh")
    if not spec:
        raise ValidationError("config needs a 'mesh' section (file or build)")
    if "file" in spec:
        return load_mesh(spec["file"])
    if "build" in spec:
        b = spec["build"]
        return build_planar_mesh(tuple(b["bbox"]), float(b["edge"]),
                                 float(b.get("extension", 0.0)))
    if "spherical" in spec:
        return build_spherical_mesh(int(spec["spherical"]["subdivisions"]))
    raise ValidationError("mesh section needs 'file', 'build', or 'spherical'")


def _schedule_kwargs(config):
    sched = config.get("schedule", {})
    out = {}
    for key in ("iterations", "burn_in", "thinning"):
        if key in sched:
            out[key] = int(sched[key])
    return out


def _format_direction(theta, convention):
    if convention == "signed":
        return theta - TWO_PI if theta > math.pi else theta
    return theta


def _load_locations(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().lower()
        cols = header.split(",")
        if cols[:2] not in (["lon", "lat"], ["x", "y"]):
            raise ParseError("expected header starting 'lon,lat' or 'x,y'",
                             path=str(path), line=1)
        mode = "spherical" if cols[0] == "lon" else "planar"
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError) as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from None
    return np.asarray(rows), mode


# ----------------------------------------------------------------------
# commands


def cmd_simulate(args):
    config = _load_config(args.config, args.set)
    mesh = _mesh_from_config(config)
    fem = fem_matrices(mesh)
    truth = dict(PAPER_SIM_TRUTH) if args.preset == "paper-sim" else {}
    for key in ("mu", "sigma2", "psi", "r"):
        val = getattr(args, key)
        if val is not None:
            truth[key] = val
    params = WgmrfParams(**truth)
    rng = np.random.default_rng(args.seed)
    if args.locations_file:
        locations, mode = _load_locations(args.locations_file)
        if mode != mesh.mode:
            raise ValidationError("locations mode differs from mesh mode")
    else:
        if args.n_sites is None or args.bbox is None:
            raise ValidationError("need --locations-file or --n-sites with --bbox")
        x0, y0, x1, y1 = args.bbox
        locations = np.column_stack([
            rng.uniform(x0, x1, args.n_sites),
            rng.uniform(y0, y1, args.n_sites),
        ])
    angles = simulate(mesh, fem, params, locations, rng)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    dataset = Dataset(locations, angles, mesh.mode)
    save_dataset(dataset, outdir / "dataset.csv")
    write_manifest(
        outdir / "manifest.json",
        command="simulate",
        seed=args.seed,
        config={"truth": truth, "config": config, "n_sites": len(locations)},
        input_hashes={"dataset": file_sha256(outdir / "dataset.csv")},
        extras={"truth": truth},
    )
    print(f"wrote {outdir / 'dataset.csv'} ({len(locations)} sites)")
    return 0


def cmd_mesh(args):
    if args.action == "build":
        config = _load_config(args.config, args.set)
        mesh = _mesh_from_config(config)
        save_mesh(mesh, args.out)
        print(f"wrote {args.out}: {mesh.mode}, {mesh.n_nodes} nodes, "
              f"{mesh.n_triangles} triangles")
    else:
        mesh = load_mesh(args.mesh_file)
        areas = mesh.triangle_areas()
        print(f"mode: {mesh.mode}")
        print(f"nodes: {mesh.n_nodes}")
        print(f"triangles: {mesh.n_triangles}")
        print(f"triangle area min/median/max: {areas.min():.6g} "
              f"{np.median(areas):.6g} {areas.max():.6g}")
        coords = mesh.nodes if mesh.mode == "planar" else mesh.lonlat
        print(f"bbox: [{coords[:,0].min():.6g}, {coords[:,1].min():.6g}] .. "
              f"[{coords[:,0].max():.6g}, {coords[:,1].max():.6g}]")
    return 0


def _fit_one(model, dataset, config, seed, mesh=None, fem=None):
    sched = _schedule_kwargs(config)
    if model == "iid":
        cfg = IidWnConfig(**sched, **config.get("iid", {}))
        return fit_iid_wn(dataset.angles, cfg, seed)
    if model == "lowrank":
        cfg = LowRankConfig(**sched, **config.get("lowrank", {}))
        return fit_lowrank(dataset.angles, dataset.locations, cfg, seed,
                           mode=dataset.mode)
    if model == "wgmrf":
        cfg = WgmrfConfig(**sched, **config.get("wgmrf", {}))
        if mesh is None:
            raise ValidationError("wgmrf fit needs a mesh")
        return fit(dataset.angles, dataset.locations, mesh, fem, cfg, seed)
    raise ValidationError(f"unknown model {model!r}")


def cmd_fit(args):
    config = _load_config(args.config, args.set)
    model = args.model or config.get("model")
    if model not in ("iid", "lowrank", "wgmrf"):
        raise ValidationError("model must be iid, lowrank, or wgmrf")
    dataset = load_dataset(args.data, units=args.units,
                           allow_duplicates=args.allow_duplicates)
    mesh = fem = None
    if model == "wgmrf":
        mesh = _mesh_from_config(config)
        if mesh.mode != dataset.mode:
            raise ValidationError("mesh mode differs from dataset mode")
        fem = fem_matrices(mesh)
    samples = _fit_one(model, dataset, config, args.seed, mesh=mesh, fem=fem)
    outdir = Path(args.out)
    samples.save(outdir)
    if mesh is not None:
        save_mesh(mesh, outdir / "mesh.txt")
    write_manifest(
        outdir / "run_manifest.json",
        command="fit",
        seed=args.seed,
        config={"model": model, "config": config},
        input_hashes={"data": dataset.source_hash},
        extras={"model": model, "data_mode": dataset.mode, "n_sites": dataset.n},
    )
    print(f"wrote posterior artifacts to {outdir} ({samples.n_draws} draws)")
    return 0


def _load_fit_dir(fit_dir):
    fit_dir = Path(fit_dir)
    with open(fit_dir / "manifest.json", "r", encoding="ascii") as fh:
        model = json.load(fh)["model"]
    if model == "iid":
        return model, IidWnSamples.load(fit_dir), None
    if model == "lowrank":
        return model, LowRankSamples.load(fit_dir), None
    if model == "wgmrf":
        return model, PosteriorSamples.load(fit_dir), load_mesh(fit_dir / "mesh.txt")
    raise ValidationError(f"unknown model {model!r} in fit directory")


def _write_predictions(path, locations, preds, mode, convention):
    header = "lon,lat,mean_direction,concentration" if mode == "spherical" \
        else "x,y,mean_direction,concentration"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for (a, b), p in zip(locations, preds):
            d = _format_direction(p.mean_direction, convention)
            fh.write(f"{float(a)!r},{float(b)!r},{float(d)!r},{float(p.concentration)!r}\n")


def cmd_predict(args):
    model, samples, mesh = _load_fit_dir(args.fit_dir)
    locations, loc_mode = _load_locations(args.locations)
    if model == "wgmrf":
        if loc_mode != mesh.mode:
            raise ValidationError("locations mode differs from mesh mode")
        preds = predict_wgmrf(samples, mesh, locations)
    elif model == "lowrank":
        preds = predict_lowrank(samples, locations)
    else:
        shared = predict_iid(samples)
        preds = [shared] * len(locations)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_predictions(out, locations, preds, loc_mode, args.angle_convention)
    write_manifest(
        out.with_suffix(".manifest.json"),
        command="predict",
        seed=None,
        config={"fit_dir": str(args.fit_dir), "angle_convention": args.angle_convention},
        input_hashes={"locations": file_sha256(args.locations),
                      "predictions": file_sha256(out)},
    )
    print(f"wrote {out} ({len(preds)} predictions)")
    return 0


def cmd_metrics(args):
    pred_locs, _ = _load_locations(args.predictions)
    pred = np.atleast_2d(np.genfromtxt(args.predictions, delimiter=",", skip_header=1))
    obs_ds = load_dataset(args.observations, units="rad", allow_duplicates=True)
    if len(pred) != obs_ds.n:
        raise ValidationError("prediction and observation row counts differ")
    angles = wrap_angle(pred[:, 2])
    report = metrics_suite(angles, pred[:, 3], obs_ds.angles)
    _write_metrics_csv(args.out, [("all", report)])
    print(f"wrote {args.out}")
    for key, val in report.as_dict().items():
        print(f"  {key}: {val:.6f}")
    return 0


def _write_metrics_csv(path, rows, extra_field="fold"):
    keys = ["sc_rmse", "crmse", "cmae", "resultant_length",
            "circular_correlation", "avg_concentration"]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(extra_field + "," + ",".join(keys) + "\n")
        for tag, report in rows:
            vals = report.as_dict() if hasattr(report, "as_dict") else report
            fh.write(str(tag) + "," + ",".join(repr(float(vals[k])) for k in keys) + "\n")


def cmd_cv(args):
    config = _load_config(args.config, args.set)
    model = args.model or config.get("model")
    if model not in ("iid", "lowrank", "wgmrf"):
        raise ValidationError("model must be iid, lowrank, or wgmrf")
    dataset = load_dataset(args.data, units=args.units,
                           allow_duplicates=args.allow_duplicates)
    cvc = config.get("cv", {})
    n_folds = int(cvc.get("n_folds", args.folds))
    assignment = spatial_block_folds(
        dataset.locations,
        int(cvc.get("block_rows", 8)),
        int(cvc.get("block_cols", 8)),
        n_folds,
        seed=args.seed,
        balance=cvc.get("balance", "locations"),
    )
    for w in assignment.warnings:
        print(f"warning: {w}", file=sys.stderr)
    mesh = fem = None
    if model == "wgmrf":
        mesh = _mesh_from_config(config)
        fem = fem_matrices(mesh)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).spawn(n_folds)
    rows = []
    reports = []
    for fold in range(1, n_folds + 1):
        test_idx = assignment.test_indices(fold)
        train_idx = assignment.train_indices(fold)
        if len(test_idx) == 0:
            print(f"fold {fold}: empty test set, skipped", file=sys.stderr)
            continue
        train = Dataset(dataset.locations[train_idx], dataset.angles[train_idx],
                        dataset.mode)
        fold_seed = int(seeds[fold - 1].generate_state(1)[0] % (2 ** 31))
        samples = _fit_one(model, train, config, fold_seed, mesh=mesh, fem=fem)
        test_locs = dataset.locations[test_idx]
        if model == "wgmrf":
            preds = predict_wgmrf(samples, mesh, test_locs)
        elif model == "lowrank":
            preds = predict_lowrank(samples, test_locs)
        else:
            preds = [predict_iid(samples)] * len(test_locs)
        report = metrics_suite(
            np.array([p.mean_direction for p in preds]),
            np.array([p.concentration for p in preds]),
            dataset.angles[test_idx],
        )
        rows.append((fold, report))
        reports.append(report)
        print(f"fold {fold}: test={len(test_idx)} sc_rmse={report.sc_rmse:.4f} "
              f"re={report.resultant_length:.4f}")
    keys = ["sc_rmse", "crmse", "cmae", "resultant_length",
            "circular_correlation", "avg_concentration"]
    table = {
        k: np.array([getattr(r, {"resultant_length": "resultant_length"}.get(k, k))
                     for r in reports])
        for k in keys
    }
    summary_rows = list(rows)
    means = {}
    ses = {}
    for k in keys:
        vals = table[k]
        finite = vals[np.isfinite(vals)]
        if len(finite) == 0:
            means[k], ses[k] = math.nan, math.nan
        else:
            means[k] = float(np.mean(finite))
            ses[k] = float(np.std(finite, ddof=1) / math.sqrt(len(finite))) \
                if len(finite) > 1 else 0.0
    summary_rows.append(("mean", means))
    summary_rows.append(("se", ses))
    _write_metrics_csv(outdir / "metrics.csv", summary_rows)
    with open(outdir / "folds.csv", "w", encoding="ascii") as fh:
        fh.write("index,fold\n")
        for i, f in enumerate(assignment.folds):
            fh.write(f"{i},{f}\n")
    write_manifest(
        outdir / "manifest.json",
        command="cv",
        seed=args.seed,
        config={"model": model, "config": config, "n_folds": n_folds},
        input_hashes={"data": dataset.source_hash},
        extras={"fold_sizes": [int(len(assignment.test_indices(f)))
                               for f in range(1, n_folds + 1)]},
    )
    print(f"wrote {outdir / 'metrics.csv'}")
    return 0


def cmd_eda(args):
    dataset = load_dataset(args.data, units=args.units, allow_duplicates=True)
    out = Path(args.out)
    if args.kind == "hist":
        start, end, counts = circular_histogram(dataset.angles, args.bins)
        with open(out, "w", encoding="ascii") as fh:
            fh.write("bin_start,bin_end,count\n")
            for s, e, c in zip(start, end, counts):
                fh.write(f"{float(s)!r},{float(e)!r},{int(c)}\n")
    else:
        max_dist = args.max_dist
        if max_dist is None:
            from .model import domain_diameter

            scale = domain_diameter(dataset.locations)
            max_dist = scale / 2 if dataset.mode == "planar" else None
            if dataset.mode == "spherical":
                raise ValidationError("spherical variogram needs --max-dist in km")
        centers, gs, gc, counts = empirical_semivariogram_sincos(
            dataset.angles, dataset.locations, args.bins, max_dist,
            mode=dataset.mode, seed=args.seed,
        )
        with open(out, "w", encoding="ascii") as fh:
            fh.write("bin_center_km,gamma_sin,gamma_cos,pair_count\n")
            for c, a, b, n in zip(centers, gs, gc, counts):
                fh.write(f"{float(c)!r},{float(a)!r},{float(b)!r},{int(n)}\n")
    print(f"wrote {out}")
    return 0


# ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(
        prog="wgmrf",
        description="Wrapped Gaussian Markov random fields for spatial "
                    "directional data",
    )
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic dataset from the model")
    sim.add_argument("--config", help="YAML config with a mesh section")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE")
    sim.add_argument("--preset", choices=["paper-sim"], default=None,
                     help="truth preset (mu=3, sigma2=10/3, psi=3, r=0.95)")
    sim.add_argument("--mu", type=float)
    sim.add_argument("--sigma2", type=float)
    sim.add_argument("--psi", type=float)
    sim.add_argument("--r", type=float)
    sim.add_argument("--n-sites", type=int)
    sim.add_argument("--bbox", type=float, nargs=4, metavar=("X0", "Y0", "X1", "Y1"))
    sim.add_argument("--locations-file")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    msh = sub.add_parser("mesh", help="build or inspect a mesh file")
    msub = msh.add_subparsers(dest="action", required=True)
    mb = msub.add_parser("build")
    mb.add_argument("--config", required=True)
    mb.add_argument("--set", action="append", metavar="KEY=VALUE")
    mb.add_argument("--out", required=True)
    mb.set_defaults(func=cmd_mesh, action="build")
    mi = msub.add_parser("inspect")
    mi.add_argument("mesh_file")
    mi.set_defaults(func=cmd_mesh, action="inspect")

    fitp = sub.add_parser("fit", help="fit a model to a dataset")
    fitp.add_argument("--model", choices=["iid", "lowrank", "wgmrf"])
    fitp.add_argument("--config", help="YAML config")
    fitp.add_argument("--set", action="append", metavar="KEY=VALUE")
    fitp.add_argument("--data", required=True)
    fitp.add_argument("--units", choices=["rad", "deg"], default="rad")
    fitp.add_argument("--allow-duplicates", action="store_true")
    fitp.add_argument("--seed", type=int, required=True)
    fitp.add_argument("--out", required=True)
    fitp.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="krige at new locations from a fit")
    pred.add_argument("--fit-dir", required=True)
    pred.add_argument("--locations", required=True,
                      help="CSV with lon,lat or x,y header")
    pred.add_argument("--angle-convention", choices=["positive", "signed"],
                      default="positive",
                      help="report directions in [0,2pi) or (-pi,pi]")
    pred.add_argument("--out", required=True)
    pred.set_defaults(func=cmd_predict)

    met = sub.add_parser("metrics", help="score predictions against observations")
    met.add_argument("--predictions", required=True)
    met.add_argument("--observations", required=True)
    met.add_argument("--out", required=True)
    met.set_defaults(func=cmd_metrics)

    cv = sub.add_parser("cv", help="spatial-block cross-validation")
    cv.add_argument("--model", choices=["iid", "lowrank", "wgmrf"])
    cv.add_argument("--config")
    cv.add_argument("--set", action="append", metavar="KEY=VALUE")
    cv.add_argument("--data", required=True)
    cv.add_argument("--units", choices=["rad", "deg"], default="rad")
    cv.add_argument("--allow-duplicates", action="store_true")
    cv.add_argument("--folds", type=int, default=10)
    cv.add_argument("--seed", type=int, required=True)
    cv.add_argument("--out", required=True)
    cv.set_defaults(func=cmd_cv)

    eda = sub.add_parser("eda", help="circular histogram / sin-cos semivariogram")
    eda.add_argument("kind", choices=["hist", "variogram"])
    eda.add_argument("--data", required=True)
    eda.add_argument("--units", choices=["rad", "deg"], default="rad")
    eda.add_argument("--bins", type=int, default=36)
    eda.add_argument("--max-dist", type=float)
    eda.add_argument("--seed", type=int, default=0)
    eda.add_argument("--out", required=True)
    eda.set_defaults(func=cmd_eda)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, WgmrfError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
