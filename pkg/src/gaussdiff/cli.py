"""``gaussdiff`` command line: fit models, sample, sweep and check expansions.

Every subcommand writes its reports into ``--out`` and a ``run_info.json``
carrying the wall-clock time, which is kept out of the report bodies so
reruns with the same flags are byte-identical.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset_stats import (
    DatasetError,
    PointCloud,
    fit_gaussian,
    fit_gmm_by_label,
    load_point_cloud,
    save_point_cloud,
    third_central_moment,
)
from .reports import (
    FORMATS,
    dumps_json,
    gaussian_to_dict,
    load_model_file,
    mixture_to_dict,
    rows_to_csv,
    write_report,
    write_run_info,
)
from .samplers import build_schedule, heun_sample
from .score_fields import GaussianScore, GMMScore, IsotropicScore, PointCloudScore
from .synth import parse_synth
from .validation import (
    DEFAULT_N_POINTS,
    GaussianSeriesScore,
    PointCloudExpansionScore,
    data_rms_scale,
    expansion_order_check,
    sweep_unexplained_variance,
    teleport_sweep,
)

U64_MAX = 2**64 - 1
APPROXIMANTS = ("iso", "gauss", "gmm", "series:k", "expansion")


class UsageError(Exception):
    pass


# ------------------------------------------------------------ arg parsing


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, dataset: bool = True) -> None:
    p.add_argument("--seed", type=_u64, default=0, help="RNG seed (u64)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--format", choices=FORMATS, default="both", help="report format")
    p.add_argument("--sigma-min", type=float, default=0.002)
    p.add_argument("--sigma-max", type=float, default=80.0)
    p.add_argument("--rho", type=float, default=7.0)
    p.add_argument("--steps", type=int, default=18, help="number of noise levels > 0")
    if dataset:
        p.add_argument("dataset", nargs="?", type=Path, help="point cloud file (CSV or PCLD binary)")
        p.add_argument("--input-format", choices=("auto", "csv", "raw"), default="auto")
        p.add_argument("--labeled", action="store_true", help="last CSV column holds integer labels")
        p.add_argument("--synth", metavar="KIND:K=V,...", help="synthetic data, e.g. gmm:k=4,d=16,n=512,seed=0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="fit Gaussian (and per-label mixture) models")
    _common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score-compare", help="unexplained variance of approximants vs the point-cloud score")
    _common(p)
    p.add_argument("--approx", default="iso,gauss", help=f"comma list from {', '.join(APPROXIMANTS)}")
    p.add_argument("--points", type=_positive_int, default=DEFAULT_N_POINTS, help="query points per level")
    p.set_defaults(func=cmd_score_compare)

    p = sub.add_parser("sample", help="Heun sampling with an analytical score field")
    _common(p)
    p.add_argument("--model", type=Path, help="model.json written by 'stats'")
    p.add_argument("--field", choices=("gauss", "iso", "gmm", "pointcloud"), default="gauss")
    p.add_argument("--batch", type=_positive_int, default=16, help="number of initial conditions")
    p.add_argument("--trajectories", action="store_true", help="also write every intermediate state")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("teleport-sweep", help="hybrid sampling deviation for a list of skipped steps")
    _common(p)
    p.add_argument("--field", choices=("pointcloud", "gmm"), default="pointcloud")
    p.add_argument("--skips", type=_int_list, default=None, help="comma list of n_skip (default: all)")
    p.add_argument("--batch", type=_positive_int, default=64)
    p.add_argument("--points", type=int, default=DEFAULT_N_POINTS,
                   help="query points for the Gaussian residual at sigma_skip (0 disables)")
    p.set_defaults(func=cmd_teleport_sweep)

    p = sub.add_parser("expansion-check", help="large-noise series truncation errors and slopes")
    _common(p)
    p.add_argument("--grid-factors", type=_float_list, default=[10.0, 20.0, 40.0, 80.0, 160.0],
                   help="sigma grid as multiples of sqrt(lambda_1)")
    p.add_argument("--sigmas", type=_float_list, default=None, help="explicit sigma grid (overrides factors)")
    p.add_argument("--orders", type=_int_list, default=[1, 2, 3])
    p.add_argument("--points", type=_positive_int, default=DEFAULT_N_POINTS)
    p.set_defaults(func=cmd_expansion_check)
    return parser


# ---------------------------------------------------------------- helpers


def _load_dataset(args, required: bool = True) -> PointCloud | None:
    if args.synth and args.dataset:
        raise UsageError("give either a dataset path or --synth, not both")
    if args.synth:
        pc = parse_synth(args.synth)
        if args.labeled and pc.labels is None:
            raise DatasetError(f"--labeled given but synthetic set {args.synth!r} has no labels")
        return pc
    if args.dataset is None:
        if required:
            raise UsageError("a dataset path or --synth is required")
        return None
    fmt = args.input_format
    if fmt == "auto":
        fmt = "csv" if args.dataset.suffix.lower() in (".csv", ".txt") else "raw"
    pc = load_point_cloud(args.dataset, fmt, labeled=args.labeled)
    if args.labeled and pc.labels is None:
        raise DatasetError(f"--labeled given but {args.dataset} carries no labels")
    return pc


def _schedule(args):
    return build_schedule(args.sigma_min, args.sigma_max, args.rho, args.steps)


def _meta(args, **extra) -> dict:
    config = {}
    for k, v in sorted(vars(args).items()):
        # the output location does not change results, so it stays out of the echo
        if k in ("func", "out"):
            continue
        config[k] = str(v) if isinstance(v, Path) else v
    return {"command": args.command, "version": __version__, "seed": args.seed, "config": config,
            **extra}


def _finish(args, meta, outputs) -> int:
    write_run_info(args.out, meta, outputs)
    for p in outputs:
        print(f"wrote {p}")
    return 0


def _build_approximant(name: str, pc: PointCloud, model):
    if name == "iso":
        return IsotropicScore(model.mean)
    if name == "gauss":
        return GaussianScore(model)
    if name == "gmm":
        if pc.labels is None:
            raise UsageError("the gmm approximant needs labeled data (--labeled or a labeled --synth)")
        return GMMScore(fit_gmm_by_label(pc))
    if name == "expansion":
        return PointCloudExpansionScore(pc, include_gamma=True)
    if name.startswith("series:"):
        try:
            order = int(name.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad series order in {name!r}") from None
        return GaussianSeriesScore(model, order)
    raise UsageError(f"unknown approximant {name!r}; choose from {', '.join(APPROXIMANTS)}")


# --------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    pc = _load_dataset(args)
    model = fit_gaussian(pc)
    doc = {
        "meta": _meta(args, n_points=pc.n_points),
        "gaussian": gaussian_to_dict(model),
        "gamma": third_central_moment(pc).gamma.tolist(),
    }
    args.out.mkdir(parents=True, exist_ok=True)
    outputs = [args.out / "model.json"]
    if args.labeled:
        doc["mixture"] = mixture_to_dict(fit_gmm_by_label(pc))
    outputs[0].write_text(dumps_json(doc))

    lam = model.eigenvalues
    total = float(lam.sum())
    rows = [
        {"k": k + 1, "eigenvalue": float(v), "cumulative_fraction": float(lam[: k + 1].sum() / total)}
        for k, v in enumerate(lam)
    ]
    if args.format in ("csv", "both"):
        p = args.out / "spectrum.csv"
        p.write_text(rows_to_csv(rows, ["k", "eigenvalue", "cumulative_fraction"]))
        outputs.append(p)
    print(f"N={pc.n_points} D={pc.dim} rank={model.rank} trace={total:.6g}")
    for r in rows[:10]:
        print(f"  lambda_{r['k']:<3d} {r['eigenvalue']:.6g}  cum {r['cumulative_fraction']:.4f}")
    if model.rank > 10:
        print(f"  ... {model.rank - 10} more")
    return _finish(args, doc["meta"], outputs)


def cmd_score_compare(args) -> int:
    names = [a.strip() for a in args.approx.split(",") if a.strip()]
    if not names:
        raise UsageError("--approx needs at least one approximant")
    pc = _load_dataset(args)
    model = fit_gaussian(pc)
    approx = {n: _build_approximant(n, pc, model) for n in names}
    sched = _schedule(args)
    reports = sweep_unexplained_variance(PointCloudScore(pc), approx, sched, args.points, args.seed,
                                         reference_name="pointcloud")
    rows = [r for rep in reports for r in rep.rows()]
    meta = _meta(args, reference="pointcloud", n_points=args.points, centered=True,
                 query_distribution="N(0, sigma^2 I)")
    outputs = write_report(args.out, "score_compare", rows, meta, args.format)
    for rep in reports:
        print(f"{rep.approximant:>12s}: max residual {rep.residual_fraction.max():.3e}, "
              f"min {rep.residual_fraction.min():.3e}")
    return _finish(args, meta, outputs)


def cmd_sample(args) -> int:
    pc = _load_dataset(args, required=args.model is None)
    model = mixture = None
    if args.model is not None:
        model, mixture = load_model_file(args.model)
    elif pc is not None:
        model = fit_gaussian(pc)
    if args.field == "gauss":
        field = GaussianScore(model)
    elif args.field == "iso":
        field = IsotropicScore(model.mean)
    elif args.field == "gmm":
        if mixture is None:
            if pc is None or pc.labels is None:
                raise UsageError("field gmm needs labeled data or a model file with a mixture")
            mixture = fit_gmm_by_label(pc)
        field = GMMScore(mixture)
    else:
        if pc is None:
            raise UsageError("field pointcloud needs a dataset")
        field = PointCloudScore(pc)

    sched = _schedule(args)
    rng = np.random.default_rng(args.seed)
    x_T = sched.sigma_max * rng.standard_normal((args.batch, field.ambient_dim))
    run = heun_sample(field, x_T, sched)

    args.out.mkdir(parents=True, exist_ok=True)
    samples = args.out / "samples.pcld"
    save_point_cloud(PointCloud(run.final), samples)
    outputs = [samples]
    if args.trajectories:
        traj = args.out / "trajectories.csv"
        d = field.ambient_dim
        rows = [
            {"step": i, "sigma": float(s), "sample": b, **{f"x{j}": float(v) for j, v in enumerate(x)}}
            for i, (s, states) in enumerate(zip(run.sigmas, run.states))
            for b, x in enumerate(states)
        ]
        traj.write_text(rows_to_csv(rows, ["step", "sigma", "sample"] + [f"x{j}" for j in range(d)]))
        outputs.append(traj)
    rows = []
    for i, s in enumerate(run.sigmas):
        rows.append({
            "step": i,
            "sigma": float(s),
            "state_rms": float(np.sqrt(np.mean(run.states[i] ** 2))),
            "denoised_rms": float(np.sqrt(np.mean(run.denoised[i] ** 2))) if i < len(run.denoised) else None,
        })
    meta = _meta(args, field=field.name, nfe=run.nfe, batch=args.batch)
    outputs += write_report(args.out, "sample", rows, meta, args.format)
    print(f"field={field.name} batch={args.batch} nfe={run.nfe}")
    return _finish(args, meta, outputs)


def cmd_teleport_sweep(args) -> int:
    pc = _load_dataset(args)
    sched = _schedule(args)
    skips = list(range(sched.n_step)) if args.skips is None else args.skips
    if not skips:
        raise UsageError("--skips is empty")
    bad = [k for k in skips if not 0 <= k < sched.n_step]
    if bad:
        raise UsageError(f"--skips entries must lie in [0, {sched.n_step}): {bad}")
    model = fit_gaussian(pc)
    if args.field == "gmm":
        if pc.labels is None:
            raise UsageError("field gmm needs labeled data")
        field = GMMScore(fit_gmm_by_label(pc))
    else:
        field = PointCloudScore(pc)
    rng = np.random.default_rng(args.seed)
    x_T = sched.sigma_max * rng.standard_normal((args.batch, pc.dim))
    sweep = teleport_sweep(model, field, x_T, sched, skips, scale=data_rms_scale(pc),
                           residual_points=max(args.points, 0), seed=args.seed)
    rows = sweep.rows()
    meta = _meta(args, field=field.name, batch=args.batch, scale=sweep.scale,
                 n_points=args.points, centered=True)
    outputs = write_report(args.out, "teleport_sweep", rows, meta, args.format)
    print(f"{'n_skip':>6s} {'nfe':>4s} {'sigma_skip':>10s} {'dev_rel':>10s} {'gauss_resid':>11s}")
    for r in rows:
        print(f"{r['n_skip']:6d} {r['nfe']:4d} {r['sigma_skip']:10.4g} {r['deviation_rel']:10.3e} "
              f"{r['gauss_residual']:11.3e}")
    return _finish(args, meta, outputs)


def cmd_expansion_check(args) -> int:
    pc = _load_dataset(args)
    model = fit_gaussian(pc)
    unit = float(np.sqrt(model.eigenvalues[0])) if model.rank else 1.0
    grid = args.sigmas if args.sigmas is not None else [f * unit for f in args.grid_factors]
    if any(o < 1 for o in args.orders):
        raise UsageError("--orders entries must be >= 1")
    rep = expansion_order_check(pc, grid, seed=args.seed, orders=tuple(args.orders), n_points=args.points)
    meta = _meta(args, sigma_unit=unit, n_points=args.points, query_distribution="N(0, sigma^2 I)")
    outputs = write_report(args.out, "expansion_slopes", rep.slope_rows(), meta, args.format)
    outputs += write_report(args.out, "expansion_errors", rep.error_rows(), meta, args.format)
    for r in rep.slope_rows():
        s = "n/a (zero error)" if r["slope"] is None else f"{r['slope']:.3f}"
        print(f"order {r['order']}: slope {s}")
    return _finish(args, meta, outputs)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DatasetError, ValueError, OSError) as exc:
        print(f"gaussdiff: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
