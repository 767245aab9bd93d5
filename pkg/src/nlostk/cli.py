"""Command-line pipeline: simulate, calibrate, pattern, gamma, bbox, enhance,
reconstruct.

One executable with subcommands mirrors the software pipeline of the capture
rig. Every command writes a ``run.json`` provenance record next to its
outputs; re-running with the recorded inputs reproduces binary outputs byte
for byte. Config precedence is flags > --config file > defaults, and the
only environment variable honored is NLOSTK_SEED (default seed override).

Exit codes:
  0  success
  2  usage error (bad flags/arguments)
  3  missing or malformed input file
  4  domain error (value outside an operation's mathematical domain)
  5  data/contract failure (degenerate fit, range violation, ambiguous peak,
     coverage mismatch, failed line search)
  6  unexpected internal error
"""

import argparse
import json
import os
import sys
import traceback

import numpy as np

from . import __version__, calibration, enhancement, galvo, geometry
from . import patterns as patterns_mod
from . import reconstruction, scenes, simulator, transient
from .errors import DomainError, FormatError, NlosError

_EXIT_FORMAT = 3
_EXIT_DOMAIN = 4
_EXIT_CONTRACT = 5
_EXIT_INTERNAL = 6


def _default_seed():
    try:
        return int(os.environ.get("NLOSTK_SEED", "0"))
    except ValueError:
        return 0


def _write_run_record(out_dir, command, args):
    """Provenance record: resolved inputs, seed, version."""
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": command,
        "version": __version__,
        "argv": sys.argv[1:],
        "inputs": {k: v for k, v in sorted(vars(args).items())
                   if k not in ("func", "config") and not k.startswith("_")},
    }
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump(record, f, indent=2, default=str)


def _out_dir_of(path):
    d = os.path.dirname(os.path.abspath(path))
    return d if d else "."


# ---------------------------------------------------------------------------
# subcommands


def cmd_pattern(args):
    pat = patterns_mod.parse_pattern_spec(args.spec)
    pat.save(args.output)
    _write_run_record(_out_dir_of(args.output), "pattern", args)
    print(f"pattern: {pat.kind}, {len(pat)} points -> {args.output}")
    return 0


def _load_scene(spec, dims):
    if spec in scenes.BUILTIN_SCENES:
        return scenes.make_scene(spec, dims=dims)
    return scenes.VoxelVolume.load(spec)


def _rig_from_args(args):
    kwargs = dict(
        bin_width_ps=args.bin_width_ps,
        num_bins=args.num_bins,
        photon_scale=args.photon_scale,
        wall_albedo=args.wall_albedo,
        attenuation=args.attenuation,
    )
    if args.wall:
        plane = geometry.RelayPlane.load(args.wall)
        g = galvo.GalvoModel.load(args.galvo) if args.galvo else simulator.default_rig().galvo
        return simulator.RigConfig(galvo=g, plane=plane, **kwargs)
    cfg = simulator.default_rig(wall_distance=args.wall_distance,
                                tilt_deg=args.wall_tilt_deg, **kwargs)
    if args.galvo:
        cfg = simulator.RigConfig(galvo=galvo.GalvoModel.load(args.galvo),
                                  plane=cfg.plane, **kwargs)
    return cfg


def _jitter_from_arg(spec):
    if spec == "none":
        return None
    if spec == "default":
        return simulator.JitterParams()
    with open(spec) as f:
        return simulator.JitterParams.from_dict(json.load(f))


def cmd_simulate(args):
    dims = tuple(int(d) for d in args.scene_dims.split(","))
    volume = _load_scene(args.scene, dims)
    pat = patterns_mod.parse_pattern_spec(args.pattern)
    rig = _rig_from_args(args)
    compiled = patterns_mod.compile_pattern(pat, rig.plane, rig.galvo)
    if not compiled.ok:
        bad = ", ".join(str(i) for i, _ in compiled.out_of_range[:8])
        raise DomainError(f"{len(compiled.out_of_range)} pattern points need "
                          f"out-of-range voltages (indices {bad})")
    noise = simulator.NoiseModel(jitter=_jitter_from_arg(args.jitter), bias=args.bias,
                                 seed=args.seed, poisson=not args.no_poisson)
    ds, _ = simulator.simulate_dataset(rig, volume, compiled, noise,
                                       exposure_s=args.exposure_s, threads=args.threads)
    ds.meta["pattern"] = {"kind": pat.kind, "params": pat.params}
    ds.meta["scene"] = args.scene
    transient.save_dataset(ds, args.output)
    _write_run_record(args.output, "simulate", args)
    print(f"simulate: {ds.n_points} points x {ds.num_bins} bins -> {args.output}")
    return 0


def cmd_calibrate_galvo(args):
    V, T = galvo.load_samples_csv(args.samples)
    model, report = galvo.fit_galvo(V, T, v_range=args.v_range, joint=args.joint)
    model.save(args.output)
    _write_run_record(_out_dir_of(args.output), "calibrate-galvo", args)
    rms = np.rad2deg(report.rms_final)
    print(f"calibrate galvo: {report.n_samples} samples, "
          f"residual RMS ({rms[0]:.5f}, {rms[1]:.5f}) deg -> {args.output}")
    return 0


def cmd_calibrate_wall(args):
    ds = transient.load_dataset(args.dataset)
    pts = calibration.points_from_los(ds, refine=not args.no_refine)
    plane, report = calibration.fit_plane(pts)
    calibration.save_wall_json(args.output, plane, report)
    _write_run_record(_out_dir_of(args.output), "calibrate-wall", args)
    print(f"calibrate wall: {report.n_points} points, "
          f"RMSE {report.rmse_m * 1e3:.3f} mm -> {args.output}")
    return 0


def cmd_calibrate_jitter(args):
    ds = transient.load_dataset(args.dataset)
    margin = max(args.margin or transient.estimate_los_halfwidth(ds), 8)
    width = min(2 * margin + 1, args.fit_bins, ds.num_bins)
    # Cut the direct-return blob out of each histogram (bias-subtracted) so
    # the fit sees the impulse response, not the background floor. The time
    # origin becomes (peak - margin), so the fitted mu is relative to it.
    rows = np.zeros((ds.n_points, width))
    for i in range(ds.n_points):
        row = np.asarray(ds.counts[i], float)
        peak = transient.find_los_peak(row)
        lo = max(peak - margin, 0)
        hi = min(peak + margin, ds.num_bins - 1)
        bias = transient.estimate_bias(row, lo, hi)
        seg = np.clip(row[lo:lo + width] - bias, 0.0, None)
        rows[i, :seg.size] = seg
    blobs = transient.TransientDataset(
        points=list(ds.points), counts=rows, bin_width_ps=ds.bin_width_ps,
        t0_ps=np.zeros(ds.n_points), meta={"source": args.dataset})
    init = simulator.JitterParams() if args.init is None else _jitter_from_arg(args.init)
    result = calibration.fit_jitter(blobs, init=init)
    calibration.save_jitter_json(args.output, result)
    if args.trace:
        calibration.save_jitter_trace_csv(args.trace, result)
    _write_run_record(_out_dir_of(args.output), "calibrate-jitter", args)
    p = result.params
    print(f"calibrate jitter: mu {p.mu:.1f} ps, sigma {p.sigma:.1f} ps, "
          f"gamma_w {p.gamma_w:.3f} -> {args.output}")
    return 0


def cmd_gamma(args):
    ds = transient.load_dataset(args.dataset)
    window = args.window or transient.estimate_los_halfwidth(ds)
    gmap = (transient.mip_map if args.mip else transient.gamma_map)(ds, window)
    transient.write_gamma_csv(gmap, args.output)
    if args.pgm:
        grid_n = None
        pat = ds.meta.get("pattern") or {}
        if pat.get("kind") == "grid":
            grid_n = int(pat["params"]["n"])
        transient.write_gamma_pgm(gmap, args.pgm, grid_n=grid_n)
    _write_run_record(_out_dir_of(args.output), "gamma", args)
    kind = "MIP" if args.mip else "gamma"
    print(f"{kind} map: {gmap.values.size} points (window +-{window} bins), "
          f"{len(gmap.failed)} without a peak -> {args.output}")
    return 0


def cmd_bbox(args):
    gmap = transient.load_gamma_csv(args.gamma)
    try:
        wx, wy = (float(v) for v in args.scan_region.split("x"))
    except ValueError as err:
        raise FormatError(f"bad --scan-region {args.scan_region!r}; expected WxH") from err
    box = calibration.estimate_bbox(wx, wy, gmap, bias=args.bias,
                                    t_delay_ps=args.t_delay_ps,
                                    roundtrip=args.roundtrip_zmin)
    calibration.save_bbox_json(args.output, box)
    _write_run_record(_out_dir_of(args.output), "bbox", args)
    print(f"bbox: footprint {box.width_x} x {box.width_y} m, "
          f"depth [{box.z_min:.3f}, {box.z_max:.3f}] m -> {args.output}")
    return 0


def cmd_enhance(args):
    ds = transient.load_dataset(args.dataset)
    jitter = _jitter_from_arg(args.jitter)
    if jitter is None:
        raise DomainError("enhance needs a jitter model (--jitter default|file.json)")
    out = enhancement.denoise(ds, jitter, eta=args.snr)
    transient.save_dataset(out, args.output)
    _write_run_record(args.output, "enhance", args)
    print(f"enhance: eta {out.meta['eta']:.4g}, clamped mass {out.meta['clamp_mass']:.4g} "
          f"-> {args.output}")
    return 0


def _prepare_tau(ds, window):
    """Raw capture -> realigned, direct-return-stripped, gamma-normalized rows."""
    gmap = transient.gamma_map(ds, window)
    realigned = transient.realign_dataset(ds)
    nlos = np.array([
        transient.split_los_nlos(realigned.histogram(i), window, los_bin=0)[1].counts
        for i in range(realigned.n_points)
    ])
    stripped = transient.TransientDataset(
        points=list(realigned.points), counts=nlos,
        bin_width_ps=realigned.bin_width_ps, t0_ps=realigned.t0_ps,
        meta=dict(realigned.meta))
    return transient.normalize_by_gamma(stripped, gmap)


def cmd_reconstruct(args):
    ds = transient.load_dataset(args.dataset)
    if args.no_prep:
        prepared = ds
    else:
        window = args.window or transient.estimate_los_halfwidth(ds)
        prepared = _prepare_tau(ds, window)

    if args.bbox:
        with open(args.bbox) as f:
            box = calibration.BoundingBox.from_dict(json.load(f))
        lo, hi = box.lo, box.hi
    elif args.bounds:
        vals = [float(v) for v in args.bounds.split(",")]
        if len(vals) != 6:
            raise FormatError("--bounds wants x0,x1,y0,y1,z0,z1")
        lo = np.array(vals[0::2])
        hi = np.array(vals[1::2])
    else:
        raise FormatError("reconstruct needs --bbox or --bounds")

    dims = tuple(int(d) for d in args.dims.split(","))
    op = reconstruction.ConfocalOperator(
        points_xy=prepared.xy(), dims=dims, lo=lo, hi=hi,
        bin_width_ps=prepared.bin_width_ps, num_bins=prepared.num_bins,
        attenuation=args.attenuation)

    os.makedirs(args.output, exist_ok=True)
    prefix = os.path.join(args.output, "volume")
    if args.algo == "bp":
        volume = reconstruction.reconstruct_bp(prepared.counts, op)
        print(f"reconstruct bp: volume {dims} -> {prefix}.raw")
    else:
        cfg = reconstruction.ReconConfig(dims=dims, lo=lo, hi=hi, lam=args.tv_lambda,
                                         max_iters=args.iters)
        result = reconstruction.reconstruct_opt(prepared.counts, op, cfg)
        volume = result.volume
        reconstruction.save_loss_trace_csv(os.path.join(args.output, "loss_trace.csv"), result)
        final = result.loss_trace[-1]
        print(f"reconstruct opt: {result.iterations} iterations, "
              f"loss {final[0]:.6g} (data {final[1]:.6g}) -> {prefix}.raw")
    volume.save(prefix)
    reconstruction.save_mip_pgms(volume, prefix)
    _write_run_record(args.output, "reconstruct", args)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nlostk",
        description="Confocal non-line-of-sight imaging pipeline",
        epilog="Exit codes:" + __doc__.split("Exit codes:")[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"nlostk {__version__}")
    parser.add_argument("--config", default=None,
                        help="JSON file with default values for any flag (flags win)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pattern", help="generate a scanning pattern file")
    p.add_argument("spec", help="grid:NxL | circles:NR,NPHI,R | file:points.csv")
    p.add_argument("-o", "--output", required=True, help="pattern JSON path")
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("simulate", help="render a synthetic capture dataset")
    p.add_argument("--scene", required=True,
                   help=f"builtin scene {scenes.BUILTIN_SCENES} or volume JSON path")
    p.add_argument("--scene-dims", default="64,64,64", help="builtin scene grid (nx,ny,nz)")
    p.add_argument("--pattern", required=True, help="pattern spec or file")
    p.add_argument("--seed", type=int, default=_default_seed(),
                   help="noise seed (env NLOSTK_SEED overrides the default)")
    p.add_argument("--wall", default=None, help="true plane JSON (default: synthetic wall)")
    p.add_argument("--wall-distance", type=float, default=1.0)
    p.add_argument("--wall-tilt-deg", type=float, default=0.0)
    p.add_argument("--galvo", default=None, help="true galvo JSON (default: synthetic)")
    p.add_argument("--bin-width-ps", type=float, default=4.0)
    p.add_argument("--num-bins", type=int, default=4096)
    p.add_argument("--photon-scale", type=float, default=5e3)
    p.add_argument("--wall-albedo", type=float, default=1.0)
    p.add_argument("--bias", type=float, default=1.0)
    p.add_argument("--jitter", default="default", help="default | none | params JSON")
    p.add_argument("--no-poisson", action="store_true", help="emit expectations, not draws")
    p.add_argument("--attenuation", action="store_true",
                   help="apply distance/shading falloff to the hidden-scene return")
    p.add_argument("--exposure-s", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="parallel captures (results are order-independent)")
    p.add_argument("-o", "--output", required=True, help="dataset directory")
    p.set_defaults(func=cmd_simulate)

    cal = sub.add_parser("calibrate", help="fit system models from captured data")
    calsub = cal.add_subparsers(dest="target", required=True)

    p = calsub.add_parser("galvo", help="voltage->angle model from feedback samples")
    p.add_argument("--samples", required=True, help="CSV vx,vy,theta_x_deg,theta_y_deg")
    p.add_argument("--v-range", type=float, default=5.0)
    p.add_argument("--joint", action="store_true", help="single affine regression")
    p.add_argument("-o", "--output", required=True, help="galvo model JSON")
    p.set_defaults(func=cmd_calibrate_galvo)

    p = calsub.add_parser("wall", help="relay plane from direct-return peaks")
    p.add_argument("--dataset", required=True)
    p.add_argument("--no-refine", action="store_true",
                   help="integer peak bins (skip parabolic refinement)")
    p.add_argument("-o", "--output", required=True, help="wall JSON")
    p.set_defaults(func=cmd_calibrate_wall)

    p = calsub.add_parser("jitter", help="temporal impulse response from direct returns")
    p.add_argument("--dataset", required=True)
    p.add_argument("--margin", type=int, default=None,
                   help="bins kept before each peak (default: data-estimated window)")
    p.add_argument("--fit-bins", type=int, default=512, help="bins used per fit")
    p.add_argument("--init", default=None, help="initial params JSON (default: reference)")
    p.add_argument("--trace", default=None, help="write the loss trace CSV here")
    p.add_argument("-o", "--output", required=True, help="jitter JSON")
    p.set_defaults(func=cmd_calibrate_jitter)

    p = sub.add_parser("gamma", help="per-point direct-return map (CSV + optional PGM)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--window", type=int, default=None,
                   help="direct-window halfwidth in bins (default: data-estimated)")
    p.add_argument("--mip", action="store_true", help="window maximum instead of sum")
    p.add_argument("--pgm", default=None, help="also write an 8-bit preview here")
    p.add_argument("-o", "--output", required=True, help="CSV path")
    p.set_defaults(func=cmd_gamma)

    p = sub.add_parser("bbox", help="measurable hidden-scene bounding box")
    p.add_argument("--gamma", required=True, help="gamma CSV from the gamma command")
    p.add_argument("--bias", type=float, required=True, help="background counts per bin")
    p.add_argument("--t-delay-ps", type=float, required=True, help="gating delay")
    p.add_argument("--scan-region", required=True, help="scan footprint WxH in meters")
    p.add_argument("--roundtrip-zmin", action="store_true",
                   help="treat the delay as round-trip time (z_min = c*t/2)")
    p.add_argument("-o", "--output", required=True, help="bbox JSON")
    p.set_defaults(func=cmd_bbox)

    p = sub.add_parser("enhance", help="Wiener-deconvolve the jitter blur")
    p.add_argument("--dataset", required=True)
    p.add_argument("--jitter", default="default", help="jitter params JSON")
    p.add_argument("--snr", type=float, default=None, help="eta (default: estimated)")
    p.add_argument("-o", "--output", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("reconstruct", help="recover the hidden volume")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algo", choices=("opt", "bp"), default="opt")
    p.add_argument("--bbox", default=None, help="bbox JSON from the bbox command")
    p.add_argument("--bounds", default=None, help="x0,x1,y0,y1,z0,z1 in meters")
    p.add_argument("--dims", default="32,32,32")
    p.add_argument("--lambda", dest="tv_lambda", type=float, default=0.0,
                   help="total-variation weight")
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--window", type=int, default=None,
                   help="direct-window halfwidth for prep (default: data-estimated)")
    p.add_argument("--no-prep", action="store_true",
                   help="dataset is already realigned/split/normalized")
    p.add_argument("--attenuation", action="store_true",
                   help="model shading falloff in the forward operator")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_reconstruct)

    # --config defaults must reach every subparser (argparse subcommands
    # parse into a fresh namespace with their own defaults).
    parser.all_parsers = [parser] + list(sub.choices.values()) + list(calsub.choices.values())
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    # Two-pass parse so --config supplies defaults that explicit flags override.
    probe, _ = parser.parse_known_args(argv)
    if getattr(probe, "config", None):
        try:
            with open(probe.config) as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as err:
            print(f"error: cannot read config {probe.config}: {err}", file=sys.stderr)
            return _EXIT_FORMAT
        defaults = {k.replace("-", "_"): v for k, v in overrides.items()}
        for sub_parser in parser.all_parsers:
            sub_parser.set_defaults(**defaults)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, FormatError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_FORMAT
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_DOMAIN
    except NlosError as err:
        print(f"error: {err}", file=sys.stderr)
        return _EXIT_CONTRACT
    except Exception:
        traceback.print_exc()
        return _EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
