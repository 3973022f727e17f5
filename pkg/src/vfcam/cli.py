"""Command-line front end.

Commands: design, sweep, mtf, simulate, reconstruct, analyze. Every command
is a pure function of (config, inputs, seed): outputs are written to a
temporary directory and atomically renamed, manifests carry the resolved
config and its hash, and reruns are byte-identical.

Exit codes: 0 ok, 2 config error, 3 infeasible design, 4 missing bundle
artifact, 5 dimension mismatch.
"""

import argparse
import hashlib
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, formats, geometry, imaging, optics, optimizer, recon

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_MISSING = 4
EXIT_DIMENSION = 5


class ConfigError(Exception):
    """Config schema violation; message names the offending field."""


def _require(cond, fieldpath, message):
    if not cond:
        raise ConfigError(f"{fieldpath}: {message}")


def load_config(obj) -> optics.DesignConfig:
    """Build a DesignConfig from the CLI-facing dict (unit-suffixed fields)."""
    _require(isinstance(obj, dict), "$", "config must be a JSON object")
    known = {"sensor_px", "pixel_pitch_um", "upsample", "z_mm", "lambda0_nm",
             "spectrum", "phase_levels", "total_depth_nm", "cutoff_angle_deg",
             "psf_window"}
    for key in obj:
        _require(key in known, key, "unknown field")
    px = obj.get("sensor_px", [256, 256])
    _require(isinstance(px, list) and len(px) == 2
             and all(isinstance(v, int) and v > 0 for v in px),
             "sensor_px", "must be [width_px, height_px] positive integers")
    pitch = obj.get("pixel_pitch_um", 3.45)
    _require(isinstance(pitch, (int, float)) and pitch > 0,
             "pixel_pitch_um", "must be a positive number")
    upsample = obj.get("upsample", 1)
    _require(isinstance(upsample, int) and upsample >= 1,
             "upsample", "must be an integer >= 1")
    z = obj.get("z_mm", 2.0)
    _require(isinstance(z, (int, float)) and z > 0, "z_mm", "must be > 0")
    lam0 = obj.get("lambda0_nm", 550.0)
    _require(isinstance(lam0, (int, float)) and lam0 > 0,
             "lambda0_nm", "must be > 0")
    spec = obj.get("spectrum", {"min_nm": 400.0, "max_nm": 700.0, "samples": 13})
    if isinstance(spec, dict):
        for k in ("min_nm", "max_nm", "samples"):
            _require(k in spec, f"spectrum.{k}", "missing")
        _require(spec["samples"] >= 1, "spectrum.samples", "must be >= 1")
        _require(spec["min_nm"] < spec["max_nm"] or spec["samples"] == 1,
                 "spectrum.min_nm", "must be < spectrum.max_nm")
        spectrum = optics.make_spectrum(int(spec["samples"]),
                                        spec["min_nm"] * 1e-9,
                                        spec["max_nm"] * 1e-9)
    elif isinstance(spec, list):
        _require(all(isinstance(p, list) and len(p) == 2 for p in spec),
                 "spectrum", "explicit spectrum must be [[nm, weight], ...]")
        total = sum(w for _, w in spec)
        _require(total > 0, "spectrum", "weights must sum to > 0")
        spectrum = tuple((nm * 1e-9, w / total) for nm, w in spec)
    else:
        raise ConfigError("spectrum: must be an object or a list of pairs")
    levels = obj.get("phase_levels", 16)
    _require(isinstance(levels, int) and levels >= 2,
             "phase_levels", "must be an integer >= 2")
    depth = obj.get("total_depth_nm", 1200.0)
    _require(isinstance(depth, (int, float)) and depth > 0,
             "total_depth_nm", "must be > 0")
    alpha = obj.get("cutoff_angle_deg", 0.0)
    _require(isinstance(alpha, (int, float)) and 0 <= alpha < 90,
             "cutoff_angle_deg", "must be in [0, 90)")
    window = obj.get("psf_window", "auto")
    _require(window in ("auto", "full") or isinstance(window, int),
             "psf_window", "must be 'auto', 'full', or an integer")
    try:
        return optics.DesignConfig(
            sensor_px=(px[0], px[1]), pixel_pitch=pitch * 1e-6,
            upsample=upsample, z=z * 1e-3, lambda0=lam0 * 1e-9,
            spectrum=spectrum, phase_levels=levels, total_depth=depth * 1e-9,
            cutoff_angle_deg=float(alpha), psf_window=window)
    except ValueError as e:
        raise ConfigError(str(e))


def config_to_dict(config: optics.DesignConfig) -> dict:
    """Resolved-config dict (the hashed record; SI units)."""
    return {
        "sensor_px": list(config.sensor_px),
        "pixel_pitch_m": config.pixel_pitch,
        "upsample": config.upsample,
        "z_m": config.z,
        "lambda0_m": config.lambda0,
        "spectrum": [[l, w] for l, w in config.spectrum],
        "phase_levels": config.phase_levels,
        "total_depth_m": config.total_depth,
        "cutoff_angle_deg": config.cutoff_angle_deg,
        "psf_window": config.psf_window,
    }


def _load_config_file(path) -> optics.DesignConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = formats.read_json(p)
    except ValueError as e:
        raise ConfigError(f"config JSON parse error: {e}")
    return load_config(obj)


class _OutDir:
    """Write into a temp dir next to the target, rename on success, clean
    up on failure; an existing target is replaced atomically."""

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self):
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(
            prefix=f".tmp-{self.target.name}-", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            if self.target.exists():
                shutil.rmtree(self.target)
            self.tmp.rename(self.target)
        else:
            shutil.rmtree(self.tmp, ignore_errors=True)
        return False


def _manifest(command, config, seed, inputs, outputs, extra=None):
    m = {
        "tool_version": __version__,
        "command": command,
        "config_hash": formats.config_hash(config_to_dict(config)),
        "config": config_to_dict(config),
        "seed": seed,
        "inputs": inputs,
        "outputs": sorted(outputs),
    }
    if extra:
        m.update(extra)
    return m


def _tessellation_for(config, sites):
    return geometry.tessellate(sites, config.bounds, config.grid_px)


def _psf_stack(config, sites, excluded=()):
    """PSF stack for a design, memoized in VF_CACHE_DIR when set."""
    cache_dir = os.environ.get("VF_CACHE_DIR")
    key = None
    if cache_dir:
        h = hashlib.sha256()
        h.update(formats.config_hash(config_to_dict(config)).encode())
        h.update(np.array([[s.x, s.y] for s in sites]).tobytes())
        h.update(repr(sorted(excluded)).encode())
        key = Path(cache_dir) / f"psf-{h.hexdigest()}.npz"
        if key.exists():
            data = np.load(key)
            return optics.PsfStack(wavelengths=data["wavelengths"],
                                   spectral=data["spectral"],
                                   panchromatic=data["panchromatic"],
                                   per_channel=data["per_channel"])
    tess = _tessellation_for(config, sites)
    stack = optics.panchromatic_psf(tess, config, excluded=excluded)
    if key is not None:
        key.parent.mkdir(parents=True, exist_ok=True)
        tmp = key.with_suffix(".tmp.npz")
        np.savez(tmp, wavelengths=stack.wavelengths, spectral=stack.spectral,
                 panchromatic=stack.panchromatic, per_channel=stack.per_channel)
        tmp.replace(key)
    return stack


def _write_design_bundle(out, config, result_sites, seed, command, extra=None):
    tess = _tessellation_for(config, result_sites)
    margin = analysis.default_margin(config)
    excluded = analysis.exclude_marginal_cells(tess, margin)
    phase = optics.build_phase(tess, config, excluded=excluded)
    quant = analysis.quantize_phase(phase)
    report = analysis.system_report(tess, config, margin=margin)
    with _OutDir(out) as tmp:
        formats.write_sites_csv(tmp / "sites.csv", result_sites)
        formats.write_label_png(tmp / "label_map.png", tess.label_map)
        formats.write_pfm(tmp / "phase.pfm", phase.grid)
        formats.write_pfm(tmp / "phase_quantized.pfm", quant.grid)
        formats.write_json(tmp / "system_report.json", report.to_dict())
        outputs = ["sites.csv", "label_map.png", "phase.pfm",
                   "phase_quantized.pfm", "system_report.json", "manifest.json"]
        formats.write_json(tmp / "manifest.json",
                           _manifest(command, config, seed, {}, outputs, extra))


def _load_bundle(design_dir):
    """Return (config, sites) from a design bundle; missing artifacts raise
    FileNotFoundError with the artifact name."""
    d = Path(design_dir)
    manifest = d / "manifest.json"
    sites_csv = d / "sites.csv"
    for p in (manifest, sites_csv):
        if not p.exists():
            raise FileNotFoundError(f"missing bundle artifact: {p}")
    m = formats.read_json(manifest)
    cfg = m["config"]
    config = optics.DesignConfig(
        sensor_px=tuple(cfg["sensor_px"]), pixel_pitch=cfg["pixel_pitch_m"],
        upsample=cfg["upsample"], z=cfg["z_m"], lambda0=cfg["lambda0_m"],
        spectrum=tuple((l, w) for l, w in cfg["spectrum"]),
        phase_levels=cfg["phase_levels"], total_depth=cfg["total_depth_m"],
        cutoff_angle_deg=cfg["cutoff_angle_deg"], psf_window=cfg["psf_window"])
    sites = formats.read_sites_csv(sites_csv)
    return config, sites, m


def _load_scene(path, gamma=1.0):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing input: {p}")
    if p.is_dir():
        man = formats.read_json(p / "manifest.json")
        planes = np.stack([formats.read_pfm(p / name) for name in man["planes"]])
        return imaging.RasterImage(planes=planes,
                                   channel_names=tuple(man["planes"])), man["wavelengths_m"]
    if p.suffix.lower() == ".pfm":
        arr = formats.read_pfm(p)
        if arr.ndim == 2:
            arr = np.stack([arr] * 3)
        return imaging.RasterImage(planes=arr.astype(np.float64)), None
    return imaging.RasterImage(planes=formats.read_png_image(p, gamma=gamma)), None


def cmd_design(args):
    config = _load_config_file(args.config)
    if args.k is not None and args.k < 1:
        print("error: --k: must be >= 1", file=sys.stderr)
        return EXIT_INFEASIBLE
    params = optimizer.OptimizeParams(k=args.k or 23, maxiter=args.maxiter,
                                      seed=args.seed)
    result = optimizer.optimize_fixed_k(params, config)
    _write_design_bundle(args.out, config, result.best_sites, args.seed,
                         "design", extra={"best_mtfv": result.best_mtfv,
                                          "k": params.k,
                                          "iterations": len(result.history) - 1,
                                          "terminated_by": result.terminated_by.value})
    if not args.quiet:
        print(f"design: K={params.k} best MTFv {result.best_mtfv:.6g} -> {args.out}")
    return EXIT_OK


def cmd_sweep(args):
    config = _load_config_file(args.config)
    try:
        k_values = [int(s) for s in args.k_list.split(",") if s]
    except ValueError:
        raise ConfigError("--k-list: must be comma-separated integers")
    if len(set(k_values)) < 4:
        raise ConfigError("--k-list: need >= 4 distinct K values")
    template = optimizer.OptimizeParams(k=k_values[0], maxiter=args.maxiter,
                                        seed=args.seed)
    result = optimizer.sweep_k(k_values, config, template,
                               restarts=args.restarts, threads=args.threads)
    best_run = max((r for r in result.runs if r[0] == result.best_k),
                   key=lambda r: r[2])
    params = optimizer.OptimizeParams(
        k=result.best_k, maxiter=args.maxiter,
        seed=args.seed + 7919 * best_run[1] + result.best_k)
    best = optimizer.optimize_fixed_k(params, config)
    with _OutDir(args.out) as tmp:
        with open(tmp / "sweep.csv", "w") as f:
            f.write("K,restart,best_mtfv,iterations,terminated_by\n")
            for k, r, v, its, term in result.runs:
                f.write(f"{k},{r},{v!r},{its},{term.value}\n")
        formats.write_json(tmp / "fit.json", {
            "coefficients": list(result.fit),
            "best_k": result.best_k,
            "table": [[k, v] for k, v in result.table],
        })
        outputs = ["sweep.csv", "fit.json", "manifest.json"]
        formats.write_json(tmp / "manifest.json",
                           _manifest("sweep", config, args.seed,
                                     {"k_list": k_values,
                                      "restarts": args.restarts},
                                     outputs))
    _write_design_bundle(Path(args.out) / "best_design", config,
                         best.best_sites, params.seed, "design",
                         extra={"best_mtfv": best.best_mtfv, "k": result.best_k,
                                "iterations": len(best.history) - 1,
                                "terminated_by": best.terminated_by.value})
    if not args.quiet:
        print(f"sweep: best K = {result.best_k} -> {args.out}")
    return EXIT_OK


def cmd_mtf(args):
    config, sites, _ = _load_bundle(args.design_dir)
    stack = _psf_stack(config, sites)
    report = optics.mtfv(stack, config)
    with _OutDir(args.out) as tmp:
        formats.write_pfm(tmp / "psf_pan.pfm", stack.panchromatic)
        formats.write_png_preview(tmp / "psf_pan_preview_sqrt.png",
                                  stack.panchromatic, tone="sqrt")
        pan_mtf = np.fft.fftshift(report.spectral_mtf.mean(axis=0))
        formats.write_pfm(tmp / "mtf_pan.pfm", pan_mtf)
        formats.write_png_preview(tmp / "mtf_pan_preview_log.png", pan_mtf,
                                  tone="log")
        formats.write_json(tmp / "mtf_report.json", {
            "mtfv": report.mtfv,
            "wavelengths_m": [float(l) for l in report.wavelengths],
            "grid": [config.sensor_px[0], config.sensor_px[1]],
        })
        outputs = ["psf_pan.pfm", "psf_pan_preview_sqrt.png", "mtf_pan.pfm",
                   "mtf_pan_preview_log.png", "mtf_report.json", "manifest.json"]
        formats.write_json(tmp / "manifest.json",
                           _manifest("mtf", config, args.seed,
                                     {"design_dir": str(args.design_dir)}, outputs,
                                     extra={"mtfv": report.mtfv}))
    if not args.quiet:
        print(f"mtf: MTFv {report.mtfv:.6g} -> {args.out}")
    return EXIT_OK


def cmd_simulate(args):
    config, sites, _ = _load_bundle(args.design_dir)
    scene, _ = _load_scene(args.scene, gamma=args.gamma)
    stack = _psf_stack(config, sites)
    response = imaging.default_color_response(config)
    clean = imaging.simulate_capture(scene, stack, response, noise_sigma=0.0)
    sigma = 0.0
    if args.noise_db is not None:
        rms = float(np.sqrt(np.mean(clean.planes ** 2)))
        sigma = rms / (10.0 ** (args.noise_db / 20.0))
    rng = np.random.Generator(np.random.Philox(args.seed))
    raw = imaging.simulate_capture(scene, stack, response, noise_sigma=sigma,
                                   rng=rng)
    with _OutDir(args.out) as tmp:
        formats.write_pfm(tmp / "raw.pfm", raw.planes.astype(np.float32))
        formats.write_png_preview(tmp / "raw_preview_linear.png", raw.planes,
                                  tone="linear")
        outputs = ["raw.pfm", "raw_preview_linear.png", "manifest.json"]
        formats.write_json(tmp / "manifest.json",
                           _manifest("simulate", config, args.seed,
                                     {"design_dir": str(args.design_dir),
                                      "scene": str(args.scene)}, outputs,
                                     extra={"noise_db": args.noise_db,
                                            "noise_sigma": sigma}))
    if not args.quiet:
        print(f"simulate: noise sigma {sigma:.3e} -> {args.out}")
    return EXIT_OK


def cmd_reconstruct(args):
    config, sites, _ = _load_bundle(args.design_dir)
    raw_path = Path(args.raw)
    if not raw_path.exists():
        raise FileNotFoundError(f"missing input: {raw_path}")
    arr = formats.read_pfm(raw_path) if raw_path.suffix.lower() == ".pfm" \
        else formats.read_png_image(raw_path, gamma=args.gamma)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3)
    raw = imaging.RasterImage(planes=arr.astype(np.float64))
    stack = _psf_stack(config, sites)
    params = recon.ReconParams(mu=args.mu, rho=args.rho, iters=args.iters)
    result, trace = recon.admm_tv_deconvolve(raw, stack, params)
    with _OutDir(args.out) as tmp:
        formats.write_pfm(tmp / "recon.pfm", result.planes.astype(np.float32))
        formats.write_png_preview(tmp / "recon_preview_linear.png",
                                  result.planes, tone="linear")
        with open(tmp / "trace.csv", "w") as f:
            f.write("iteration,objective\n")
            for i, v in enumerate(trace):
                f.write(f"{i + 1},{v!r}\n")
        outputs = ["recon.pfm", "recon_preview_linear.png", "trace.csv",
                   "manifest.json"]
        formats.write_json(tmp / "manifest.json",
                           _manifest("reconstruct", config, args.seed,
                                     {"design_dir": str(args.design_dir),
                                      "raw": str(args.raw)}, outputs,
                                     extra={"mu": args.mu, "rho": args.rho,
                                            "iters": args.iters}))
    if not args.quiet:
        print(f"reconstruct: final objective {trace[-1]:.6g} -> {args.out}")
    return EXIT_OK


def cmd_analyze(args):
    config, sites, _ = _load_bundle(args.design_dir)
    tess = _tessellation_for(config, sites)
    margin = args.margin_um * 1e-6 if args.margin_um is not None \
        else analysis.default_margin(config)
    report = analysis.system_report(tess, config, z_o=args.z_o_mm * 1e-3,
                                    margin=margin)
    if args.out:
        with _OutDir(args.out) as tmp:
            formats.write_json(tmp / "system_report.json", report.to_dict())
            formats.write_json(tmp / "manifest.json",
                               _manifest("analyze", config, args.seed,
                                         {"design_dir": str(args.design_dir)},
                                         ["system_report.json", "manifest.json"]))
    if not args.quiet:
        print(formats.canonical_json(report.to_dict()))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(
        prog="vfcam",
        description="Voronoi-Fresnel lensless camera design and simulation")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for independent runs")
    common.add_argument("--seed", type=int, default=0, help="RNG seed")
    common.add_argument("--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", parents=[common],
                       help="optimize a fixed-K design and write the bundle")
    d.add_argument("config")
    d.add_argument("--k", type=int, default=None)
    d.add_argument("--maxiter", type=int, default=100)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("sweep", parents=[common],
                       help="sweep K, fit the peak, keep the best design")
    s.add_argument("config")
    s.add_argument("--k-list", required=True,
                   help="comma-separated K values (>= 4 distinct)")
    s.add_argument("--restarts", type=int, default=3)
    s.add_argument("--maxiter", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("mtf", parents=[common],
                       help="PSF/MTF evaluation of a design bundle")
    m.add_argument("design_dir")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mtf)

    c = sub.add_parser("simulate", parents=[common],
                       help="simulate a raw capture of a scene")
    c.add_argument("design_dir")
    c.add_argument("scene", help="PNG/PFM image or spectral cube directory")
    c.add_argument("--noise-db", type=float, default=None,
                   help="signal-to-noise ratio in dB (omit for noiseless)")
    c.add_argument("--gamma", type=float, default=1.0,
                   help="decoding gamma for PNG scenes (1.0 = linear)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_simulate)

    r = sub.add_parser("reconstruct", parents=[common],
                       help="ADMM TV deconvolution of a raw capture")
    r.add_argument("design_dir")
    r.add_argument("raw")
    r.add_argument("--mu", type=float, default=None)
    r.add_argument("--rho", type=float, default=None)
    r.add_argument("--iters", type=int, default=100)
    r.add_argument("--gamma", type=float, default=1.0)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("analyze", parents=[common],
                       help="first-order system report for a design bundle")
    a.add_argument("design_dir")
    a.add_argument("--z-o-mm", type=float, default=300.0,
                   help="object distance in mm")
    a.add_argument("--margin-um", type=float, default=None,
                   help="marginal-cell exclusion band in um")
    a.add_argument("--out", default=None)
    a.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except optimizer.InfeasibleKError as e:
        print(f"infeasible design: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except FileNotFoundError as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (imaging.DimensionMismatchError, optics.GridMismatchError) as e:
        print(f"dimension mismatch: {e}", file=sys.stderr)
        return EXIT_DIMENSION


if __name__ == "__main__":
    sys.exit(main())
