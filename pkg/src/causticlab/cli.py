"""Command-line surface: lens traces, caustic extraction, wavefront
classification, Strehl evaluation, bifurcation sweeps and correction runs.

Every command writes machine-readable CSV/JSON into the output
directory (flag ``--out-dir`` or env var ``CAUSTICLAB_OUT_DIR``) plus a
run manifest.  CSV cells use fixed 17-significant-digit scientific
notation, so reruns with identical inputs are byte-identical.

Exit codes: 0 success, 2 correction stalled, 3 correction diverged,
64 config/parse error, 65 trace/geometry error, 66 empty wavefront.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import __version__, catastrophe, corrector, lens_model, wavefront
from .formats import format_float, write_csv

EXIT_STALLED = 2
EXIT_DIVERGED = 3
EXIT_CONFIG = 64
EXIT_TRACE = 65
EXIT_NO_ABERRATION = 66


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_json(path: Path, what: str):
    if not path.exists():
        _fail(EXIT_CONFIG, f"{what} file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except (json.JSONDecodeError, OSError) as exc:
        _fail(EXIT_CONFIG, f"cannot parse {what} file {path}: {exc}")


def _load_lens(path: Path) -> lens_model.LensPrescription:
    obj = _load_json(path, "lens config")
    try:
        return lens_model.LensPrescription.from_json_obj(obj)
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"invalid lens config {path}: {exc}")


def _load_wavefront(path: Path) -> wavefront.WavefrontSpec:
    obj = _load_json(path, "wavefront")
    try:
        return wavefront.WavefrontSpec.from_json_obj(obj)
    except (ValueError, KeyError, TypeError) as exc:
        _fail(EXIT_CONFIG, f"invalid wavefront spec {path}: {exc}")


def _write_manifest(out_dir: Path, command: str, inputs: dict, outputs: list,
                    seed: int, started: float):
    manifest = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "tool_version": __version__,
        "duration_s": time.monotonic() - started,
    }
    path = out_dir / f"manifest_{command}.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _parse_heights(spec: str) -> np.ndarray:
    """Heights from 'a,b,c' or 'lo:hi:count' syntax."""
    try:
        if ":" in spec:
            lo, hi, count = spec.split(":")
            return np.linspace(float(lo), float(hi), int(count))
        return np.array([float(tok) for tok in spec.split(",") if tok.strip()])
    except ValueError as exc:
        _fail(EXIT_CONFIG, f"cannot parse height list {spec!r}: {exc}")


@click.group()
@click.option("--out-dir", type=click.Path(path_type=Path), default=".",
              envvar="CAUSTICLAB_OUT_DIR", show_default=True,
              help="Directory for output files.")
@click.option("--tol", type=float, default=1e-8, show_default=True,
              help="Generic tolerance for detection/validation steps.")
@click.option("--threads", type=int, default=1, show_default=True,
              help="Worker count ceiling (current implementation is serial).")
@click.option("--seed", type=int, default=0, show_default=True,
              help="Seed recorded in the run manifest.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, out_dir: Path, tol: float, threads: int, seed: int):
    """Geometric-optics caustic toolkit."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx.obj = {"out_dir": out_dir, "tol": tol, "threads": threads, "seed": seed}


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True,
              help="Lens prescription JSON {n, d, R1, R2, D}.")
@click.option("--heights", default="0.5:19.5:100", show_default=True,
              help="Entry heights, 'a,b,c' or 'lo:hi:count'.")
@click.pass_obj
def trace(obj, config_path: Path, heights: str):
    """Trace parallel rays through a lens; CSV h,r_e,z_e,alpha."""
    started = time.monotonic()
    lens = _load_lens(config_path)
    hs = _parse_heights(heights)
    rows = []
    for h in hs:
        try:
            ray = lens_model.trace_through_lens(float(h), lens)
        except (ValueError, lens_model.GeometryError,
                lens_model.TotalInternalReflectionError) as exc:
            _fail(EXIT_TRACE, f"trace failed at h={h}: {exc}")
        rows.append([ray.h, ray.r_e, ray.z_e, ray.alpha])
    out = obj["out_dir"] / "trace.csv"
    write_csv(out, ["h", "r_e", "z_e", "alpha"], rows)
    manifest = _write_manifest(obj["out_dir"], "trace", {"config": config_path},
                               [out], obj["seed"], started)
    click.echo(f"wrote {out} and {manifest}")


def _caustic_svg(path: Path, curve):
    """Minimal polyline rendering of the meridional caustic and its mirror."""
    valid = curve.valid
    r = curve.r_caustic[valid]
    z = curve.z_caustic[valid]
    if len(r) == 0:
        path.write_text("<svg xmlns='http://www.w3.org/2000/svg'/>\n")
        return
    pad = 1.0
    z0, z1 = float(np.min(z)) - pad, float(np.max(z)) + pad
    r1 = float(np.max(np.abs(r))) + pad
    width, height = z1 - z0, 2 * r1

    def pts(sign):
        return " ".join(
            f"{zz - z0:.6f},{r1 - sign * rr:.6f}" for zz, rr in zip(z, r)
        )

    with open(path, "w") as fh:
        fh.write(
            f"<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 {width:.6f} {height:.6f}'>\n"
        )
        for sign in (1, -1):
            fh.write(
                f"  <polyline fill='none' stroke='black' stroke-width='{width / 400:.6f}' "
                f"points='{pts(sign)}'/>\n"
            )
        fh.write("</svg>\n")


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path), required=True)
@click.option("--heights", default="0.5:19.5:80", show_default=True)
@click.option("--svg/--no-svg", default=False, help="Also write an SVG polyline.")
@click.option("--oracle", is_flag=True,
              help="Add neighbouring-ray intersection columns and deviation summary.")
@click.option("--oracle-dh", type=float, default=1e-5, show_default=True)
@click.pass_obj
def caustic(obj, config_path: Path, heights: str, svg: bool, oracle: bool, oracle_dh: float):
    """Extract the lens caustic; CSV h,t_c,r_caustic,z_caustic,valid."""
    started = time.monotonic()
    lens = _load_lens(config_path)
    hs = _parse_heights(heights)
    try:
        curve = lens_model.caustic_profile(lens, hs) if len(hs) else None
    except ValueError as exc:
        _fail(EXIT_TRACE, f"caustic extraction failed: {exc}")

    header = ["h", "t_c", "r_caustic", "z_caustic", "valid"]
    rows = []
    max_dev = 0.0
    if curve is not None:
        if oracle:
            header += ["r_oracle", "z_oracle"]
        for i in range(len(curve)):
            row = [curve.h[i], curve.t_c[i], curve.r_caustic[i], curve.z_caustic[i],
                   "1" if curve.valid[i] else "0"]
            if oracle:
                try:
                    r_bf, z_bf = lens_model.brute_force_caustic(float(curve.h[i]), oracle_dh, lens)
                    if curve.valid[i]:
                        max_dev = max(
                            max_dev,
                            math.hypot(r_bf - curve.r_caustic[i], z_bf - curve.z_caustic[i]),
                        )
                except lens_model.NoIntersectionError:
                    r_bf, z_bf = float("nan"), float("nan")
                row += [r_bf, z_bf]
            rows.append(row)
    out = obj["out_dir"] / "caustic.csv"
    write_csv(out, header, rows)
    outputs = [out]
    if svg and curve is not None:
        svg_path = obj["out_dir"] / "caustic.svg"
        _caustic_svg(svg_path, curve)
        outputs.append(svg_path)
    summary = {"samples": len(rows)}
    if oracle:
        summary["max_oracle_deviation_mm"] = max_dev
    summary_path = obj["out_dir"] / "caustic_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(summary_path)
    manifest = _write_manifest(obj["out_dir"], "caustic", {"config": config_path},
                               outputs, obj["seed"], started)
    click.echo(f"wrote {out} and {manifest}")


@main.command()
@click.option("--wavefront", "wf_path", type=click.Path(path_type=Path), required=True)
@click.pass_obj
def classify(obj, wf_path: Path):
    """Classify the dominant caustic type of a wavefront (JSON report)."""
    started = time.monotonic()
    spec = _load_wavefront(wf_path)
    try:
        report = catastrophe.classify(spec)
    except catastrophe.NoAberrationError as exc:
        _fail(EXIT_NO_ABERRATION, str(exc))
    out = obj["out_dir"] / "classification.json"
    with open(out, "w") as fh:
        json.dump(report.to_json_obj(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(obj["out_dir"], "classify", {"wavefront": wf_path},
                    [out], obj["seed"], started)
    click.echo(json.dumps(report.to_json_obj(), sort_keys=True))


@main.command()
@click.option("--wavefront", "wf_path", type=click.Path(path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="CorrectionConfig JSON; defaults apply when omitted.")
@click.option("--mode", type=click.Choice(["balance", "descend", "toc"]), required=True)
@click.pass_obj
def correct(obj, wf_path: Path, config_path: Path | None, mode: str):
    """Run a correction; trace CSV iter,stage,J,S,c_1..c_N plus summary."""
    started = time.monotonic()
    spec = _load_wavefront(wf_path)
    if config_path is not None:
        cfg_obj = _load_json(config_path, "correction config")
        try:
            cfg = corrector.CorrectionConfig.from_json_obj(cfg_obj)
        except (ValueError, TypeError) as exc:
            _fail(EXIT_CONFIG, f"invalid correction config {config_path}: {exc}")
    else:
        cfg = corrector.CorrectionConfig()

    modes = tuple((t.n, t.m, t.kind) for t in spec.terms)
    c0 = np.array([t.a for t in spec.terms])
    out_csv = obj["out_dir"] / "correction_trace.csv"
    summary: dict = {"mode": mode}

    if mode == "balance":
        a40 = sum(t.a for t in spec.terms if (t.n, t.m) == (4, 0))
        result = corrector.balance_primary(a40)
        summary["a40"] = a40
        summary["published"] = list(result.published)
        summary["oracle"] = list(result.oracle)
        write_csv(out_csv, ["iter", "stage", "J", "S"], [])
        exit_code = 0
    else:
        try:
            if mode == "descend":
                trace_obj = corrector.optimize_caustic(
                    spec, cfg, corrector.spot_objective(modes)
                )
            else:
                trace_obj = corrector.toc_run(c0, cfg, modes)
            exit_code = 0
        except (ValueError, corrector.SaturationError) as exc:
            _fail(EXIT_CONFIG, f"correction setup failed: {exc}")
        except corrector.StalledError as exc:
            trace_obj = exc.trace
            summary["error"] = str(exc)
            exit_code = EXIT_STALLED
        except corrector.DivergenceError as exc:
            trace_obj = exc.trace
            summary["error"] = str(exc)
            exit_code = EXIT_DIVERGED
        trace_obj.to_csv(out_csv)
        if trace_obj.iterates:
            last = trace_obj.final()
            summary["iterations"] = len(trace_obj.iterates)
            summary["stages"] = trace_obj.stages()
            summary["final_strehl"] = last.strehl
            summary["final_coeffs"] = [float(v) for v in last.coeffs]

    summary_path = obj["out_dir"] / "correction_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    inputs = {"wavefront": wf_path}
    if config_path is not None:
        inputs["config"] = config_path
    _write_manifest(obj["out_dir"], "correct", inputs, [out_csv, summary_path],
                    obj["seed"], started)
    click.echo(json.dumps(summary, sort_keys=True))
    if exit_code:
        sys.exit(exit_code)


@main.command()
@click.option("--wavefront", "wf_path", type=click.Path(path_type=Path), required=True)
@click.option("--wavenumber", type=float, default=2 * math.pi, show_default=True)
@click.option("--order", type=int, default=64, show_default=True)
@click.pass_obj
def strehl(obj, wf_path: Path, wavenumber: float, order: int):
    """Strehl ratio of a wavefront."""
    started = time.monotonic()
    spec = _load_wavefront(wf_path)
    value = wavefront.strehl(spec, wavenumber, order)
    out = obj["out_dir"] / "strehl.json"
    with open(out, "w") as fh:
        json.dump({"strehl": value, "wavenumber": wavenumber}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(obj["out_dir"], "strehl", {"wavefront": wf_path},
                    [out], obj["seed"], started)
    click.echo(format_float(value))


@main.command()
@click.option("--label", type=click.Choice([l.name for l in catastrophe.STABLE_IN_3D]),
              required=True)
@click.option("--window", default="-4:4", show_default=True,
              help="Control window lo:hi applied to every control axis.")
@click.option("--resolution", type=int, default=512, show_default=True)
@click.option("--slice-value", type=float, default=None,
              help="Frozen first control for the surface-type sets (A4, D4).")
@click.pass_obj
def bifurcation(obj, label: str, window: str, resolution: int, slice_value: float | None):
    """Sweep a bifurcation set; CSV state,ctrl1,ctrl2,ctrl3."""
    started = time.monotonic()
    lab = catastrophe.CatastropheLabel[label]
    try:
        lo, hi = (float(v) for v in window.split(":"))
    except ValueError:
        _fail(EXIT_CONFIG, f"cannot parse window {window!r}; expected lo:hi")
    trace_obj = catastrophe.trace_bifurcation_set(
        lab, [(lo, hi)] * lab.n_controls, resolution, slice_value
    )
    out = obj["out_dir"] / f"bifurcation_{label}.csv"
    trace_obj.to_csv(out)
    _write_manifest(obj["out_dir"], "bifurcation", {"label": label}, [out],
                    obj["seed"], started)
    click.echo(f"wrote {out} ({len(trace_obj)} points)")


if __name__ == "__main__":
    main()
