"""``ch4`` command line: retrieve, quantify, diagnose and synth subcommands.

Data products go to ``--out``; logs go to stderr; a failure prints one JSON
object ``{kind, message, module, context}`` on stdout and exits with 2 (input
or configuration) or 3 (numerical).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .cube import extract_window, load_cube, load_map, save_cube, save_map, save_mask
from .diagnostics import (
    pca_noise_estimate,
    normalize_snr,
    snr_spectrum,
    striping_report,
    window_summary,
    write_snr_csv,
    write_striping_csv,
    write_summary_json,
)
from .errors import Ch4Error, ConfigError, IoFailure, MissingFile, MissingWind, ShapeMismatch
from .estimator import ClutterMatchedFilter
from .matched_filter import EnhancementMap
from .plume import GasConstants, quantify
from .synth import make_scene
from .target import builtin_absorption, load_absorption

log = logging.getLogger("ch4map")

PPM_M = "ppm m"
PLUME_FIELDS = (
    "plume_id",
    "seed_row",
    "seed_col",
    "n_pixels",
    "area_m2",
    "ime_kg",
    "sigma_ime_kg",
    "length_scale_m",
    "u10_mps",
    "sigma_u10_mps",
    "u_eff_mps",
    "sigma_u_eff_mps",
    "q_t_per_h",
    "sigma_q_t_per_h",
)


def _dump_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _absorption(cfg: PipelineConfig):
    return builtin_absorption() if cfg.paths.absorption is None else load_absorption(cfg.paths.absorption)


def _estimator(cfg: PipelineConfig, threads: int) -> ClutterMatchedFilter:
    b = cfg.background
    return ClutterMatchedFilter(
        variant=cfg.variant,
        absorption=_absorption(cfg),
        block_width=b.block_width,
        n_clusters=b.kmeans_k,
        kmeans_seed=b.kmeans_seed,
        shrinkage=b.shrinkage_gamma,
        kappa=b.kappa,
        theta_max=b.theta_max_rad,
        max_iter=b.max_iter,
        buffer_px=b.buffer_px,
        min_pixels_factor=b.min_pixels_factor,
        n_jobs=threads,
    )


def cmd_retrieve(cfg: PipelineConfig, threads: int) -> dict:
    cube = load_cube(cfg.input_path("cube", "scene.json"))
    window_cube, window = extract_window(cube, cfg.window.lo_nm, cfg.window.hi_nm)
    log.info("retrieval window %s-%s nm: %d bands", window.lo_nm, window.hi_nm, window_cube.bands)
    est = _estimator(cfg, threads)
    emap = est.fit_transform(window_cube)
    out = Path(cfg.paths.out_dir)
    save_map(emap.delta_x, out / "delta_x.json", cube.pixel_size_m, PPM_M)
    save_map(np.stack([emap.sigma_noise, emap.sigma_bg]), out / "sigma.json", cube.pixel_size_m, PPM_M)
    save_mask(emap.background, out / "background_mask.json", cube.pixel_size_m)
    summary = dict(emap.metadata)
    summary.update(
        {
            "scene_id": cfg.scene_id,
            "window": {"lo_nm": window.lo_nm, "hi_nm": window.hi_nm, "band_indices": list(window.band_indices)},
            "valid_pixels": int(emap.valid.sum()),
            "sigma_bg_by_scope": {emap.scopes[i].label: v for i, v in sorted(emap.sigma_bg_scope.items())},
            "sigma_noise_median": float(np.nanmedian(emap.sigma_noise)),
            "delta_x_median": float(np.nanmedian(emap.delta_x)),
            "layers": {"sigma.json": ["sigma_noise", "sigma_bg"]},
        }
    )
    _dump_json(out / "summary.json", summary)
    log.info("%s: %d scopes, sigma_bg median %.1f ppm m", summary["variant"], summary["n_scopes"],
             float(np.nanmedian(emap.sigma_bg)))
    return summary


def read_wind(path: Path, scene_id: str) -> tuple[float, float]:
    """Look up ``scene_id`` in a ``scene_id,u10_mps,sigma_u10_mps`` CSV."""
    if not path.is_file():
        raise MissingWind(f"wind file not found: {path}", module="cli", path=str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"scene_id", "u10_mps", "sigma_u10_mps"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ConfigError(f"wind CSV needs columns {sorted(need)}", module="cli", path=str(path))
        for row in reader:
            if row["scene_id"] == scene_id:
                try:
                    return float(row["u10_mps"]), float(row["sigma_u10_mps"])
                except ValueError as exc:
                    raise ConfigError(f"bad wind values for {scene_id}: {exc}", module="cli") from exc
    raise MissingWind(f"no wind row for scene {scene_id!r} in {path}", module="cli", scene_id=scene_id)


def load_enhancement(maps_dir: Path) -> EnhancementMap:
    dx, dx_cube = load_map(maps_dir / "delta_x.json")
    sig, _ = load_map(maps_dir / "sigma.json")
    if sig.shape[0] != 2 or sig.shape[1:] != dx.shape[1:]:
        raise ShapeMismatch("sigma.json must hold (sigma_noise, sigma_bg) layers matching delta_x", module="cli")
    return EnhancementMap.from_arrays(dx[0], sig[0], sig[1], dx_cube.pixel_size_m)


def cmd_quantify(cfg: PipelineConfig, threads: int) -> list:
    maps_dir = Path(cfg.paths.maps) if cfg.paths.maps is not None else Path(cfg.paths.out_dir)
    emap = load_enhancement(maps_dir)
    u10, sigma_u10 = read_wind(cfg.input_path("wind_csv", "wind.csv"), cfg.scene_id)
    s, f = cfg.segment, cfg.flux
    constants = GasConstants(f.molar_mass_kg_per_mol, f.pressure_pa, f.temperature_k)
    records = quantify(
        emap,
        u10,
        sigma_u10,
        tau=s.tau,
        tau_peak=s.tau_peak,
        scales=tuple(s.scales),
        min_pixels=s.min_pixels,
        wind_calib=(f.wind_calib_a, f.wind_calib_b),
        constants=constants,
        bg_correlated=f.bg_correlated,
        clip_negative=f.clip_negative,
    )
    out = Path(cfg.paths.out_dir)
    rows = []
    for i, rec in enumerate(records):
        d = rec.to_dict()
        d["plume_id"] = i
        d["scene_id"] = cfg.scene_id
        rows.append(d)
    _dump_json(out / "plumes.json", rows)
    with open(out / "plumes.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLUME_FIELDS)
        for d in rows:
            flat = dict(d, seed_row=d["seed"][0], seed_col=d["seed"][1])
            writer.writerow([flat[k] if isinstance(flat[k], int) else repr(float(flat[k])) for k in PLUME_FIELDS])
    if records:
        save_mask(np.stack([r.mask for r in records]), out / "plume_masks.json", emap.pixel_size_m)
        log.info("%d plume(s); largest Q = %.3f t/h", len(records), records[0].q_t_per_h)
    else:
        log.info("NoPlumeFound")
    return rows


def cmd_diagnose(cfg: PipelineConfig, threads: int) -> dict:
    d = cfg.diag
    cube, window = extract_window(load_cube(cfg.input_path("cube", "scene.json")), cfg.window.lo_nm, cfg.window.hi_nm)
    if d.crop is not None:
        r0, r1, c0, c1 = (int(v) for v in d.crop)
        cube = cube.with_data(cube.data[:, r0:r1, c0:c1])
    sigma = pca_noise_estimate(cube, d.n_signal_components)
    snr = snr_spectrum(cube, sigma)
    if cfg.paths.reference_cube is not None:
        ref, _ = extract_window(load_cube(cfg.paths.reference_cube), cfg.window.lo_nm, cfg.window.hi_nm)
        if ref.bands != cube.bands:
            raise ShapeMismatch(f"reference cube has {ref.bands} bands in the window, scene has {cube.bands}",
                                module="cli")
        snr = normalize_snr(snr, ref.data[:, ref.valid_mask].astype(np.float64).mean(axis=1))
    report = striping_report(cube, d.detrend_halfwidth, n_jobs=threads)
    out = Path(cfg.paths.out_dir)
    write_snr_csv(out / "snr.csv", snr)
    write_striping_csv(out / "striping.csv", report)
    summary = window_summary(snr, report)
    summary.update({"scene_id": cfg.scene_id, "noise_sigma": sigma.tolist(), "window_bands": list(window.band_indices)})
    write_summary_json(out / "diagnostics.json", summary)
    return summary


def cmd_synth(cfg: PipelineConfig, threads: int) -> dict:
    scene_cfg = cfg.synth.scene
    cube, truth = make_scene(scene_cfg)
    out = Path(cfg.paths.out_dir)
    save_cube(cube, out / "scene.json")
    save_map(truth.delta_x_true, out / "delta_x_true.json", cube.pixel_size_m, PPM_M)
    save_mask(truth.plume_mask_true, out / "plume_mask_true.json", cube.pixel_size_m)
    info = truth.to_dict()
    info["scene_id"] = cfg.scene_id
    info["synth_config"] = scene_cfg.to_dict()
    _dump_json(out / "truth.json", info)
    if cfg.synth.write_wind_csv and scene_cfg.plume is not None:
        with open(out / "wind.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["scene_id", "u10_mps", "sigma_u10_mps"])
            writer.writerow([cfg.scene_id, repr(float(scene_cfg.plume.wind_mps)), repr(float(cfg.synth.wind_sigma_mps))])
    log.info("synthetic scene %dx%dx%d written to %s", cube.rows, cube.cols, cube.bands, out)
    return info


COMMANDS = {"retrieve": cmd_retrieve, "quantify": cmd_quantify, "diagnose": cmd_diagnose, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ch4", description="Methane matched-filter retrieval and plume quantification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.replace("cmd_", ""))
        p.add_argument("--config", help="JSON configuration file (defaults apply when omitted)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1", module="cli")
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.paths.out_dir = args.out
        out = Path(cfg.paths.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create output directory {out}: {exc}", module="cli") from exc
        _dump_json(out / "resolved_config.json", {"command": args.command, **cfg.to_dict()})
        COMMANDS[args.command](cfg, args.threads)
    except Ch4Error as exc:
        log.error("%s: %s", exc.kind, exc.message)
        print(json.dumps(exc.to_dict(), sort_keys=True))
        return exc.exit_code
    except FileNotFoundError as exc:
        err = MissingFile(str(exc), module="cli")
        print(json.dumps(err.to_dict(), sort_keys=True))
        return err.exit_code
    except OSError as exc:
        err = IoFailure(str(exc), module="cli")
        print(json.dumps(err.to_dict(), sort_keys=True))
        return err.exit_code
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
