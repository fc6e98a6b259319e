"""Track bundle serialization: cones.csv, centers.csv, reftable_<k>.csv, track.toml."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .geometry import write_reftable_csv
from .track import TrackError, TrackParams, TrackSpec, make_track, make_track_from_centers


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isnan(value) or math.isinf(value):
            raise TrackError(f"cannot serialize non-finite value {value}")
        return repr(float(value))
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TrackError(f"cannot serialize config value of type {type(value)!r}")


def write_flat_toml(pairs: dict, path) -> None:
    """Write a flat dotted-key TOML document with deterministic key order."""
    with open(path, "w") as fh:
        for key in pairs:
            fh.write(f"{key} = {_toml_value(pairs[key])}\n")


def read_flat_toml(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    flat = {}

    def walk(prefix, node):
        for k, v in node.items():
            name = f"{prefix}.{k}" if prefix else k
            if isinstance(v, dict):
                walk(name, v)
            else:
                flat[name] = v

    walk("", data)
    return flat


def save_track(track: TrackSpec, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cones = track.cones
    with open(out / "cones.csv", "w", newline="") as fh:
        fh.write("lane,x,y\n")
        for lane, pts in ((1, cones.lane1_cones), (2, cones.lane2_cones)):
            for p in pts:
                fh.write(f"{lane},{p[0]:.17g},{p[1]:.17g}\n")
    centers = track.waypoint_sets.sets[0]
    with open(out / "centers.csv", "w", newline="") as fh:
        fh.write("i,x,y\n")
        for i, p in enumerate(centers):
            fh.write(f"{i},{p[0]:.17g},{p[1]:.17g}\n")
    for k, table in enumerate(track.ref_tables, start=1):
        write_reftable_csv(table, out / f"reftable_{k}.csv")
    p = track.params
    write_flat_toml(
        {
            "track.source": p.source,
            "track.seed": p.seed,
            "track.scale": p.scale,
            "track.n": p.n,
            "track.j": p.j,
            "track.w": p.w,
            "track.r": p.perturb_radius,
            "track.ds": p.ds,
            "track.lane_width": p.lane_width,
            "track.min_separation": p.min_separation,
            "track.cone_mode": p.cone_mode,
            "track.closed": p.closed,
        },
        out / "track.toml",
    )


def load_track(in_dir) -> TrackSpec:
    """Rebuild a TrackSpec from a bundle directory.

    Geometry is regenerated from the stored parameters / center points, which
    reproduces the full-precision in-memory tables rather than the 9-digit CSVs.
    """
    src = Path(in_dir)
    meta = read_flat_toml(src / "track.toml")
    params = TrackParams(
        seed=int(meta["track.seed"]),
        scale=float(meta["track.scale"]),
        n=int(meta["track.n"]),
        j=int(meta["track.j"]),
        w=int(meta["track.w"]),
        perturb_radius=float(meta["track.r"]),
        ds=float(meta["track.ds"]),
        min_separation=float(meta["track.min_separation"]),
        lane_width=float(meta["track.lane_width"]),
        cone_mode=str(meta["track.cone_mode"]),
        closed=bool(meta["track.closed"]),
        source=str(meta["track.source"]),
    )
    if params.source == "figure_eight":
        return make_track(params)
    centers = np.loadtxt(src / "centers.csv", delimiter=",", skiprows=1, ndmin=2)[:, 1:3]
    return make_track_from_centers(centers, params, closed=params.closed)


def load_centers_csv(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise TrackError(f"centers CSV {path} needs at least two columns")
    return data[:, -2:]
