"""Text archives of designs, ensembles and observations, and fit files.

Layout of an archive directory::

    manifest.json              dims, stacking, D, R, bounds, seeds, theta_true
    design.csv                 header S,sqrt_Kv,F_aer; D rows
    <dataset>/member_<k>.csv   D rows x m columns (space slow, time fast)
    obs_surface.csv            N_Z rows x N_T columns
    obs_ocean.csv              one value
    obs_upper.csv              N_Z rows x N_T columns

Numbers are written with 17 significant digits, so doubles round-trip
exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from surrocal.data import (DATASETS, OCEAN, PARAM_NAMES, SURFACE, UPPER_AIR, Grid,
                           ObservationSet, OutputEnsemble)
from surrocal.errors import SchemaError

SCHEMA_VERSION = 1
STACKING = "index(d, z, t) = d*N_Z*N_T + z*N_T + t"
OBS_FILES = {SURFACE: "obs_surface.csv", OCEAN: "obs_ocean.csv", UPPER_AIR: "obs_upper.csv"}
FMT = "%.17g"


@dataclass(eq=False)
class Archive:
    design: np.ndarray
    ensembles: dict
    observations: ObservationSet | None
    manifest: dict = field(default_factory=dict)


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix(path, a, header=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    kw = {"header": header, "comments": ""} if header else {}
    np.savetxt(path, a, fmt=FMT, delimiter=",", **kw)


def _read_matrix(path, skip_header=False):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing archive file: {path}")
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2, skiprows=1 if skip_header else 0)
    except ValueError as exc:
        raise SchemaError(f"{path}: unparsable numeric table ({exc})") from exc
    return a


def write_archive(path, design, ensembles: dict, observations: ObservationSet | None = None,
                  extra: dict | None = None) -> dict:
    """Write an archive directory; returns the manifest."""
    os.makedirs(path, exist_ok=True)
    design = np.asarray(design, dtype=float)
    Rs = {e.R for e in ensembles.values()}
    if len(Rs) != 1:
        raise SchemaError(f"ensembles disagree on replicate count: {sorted(Rs)}")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "stacking": STACKING,
        "D": int(design.shape[0]),
        "R": Rs.pop(),
        "parameters": list(PARAM_NAMES),
        "datasets": {name: ens.grid.to_dict() for name, ens in ensembles.items()},
    }
    manifest.update(extra or {})
    _write_matrix(os.path.join(path, "design.csv"), design, ",".join(PARAM_NAMES))
    for name, ens in ensembles.items():
        if not np.array_equal(ens.design, design):
            raise SchemaError(f"{name} ensemble was run on a different design")
        sub = os.path.join(path, name)
        os.makedirs(sub, exist_ok=True)
        for k in range(ens.R):
            _write_matrix(os.path.join(sub, f"member_{k}.csv"), ens.members[k])
    if observations is not None:
        manifest["observations"] = sorted(observations.fields)
        for name, value in observations.fields.items():
            _write_matrix(os.path.join(path, OBS_FILES[name]), value)
    _dump_json(os.path.join(path, "manifest.json"), manifest)
    return manifest


def read_manifest(path) -> dict:
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"missing archive file: {mpath}")
    with open(mpath) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{mpath}: invalid JSON ({exc})") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{mpath}: field schema_version={version!r} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    for key in ("D", "R", "datasets"):
        if key not in manifest:
            raise SchemaError(f"{mpath}: missing field {key!r}")
    return manifest


def read_archive(path) -> Archive:
    """Read and validate an archive written by :func:`write_archive`."""
    manifest = read_manifest(path)
    D, R = manifest["D"], manifest["R"]
    dpath = os.path.join(path, "design.csv")
    design = _read_matrix(dpath, skip_header=True)
    if design.shape != (D, len(PARAM_NAMES)):
        raise SchemaError(f"design.csv has shape {design.shape} but manifest.json field D={D} "
                          f"implies ({D}, {len(PARAM_NAMES)})")
    ensembles = {}
    grids = {}
    for name in DATASETS:
        if name not in manifest["datasets"]:
            continue
        try:
            grid = Grid.from_dict(manifest["datasets"][name])
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"manifest.json: field datasets.{name} is invalid ({exc})") from exc
        grids[name] = grid
        members = []
        for k in range(R):
            mpath = os.path.join(path, name, f"member_{k}.csv")
            a = _read_matrix(mpath)
            if a.shape != (D, grid.m):
                raise SchemaError(f"{mpath} has shape {a.shape} but manifest.json fields "
                                  f"D={D}, datasets.{name} imply ({D}, {grid.m})")
            members.append(a)
        ensembles[name] = OutputEnsemble(name, np.stack(members), design, grid)
    fields = {}
    for name in manifest.get("observations", []):
        opath = os.path.join(path, OBS_FILES[name])
        a = _read_matrix(opath)
        if a.shape != grids[name].dims:
            raise SchemaError(f"{opath} has shape {a.shape} but manifest.json field "
                              f"datasets.{name} implies {grids[name].dims}")
        fields[name] = a
    obs = ObservationSet(fields, {n: grids[n] for n in fields}) if fields else None
    return Archive(design, ensembles, obs, manifest)


def write_world(path, world) -> dict:
    """Archive a :class:`~surrocal.synthetic.ToyWorld` with its generating config."""
    cfg = world.config
    extra = {"bounds": [list(b) for b in cfg.bounds], "theta_true": list(cfg.theta_true),
             "seeds": {"master": cfg.seed}, "world_config": cfg.to_dict()}
    return write_archive(path, world.design, world.ensembles, world.observations, extra)


def write_fit(path, fit, design_ref: str | None = None):
    d = fit.to_dict()
    d["design_ref"] = design_ref
    d["trace"] = fit.trace
    _dump_json(path, d)


def read_fit(path, archive: Archive, dense_fallback: bool = False):
    """Rebuild an :class:`EmulatorFit` from its JSON file and the training archive."""
    from surrocal.emulator import EmulatorFit, EmulatorParams

    if not os.path.exists(path):
        raise FileNotFoundError(f"missing fit file: {path}")
    with open(path) as fh:
        d = json.load(fh)
    try:
        params = EmulatorParams.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: invalid emulator fit ({exc})") from exc
    ens = archive.ensembles.get(params.dataset)
    if ens is None:
        raise SchemaError(f"{path}: field dataset={params.dataset!r} not in archive")
    if params.gamma is not None and params.gamma.shape != (ens.m, ens.m):
        raise SchemaError(f"{path}: field gamma has shape {params.gamma.shape}, "
                          f"archive grid needs ({ens.m}, {ens.m})")
    return EmulatorFit(params, ens.design, ens.grid, ens.mean_field(), dense_fallback,
                       d.get("loglik"), d.get("trace"))
