"""Dataset CSV ingestion, config files, and reproducibility manifests.

Dataset schema: header ``lon,lat,direction_rad`` (spherical mode) or
``x,y,direction_rad`` (planar mode), one row per site. Angles outside
[0, 2*pi) are wrapped with a warning; values that look like degrees are
rejected unless ``units="deg"`` is passed. Duplicate coordinates are
rejected unless explicitly allowed.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circular import wrap_angle
from .errors import ParseError, ValidationError

TWO_PI = 2.0 * math.pi


@dataclass
class Dataset:
    """Angles (radians in [0, 2*pi)) with site coordinates and mode."""

    locations: np.ndarray
    angles: np.ndarray
    mode: str
    source_hash: str = ""

    @property
    def n(self) -> int:
        return len(self.angles)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_dataset(path, units: str = "rad", allow_duplicates: bool = False) -> Dataset:
    """Read a dataset CSV; mode is inferred from the header."""
    path = Path(path)
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().lower()
        if header == "lon,lat,direction_rad":
            mode = "spherical"
        elif header == "x,y,direction_rad":
            mode = "planar"
        else:
            raise ParseError(
                "expected header 'lon,lat,direction_rad' or 'x,y,direction_rad', "
                f"got {header!r}",
                path=str(path), line=1,
            )
        locs, angles = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ParseError("expected three comma-separated values",
                                 path=str(path), line=lineno)
            try:
                a, b, theta = float(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as exc:
                raise ParseError(str(exc), path=str(path), line=lineno) from None
            locs.append((a, b))
            angles.append(theta)
    locations = np.asarray(locs, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if len(angles) == 0:
        raise ParseError("dataset holds no rows", path=str(path), line=2)
    if mode == "spherical":
        if np.any(np.abs(locations[:, 0]) > 180) or np.any(np.abs(locations[:, 1]) > 90):
            raise ValidationError("longitude/latitude out of range")
    if units == "deg":
        angles = np.radians(angles)
    elif units == "rad":
        if np.nanmax(np.abs(angles)) > 4.0 * math.pi:
            raise ValidationError(
                "angle magnitudes exceed 4*pi; if the data are in degrees "
                "pass units='deg'"
            )
    else:
        raise ValidationError(f"unknown units {units!r}")
    if not np.all(np.isfinite(angles)):
        raise ValidationError("non-finite angle in dataset")
    if np.any(angles < 0) or np.any(angles >= TWO_PI):
        warnings.warn("angles outside [0, 2*pi) were wrapped", stacklevel=2)
        angles = wrap_angle(angles)
    if not allow_duplicates:
        uniq = np.unique(locations, axis=0)
        if len(uniq) != len(locations):
            raise ValidationError(
                "duplicate coordinates in dataset (pass allow_duplicates to override)"
            )
    return Dataset(locations, angles, mode, source_hash=file_sha256(path))


def save_dataset(dataset: Dataset, path):
    header = "lon,lat,direction_rad" if dataset.mode == "spherical" else "x,y,direction_rad"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for (a, b), theta in zip(dataset.locations, dataset.angles):
            fh.write(f"{float(a)!r},{float(b)!r},{float(theta)!r}\n")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("ascii")
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, *, command: str, seed, config: dict,
                   input_hashes: dict, extras: dict | None = None):
    """Reproducibility record for an artifact-producing command."""
    from . import __version__

    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "input_hashes": input_hashes,
        "version": __version__,
    }
    if extras:
        manifest.update(extras)
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
