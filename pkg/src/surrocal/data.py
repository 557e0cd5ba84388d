"""Containers for simulator output and observations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from surrocal.errors import ShapeError

SURFACE = "surface"
OCEAN = "ocean"
UPPER_AIR = "upper_air"
DATASETS = (SURFACE, OCEAN, UPPER_AIR)
PARAM_NAMES = ("S", "sqrt_Kv", "F_aer")


@dataclass(frozen=True, eq=False)
class Grid:
    """Coordinates of the two field dimensions (space ``z``, time/level ``t``).

    A scalar output uses a 1x1 grid.
    """

    z: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "z", np.atleast_1d(np.asarray(self.z, dtype=float)))
        object.__setattr__(self, "t", np.atleast_1d(np.asarray(self.t, dtype=float)))

    @classmethod
    def scalar(cls) -> "Grid":
        return cls(np.zeros(1), np.zeros(1))

    @property
    def dims(self) -> tuple[int, int]:
        return (self.z.size, self.t.size)

    @property
    def m(self) -> int:
        return self.z.size * self.t.size

    def to_dict(self) -> dict:
        return {"N_Z": self.z.size, "N_T": self.t.size,
                "z": self.z.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Grid":
        g = cls(d["z"], d["t"])
        if g.dims != (d["N_Z"], d["N_T"]):
            raise ShapeError(f"grid coordinates {g.dims} disagree with N_Z, N_T "
                             f"({d['N_Z']}, {d['N_T']})")
        return g


@dataclass(frozen=True, eq=False)
class OutputEnsemble:
    """Replicated simulator output for one dataset over a shared design.

    ``members`` has shape ``(R, D, m)``; each ``(D, m)`` slice is a stacked
    field with the parameter index slowest and time fastest.
    """

    dataset_id: str
    members: np.ndarray
    design: np.ndarray
    grid: Grid

    def __post_init__(self):
        members = np.asarray(self.members, dtype=float)
        design = np.asarray(self.design, dtype=float)
        if members.ndim == 2:
            members = members[:, :, None]
        if members.ndim != 3:
            raise ShapeError(f"members must be (R, D, m), got {members.shape}")
        if design.ndim != 2 or design.shape[0] != members.shape[1]:
            raise ShapeError(f"design {design.shape} does not match members {members.shape}")
        if members.shape[2] != self.grid.m:
            raise ShapeError(f"field length {members.shape[2]} != grid size {self.grid.m}")
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "design", design)

    @property
    def R(self) -> int:
        return self.members.shape[0]

    @property
    def D(self) -> int:
        return self.members.shape[1]

    @property
    def m(self) -> int:
        return self.members.shape[2]

    def mean_field(self) -> np.ndarray:
        """Ensemble mean, shape (D, m)."""
        return self.members.mean(axis=0)


@dataclass(eq=False)
class ObservationSet:
    """Observed fields keyed by dataset id, each shaped like its grid."""

    fields: dict
    grids: dict = field(default_factory=dict)

    def __post_init__(self):
        fixed = {}
        for name, value in self.fields.items():
            arr = np.atleast_2d(np.asarray(value, dtype=float))
            grid = self.grids.get(name)
            if grid is None:
                grid = Grid.scalar() if arr.size == 1 else Grid(
                    np.arange(arr.shape[0]), np.arange(arr.shape[1]))
                self.grids[name] = grid
            arr = arr.reshape(grid.dims) if arr.size == grid.m else arr
            if arr.shape != grid.dims:
                raise ShapeError(f"{name} observation shape {arr.shape} != grid {grid.dims}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} observation has non-finite entries")
            fixed[name] = arr
        self.fields = fixed

    def vector(self, name) -> np.ndarray:
        return self.fields[name].ravel()

    @property
    def N(self) -> int:
        return sum(v.size for v in self.fields.values())
