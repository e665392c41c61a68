"""Area-level data containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class AreaRecord:
    """One area: direct estimate, covariates, and either ``D`` or replicates.

    ``x`` holds the covariates excluding the intercept; the design matrix
    built by :class:`AreaData` prepends a column of ones.
    """

    area_id: str
    y: float
    x: tuple[float, ...]
    D: float | None = None
    replicates: tuple[float, ...] | None = None


@dataclass
class AreaData:
    """Columnar view of ``m`` areas.

    Exactly one of ``D`` (known sampling variances on the transformed scale)
    and ``Z`` (an ``(m, k)`` array of positive auxiliary replicates) is set.
    """

    area_id: list[str]
    y: np.ndarray
    X: np.ndarray
    D: np.ndarray | None = None
    Z: np.ndarray | None = None
    covariate_names: list[str] = field(default_factory=list)
    # False only for identity-scale FH bootstrap draws, which may be <= 0
    require_positive: bool = field(default=True, repr=False)

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if self.X.shape[0] != self.y.shape[0] and self.X.shape[1] == self.y.shape[0]:
            self.X = self.X.T
        if self.D is not None:
            self.D = np.asarray(self.D, dtype=float)
        if self.Z is not None:
            self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        if not self.covariate_names:
            self.covariate_names = [f"x{j}" for j in range(1, self.X.shape[1])]
        self.validate()

    @property
    def m(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.X.shape[1])

    def validate(self) -> None:
        m = self.y.shape[0]
        if self.y.ndim != 1 or m == 0:
            raise DataError("y must be a non-empty 1-D array")
        if len(self.area_id) != m:
            raise DataError("area_id length does not match y")
        if self.X.shape[0] != m:
            raise DataError("design matrix row count does not match y")
        bad = ~np.isfinite(self.y)
        if self.require_positive:
            bad |= self.y <= 0
        bad = np.flatnonzero(bad)
        if bad.size:
            raise DataError(f"y must be finite and > 0 (area {self.area_id[bad[0]]!r})")
        if not np.all(np.isfinite(self.X)):
            raise DataError("covariates must be finite")
        if (self.D is None) == (self.Z is None):
            raise DataError("exactly one of D and replicates must be supplied")
        if self.D is not None:
            if self.D.shape != (m,):
                raise DataError("D must have one entry per area")
            bad = np.flatnonzero(~np.isfinite(self.D) | (self.D <= 0))
            if bad.size:
                raise DataError(f"D must be > 0 (area {self.area_id[bad[0]]!r})")
        if self.Z is not None:
            if self.Z.shape[0] != m or self.Z.shape[1] < 2:
                raise DataError("replicates must be an (m, k) array with k >= 2")
            bad = np.flatnonzero(np.any(~np.isfinite(self.Z) | (self.Z <= 0), axis=1))
            if bad.size:
                raise DataError(f"replicates must be > 0 (area {self.area_id[bad[0]]!r})")

    def with_D(self, D) -> AreaData:
        """Copy with known sampling variances ``D`` and no replicates."""
        return AreaData(list(self.area_id), self.y.copy(), self.X.copy(),
                        D=np.array(D, dtype=float), covariate_names=list(self.covariate_names),
                        require_positive=self.require_positive)

    def with_y(self, y, require_positive: bool | None = None) -> AreaData:
        pos = self.require_positive if require_positive is None else require_positive
        return AreaData(list(self.area_id), np.array(y, dtype=float), self.X.copy(),
                        D=None if self.D is None else self.D.copy(),
                        Z=None if self.Z is None else self.Z.copy(),
                        covariate_names=list(self.covariate_names), require_positive=pos)

    def records(self) -> list[AreaRecord]:
        out = []
        for i in range(self.m):
            out.append(AreaRecord(
                area_id=self.area_id[i],
                y=float(self.y[i]),
                x=tuple(float(v) for v in self.X[i, 1:]),
                D=None if self.D is None else float(self.D[i]),
                replicates=None if self.Z is None else tuple(float(v) for v in self.Z[i]),
            ))
        return out

    @classmethod
    def from_records(cls, records: Sequence[AreaRecord],
                     covariate_names: Sequence[str] | None = None) -> AreaData:
        if not records:
            raise DataError("no records")
        has_d = [r.D is not None for r in records]
        has_z = [r.replicates is not None for r in records]
        if any(d and z for d, z in zip(has_d, has_z)):
            raise DataError("a record carries both D and replicates")
        if len(set(has_d)) > 1 or len(set(has_z)) > 1:
            raise DataError("records mix known D and replicates")
        X = np.array([(1.0, *r.x) for r in records], dtype=float)
        D = np.array([r.D for r in records], dtype=float) if has_d[0] else None
        Z = None
        if has_z[0]:
            lengths = {len(r.replicates) for r in records}
            if len(lengths) != 1:
                raise DataError("all areas must have the same number of replicates")
            Z = np.array([r.replicates for r in records], dtype=float)
        return cls([r.area_id for r in records], np.array([r.y for r in records]), X,
                   D=D, Z=Z, covariate_names=list(covariate_names or []))


def make_data(y, x=None, D=None, Z=None, area_id=None) -> AreaData:
    """Build :class:`AreaData` from raw arrays, adding the intercept column.

    ``x`` is ``None`` (intercept only), a 1-D array (one covariate) or an
    ``(m, q)`` array.
    """
    y = np.asarray(y, dtype=float)
    m = y.shape[0]
    if x is None:
        X = np.ones((m, 1))
    else:
        xa = np.asarray(x, dtype=float)
        if xa.ndim == 1:
            xa = xa[:, None]
        X = np.column_stack([np.ones(m), xa])
    ids = list(area_id) if area_id is not None else [str(i + 1) for i in range(m)]
    return AreaData(ids, y, X, D=D, Z=Z)
