"""Spatial weight matrices and cluster membership indicators.

Builders cover the three ways a weight matrix enters the toolkit:
inverse-distance from coordinates, binary contiguity from neighbour
pairs, and inverse-distance from a supplied pairwise distance table.
All builders produce an immutable :class:`WeightMatrix` with an exactly
zero diagonal and exact symmetry (each unordered pair is computed once
and mirrored). Row normalization and cluster masking derive new
matrices instead of mutating.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from .errors import (
    DataFormatError,
    DimensionMismatchError,
    DuplicateCoordinatesError,
    IndexOutOfRangeError,
    NonPositiveExponentError,
    SelfNeighborError,
)

LOGGER = logging.getLogger(__name__)

EARTH_RADIUS_KM = 6371.0088

COORDS_COLUMNS = ("region_id", "x", "y")
CLUSTERS_COLUMNS = ("region_id", "sector_id", "member")
DISTANCES_COLUMNS = ("region_i", "region_j", "distance")


@dataclass(frozen=True)
class Coordinate:
    """Position of one region in a declared metric (planar or lon/lat)."""

    region_id: str
    x: float
    y: float


@dataclass(frozen=True)
class WeightMatrix:
    """Immutable spatial weight matrix over an ordered set of regions.

    Parameters
    ----------
    region_ids : tuple of str
        Region labels; their order fixes the row/column order.
    entries : ndarray
        Dense (n, n) nonnegative matrix with a zero diagonal.
    metric : str or None
        How the matrix was built: "euclidean", "haversine",
        "supplied-distances", or "contiguity".
    exponent : float or None
        Distance-decay exponent for inverse-distance matrices.
    normalization : str
        "none" or "row" (row-stochastic up to all-zero rows).
    """

    region_ids: tuple[str, ...]
    entries: np.ndarray
    metric: str | None = None
    exponent: float | None = None
    normalization: str = "none"

    def __post_init__(self) -> None:
        ids = tuple(str(r) for r in self.region_ids)
        object.__setattr__(self, "region_ids", ids)
        if len(set(ids)) != len(ids):
            raise DataFormatError("region ids are not unique")
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatchError(
                f"weight matrix must be square, got shape {a.shape}"
            )
        if a.shape[0] != len(ids):
            raise DimensionMismatchError(
                f"{len(ids)} region ids but {a.shape[0]} matrix rows"
            )
        if not np.all(np.isfinite(a)):
            raise DataFormatError("weight matrix contains non-finite entries")
        if np.any(a < 0.0):
            raise DataFormatError("weight matrix contains negative entries")
        if np.any(np.diagonal(a) != 0.0):
            raise DataFormatError("weight matrix diagonal must be exactly zero")
        if self.normalization not in ("none", "row"):
            raise DataFormatError(
                f"unknown normalization {self.normalization!r}"
            )
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return len(self.region_ids)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the matrix, computed once and cached."""
        a = self.entries
        if np.array_equal(a, a.T):
            return np.linalg.eigvalsh(a)
        return np.linalg.eigvals(a)

    def interval(self) -> tuple[float, float]:
        """Admissible open interval for a spatial coefficient on this matrix.

        (1/lambda_min, 1/lambda_max) from the extreme real eigenvalues,
        or (-1, 1) for a row-normalized matrix.
        """
        if self.normalization == "row":
            return (-1.0, 1.0)
        ev = self.eigenvalues
        scale = float(np.abs(ev).max()) if ev.size else 0.0
        if scale <= 1e-12:
            # empty matrix: the coefficient has no effect, any interval works
            return (-1.0, 1.0)
        if np.iscomplexobj(ev):
            real = ev.real[np.abs(ev.imag) <= 1e-9 * scale]
        else:
            real = ev
        lo = 1.0 / float(real.min()) if real.min() < 0.0 else -math.inf
        hi = 1.0 / float(real.max()) if real.max() > 0.0 else math.inf
        return (lo, hi)

    def index_of(self, region_id: str) -> int:
        try:
            return self.region_ids.index(region_id)
        except ValueError:
            raise IndexOutOfRangeError(f"unknown region {region_id!r}") from None


@dataclass(frozen=True)
class ClusterIndicator:
    """Binary membership of each region in one sector cluster."""

    sector_id: str
    region_ids: tuple[str, ...]
    membership: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        ids = tuple(str(r) for r in self.region_ids)
        object.__setattr__(self, "region_ids", ids)
        m = np.asarray(self.membership, dtype=float)
        if m.ndim != 1 or m.size != len(ids):
            raise DimensionMismatchError(
                f"membership vector length {m.size} does not match "
                f"{len(ids)} regions"
            )
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise DataFormatError(
                f"membership for sector {self.sector_id!r} must be 0/1"
            )
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "membership", m)

    @property
    def n_members(self) -> int:
        return int(self.membership.sum())

    def expand(self, convention: str = "column") -> np.ndarray:
        """Broadcast the membership vector to an (n, n) mask.

        convention "column" masks by the source region j (the default),
        "row" by the destination region i, "both" by the product.
        """
        c = self.membership
        n = c.size
        if convention == "column":
            return np.broadcast_to(c, (n, n)).copy()
        if convention == "row":
            return np.broadcast_to(c[:, None], (n, n)).copy()
        if convention == "both":
            return np.outer(c, c)
        raise DataFormatError(f"unknown mask convention {convention!r}")


def _pair_distances(coords: Sequence[Coordinate], metric: str) -> np.ndarray:
    """Condensed upper-triangle distances for the given metric."""
    xy = np.array([(c.x, c.y) for c in coords], dtype=float)
    if metric == "euclidean":
        return pdist(xy, metric="euclidean")
    if metric == "haversine":
        i, j = np.triu_indices(len(coords), k=1)
        lon1, lat1 = np.radians(xy[i, 0]), np.radians(xy[i, 1])
        lon2, lat2 = np.radians(xy[j, 0]), np.radians(xy[j, 1])
        s = (
            np.sin((lat2 - lat1) / 2.0) ** 2
            + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
        )
        return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    raise DataFormatError(f"unknown metric {metric!r}")


def _check_coords(coords: Sequence[Coordinate]) -> tuple[str, ...]:
    ids = tuple(str(c.region_id) for c in coords)
    if len(coords) < 2:
        raise DataFormatError("need at least two regions to build weights")
    if len(set(ids)) != len(ids):
        dup = [r for r in set(ids) if ids.count(r) > 1]
        raise DataFormatError(f"duplicate region ids in coordinates: {dup}")
    return ids


def build_inverse_distance(
    coords: Sequence[Coordinate],
    exponent: float = 1.0,
    metric: str = "euclidean",
) -> WeightMatrix:
    """Build W with W_ij = 1 / d_ij**exponent from region coordinates.

    Parameters
    ----------
    coords : sequence of Coordinate
        One entry per region; order fixes the matrix order.
    exponent : float
        Strictly positive distance-decay exponent.
    metric : str
        "euclidean" for planar coordinates or "haversine" for
        lon/lat degrees (great-circle distance in kilometres).
    """
    if not exponent > 0.0:
        raise NonPositiveExponentError(
            f"distance-decay exponent must be > 0, got {exponent}"
        )
    ids = _check_coords(coords)
    d = _pair_distances(coords, metric)
    if np.any(d <= 0.0):
        i, j = np.triu_indices(len(ids), k=1)
        k = int(np.argmax(d <= 0.0))
        raise DuplicateCoordinatesError(
            f"regions {ids[i[k]]!r} and {ids[j[k]]!r} share coordinates, "
            "inverse distance is undefined"
        )
    w = squareform(d ** -float(exponent))
    np.fill_diagonal(w, 0.0)
    return WeightMatrix(
        region_ids=ids, entries=w, metric=metric, exponent=float(exponent)
    )


def build_contiguity(
    n: int,
    pairs: Iterable[tuple[int, int]],
    region_ids: Sequence[str] | None = None,
) -> WeightMatrix:
    """Build a binary contiguity matrix from 0-based neighbour index pairs."""
    if region_ids is None:
        region_ids = tuple(f"r{k}" for k in range(n))
    w = np.zeros((n, n))
    for i, j in pairs:
        i, j = int(i), int(j)
        if i == j:
            raise SelfNeighborError(f"region index {i} listed as its own neighbour")
        if not (0 <= i < n and 0 <= j < n):
            raise IndexOutOfRangeError(
                f"pair ({i}, {j}) outside the {n}-region index range"
            )
        w[i, j] = 1.0
        w[j, i] = 1.0
    return WeightMatrix(region_ids=tuple(region_ids), entries=w, metric="contiguity")


def build_from_distances(
    region_ids: Sequence[str],
    distances: np.ndarray,
    exponent: float = 1.0,
) -> WeightMatrix:
    """Build W = 1 / d**exponent from a supplied distance matrix.

    Entries that are +inf (pairs absent from the distance table) map to
    weight zero, so sparse tables describe partially connected maps.
    """
    if not exponent > 0.0:
        raise NonPositiveExponentError(
            f"distance-decay exponent must be > 0, got {exponent}"
        )
    d = np.asarray(distances, dtype=float)
    n = len(region_ids)
    if d.shape != (n, n):
        raise DimensionMismatchError(
            f"distance matrix shape {d.shape} does not match {n} regions"
        )
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0.0):
        i, j = np.nonzero(off & (d <= 0.0))
        raise DuplicateCoordinatesError(
            f"non-positive distance between {region_ids[i[0]]!r} and "
            f"{region_ids[j[0]]!r}"
        )
    w = np.zeros((n, n))
    finite = off & np.isfinite(d)
    w[finite] = d[finite] ** -float(exponent)
    return WeightMatrix(
        region_ids=tuple(region_ids),
        entries=w,
        metric="supplied-distances",
        exponent=float(exponent),
    )


def row_normalize(w: WeightMatrix) -> WeightMatrix:
    """Scale each row to sum to one; all-zero rows are left untouched."""
    a = w.entries.copy()
    sums = a.sum(axis=1)
    live = sums > 0.0
    if not np.all(live):
        LOGGER.warning(
            "row normalization left %d all-zero rows untouched",
            int((~live).sum()),
        )
    a[live] = a[live] / sums[live, None]
    return WeightMatrix(
        region_ids=w.region_ids,
        entries=a,
        metric=w.metric,
        exponent=w.exponent,
        normalization="row",
    )


def mask_by_cluster(
    w: WeightMatrix,
    cluster: ClusterIndicator,
    convention: str = "column",
) -> WeightMatrix:
    """Hadamard-mask W by a cluster membership broadcast.

    The default "column" convention keeps W_ij when the source region j
    belongs to the cluster, so spillovers emanate from members.
    """
    if cluster.region_ids != w.region_ids:
        raise DimensionMismatchError(
            f"cluster {cluster.sector_id!r} is not aligned with the weight "
            "matrix regions"
        )
    masked = w.entries * cluster.expand(convention)
    return WeightMatrix(
        region_ids=w.region_ids,
        entries=masked,
        metric=w.metric,
        exponent=w.exponent,
        normalization="none",
    )


def _read_csv(path: str, columns: tuple[str, ...]) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except Exception as exc:  # pragma: no cover - pandas message passthrough
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataFormatError(
            f"{path}: missing required columns {missing}, found "
            f"{list(df.columns)}"
        )
    return df


def load_coordinates(path: str) -> list[Coordinate]:
    """Read a region_id,x,y coordinates CSV."""
    df = _read_csv(path, COORDS_COLUMNS)
    coords = []
    for row in df.itertuples(index=False):
        x, y = float(row.x), float(row.y)
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataFormatError(
                f"{path}: non-finite coordinate for region {row.region_id!r}"
            )
        coords.append(Coordinate(region_id=str(row.region_id), x=x, y=y))
    _check_coords(coords)
    return coords


def load_clusters(
    path: str, region_ids: Sequence[str]
) -> tuple[ClusterIndicator, ...]:
    """Read a region_id,sector_id,member CSV into cluster indicators.

    Rows absent for a (region, sector) pair default to member = 0, so a
    file may list members only. Sector order follows first appearance.
    """
    df = _read_csv(path, CLUSTERS_COLUMNS)
    ids = tuple(str(r) for r in region_ids)
    index = {r: k for k, r in enumerate(ids)}
    vectors: dict[str, np.ndarray] = {}
    seen: set[tuple[str, str]] = set()
    for row in df.itertuples(index=False):
        region = str(row.region_id)
        sector = str(row.sector_id)
        if region not in index:
            raise DataFormatError(
                f"{path}: region {region!r} is not in the coordinate set"
            )
        member = float(row.member)
        if member not in (0.0, 1.0):
            raise DataFormatError(
                f"{path}: member must be 0 or 1, got {row.member!r} for "
                f"({region}, {sector})"
            )
        key = (region, sector)
        if key in seen:
            raise DataFormatError(f"{path}: duplicate row for {key}")
        seen.add(key)
        if sector not in vectors:
            vectors[sector] = np.zeros(len(ids))
        vectors[sector][index[region]] = member
    if not vectors:
        raise DataFormatError(f"{path}: no cluster rows found")
    return tuple(
        ClusterIndicator(sector_id=s, region_ids=ids, membership=v)
        for s, v in vectors.items()
    )


def load_distances(path: str) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a region_i,region_j,distance CSV into a symmetric matrix.

    Unlisted pairs get +inf (no connection). Conflicting duplicate
    entries for the same unordered pair are rejected.
    """
    df = _read_csv(path, DISTANCES_COLUMNS)
    ids: list[str] = []
    index: dict[str, int] = {}
    for col in ("region_i", "region_j"):
        for r in df[col].astype(str):
            if r not in index:
                index[r] = len(ids)
                ids.append(r)
    n = len(ids)
    d = np.full((n, n), math.inf)
    np.fill_diagonal(d, 0.0)
    seen: set[tuple[int, int]] = set()
    for row in df.itertuples(index=False):
        i, j = index[str(row.region_i)], index[str(row.region_j)]
        if i == j:
            raise DataFormatError(
                f"{path}: self-distance listed for region {row.region_i!r}"
            )
        dist = float(row.distance)
        # +inf is a valid entry and marks an unconnected pair
        if math.isnan(dist) or dist <= 0.0:
            raise DataFormatError(
                f"{path}: distance for ({row.region_i}, {row.region_j}) "
                f"must be positive, got {row.distance!r}"
            )
        pair = (min(i, j), max(i, j))
        if pair in seen and d[i, j] != dist:
            raise DataFormatError(
                f"{path}: conflicting distances for pair "
                f"({row.region_i}, {row.region_j})"
            )
        seen.add(pair)
        d[i, j] = dist
        d[j, i] = dist
    return tuple(ids), d


def save_weights_csv(w: WeightMatrix, path: str) -> None:
    """Write the dense matrix as CSV with region ids on both axes."""
    df = pd.DataFrame(w.entries, columns=list(w.region_ids))
    df.insert(0, "region_id", list(w.region_ids))
    df.to_csv(path, index=False)
