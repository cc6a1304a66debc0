"""Buoy observations, gridded wave-height fields and the study-region grid.

Grid convention: row 0 is the northernmost band and column 0 the westernmost.
Cell ``(k, j)`` is centred on latitude ``lat_north - k * cell_deg`` and
longitude ``lon_west + j * cell_deg``; longitudes west of Greenwich are
negative.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

SENTINELS = (99.0, 999.0, 9999.0)
SWH_FEATURE = "WVHT"
TIME_COLUMNS = ("YY", "MM", "DD", "hh", "mm")

# Standard NDBC meteorological columns: name -> (unit, description)
KNOWN_FEATURES = {
    "WDIR": ("degT", "wind direction"),
    "WSPD": ("m/s", "wind speed"),
    "GST": ("m/s", "wind gust"),
    "WVHT": ("m", "significant wave height"),
    "DPD": ("sec", "dominant wave period"),
    "APD": ("sec", "average wave period"),
    "MWD": ("degT", "mean wave direction"),
    "PRES": ("hPa", "sea level pressure"),
    "ATMP": ("degC", "air temperature"),
    "WTMP": ("degC", "sea surface temperature"),
    "DEWP": ("degC", "dew point"),
    "VIS": ("mi", "visibility"),
    "PTDY": ("hPa", "pressure tendency"),
    "TIDE": ("ft", "water level"),
}

ROLES = ("surrogate", "estimate", "truth")


class RegionError(ValueError):
    """A coordinate falls outside the grid region."""


class SchemaError(ValueError):
    """A buoy table carries columns this package does not know."""


class OrderingError(ValueError):
    """Buoy timestamps are not strictly increasing."""


class FormatError(ValueError):
    """A grid-field file does not match the expected layout or grid."""


class CapacityError(ValueError):
    """More buoys requested than there are grid cells (or none at all)."""


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    lat_north: float
    lat_south: float
    lon_west: float
    lon_east: float
    cell_deg: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid needs at least one row and column, got {self.rows}x{self.cols}")
        if not self.cell_deg > 0:
            raise ValueError(f"cell_deg must be positive, got {self.cell_deg}")
        k = (self.lat_north - self.lat_south) / self.cell_deg + 1
        j = (self.lon_east - self.lon_west) / self.cell_deg + 1
        if abs(k - self.rows) > 1e-6 or abs(j - self.cols) > 1e-6:
            raise ValueError(
                f"bounds imply a {k:g}x{j:g} grid at {self.cell_deg} deg, "
                f"but rows={self.rows}, cols={self.cols}")

    @classmethod
    def from_bounds(cls, lat_north, lat_south, lon_west, lon_east, cell_deg) -> GridSpec:
        if not cell_deg > 0:
            raise ValueError(f"cell_deg must be positive, got {cell_deg}")
        rows = int(round((lat_north - lat_south) / cell_deg)) + 1
        cols = int(round((lon_east - lon_west) / cell_deg)) + 1
        return cls(rows, cols, lat_north, lat_south, lon_west, lon_east, cell_deg)

    @classmethod
    def gulf_of_mexico(cls) -> GridSpec:
        """32N-18N, 98W-78W at half-degree cells."""
        return cls.from_bounds(32.0, 18.0, -98.0, -78.0, 0.5)

    @classmethod
    def anchored(cls, rows: int, cols: int, lat_north=32.0, lon_west=-98.0, cell_deg=0.5) -> GridSpec:
        """A ``rows x cols`` grid whose north-west cell centre is the given corner."""
        return cls(rows, cols, lat_north, lat_north - (rows - 1) * cell_deg,
                   lon_west, lon_west + (cols - 1) * cell_deg, cell_deg)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def center(self, row: int, col: int) -> tuple[float, float]:
        return self.lat_north - row * self.cell_deg, self.lon_west + col * self.cell_deg


def cell_of(lat: float, lon: float, spec: GridSpec) -> tuple[int, int]:
    """Grid cell whose centre is nearest to ``(lat, lon)``.

    Ties on a cell boundary go to the lower row/column index.
    """
    eps = 1e-9
    if lat > spec.lat_north + eps:
        raise RegionError(f"latitude {lat} is north of lat_north={spec.lat_north}")
    if lat < spec.lat_south - eps:
        raise RegionError(f"latitude {lat} is south of lat_south={spec.lat_south}")
    if lon < spec.lon_west - eps:
        raise RegionError(f"longitude {lon} is west of lon_west={spec.lon_west}")
    if lon > spec.lon_east + eps:
        raise RegionError(f"longitude {lon} is east of lon_east={spec.lon_east}")
    r = (spec.lat_north - lat) / spec.cell_deg
    c = (lon - spec.lon_west) / spec.cell_deg
    row = min(max(math.ceil(r - 0.5 - eps), 0), spec.rows - 1)
    col = min(max(math.ceil(c - 0.5 - eps), 0), spec.cols - 1)
    return row, col


# ---------------------------------------------------------------------------
# buoy data


@dataclass
class BuoySeries:
    """One buoy's observations on a regular time lattice."""

    feature_names: list[str]
    times: np.ndarray  # datetime64[m], shape (T,)
    values: np.ndarray  # (F, T)
    missing_mask: np.ndarray  # (F, T) bool

    @property
    def steps(self) -> int:
        return self.values.shape[1]


@dataclass
class BuoyDataset:
    """Observations ``values[f, m, t]`` from M buoys at fixed grid cells."""

    values: np.ndarray
    feature_names: list[str]
    locations: np.ndarray  # (M, 2) int rows/cols
    grid: GridSpec
    interval_hours: float = 3.0
    missing_mask: np.ndarray | None = None
    start: np.datetime64 | None = None
    swh_feature: str = SWH_FEATURE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError(f"values must be F x M x T, got shape {self.values.shape}")
        F, M, T = self.values.shape
        self.locations = np.asarray(self.locations, dtype=np.int64).reshape(M, 2)
        if self.missing_mask is None:
            self.missing_mask = np.zeros(self.values.shape, dtype=bool)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        if self.missing_mask.shape != self.values.shape:
            raise ValueError("missing_mask must match values")
        if len(self.feature_names) != F:
            raise ValueError(f"{len(self.feature_names)} feature names for {F} features")
        if not self.interval_hours > 0:
            raise ValueError("interval_hours must be positive")
        for i, (u, v) in enumerate(self.locations):
            if not (0 <= u < self.grid.rows and 0 <= v < self.grid.cols):
                raise RegionError(f"buoy {i} at cell ({u}, {v}) is outside a {self.grid.rows}x{self.grid.cols} grid")
        if self.feature_names.count(self.swh_feature) != 1:
            raise SchemaError(f"exactly one {self.swh_feature} feature is required, features are {self.feature_names}")
        swh = self.values[self.swh_index]
        if np.any(swh[~self.missing_mask[self.swh_index]] < 0):
            raise ValueError("observed wave heights must be nonnegative")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def swh_index(self) -> int:
        return self.feature_names.index(self.swh_feature)

    @property
    def swh(self) -> np.ndarray:
        """Observed wave height, M x T."""
        return self.values[self.swh_index]

    @property
    def swh_mask(self) -> np.ndarray:
        return self.missing_mask[self.swh_index]

    def times(self) -> np.ndarray | None:
        if self.start is None:
            return None
        step = np.timedelta64(int(round(self.interval_hours * 60)), "m")
        return self.start + step * np.arange(self.values.shape[2])

    def slice_time(self, sl: slice) -> BuoyDataset:
        start = None
        if self.start is not None:
            start = self.times()[sl][0] if len(self.times()[sl]) else self.start
        return BuoyDataset(self.values[:, :, sl], list(self.feature_names), self.locations, self.grid,
                           self.interval_hours, self.missing_mask[:, :, sl], start, self.swh_feature)

    @classmethod
    def from_series(cls, series: Sequence[BuoySeries], locations, grid: GridSpec,
                    interval_hours: float = 3.0) -> BuoyDataset:
        if not series:
            raise CapacityError("at least one buoy is required")
        names = series[0].feature_names
        for i, s in enumerate(series):
            if s.feature_names != names:
                raise SchemaError(f"buoy {i} has columns {s.feature_names}, expected {names}")
            if s.steps != series[0].steps or not np.array_equal(s.times, series[0].times):
                raise ValueError(f"buoy {i} is not on the same time lattice as buoy 0")
        values = np.stack([s.values for s in series], axis=1)
        mask = np.stack([s.missing_mask for s in series], axis=1)
        start = series[0].times[0] if series[0].steps else None
        return cls(values, list(names), locations, grid, interval_hours, mask, start)


_SPLIT = re.compile(r"\s+")


def _read_table(text: str):
    """Header names plus raw (timestamps, rows) from a buoy table."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    headers = [ln for ln in lines if ln.lstrip().startswith("#")]
    rows = [ln for ln in lines if not ln.lstrip().startswith("#")]
    if len(headers) < 2:
        raise SchemaError("buoy table needs a two-line '#' header (names, units)")
    names = _SPLIT.split(headers[0].strip().lstrip("#").strip())
    if names and names[0] == "YYYY":
        names[0] = "YY"
    if tuple(names[:5]) != TIME_COLUMNS:
        raise SchemaError(f"buoy table must start with columns {' '.join(TIME_COLUMNS)}, got {names[:5]}")
    features = names[5:]
    unknown = [n for n in features if n not in KNOWN_FEATURES]
    if unknown:
        raise SchemaError(f"unknown column(s): {', '.join(unknown)}")
    times, data = [], []
    for ln in rows:
        parts = _SPLIT.split(ln.strip())
        if len(parts) != len(names):
            raise SchemaError(f"row has {len(parts)} fields, header has {len(names)}: {ln!r}")
        yy, mo, dd, hh, mi = (int(p) for p in parts[:5])
        if yy < 100:
            yy += 2000 if yy < 50 else 1900
        times.append(np.datetime64(datetime(yy, mo, dd, hh, mi), "m"))
        data.append([np.nan if p == "MM" else float(p) for p in parts[5:]])
    times = np.asarray(times, dtype="datetime64[m]")
    if len(times) > 1 and np.any(np.diff(times) <= np.timedelta64(0, "m")):
        bad = int(np.argmax(np.diff(times) <= np.timedelta64(0, "m"))) + 1
        raise OrderingError(f"timestamps not strictly increasing at data row {bad}")
    values = np.asarray(data, dtype=np.float64).reshape(len(times), len(features))
    return features, times, values


def _carry_forward(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked entries from the last observation; leading gaps take the first."""
    out = values.copy()
    for f in range(out.shape[0]):
        ok = ~mask[f]
        if not ok.any():
            out[f] = 0.0
            continue
        idx = np.where(ok, np.arange(out.shape[1]), -1)
        np.maximum.accumulate(idx, out=idx)
        first = int(np.argmax(ok))
        idx[idx < 0] = first
        out[f] = out[f, idx]
    return out


def parse_buoy_text(text: str, interval_hours: float = 3.0,
                    start: np.datetime64 | None = None, steps: int | None = None) -> BuoySeries:
    """Parse an NDBC-style whitespace table onto a regular time lattice.

    The lattice starts at ``start`` (default: the first timestamp) and has
    ``steps`` points (default: as many as fit up to the last timestamp).
    Each lattice point takes the nearest row within half an interval, the
    earlier one on ties.  Sentinels (99, 999, 9999, ``MM``) and unmatched
    lattice points are marked missing and filled by carrying the last
    observation forward.
    """
    features, times, raw = _read_table(text)
    step = np.timedelta64(int(round(interval_hours * 60)), "m")
    if start is None:
        start = times[0] if len(times) else np.datetime64("1970-01-01T00:00", "m")
    start = np.datetime64(start, "m")
    if steps is None:
        steps = int((times[-1] - start) // step) + 1 if len(times) else 0
    lattice = start + step * np.arange(steps)

    F = len(features)
    values = np.zeros((F, steps), dtype=np.float64)
    mask = np.ones((F, steps), dtype=bool)
    if len(times) and steps:
        pos = np.searchsorted(times, lattice)
        lo = np.clip(pos - 1, 0, len(times) - 1)
        hi = np.clip(pos, 0, len(times) - 1)
        d_lo = np.abs(lattice - times[lo])
        d_hi = np.abs(times[hi] - lattice)
        pick = np.where(d_hi < d_lo, hi, lo)
        near = np.minimum(d_lo, d_hi) <= step / 2
        rows = raw[pick].T  # (F, steps)
        bad = ~np.isfinite(rows) | np.isin(rows, SENTINELS)
        mask = bad | ~near[None, :]
        values = np.where(mask, 0.0, rows)
    values = _carry_forward(values, mask)
    return BuoySeries(list(features), lattice, values.astype(np.float32), mask)


def format_buoy_text(series: BuoySeries) -> str:
    """Inverse of :func:`parse_buoy_text` for lattice-aligned series."""
    names = "#YY  MM DD hh mm " + " ".join(f"{n:>6}" for n in series.feature_names)
    units = "#yr  mo dy hr mn " + " ".join(f"{KNOWN_FEATURES[n][0]:>6}" for n in series.feature_names)
    out = [names, units]
    for t in range(series.steps):
        ts = series.times[t].astype(datetime)
        cells = []
        for f in range(len(series.feature_names)):
            if series.missing_mask[f, t]:
                cells.append(f"{99.0 if series.feature_names[f] == SWH_FEATURE else 999.0:>6.1f}")
            else:
                v = round(float(series.values[f, t]), 2)
                if v in SENTINELS:  # keep real readings from reading back as gaps
                    v += 0.01
                cells.append(f"{v:>6.2f}")
        out.append(f"{ts.year:4d} {ts.month:02d} {ts.day:02d} {ts.hour:02d} {ts.minute:02d} " + " ".join(cells))
    return "\n".join(out) + "\n"


def load_buoys(paths: Sequence[str | Path], latlon: Sequence[tuple[float, float]], grid: GridSpec,
               interval_hours: float = 3.0, start=None, steps: int | None = None) -> BuoyDataset:
    """Read several buoy files onto one shared lattice and place them on the grid."""
    if len(paths) != len(latlon):
        raise ValueError(f"{len(paths)} buoy files but {len(latlon)} coordinates")
    texts = [Path(p).read_text(encoding="utf-8") for p in paths]
    if start is None or steps is None:
        spans = [_read_table(t)[1] for t in texts]
        spans = [s for s in spans if len(s)]
        if not spans:
            raise ValueError("no buoy rows to place on a lattice")
        first = min(s[0] for s in spans)
        last = max(s[-1] for s in spans)
        step = np.timedelta64(int(round(interval_hours * 60)), "m")
        start = first if start is None else np.datetime64(start, "m")
        steps = int((last - start) // step) + 1 if steps is None else steps
    series = [parse_buoy_text(t, interval_hours, start, steps) for t in texts]
    locations = [cell_of(lat, lon, grid) for lat, lon in latlon]
    return BuoyDataset.from_series(series, locations, grid, interval_hours)


# ---------------------------------------------------------------------------
# gridded fields


@dataclass
class GridField:
    """SWH on the grid through time, ``values[k, j, t]`` in metres."""

    values: np.ndarray
    role: str

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise FormatError(f"grid field must be K x J x T, got {self.values.shape}")
        if self.role not in ROLES:
            raise FormatError(f"role must be one of {ROLES}, got {self.role!r}")

    @property
    def shape(self):
        return self.values.shape

    def check(self, spec: GridSpec, steps: int | None = None) -> GridField:
        K, J, T = self.values.shape
        if (K, J) != spec.shape or (steps is not None and T != steps):
            want = f"{spec.rows}x{spec.cols}" + (f"x{steps}" if steps is not None else "")
            raise FormatError(f"grid field is {K}x{J}x{T}, expected {want}")
        return self


def write_grid_field(path: str | Path, fld: GridField) -> None:
    K, J, T = fld.values.shape
    with open(path, "wb") as fh:
        fh.write(f"GRIDFIELD v1 {K} {J} {T} {fld.role}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(fld.values, dtype="<f4").tobytes())


def read_grid_field(path: str | Path) -> GridField:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing header line")
    parts = raw[:nl].decode("ascii", errors="replace").split()
    if len(parts) != 6 or parts[:2] != ["GRIDFIELD", "v1"]:
        raise FormatError(f"{path}: bad header {raw[:nl]!r}")
    K, J, T = (int(p) for p in parts[2:5])
    body = raw[nl + 1:]
    if len(body) != 4 * K * J * T:
        raise FormatError(f"{path}: header declares {K}x{J}x{T} floats, body holds {len(body) // 4}")
    values = np.frombuffer(body, dtype="<f4").reshape(K, J, T).astype(np.float32)
    return GridField(values, parts[5])


def load_grid_field(path: str | Path, spec: GridSpec, role: str | None = None,
                    steps: int | None = None) -> GridField:
    fld = read_grid_field(path)
    if role is not None and fld.role != role:
        raise FormatError(f"{path}: role is {fld.role!r}, expected {role!r}")
    return fld.check(spec, steps)


# ---------------------------------------------------------------------------
# synthetic data


def box_smooth(values: np.ndarray) -> np.ndarray:
    """3x3 spatial mean with edge replication, applied independently per time step."""
    v = np.asarray(values, dtype=np.float64)
    p = np.pad(v, ((1, 1), (1, 1), (0, 0)), mode="edge")
    K, J = v.shape[:2]
    acc = sum(p[a:a + K, b:b + J] for a in range(3) for b in range(3))
    return acc / 9.0


@dataclass
class SyntheticData:
    dataset: BuoyDataset
    truth: GridField
    surrogate: GridField
    extras: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.dataset, self.truth, self.surrogate))


def synth_generate(seed: int, K: int, J: int, T: int, M: int, F: int,
                   noise: float = 0.05, interval_hours: float = 3.0,
                   start: str = "2020-01-01T00:00") -> SyntheticData:
    """Seeded stand-in for buoy feeds plus a numerical-model field.

    Truth is a sum of 2-4 travelling sinusoids shifted to stay nonnegative.
    Buoys sample it at distinct cells with Gaussian noise; the surrogate is
    the 3x3 box-smoothed truth.
    """
    if M < 1 or M > K * J:
        raise CapacityError(f"need 1 <= M <= K*J = {K * J}, got M={M}")
    if F < 2:
        raise ValueError("need F >= 2: wave height plus at least one wind feature")
    rng = np.random.default_rng(seed)
    n_waves = int(rng.integers(2, 5))
    kk, jj, tt = np.meshgrid(np.arange(K), np.arange(J), np.arange(T), indexing="ij")
    truth = np.zeros((K, J, T))
    headings = rng.uniform(0, 2 * np.pi, n_waves)
    amps = rng.uniform(0.2, 0.8, n_waves)
    for a, th in zip(amps, headings):
        wavelength = rng.uniform(4.0, 12.0)  # cells
        period = rng.uniform(6.0, 16.0)  # steps
        phase = rng.uniform(0, 2 * np.pi)
        kx, ky = 2 * np.pi / wavelength * np.cos(th), 2 * np.pi / wavelength * np.sin(th)
        truth += a * np.sin(kx * jj + ky * kk - 2 * np.pi / period * tt + phase)
    truth += 0.5 - truth.min()

    cells = rng.choice(K * J, size=M, replace=False)
    locations = np.stack([cells // J, cells % J], axis=1)
    swh = truth[locations[:, 0], locations[:, 1], :] + rng.normal(0, noise, (M, T))
    swh = np.maximum(swh, 0.0)

    names = [SWH_FEATURE, "WSPD", "WDIR", "ATMP", "WTMP", "PRES", "DPD", "APD", "MWD"]
    if F > len(names):
        raise ValueError(f"at most {len(names)} synthetic features are available")
    names = names[:F]
    values = np.zeros((F, M, T))
    values[0] = swh
    lead = int(np.argmax(amps))
    for f, name in enumerate(names[1:], start=1):
        if name == "WSPD":
            values[f] = np.maximum(3.0 + 3.5 * swh + rng.normal(0, 0.5, (M, T)), 0.0)
        elif name == "WDIR":
            values[f] = (np.degrees(headings[lead]) + rng.normal(0, 15.0, (M, T))) % 360.0
        elif name in ("DPD", "APD"):
            values[f] = 4.0 + 2.0 * swh + rng.normal(0, 0.3, (M, T))
        elif name == "MWD":
            values[f] = (np.degrees(headings[lead]) + rng.normal(0, 10.0, (M, T))) % 360.0
        else:
            base = {"ATMP": 24.0, "WTMP": 26.0, "PRES": 1013.0}[name]
            drift = np.cumsum(rng.normal(0, 0.2, (M, T)), axis=1)
            values[f] = base + drift

    grid = GridSpec.anchored(K, J)
    dataset = BuoyDataset(values.astype(np.float32), names, locations, grid, interval_hours,
                          start=np.datetime64(start, "m"))
    return SyntheticData(dataset,
                         GridField(truth.astype(np.float32), "truth"),
                         GridField(box_smooth(truth).astype(np.float32), "surrogate"),
                         {"n_waves": n_waves})


def dataset_series(dataset: BuoyDataset, m: int) -> BuoySeries:
    """Extract buoy ``m`` as a :class:`BuoySeries` (for writing)."""
    times = dataset.times()
    if times is None:
        raise ValueError("dataset has no start time")
    return BuoySeries(list(dataset.feature_names), times, dataset.values[:, m, :],
                      dataset.missing_mask[:, m, :])
