"""GPS track ingestion, local planar projection and 2-D reconstruction."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import FittedVSpline, ObservationSet, TimeGrid, VSplineError, sample_spline
from .penalty import interval_lambdas
from .selection import SearchSpec, Selection, select_parameters
from .solver import fit
from .tabular import read_csv, write_csv

EARTH_RADIUS = 6_371_000.0
MAX_PLANAR_SPAN = 100_000.0
TRACK_FIELDS = ("timestamp", "lon", "lat", "speed", "bearing", "boom")
DEDUPE_POLICIES = ("reject", "merge")


class TrackFormatError(VSplineError):
    """Malformed or inconsistent GPS input."""


class ProjectionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GpsRecord:
    """One GPS fix. ``bearing`` is in degrees clockwise from north; ``boom`` is
    1 (down), 0 (up) or ``None`` when the file has no boom column."""

    timestamp: float
    lon: float
    lat: float
    speed: float
    bearing: float
    boom: int | None = None
    line: int | None = None

    @property
    def velocity(self) -> tuple:
        """``(east, north)`` velocity components in m/s."""
        rad = math.radians(self.bearing)
        return self.speed * math.sin(rad), self.speed * math.cos(rad)


def parse_columns(text: str | None) -> dict:
    """``"timestamp=time,lon=longitude"`` -> mapping from field to file column."""
    if not text:
        return {}
    mapping = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise TrackFormatError(f"bad column mapping {part!r}; expected field=column")
        if key not in TRACK_FIELDS:
            raise TrackFormatError(
                f"unknown track field {key!r}; expected one of {', '.join(TRACK_FIELDS)}")
        mapping[key] = value
    return mapping


def _field(cells, index, name, line):
    try:
        raw = cells[index[name]]
    except IndexError:
        raise TrackFormatError(f"line {line}: missing value for field '{name}'") from None
    try:
        value = float(raw)
    except ValueError:
        raise TrackFormatError(f"line {line}: field '{name}' is not a number: {raw!r}") from None
    if not math.isfinite(value):
        raise TrackFormatError(f"line {line}: field '{name}' must be finite, got {raw!r}")
    return value


def _record(cells, index, line) -> GpsRecord:
    ts, lon, lat, speed, bearing = (_field(cells, index, k, line) for k in TRACK_FIELDS[:5])
    if not -180.0 <= lon <= 180.0:
        raise TrackFormatError(f"line {line}: field 'lon' out of range [-180, 180]: {lon}")
    if not -90.0 <= lat <= 90.0:
        raise TrackFormatError(f"line {line}: field 'lat' out of range [-90, 90]: {lat}")
    if speed < 0:
        raise TrackFormatError(f"line {line}: field 'speed' must be non-negative: {speed}")
    if not 0.0 <= bearing < 360.0:
        raise TrackFormatError(f"line {line}: field 'bearing' out of range [0, 360): {bearing}")
    boom = None
    if "boom" in index:
        value = _field(cells, index, "boom", line)
        if value not in (0.0, 1.0):
            raise TrackFormatError(f"line {line}: field 'boom' must be 0 or 1, got {value:g}")
        boom = int(value)
    return GpsRecord(ts, lon, lat, speed, bearing, boom, line)


def merge_records(group) -> GpsRecord:
    """Average position and velocity of same-time fixes; boom is down if any is."""
    vel = np.mean([r.velocity for r in group], axis=0)
    speed = float(np.hypot(*vel))
    bearing = math.degrees(math.atan2(vel[0], vel[1])) % 360.0 if speed > 0 else group[0].bearing
    if bearing >= 360.0:
        bearing = 0.0
    booms = [r.boom for r in group]
    boom = None if booms[0] is None else int(any(booms))
    return GpsRecord(group[0].timestamp, float(np.mean([r.lon for r in group])),
                     float(np.mean([r.lat for r in group])), speed, bearing, boom, group[0].line)


def parse_track(path, columns: dict | str | None = None, dedupe: str = "reject") -> list:
    """Read a GPS CSV with columns ``timestamp,lon,lat,speed,bearing[,boom]``.

    ``columns`` renames fields to file headers. Timestamps must increase;
    repeated timestamps are an error under ``dedupe="reject"`` and are
    averaged into one record under ``dedupe="merge"``.
    """
    if dedupe not in DEDUPE_POLICIES:
        raise TrackFormatError(f"unknown dedupe policy {dedupe!r}")
    mapping = parse_columns(columns) if isinstance(columns, str) or columns is None else columns
    try:
        header, rows = read_csv(path)
    except OSError as exc:
        raise TrackFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise TrackFormatError(f"{path} is not a text CSV file") from exc
    index = {}
    for name in TRACK_FIELDS:
        col = mapping.get(name, name)
        if col in header:
            index[name] = header.index(col)
        elif name != "boom" or name in mapping:
            raise TrackFormatError(f"missing column '{col}' for field '{name}'")
    if not rows:
        raise TrackFormatError("no records")

    records = []
    for line, cells in rows:
        rec = _record(cells, index, line)
        if records and rec.timestamp < records[-1].timestamp:
            raise TrackFormatError(
                f"line {line}: timestamp {rec.timestamp!r} is earlier than the previous record")
        records.append(rec)

    out, i = [], 0
    while i < len(records):
        j = i + 1
        while j < len(records) and records[j].timestamp == records[i].timestamp:
            j += 1
        if j - i > 1:
            if dedupe == "reject":
                raise TrackFormatError(
                    f"line {records[i + 1].line}: duplicate timestamp {records[i].timestamp!r}"
                    " (use dedupe merge to average duplicates)")
            out.append(merge_records(records[i:j]))
        else:
            out.append(records[i])
        i = j
    return out


def write_track_csv(path, records) -> None:
    with_boom = any(r.boom is not None for r in records)
    header = list(TRACK_FIELDS if with_boom else TRACK_FIELDS[:5])
    rows = [[r.timestamp, r.lon, r.lat, r.speed, r.bearing] + ([r.boom] if with_boom else [])
            for r in records]
    write_csv(path, header, rows)


@dataclass(frozen=True, eq=False)
class PlanarTrack:
    """Track in a local east/north plane (meters) around ``reference``.

    ``boom`` holds one flag per interval, taken from its left fix, or is
    ``None`` when the input had no boom data.
    """

    observations: ObservationSet
    boom: np.ndarray | None
    reference: tuple

    @property
    def grid(self) -> TimeGrid:
        return self.observations.grid

    @property
    def n(self) -> int:
        return self.observations.n


def project(records, reference: tuple | None = None) -> PlanarTrack:
    """Equirectangular projection onto the tangent plane at ``reference``.

    ``reference`` is ``(lon0, lat0)`` and defaults to the first fix. A track
    spanning more than 100 km triggers a :class:`ProjectionWarning`.
    """
    if len(records) < 2:
        raise TrackFormatError("need at least 2 records")
    lon = np.array([r.lon for r in records])
    lat = np.array([r.lat for r in records])
    lon0, lat0 = (records[0].lon, records[0].lat) if reference is None else map(float, reference)
    x, y = lonlat_to_xy(lon, lat, (lon0, lat0))
    span = math.hypot(np.ptp(x), np.ptp(y))
    if span > MAX_PLANAR_SPAN:
        warnings.warn(f"track spans {span / 1000:.1f} km; planar projection is distorted",
                      ProjectionWarning, stacklevel=2)
    vel = np.array([r.velocity for r in records])
    times = np.array([r.timestamp for r in records])
    obs = ObservationSet(TimeGrid(times), np.column_stack([x, y]), vel)
    booms = [r.boom for r in records]
    boom = None if any(b is None for b in booms) else np.array(booms[:-1], dtype=np.int64)
    return PlanarTrack(obs, boom, (lon0, lat0))


def lonlat_to_xy(lon, lat, reference):
    lon0, lat0 = reference
    k = EARTH_RADIUS * math.pi / 180.0
    x = k * (np.asarray(lon, dtype=np.float64) - lon0) * math.cos(math.radians(lat0))
    y = k * (np.asarray(lat, dtype=np.float64) - lat0)
    return x, y


def unproject(x, y, reference):
    """Inverse of the planar projection: ``(lon, lat)`` in degrees."""
    lon0, lat0 = reference
    k = EARTH_RADIUS * math.pi / 180.0
    lon = lon0 + np.asarray(x, dtype=np.float64) / (k * math.cos(math.radians(lat0)))
    lat = lat0 + np.asarray(y, dtype=np.float64) / k
    return lon, lat


@dataclass(frozen=True, eq=False)
class Reconstruction:
    spline: FittedVSpline
    lambdas: np.ndarray
    selection: Selection
    reference: tuple


def reconstruct_track(track: PlanarTrack, spec: SearchSpec, jobs: int = 1) -> Reconstruction:
    """Select parameters by the 2-D CV score and fit both coordinates."""
    obs = track.observations
    if spec.family.startswith("boom_") and track.boom is None:
        raise TrackFormatError(f"family {spec.family!r} needs a boom column")
    boom = track.boom if spec.family.startswith("boom_") else None
    sel = select_parameters(obs, spec, boom=boom, jobs=jobs)
    lambdas = interval_lambdas(sel.penalty, obs, boom)
    return Reconstruction(fit(obs, sel.gamma, lambdas), lambdas, sel, track.reference)


def fitted_track_table(spline: FittedVSpline, resolution: int):
    samples = sample_spline(spline, resolution)
    table = np.column_stack([samples.t, samples.f[:, 0], samples.f[:, 1],
                             samples.df[:, 0], samples.df[:, 1]])
    return ["t", "x", "y", "vx", "vy"], table


def write_fitted_track_csv(path, spline: FittedVSpline, resolution: int) -> None:
    header, table = fitted_track_table(spline, resolution)
    write_csv(path, header, table)


def track_geojson(spline: FittedVSpline, reference, resolution: int) -> dict:
    """GeoJSON Feature holding the reconstructed path as a lon/lat LineString."""
    samples = sample_spline(spline, resolution)
    lon, lat = unproject(samples.f[:, 0], samples.f[:, 1], reference)
    coords = [[float(a), float(b)] for a, b in zip(lon, lat)]
    return {
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords},
        "properties": {"t_start": float(samples.t[0]), "t_end": float(samples.t[-1]),
                       "reference": [float(reference[0]), float(reference[1])]},
    }


def write_geojson(path, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc) + "\n")


# ---- synthetic tracks -------------------------------------------------------

def _records_from_plane(t, xy, vel, reference, boom=None):
    lon, lat = unproject(xy[:, 0], xy[:, 1], reference)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    bearing = np.degrees(np.arctan2(vel[:, 0], vel[:, 1])) % 360.0
    bearing[bearing >= 360.0] = 0.0
    out = []
    for i in range(t.size):
        b = None if boom is None else int(boom[i])
        out.append(GpsRecord(float(t[i]), float(lon[i]), float(lat[i]), float(speed[i]),
                             float(bearing[i]), b))
    return out


def straight_track(n: int = 50, speed: float = 2.0, bearing: float = 45.0, dt: float = 1.0,
                   reference=(172.6, -43.5)):
    """Noise-free constant-velocity track. Returns ``(records, true_xy)``."""
    t = np.arange(n) * float(dt)
    rad = math.radians(bearing)
    vel = np.tile([speed * math.sin(rad), speed * math.cos(rad)], (n, 1))
    xy = t[:, None] * vel
    return _records_from_plane(t, xy, vel, reference, boom=np.ones(n)), xy


@dataclass(frozen=True, eq=False)
class SyntheticField:
    """Simulated field pass: GPS fixes, true planar path and a segment label
    (``row``, ``turn`` or ``pause``) for every interval."""

    records: list
    true_xy: np.ndarray
    labels: np.ndarray


def boustrophedon_track(rows: int = 4, row_length: float = 150.0, spacing: float = 12.0,
                        speed: float = 3.0, turn_speed: float = 1.2, pause: float = 8.0,
                        dt: float = 1.0, position_sd: float = 0.3, velocity_sd: float = 0.1,
                        seed: int = 0, reference=(172.6, -43.5)) -> SyntheticField:
    """Back-and-forth field pattern: straight rows joined by semicircular
    U-turns, with a stationary pause before each turn. The boom is down on
    rows and up elsewhere.
    """
    segments = []  # (kind, duration, position(s), velocity(s))
    x0 = 0.0
    for r in range(rows):
        heading = 1.0 if r % 2 == 0 else -1.0
        y_start = 0.0 if heading > 0 else row_length
        dur = row_length / speed
        segments.append(("row", dur, (x0, y_start, heading)))
        if r == rows - 1:
            break
        segments.append(("pause", pause, (x0, y_start + heading * row_length)))
        radius = spacing / 2
        segments.append(("turn", math.pi * radius / turn_speed,
                         (x0 + radius, y_start + heading * row_length, heading, radius)))
        x0 += spacing

    bounds = np.cumsum([0.0] + [s[1] for s in segments])
    t = np.arange(0.0, bounds[-1] + 1e-9, dt)
    xy = np.empty((t.size, 2))
    vel = np.empty((t.size, 2))
    kind = np.empty(t.size, dtype=object)
    for i, ti in enumerate(t):
        k = min(int(np.searchsorted(bounds, ti, side="right")) - 1, len(segments) - 1)
        name, _, geom = segments[k]
        s = ti - bounds[k]
        kind[i] = name
        if name == "row":
            x, ys, h = geom
            xy[i] = (x, ys + h * speed * s)
            vel[i] = (0.0, h * speed)
        elif name == "pause":
            xy[i] = geom
            vel[i] = (0.0, 0.0)
        else:
            cx, cy, h, radius = geom
            phi = turn_speed * s / radius  # angle swept so far
            xy[i] = (cx - radius * math.cos(phi), cy + h * radius * math.sin(phi))
            vel[i] = (turn_speed * math.sin(phi), h * turn_speed * math.cos(phi))

    mid = (t[:-1] + t[1:]) / 2
    seg_of_mid = np.minimum(np.searchsorted(bounds, mid, side="right") - 1, len(segments) - 1)
    labels = np.array([segments[k][0] for k in seg_of_mid])

    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    noisy_xy = xy + rng.normal(0.0, position_sd, xy.shape)
    noisy_vel = vel + rng.normal(0.0, velocity_sd, vel.shape)
    boom = (kind == "row").astype(int)
    records = _records_from_plane(t, noisy_xy, noisy_vel, reference, boom)
    return SyntheticField(records, xy, labels)
