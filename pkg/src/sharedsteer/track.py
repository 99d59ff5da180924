"""Double-lane-change track geometry and the smooth target path.

The track is a straight two-lane road where the target trajectory moves one
lane to the left and back, each transition following a quintic Bezier curve
with zero first and second lateral derivatives at both ends.  The path is
stored as a dense arc-length table so that queries are cheap and deterministic.
"""

import math
from dataclasses import dataclass, field

import numpy as np


class PathCorridorError(Exception):
    """Raised when a point is too far from the path to project sensibly."""


def _default_sections():
    return [50.0, 30.0, 25.0, 30.0, 50.0]


@dataclass
class TrackLayout:
    """Geometry of the double-lane-change course.

    section_lengths holds the five longitudinal spans in order: approach
    straight, first lane change, center straight, second lane change, exit
    straight.  Cones are placed in pairs flanking the target lane at the
    section boundaries plus the midpoint of the center straight; the metrics
    maneuver window runs from the first cone station to the last.
    """

    lane_width: float = 3.6
    section_lengths: list = field(default_factory=_default_sections)
    lane_count: int = 2

    def __post_init__(self):
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")
        if len(self.section_lengths) != 5 or any(l <= 0 for l in self.section_lengths):
            raise ValueError("need five positive section lengths")

    @property
    def section_stations(self):
        """Six strictly increasing stations delimiting the five sections."""
        edges = [0.0]
        for length in self.section_lengths:
            edges.append(edges[-1] + length)
        return edges

    @property
    def total_length(self) -> float:
        return self.section_stations[-1]

    def target_lane_y(self, station: float) -> float:
        """Lane centerline the maneuver is heading for at this station."""
        s = self.section_stations
        if station < s[1]:
            return 0.0
        if station < s[3]:
            return self.lane_width
        return 0.0

    def cone_stations(self):
        s = self.section_stations
        mid = 0.5 * (s[2] + s[3])
        return [s[1], s[2], mid, s[3], s[4]]

    @property
    def cone_positions(self):
        """Cone pairs (x, y) flanking the occupied lane at each gate station."""
        half = 0.5 * self.lane_width
        w = self.lane_width
        # gate lanes: entry of LC1 (origin lane), exit of LC1, mid straight,
        # entry of LC2 (offset lane), exit of LC2 (origin lane)
        lanes = [0.0, w, w, w, 0.0]
        cones = []
        for st, yc in zip(self.cone_stations(), lanes):
            cones.append((st, yc - half))
            cones.append((st, yc + half))
        return cones

    def maneuver_window(self):
        stations = self.cone_stations()
        return min(stations), max(stations)


@dataclass
class QuinticBezier:
    """Degree-5 Bezier curve defined by six planar control points."""

    control_points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.control_points, dtype=float)
        if pts.shape != (6, 2):
            raise ValueError("quintic Bezier needs exactly 6 planar control points")
        self.control_points = pts


def lane_change_bezier(x0: float, y0: float, length: float, lateral: float) -> QuinticBezier:
    """Standard lane-change curve: x control points equally spaced, lateral
    coordinates (y0, y0, y0, y0+w, y0+w, y0+w) so both ends are flat to
    second order."""
    if length <= 0:
        raise ValueError("lane-change section length must be positive")
    xs = x0 + np.linspace(0.0, length, 6)
    ys = np.array([y0, y0, y0, y0 + lateral, y0 + lateral, y0 + lateral])
    return QuinticBezier(np.column_stack([xs, ys]))


def eval_bezier(curve: QuinticBezier, u: float):
    """Evaluate position and tangent heading at parameter u in [0, 1].

    The tangent comes from the hodograph (degree-4 derivative curve); where its
    magnitude is negligible the chord direction P5 - P0 is used instead.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError("Bezier parameter outside [0, 1]")
    pts = curve.control_points
    # Bernstein basis, degree 5
    v = 1.0 - u
    b = np.array([
        v ** 5,
        5.0 * u * v ** 4,
        10.0 * u ** 2 * v ** 3,
        10.0 * u ** 3 * v ** 2,
        5.0 * u ** 4 * v,
        u ** 5,
    ])
    pos = b @ pts
    # hodograph control points, degree 4
    dpts = 5.0 * (pts[1:] - pts[:-1])
    db = np.array([
        v ** 4,
        4.0 * u * v ** 3,
        6.0 * u ** 2 * v ** 2,
        4.0 * u ** 3 * v,
        u ** 4,
    ])
    dvec = db @ dpts
    if float(np.hypot(dvec[0], dvec[1])) < 1e-12:
        dvec = pts[5] - pts[0]
    heading = float(np.arctan2(dvec[1], dvec[0]))
    return (float(pos[0]), float(pos[1])), heading


@dataclass
class TargetPath:
    """Dense arc-length-indexed sample table of the target trajectory."""

    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    resolution: float = 0.05

    def __post_init__(self):
        if not np.all(np.diff(self.s) > 0):
            raise ValueError("path stations must be strictly increasing")
        if np.any(np.abs(np.diff(self.heading)) > np.pi):
            raise ValueError("tangent heading jumps across adjacent samples")

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def sample(self, station: float):
        """Interpolated (x, y, heading) at a station; extrapolates straight
        along the end tangents beyond either end."""
        s = self.s
        if station <= s[0]:
            d = station - s[0]
            h = float(self.heading[0])
            return (float(self.x[0]) + d * np.cos(h),
                    float(self.y[0]) + d * np.sin(h), h)
        if station >= s[-1]:
            d = station - s[-1]
            h = float(self.heading[-1])
            return (float(self.x[-1]) + d * np.cos(h),
                    float(self.y[-1]) + d * np.sin(h), h)
        i = int(np.searchsorted(s, station) - 1)
        w = (station - s[i]) / (s[i + 1] - s[i])
        return (float(self.x[i] + w * (self.x[i + 1] - self.x[i])),
                float(self.y[i] + w * (self.y[i + 1] - self.y[i])),
                float(self.heading[i] + w * (self.heading[i + 1] - self.heading[i])))

    def to_csv(self) -> str:
        lines = ["s,x,y,heading"]
        for i in range(len(self.s)):
            lines.append(f"{repr(float(self.s[i]))},{repr(float(self.x[i]))},"
                         f"{repr(float(self.y[i]))},{repr(float(self.heading[i]))}")
        return "\n".join(lines) + "\n"


def build_dlc_path(layout: TrackLayout, resolution: float = 0.05) -> TargetPath:
    """Assemble the double-lane-change target path from straights and two
    lane-change Bezier sections, resampled at uniform arc-length steps."""
    edges = layout.section_stations
    w = layout.lane_width

    # fine polyline first, then uniform arc-length resampling
    xs, ys = [], []

    def add_straight(x0, x1, y, n):
        t = np.linspace(x0, x1, n, endpoint=False)
        xs.extend(t.tolist())
        ys.extend([y] * len(t))

    def add_bezier(curve, n):
        for u in np.linspace(0.0, 1.0, n, endpoint=False):
            (px, py), _ = eval_bezier(curve, float(u))
            xs.append(px)
            ys.append(py)

    fine = 40  # samples per meter on the fine polyline
    add_straight(edges[0], edges[1], 0.0, int((edges[1] - edges[0]) * fine))
    add_bezier(lane_change_bezier(edges[1], 0.0, edges[2] - edges[1], w),
               int((edges[2] - edges[1]) * fine))
    add_straight(edges[2], edges[3], w, int((edges[3] - edges[2]) * fine))
    add_bezier(lane_change_bezier(edges[3], w, edges[4] - edges[3], -w),
               int((edges[4] - edges[3]) * fine))
    add_straight(edges[4], edges[5], 0.0, int((edges[5] - edges[4]) * fine))
    xs.append(edges[5])
    ys.append(0.0)

    px = np.asarray(xs)
    py = np.asarray(ys)
    seg = np.hypot(np.diff(px), np.diff(py))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])

    stations = np.arange(0.0, total, resolution)
    if total - stations[-1] > 1e-9:
        stations = np.concatenate([stations, [total]])
    rx = np.interp(stations, cum, px)
    ry = np.interp(stations, cum, py)

    # tangent headings from central differences on the resampled polyline
    dx = np.gradient(rx, stations)
    dy = np.gradient(ry, stations)
    heading = np.arctan2(dy, dx)

    return TargetPath(s=stations, x=rx, y=ry, heading=heading, resolution=resolution)


def project_to_path(path: TargetPath, point, corridor: float = 20.0, hint: int = None):
    """Project a planar point onto the path.

    Returns (station, signed lateral offset, path heading at the station); the
    offset is positive when the point lies to the left of the path tangent.
    Raises PathCorridorError when the point is farther than the corridor from
    the nearest sample.
    """
    px, py = float(point[0]), float(point[1])
    if hint is None:
        d2 = (path.x - px) ** 2 + (path.y - py) ** 2
        i = int(np.argmin(d2))
    else:
        i = _local_nearest(path, px, py, hint)
    dist = float(np.hypot(path.x[i] - px, path.y[i] - py))
    if dist > corridor:
        raise PathCorridorError(
            f"point ({px:.2f}, {py:.2f}) is {dist:.1f} m from the path "
            f"(corridor {corridor:.1f} m)")
    return _refine(path, px, py, i)


def _local_nearest(path, px, py, start):
    n = len(path.s)
    i = min(max(start, 0), n - 1)
    best = (path.x[i] - px) ** 2 + (path.y[i] - py) ** 2
    while i + 1 < n:
        d = (path.x[i + 1] - px) ** 2 + (path.y[i + 1] - py) ** 2
        if d >= best:
            break
        best, i = d, i + 1
    while i - 1 >= 0:
        d = (path.x[i - 1] - px) ** 2 + (path.y[i - 1] - py) ** 2
        if d >= best:
            break
        best, i = d, i - 1
    return i

def _refine(path, px, py, i):
    """Project onto the segments adjacent to sample i and pick the closer."""
    n = len(path.s)
    best = None
    for j in (i - 1, i):
        if j < 0 or j + 1 >= n:
            continue
        ax, ay = float(path.x[j]), float(path.y[j])
        bx, by = float(path.x[j + 1]), float(path.y[j + 1])
        vx, vy = bx - ax, by - ay
        vv = vx * vx + vy * vy
        t = 0.0 if vv == 0 else ((px - ax) * vx + (py - ay) * vy) / vv
        t = min(1.0, max(0.0, t))
        cx, cy = ax + t * vx, ay + t * vy
        d2 = (px - cx) ** 2 + (py - cy) ** 2
        if best is None or d2 < best[0]:
            s = float(path.s[j] + t * (path.s[j + 1] - path.s[j]))
            h = float(path.heading[j] + t * (path.heading[j + 1] - path.heading[j]))
            off = -np.sin(h) * (px - cx) + np.cos(h) * (py - cy)
            best = (d2, s, float(off), h)
    if best is None:  # single-sample path; treat as a point
        h = float(path.heading[i])
        off = -np.sin(h) * (px - path.x[i]) + np.cos(h) * (py - path.y[i])
        return float(path.s[i]), float(off), h
    return best[1], best[2], best[3]


class PathCursor:
    """Warm-start projector for the simulation hot loop.

    Keeps plain-float copies of the sample table and the index of the last
    projection so each step only scans a handful of neighboring samples.
    """

    def __init__(self, path: TargetPath, corridor: float = 20.0):
        self.path = path
        self.corridor = corridor
        self._s = path.s.tolist()
        self._x = path.x.tolist()
        self._y = path.y.tolist()
        self._h = path.heading.tolist()
        self._n = len(self._s)
        self._res = path.resolution
        self._i = 0

    def locate(self, px: float, py: float):
        """Project (px, py); returns (station, offset, heading)."""
        i = _cursor_nearest(self._x, self._y, self._n, px, py, self._i)
        self._i = i
        dx = self._x[i] - px
        dy = self._y[i] - py
        if dx * dx + dy * dy > self.corridor * self.corridor:
            raise PathCorridorError(
                f"point ({px:.2f}, {py:.2f}) left the path corridor")
        return _cursor_refine(self._s, self._x, self._y, self._h, self._n, px, py, i)

    def sample(self, station: float):
        """Fast interpolated (x, y, heading); extrapolates beyond the ends."""
        s, x, y, h, n = self._s, self._x, self._y, self._h, self._n
        if station <= s[0]:
            d = station - s[0]
            return x[0] + d * math.cos(h[0]), y[0] + d * math.sin(h[0]), h[0]
        if station >= s[n - 1]:
            d = station - s[n - 1]
            hh = h[n - 1]
            return x[n - 1] + d * math.cos(hh), y[n - 1] + d * math.sin(hh), hh
        i = int(station / self._res)
        if i >= n - 1:
            i = n - 2
        # uniform grid assumption can be off by one near the appended last row
        while s[i] > station:
            i -= 1
        while s[i + 1] < station:
            i += 1
        w = (station - s[i]) / (s[i + 1] - s[i])
        return (x[i] + w * (x[i + 1] - x[i]),
                y[i] + w * (y[i + 1] - y[i]),
                h[i] + w * (h[i + 1] - h[i]))


def _cursor_nearest(xs, ys, n, px, py, start):
    i = start
    if i >= n:
        i = n - 1
    best = (xs[i] - px) ** 2 + (ys[i] - py) ** 2
    while i + 1 < n:
        d = (xs[i + 1] - px) ** 2 + (ys[i + 1] - py) ** 2
        if d >= best:
            break
        best, i = d, i + 1
    while i - 1 >= 0:
        d = (xs[i - 1] - px) ** 2 + (ys[i - 1] - py) ** 2
        if d >= best:
            break
        best, i = d, i - 1
    return i


def _cursor_refine(ss, xs, ys, hs, n, px, py, i):
    best_d2 = None
    out = None
    for j in (i - 1, i):
        if j < 0 or j + 1 >= n:
            continue
        ax, ay = xs[j], ys[j]
        vx, vy = xs[j + 1] - ax, ys[j + 1] - ay
        vv = vx * vx + vy * vy
        t = 0.0 if vv == 0 else ((px - ax) * vx + (py - ay) * vy) / vv
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx, cy = ax + t * vx, ay + t * vy
        d2 = (px - cx) ** 2 + (py - cy) ** 2
        if best_d2 is None or d2 < best_d2:
            best_d2 = d2
            s = ss[j] + t * (ss[j + 1] - ss[j])
            h = hs[j] + t * (hs[j + 1] - hs[j])
            off = -math.sin(h) * (px - cx) + math.cos(h) * (py - cy)
            out = (s, off, h)
    if out is None:
        h = hs[i]
        off = -math.sin(h) * (px - xs[i]) + math.cos(h) * (py - ys[i])
        out = (ss[i], off, h)
    return out
