"""Road reference line with Frenet (station, lateral offset) conversions."""

from __future__ import annotations

import numpy as np

LANE_WIDTH = 3.5
RESOLUTION = 0.5


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


class Road:
    """Reference line built from (length, curvature) pieces, sampled every 0.5 m.

    Lateral offsets are positive to the left of the direction of travel; lane
    ``k`` is centred at ``k * LANE_WIDTH``.
    """

    def __init__(self, origin, heading, pieces):
        self.origin = (float(origin[0]), float(origin[1]))
        self.heading0 = float(heading)
        self.pieces = [(float(length), float(kappa)) for length, kappa in pieces]
        xs, ys, hs, ss = [self.origin[0]], [self.origin[1]], [self.heading0], [0.0]
        x, y, h, s = self.origin[0], self.origin[1], self.heading0, 0.0
        for length, kappa in self.pieces:
            n = max(1, int(round(length / RESOLUTION)))
            ds = length / n
            for _ in range(n):
                # exact arc step
                if abs(kappa) < 1e-12:
                    x += ds * np.cos(h)
                    y += ds * np.sin(h)
                else:
                    x += (np.sin(h + kappa * ds) - np.sin(h)) / kappa
                    y += (np.cos(h) - np.cos(h + kappa * ds)) / kappa
                h += kappa * ds
                s += ds
                xs.append(x)
                ys.append(y)
                hs.append(h)
                ss.append(s)
        self.xy = np.column_stack([xs, ys])
        self.heading = np.unwrap(np.array(hs))
        self.s = np.array(ss)
        self.length = float(self.s[-1])
        seg = np.diff(self.xy, axis=0)
        self._seg = seg
        self._seg_len2 = (seg**2).sum(1)

    def pose_at(self, s):
        """World position and heading of the reference line at station(s) ``s``."""
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        h = np.interp(s, self.s, self.heading)
        return x, y, h

    def to_world(self, s, d):
        x, y, h = self.pose_at(s)
        d = np.asarray(d, dtype=np.float64)
        return np.stack([x - d * np.sin(h), y + d * np.cos(h)], axis=-1)

    def project(self, point, hint: float | None = None, window: float = 15.0):
        """Frenet ``(s, d, road_heading)`` of a world point.

        With a station ``hint`` only segments within ``window`` metres of it
        are searched.
        """
        p = np.asarray(point, dtype=np.float64)
        lo, hi = 0, len(self._seg)
        if hint is not None:
            lo = max(0, int((hint - window) / RESOLUTION) - 1)
            hi = min(len(self._seg), int((hint + window) / RESOLUTION) + 2)
            if lo >= hi:
                lo, hi = 0, len(self._seg)
        seg, base = self._seg[lo:hi], self.xy[lo:hi]
        rel = p - base
        u = np.clip(np.einsum("ij,ij->i", rel, seg) / self._seg_len2[lo:hi], 0.0, 1.0)
        foot = base + u[:, None] * seg
        diff = p - foot
        k = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        i = lo + k
        u = u[k]
        foot = foot[k]
        s = self.s[i] + u * (self.s[i + 1] - self.s[i])
        h = self.heading[i] + u * (self.heading[i + 1] - self.heading[i])
        tx, ty = np.cos(h), np.sin(h)
        off = p - foot
        d = -off[0] * ty + off[1] * tx
        return float(s), float(d), float(h)
