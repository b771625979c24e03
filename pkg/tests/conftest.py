"""Shared oracle helpers for the test suite.

Everything here is written independently of the package implementation so
tests compare two routes to each answer.
"""

def oracle_point_in_rings(x, y, rings) -> bool:
    """Even-odd crossing test over a list of closed rings."""
    crossings = 0
    for ring in rings:
        for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
            if y1 == y2:
                continue
            lo, hi = (y1, y2) if y1 < y2 else (y2, y1)
            if lo <= y < hi:
                xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                if x < xc:
                    crossings += 1
    return crossings % 2 == 1


def oracle_point_near_segment(x, y, a, b, radius) -> bool:
    (x1, y1), (x2, y2) = a, b
    dx, dy = x2 - x1, y2 - y1
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        t = 0.0
    else:
        t = min(max(((x - x1) * dx + (y - y1) * dy) / seg2, 0.0), 1.0)
    qx, qy = x1 + t * dx, y1 + t * dy
    return (x - qx) ** 2 + (y - qy) ** 2 <= radius * radius


def random_rect_ring(rng, frame_w, frame_h, max_size=6):
    """Axis-aligned CCW rectangle in the map frame of a unit-pixel raster at origin 0,0."""
    w = int(rng.integers(1, max_size))
    h = int(rng.integers(1, max_size))
    c = int(rng.integers(0, frame_w - w))
    r = int(rng.integers(0, frame_h - h))
    x0, x1 = float(c), float(c + w)
    y_top, y_bot = float(-r), float(-(r + h))
    return [(x0, y_bot), (x1, y_bot), (x1, y_top), (x0, y_top), (x0, y_bot)]
