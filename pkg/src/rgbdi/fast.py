"""FAST-9 segment-test corner detector with greedy non-maximum suppression."""
from __future__ import annotations

import numpy as np

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy)
CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
ARC = 9


def _arc_min(D: np.ndarray) -> np.ndarray:
    """min over every circular run of ARC consecutive circle samples; D has shape (16, ...)."""
    def shift(a, k):
        return np.roll(a, -k, axis=0)

    m2 = np.minimum(D, shift(D, 1))
    m4 = np.minimum(m2, shift(m2, 2))
    m8 = np.minimum(m4, shift(m4, 4))
    return np.minimum(m8, shift(D, 8))


def fast_score(image: np.ndarray, threshold: float = 20.0) -> np.ndarray:
    """Segment-test score per pixel, 0 where the pixel is not a corner.

    The score is the largest ``s`` such that nine contiguous circle pixels are
    all brighter than ``centre + s`` or all darker than ``centre - s``; a pixel
    is a corner when that score exceeds ``threshold``. Pixels within three of
    the border are never corners.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    score = np.zeros((h, w))
    if h < 7 or w < 7:
        return score
    centre = img[3:h - 3, 3:w - 3]
    D = np.stack([img[3 + dy:h - 3 + dy, 3 + dx:w - 3 + dx] - centre for dx, dy in CIRCLE])
    bright = _arc_min(D).max(axis=0)
    dark = _arc_min(-D).max(axis=0)
    s = np.maximum(bright, dark)
    score[3:h - 3, 3:w - 3] = np.where(s > threshold, s, 0.0)
    return score


def corner_mask(image: np.ndarray, threshold: float = 20.0) -> np.ndarray:
    return fast_score(image, threshold) > 0


def refine_position(score: np.ndarray, u: int, v: int):
    """Centroid of the 3x3 neighbours sharing the peak score, rounded."""
    h, w = score.shape
    u0, u1, v0, v1 = max(u - 1, 0), min(u + 2, w), max(v - 1, 0), min(v + 2, h)
    win = score[v0:v1, u0:u1]
    vv, uu = np.nonzero(win == score[v, u])
    return int(np.floor(np.mean(uu) + u0 + 0.5)), int(np.floor(np.mean(vv) + v0 + 0.5))


def _refine_all(score: np.ndarray, us: np.ndarray, vs: np.ndarray):
    """:func:`refine_position` for many candidates at once."""
    h, w = score.shape
    peak = score[vs, us]
    su = np.zeros(len(us))
    sv = np.zeros(len(us))
    cnt = np.zeros(len(us))
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            uu, vv = us + du, vs + dv
            ok = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
            eq = ok & (score[np.clip(vv, 0, h - 1), np.clip(uu, 0, w - 1)] == peak)
            su += eq * uu
            sv += eq * vv
            cnt += eq
    return np.floor(su / cnt + 0.5).astype(int), np.floor(sv / cnt + 0.5).astype(int)


def suppress(score: np.ndarray, spacing: float, existing=(), accept=None, budget: int | None = None):
    """Greedy NMS: strongest first, reject anything closer than ``spacing`` to a kept point.

    ``existing`` anchors also suppress. ``accept(u, v)`` may veto a candidate;
    vetoed candidates suppress nothing. Ties are broken by row then column.
    """
    h, w = score.shape
    vs, us = np.nonzero(score > 0)
    order = np.lexsort((us, vs, -score[vs, us]))
    ru, rv = _refine_all(score, us[order], vs[order])
    # cells within ``spacing`` of a kept point; a kept point blocks a disc around itself
    blocked = np.zeros((h, w), dtype=bool)
    gy, gx = np.mgrid[0:h, 0:w]
    r = int(np.ceil(spacing))

    def block(a, b):
        u0, u1 = max(int(np.floor(a)) - r, 0), min(int(np.ceil(a)) + r + 1, w)
        v0, v1 = max(int(np.floor(b)) - r, 0), min(int(np.ceil(b)) + r + 1, h)
        if u0 < u1 and v0 < v1:
            blocked[v0:v1, u0:u1] |= (gx[v0:v1, u0:u1] - a) ** 2 + (gy[v0:v1, u0:u1] - b) ** 2 < spacing * spacing

    for a in existing:
        block(float(a[0]), float(a[1]))
    out = []
    for u, v in zip(ru.tolist(), rv.tolist()):
        if budget is not None and len(out) >= budget:
            break
        if blocked[v, u]:
            continue
        if accept is not None and not accept(u, v):
            continue
        block(u, v)
        out.append((u, v))
    return out
