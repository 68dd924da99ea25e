"""Horn-Schunck dense optical flow on a periodic grid."""

from __future__ import annotations

import numpy as np

from .grid import GridSpec
from .physics import FlowFields, derive_diffusivity

DEFAULT_SMOOTHNESS = 100.0
DEFAULT_ITERATIONS = 200


def _neighbour_mean(u):
    edges = np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1)
    corners = (np.roll(u, (1, 1), (0, 1)) + np.roll(u, (1, -1), (0, 1))
               + np.roll(u, (-1, 1), (0, 1)) + np.roll(u, (-1, -1), (0, 1)))
    return edges / 6.0 + corners / 12.0


def _fill(frame):
    frame = np.asarray(frame, dtype=float)
    ok = np.isfinite(frame)
    if not ok.any():
        return np.zeros_like(frame), ok
    return np.where(ok, frame, frame[ok].mean()), ok


def horn_schunck(frame0, frame1, smoothness=DEFAULT_SMOOTHNESS, n_iter=DEFAULT_ITERATIONS):
    """Flow between two frames in cells per frame along axes 0 and 1.

    Parameters
    ----------
    frame0, frame1 : ndarray (n1, n2)
        Consecutive images; NaN pixels are dropped from the data term (the
        smoothness term fills them in).
    smoothness : float
        The regularisation weight alpha^2, in squared intensity units.
    n_iter : int
        Number of Jacobi fixed-point sweeps.
    """
    I0, ok0 = _fill(frame0)
    I1, ok1 = _fill(frame1)
    ok = ok0 & ok1
    # a gradient is only trusted where its whole stencil was observed
    for ax in (0, 1):
        ok = ok & np.roll(ok, 1, ax) & np.roll(ok, -1, ax)
    w = ok.astype(float)

    Ix = 0.25 * (np.roll(I0, -1, 0) - np.roll(I0, 1, 0) + np.roll(I1, -1, 0) - np.roll(I1, 1, 0))
    Iy = 0.25 * (np.roll(I0, -1, 1) - np.roll(I0, 1, 1) + np.roll(I1, -1, 1) - np.roll(I1, 1, 1))
    It = (I1 - I0) * w
    Ix, Iy = Ix * w, Iy * w

    denom = smoothness + Ix**2 + Iy**2
    u = np.zeros_like(I0)
    v = np.zeros_like(I0)
    for _ in range(n_iter):
        ub, vb = _neighbour_mean(u), _neighbour_mean(v)
        r = (Ix * ub + Iy * vb + It) / denom
        u = ub - Ix * r
        v = vb - Iy * r
    return u, v


def _to_gray_levels(frames):
    """Rescale the whole sequence jointly onto 0..255 (the scale of ``smoothness``)."""
    stack = np.stack(frames)
    ok = np.isfinite(stack)
    if not ok.any():
        return frames
    lo, hi = stack[ok].min(), stack[ok].max()
    if hi == lo:
        return [np.where(np.isfinite(f), 0.0, np.nan) for f in frames]
    return [(f - lo) * (255.0 / (hi - lo)) for f in frames]


def estimate_optical_flow(frames, grid: GridSpec | None = None, smoothness=DEFAULT_SMOOTHNESS,
                          n_iter=DEFAULT_ITERATIONS) -> FlowFields:
    """Average Horn-Schunck flow over all consecutive frame pairs.

    Frames are mapped jointly onto gray levels 0..255 first, so the
    smoothness weight does not depend on the physical units of the data.

    Velocities are returned in grid fractions per frame step and the
    diffusivity is derived from the averaged velocity with the grid spacing
    as computational resolution.
    """
    frames = [np.asarray(f, dtype=float) for f in frames]
    if len(frames) < 2:
        raise ValueError("optical flow needs at least two frames")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ValueError("frames differ in shape")
    grid = grid or GridSpec(*shape)
    frames = _to_gray_levels(frames)
    u = np.zeros(shape)
    v = np.zeros(shape)
    for a, b in zip(frames[:-1], frames[1:]):
        du, dv = horn_schunck(a, b, smoothness, n_iter)
        u += du
        v += dv
    u /= len(frames) - 1
    v /= len(frames) - 1
    flow = FlowFields(u / grid.n1, v / grid.n2, np.zeros(shape))
    D = derive_diffusivity(flow, 1.0 / grid.n1, 1.0 / grid.n2)
    return FlowFields(flow.vx, flow.vy, D)
