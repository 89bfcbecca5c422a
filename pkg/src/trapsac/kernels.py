"""Per-step numeric kernels for the highway simulator.

Every function here is compiled by numba when it is enabled (see
:mod:`trapsac._accel`) and otherwise runs as ordinary numpy code.  The world
is stored as flat float arrays ``x, y, psi, v`` indexed by vehicle; index 0 is
always the ego vehicle.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, jit

# vehicle kinds
EGO = 0
TRAP = 1
TRAFFIC = 2

# layout of the packed IDM parameter vector
IDM_A_MAX, IDM_V0, IDM_S0, IDM_T, IDM_B, IDM_DELTA, IDM_CLIP = range(7)


@jit
def wrap_angle(psi):
    """Map an angle into (-pi, pi]; angles already inside are returned as is."""
    if -math.pi < psi <= math.pi:
        return psi
    two_pi = 2.0 * math.pi
    return math.pi - ((math.pi - psi) % two_pi)


@jit
def bicycle_step(x, y, psi, v, accel, steer, dt, half_length, v_max):
    beta = math.atan(0.5 * math.tan(steer))
    nx = x + v * math.cos(psi + beta) * dt
    ny = y + v * math.sin(psi + beta) * dt
    npsi = wrap_angle(psi + (v / half_length) * math.sin(beta) * dt)
    nv = v + accel * dt
    if nv < 0.0:
        nv = 0.0
    elif nv > v_max:
        nv = v_max
    return nx, ny, npsi, nv


@jit
def bicycle_step_many(x, y, psi, v, accel, steer, dt, half_length, v_max):
    """In-place kinematic update of every vehicle."""
    for i in range(x.shape[0]):
        x[i], y[i], psi[i], v[i] = bicycle_step(
            x[i], y[i], psi[i], v[i], accel[i], steer[i], dt, half_length, v_max
        )


@jit
def idm_gap_star(v, dv, p):
    s = p[IDM_S0] + p[IDM_T] * v + v * dv / (2.0 * math.sqrt(p[IDM_A_MAX] * p[IDM_B]))
    if s < p[IDM_S0]:
        s = p[IDM_S0]
    return s


@jit
def idm_accel(v, dv, gap, p):
    """IDM acceleration; ``gap = inf`` means free road.  ``gap`` must be > 0."""
    a = 1.0 - (v / p[IDM_V0]) ** p[IDM_DELTA]
    if gap < np.inf:
        a -= (idm_gap_star(v, dv, p) / gap) ** 2
    a *= p[IDM_A_MAX]
    clip = p[IDM_CLIP]
    if a > clip:
        a = clip
    elif a < -clip:
        a = -clip
    return a


@jit
def lane_of(y, lane_width, lanes):
    k = int(math.floor(y / lane_width + 0.5))
    if k < 0:
        k = 0
    elif k > lanes - 1:
        k = lanes - 1
    return k


@jit
def leader_follower(x, y, i, lane_y, half_band, max_range):
    """Nearest vehicles ahead of/behind vehicle ``i`` inside a lateral band.

    A vehicle belongs to the band when ``|y_j - lane_y| < half_band``.  Only
    vehicles within ``max_range`` longitudinally are considered.  Returns
    ``(leader, follower)`` indices, -1 when absent.
    """
    lead = -1
    follow = -1
    best_ahead = np.inf
    best_behind = np.inf
    for j in range(x.shape[0]):
        if j == i or abs(y[j] - lane_y) >= half_band:
            continue
        d = x[j] - x[i]
        if d >= 0.0:
            if d < best_ahead and d <= max_range:
                best_ahead = d
                lead = j
        else:
            if -d < best_behind and -d <= max_range:
                best_behind = -d
                follow = j
    return lead, follow


@jit
def _follow_accel(x, v, i, lead, length, p):
    """IDM acceleration of ``i`` behind ``lead`` (-1: free road)."""
    if lead < 0:
        return idm_accel(v[i], 0.0, np.inf, p)
    gap = x[lead] - x[i] - length
    if gap < 1e-3:
        gap = 1e-3
    return idm_accel(v[i], v[i] - v[lead], gap, p)


@jit
def mobil_accepts(d_ego, d_rear, d_front, rear_after, politeness, a_threshold, b_safe):
    if rear_after < -b_safe:
        return False
    return d_ego + politeness * (d_rear + d_front) > a_threshold


@jit
def traffic_controls(x, y, psi, v, kind, target_lane, lanes, lane_width, length,
                     width, idm, mobil, k_y, k_psi, steer_max, settle_tol):
    """IDM longitudinal and MOBIL lateral decisions for every traffic vehicle.

    Updates ``target_lane`` in place for vehicles that decide to change lane and
    returns ``(accel, steer)`` arrays for all vehicles.  Trap vehicles and the
    ego receive zeros; the ego's entries are overwritten by the caller.
    """
    n = x.shape[0]
    accel = np.zeros(n)
    steer = np.zeros(n)
    band = 0.5 * lane_width + 0.5 * width
    for i in range(n):
        if kind[i] != TRAFFIC:
            continue
        cur = lane_of(y[i], lane_width, lanes)
        tgt = target_lane[i]
        lead_c, _ = leader_follower(x, y, i, cur * lane_width, band, np.inf)
        lead_t, _ = leader_follower(x, y, i, tgt * lane_width, band, np.inf)
        lead = lead_c
        if lead < 0 or (lead_t >= 0 and x[lead_t] < x[lead]):
            lead = lead_t
        a_here = _follow_accel(x, v, i, lead, length, idm)
        accel[i] = a_here

        settled = abs(y[i] - tgt * lane_width) < settle_tol
        if settled:
            # MOBIL check, at most one lane change decided per step
            best = -1
            best_gain = -np.inf
            a_cur = _follow_accel(x, v, i, lead_c, length, idm)
            for side in range(2):
                new = tgt - 1 if side == 0 else tgt + 1
                if new < 0 or new >= lanes:
                    continue
                nl, nf = leader_follower(x, y, i, new * lane_width, 0.5 * lane_width, np.inf)
                if nl >= 0 and x[nl] - x[i] - length <= 0.0:
                    continue
                if nf >= 0 and x[i] - x[nf] - length <= 0.0:
                    continue
                a_new = _follow_accel(x, v, i, nl, length, idm)
                d_rear = 0.0
                rear_after = 0.0
                if nf >= 0:
                    rear_before = _follow_accel(x, v, nf, nl, length, idm)
                    rear_after = _follow_accel(x, v, nf, i, length, idm)
                    d_rear = rear_after - rear_before
                # the new leader's IDM input does not involve vehicle i
                d_front = 0.0
                d_ego = a_new - a_cur
                if mobil_accepts(d_ego, d_rear, d_front, rear_after,
                                 mobil[0], mobil[1], mobil[2]):
                    gain = d_ego + mobil[0] * (d_rear + d_front)
                    if gain > best_gain:
                        best_gain = gain
                        best = new
            if best >= 0:
                target_lane[i] = best
                tgt = best

        raw = -k_y * (y[i] - tgt * lane_width) - k_psi * psi[i]
        steer[i] = quantize_steer(raw, steer_max)
    return accel, steer


@jit
def quantize_steer(raw, step):
    """Nearest of ``{-step, 0, step}``; exact midpoints round toward zero."""
    if raw > 0.5 * step:
        return step
    if raw < -0.5 * step:
        return -step
    return 0.0


@jit
def _rect_axes_overlap(ax, ay, cx1, cy1, c1, s1, cx2, cy2, c2, s2, hl, hw):
    # projection radius of each rectangle onto axis (ax, ay)
    r1 = hl * abs(c1 * ax + s1 * ay) + hw * abs(-s1 * ax + c1 * ay)
    r2 = hl * abs(c2 * ax + s2 * ay) + hw * abs(-s2 * ax + c2 * ay)
    d = abs((cx2 - cx1) * ax + (cy2 - cy1) * ay)
    return d < r1 + r2


@jit
def rects_overlap(x1, y1, psi1, x2, y2, psi2, length, width):
    """Separating-axis test for two equal oriented rectangles."""
    hl = 0.5 * length
    hw = 0.5 * width
    if (x2 - x1) ** 2 + (y2 - y1) ** 2 > (length + width) ** 2:
        return False
    c1 = math.cos(psi1)
    s1 = math.sin(psi1)
    c2 = math.cos(psi2)
    s2 = math.sin(psi2)
    if not _rect_axes_overlap(c1, s1, x1, y1, c1, s1, x2, y2, c2, s2, hl, hw):
        return False
    if not _rect_axes_overlap(-s1, c1, x1, y1, c1, s1, x2, y2, c2, s2, hl, hw):
        return False
    if not _rect_axes_overlap(c2, s2, x1, y1, c1, s1, x2, y2, c2, s2, hl, hw):
        return False
    if not _rect_axes_overlap(-s2, c2, x1, y1, c1, s1, x2, y2, c2, s2, hl, hw):
        return False
    return True


@jit
def ego_collision(x, y, psi, length, width):
    """Index of the first vehicle overlapping the ego, or -1."""
    for j in range(1, x.shape[0]):
        if rects_overlap(x[0], y[0], psi[0], x[j], y[j], psi[j], length, width):
            return j
    return -1


@jit
def encode_observation(x, y, psi, v, lane_width, lanes, sensing_range,
                       pos_scale, vel_scale, n_neighbors, out):
    """Write the ego + nearest-neighbour feature vector into ``out``.

    Layout: ``[1, x, y, v_lon, v_lat, d_e]`` for the ego, then for each of the
    ``n_neighbors`` closest vehicles (by |dx|, ties by |dy|)
    ``[present, dx, dy, dv_lon, dv_lat]``.  Absent slots stay zero.
    """
    out[:] = 0.0
    vlon0 = v[0] * math.cos(psi[0])
    vlat0 = v[0] * math.sin(psi[0])
    lane = lane_of(y[0], lane_width, lanes)
    out[0] = 1.0
    out[1] = x[0] / pos_scale
    out[2] = y[0] / pos_scale
    out[3] = vlon0 / vel_scale
    out[4] = vlat0 / vel_scale
    out[5] = (y[0] - lane * lane_width) / lane_width

    n = x.shape[0]
    adx = np.empty(n - 1)
    ady = np.empty(n - 1)
    idx = np.empty(n - 1, dtype=np.int64)
    m = 0
    for j in range(1, n):
        dx = abs(x[j] - x[0])
        if dx > sensing_range:
            continue
        adx[m] = dx
        ady[m] = abs(y[j] - y[0])
        idx[m] = j
        m += 1
    # insertion sort on (|dx|, |dy|, index): m is tiny
    for a in range(1, m):
        kx = adx[a]
        ky = ady[a]
        ki = idx[a]
        b = a - 1
        while b >= 0 and (adx[b] > kx or (adx[b] == kx and (ady[b] > ky or (ady[b] == ky and idx[b] > ki)))):
            adx[b + 1] = adx[b]
            ady[b + 1] = ady[b]
            idx[b + 1] = idx[b]
            b -= 1
        adx[b + 1] = kx
        ady[b + 1] = ky
        idx[b + 1] = ki
    for k in range(min(m, n_neighbors)):
        j = idx[k]
        base = 6 + 5 * k
        out[base] = 1.0
        out[base + 1] = (x[j] - x[0]) / pos_scale
        out[base + 2] = (y[j] - y[0]) / pos_scale
        out[base + 3] = (v[j] * math.cos(psi[j]) - vlon0) / vel_scale
        out[base + 4] = (v[j] * math.sin(psi[j]) - vlat0) / vel_scale


# optimiser kernels -------------------------------------------------------
# Elementwise loops only pay off compiled; the interpreted fallback uses the
# equivalent vectorised numpy expressions instead.

def _adam_loop(p, g, m, v, step, b1, b2, eps):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= step * mi / (math.sqrt(vi) + eps)


def _adam_vec(p, g, m, v, step, b1, b2, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= step * m / (np.sqrt(v) + eps)


def _blend_loop(target, online, tau):
    for i in range(target.size):
        target[i] = (1.0 - tau) * target[i] + tau * online[i]


def _blend_vec(target, online, tau):
    target *= 1.0 - tau
    target += tau * online


if USE_NUMBA:
    adam_update = jit(_adam_loop)
    polyak_blend = jit(_blend_loop)
else:
    adam_update = _adam_vec
    polyak_blend = _blend_vec
