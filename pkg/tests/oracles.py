"""Independent reference implementations used to check the fast paths.

Everything here is deliberately naive: scalar cmath arithmetic and explicit
Python loops, structurally unrelated to the vectorized/kernel code under
test.  Keep it that way; these are the oracles.
"""

import cmath
import math

SPEED_OF_LIGHT = 299_792_458.0


def steering_y_loops(theta, phi, n_y, d_ty, lam):
    k = (2.0 * math.pi / lam) * math.sin(theta) * math.sin(phi) * d_ty
    return [cmath.exp(1j * k * i) for i in range(n_y)]


def steering_z_loops(theta, n_z, d_tz, lam):
    k = (2.0 * math.pi / lam) * math.cos(theta) * d_tz
    return [cmath.exp(1j * k * i) for i in range(n_z)]


def steering_3d_loops(theta, phi, n_y, n_z, d_ty, d_tz, lam):
    a_y = steering_y_loops(theta, phi, n_y, d_ty, lam)
    a_z = steering_z_loops(theta, n_z, d_tz, lam)
    out = []
    for ky in range(n_y):
        for kz in range(n_z):
            out.append(a_y[ky] * a_z[kz])
    return out


def path_coefficient_loops(path, port, d_ry, d_rz, lam, f_c, t):
    """One path's coefficient at 1-based port (n, m) and time t."""
    n, m = port
    c_p = path.alpha * path.beta * cmath.exp(1j * 2.0 * math.pi * f_c * path.tau)
    spatial = (2.0 * math.pi / lam) * (
        math.sin(path.theta_rx) * math.sin(path.phi_rx) * d_ry * (m - 1)
        + math.cos(path.theta_rx) * d_rz * (n - 1)
    )
    return c_p * cmath.exp(1j * spatial) * cmath.exp(1j * 2.0 * math.pi * path.w * t)


def channel_vector_loops(ch, port, t):
    """Triple-loop channel vector: sum over paths of steering x coefficient."""
    lam = SPEED_OF_LIGHT / ch.carrier.f_c
    out = []
    for i in range(ch.bs.n_t):
        acc = 0.0 + 0.0j
        for p in ch.paths:
            a_p = steering_3d_loops(
                p.theta_tx, p.phi_tx, ch.bs.n_y, ch.bs.n_z, ch.bs.d_ty, ch.bs.d_tz, lam
            )
            c = path_coefficient_loops(
                p, port, ch.grid.d_ry, ch.grid.d_rz, lam, ch.carrier.f_c, t
            )
            acc += a_p[i] * c
        out.append(acc)
    return out


def channel_table_loops(ch, antenna, t):
    """Per-port channel table via repeated channel_vector_loops calls."""
    table = []
    for n in range(1, ch.grid.n + 1):
        row = []
        for m in range(1, ch.grid.m + 1):
            row.append(channel_vector_loops(ch, (n, m), t)[antenna - 1])
        table.append(row)
    return table


def select_port_scan(s_stack, h_stack):
    """Exhaustive port scan: first (n, m) minimizing sum_i |S_i - H_i|.

    Returns 1-based (n, m, d_min).
    """
    n_ant = len(s_stack)
    n_rows = len(s_stack[0])
    n_cols = len(s_stack[0][0])
    best = None
    best_d = None
    for n in range(n_rows):
        for m in range(n_cols):
            d = 0.0
            for i in range(n_ant):
                d += abs(s_stack[i][n][m] - h_stack[i][n][m])
            if best_d is None or d < best_d:
                best_d = d
                best = (n + 1, m + 1)
    return best[0], best[1], best_d


def nmse_db_loops(errors_sq, refs_sq):
    """10*log10 of the mean of per-item ratios, computed with plain floats."""
    ratios = [e / r for e, r in zip(errors_sq, refs_sq)]
    mean = sum(ratios) / len(ratios)
    return 10.0 * math.log10(mean)


def nmse_ratio_loops(s_hat, s):
    """||s - s_hat||^2 / ||s||^2 over every entry, scalar accumulation."""
    err = 0.0
    ref = 0.0
    flat_hat = list(s_hat.ravel())
    flat_s = list(s.ravel())
    for a, b in zip(flat_hat, flat_s):
        err += abs(b - a) ** 2
        ref += abs(b) ** 2
    return err / ref


def sinr_loops(h_true, h_used, snr_linear):
    """Matched-filter SINR via explicit scalar inner products."""
    norm_sq = sum(abs(x) ** 2 for x in h_used)
    inner = sum(a * x.conjugate() for a, x in zip(h_true, h_used))
    return snr_linear * abs(inner) ** 2 / norm_sq
