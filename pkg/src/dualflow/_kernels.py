"""Optional numba kernels for the hot per-edge and per-cell loops.

Everything here mirrors the vectorized numpy implementations in
``transport``/``relaxation`` exactly (same formulas, same branch structure);
the test suite asserts agreement to round-off on random states.  The scalar
flux lives in one place and is shared between the Rusanov edge kernel and
the predictor's directional flux differences, so there is a single source of
truth per backend.

Import is optional: ``AVAILABLE`` tells the callers whether the JIT path can
be used (set DUALFLOW_NO_NUMBA to force the numpy path).
"""

from __future__ import annotations

import os

import numpy as np

try:
    if os.environ.get("DUALFLOW_NO_NUMBA"):
        raise ImportError("disabled by DUALFLOW_NO_NUMBA")
    import numba as nb
    AVAILABLE = True
except ImportError:          # pragma: no cover - environment dependent
    nb = None
    AVAILABLE = False


if AVAILABLE:
    @nb.njit(cache=True, fastmath=False)
    def _flux_point(q, nx, ny, out, cs, ch, gamma, cv, inc, heat, flux_form):
        rho = q[0]
        ux = q[1] / rho
        uy = q[2] / rho
        uz = q[3] / rho
        mn = q[1] * nx + q[2] * ny
        for c in range(17):
            out[c] = 0.0
        out[0] = mn
        out[1] = ux * mn
        out[2] = uy * mn
        out[3] = uz * mn
        if cs > 0.0:
            # G = A^T A, deviator, sigma = rho cs^2 G Gdev
            G00 = q[4] * q[4] + q[7] * q[7] + q[10] * q[10]
            G01 = q[4] * q[5] + q[7] * q[8] + q[10] * q[11]
            G02 = q[4] * q[6] + q[7] * q[9] + q[10] * q[12]
            G11 = q[5] * q[5] + q[8] * q[8] + q[11] * q[11]
            G12 = q[5] * q[6] + q[8] * q[9] + q[11] * q[12]
            G22 = q[6] * q[6] + q[9] * q[9] + q[12] * q[12]
            tr3 = (G00 + G11 + G22) / 3.0
            D00 = G00 - tr3
            D11 = G11 - tr3
            D22 = G22 - tr3
            coef = rho * cs * cs
            s00 = coef * (G00 * D00 + G01 * G01 + G02 * G02)
            s01 = coef * (G00 * G01 + G01 * D11 + G02 * G12)
            s02 = coef * (G00 * G02 + G01 * G12 + G02 * D22)
            s10 = coef * (G01 * D00 + G11 * G01 + G12 * G02)
            s11 = coef * (G01 * G01 + G11 * D11 + G12 * G12)
            s12 = coef * (G01 * G02 + G11 * G12 + G12 * D22)
            s20 = coef * (G02 * D00 + G12 * G01 + G22 * G02)
            s21 = coef * (G02 * G01 + G12 * D11 + G22 * G12)
            s22 = coef * (G02 * G02 + G12 * G12 + G22 * D22)
            out[1] += s00 * nx + s01 * ny
            out[2] += s10 * nx + s11 * ny
            out[3] += s20 * nx + s21 * ny
        if heat and not inc:
            Jx = q[13]
            Jy = q[14]
            Jz = q[15]
            omn = Jx * nx + Jy * ny
            coef = rho * ch * ch * omn
            out[1] += coef * Jx
            out[2] += coef * Jy
            out[3] += coef * Jz
            T = q[16] / (rho * (gamma - 1.0) * cv)
            JuT = Jx * ux + Jy * uy + Jz * uz + T
            out[13] = JuT * nx
            out[14] = JuT * ny
        if flux_form:
            for i in range(3):
                Au = (q[4 + 3 * i] * ux + q[5 + 3 * i] * uy
                      + q[6 + 3 * i] * uz)
                out[4 + 3 * i] = Au * nx
                out[5 + 3 * i] = Au * ny
        return mn

    @nb.njit(cache=True, fastmath=False)
    def edge_fluxes(QL, QR, eta, cs, ch, gamma, cv, inc, heat, flux_form,
                    diss_coef):
        """Fused Rusanov flux (scaled by edge length), half path-jump term
        and signal speed per edge; ``diss_coef`` is (1/2)(1 + c_alpha) or
        (1 + c_alpha)."""
        ne = QL.shape[0]
        F = np.empty((ne, 17))
        D = np.zeros((ne, 17))
        alpha = np.empty(ne)
        fL = np.empty(17)
        fR = np.empty(17)
        for e in range(ne):
            ex = eta[e, 0]
            ey = eta[e, 1]
            elen = np.sqrt(ex * ex + ey * ey)
            nx = ex / elen
            ny = ey / elen
            qL = QL[e]
            qR = QR[e]
            _flux_point(qL, nx, ny, fL, cs, ch, gamma, cv, inc, heat,
                        flux_form)
            _flux_point(qR, nx, ny, fR, cs, ch, gamma, cv, inc, heat,
                        flux_form)
            # signal speed
            rL = qL[0]
            rR = qR[0]
            unL = (qL[1] * nx + qL[2] * ny) / rL
            unR = (qR[1] * nx + qR[2] * ny) / rR
            if inc:
                u2L = (qL[1]**2 + qL[2]**2 + qL[3]**2) / (rL * rL)
                u2R = (qR[1]**2 + qR[2]**2 + qR[3]**2) / (rR * rR)
                cL = np.sqrt(4.0 / 3.0 * cs * cs + 0.25 * u2L)
                cR = np.sqrt(4.0 / 3.0 * cs * cs + 0.25 * u2R)
                a = abs(unL) + cs
                b = 1.5 * abs(unL) + cL
                if b > a:
                    a = b
                b = abs(unR) + cs
                if b > a:
                    a = b
                b = 1.5 * abs(unR) + cR
                if b > a:
                    a = b
            else:
                TL = qL[16] / (rL * (gamma - 1.0) * cv)
                TR = qR[16] / (rR * (gamma - 1.0) * cv)
                cL = np.sqrt(4.0 / 3.0 * cs * cs
                             + 2.0 * ch * ch * TL / (rL * rL * cv))
                cR = np.sqrt(4.0 / 3.0 * cs * cs
                             + 2.0 * ch * ch * TR / (rR * rR * cv))
                a = abs(unL) + cL
                b = abs(unR) + cR
                if b > a:
                    a = b
            alpha[e] = a
            diss = diss_coef * a
            for c in range(17):
                F[e, c] = (0.5 * (fL[c] + fR[c])
                           - diss * (qR[c] - qL[c])) * elen

            # path jump at the arithmetic mean state, including the 1/2
            rm = 0.5 * (rL + rR)
            umx = 0.5 * (qL[1] + qR[1]) / rm
            umy = 0.5 * (qL[2] + qR[2]) / rm
            umz = 0.5 * (qL[3] + qR[3]) / rm
            ueta = umx * ex + umy * ey
            for i in range(3):
                for k in range(3):
                    idx = 4 + 3 * i + k
                    D[e, idx] = 0.5 * ueta * (qR[idx] - qL[idx])
            if flux_form:
                for i in range(3):
                    udA = (umx * (qR[4 + 3 * i] - qL[4 + 3 * i])
                           + umy * (qR[5 + 3 * i] - qL[5 + 3 * i])
                           + umz * (qR[6 + 3 * i] - qL[6 + 3 * i]))
                    D[e, 4 + 3 * i] -= 0.5 * udA * ex
                    D[e, 5 + 3 * i] -= 0.5 * udA * ey
            if not inc:
                dp = qR[16] - qL[16]
                D[e, 16] = 0.5 * ueta * dp
                if heat:
                    dJx = qR[13] - qL[13]
                    dJy = qR[14] - qL[14]
                    dJz = qR[15] - qL[15]
                    udJ = umx * dJx + umy * dJy + umz * dJz
                    D[e, 13] = 0.5 * (ueta * dJx - udJ * ex)
                    D[e, 14] = 0.5 * (ueta * dJy - udJ * ey)
                    D[e, 15] = 0.5 * ueta * dJz
                    Tm = 0.5 * (qL[16] + qR[16]) / (rm * (gamma - 1.0) * cv)
                    Jmx = 0.5 * (qL[13] + qR[13])
                    Jmy = 0.5 * (qL[14] + qR[14])
                    drho = qR[0] - qL[0]
                    D[e, 16] += 0.5 * (ch * ch * (gamma - 1.0) * Tm
                                       * (rm * (dJx * ex + dJy * ey)
                                          + (Jmx * ex + Jmy * ey) * drho))
        return F, D, alpha

    @nb.njit(cache=True, fastmath=False)
    def flux_divergence(Q, g, cs, ch, gamma, cv, inc, heat, flux_form):
        """Directional central differences of the flux along the local
        gradients, cell by cell (the predictor's div F)."""
        n = Q.shape[0]
        out = np.zeros((n, 17))
        qp = np.empty(17)
        qm = np.empty(17)
        fp = np.empty(17)
        fm = np.empty(17)
        scale = 1.0
        for c in range(n):
            for k in range(17):
                a = abs(Q[c, k])
                if a > scale:
                    scale = a
        vmax2 = np.zeros(2)
        for c in range(n):
            for d in range(2):
                for k in range(17):
                    a = abs(g[c, k, d])
                    if a > vmax2[d]:
                        vmax2[d] = a
        for c in range(n):
            for d in range(2):
                vmax = vmax2[d]
                if vmax == 0.0:
                    continue
                h = 1e-7 * scale / vmax
                for k in range(17):
                    qp[k] = Q[c, k] + h * g[c, k, d]
                    qm[k] = Q[c, k] - h * g[c, k, d]
                nx = 1.0 if d == 0 else 0.0
                ny = 1.0 - nx
                _flux_point(qp, nx, ny, fp, cs, ch, gamma, cv, inc, heat,
                            flux_form)
                _flux_point(qm, nx, ny, fm, cs, ch, gamma, cv, inc, heat,
                            flux_form)
                for k in range(17):
                    out[c, k] += (fp[k] - fm[k]) / (2.0 * h)
        return out

    @nb.njit(cache=True, fastmath=False)
    def element_gradients(Q, tri_cells, grad_psi):
        """Nonconforming-P1 gradients per element from dual-node data."""
        nt = tri_cells.shape[0]
        out = np.empty((nt, 17, 2))
        for t in range(nt):
            c0 = tri_cells[t, 0]
            c1 = tri_cells[t, 1]
            c2 = tri_cells[t, 2]
            g0x = grad_psi[t, 0, 0]
            g0y = grad_psi[t, 0, 1]
            g1x = grad_psi[t, 1, 0]
            g1y = grad_psi[t, 1, 1]
            g2x = grad_psi[t, 2, 0]
            g2y = grad_psi[t, 2, 1]
            for v in range(17):
                q0 = Q[c0, v]
                q1 = Q[c1, v]
                q2 = Q[c2, v]
                out[t, v, 0] = q0 * g0x + q1 * g1x + q2 * g2x
                out[t, v, 1] = q0 * g0y + q1 * g1y + q2 * g2y
        return out

    @nb.njit(cache=True, fastmath=False)
    def weighted_cell_gradients(gradT, tri_pad, tri_w):
        nc = tri_pad.shape[0]
        out = np.empty((nc, 17, 2))
        for c in range(nc):
            t0 = tri_pad[c, 0]
            t1 = tri_pad[c, 1]
            w0 = tri_w[c, 0]
            w1 = tri_w[c, 1]
            for v in range(17):
                out[c, v, 0] = w0 * gradT[t0, v, 0] + w1 * gradT[t1, v, 0]
                out[c, v, 1] = w0 * gradT[t0, v, 1] + w1 * gradT[t1, v, 1]
        return out

    @nb.njit(cache=True, fastmath=False)
    def assemble_cells(F, D, cell_de, cell_de_sign):
        """Per-cell sum of sign * flux + jump over the (padded) edge slots."""
        nc = cell_de.shape[0]
        ne = F.shape[0]
        out = np.zeros((nc, 17))
        for c in range(nc):
            for s in range(4):
                e = cell_de[c, s]
                if e >= ne:
                    continue
                sg = cell_de_sign[c, s]
                for v in range(17):
                    out[c, v] += sg * F[e, v] + D[e, v]
        return out

    @nb.njit(cache=True, fastmath=False)
    def eno_minmod_edges(bases, gradT, de_tri, far_i, far_j, d_i, d_j,
                         cells_i, cells_j, use_minmod, margin,
                         margin_inf):
        """Slope selection and extrapolation per edge side on the dot
        products grad . offset (ENO hysteresis rule or per-component
        min-mod)."""
        ne = de_tri.shape[0]
        QL = np.empty((ne, 17))
        QR = np.empty((ne, 17))
        for e in range(ne):
            tc = de_tri[e]
            tfi = far_i[e]
            tfj = far_j[e]
            if tfi < 0:
                tfi = tc
            if tfj < 0:
                tfj = tc
            dix = d_i[e, 0]
            diy = d_i[e, 1]
            djx = d_j[e, 0]
            djy = d_j[e, 1]
            ci = cells_i[e]
            cj = cells_j[e]
            for c in range(17):
                dc_i = gradT[tc, c, 0] * dix + gradT[tc, c, 1] * diy
                dc_j = gradT[tc, c, 0] * djx + gradT[tc, c, 1] * djy
                if use_minmod:
                    # per spatial component before dotting
                    gsx = gradT[tfi, c, 0]
                    gsy = gradT[tfi, c, 1]
                    gcx = gradT[tc, c, 0]
                    gcy = gradT[tc, c, 1]
                    mx = gsx if abs(gsx) < abs(gcx) else gcx
                    if gsx * gcx <= 0.0:
                        mx = 0.0
                    my = gsy if abs(gsy) < abs(gcy) else gcy
                    if gsy * gcy <= 0.0:
                        my = 0.0
                    dl = mx * dix + my * diy
                    gsx = gradT[tfj, c, 0]
                    gsy = gradT[tfj, c, 1]
                    mx = gsx if abs(gsx) < abs(gcx) else gcx
                    if gsx * gcx <= 0.0:
                        mx = 0.0
                    my = gsy if abs(gsy) < abs(gcy) else gcy
                    if gsy * gcy <= 0.0:
                        my = 0.0
                    dr = mx * djx + my * djy
                else:
                    ds_i = gradT[tfi, c, 0] * dix + gradT[tfi, c, 1] * diy
                    ds_j = gradT[tfj, c, 0] * djx + gradT[tfj, c, 1] * djy
                    if margin_inf:
                        dl = ds_i
                        dr = ds_j
                    elif margin == 0.0:
                        # literal argmin rule: ties keep the center slope
                        dl = ds_i if abs(ds_i) < abs(dc_i) else dc_i
                        dr = ds_j if abs(ds_j) < abs(dc_j) else dc_j
                    else:
                        dl = ds_i if abs(ds_i) <= (1.0 + margin) * abs(dc_i) \
                            else dc_i
                        dr = ds_j if abs(ds_j) <= (1.0 + margin) * abs(dc_j) \
                            else dc_j
                QL[e, c] = bases[ci, c] + dl
                QR[e, c] = bases[cj, c] + dr
        return QL, QR

    @nb.njit(cache=True, fastmath=False)
    def bj_reconstruct(bases, Q, g0, de_cells, d_i, d_j, cell_de,
                       cell_de_sign, cell_neighbors, tiny):
        """Barth-Jespersen limiting of the cell-average gradients and the
        edge extrapolation, fused."""
        nc = Q.shape[0]
        ne = de_cells.shape[0]
        phi = np.ones((nc, 17))
        for c in range(nc):
            for v in range(17):
                qmin = Q[c, v]
                qmax = qmin
                for s in range(4):
                    qn = Q[cell_neighbors[c, s], v]
                    if qn < qmin:
                        qmin = qn
                    if qn > qmax:
                        qmax = qn
                p = 1.0
                for s in range(4):
                    e = cell_de[c, s]
                    if e >= ne:
                        continue
                    if cell_de_sign[c, s] > 0.0:
                        dx = d_i[e, 0]
                        dy = d_i[e, 1]
                    else:
                        dx = d_j[e, 0]
                        dy = d_j[e, 1]
                    delta = g0[c, v, 0] * dx + g0[c, v, 1] * dy
                    if abs(delta) > tiny[v]:
                        if delta > 0.0:
                            r = (qmax - Q[c, v]) / delta
                        else:
                            r = (qmin - Q[c, v]) / delta
                        if r < p:
                            p = r
                phi[c, v] = p
        QL = np.empty((ne, 17))
        QR = np.empty((ne, 17))
        for e in range(ne):
            ci = de_cells[e, 0]
            cj = de_cells[e, 1]
            for v in range(17):
                dl = phi[ci, v] * (g0[ci, v, 0] * d_i[e, 0]
                                   + g0[ci, v, 1] * d_i[e, 1])
                dr = phi[cj, v] * (g0[cj, v, 0] * d_j[e, 0]
                                   + g0[cj, v, 1] * d_j[e, 1])
                QL[e, v] = bases[ci, v] + dl
                QR[e, v] = bases[cj, v] + dr
        return QL, QR

    @nb.njit(cache=True, fastmath=False)
    def _axpy(a, k, s, out):
        for i in range(3):
            for j in range(3):
                out[i, j] = a[i, j] + s * k[i, j]

    @nb.njit(cache=True, fastmath=False)
    def _rhs(a, kc, out):
        G00 = a[0, 0]**2 + a[1, 0]**2 + a[2, 0]**2
        G01 = a[0, 0] * a[0, 1] + a[1, 0] * a[1, 1] + a[2, 0] * a[2, 1]
        G02 = a[0, 0] * a[0, 2] + a[1, 0] * a[1, 2] + a[2, 0] * a[2, 2]
        G11 = a[0, 1]**2 + a[1, 1]**2 + a[2, 1]**2
        G12 = a[0, 1] * a[0, 2] + a[1, 1] * a[1, 2] + a[2, 1] * a[2, 2]
        G22 = a[0, 2]**2 + a[1, 2]**2 + a[2, 2]**2
        tr3 = (G00 + G11 + G22) / 3.0
        D00 = G00 - tr3
        D11 = G11 - tr3
        D22 = G22 - tr3
        for i in range(3):
            out[i, 0] = -kc * (a[i, 0] * D00 + a[i, 1] * G01 + a[i, 2] * G02)
            out[i, 1] = -kc * (a[i, 0] * G01 + a[i, 1] * D11 + a[i, 2] * G12)
            out[i, 2] = -kc * (a[i, 0] * G02 + a[i, 1] * G12 + a[i, 2] * D22)

    @nb.njit(cache=True, fastmath=False)
    def rk4_distortion(A, k_coef, dt, n_sub):
        """Classical RK4 on dA/dt = -k A Gdev(A^T A), frozen coefficient."""
        n = A.shape[0]
        out = np.empty_like(A)
        a = np.empty((3, 3))
        k1 = np.empty((3, 3))
        k2 = np.empty((3, 3))
        k3 = np.empty((3, 3))
        k4 = np.empty((3, 3))
        tmp = np.empty((3, 3))
        h = dt / n_sub
        for c in range(n):
            for i in range(3):
                for j in range(3):
                    a[i, j] = A[c, i, j]
            kc = k_coef[c]
            for _ in range(n_sub):
                _rhs(a, kc, k1)
                _axpy(a, k1, 0.5 * h, tmp)
                _rhs(tmp, kc, k2)
                _axpy(a, k2, 0.5 * h, tmp)
                _rhs(tmp, kc, k3)
                _axpy(a, k3, h, tmp)
                _rhs(tmp, kc, k4)
                for i in range(3):
                    for j in range(3):
                        a[i, j] += (h / 6.0) * (k1[i, j] + 2.0 * k2[i, j]
                                                + 2.0 * k3[i, j] + k4[i, j])
            for i in range(3):
                for j in range(3):
                    out[c, i, j] = a[i, j]
        return out
