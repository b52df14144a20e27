"""Compiled per-vertex kernels of the fast-sweeping scheme.

Arrays are indexed ``[i, j]``; one-dimensional problems use a single column
(``j == 0``) with zero second-axis drift.  Jump targets are stored as the
lower cell corner ``(ti, tj)`` and local weights ``(wx, wy)`` per node.
"""
import numpy as np
from numba import njit

EXP_CAP = 700.0


@njit(cache=True)
def _interp(F, i0, j0, wx, wy):
    v = (1.0 - wx) * F[i0, j0]
    if wx > 0.0:
        v += wx * F[i0 + 1, j0]
    if wy > 0.0:
        v = (1.0 - wy) * v + wy * ((1.0 - wx) * F[i0, j0 + 1]
                                  + (wx * F[i0 + 1, j0 + 1] if wx > 0.0 else 0.0))
    return v


@njit(cache=True)
def upwind_node(F, i, j, A1, A2):
    """Neighbour contribution to H and coefficient contribution to C.

    Returns ``(h, c, flagged)``; a missing upwind neighbour zeroes the term.
    """
    n1 = F.shape[0] - 1
    n2 = F.shape[1] - 1
    h = 0.0
    c = 0.0
    flagged = False
    a = A1[i, j]
    if a > 0.0:
        if i < n1:
            h += a * F[i + 1, j]
            c += a
        else:
            flagged = True
    elif a < 0.0:
        if i > 0:
            h -= a * F[i - 1, j]
            c -= a
        else:
            flagged = True
    a = A2[i, j]
    if a > 0.0:
        if j < n2:
            h += a * F[i, j + 1]
            c += a
        else:
            flagged = True
    elif a < 0.0:
        if j > 0:
            h -= a * F[i, j - 1]
            c -= a
        else:
            flagged = True
    return h, c, flagged


@njit(cache=True)
def control_node(F, i, j, Gp, stride, harvest, CM, RM, prune):
    """Minimum of ``F[i-k, j-l] + Gp[k, l]`` over ``k <= i``, ``l <= j``.

    Candidates are visited with ascending k then l and only strict
    improvements are accepted, so ties go to the smallest k, then l.
    With ``prune`` the search stops early using the lower bounds
    ``CM[i', j'] = min F[i', :j'+1]`` and ``RM[i', j] = min CM[:i'+1, j]``,
    which must be current for every target already visited in the sweep.
    Pruning is exact only for a cost table nondecreasing in k and l.
    """
    kmax = i if harvest else 0
    lmax = j if harvest else 0
    best = np.inf
    bk = 0
    bl = 0
    k = 0
    while True:
        ii = i - k
        if prune and k > 0 and RM[ii, j] + Gp[k, 0] >= best:
            break
        l = 0
        while True:
            g = Gp[k, l]
            if prune and (k > 0 or l > 0) and CM[ii, j - l] + g >= best:
                break
            v = F[ii, j - l] + g
            if v < best:
                best = v
                bk = k
                bl = l
            if l >= lmax:
                break
            l += stride
            if l > lmax:
                l = lmax
        if k >= kmax:
            break
        k += stride
        if k > kmax:
            k = kmax
    return best, bk, bl


@njit(cache=True)
def prefix_minima(F):
    n1, n2 = F.shape
    CM = np.empty((n1, n2))
    RM = np.empty((n1, n2))
    for j in range(n2):
        for i in range(n1):
            CM[i, j] = F[i, j] if j == 0 else min(CM[i, j - 1], F[i, j])
            RM[i, j] = CM[i, j] if i == 0 else min(RM[i - 1, j], CM[i, j])
    return CM, RM


@njit(cache=True)
def jump_node(F, i, j, ti, tj, wx, wy, qw, psi, eps, robust, phi_out):
    """Jump contributions ``(sum phi p Fhat, sum (D(phi)/psi + phi) p, saturated)``.

    ``phi_out`` receives the distortion per quadrature node.
    """
    Fc = F[i, j]
    denom = Fc if Fc > eps else eps
    hsum = 0.0
    csum = 0.0
    sat = False
    for m in range(qw.shape[0]):
        Fh = _interp(F, ti[i, j, m], tj[i, j, m], wx[i, j, m], wy[i, j, m])
        if robust:
            e = psi * (Fh - Fc) / denom
            if e > EXP_CAP:
                e = EXP_CAP
                sat = True
            elif e < -EXP_CAP:
                e = -EXP_CAP
                sat = True
            phi = np.exp(e)
            D = phi * e - phi + 1.0
        else:
            phi = 1.0
            D = 0.0
        phi_out[m] = phi
        hsum += qw[m] * phi * Fh
        csum += qw[m] * (D / psi + phi)
    return hsum, csum, sat


@njit(cache=True)
def assemble_base(F, i, j, A1, A2, FP, ti, tj, wx, wy, qw, delta, lamN, psi, eps, robust, phi):
    """H and C without the intervention term."""
    h, c, bflag = upwind_node(F, i, j, A1, A2)
    H = FP[i, j] + h
    C = delta + c
    sat = False
    if lamN > 0.0:
        hj, cj, sat = jump_node(F, i, j, ti, tj, wx, wy, qw, psi, eps, robust, phi)
        H += lamN * hj
        C += lamN * cj
    else:
        phi[:] = 1.0
    return H, C, bflag, sat


@njit(cache=True)
def assemble_node(F, i, j, A1, A2, FP, Gp, ti, tj, wx, wy, qw,
                  delta, lamN, lamZ, psi, eps, robust, stride, harvest, CM, RM, prune, phi):
    H, C, bflag, sat = assemble_base(F, i, j, A1, A2, FP, ti, tj, wx, wy, qw, delta, lamN,
                                     psi, eps, robust, phi)
    k = 0
    l = 0
    if lamZ > 0.0:
        v, k, l = control_node(F, i, j, Gp, stride, harvest, CM, RM, prune)
        H += lamZ * v
        C += lamZ
    return H, C, k, l, bflag, sat


@njit(cache=True)
def diagonal_node(F, i, j, Gs, Dc, Kc, Dp, Kp):
    """Intervention minimum when the cost depends on k + l only.

    ``Dc[i', s]`` / ``Dp[i', s]`` hold, for the current / previous row, the
    smallest target value at L1 distance s from (i', row) and ``Kc``/``Kp``
    the smallest k attaining it.  Targets at distance s from (i, j) are at
    distance s - 1 from (i-1, j) or (i, j-1), which gives an O(i + j)
    recursion.  Ties resolve to the smallest k, then l.
    """
    best = F[i, j] + Gs[0]
    bk = 0
    bl = 0
    for s in range(1, i + j + 1):
        v = np.inf
        kk = 0
        if i >= 1 and s - 1 <= i - 1 + j:
            v = Dc[i - 1, s - 1]
            kk = Kc[i - 1, s - 1] + 1
        if j >= 1 and s - 1 <= i + j - 1:
            w = Dp[i, s - 1]
            kw = Kp[i, s - 1]
            if w < v or (w == v and kw < kk):
                v = w
                kk = kw
        Dc[i, s] = v
        Kc[i, s] = kk
        cand = v + Gs[s]
        if cand < best or (cand == best and (kk < bk or (kk == bk and s - kk < bl))):
            best = cand
            bk = kk
            bl = s - kk
    return best, bk, bl


@njit(cache=True)
def diagonal_field(F, Gs):
    """Intervention minimum and argmin at every vertex of a fixed field."""
    n1, n2 = F.shape
    S = n1 + n2
    Dc = np.empty((n1, S))
    Kc = np.zeros((n1, S), dtype=np.int64)
    Dp = np.empty((n1, S))
    Kp = np.zeros((n1, S), dtype=np.int64)
    V = np.empty((n1, n2))
    K = np.zeros((n1, n2), dtype=np.int64)
    L = np.zeros((n1, n2), dtype=np.int64)
    for j in range(n2):
        for i in range(n1):
            V[i, j], K[i, j], L[i, j] = diagonal_node(F, i, j, Gs, Dc, Kc, Dp, Kp)
            Dc[i, 0] = F[i, j]
            Kc[i, 0] = 0
        Dc, Dp = Dp, Dc
        Kc, Kp = Kp, Kc
    return V, K, L


@njit(cache=True)
def sweep_diagonal(F, A1, A2, FP, Gs, ti, tj, wx, wy, qw,
                   delta, lamN, lamZ, psi, eps, robust, gamma):
    """Gauss-Seidel pass using the diagonal recursion for the intervention term."""
    n1, n2 = F.shape
    S = n1 + n2
    Dc = np.empty((n1, S))
    Kc = np.zeros((n1, S), dtype=np.int64)
    Dp = np.empty((n1, S))
    Kp = np.zeros((n1, S), dtype=np.int64)
    phi = np.empty(qw.shape[0])
    err = 0.0
    bflag = False
    sflag = False
    for j in range(n2):
        for i in range(n1):
            H, C, bf, sf = assemble_base(F, i, j, A1, A2, FP, ti, tj, wx, wy, qw, delta, lamN,
                                         psi, eps, robust, phi)
            v, k, l = diagonal_node(F, i, j, Gs, Dc, Kc, Dp, Kp)
            H += lamZ * v
            C += lamZ
            bflag |= bf
            sflag |= sf
            new = gamma * H / C + (1.0 - gamma) * F[i, j]
            if not np.isfinite(new):
                return err, i, j, bflag, sflag
            d = abs(new - F[i, j])
            if d > err:
                err = d
            F[i, j] = new
            Dc[i, 0] = new
            Kc[i, 0] = 0
        Dc, Dp = Dp, Dc
        Kc, Kp = Kp, Kc
    return err, -1, -1, bflag, sflag


@njit(cache=True)
def sweep(F, A1, A2, FP, Gp, ti, tj, wx, wy, qw,
          delta, lamN, lamZ, psi, eps, robust, stride, harvest, prune, gamma):
    """One Gauss-Seidel pass, j outer and i inner, updating F in place.

    Returns ``(max change, bad_i, bad_j, boundary_flag, saturation_flag)``;
    ``bad_i >= 0`` marks the first vertex that produced a non-finite value.
    """
    n1 = F.shape[0]
    n2 = F.shape[1]
    phi = np.empty(qw.shape[0])
    CM = np.empty((n1, n2))
    RM = np.empty((n1, n2))
    err = 0.0
    bflag = False
    sflag = False
    for j in range(n2):
        for i in range(n1):
            H, C, k, l, bf, sf = assemble_node(
                F, i, j, A1, A2, FP, Gp, ti, tj, wx, wy, qw, delta, lamN, lamZ, psi,
                eps, robust, stride, harvest, CM, RM, prune, phi)
            bflag |= bf
            sflag |= sf
            new = gamma * H / C + (1.0 - gamma) * F[i, j]
            if not np.isfinite(new):
                return err, i, j, bflag, sflag
            d = abs(new - F[i, j])
            if d > err:
                err = d
            F[i, j] = new
            CM[i, j] = new if j == 0 else min(CM[i, j - 1], new)
            RM[i, j] = CM[i, j] if i == 0 else min(RM[i - 1, j], CM[i, j])
    return err, -1, -1, bflag, sflag


@njit(cache=True)
def extract(F, A1, A2, FP, Gp, ti, tj, wx, wy, qw,
            delta, lamN, lamZ, psi, eps, robust, stride, harvest, prune, given, GV, GK, GL):
    """Jacobi evaluation at a fixed field: H/C, argmin controls, phi and delta_tilde.

    With ``given`` the intervention minimum and argmin are read from
    ``GV``/``GK``/``GL`` instead of being searched.
    """
    n1, n2 = F.shape
    M = qw.shape[0]
    update = np.empty((n1, n2))
    K = np.zeros((n1, n2), dtype=np.int64)
    L = np.zeros((n1, n2), dtype=np.int64)
    PHI = np.ones((n1, n2, M))
    DT = np.zeros((n1, n2))
    CM, RM = prefix_minima(F)
    phi = np.empty(M)
    for j in range(n2):
        for i in range(n1):
            H, C, bf, sf = assemble_base(F, i, j, A1, A2, FP, ti, tj, wx, wy, qw, delta, lamN,
                                         psi, eps, robust, phi)
            if lamZ > 0.0:
                if given:
                    v, k, l = GV[i, j], GK[i, j], GL[i, j]
                else:
                    v, k, l = control_node(F, i, j, Gp, stride, harvest, CM, RM, prune)
                H += lamZ * v
                C += lamZ
                K[i, j] = k
                L[i, j] = l
            update[i, j] = H / C
            s = 0.0
            for m in range(M):
                PHI[i, j, m] = phi[m]
                if lamN > 0.0 and robust:
                    p = phi[m]
                    s += qw[m] * (p * np.log(p) - p + 1.0)
            DT[i, j] = lamN / psi * s
    return update, K, L, PHI, DT


@njit(cache=True)
def residual_node(F, i, j, A1, A2, Gp, ti, tj, wx, wy, qw,
                  delta, lamN, lamZ, psi, eps, robust, stride, harvest, CM, RM, prune,
                  trunc, omega, given, gv):
    """Monotone form G (or the truncated G' when ``trunc``) at one vertex.

    With ``given`` the intervention minimum ``gv`` is used instead of a search.
    """
    Fc = F[i, j]
    denom = Fc if Fc > eps else eps
    s = 0.0
    plain = 0.0
    if lamN > 0.0:
        for m in range(qw.shape[0]):
            Fh = _interp(F, ti[i, j, m], tj[i, j, m], wx[i, j, m], wy[i, j, m])
            diff = Fc - Fh
            if trunc:
                if diff > omega:
                    diff = omega
                elif diff < -omega:
                    diff = -omega
            if robust:
                e = -psi * diff / denom
                if e > EXP_CAP:
                    e = EXP_CAP
                elif e < -EXP_CAP:
                    e = -EXP_CAP
                s += qw[m] * (1.0 - np.exp(e)) / psi
            else:
                # phi = 1: plain expectation of the increment
                plain += qw[m] * diff
    centre = Fc if not trunc else max(Fc, 0.0)
    G = (delta + lamZ + lamN * s) * centre + lamN * plain
    h, c, bflag = upwind_node(F, i, j, A1, A2)
    G += c * Fc - h
    if lamZ > 0.0:
        if given:
            v = gv
        else:
            v, k, l = control_node(F, i, j, Gp, stride, harvest, CM, RM, prune)
        G -= lamZ * v
    return G


@njit(cache=True)
def residual_field(F, A1, A2, Gp, ti, tj, wx, wy, qw,
                   delta, lamN, lamZ, psi, eps, robust, stride, harvest, prune, trunc, omega,
                   given, GV):
    n1, n2 = F.shape
    out = np.empty((n1, n2))
    CM, RM = prefix_minima(F)
    for j in range(n2):
        for i in range(n1):
            out[i, j] = residual_node(F, i, j, A1, A2, Gp, ti, tj, wx, wy, qw, delta, lamN,
                                      lamZ, psi, eps, robust, stride, harvest, CM, RM, prune,
                                      trunc, omega, given, GV[i, j])
    return out
