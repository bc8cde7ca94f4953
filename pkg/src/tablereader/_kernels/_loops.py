"""Loop kernels for the hot inner computations.

Every function here is written in the numpy subset that numba's nopython
mode accepts, so the package can compile them with ``@njit`` or run them
as plain Python (see ``tablereader._kernels``).  The recurrences are
inherently sequential in both grid axes, which is why they live here as
explicit loops instead of vectorized numpy.

Grid convention: arrays are (rows, cols, channels), scanned column-first
top-down/left-to-right.  Direction variants are handled by the callers
via axis flips, so each kernel only implements the canonical scan whose
neighbors are (row-1, col) and (row, col-1).
"""

import numpy as np

_NEG = -1.0e30


def conv2d_bank(img, kernels):
    """Sliding dot product of `img` (H,W) with each kernel, zero-padded
    to keep the output the same size.  Returns (H, W, n_kernels)."""
    H, W = img.shape
    C, kh, kw = kernels.shape
    ry = kh // 2
    rx = kw // 2
    out = np.zeros((H, W, C), img.dtype)
    for c in range(C):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for a in range(kh):
                    ii = i + a - ry
                    if ii < 0 or ii >= H:
                        continue
                    for b in range(kw):
                        jj = j + b - rx
                        if 0 <= jj < W:
                            acc += img[ii, jj] * kernels[c, a, b]
                out[i, j, c] = acc
    return out


def leaky_forward(x, W, Uy, Ux, b):
    """Canonical-direction pass of the convex-gated leaky integrator.

    Per position, with sy/sx the already-computed neighbor states (zero
    outside the grid):

        a      = W @ input + Uy @ sy + Ux @ sx + b          # (4U,)
        cand   = tanh(a[0:U])
        g      = softmax(a[U:2U], a[2U:3U], a[3U:4U])        # per unit
        state  = g_y * sy + g_x * sx + g_in * cand

    x: (H, W, D); W: (4U, D); Uy, Ux: (4U, U); b: (4U,).
    Returns state (H, W, U), gates (H, W, 3, U) ordered (g_in, g_y, g_x),
    and cand (H, W, U).
    """
    H, Wd, D = x.shape
    U = Uy.shape[1]
    state = np.zeros((H, Wd, U), x.dtype)
    gates = np.zeros((H, Wd, 3, U), x.dtype)
    cand = np.zeros((H, Wd, U), x.dtype)
    zero = np.zeros(U, x.dtype)
    for j in range(Wd):
        for i in range(H):
            sy = state[i - 1, j] if i > 0 else zero
            sx = state[i, j - 1] if j > 0 else zero
            a = W @ x[i, j] + Uy @ sy + Ux @ sx + b
            for u in range(U):
                c = np.tanh(a[u])
                ain = a[U + u]
                ay = a[2 * U + u]
                ax = a[3 * U + u]
                m = max(ain, max(ay, ax))
                ein = np.exp(ain - m)
                ey = np.exp(ay - m)
                ex = np.exp(ax - m)
                z = ein + ey + ex
                gin = ein / z
                gy = ey / z
                gx = ex / z
                cand[i, j, u] = c
                gates[i, j, 0, u] = gin
                gates[i, j, 1, u] = gy
                gates[i, j, 2, u] = gx
                state[i, j, u] = gy * sy[u] + gx * sx[u] + gin * c
    return state, gates, cand


def leaky_backward(x, W, Uy, Ux, state, gates, cand, d_out):
    """Reverse-mode pass matching leaky_forward.

    d_out is the gradient at the state grid.  Returns (dx, dW, dUy, dUx,
    db).  Traverses the grid in reverse scan order so every position's
    downstream contributions are accumulated before it is processed.
    """
    H, Wd, D = x.shape
    U = Uy.shape[1]
    dx = np.zeros_like(x)
    dW = np.zeros_like(W)
    dUy = np.zeros_like(Uy)
    dUx = np.zeros_like(Ux)
    db = np.zeros(4 * U, x.dtype)
    ds = d_out.copy()
    dA = np.zeros(4 * U, x.dtype)
    zero = np.zeros(U, x.dtype)
    for j in range(Wd - 1, -1, -1):
        for i in range(H - 1, -1, -1):
            sy = state[i - 1, j] if i > 0 else zero
            sx = state[i, j - 1] if j > 0 else zero
            for u in range(U):
                g_in = gates[i, j, 0, u]
                g_y = gates[i, j, 1, u]
                g_x = gates[i, j, 2, u]
                c = cand[i, j, u]
                d = ds[i, j, u]
                dgin = d * c
                dgy = d * sy[u]
                dgx = d * sx[u]
                # softmax backward over the three gates of this unit
                dot = g_in * dgin + g_y * dgy + g_x * dgx
                dA[U + u] = g_in * (dgin - dot)
                dA[2 * U + u] = g_y * (dgy - dot)
                dA[3 * U + u] = g_x * (dgx - dot)
                dA[u] = d * g_in * (1.0 - c * c)
                # direct convex-mix paths into the neighbor states
                if i > 0:
                    ds[i - 1, j, u] += d * g_y
                if j > 0:
                    ds[i, j - 1, u] += d * g_x
            dW += np.outer(dA, x[i, j])
            dUy += np.outer(dA, sy)
            dUx += np.outer(dA, sx)
            db += dA
            dx[i, j] = W.T @ dA
            if i > 0:
                ds[i - 1, j] += Uy.T @ dA
            if j > 0:
                ds[i, j - 1] += Ux.T @ dA
    return dx, dW, dUy, dUx, db


def mdlstm_forward(x, W, Uy, Ux, b):
    """Canonical-direction pass of a two-dimensional LSTM with one forget
    gate per axis:

        a    = W @ input + Uy @ hy + Ux @ hx + b             # (5U,)
        z    = tanh(a[0:U])        cell candidate
        gi   = sigm(a[U:2U])       input gate
        fy   = sigm(a[2U:3U])      y-axis forget gate
        fx   = sigm(a[3U:4U])      x-axis forget gate
        go   = sigm(a[4U:5U])      output gate
        cell = gi * z + fy * cell_y + fx * cell_x
        h    = go * tanh(cell)

    Returns h (H, W, U), cell (H, W, U), acts (H, W, 5, U) holding
    (z, gi, fy, fx, go).
    """
    H, Wd, D = x.shape
    U = Uy.shape[1]
    h = np.zeros((H, Wd, U), x.dtype)
    cell = np.zeros((H, Wd, U), x.dtype)
    acts = np.zeros((H, Wd, 5, U), x.dtype)
    zero = np.zeros(U, x.dtype)
    for j in range(Wd):
        for i in range(H):
            hy = h[i - 1, j] if i > 0 else zero
            hx = h[i, j - 1] if j > 0 else zero
            cy = cell[i - 1, j] if i > 0 else zero
            cx = cell[i, j - 1] if j > 0 else zero
            a = W @ x[i, j] + Uy @ hy + Ux @ hx + b
            for u in range(U):
                z = np.tanh(a[u])
                gi = 1.0 / (1.0 + np.exp(-a[U + u]))
                fy = 1.0 / (1.0 + np.exp(-a[2 * U + u]))
                fx = 1.0 / (1.0 + np.exp(-a[3 * U + u]))
                go = 1.0 / (1.0 + np.exp(-a[4 * U + u]))
                cc = gi * z + fy * cy[u] + fx * cx[u]
                acts[i, j, 0, u] = z
                acts[i, j, 1, u] = gi
                acts[i, j, 2, u] = fy
                acts[i, j, 3, u] = fx
                acts[i, j, 4, u] = go
                cell[i, j, u] = cc
                h[i, j, u] = go * np.tanh(cc)
    return h, cell, acts


def mdlstm_backward(x, W, Uy, Ux, h, cell, acts, d_out):
    """Reverse-mode pass matching mdlstm_forward."""
    H, Wd, D = x.shape
    U = Uy.shape[1]
    dx = np.zeros_like(x)
    dW = np.zeros_like(W)
    dUy = np.zeros_like(Uy)
    dUx = np.zeros_like(Ux)
    db = np.zeros(5 * U, x.dtype)
    dh = d_out.copy()
    dcell = np.zeros((H, Wd, U), x.dtype)
    dA = np.zeros(5 * U, x.dtype)
    zero = np.zeros(U, x.dtype)
    for j in range(Wd - 1, -1, -1):
        for i in range(H - 1, -1, -1):
            cy = cell[i - 1, j] if i > 0 else zero
            cx = cell[i, j - 1] if j > 0 else zero
            for u in range(U):
                z = acts[i, j, 0, u]
                gi = acts[i, j, 1, u]
                fy = acts[i, j, 2, u]
                fx = acts[i, j, 3, u]
                go = acts[i, j, 4, u]
                tc = np.tanh(cell[i, j, u])
                dhu = dh[i, j, u]
                dgo = dhu * tc
                dc = dhu * go * (1.0 - tc * tc) + dcell[i, j, u]
                dgi = dc * z
                dz = dc * gi
                dfy = dc * cy[u]
                dfx = dc * cx[u]
                if i > 0:
                    dcell[i - 1, j, u] += dc * fy
                if j > 0:
                    dcell[i, j - 1, u] += dc * fx
                dA[u] = dz * (1.0 - z * z)
                dA[U + u] = dgi * gi * (1.0 - gi)
                dA[2 * U + u] = dfy * fy * (1.0 - fy)
                dA[3 * U + u] = dfx * fx * (1.0 - fx)
                dA[4 * U + u] = dgo * go * (1.0 - go)
            hy = h[i - 1, j] if i > 0 else zero
            hx = h[i, j - 1] if j > 0 else zero
            dW += np.outer(dA, x[i, j])
            dUy += np.outer(dA, hy)
            dUx += np.outer(dA, hx)
            db += dA
            dx[i, j] = W.T @ dA
            if i > 0:
                dh[i - 1, j] += Uy.T @ dA
            if j > 0:
                dh[i, j - 1] += Ux.T @ dA
    return dx, dW, dUy, dUx, db


def ctc_alphas(logp, ext, blank):
    """Log-space forward recursion over the blank-interleaved labels.

    logp: (K, T) log column probabilities; ext: (S,) extended labels.
    Returns (log_alpha (S, T), log-likelihood of the label sequence).
    Unreachable entries stay at the -1e30 floor.
    """
    T = logp.shape[1]
    S = ext.shape[0]
    la = np.full((S, T), _NEG, logp.dtype)
    la[0, 0] = logp[ext[0], 0]
    if S > 1:
        la[1, 0] = logp[ext[1], 0]
    for t in range(1, T):
        lo = S - 2 * (T - t)
        if lo < 0:
            lo = 0
        hi = 2 * t + 2
        if hi > S:
            hi = S
        for s in range(lo, hi):
            m = la[s, t - 1]
            if s >= 1 and la[s - 1, t - 1] > m:
                m = la[s - 1, t - 1]
            skip = s >= 2 and ext[s] != blank and ext[s] != ext[s - 2]
            if skip and la[s - 2, t - 1] > m:
                m = la[s - 2, t - 1]
            if m <= _NEG * 0.5:
                continue
            acc = np.exp(la[s, t - 1] - m)
            if s >= 1:
                acc += np.exp(la[s - 1, t - 1] - m)
            if skip:
                acc += np.exp(la[s - 2, t - 1] - m)
            la[s, t] = m + np.log(acc) + logp[ext[s], t]
    m = la[S - 1, T - 1]
    if S > 1 and la[S - 2, T - 1] > m:
        m = la[S - 2, T - 1]
    if m <= _NEG * 0.5:
        return la, _NEG
    acc = np.exp(la[S - 1, T - 1] - m)
    if S > 1:
        acc += np.exp(la[S - 2, T - 1] - m)
    return la, m + np.log(acc)


def ctc_betas(logp, ext, blank):
    """Log-space backward recursion; beta excludes the emission at its
    own timestep, so alpha[s,t] + beta[s,t] sums to the sequence
    log-probability at every t."""
    T = logp.shape[1]
    S = ext.shape[0]
    lb = np.full((S, T), _NEG, logp.dtype)
    lb[S - 1, T - 1] = 0.0
    if S > 1:
        lb[S - 2, T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        for s in range(S - 1, -1, -1):
            t0 = lb[s, t + 1] + logp[ext[s], t + 1]
            m = t0
            t1 = _NEG
            if s + 1 < S:
                t1 = lb[s + 1, t + 1] + logp[ext[s + 1], t + 1]
                if t1 > m:
                    m = t1
            t2 = _NEG
            if s + 2 < S and ext[s + 2] != blank and ext[s + 2] != ext[s]:
                t2 = lb[s + 2, t + 1] + logp[ext[s + 2], t + 1]
                if t2 > m:
                    m = t2
            if m <= _NEG * 0.5:
                continue
            acc = np.exp(t0 - m)
            if t1 > _NEG * 0.5:
                acc += np.exp(t1 - m)
            if t2 > _NEG * 0.5:
                acc += np.exp(t2 - m)
            lb[s, t] = m + np.log(acc)
    return lb
