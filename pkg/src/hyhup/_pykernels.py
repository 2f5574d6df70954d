"""Pure numpy versions of the compiled kernels (same contracts, same status codes).

Used when the extension module is unavailable or when ``HYHUP_BACKEND=python``.
Loops run over columns; each column step is vectorized over rows.
"""

import numpy as np

BACKEND = "python"


def _block_update(L, A, sigma, T, tau_inv):
    kb = L.shape[0]
    for k in range(kb):
        lam = L[k, k]
        a = A[k, :]
        alpha2 = float(np.dot(sigma * a, a))
        s = lam * lam + alpha2
        if not s > 0.0:
            return k
        lt = np.sqrt(s)
        if lam < 0.0:
            lt = -lt
        beta = lam + lt
        if beta == 0.0:
            return -(2 + k)
        inv_beta = 1.0 / beta
        beta2 = beta * beta
        ti = 2.0 * beta2 / (alpha2 + beta2)
        b = a * inv_beta
        A[k, :] = b
        sb = sigma * b
        ell = L[k + 1 :, k]
        Ap = A[k + 1 :, :]
        w = ti * (ell + Ap @ sb)
        L[k + 1 :, k] = w - ell
        Ap -= np.outer(w, b)
        L[k, k] = lt
        T[:k, k] = A[:k, :] @ sb
        T[k + 1 :, k] = 0.0
        T[k, k] = (alpha2 + beta2) / (2.0 * beta2)
        tau_inv[k] = ti
    return -1


def _tail_apply(L21, A2, sigma, B, T, tau_inv):
    l, kb = L21.shape
    if l == 0 or kb == 0:
        return
    X = L21 + (A2 * sigma) @ B.T
    for p in range(kb):
        if p:
            X[:, p] -= X[:, :p] @ T[:p, p]
        X[:, p] *= tau_inv[p]
    A2 -= X @ B
    L21[...] = X - L21


def update_cols(L, A, sigma, r, c0, c1):
    n = L.shape[0]
    m = A.shape[1]
    if m == 0 or c0 >= c1:
        return -1
    T = np.zeros((r, r), order="F")
    tau_inv = np.zeros(r)
    c = c0
    while c < c1:
        kb = min(r, c1 - c)
        Tb = T[:kb, :kb]
        status = _block_update(L[c : c + kb, c : c + kb], A[c : c + kb, :], sigma, Tb, tau_inv)
        if status != -1:
            return status + c if status >= 0 else status - c
        _tail_apply(L[c + kb :, c : c + kb], A[c + kb :, :], sigma, A[c : c + kb, :], Tb, tau_inv)
        c += kb
    return -1


def update_block(L11, A1, sigma, T, tau_inv):
    return _block_update(L11, A1, sigma, T, tau_inv)


def apply_block(L21, A2, sigma, B, T, tau_inv):
    _tail_apply(L21, A2, sigma, B, T, tau_inv)


def potrf(H):
    n = H.shape[0]
    for k in range(n):
        d = H[k, k]
        if not d > 0.0:
            return k
        d = np.sqrt(d)
        H[k, k] = d
        col = H[k + 1 :, k]
        col *= 1.0 / d
        # only the lower triangle of the trailing block is meaningful
        H[k + 1 :, k + 1 :] -= np.tril(np.outer(col, col))
    return -1


def syrk_acc(H, A, sigma):
    if H.shape[0] == 0 or A.shape[1] == 0:
        return
    H += np.tril((A * sigma) @ A.T)


def factor_stage(H, Hl, Ft, Lnext, off, Gt, sigma):
    V = Ft @ np.tril(Lnext[off:, off:])
    H[...] = Hl + (Gt * sigma) @ Gt.T + V @ V.T
    status = potrf(H)
    H[np.triu_indices(H.shape[0], 1)] = 0.0
    return status


def update_stage(L, nu, U, S, r, Ftprev=None, Unext=None, Phi=None):
    nz, k = U.shape
    if k == 0:
        return -1
    status = update_cols(L, U, S, r, 0, nu)
    if status != -1:
        return status
    if Phi is not None:
        Phi[...] = U[nu:]
    if Ftprev is not None and Unext is not None:
        Unext[:, :k] = Ftprev @ U[nu:]
    return update_cols(L, U, S, r, nu, nz)


def factor_chain(Hs, Hl, Ft, Gt, sigma, Lnext, off):
    J = Hs.shape[2]
    nu = Hs.shape[0] - Ft[0].shape[1]
    for j in range(J - 1, -1, -1):
        H = Hs[:, :, j]
        status = factor_stage(H, Hl[j], Ft[j], Lnext, off, Gt[j], sigma[j])
        if status != -1:
            return status, j
        Lnext, off = H, nu
    return -1, -1


def update_chain(Lnew, nu, j_top, Lold, Gt, Ft, pos, delta, offs, cut, U, S, k, r, Phi=None):
    J = Lnew.shape[2]
    j_lo = j_top + 1 - J
    Unext = np.empty_like(U)
    for j in range(j_top, j_lo - 1, -1):
        add = slice(cut[j], cut[j + 1])
        kj = k + cut[j + 1] - cut[j]
        U[:, k:kj] = Gt[j][:, pos[add] - offs[j]]
        S[k:kj] = delta[add]
        k = kj
        L = Lnew[:, :, j - j_lo]
        L[...] = Lold[j]
        if k == 0:
            continue
        status = update_stage(L, nu, U[:, :k], S[:k], r,
                              Ft[j - 1] if j else None, Unext if j else None,
                              Phi[j] if Phi is not None else None)
        if status != -1:
            return status, j
        U, Unext = Unext, U
    return -1, -1


def update_terminal(LxxN, LxxN_old, GNt, pos, delta, off, Ft_last, U, S, r, Phi=None):
    kN = pos.shape[0]
    if kN and not (off <= pos.min() and pos.max() < off + GNt.shape[1]):
        raise ValueError("change index outside its stage")
    W = np.asfortranarray(GNt[:, pos - off])
    S[:kN] = delta
    if Phi is not None:
        Phi[...] = W
    if Ft_last is not None:
        np.matmul(Ft_last, W, out=U[:, :kN])
    LxxN[...] = LxxN_old
    return update_cols(LxxN, W, S[:kN], r, 0, LxxN.shape[0])
