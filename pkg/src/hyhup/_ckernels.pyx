# cython: language_level=3
"""Compiled kernels for hyperbolic Householder factorization updates.

Thin typed wrappers over the C micro-kernels in ``_hyh_micro.h``. Every
routine works in place on column-major float64 buffers, runs without the
GIL, and returns an integer status instead of raising:

    -1          success
    k >= 0      not positive definite at column k
    -(2 + k)    degenerate reflector pivot at column k
"""

cdef extern from "_hyh_micro.h" nogil:
    ctypedef Py_ssize_t hyh_idx
    int HYH_RMAX
    int hyh_block_update(double* L, hyh_idx ldl, hyh_idx kb,
                         double* A, hyh_idx lda, hyh_idx m,
                         const double* sigma, double* T, hyh_idx ldt,
                         double* tau_inv, double* sb, double* w)
    void hyh_tail_apply(double* L21, hyh_idx ldl, hyh_idx l, hyh_idx kb,
                        double* A2, hyh_idx lda, hyh_idx m, const double* sigma,
                        const double* B, hyh_idx ldb, const double* T, hyh_idx ldt,
                        const double* tau_inv, double* sbt)
    int hyh_update_cols(double* L, hyh_idx ldl, hyh_idx n, double* A, hyh_idx lda,
                        hyh_idx m, const double* sigma, hyh_idx r, hyh_idx c0, hyh_idx c1)
    int hyh_potrf(double* a, hyh_idx n, hyh_idx lda)
    void hyh_syrk(double* h, hyh_idx n, hyh_idx ldh, const double* a, hyh_idx lda,
                  hyh_idx m, const double* sigma)
    int hyh_riccati_factor_stage(double* h, hyh_idx nz, const double* hl,
                                 const double* ft, hyh_idx nx,
                                 const double* lnext, hyh_idx ldln,
                                 const double* gt, hyh_idx nc, const double* sigma,
                                 double* v, const double* ones)
    int hyh_riccati_update_stage(double* l, hyh_idx nz, hyh_idx nu,
                                 double* u, hyh_idx k, const double* s, hyh_idx r,
                                 const double* ftprev, double* unext, hyh_idx ldun,
                                 double* phi)
    int hyh_riccati_factor_chain(double* h, hyh_idx nz, hyh_idx nx, hyh_idx j_top,
                                 const double* const* hl, const double* const* ft,
                                 const double* const* gt, const hyh_idx* nc,
                                 const double* const* sigma,
                                 const double* lnext, hyh_idx ldln, hyh_idx* failed)
    int hyh_riccati_update_chain(double* lnew, hyh_idx nz, hyh_idx nu,
                                 hyh_idx j_top, hyh_idx j_lo,
                                 const double* const* lold, const double* const* gt,
                                 const double* const* ft,
                                 const hyh_idx* pos, const double* delta,
                                 const hyh_idx* offs, const hyh_idx* cut,
                                 double* u, double* unext, double* s, hyh_idx k,
                                 hyh_idx r, double* const* phi, hyh_idx* failed)
    int hyh_riccati_update_terminal(double* l, hyh_idx nx, const double* lold,
                                    const double* gnt, const hyh_idx* pos,
                                    const double* delta, hyh_idx kN, hyh_idx off,
                                    const double* ft, hyh_idx nz, double* u, double* s,
                                    hyh_idx r, double* phi_out, double* work)

from libc.stdlib cimport free, malloc

cimport numpy as cnp

cnp.import_array()

# change indices are passed as int64 and read as hyh_idx
assert sizeof(hyh_idx) == sizeof(long long)

BACKEND = "compiled"
RMAX = HYH_RMAX

cdef int _OOM = -(1 << 30)


cdef inline double* _ptr2(double[::1, :] a) noexcept nogil:
    if a.shape[0] == 0 or a.shape[1] == 0:
        return NULL
    return &a[0, 0]


cdef inline const double* _cptr2(const double[::1, :] a) noexcept nogil:
    if a.shape[0] == 0 or a.shape[1] == 0:
        return NULL
    return &a[0, 0]


cdef inline const double* _cptr1(const double[::1] a) noexcept nogil:
    if a.shape[0] == 0:
        return NULL
    return &a[0]


cdef int _array_ptr(object obj, int ndim, Py_ssize_t rows, Py_ssize_t cols, bint write,
                    double** out) except -1:
    # borrowed data pointer of a float64 column-major array of the given shape
    cdef cnp.ndarray a
    if not isinstance(obj, cnp.ndarray):
        raise TypeError(f"expected a numpy array, got {type(obj).__name__}")
    a = <cnp.ndarray>obj
    if (cnp.PyArray_TYPE(a) != cnp.NPY_DOUBLE or cnp.PyArray_NDIM(a) != ndim
            or not cnp.PyArray_IS_F_CONTIGUOUS(a)):
        raise ValueError("expected a column-major float64 array")
    if cnp.PyArray_DIM(a, 0) != rows or (ndim == 2 and cnp.PyArray_DIM(a, 1) != cols):
        raise ValueError("inconsistent stage dimensions")
    if write and not cnp.PyArray_ISWRITEABLE(a):
        raise ValueError("output array is read-only")
    out[0] = <double*>cnp.PyArray_DATA(a)
    return 0


cdef int _shape2(object obj, Py_ssize_t* rows, Py_ssize_t* cols) except -1:
    if not isinstance(obj, cnp.ndarray) or cnp.PyArray_NDIM(<cnp.ndarray>obj) != 2:
        raise TypeError("expected a two-dimensional numpy array")
    rows[0] = cnp.PyArray_DIM(<cnp.ndarray>obj, 0)
    cols[0] = cnp.PyArray_DIM(<cnp.ndarray>obj, 1)
    return 0


cdef cnp.ndarray _buf(object obj, int typenum, int ndim, bint write):
    # column-major array of the given type and rank; its dims are read by the caller
    if not isinstance(obj, cnp.ndarray):
        raise TypeError(f"expected a numpy array, got {type(obj).__name__}")
    cdef cnp.ndarray a = <cnp.ndarray>obj
    if (cnp.PyArray_TYPE(a) != typenum or cnp.PyArray_NDIM(a) != ndim
            or not cnp.PyArray_IS_F_CONTIGUOUS(a)):
        raise ValueError("expected a column-major array of the right type and rank")
    if write and not cnp.PyArray_ISWRITEABLE(a):
        raise ValueError("output array is read-only")
    return a


def update_cols(L, A, sigma, Py_ssize_t r, Py_ssize_t c0, Py_ssize_t c1):
    """Blocked update of columns ``c0:c1`` of ``L`` (rows ``c0:``), consuming ``A``.

    On return rows ``c0:c1`` of ``A`` hold the reflector rows B and rows
    ``c1:`` the transformed update matrix. Block sizes above ``RMAX`` are
    processed in blocks of ``RMAX``.
    """
    cdef Py_ssize_t n, m
    cdef double* pL
    cdef double* pA
    cdef double* ps
    cdef int status
    _shape2(L, &n, &m)
    _array_ptr(L, 2, n, n, True, &pL)
    _shape2(A, &n, &m)
    _array_ptr(A, 2, n, m, True, &pA)
    _array_ptr(sigma, 1, m, 0, False, &ps)
    if L.shape[0] != n:
        raise ValueError("update matrix and factor have different row counts")
    if m == 0 or c0 >= c1:
        return -1
    if not 0 <= c0 <= c1 <= n:
        raise ValueError("column range outside the factor")
    with nogil:
        status = hyh_update_cols(pL, n, n, pA, n, m, ps, r, c0, c1)
    if status == _OOM:
        raise MemoryError()
    return status


def update_block(double[::1, :] L11, double[::1, :] A1, const double[::1] sigma,
                 double[::1, :] T, double[::1] tau_inv):
    """Unblocked update of a whole square block; fills ``T`` and ``tau_inv``."""
    cdef Py_ssize_t kb = L11.shape[0]
    cdef Py_ssize_t m = A1.shape[1]
    cdef int status
    cdef double* pL = _ptr2(L11)
    cdef double* pA = _ptr2(A1)
    cdef double* pT = _ptr2(T)
    cdef const double* ps = _cptr1(sigma)
    cdef double* pt = &tau_inv[0] if kb > 0 else NULL
    cdef double* sb = <double*>malloc((m + 1) * sizeof(double))
    cdef double* w = <double*>malloc((kb + 1) * sizeof(double))
    if sb == NULL or w == NULL:
        free(sb)
        free(w)
        raise MemoryError()
    with nogil:
        status = hyh_block_update(pL, kb, kb, pA, A1.shape[0], m, ps, pT, kb, pt, sb, w)
    free(sb)
    free(w)
    return status


def apply_block(double[::1, :] L21, double[::1, :] A2, const double[::1] sigma,
                double[::1, :] B, double[::1, :] T, double[::1] tau_inv):
    """Apply the compact-WY transformation ``(B, T)`` to ``(L21 | A2)`` in place."""
    cdef Py_ssize_t l = L21.shape[0]
    cdef Py_ssize_t kb = T.shape[0]
    cdef Py_ssize_t m = A2.shape[1]
    cdef double* pL = _ptr2(L21)
    cdef double* pA = _ptr2(A2)
    cdef double* pB = _ptr2(B)
    cdef double* pT = _ptr2(T)
    cdef const double* ps = _cptr1(sigma)
    cdef double* sbt
    if l == 0 or kb == 0:
        return
    if kb > HYH_RMAX:
        raise ValueError(f"compiled apply supports at most {HYH_RMAX} reflectors per block")
    sbt = <double*>malloc((kb * m + 1) * sizeof(double))
    if sbt == NULL:
        raise MemoryError()
    with nogil:
        hyh_tail_apply(pL, l, l, kb, pA, l, m, ps, pB, kb, pT, kb, &tau_inv[0], sbt)
    free(sbt)


def potrf(H):
    """In-place right-looking Cholesky of the lower triangle of ``H``."""
    cdef Py_ssize_t n, m
    cdef double* a
    cdef int status
    _shape2(H, &n, &m)
    _array_ptr(H, 2, n, n, True, &a)
    if n == 0:
        return -1
    with nogil:
        status = hyh_potrf(a, n, n)
    return status


def syrk_acc(H, A, sigma):
    """Lower triangle of ``H`` += A diag(sigma) A^T."""
    cdef Py_ssize_t n, m
    cdef double* h
    cdef double* a
    cdef double* ps
    _shape2(H, &n, &m)
    _array_ptr(H, 2, n, n, True, &h)
    _shape2(A, &n, &m)
    _array_ptr(A, 2, n, m, False, &a)
    _array_ptr(sigma, 1, m, 0, False, &ps)
    if H.shape[0] != n:
        raise ValueError("H and A have different row counts")
    if n == 0 or m == 0:
        return
    with nogil:
        hyh_syrk(h, n, n, a, n, m, ps)


def factor_stage(double[::1, :] H, const double[::1, :] Hl, const double[::1, :] Ft,
                 const double[::1, :] Lnext, Py_ssize_t off,
                 const double[::1, :] Gt, const double[::1] sigma):
    """Stage factor ``H = chol(Hl + Gt diag(sigma) Gt^T + V V^T)`` with ``V = Ft Lnext[off:, off:]``.

    Only the lower triangle of ``Lnext[off:, off:]`` is read. Returns the
    status of the Cholesky step.
    """
    cdef Py_ssize_t nz = H.shape[0]
    cdef Py_ssize_t nx = Ft.shape[1]
    cdef Py_ssize_t nc = Gt.shape[1]
    cdef Py_ssize_t i
    cdef int status
    cdef double* v
    cdef double* ones
    if Hl.shape[0] != nz or Hl.shape[1] != nz or Ft.shape[0] != nz or Gt.shape[0] != nz:
        raise ValueError("inconsistent stage dimensions")
    if Lnext.shape[0] - off != nx or Lnext.shape[1] - off != nx or sigma.shape[0] != nc:
        raise ValueError("inconsistent stage dimensions")
    v = <double*>malloc((nz * nx + nx + 1) * sizeof(double))
    if v == NULL:
        raise MemoryError()
    ones = v + nz * nx
    for i in range(nx):
        ones[i] = 1.0
    with nogil:
        status = hyh_riccati_factor_stage(&H[0, 0], nz, &Hl[0, 0], &Ft[0, 0], nx,
                                          &Lnext[off, off], Lnext.shape[0],
                                          _cptr2(Gt), nc, _cptr1(sigma), v, ones)
    free(v)
    return status


def update_stage(double[::1, :] L, Py_ssize_t nu, double[::1, :] U, const double[::1] S,
                 Py_ssize_t r, const double[::1, :] Ftprev=None, double[::1, :] Unext=None,
                 double[::1, :] Phi=None):
    """Update a stage factor by ``U diag(S) U^T`` and hand the carry to the next stage.

    After the leading ``nu`` columns, rows ``nu:`` of ``U`` (the carry) are
    copied to ``Phi`` and ``Unext[:, :k] = Ftprev @ carry`` is formed, each
    only when the array is given.
    """
    cdef Py_ssize_t nz = L.shape[0]
    cdef Py_ssize_t k = U.shape[1]
    cdef int status
    cdef const double* pf = NULL
    cdef double* pn = NULL
    cdef double* pp = NULL
    cdef Py_ssize_t ldun = 0
    if U.shape[0] != nz or S.shape[0] != k or not 0 < nu < nz:
        raise ValueError("inconsistent stage dimensions")
    if k == 0:
        return -1
    if Ftprev is not None and Unext is not None:
        if Ftprev.shape[0] != nz or Ftprev.shape[1] != nz - nu or Unext.shape[0] != nz or Unext.shape[1] < k:
            raise ValueError("inconsistent carry dimensions")
        pf = &Ftprev[0, 0]
        pn = &Unext[0, 0]
        ldun = nz
    if Phi is not None:
        if Phi.shape[0] != nz - nu or Phi.shape[1] != k:
            raise ValueError("inconsistent carry dimensions")
        pp = &Phi[0, 0]
    with nogil:
        status = hyh_riccati_update_stage(&L[0, 0], nz, nu, &U[0, 0], k, &S[0], r,
                                          pf, pn, ldun, pp)
    if status == _OOM:
        raise MemoryError()
    return status


cdef class _PtrTable:
    cdef double** p
    cdef hyh_idx* n

    def __cinit__(self, Py_ssize_t size):
        self.p = <double**>malloc((size + 1) * sizeof(double*))
        self.n = <hyh_idx*>malloc((size + 1) * sizeof(hyh_idx))
        if self.p == NULL or self.n == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.p)
        free(self.n)


def factor_chain(Hs, list Hl, list Ft, list Gt, list sigma, Lnext, Py_ssize_t off):
    """Factor stages ``J - 1 .. 0`` into ``Hs[:, :, j]`` (``J = Hs.shape[2]``).

    Stage ``J - 1`` starts from the lower ``nx``-square block of ``Lnext``
    at ``(off, off)``; each later stage from the trailing block of the stage
    above it. Returns ``(status, stage)``; ``status`` is -1 on success.
    """
    cdef cnp.ndarray h = _buf(Hs, cnp.NPY_DOUBLE, 3, True)
    cdef Py_ssize_t nz = h.shape[0]
    cdef Py_ssize_t J = h.shape[2]
    cdef Py_ssize_t nx, nc, j, ldln
    cdef hyh_idx failed = -1
    cdef double* ln
    cdef int status
    if J == 0:
        return -1, -1
    if h.shape[1] != nz:
        raise ValueError("inconsistent stage dimensions")
    nx = Ft[0].shape[1]
    if not 0 < nx < nz or min(len(Hl), len(Ft), len(Gt), len(sigma)) < J:
        raise ValueError("inconsistent stage dimensions")
    ldln = Lnext.shape[0]
    if off < 0 or ldln - off != nx:
        raise ValueError("inconsistent stage dimensions")
    _array_ptr(Lnext, 2, ldln, ldln, False, &ln)
    cdef _PtrTable thl = _PtrTable(J), tft = _PtrTable(J)
    cdef _PtrTable tgt = _PtrTable(J), tsg = _PtrTable(J)
    for j in range(J):
        nc = cnp.PyArray_DIM(<cnp.ndarray>sigma[j], 0)
        _array_ptr(Hl[j], 2, nz, nz, False, &thl.p[j])
        _array_ptr(Ft[j], 2, nz, nx, False, &tft.p[j])
        _array_ptr(Gt[j], 2, nz, nc, False, &tgt.p[j])
        _array_ptr(sigma[j], 1, nc, 0, False, &tsg.p[j])
        tgt.n[j] = nc
    cdef double* ph = <double*>cnp.PyArray_DATA(h)
    with nogil:
        status = hyh_riccati_factor_chain(ph, nz, nx, J - 1,
                                          <const double* const*>thl.p,
                                          <const double* const*>tft.p,
                                          <const double* const*>tgt.p, tgt.n,
                                          <const double* const*>tsg.p,
                                          ln + off + off * ldln, ldln, &failed)
    if status == _OOM:
        raise MemoryError()
    return status, failed


def update_chain(Lnew, Py_ssize_t nu, Py_ssize_t j_top, list Lold, list Gt, list Ft,
                 pos, delta, offs, cut, U, S, Py_ssize_t k, Py_ssize_t r, list Phi=None):
    """Update stages ``j_top .. j_lo`` with ``j_lo = j_top + 1 - Lnew.shape[2]``.

    ``U[:, :k]`` and ``S[:k]`` hold the carry entering stage ``j_top``. At
    stage ``j`` the changes ``pos[cut[j]:cut[j+1]]`` (flat penalty indices,
    stage ``j`` starting at ``offs[j]``) with weights ``delta`` are appended.
    The updated stage ``j`` is written to ``Lnew[:, :, j - j_lo]`` and, when
    ``Phi`` is given, its carry to ``Phi[j]``. ``U`` needs as many columns as
    the widest stage. Returns ``(status, stage)``.
    """
    cdef cnp.ndarray aL = _buf(Lnew, cnp.NPY_DOUBLE, 3, True)
    cdef cnp.ndarray aU = _buf(U, cnp.NPY_DOUBLE, 2, True)
    cdef cnp.ndarray aS = _buf(S, cnp.NPY_DOUBLE, 1, True)
    cdef cnp.ndarray apos = _buf(pos, cnp.NPY_INT64, 1, False)
    cdef cnp.ndarray adel = _buf(delta, cnp.NPY_DOUBLE, 1, False)
    cdef cnp.ndarray aoffs = _buf(offs, cnp.NPY_INT64, 1, False)
    cdef cnp.ndarray acut = _buf(cut, cnp.NPY_INT64, 1, False)
    cdef Py_ssize_t nz = aL.shape[0]
    cdef Py_ssize_t J = aL.shape[2]
    cdef Py_ssize_t nx = nz - nu
    cdef Py_ssize_t kmax = aU.shape[1]
    cdef Py_ssize_t npos = apos.shape[0]
    cdef Py_ssize_t j_lo = j_top + 1 - J
    cdef Py_ssize_t j, q, nc, kw
    cdef hyh_idx failed = -1
    cdef int status
    cdef double* unext
    cdef double** phi = NULL
    cdef const hyh_idx* ppos = <const hyh_idx*>cnp.PyArray_DATA(apos)
    cdef const hyh_idx* poffs = <const hyh_idx*>cnp.PyArray_DATA(aoffs)
    cdef const hyh_idx* pcut = <const hyh_idx*>cnp.PyArray_DATA(acut)
    if J == 0:
        return -1, -1
    if aL.shape[1] != nz or aU.shape[0] != nz or not 0 < nu < nz or j_lo < 0:
        raise ValueError("inconsistent stage dimensions")
    if len(Lold) <= j_top or len(Gt) <= j_top or len(Ft) <= j_top:
        raise ValueError("inconsistent stage dimensions")
    if acut.shape[0] < j_top + 2 or aoffs.shape[0] < j_top + 1:
        raise ValueError("inconsistent stage dimensions")
    if aS.shape[0] < kmax or not 0 <= k <= kmax or adel.shape[0] != npos:
        raise ValueError("inconsistent carry dimensions")
    if pcut[j_lo] < 0 or pcut[j_top + 1] > npos or k + pcut[j_top + 1] - pcut[j_lo] > kmax:
        raise ValueError("carry workspace too small")
    cdef _PtrTable tlo = _PtrTable(j_top + 1), tft = _PtrTable(j_top + 1)
    cdef _PtrTable tgt = _PtrTable(j_top + 1), tph
    for j in range(j_lo, j_top + 1):
        nc = cnp.PyArray_DIM(<cnp.ndarray>Gt[j], 1)
        if poffs[j] < 0 or pcut[j] > pcut[j + 1]:
            raise ValueError("invalid change index")
        for q in range(pcut[j], pcut[j + 1]):
            if not poffs[j] <= ppos[q] < poffs[j] + nc:
                raise ValueError("change index outside its stage")
        _array_ptr(Lold[j], 2, nz, nz, False, &tlo.p[j])
        _array_ptr(Gt[j], 2, nz, nc, False, &tgt.p[j])
        if j:
            _array_ptr(Ft[j - 1], 2, nz, nx, False, &tft.p[j - 1])
    if Phi is not None:
        tph = _PtrTable(j_top + 1)
        kw = k
        for j in range(j_top, j_lo - 1, -1):
            kw += pcut[j + 1] - pcut[j]
            _array_ptr(Phi[j], 2, nx, kw, True, &tph.p[j])
        phi = tph.p
    unext = <double*>malloc((nz * kmax + 1) * sizeof(double))
    if unext == NULL:
        raise MemoryError()
    cdef double* pl = <double*>cnp.PyArray_DATA(aL)
    cdef double* pu = <double*>cnp.PyArray_DATA(aU)
    cdef double* ps = <double*>cnp.PyArray_DATA(aS)
    cdef const double* pd = <const double*>cnp.PyArray_DATA(adel)
    with nogil:
        status = hyh_riccati_update_chain(pl, nz, nu, j_top, j_lo,
                                          <const double* const*>tlo.p,
                                          <const double* const*>tgt.p,
                                          <const double* const*>tft.p,
                                          ppos, pd, poffs, pcut,
                                          pu, unext, ps, k, r, phi, &failed)
    free(unext)
    if status == _OOM:
        raise MemoryError()
    return status, failed


def update_terminal(LxxN, LxxN_old, GNt, pos, delta, Py_ssize_t off, Ft_last, U, S,
                    Py_ssize_t r, Phi=None):
    """Terminal stage of the factorization update.

    The changed rows ``pos - off`` of ``G_N`` (columns of ``GNt``) with
    weights ``delta`` update ``LxxN_old`` into ``LxxN``. Their untransformed
    copy goes to ``Phi`` if given, and ``Ft_last @ carry`` to ``U[:, :k]``
    unless ``Ft_last`` is None; ``S[:k]`` receives the weights. Returns the
    update status.
    """
    cdef double *pl, *plo, *pg, *pd, *pf = NULL, *pu = NULL, *ps, *pp = NULL
    cdef cnp.ndarray apos = _buf(pos, cnp.NPY_INT64, 1, False)
    cdef const hyh_idx* ppos = <const hyh_idx*>cnp.PyArray_DATA(apos)
    cdef Py_ssize_t nx = LxxN.shape[0]
    cdef Py_ssize_t kN = apos.shape[0]
    cdef Py_ssize_t ncN = GNt.shape[1]
    cdef Py_ssize_t nz = 0, q
    cdef int status
    _array_ptr(LxxN, 2, nx, nx, True, &pl)
    _array_ptr(LxxN_old, 2, nx, nx, False, &plo)
    _array_ptr(GNt, 2, nx, ncN, False, &pg)
    _array_ptr(delta, 1, kN, 0, False, &pd)
    _array_ptr(S, 1, S.shape[0], 0, True, &ps)
    if S.shape[0] < kN:
        raise ValueError("carry workspace too small")
    for q in range(kN):
        if not off <= ppos[q] < off + ncN:
            raise ValueError("change index outside its stage")
    if Ft_last is not None:
        nz = Ft_last.shape[0]
        _array_ptr(Ft_last, 2, nz, nx, False, &pf)
        _array_ptr(U, 2, nz, U.shape[1], True, &pu)
        if U.shape[1] < kN:
            raise ValueError("carry workspace too small")
    if Phi is not None:
        _array_ptr(Phi, 2, nx, kN, True, &pp)
    cdef double* work = <double*>malloc((nx * kN + 1) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    with nogil:
        status = hyh_riccati_update_terminal(pl, nx, plo, pg, ppos, pd, kN, off,
                                             pf, nz, pu, ps, r, pp, work)
    free(work)
    if status == _OOM:
        raise MemoryError()
    return status
