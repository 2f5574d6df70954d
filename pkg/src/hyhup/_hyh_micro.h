/* Micro-kernels for blocked hyperbolic Householder updates.
 *
 * Column-major storage throughout. Status codes:
 *   -1        success
 *   k >= 0    not positive definite at column k
 *   -(2 + k)  degenerate reflector pivot at column k
 */
#ifndef HYH_MICRO_H
#define HYH_MICRO_H

#include <math.h>
#include <stddef.h>
#include <stdlib.h>

#define HYH_MR 8
#define HYH_RMAX 64

typedef ptrdiff_t hyh_idx;

/* Unblocked update of a kb x kb block, column by column; rows of A become B.
 * The dot products with the unscaled row a_k are formed before the pivot
 * arithmetic so they overlap the sqrt/divide latency. sb and w are scratch
 * of length m and kb. */
__attribute__((optimize("no-tree-vectorize")))
static int hyh_block_update(double *restrict L, hyh_idx ldl, hyh_idx kb,
                            double *restrict A, hyh_idx lda, hyh_idx m,
                            const double *restrict sigma,
                            double *restrict T, hyh_idx ldt,
                            double *restrict tau_inv,
                            double *restrict sb, double *restrict w)
{
    for (hyh_idx k = 0; k < kb; ++k) {
        const double lam = L[k + k * ldl];
        double alpha2 = 0.0;
        for (hyh_idx j = 0; j < m; ++j) {
            const double c = A[k + j * lda];
            sb[j] = sigma[j] * c;
            alpha2 += sb[j] * c;
        }
        /* w_i = sum_j A(i,j) sigma_j a_kj, rows below the pivot and above it */
        for (hyh_idx i = 0; i < kb; ++i)
            w[i] = 0.0;
        for (hyh_idx j = 0; j < m; ++j) {
            const double c = sb[j];
            const double *a = A + j * lda;
            for (hyh_idx i = 0; i < kb; ++i)
                w[i] += a[i] * c;
        }
        const double s = lam * lam + alpha2;
        if (!(s > 0.0))
            return (int)k;
        double lt = sqrt(s);
        if (lam < 0.0)
            lt = -lt;
        const double beta = lam + lt;
        if (beta == 0.0)
            return -(2 + (int)k);
        /* alpha2 + beta^2 = 2 lt beta, so 1/tau = beta/lt and 1/(tau beta) = 1/lt;
         * both skip the beta^2 chain, and 1/tau stays exactly 2 when alpha2 = 0 */
        const double inv_beta = 1.0 / beta;
        const double tib = 1.0 / lt;
        const double ti = beta / lt;
        for (hyh_idx i = k + 1; i < kb; ++i) {
            const double wi = ti * L[i + k * ldl] + tib * w[i];
            L[i + k * ldl] = wi - L[i + k * ldl];
            w[i] = wi;
        }
        for (hyh_idx j = 0; j < m; ++j) {
            const double c = A[k + j * lda] * inv_beta;
            double *a = A + j * lda;
            a[k] = c;
            sb[j] *= inv_beta;
            for (hyh_idx i = k + 1; i < kb; ++i)
                a[i] -= w[i] * c;
        }
        L[k + k * ldl] = lt;
        /* T(:k, k) = B(:k) S b_k, T(k, k) = tau */
        double *t = T + k * ldt;
        for (hyh_idx p = 0; p < k; ++p)
            t[p] = w[p] * inv_beta;
        for (hyh_idx p = k + 1; p < kb; ++p)
            t[p] = 0.0;
        t[k] = 1.0 / ti;
        tau_inv[k] = ti;
    }
    return -1;
}

typedef double hyh_v4 __attribute__((vector_size(32), aligned(8)));
#define HYH_LD(p) (*(const hyh_v4 *)(p))
#define HYH_ST(p, v) (*(hyh_v4 *)(p) = (v))

typedef long long hyh_m4 __attribute__((vector_size(32)));
#define HYH_SEL(m, a, b) ((hyh_v4)(((hyh_m4)(a) & (m)) | ((hyh_m4)(b) & ~(m))))

/* Row strips of the previous block's tail update still to be applied. They
 * touch rows disjoint from the next diagonal block, so hyh_block_update8 runs
 * one per column to fill the sqrt/divide latency of the pivot chain. */
typedef struct {
    double *L21;
    double *A2;
    hyh_idx ldl, lda, m, ldb, left;
    const double *sbt, *B, *T, *tau_inv;
} hyh_pending;

static inline void hyh_strip_8(double *restrict L21, hyh_idx ldl,
                               double *restrict A2, hyh_idx lda, hyh_idx m,
                               const double *restrict sbt,
                               const double *restrict B, hyh_idx ldb,
                               const double *restrict T, hyh_idx ldt,
                               const double *restrict tau_inv);

static inline void hyh_pending_step(hyh_pending *q)
{
    if (q->left <= 0)
        return;
    hyh_strip_8(q->L21, q->ldl, q->A2, q->lda, q->m, q->sbt, q->B, q->ldb, q->T, 8, q->tau_inv);
    q->L21 += HYH_MR;
    q->A2 += HYH_MR;
    q->left -= 1;
}

/* hyh_block_update for kb == 8 with the rows held in two 4-lane vectors.
 * Rows at or above the pivot are masked out, so trip counts do not depend
 * on k. Applying the reflector of column k and forming the reduction for
 * column k + 1 share one pass over A. */
static int hyh_block_update8(double *restrict L, hyh_idx ldl,
                             double *restrict A, hyh_idx lda, hyh_idx m,
                             const double *restrict sigma,
                             double *restrict T, double *restrict tau_inv,
                             double *restrict sb, hyh_pending *q)
{
    const hyh_m4 lo = {0, 1, 2, 3}, hi = {4, 5, 6, 7};
    const hyh_v4 z = {0.0, 0.0, 0.0, 0.0};
    (void)sb;
    /* w = A S a_k and alpha2 = a_k^T S a_k for the current pivot row k;
     * two interleaved partial sums halve the reduction latency */
    double alpha2 = 0.0, alpha2b = 0.0;
    hyh_v4 w0 = z, w1 = z, v0 = z, v1 = z;
    {
        hyh_idx j = 0;
        for (; j + 1 < m; j += 2) {
            const double *a = A + j * lda, *b = a + lda;
            const double sc = sigma[j] * a[0], sd = sigma[j + 1] * b[0];
            alpha2 += sc * a[0];
            alpha2b += sd * b[0];
            w0 += HYH_LD(a) * sc;
            w1 += HYH_LD(a + 4) * sc;
            v0 += HYH_LD(b) * sd;
            v1 += HYH_LD(b + 4) * sd;
        }
        if (j < m) {
            const double *a = A + j * lda;
            const double sc = sigma[j] * a[0];
            alpha2 += sc * a[0];
            w0 += HYH_LD(a) * sc;
            w1 += HYH_LD(a + 4) * sc;
        }
    }
    for (hyh_idx k = 0; k < 8; ++k) {
        const double lam = L[k + k * ldl];
        alpha2 += alpha2b;
        w0 += v0;
        w1 += v1;
        const double s = lam * lam + alpha2;
        if (!(s > 0.0))
            return (int)k;
        hyh_pending_step(q);
        double lt = sqrt(s);
        if (lam < 0.0)
            lt = -lt;
        const double beta = lam + lt;
        if (beta == 0.0)
            return -(2 + (int)k);
        /* alpha2 + beta^2 = 2 lt beta, so 1/tau = beta/lt and 1/(tau beta) = 1/lt;
         * both skip the beta^2 chain, and 1/tau stays exactly 2 when alpha2 = 0 */
        const double inv_beta = 1.0 / beta;
        const double tib = 1.0 / lt;
        const double ti = beta / lt;
        const hyh_m4 kv = {k, k, k, k};
        const hyh_m4 below0 = lo > kv, below1 = hi > kv;
        const hyh_m4 at0 = lo == kv, at1 = hi == kv;
        const hyh_v4 l0 = HYH_LD(L + k * ldl), l1 = HYH_LD(L + k * ldl + 4);
        const hyh_v4 u0 = l0 * ti + w0 * tib, u1 = l1 * ti + w1 * tib;
        const hyh_v4 m0 = HYH_SEL(below0, u0, z), m1 = HYH_SEL(below1, u1, z);
        HYH_ST(L + k * ldl, HYH_SEL(below0, u0 - l0, l0));
        HYH_ST(L + k * ldl + 4, HYH_SEL(below1, u1 - l1, l1));
        L[k + k * ldl] = lt;
        /* T(:k, k) = B(:k) S b_k, T(k, k) = tau */
        const hyh_m4 above0 = lo < kv, above1 = hi < kv;
        HYH_ST(T + 8 * k, HYH_SEL(above0, w0 * inv_beta, z));
        HYH_ST(T + 8 * k + 4, HYH_SEL(above1, w1 * inv_beta, z));
        T[k + 8 * k] = 1.0 / ti;
        tau_inv[k] = ti;
        /* row k of A becomes b_k; rows below take the reflector, and the
         * updated columns feed the reduction for row k + 1 */
        const hyh_idx kn = k + 1 < 8 ? k + 1 : 7;
        alpha2 = alpha2b = 0.0;
        w0 = w1 = v0 = v1 = z;
        hyh_idx j = 0;
        for (; j + 1 < m; j += 2) {
            double *a = A + j * lda, *b = a + lda;
            const double ca = a[k] * inv_beta, cb = b[k] * inv_beta;
            const hyh_v4 cav = {ca, ca, ca, ca}, cbv = {cb, cb, cb, cb};
            const hyh_v4 a0 = HYH_SEL(at0, cav, HYH_LD(a) - m0 * ca);
            const hyh_v4 a1 = HYH_SEL(at1, cav, HYH_LD(a + 4) - m1 * ca);
            const hyh_v4 b0 = HYH_SEL(at0, cbv, HYH_LD(b) - m0 * cb);
            const hyh_v4 b1 = HYH_SEL(at1, cbv, HYH_LD(b + 4) - m1 * cb);
            HYH_ST(a, a0);
            HYH_ST(a + 4, a1);
            HYH_ST(b, b0);
            HYH_ST(b + 4, b1);
            const double xa = a[kn], xb = b[kn];
            const double sa = sigma[j] * xa, sbj = sigma[j + 1] * xb;
            alpha2 += sa * xa;
            alpha2b += sbj * xb;
            w0 += a0 * sa;
            w1 += a1 * sa;
            v0 += b0 * sbj;
            v1 += b1 * sbj;
        }
        if (j < m) {
            double *a = A + j * lda;
            const double ca = a[k] * inv_beta;
            const hyh_v4 cav = {ca, ca, ca, ca};
            const hyh_v4 a0 = HYH_SEL(at0, cav, HYH_LD(a) - m0 * ca);
            const hyh_v4 a1 = HYH_SEL(at1, cav, HYH_LD(a + 4) - m1 * ca);
            HYH_ST(a, a0);
            HYH_ST(a + 4, a1);
            const double xa = a[kn];
            const double sa = sigma[j] * xa;
            alpha2 += sa * xa;
            w0 += a0 * sa;
            w1 += a1 * sa;
        }
    }
    return -1;
}

#define HYH_DEFINE_STRIP(NAME, KB)                                              \
static inline void NAME(double *restrict L21, hyh_idx ldl,                     \
                        double *restrict A2, hyh_idx lda, hyh_idx m,            \
                        const double *restrict sbt,                             \
                        const double *restrict B, hyh_idx ldb,                  \
                        const double *restrict T, hyh_idx ldt,                  \
                        const double *restrict tau_inv)                         \
{                                                                               \
    hyh_v4 x0[KB], x1[KB];                                                      \
    for (int p = 0; p < KB; ++p) {                                              \
        x0[p] = HYH_LD(L21 + p * ldl);                                          \
        x1[p] = HYH_LD(L21 + p * ldl + 4);                                      \
    }                                                                           \
    for (hyh_idx j = 0; j < m; ++j) {                                           \
        const hyh_v4 a0 = HYH_LD(A2 + j * lda), a1 = HYH_LD(A2 + j * lda + 4);  \
        for (int p = 0; p < KB; ++p) {                                          \
            const double c = sbt[p + j * KB];                                   \
            x0[p] += a0 * c;                                                    \
            x1[p] += a1 * c;                                                    \
        }                                                                       \
    }                                                                           \
    for (int p = 0; p < KB; ++p) {                                              \
        for (int q = 0; q < p; ++q) {                                           \
            const double c = T[q + p * ldt];                                    \
            x0[p] -= x0[q] * c;                                                 \
            x1[p] -= x1[q] * c;                                                 \
        }                                                                       \
        x0[p] *= tau_inv[p];                                                    \
        x1[p] *= tau_inv[p];                                                    \
    }                                                                           \
    for (hyh_idx j = 0; j < m; ++j) {                                           \
        hyh_v4 a0 = HYH_LD(A2 + j * lda), a1 = HYH_LD(A2 + j * lda + 4);        \
        for (int p = 0; p < KB; ++p) {                                          \
            const double c = B[p + j * ldb];                                    \
            a0 -= x0[p] * c;                                                    \
            a1 -= x1[p] * c;                                                    \
        }                                                                       \
        HYH_ST(A2 + j * lda, a0);                                               \
        HYH_ST(A2 + j * lda + 4, a1);                                           \
    }                                                                           \
    for (int p = 0; p < KB; ++p) {                                              \
        HYH_ST(L21 + p * ldl, x0[p] - HYH_LD(L21 + p * ldl));                   \
        HYH_ST(L21 + p * ldl + 4, x1[p] - HYH_LD(L21 + p * ldl + 4));           \
    }                                                                           \
}

HYH_DEFINE_STRIP(hyh_strip_1, 1)
HYH_DEFINE_STRIP(hyh_strip_2, 2)
HYH_DEFINE_STRIP(hyh_strip_4, 4)
HYH_DEFINE_STRIP(hyh_strip_8, 8)

/* Generic strip: any block width, nr <= HYH_MR rows (ragged tails). */
static void hyh_strip_n(double *restrict L21, hyh_idx ldl, hyh_idx nr, hyh_idx kb,
                        double *restrict A2, hyh_idx lda, hyh_idx m,
                        const double *restrict sbt,
                        const double *restrict B, hyh_idx ldb,
                        const double *restrict T, hyh_idx ldt,
                        const double *restrict tau_inv)
{
    double x[HYH_RMAX][HYH_MR];
    double a[HYH_MR];
    for (hyh_idx p = 0; p < kb; ++p)
        for (hyh_idx i = 0; i < HYH_MR; ++i)
            x[p][i] = i < nr ? L21[i + p * ldl] : 0.0;
    for (hyh_idx j = 0; j < m; ++j) {
        for (hyh_idx i = 0; i < HYH_MR; ++i)
            a[i] = i < nr ? A2[i + j * lda] : 0.0;
        for (hyh_idx p = 0; p < kb; ++p) {
            const double c = sbt[p + j * kb];
            for (hyh_idx i = 0; i < HYH_MR; ++i)
                x[p][i] += a[i] * c;
        }
    }
    for (hyh_idx p = 0; p < kb; ++p) {
        for (hyh_idx q = 0; q < p; ++q) {
            const double c = T[q + p * ldt];
            for (hyh_idx i = 0; i < HYH_MR; ++i)
                x[p][i] -= x[q][i] * c;
        }
        const double c = tau_inv[p];
        for (hyh_idx i = 0; i < HYH_MR; ++i)
            x[p][i] *= c;
    }
    for (hyh_idx j = 0; j < m; ++j) {
        for (hyh_idx i = 0; i < HYH_MR; ++i)
            a[i] = i < nr ? A2[i + j * lda] : 0.0;
        for (hyh_idx p = 0; p < kb; ++p) {
            const double c = B[p + j * ldb];
            for (hyh_idx i = 0; i < HYH_MR; ++i)
                a[i] -= x[p][i] * c;
        }
        for (hyh_idx i = 0; i < nr; ++i)
            A2[i + j * lda] = a[i];
    }
    for (hyh_idx p = 0; p < kb; ++p)
        for (hyh_idx i = 0; i < nr; ++i)
            L21[i + p * ldl] = x[p][i] - L21[i + p * ldl];
}

/* (L21 | A2) <- (L21 | A2) Q for the block (B, T); kb <= HYH_RMAX.
 * sbt is scratch of size kb * m. */
static void hyh_tail_apply(double *L21, hyh_idx ldl, hyh_idx l, hyh_idx kb,
                           double *A2, hyh_idx lda, hyh_idx m,
                           const double *sigma,
                           const double *B, hyh_idx ldb,
                           const double *T, hyh_idx ldt,
                           const double *tau_inv, double *sbt)
{
    if (l <= 0 || kb <= 0)
        return;
    for (hyh_idx j = 0; j < m; ++j)
        for (hyh_idx p = 0; p < kb; ++p)
            sbt[p + j * kb] = sigma[j] * B[p + j * ldb];
    hyh_idx i0 = 0;
    for (; i0 + HYH_MR <= l; i0 += HYH_MR) {
        double *a2 = A2 + i0;
        switch (kb) {
        case 1: hyh_strip_1(L21 + i0, ldl, a2, lda, m, sbt, B, ldb, T, ldt, tau_inv); break;
        case 2: hyh_strip_2(L21 + i0, ldl, a2, lda, m, sbt, B, ldb, T, ldt, tau_inv); break;
        case 4: hyh_strip_4(L21 + i0, ldl, a2, lda, m, sbt, B, ldb, T, ldt, tau_inv); break;
        case 8: hyh_strip_8(L21 + i0, ldl, a2, lda, m, sbt, B, ldb, T, ldt, tau_inv); break;
        default:
            hyh_strip_n(L21 + i0, ldl, HYH_MR, kb, a2, lda, m, sbt, B, ldb, T, ldt, tau_inv);
        }
    }
    if (i0 < l)
        hyh_strip_n(L21 + i0, ldl, l - i0, kb, A2 + i0, lda, m, sbt, B, ldb, T, ldt, tau_inv);
}

/* Blocked update of columns c0..c1-1 of the n x n factor L (leading dim ldl).
 * For r == 8 the tail of each block is applied strip by strip: the first
 * strip at once (it feeds the next diagonal block), the rest interleaved
 * with the next diagonal block, so T, tau_inv and sbt are double-buffered. */
static int hyh_update_cols(double *L, hyh_idx ldl, hyh_idx n,
                           double *A, hyh_idx lda, hyh_idx m,
                           const double *sigma, hyh_idx r, hyh_idx c0, hyh_idx c1)
{
    if (r > HYH_RMAX)
        r = HYH_RMAX;
    if (r < 1)
        r = 1;
    const hyh_idx per = r * r + r + r * m;
    double *work = (double *)malloc((size_t)(2 * per + r + m + 1) * sizeof(double));
    if (!work)
        return -(1 << 30);
    double *w = work + 2 * per;
    double *sb = w + r;
    hyh_pending q = {0};
    int status = -1;
    int buf = 0;
    for (hyh_idx c = c0; c < c1; c += r, buf ^= 1) {
        double *T = work + buf * per;
        double *tau_inv = T + r * r;
        double *sbt = tau_inv + r;
        hyh_idx kb = c + r <= c1 ? r : c1 - c;
        if (kb == 8)
            status = hyh_block_update8(L + c + c * ldl, ldl, A + c, lda, m, sigma,
                                       T, tau_inv, sb, &q);
        else
            status = hyh_block_update(L + c + c * ldl, ldl, kb, A + c, lda, m, sigma,
                                      T, kb, tau_inv, sb, w);
        while (q.left > 0)
            hyh_pending_step(&q);
        if (status != -1) {
            status = status >= 0 ? status + (int)c : status - (int)c;
            break;
        }
        hyh_idx l = n - c - kb;
        double *L21 = L + (c + kb) + c * ldl, *A2 = A + c + kb;
        if (kb == 8 && l > HYH_MR && c + 2 * kb <= c1) {
            /* next block is also full width: defer all but the first strip */
            for (hyh_idx j = 0; j < m; ++j)
                for (hyh_idx p = 0; p < 8; ++p)
                    sbt[p + j * 8] = sigma[j] * A[c + p + j * lda];
            hyh_strip_8(L21, ldl, A2, lda, m, sbt, A + c, lda, T, 8, tau_inv);
            hyh_idx full = l / HYH_MR;
            q = (hyh_pending){L21 + HYH_MR, A2 + HYH_MR, ldl, lda, m, lda, full - 1,
                              sbt, A + c, T, tau_inv};
            if (full * HYH_MR < l)
                hyh_strip_n(L21 + full * HYH_MR, ldl, l - full * HYH_MR, 8, A2 + full * HYH_MR,
                            lda, m, sbt, A + c, lda, T, 8, tau_inv);
        } else {
            hyh_tail_apply(L21, ldl, l, kb, A2, lda, m, sigma, A + c, lda, T, kb, tau_inv, sbt);
        }
    }
    free(work);
    return status;
}

/* In-place right-looking Cholesky of the lower triangle. */
static int hyh_potrf(double *a, hyh_idx n, hyh_idx lda)
{
    for (hyh_idx k = 0; k < n; ++k) {
        double d = a[k + k * lda];
        if (!(d > 0.0))
            return (int)k;
        d = sqrt(d);
        a[k + k * lda] = d;
        d = 1.0 / d;
        for (hyh_idx i = k + 1; i < n; ++i)
            a[i + k * lda] *= d;
        for (hyh_idx j = k + 1; j < n; ++j) {
            const double c = a[j + k * lda];
            double *restrict dst = a + j * lda;
            const double *restrict src = a + k * lda;
            for (hyh_idx i = j; i < n; ++i)
                dst[i] -= src[i] * c;
        }
    }
    return -1;
}

/* Lower triangle of H += A diag(sigma) A^T. */
static void hyh_syrk(double *restrict h, hyh_idx n, hyh_idx ldh,
                     const double *restrict a, hyh_idx lda, hyh_idx m,
                     const double *restrict sigma)
{
    for (hyh_idx j = 0; j < n; ++j)
        for (hyh_idx p = 0; p < m; ++p) {
            const double c = sigma[p] * a[j + p * lda];
            const double *ap = a + p * lda;
            double *hj = h + j * ldh;
            for (hyh_idx i = j; i < n; ++i)
                hj[i] += ap[i] * c;
        }
}

/* v (nz x nx) = ft * l, where ft holds F^T (nz x nx) and l is lower triangular. */
static void hyh_gemm_lower(double *restrict v, hyh_idx ldv,
                           const double *restrict ft, hyh_idx ldft, hyh_idx nz,
                           const double *restrict l, hyh_idx ldl, hyh_idx nx)
{
    for (hyh_idx c = 0; c < nx; ++c) {
        double *vc = v + c * ldv;
        for (hyh_idx i = 0; i < nz; ++i)
            vc[i] = 0.0;
        for (hyh_idx r = c; r < nx; ++r) {
            const double x = l[r + c * ldl];
            const double *fr = ft + r * ldft;
            for (hyh_idx i = 0; i < nz; ++i)
                vc[i] += fr[i] * x;
        }
    }
}

/* One stage of the Riccati factorization:
 *   h <- chol(hl + gt diag(sigma) gt^T + (ft lnext)(ft lnext)^T),
 * lower triangle of the nz x nz array h, strict upper triangle zeroed.
 * v is nz x nx scratch, ones holds nx ones. */
static int hyh_riccati_factor_stage(double *restrict h, hyh_idx nz,
                                    const double *restrict hl,
                                    const double *restrict ft, hyh_idx nx,
                                    const double *restrict lnext, hyh_idx ldln,
                                    const double *restrict gt, hyh_idx nc,
                                    const double *restrict sigma,
                                    double *restrict v, const double *restrict ones)
{
    for (hyh_idx j = 0; j < nz; ++j) {
        for (hyh_idx i = 0; i < j; ++i)
            h[i + j * nz] = 0.0;
        for (hyh_idx i = j; i < nz; ++i)
            h[i + j * nz] = hl[i + j * nz];
    }
    if (nc > 0)
        hyh_syrk(h, nz, nz, gt, nz, nc, sigma);
    hyh_gemm_lower(v, nz, ft, nz, nz, lnext, ldln, nx);
    hyh_syrk(h, nz, nz, v, nz, nx, ones);
    return hyh_potrf(h, nz, nz);
}

/* One stage of the factorization update. The nz x nz factor l is updated by
 * u diag(s) u^T (u is nz x k). Once the leading nu columns are done, rows
 * nu: of u hold the stage carry; it is copied to phi (nx x k) if given and
 * multiplied into unext(:, :k) = ftprev * carry (ftprev is nz x nx) if
 * given, before the remaining columns consume it. */
static int hyh_riccati_update_stage(double *l, hyh_idx nz, hyh_idx nu,
                                    double *u, hyh_idx k, const double *s, hyh_idx r,
                                    const double *restrict ftprev,
                                    double *restrict unext, hyh_idx ldun,
                                    double *restrict phi)
{
    const hyh_idx nx = nz - nu;
    int status = hyh_update_cols(l, nz, nz, u, nz, k, s, r, 0, nu);
    if (status != -1)
        return status;
    if (phi)
        for (hyh_idx c = 0; c < k; ++c)
            for (hyh_idx i = 0; i < nx; ++i)
                phi[i + c * nx] = u[nu + i + c * nz];
    if (unext)
        for (hyh_idx c = 0; c < k; ++c) {
            double *dst = unext + c * ldun;
            for (hyh_idx i = 0; i < nz; ++i)
                dst[i] = 0.0;
            for (hyh_idx q = 0; q < nx; ++q) {
                const double x = u[nu + q + c * nz];
                const double *fq = ftprev + q * nz;
                for (hyh_idx i = 0; i < nz; ++i)
                    dst[i] += fq[i] * x;
            }
        }
    return hyh_update_cols(l, nz, nz, u, nz, k, s, r, nu, nz);
}

/* Factor stages j_top..0 (stage j into h + j*nz*nz). Stage j_top starts
 * from lnext (leading dimension ldln, nx x nx lower block read); later
 * stages chain on the trailing block of the previous result. Returns the
 * potrf status and sets *failed to the stage it came from. */
static int hyh_riccati_factor_chain(double *h, hyh_idx nz, hyh_idx nx, hyh_idx j_top,
                                    const double *const *hl, const double *const *ft,
                                    const double *const *gt, const hyh_idx *nc,
                                    const double *const *sigma,
                                    const double *lnext, hyh_idx ldln, hyh_idx *failed)
{
    const hyh_idx nu = nz - nx;
    double *v = (double *)malloc((size_t)(nz * nx + nx + 1) * sizeof(double));
    if (!v)
        return -(1 << 30);
    double *ones = v + nz * nx;
    for (hyh_idx i = 0; i < nx; ++i)
        ones[i] = 1.0;
    int status = -1;
    for (hyh_idx j = j_top; j >= 0; --j) {
        double *hj = h + j * nz * nz;
        status = hyh_riccati_factor_stage(hj, nz, hl[j], ft[j], nx, lnext, ldln,
                                          gt[j], nc[j], sigma[j], v, ones);
        if (status != -1) {
            *failed = j;
            break;
        }
        lnext = hj + nu + nu * nz;
        ldln = nz;
    }
    free(v);
    return status;
}

/* Terminal stage of the factorization update. The kN changed rows of G_N
 * (columns pos[q] - off of gnt, which is nx x ncN) form the carry phi, which
 * is copied to phi_out if given and multiplied into u(:, :kN) = ft * phi if
 * ft is given; s(:kN) receives the weights. l (nx x nx) is lold updated by
 * phi diag(s) phi^T. work is nx x kN scratch. */
static int hyh_riccati_update_terminal(double *restrict l, hyh_idx nx, const double *restrict lold,
                                       const double *restrict gnt, const hyh_idx *pos,
                                       const double *delta, hyh_idx kN, hyh_idx off,
                                       const double *restrict ft, hyh_idx nz,
                                       double *restrict u, double *restrict s, hyh_idx r,
                                       double *restrict phi_out, double *restrict work)
{
    for (hyh_idx q = 0; q < kN; ++q) {
        const double *g = gnt + (pos[q] - off) * nx;
        for (hyh_idx i = 0; i < nx; ++i)
            work[i + q * nx] = g[i];
        s[q] = delta[q];
    }
    if (phi_out)
        for (hyh_idx i = 0; i < nx * kN; ++i)
            phi_out[i] = work[i];
    if (ft)
        for (hyh_idx c = 0; c < kN; ++c) {
            double *dst = u + c * nz;
            for (hyh_idx i = 0; i < nz; ++i)
                dst[i] = 0.0;
            for (hyh_idx q = 0; q < nx; ++q) {
                const double x = work[q + c * nx];
                const double *fq = ft + q * nz;
                for (hyh_idx i = 0; i < nz; ++i)
                    dst[i] += fq[i] * x;
            }
        }
    for (hyh_idx i = 0; i < nx * nx; ++i)
        l[i] = lold[i];
    return hyh_update_cols(l, nx, nx, work, nx, kN, s, r, 0, nx);
}

/* Update stages j_top..j_lo (stage j from lold[j] into lnew + (j - j_lo)*nz*nz).
 * u (nz x kmax) holds the k incoming carry columns and s their weights;
 * changes pos[cut[j]:cut[j+1]] (flat indices, stage offset offs[j]) with
 * weights delta are appended at each stage. unext is a second nz x kmax
 * buffer. phi, if given, receives the carry of each stage. */
static int hyh_riccati_update_chain(double *lnew, hyh_idx nz, hyh_idx nu,
                                    hyh_idx j_top, hyh_idx j_lo,
                                    const double *const *lold, const double *const *gt,
                                    const double *const *ft,
                                    const hyh_idx *pos, const double *delta,
                                    const hyh_idx *offs, const hyh_idx *cut,
                                    double *u, double *unext, double *s, hyh_idx k,
                                    hyh_idx r, double *const *phi, hyh_idx *failed)
{
    for (hyh_idx j = j_top; j >= j_lo; --j) {
        for (hyh_idx q = cut[j]; q < cut[j + 1]; ++q, ++k) {
            const double *g = gt[j] + (pos[q] - offs[j]) * nz;
            for (hyh_idx i = 0; i < nz; ++i)
                u[i + k * nz] = g[i];
            s[k] = delta[q];
        }
        double *l = lnew + (j - j_lo) * nz * nz;
        const double *lo = lold[j];
        for (hyh_idx i = 0; i < nz * nz; ++i)
            l[i] = lo[i];
        if (k == 0)
            continue;
        int status = hyh_riccati_update_stage(l, nz, nu, u, k, s, r,
                                              j ? ft[j - 1] : NULL, j ? unext : NULL, nz,
                                              phi ? phi[j] : NULL);
        if (status != -1) {
            *failed = j;
            return status;
        }
        double *t = u;
        u = unext;
        unext = t;
    }
    return -1;
}

#endif
