# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recurrent scan kernels.

Same contract as kernels.reference: right-padded batches, zero initial
state, no gate biases, zeros stored at padded slots, backward recomputes
gates from the stored state sequence. Timestep matmuls go through BLAS
dgemm; the gate nonlinearities and masking are fused into per-row loops
so no per-step temporaries are allocated.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp as c_exp, tanh as c_tanh
from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void gemm_c(bint a_trans, bint b_trans, int m, int n, int k,
                        double alpha, double* a, int a_ncols,
                        double* b, int b_ncols, double beta,
                        double* c) noexcept nogil:
    """C-order C[m,n] := alpha * op(A)[m,k] @ op(B)[k,n] + beta * C.

    Fortran dgemm sees C-contiguous memory transposed, so the operands
    swap roles: C^T = op(B)^T op(A)^T. 78/84 are ASCII 'N'/'T'.
    """
    cdef char ta = 84 if b_trans else 78
    cdef char tb = 84 if a_trans else 78
    cdef int lda = b_ncols
    cdef int ldb = a_ncols
    cdef int ldc = n
    dgemm(&ta, &tb, &n, &m, &k, &alpha, b, &lda, a, &ldb, &beta, c, &ldc)


cdef inline double sigm(double x) noexcept nogil:
    return 1.0 / (1.0 + c_exp(-x))


def gru_scan_forward(double[:, :, ::1] x, cnp.int64_t[::1] lengths,
                     double[:, ::1] w_r, double[:, ::1] w_z,
                     double[:, ::1] w_h):
    cdef int B = x.shape[0], L = x.shape[1], D = x.shape[2]
    cdef int H = w_r.shape[1], K = H + D
    h_all_arr = np.zeros((B, L, H))
    cdef double[:, :, ::1] h_all = h_all_arr
    cdef double[:, ::1] h = np.zeros((B, H))
    cdef double[:, ::1] v = np.zeros((B, K))
    cdef double[:, ::1] vh = np.zeros((B, K))
    cdef double[:, ::1] a_r = np.zeros((B, H))
    cdef double[:, ::1] a_z = np.zeros((B, H))
    cdef double[:, ::1] a_h = np.zeros((B, H))
    cdef int t, b, j
    cdef double r, z, hn

    with nogil:
        for t in range(L):
            for b in range(B):
                memcpy(&v[b, 0], &h[b, 0], H * sizeof(double))
                memcpy(&v[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_r[0, 0], H, 0.0, &a_r[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_z[0, 0], H, 0.0, &a_z[0, 0])
            for b in range(B):
                for j in range(H):
                    vh[b, j] = sigm(a_r[b, j]) * h[b, j]
                memcpy(&vh[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &vh[0, 0], K, &w_h[0, 0], H, 0.0, &a_h[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        z = sigm(a_z[b, j])
                        hn = c_tanh(a_h[b, j])
                        h[b, j] = (1.0 - z) * h[b, j] + z * hn
                        h_all[b, t, j] = h[b, j]
    return h_all_arr


def gru_scan_backward(double[:, :, ::1] x, cnp.int64_t[::1] lengths,
                      double[:, ::1] w_r, double[:, ::1] w_z,
                      double[:, ::1] w_h, double[:, :, ::1] h_all,
                      double[:, :, ::1] g):
    cdef int B = x.shape[0], L = x.shape[1], D = x.shape[2]
    cdef int H = w_r.shape[1], K = H + D
    dx_arr = np.zeros((B, L, D))
    dwr_arr = np.zeros((K, H))
    dwz_arr = np.zeros((K, H))
    dwh_arr = np.zeros((K, H))
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, ::1] dw_r = dwr_arr
    cdef double[:, ::1] dw_z = dwz_arr
    cdef double[:, ::1] dw_h = dwh_arr
    cdef double[:, ::1] dh = np.zeros((B, H))
    cdef double[:, ::1] v = np.zeros((B, K))
    cdef double[:, ::1] vh = np.zeros((B, K))
    cdef double[:, ::1] a_r = np.zeros((B, H))
    cdef double[:, ::1] a_z = np.zeros((B, H))
    cdef double[:, ::1] a_h = np.zeros((B, H))
    cdef double[:, ::1] da_r = np.zeros((B, H))
    cdef double[:, ::1] da_z = np.zeros((B, H))
    cdef double[:, ::1] da_h = np.zeros((B, H))
    cdef double[:, ::1] du = np.zeros((B, H))
    cdef double[:, ::1] dvr = np.zeros((B, K))
    cdef double[:, ::1] dvz = np.zeros((B, K))
    cdef double[:, ::1] dvh = np.zeros((B, K))
    cdef int t, b, j
    cdef double r, z, hn, hp, gt, dz, dhn, dr

    with nogil:
        for t in range(L - 1, -1, -1):
            for b in range(B):
                if t > 0:
                    memcpy(&v[b, 0], &h_all[b, t - 1, 0], H * sizeof(double))
                else:
                    memset(&v[b, 0], 0, H * sizeof(double))
                memcpy(&v[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_r[0, 0], H, 0.0, &a_r[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_z[0, 0], H, 0.0, &a_z[0, 0])
            for b in range(B):
                for j in range(H):
                    vh[b, j] = sigm(a_r[b, j]) * v[b, j]
                memcpy(&vh[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &vh[0, 0], K, &w_h[0, 0], H, 0.0, &a_h[0, 0])

            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        r = sigm(a_r[b, j])
                        z = sigm(a_z[b, j])
                        hn = c_tanh(a_h[b, j])
                        hp = v[b, j]
                        gt = dh[b, j] + g[b, t, j]
                        dz = gt * (hn - hp)
                        da_z[b, j] = dz * z * (1.0 - z)
                        dhn = gt * z
                        da_h[b, j] = dhn * (1.0 - hn * hn)
                        # dh partial: through the (1-z)*h_prev path
                        dh[b, j] = gt * (1.0 - z)
                else:
                    for j in range(H):
                        da_z[b, j] = 0.0
                        da_h[b, j] = 0.0
            gemm_c(0, 1, B, K, H, 1.0, &da_h[0, 0], H, &w_h[0, 0], H, 0.0, &dvh[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        r = sigm(a_r[b, j])
                        dr = dvh[b, j] * v[b, j]
                        da_r[b, j] = dr * r * (1.0 - r)
                        du[b, j] = dvh[b, j]
                else:
                    for j in range(H):
                        da_r[b, j] = 0.0
                        du[b, j] = 0.0
            gemm_c(0, 1, B, K, H, 1.0, &da_r[0, 0], H, &w_r[0, 0], H, 0.0, &dvr[0, 0])
            gemm_c(0, 1, B, K, H, 1.0, &da_z[0, 0], H, &w_z[0, 0], H, 0.0, &dvz[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_r[0, 0], H, 1.0, &dw_r[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_z[0, 0], H, 1.0, &dw_z[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &vh[0, 0], K, &da_h[0, 0], H, 1.0, &dw_h[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        r = sigm(a_r[b, j])
                        dh[b, j] = dh[b, j] + du[b, j] * r + dvr[b, j] + dvz[b, j]
                    for j in range(D):
                        dx[b, t, j] = dvh[b, H + j] + dvr[b, H + j] + dvz[b, H + j]
    return dx_arr, dwr_arr, dwz_arr, dwh_arr


def lstm_scan_forward(double[:, :, ::1] x, cnp.int64_t[::1] lengths,
                      double[:, ::1] w_i, double[:, ::1] w_f,
                      double[:, ::1] w_o, double[:, ::1] w_c):
    cdef int B = x.shape[0], L = x.shape[1], D = x.shape[2]
    cdef int H = w_i.shape[1], K = H + D
    h_all_arr = np.zeros((B, L, H))
    c_all_arr = np.zeros((B, L, H))
    cdef double[:, :, ::1] h_all = h_all_arr
    cdef double[:, :, ::1] c_all = c_all_arr
    cdef double[:, ::1] h = np.zeros((B, H))
    cdef double[:, ::1] c = np.zeros((B, H))
    cdef double[:, ::1] v = np.zeros((B, K))
    cdef double[:, ::1] a_i = np.zeros((B, H))
    cdef double[:, ::1] a_f = np.zeros((B, H))
    cdef double[:, ::1] a_o = np.zeros((B, H))
    cdef double[:, ::1] a_c = np.zeros((B, H))
    cdef int t, b, j
    cdef double ig, fg, og, cb

    with nogil:
        for t in range(L):
            for b in range(B):
                memcpy(&v[b, 0], &h[b, 0], H * sizeof(double))
                memcpy(&v[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_i[0, 0], H, 0.0, &a_i[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_f[0, 0], H, 0.0, &a_f[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_o[0, 0], H, 0.0, &a_o[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_c[0, 0], H, 0.0, &a_c[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        ig = sigm(a_i[b, j])
                        fg = sigm(a_f[b, j])
                        og = sigm(a_o[b, j])
                        cb = c_tanh(a_c[b, j])
                        c[b, j] = fg * c[b, j] + ig * cb
                        h[b, j] = og * c_tanh(c[b, j])
                        h_all[b, t, j] = h[b, j]
                        c_all[b, t, j] = c[b, j]
    return h_all_arr, c_all_arr


def lstm_scan_backward(double[:, :, ::1] x, cnp.int64_t[::1] lengths,
                       double[:, ::1] w_i, double[:, ::1] w_f,
                       double[:, ::1] w_o, double[:, ::1] w_c,
                       double[:, :, ::1] h_all, double[:, :, ::1] c_all,
                       double[:, :, ::1] g):
    cdef int B = x.shape[0], L = x.shape[1], D = x.shape[2]
    cdef int H = w_i.shape[1], K = H + D
    dx_arr = np.zeros((B, L, D))
    dwi_arr = np.zeros((K, H))
    dwf_arr = np.zeros((K, H))
    dwo_arr = np.zeros((K, H))
    dwc_arr = np.zeros((K, H))
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, ::1] dw_i = dwi_arr
    cdef double[:, ::1] dw_f = dwf_arr
    cdef double[:, ::1] dw_o = dwo_arr
    cdef double[:, ::1] dw_c = dwc_arr
    cdef double[:, ::1] dh = np.zeros((B, H))
    cdef double[:, ::1] dc = np.zeros((B, H))
    cdef double[:, ::1] v = np.zeros((B, K))
    cdef double[:, ::1] a_i = np.zeros((B, H))
    cdef double[:, ::1] a_f = np.zeros((B, H))
    cdef double[:, ::1] a_o = np.zeros((B, H))
    cdef double[:, ::1] a_c = np.zeros((B, H))
    cdef double[:, ::1] da_i = np.zeros((B, H))
    cdef double[:, ::1] da_f = np.zeros((B, H))
    cdef double[:, ::1] da_o = np.zeros((B, H))
    cdef double[:, ::1] da_c = np.zeros((B, H))
    cdef double[:, ::1] dv = np.zeros((B, K))
    cdef int t, b, j
    cdef double ig, fg, og, cb, tc, cp, gh, dct

    with nogil:
        for t in range(L - 1, -1, -1):
            for b in range(B):
                if t > 0:
                    memcpy(&v[b, 0], &h_all[b, t - 1, 0], H * sizeof(double))
                else:
                    memset(&v[b, 0], 0, H * sizeof(double))
                memcpy(&v[b, H], &x[b, t, 0], D * sizeof(double))
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_i[0, 0], H, 0.0, &a_i[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_f[0, 0], H, 0.0, &a_f[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_o[0, 0], H, 0.0, &a_o[0, 0])
            gemm_c(0, 0, B, H, K, 1.0, &v[0, 0], K, &w_c[0, 0], H, 0.0, &a_c[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        ig = sigm(a_i[b, j])
                        fg = sigm(a_f[b, j])
                        og = sigm(a_o[b, j])
                        cb = c_tanh(a_c[b, j])
                        tc = c_tanh(c_all[b, t, j])
                        cp = c_all[b, t - 1, j] if t > 0 else 0.0
                        gh = dh[b, j] + g[b, t, j]
                        da_o[b, j] = gh * tc * og * (1.0 - og)
                        dct = dc[b, j] + gh * og * (1.0 - tc * tc)
                        da_i[b, j] = dct * cb * ig * (1.0 - ig)
                        da_f[b, j] = dct * cp * fg * (1.0 - fg)
                        da_c[b, j] = dct * ig * (1.0 - cb * cb)
                        dc[b, j] = dct * fg
                else:
                    for j in range(H):
                        da_i[b, j] = 0.0
                        da_f[b, j] = 0.0
                        da_o[b, j] = 0.0
                        da_c[b, j] = 0.0
            gemm_c(0, 1, B, K, H, 1.0, &da_i[0, 0], H, &w_i[0, 0], H, 0.0, &dv[0, 0])
            gemm_c(0, 1, B, K, H, 1.0, &da_f[0, 0], H, &w_f[0, 0], H, 1.0, &dv[0, 0])
            gemm_c(0, 1, B, K, H, 1.0, &da_o[0, 0], H, &w_o[0, 0], H, 1.0, &dv[0, 0])
            gemm_c(0, 1, B, K, H, 1.0, &da_c[0, 0], H, &w_c[0, 0], H, 1.0, &dv[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_i[0, 0], H, 1.0, &dw_i[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_f[0, 0], H, 1.0, &dw_f[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_o[0, 0], H, 1.0, &dw_o[0, 0])
            gemm_c(1, 0, K, H, B, 1.0, &v[0, 0], K, &da_c[0, 0], H, 1.0, &dw_c[0, 0])
            for b in range(B):
                if t < lengths[b]:
                    for j in range(H):
                        dh[b, j] = dv[b, j]
                    for j in range(D):
                        dx[b, t, j] = dv[b, H + j]
    return dx_arr, dwi_arr, dwf_arr, dwo_arr, dwc_arr
