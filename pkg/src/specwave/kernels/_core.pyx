# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-element stiffness kernels.

Same contracts as kernels.numpy_ref. Element-local work runs in parallel
(OpenMP); the gather/scatter into global arrays is serial in fixed element
order, so results are bitwise independent of the thread count.
"""

import numpy as np

from cython.parallel import parallel, prange
from libc.stdlib cimport free, malloc

cimport openmp

name = "compiled"

cdef int _num_threads = 0  # 0 -> OpenMP default


def set_num_threads(n):
    global _num_threads
    _num_threads = int(n) if n else 0


def get_num_threads():
    if _num_threads > 0:
        return _num_threads
    return openmp.omp_get_max_threads()


cdef inline void _grad_ref(const double* f, const double* D, int p,
                           double* d0, double* d1, double* d2) noexcept nogil:
    cdef int i, j, k, m, q
    cdef double s0, s1, s2
    for i in range(p):
        for j in range(p):
            for k in range(p):
                s0 = 0.0
                s1 = 0.0
                s2 = 0.0
                for m in range(p):
                    s0 = s0 + D[i*p + m] * f[(m*p + j)*p + k]
                    s1 = s1 + D[j*p + m] * f[(i*p + m)*p + k]
                    s2 = s2 + D[k*p + m] * f[(i*p + j)*p + m]
                q = (i*p + j)*p + k
                d0[q] = s0
                d1[q] = s1
                d2[q] = s2


cdef inline void _div_ref_add(const double* q0, const double* q1, const double* q2,
                              const double* D, int p, double* out) noexcept nogil:
    cdef int i, j, k, m
    cdef double s
    for i in range(p):
        for j in range(p):
            for k in range(p):
                s = 0.0
                for m in range(p):
                    s = s + D[m*p + i] * q0[(m*p + j)*p + k]
                    s = s + D[m*p + j] * q1[(i*p + m)*p + k]
                    s = s + D[m*p + k] * q2[(i*p + j)*p + m]
                out[(i*p + j)*p + k] = s


cdef void _acoustic_elem(const double* phi, const long long* idx,
                         const double* geom, const double* D, int p,
                         double* buf, double* out_loc) noexcept nogil:
    cdef int p3 = p*p*p
    cdef double* f = buf
    cdef double* d0 = buf + p3
    cdef double* d1 = buf + 2*p3
    cdef double* d2 = buf + 3*p3
    cdef double* q0 = buf + 4*p3
    cdef double* q1 = buf + 5*p3
    cdef double* q2 = buf + 6*p3
    cdef int q
    cdef const double* g
    for q in range(p3):
        f[q] = phi[idx[q]]
    _grad_ref(f, D, p, d0, d1, d2)
    for q in range(p3):
        g = geom + 6*q
        q0[q] = g[0]*d0[q] + g[1]*d1[q] + g[2]*d2[q]
        q1[q] = g[1]*d0[q] + g[3]*d1[q] + g[4]*d2[q]
        q2[q] = g[2]*d0[q] + g[4]*d1[q] + g[5]*d2[q]
    _div_ref_add(q0, q1, q2, D, p, out_loc)


def acoustic_stiffness_apply(const double[::1] phi, const long long[:, ::1] idx,
                             const double[:, :, ::1] geom, const double[:, ::1] D,
                             double[::1] out):
    cdef Py_ssize_t n_e = idx.shape[0]
    if n_e == 0:
        return
    cdef int p = <int>D.shape[0]
    cdef int p3 = p*p*p
    out_local_arr = np.empty((n_e, p3), dtype=np.float64)
    cdef double[:, ::1] out_local = out_local_arr
    cdef Py_ssize_t e
    cdef int q
    cdef double* buf
    cdef int nthreads = _num_threads if _num_threads > 0 else openmp.omp_get_max_threads()
    with nogil, parallel(num_threads=nthreads):
        buf = <double*>malloc(sizeof(double) * 7 * p3)
        for e in prange(n_e, schedule='static'):
            _acoustic_elem(&phi[0], &idx[e, 0], &geom[e, 0, 0], &D[0, 0], p,
                           buf, &out_local[e, 0])
        free(buf)
    for e in range(n_e):
        for q in range(p3):
            out[idx[e, q]] += out_local[e, q]


cdef void _elastic_elem(const double* u, const long long* idx,
                        const double* jinv, const double* wdet,
                        double lam, double mu, const double* D, int p,
                        double* buf, double* out_loc) noexcept nogil:
    cdef int p3 = p*p*p
    cdef double* f = buf              # 3*p3: component-major local u
    cdef double* dref = buf + 3*p3    # 9*p3: dref[(3c+d)*p3 + q]
    cdef double* t = buf + 12*p3      # 9*p3: T[(3c+d)*p3 + q]
    cdef int q, c, d, e2
    cdef const double* ji
    cdef double h00, h01, h02, h10, h11, h12, h20, h21, h22
    cdef double e00, e01, e02, e11, e12, e22, tr, w
    cdef double s00, s01, s02, s10, s11, s12, s20, s21, s22
    for c in range(3):
        for q in range(p3):
            f[c*p3 + q] = u[3*idx[q] + c]
    for c in range(3):
        _grad_ref(f + c*p3, D, p, dref + (3*c + 0)*p3, dref + (3*c + 1)*p3,
                  dref + (3*c + 2)*p3)
    for q in range(p3):
        ji = jinv + 9*q
        # physical gradient H[c,e] = sum_d dref[c,d] * Jinv[d,e]
        h00 = dref[0*p3+q]*ji[0] + dref[1*p3+q]*ji[3] + dref[2*p3+q]*ji[6]
        h01 = dref[0*p3+q]*ji[1] + dref[1*p3+q]*ji[4] + dref[2*p3+q]*ji[7]
        h02 = dref[0*p3+q]*ji[2] + dref[1*p3+q]*ji[5] + dref[2*p3+q]*ji[8]
        h10 = dref[3*p3+q]*ji[0] + dref[4*p3+q]*ji[3] + dref[5*p3+q]*ji[6]
        h11 = dref[3*p3+q]*ji[1] + dref[4*p3+q]*ji[4] + dref[5*p3+q]*ji[7]
        h12 = dref[3*p3+q]*ji[2] + dref[4*p3+q]*ji[5] + dref[5*p3+q]*ji[8]
        h20 = dref[6*p3+q]*ji[0] + dref[7*p3+q]*ji[3] + dref[8*p3+q]*ji[6]
        h21 = dref[6*p3+q]*ji[1] + dref[7*p3+q]*ji[4] + dref[8*p3+q]*ji[7]
        h22 = dref[6*p3+q]*ji[2] + dref[7*p3+q]*ji[5] + dref[8*p3+q]*ji[8]
        e00 = h00
        e11 = h11
        e22 = h22
        e01 = 0.5*(h01 + h10)
        e02 = 0.5*(h02 + h20)
        e12 = 0.5*(h12 + h21)
        tr = e00 + e11 + e22
        s00 = lam*tr + 2.0*mu*e00
        s11 = lam*tr + 2.0*mu*e11
        s22 = lam*tr + 2.0*mu*e22
        s01 = 2.0*mu*e01
        s02 = 2.0*mu*e02
        s12 = 2.0*mu*e12
        s10 = s01
        s20 = s02
        s21 = s12
        w = wdet[q]
        # T[c,d] = w * sum_e sigma[c,e] * Jinv[d,e]
        t[(0*3+0)*p3+q] = w*(s00*ji[0] + s01*ji[1] + s02*ji[2])
        t[(0*3+1)*p3+q] = w*(s00*ji[3] + s01*ji[4] + s02*ji[5])
        t[(0*3+2)*p3+q] = w*(s00*ji[6] + s01*ji[7] + s02*ji[8])
        t[(1*3+0)*p3+q] = w*(s10*ji[0] + s11*ji[1] + s12*ji[2])
        t[(1*3+1)*p3+q] = w*(s10*ji[3] + s11*ji[4] + s12*ji[5])
        t[(1*3+2)*p3+q] = w*(s10*ji[6] + s11*ji[7] + s12*ji[8])
        t[(2*3+0)*p3+q] = w*(s20*ji[0] + s21*ji[1] + s22*ji[2])
        t[(2*3+1)*p3+q] = w*(s20*ji[3] + s21*ji[4] + s22*ji[5])
        t[(2*3+2)*p3+q] = w*(s20*ji[6] + s21*ji[7] + s22*ji[8])
    for c in range(3):
        _div_ref_add(t + (3*c + 0)*p3, t + (3*c + 1)*p3, t + (3*c + 2)*p3,
                     D, p, f)  # reuse f[0:p3] as scratch output
        for q in range(p3):
            out_loc[3*q + c] = f[q]


def elastic_stiffness_apply(const double[:, ::1] u, const long long[:, ::1] idx,
                            const double[:, :, :, ::1] jinv, const double[:, ::1] wdet,
                            const double[::1] lam, const double[::1] mu,
                            const double[:, ::1] D, double[:, ::1] out):
    cdef Py_ssize_t n_e = idx.shape[0]
    if n_e == 0:
        return
    cdef int p = <int>D.shape[0]
    cdef int p3 = p*p*p
    out_local_arr = np.empty((n_e, p3, 3), dtype=np.float64)
    cdef double[:, :, ::1] out_local = out_local_arr
    cdef Py_ssize_t e
    cdef int q, c
    cdef long long g
    cdef double* buf
    cdef int nthreads = _num_threads if _num_threads > 0 else openmp.omp_get_max_threads()
    with nogil, parallel(num_threads=nthreads):
        buf = <double*>malloc(sizeof(double) * 21 * p3)
        for e in prange(n_e, schedule='static'):
            _elastic_elem(&u[0, 0], &idx[e, 0], &jinv[e, 0, 0, 0], &wdet[e, 0],
                          lam[e], mu[e], &D[0, 0], p, buf, &out_local[e, 0, 0])
        free(buf)
    for e in range(n_e):
        for q in range(p3):
            g = idx[e, q]
            for c in range(3):
                out[g, c] += out_local[e, q, c]
