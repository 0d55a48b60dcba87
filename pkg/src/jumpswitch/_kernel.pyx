# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels; see ``_kernel_py`` for the reference semantics."""
import numpy as np

from libc.math cimport sqrt, pow
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport dgemm

cdef extern from "_fastmath.h" nogil:
    double js_tanh(double x)
    void js_tanh_inplace(double* a, long n)

NAME = "cython"


def tanh(const double[::1] a):
    """Elementwise tanh with the kernel's vectorised implementation."""
    out = np.array(a, dtype=np.float64)
    cdef double[::1] o = out
    if o.shape[0]:
        with nogil:
            js_tanh_inplace(&o[0], o.shape[0])
    return out


cdef void mm(bint ta, bint tb, int M, int N, int K, double alpha,
             const double* A, int lda, const double* B, int ldb,
             double beta, double* C, int ldc) noexcept nogil:
    # row-major C = alpha op(A) op(B) + beta C via column-major C^T = op(B)^T op(A)^T
    cdef char ca = b'T' if ta else b'N'
    cdef char cb = b'T' if tb else b'N'
    dgemm(&cb, &ca, &N, &M, &K, &alpha, <double*>B, &ldb, <double*>A, &lda, &beta, C, &ldc)


cdef struct Net:
    int L            # number of affine layers
    int* sizes       # L + 1 entries
    int* woff        # offset of W_l in theta
    int* boff        # offset of b_l in theta
    int maxw


cdef int net_init(Net* net, const long[::1] sizes) except -1:
    cdef int L = sizes.shape[0] - 1
    cdef int l, off = 0
    net.L = L
    net.sizes = <int*>malloc((L + 1) * sizeof(int))
    net.woff = <int*>malloc(L * sizeof(int))
    net.boff = <int*>malloc(L * sizeof(int))
    net.maxw = 0
    for l in range(L + 1):
        net.sizes[l] = <int>sizes[l]
        if net.sizes[l] > net.maxw:
            net.maxw = net.sizes[l]
    for l in range(L):
        net.woff[l] = off
        off += net.sizes[l] * net.sizes[l + 1]
        net.boff[l] = off
        off += net.sizes[l + 1]
    return 0


cdef void net_free(Net* net) noexcept nogil:
    free(net.sizes)
    free(net.woff)
    free(net.boff)


cdef double batch_loss_grad(Net* net, const double* theta, int B, const double* x,
                            const double* t, const double* dw, const double* dn, int m,
                            double** acts, double* delta, double* delta2,
                            double* grad) noexcept nogil:
    """acts[0] must hold the B x d input; acts[l] has room for B x sizes[l]."""
    cdef int L = net.L
    cdef int l, i, j, n_in, n_out
    cdef double* a
    cdef double* bias
    cdef double r, s, c, loss = 0.0
    cdef double* tmp
    # forward
    for l in range(L):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        a = acts[l + 1]
        bias = <double*>theta + net.boff[l]
        for i in range(B):
            for j in range(n_out):
                a[i * n_out + j] = bias[j]
        mm(False, True, B, n_out, n_in, 1.0, acts[l], n_in, theta + net.woff[l], n_in,
           1.0, a, n_out)
        if l < L - 1:
            js_tanh_inplace(a, B * n_out)
    # residual and output delta
    n_out = net.sizes[L]
    a = acts[L]
    for i in range(B):
        s = t[i] - a[i * n_out]
        for j in range(m):
            s -= a[i * n_out + 1 + j] * dw[i * m + j]
        s -= a[i * n_out + 1 + m] * dn[i]
        loss += s * s
        c = -2.0 * s / B
        delta[i * n_out] = c
        for j in range(m):
            delta[i * n_out + 1 + j] = c * dw[i * m + j]
        delta[i * n_out + 1 + m] = c * dn[i]
    # backward
    for l in range(L - 1, -1, -1):
        n_in = net.sizes[l]
        n_out = net.sizes[l + 1]
        mm(True, False, n_out, n_in, B, 1.0, delta, n_out, acts[l], n_in, 0.0,
           grad + net.woff[l], n_in)
        bias = grad + net.boff[l]
        for j in range(n_out):
            bias[j] = 0.0
        for i in range(B):
            for j in range(n_out):
                bias[j] += delta[i * n_out + j]
        if l > 0:
            mm(False, False, B, n_in, n_out, 1.0, delta, n_out, theta + net.woff[l], n_in,
               0.0, delta2, n_in)
            a = acts[l]
            for i in range(B * n_in):
                delta2[i] *= 1.0 - a[i] * a[i]
            tmp = delta
            delta = delta2
            delta2 = tmp
    return loss / B


cdef double** alloc_acts(Net* net, int B) noexcept nogil:
    cdef double** acts = <double**>malloc((net.L + 1) * sizeof(double*))
    cdef int l
    for l in range(net.L + 1):
        acts[l] = <double*>malloc(B * net.sizes[l] * sizeof(double))
    return acts


cdef void free_acts(Net* net, double** acts) noexcept nogil:
    cdef int l
    for l in range(net.L + 1):
        free(acts[l])
    free(acts)


def forward(const double[::1] theta, const long[::1] sizes, const double[:, ::1] x):
    cdef Net net
    net_init(&net, sizes)
    cdef int B = x.shape[0]
    cdef int L = net.L
    cdef int l, i, j, n_in, n_out
    out = np.empty((B, net.sizes[L]))
    cdef double[:, ::1] o = out
    cdef double** acts
    cdef double* a
    cdef const double* bias
    with nogil:
        acts = alloc_acts(&net, B)
        for i in range(B * net.sizes[0]):
            acts[0][i] = x[i // net.sizes[0], i % net.sizes[0]]
        for l in range(L):
            n_in = net.sizes[l]
            n_out = net.sizes[l + 1]
            a = acts[l + 1]
            bias = &theta[0] + net.boff[l]
            for i in range(B):
                for j in range(n_out):
                    a[i * n_out + j] = bias[j]
            mm(False, True, B, n_out, n_in, 1.0, acts[l], n_in, &theta[0] + net.woff[l],
               n_in, 1.0, a, n_out)
            if l < L - 1:
                js_tanh_inplace(a, B * n_out)
        for i in range(B):
            for j in range(net.sizes[L]):
                o[i, j] = acts[L][i * net.sizes[L] + j]
        free_acts(&net, acts)
        net_free(&net)
    return out


def loss_grad(const double[::1] theta, const long[::1] sizes, const double[:, ::1] x,
              const double[::1] t, const double[:, ::1] dw, const double[::1] dn,
              double[::1] grad):
    cdef Net net
    net_init(&net, sizes)
    cdef int B = x.shape[0]
    cdef int m = dw.shape[1]
    cdef double loss
    cdef double** acts
    cdef double* delta
    cdef double* delta2
    cdef int i
    with nogil:
        acts = alloc_acts(&net, B)
        delta = <double*>malloc(B * net.maxw * sizeof(double))
        delta2 = <double*>malloc(B * net.maxw * sizeof(double))
        for i in range(B * net.sizes[0]):
            acts[0][i] = x[i // net.sizes[0], i % net.sizes[0]]
        loss = batch_loss_grad(&net, &theta[0], B, acts[0], &t[0], &dw[0, 0], &dn[0], m,
                               acts, delta, delta2, &grad[0])
        free(delta)
        free(delta2)
        free_acts(&net, acts)
        net_free(&net)
    return loss


cdef void adam(double* theta, const double* g, double* m, double* v, int n, long step,
               double lr, double b1, double b2, double eps, double clamp) noexcept nogil:
    cdef double c1 = 1.0 - pow(b1, <double>step)
    cdef double c2 = 1.0 - pow(b2, <double>step)
    cdef int k
    cdef double th
    for k in range(n):
        m[k] = b1 * m[k] + (1.0 - b1) * g[k]
        v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k]
        th = theta[k] - lr * (m[k] / c1) / (sqrt(v[k] / c2) + eps)
        if clamp > 0:
            if th > clamp:
                th = clamp
            elif th < -clamp:
                th = -clamp
        theta[k] = th


def adam_update(double[::1] theta, const double[::1] grad, double[::1] m, double[::1] v,
                long step, double lr, double beta1, double beta2, double eps, double clamp):
    with nogil:
        adam(&theta[0], &grad[0], &m[0], &v[0], theta.shape[0], step, lr, beta1, beta2,
             eps, clamp)


def train_epochs(double[::1] theta, const long[::1] sizes, const double[:, ::1] x,
                 const double[::1] t, const double[:, ::1] dw, const double[::1] dn,
                 const long[:, ::1] order, int batch, double lr, double beta1, double beta2,
                 double eps, double clamp, double[::1] m, double[::1] v, long step):
    cdef Net net
    net_init(&net, sizes)
    cdef int epochs = order.shape[0]
    cdef int P = order.shape[1]
    cdef int d = x.shape[1]
    cdef int mw = dw.shape[1]
    cdef int n = theta.shape[0]
    losses_arr = np.empty(epochs)
    cdef double[::1] losses = losses_arr
    cdef double** acts
    cdef double* delta
    cdef double* delta2
    cdef double* grad
    cdef double* bt
    cdef double* bw
    cdef double* bn
    cdef double total, loss
    cdef int e, lo, B, i, j
    cdef long r
    with nogil:
        acts = alloc_acts(&net, batch)
        delta = <double*>malloc(batch * net.maxw * sizeof(double))
        delta2 = <double*>malloc(batch * net.maxw * sizeof(double))
        grad = <double*>malloc(n * sizeof(double))
        bt = <double*>malloc(batch * sizeof(double))
        bw = <double*>malloc(batch * mw * sizeof(double))
        bn = <double*>malloc(batch * sizeof(double))
        for e in range(epochs):
            total = 0.0
            lo = 0
            while lo < P:
                B = batch if P - lo > batch else P - lo
                for i in range(B):
                    r = order[e, lo + i]
                    for j in range(d):
                        acts[0][i * d + j] = x[r, j]
                    for j in range(mw):
                        bw[i * mw + j] = dw[r, j]
                    bt[i] = t[r]
                    bn[i] = dn[r]
                loss = batch_loss_grad(&net, &theta[0], B, acts[0], bt, bw, bn, mw,
                                       acts, delta, delta2, grad)
                total += loss * B
                step += 1
                adam(&theta[0], grad, &m[0], &v[0], n, step, lr, beta1, beta2, eps, clamp)
                lo += B
            losses[e] = total / P
        free(delta)
        free(delta2)
        free(grad)
        free(bt)
        free(bw)
        free(bn)
        free_acts(&net, acts)
        net_free(&net)
    return step, losses_arr
