# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled 1-d cross-correlation kernels (forward + backward).

Caller zero-pads the input and allocates outputs; these loops only fill them.
"""

ctypedef fused real:
    float
    double


def conv1d_forward(real[:, ::1] xp, real[:, :, ::1] w, int stride, real[:, ::1] out):
    cdef Py_ssize_t L_out = out.shape[0]
    cdef Py_ssize_t C_out = out.shape[1]
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t C_in = w.shape[1]
    cdef Py_ssize_t t, o, k, c, base
    cdef real acc
    for t in range(L_out):
        base = t * stride
        for o in range(C_out):
            acc = 0
            for k in range(K):
                for c in range(C_in):
                    acc += xp[base + k, c] * w[k, c, o]
            out[t, o] = acc


def conv1d_backward(real[:, ::1] xp, real[:, :, ::1] w, int stride,
                    real[:, ::1] dy, real[:, ::1] dxp, real[:, :, ::1] dw):
    cdef Py_ssize_t L_out = dy.shape[0]
    cdef Py_ssize_t C_out = dy.shape[1]
    cdef Py_ssize_t K = w.shape[0]
    cdef Py_ssize_t C_in = w.shape[1]
    cdef Py_ssize_t t, o, k, c, base
    cdef real g
    for t in range(L_out):
        base = t * stride
        for o in range(C_out):
            g = dy[t, o]
            if g == 0:
                continue
            for k in range(K):
                for c in range(C_in):
                    dxp[base + k, c] += g * w[k, c, o]
                    dw[k, c, o] += g * xp[base + k, c]
