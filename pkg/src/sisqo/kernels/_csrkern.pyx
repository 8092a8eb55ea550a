# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels: row-major matvec and transpose matvec.

These two loops sit inside every Lanczos/CG iteration and dominate the
solver's runtime, hence the C implementation.  Signatures mirror
``sisqo.kernels.reference`` exactly.
"""


def csr_matvec(const long long[::1] indptr, const long long[::1] indices,
               const double[::1] data, const double[::1] x,
               double[::1] out):
    """out[i] = sum_k data[k] * x[indices[k]] over row i's entries."""
    cdef Py_ssize_t i, k, nrows = out.shape[0]
    cdef double acc
    for i in range(nrows):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        out[i] = acc


def csr_rmatvec(const long long[::1] indptr, const long long[::1] indices,
                const double[::1] data, const double[::1] x,
                double[::1] out):
    """out[j] += data[k] * x[i] for every entry (i, j): the transpose apply."""
    cdef Py_ssize_t i, k, nrows = x.shape[0], ncols = out.shape[0]
    for i in range(ncols):
        out[i] = 0.0
    for i in range(nrows):
        for k in range(indptr[i], indptr[i + 1]):
            out[indices[k]] += data[k] * x[i]
