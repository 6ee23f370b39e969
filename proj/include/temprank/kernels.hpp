#pragma once

#include <cmath>
#include <cstddef>

// Dense kernels behind the sequence model. temprank::kernels is the OpenMP
// path used everywhere; temprank::kernels::ref is the serial reference the
// tests and the benchmark compare against. Both dispatch to the same per-row
// workers, so for a given output row the arithmetic (and therefore the bits)
// is identical regardless of scheduling.

namespace temprank::kernels {

namespace detail {

template <class T>
inline void matmul_row(T* c, const T* a, const T* B, int k, int n, bool accumulate) {
    if (!accumulate)
        for (int j = 0; j < n; ++j) c[j] = T(0);
    for (int l = 0; l < k; ++l) {
        const T al = a[l];
        const T* b = B + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) c[j] += al * b[j];
    }
}

template <class T>
inline void matmul_nt_row(T* c, const T* a, const T* B, int k, int n, bool accumulate) {
    for (int j = 0; j < n; ++j) {
        const T* b = B + static_cast<size_t>(j) * k;
        T acc = T(0);
        for (int l = 0; l < k; ++l) acc += a[l] * b[l];
        c[j] = accumulate ? c[j] + acc : acc;
    }
}

// one row of C[k x n] += A^T B, i.e. C[l,:] += sum_i A[i,l] * B[i,:]
template <class T>
inline void matmul_tn_row(T* c, const T* A, const T* B, int m, int k, int n, int l) {
    for (int i = 0; i < m; ++i) {
        const T ail = A[static_cast<size_t>(i) * k + l];
        const T* b = B + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) c[j] += ail * b[j];
    }
}

template <class T>
inline void softmax_row(T* x, int n) {
    T mx = x[0];
    for (int j = 1; j < n; ++j) mx = x[j] > mx ? x[j] : mx;
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
        x[j] = std::exp(x[j] - mx);
        sum += x[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < n; ++j) x[j] *= inv;
}

// ds = (dp - <dp,p>) * p
template <class T>
inline void softmax_grad_row(T* ds, const T* p, const T* dp, int n) {
    T dot = T(0);
    for (int j = 0; j < n; ++j) dot += dp[j] * p[j];
    for (int j = 0; j < n; ++j) ds[j] = (dp[j] - dot) * p[j];
}

template <class T>
inline T gelu_one(T x) {
    const T c = T(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <class T>
inline T gelu_grad_one(T x) {
    const T c = T(0.7978845608028654);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <class T>
inline void layernorm_row(T* y, T* mean, T* rstd, const T* x, const T* gamma, const T* beta,
                          int d, T eps) {
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += x[j];
    mu /= T(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
        const T dx = x[j] - mu;
        var += dx * dx;
    }
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) y[j] = gamma[j] * ((x[j] - mu) * rs) + beta[j];
    *mean = mu;
    *rstd = rs;
}

// dx += rstd * gamma .* (dy - mean(dy.*gamma)/gamma ... ) expanded below;
// dgamma += dy .* xhat ; dbeta += dy  (gamma/beta grads handled by caller
// row-serially because they are shared across rows)
template <class T>
inline void layernorm_grad_row_dx(T* dx, const T* dy, const T* x, const T* gamma, T mean, T rstd,
                                  int d) {
    T sum_dxhat = T(0);
    T sum_dxhat_xhat = T(0);
    for (int j = 0; j < d; ++j) {
        const T xhat = (x[j] - mean) * rstd;
        const T dxhat = dy[j] * gamma[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
    }
    const T inv_d = T(1) / T(d);
    for (int j = 0; j < d; ++j) {
        const T xhat = (x[j] - mean) * rstd;
        const T dxhat = dy[j] * gamma[j];
        dx[j] += rstd * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
}

}  // namespace detail

// ---------------------------------------------------------------- serial ref

namespace ref {

template <class T>
void matmul(T* C, const T* A, const T* B, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * n, A + static_cast<size_t>(i) * k, B, k, n,
                           accumulate);
}

template <class T>
void matmul_nt(T* C, const T* A, const T* B, int m, int k, int n, bool accumulate = false) {
    for (int i = 0; i < m; ++i)
        detail::matmul_nt_row(C + static_cast<size_t>(i) * n, A + static_cast<size_t>(i) * k, B, k,
                              n, accumulate);
}

template <class T>
void matmul_tn_acc(T* C, const T* A, const T* B, int m, int k, int n) {
    for (int l = 0; l < k; ++l)
        detail::matmul_tn_row(C + static_cast<size_t>(l) * n, A, B, m, k, n, l);
}

template <class T>
void softmax_rows(T* X, int rows, int n) {
    for (int i = 0; i < rows; ++i) detail::softmax_row(X + static_cast<size_t>(i) * n, n);
}

template <class T>
void gelu(T* Y, const T* X, size_t count) {
    for (size_t i = 0; i < count; ++i) Y[i] = detail::gelu_one(X[i]);
}

template <class T>
void gelu_grad(T* dX, const T* X, const T* dY, size_t count) {
    for (size_t i = 0; i < count; ++i) dX[i] = dY[i] * detail::gelu_grad_one(X[i]);
}

template <class T>
void layernorm(T* Y, T* mean, T* rstd, const T* X, const T* gamma, const T* beta, int rows, int d,
               T eps) {
    for (int i = 0; i < rows; ++i)
        detail::layernorm_row(Y + static_cast<size_t>(i) * d, mean + i, rstd + i,
                              X + static_cast<size_t>(i) * d, gamma, beta, d, eps);
}

}  // namespace ref

// ------------------------------------------------------------- OpenMP path

// Parallelism is over independent output rows only; below the grain cutoff
// the loop runs serially, so results never depend on the thread count.
constexpr long long kOmpGrain = 1lu << 15;

template <class T>
void matmul(T* C, const T* A, const T* B, int m, int k, int n, bool accumulate = false) {
    const long long work = 1ll * m * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpGrain && m > 1)
    for (int i = 0; i < m; ++i)
        detail::matmul_row(C + static_cast<size_t>(i) * n, A + static_cast<size_t>(i) * k, B, k, n,
                           accumulate);
}

template <class T>
void matmul_nt(T* C, const T* A, const T* B, int m, int k, int n, bool accumulate = false) {
    const long long work = 1ll * m * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpGrain && m > 1)
    for (int i = 0; i < m; ++i)
        detail::matmul_nt_row(C + static_cast<size_t>(i) * n, A + static_cast<size_t>(i) * k, B, k,
                              n, accumulate);
}

template <class T>
void matmul_tn_acc(T* C, const T* A, const T* B, int m, int k, int n) {
    const long long work = 1ll * m * k * n;
#pragma omp parallel for schedule(static) if (work > kOmpGrain && k > 1)
    for (int l = 0; l < k; ++l)
        detail::matmul_tn_row(C + static_cast<size_t>(l) * n, A, B, m, k, n, l);
}

template <class T>
void softmax_rows(T* X, int rows, int n) {
#pragma omp parallel for schedule(static) if (1ll * rows * n > kOmpGrain && rows > 1)
    for (int i = 0; i < rows; ++i) detail::softmax_row(X + static_cast<size_t>(i) * n, n);
}

template <class T>
void gelu(T* Y, const T* X, size_t count) {
    const long long cnt = static_cast<long long>(count);
#pragma omp parallel for schedule(static) if (cnt > kOmpGrain)
    for (long long i = 0; i < cnt; ++i) Y[i] = detail::gelu_one(X[i]);
}

template <class T>
void gelu_grad(T* dX, const T* X, const T* dY, size_t count) {
    const long long cnt = static_cast<long long>(count);
#pragma omp parallel for schedule(static) if (cnt > kOmpGrain)
    for (long long i = 0; i < cnt; ++i) dX[i] = dY[i] * detail::gelu_grad_one(X[i]);
}

template <class T>
void layernorm(T* Y, T* mean, T* rstd, const T* X, const T* gamma, const T* beta, int rows, int d,
               T eps) {
#pragma omp parallel for schedule(static) if (1ll * rows * d > kOmpGrain && rows > 1)
    for (int i = 0; i < rows; ++i)
        detail::layernorm_row(Y + static_cast<size_t>(i) * d, mean + i, rstd + i,
                              X + static_cast<size_t>(i) * d, gamma, beta, d, eps);
}

// ------------------------------------------------ shared small helpers

template <class T>
void add_bias_rows(T* X, const T* b, int rows, int n) {
    for (int i = 0; i < rows; ++i) {
        T* x = X + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) x[j] += b[j];
    }
}

template <class T>
void bias_grad_acc(T* db, const T* dY, int rows, int n) {
    for (int i = 0; i < rows; ++i) {
        const T* dy = dY + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) db[j] += dy[j];
    }
}

template <class T>
void layernorm_grad(T* dX, T* dgamma, T* dbeta, const T* dY, const T* X, const T* gamma,
                    const T* mean, const T* rstd, int rows, int d) {
    for (int i = 0; i < rows; ++i) {
        const T* dy = dY + static_cast<size_t>(i) * d;
        const T* x = X + static_cast<size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            dgamma[j] += dy[j] * ((x[j] - mean[i]) * rstd[i]);
            dbeta[j] += dy[j];
        }
        detail::layernorm_grad_row_dx(dX + static_cast<size_t>(i) * d, dy, x, gamma, mean[i],
                                      rstd[i], d);
    }
}

}  // namespace temprank::kernels
