#pragma once

#include <cstddef>
#include <vector>

namespace temprank {

// Dense row-major matrix. Rows are the hot axis; kernels take raw pointers.
template <class T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * static_cast<size_t>(c)) {}

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
    T* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
    const T* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
    T& operator()(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    const T& operator()(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }
    size_t size() const { return v.size(); }
};

}  // namespace temprank
