#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "oryx/errors.hpp"

namespace oryx {

enum class Modality { Image, ShortVideoFrame, LongVideoFrame };

// Row-major 2-D array. Token sequences are Mat with rows = N, cols = C.
template <typename T>
struct Mat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<T> v;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c, T fill = T(0))
        : rows(r), cols(c), v(static_cast<std::size_t>(r * c), fill) {}

    T& operator()(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * cols + j)]; }
    const T& operator()(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * cols + j)]; }

    std::span<T> row(std::int64_t i) { return {v.data() + i * cols, static_cast<std::size_t>(cols)}; }
    std::span<const T> row(std::int64_t i) const { return {v.data() + i * cols, static_cast<std::size_t>(cols)}; }

    std::int64_t size() const { return rows * cols; }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Raw pixels, H x W x channels row-major, values expected in [0, 1].
template <typename T>
struct VisualInput {
    int height = 0;
    int width = 0;
    int channels = 1;
    Modality modality = Modality::Image;
    std::vector<T> pixels;

    VisualInput() = default;
    VisualInput(int h, int w, int c, Modality m)
        : height(h), width(w), channels(c), modality(m),
          pixels(static_cast<std::size_t>(h) * w * c, T(0)) {}

    T& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    const T& at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

// Grid-shaped channel vectors; values laid out rows x cols x channels, which
// flattened row-major is exactly the [N x C] token view.
template <typename T>
struct FeatureMap {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    std::vector<T> values;

    FeatureMap() = default;
    FeatureMap(int r, int c, int ch)
        : rows(r), cols(c), channels(ch),
          values(static_cast<std::size_t>(r) * c * ch, T(0)) {}

    T& at(int r, int c, int ch) { return values[(static_cast<std::size_t>(r) * cols + c) * channels + ch]; }
    const T& at(int r, int c, int ch) const { return values[(static_cast<std::size_t>(r) * cols + c) * channels + ch]; }

    std::span<T> token(std::int64_t n) { return {values.data() + n * channels, static_cast<std::size_t>(channels)}; }
    std::span<const T> token(std::int64_t n) const { return {values.data() + n * channels, static_cast<std::size_t>(channels)}; }

    std::int64_t token_count() const { return static_cast<std::int64_t>(rows) * cols; }

    Mat<T> to_tokens() const {
        Mat<T> m(token_count(), channels);
        m.v = values;
        return m;
    }

    static FeatureMap from_tokens(const Mat<T>& m, int rows, int cols) {
        if (m.rows != static_cast<std::int64_t>(rows) * cols)
            throw ShapeError("token count does not match grid");
        FeatureMap f(rows, cols, static_cast<int>(m.cols));
        f.values = m.v;
        return f;
    }
};

// ---- small dense kernels (desk scale, plain loops) ----

// C = A * B, A: [m x k], B: [k x n]
template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions differ");
    Mat<T> c(a.rows, b.cols);
    for (std::int64_t i = 0; i < a.rows; ++i) {
        for (std::int64_t k = 0; k < a.cols; ++k) {
            const T aik = a(i, k);
            if (aik == T(0)) continue;
            for (std::int64_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

// C += A^T * B, A: [m x k], B: [m x n], C: [k x n]
template <typename T>
void matmul_at_acc(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
        throw ShapeError("matmul_at_acc: shape mismatch");
    for (std::int64_t i = 0; i < a.rows; ++i)
        for (std::int64_t k = 0; k < a.cols; ++k) {
            const T aik = a(i, k);
            if (aik == T(0)) continue;
            for (std::int64_t j = 0; j < b.cols; ++j) c(k, j) += aik * b(i, j);
        }
}

// C = A * B^T, A: [m x k], B: [n x k]
template <typename T>
Mat<T> matmul_bt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols) throw ShapeError("matmul_bt: inner dimensions differ");
    Mat<T> c(a.rows, b.rows);
    for (std::int64_t i = 0; i < a.rows; ++i)
        for (std::int64_t j = 0; j < b.rows; ++j) {
            T s = T(0);
            for (std::int64_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
            c(i, j) = s;
        }
    return c;
}

template <typename T>
void add_row_bias(Mat<T>& m, std::span<const T> bias) {
    if (static_cast<std::int64_t>(bias.size()) != m.cols) throw ShapeError("bias length != cols");
    for (std::int64_t i = 0; i < m.rows; ++i)
        for (std::int64_t j = 0; j < m.cols; ++j) m(i, j) += bias[static_cast<std::size_t>(j)];
}

// rows of m summed into out (bias gradient)
template <typename T>
void col_sums_acc(const Mat<T>& m, std::span<T> out) {
    for (std::int64_t i = 0; i < m.rows; ++i)
        for (std::int64_t j = 0; j < m.cols; ++j) out[static_cast<std::size_t>(j)] += m(i, j);
}

} // namespace oryx
