#pragma once

#include <cmath>
#include <cstdint>

#include "oryx/core.hpp"
#include "oryx/errors.hpp"
#include "oryx/geometry.hpp"
#include "oryx/rng.hpp"

namespace oryx {

// One table sized for the largest supported grid (128x128 covers 2048-pixel
// sides at p=16); rescaled per input, never indexed directly.
template <typename T>
struct PositionTable {
    int grid_rows = 0;
    int grid_cols = 0;
    int channels = 0;
    std::vector<T> values;

    T& at(int r, int c, int ch) { return values[(static_cast<std::size_t>(r) * grid_cols + c) * channels + ch]; }
    const T& at(int r, int c, int ch) const { return values[(static_cast<std::size_t>(r) * grid_cols + c) * channels + ch]; }
};

template <typename T>
PositionTable<T> build_table(int grid_rows, int grid_cols, int channels, std::uint64_t seed) {
    if (grid_rows <= 0 || grid_cols <= 0 || channels <= 0)
        throw InvalidInput("table dimensions must be positive");
    PositionTable<T> t;
    t.grid_rows = grid_rows;
    t.grid_cols = grid_cols;
    t.channels = channels;
    t.values.resize(static_cast<std::size_t>(grid_rows) * grid_cols * channels);
    Rng rng(seed);
    fill_truncated_normal<T>(t.values, rng, T(0.02));
    return t;
}

namespace detail {

// align-corners source coordinate for target index i: spans [0, G-1] across
// the target axis; grid centers coincide when shapes match
inline double source_coord(int i, int grid, int target) {
    if (target > 1) return double(i) * double(grid - 1) / double(target - 1);
    return double(grid - 1) / 2.0;
}

struct LerpTap {
    int lo = 0;
    int hi = 0;
    double w_hi = 0.0; // weight of hi sample; lo gets 1 - w_hi
};

inline LerpTap lerp_tap(int i, int grid, int target) {
    LerpTap tap;
    if (grid == 1) return tap;
    const double u = source_coord(i, grid, target);
    int lo = static_cast<int>(std::floor(u));
    if (lo > grid - 2) lo = grid - 2;
    if (lo < 0) lo = 0;
    tap.lo = lo;
    tap.hi = lo + 1;
    tap.w_hi = u - lo;
    return tap;
}

} // namespace detail

// Bilinear rescale of the table onto the target grid. The native-grid case
// returns the stored values verbatim so repeated round trips stay bitwise
// stable.
template <typename T>
FeatureMap<T> interpolate(const PositionTable<T>& table, const PatchGrid& target) {
    if (target.rows < 1 || target.cols < 1) throw InvalidInput("target grid is empty");
    FeatureMap<T> out(target.rows, target.cols, table.channels);
    if (target.rows == table.grid_rows && target.cols == table.grid_cols) {
        out.values = table.values;
        return out;
    }
    for (int i = 0; i < target.rows; ++i) {
        const detail::LerpTap ty = detail::lerp_tap(i, table.grid_rows, target.rows);
        for (int j = 0; j < target.cols; ++j) {
            const detail::LerpTap tx = detail::lerp_tap(j, table.grid_cols, target.cols);
            const double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
            const double w01 = (1.0 - ty.w_hi) * tx.w_hi;
            const double w10 = ty.w_hi * (1.0 - tx.w_hi);
            const double w11 = ty.w_hi * tx.w_hi;
            for (int ch = 0; ch < table.channels; ++ch) {
                const double s = w00 * table.at(ty.lo, tx.lo, ch)
                               + w01 * table.at(ty.lo, tx.hi, ch)
                               + w10 * table.at(ty.hi, tx.lo, ch)
                               + w11 * table.at(ty.hi, tx.hi, ch);
                out.at(i, j, ch) = static_cast<T>(s);
            }
        }
    }
    return out;
}

// Transpose of interpolate: scatters target-grid cotangents back onto the
// table through the same taps. Mirrors the identity shortcut.
template <typename T>
void interpolate_backward(const PositionTable<T>& table, const PatchGrid& target,
                          const FeatureMap<T>& d_out, std::span<T> d_table) {
    if (d_out.rows != target.rows || d_out.cols != target.cols || d_out.channels != table.channels)
        throw ShapeError("cotangent shape does not match target grid");
    if (d_table.size() != table.values.size())
        throw ShapeError("table gradient size mismatch");
    if (target.rows == table.grid_rows && target.cols == table.grid_cols) {
        for (std::size_t k = 0; k < d_table.size(); ++k) d_table[k] += d_out.values[k];
        return;
    }
    const int gc = table.grid_cols, ch_n = table.channels;
    auto slot = [&](int r, int c, int ch) -> T& {
        return d_table[(static_cast<std::size_t>(r) * gc + c) * ch_n + ch];
    };
    for (int i = 0; i < target.rows; ++i) {
        const detail::LerpTap ty = detail::lerp_tap(i, table.grid_rows, target.rows);
        for (int j = 0; j < target.cols; ++j) {
            const detail::LerpTap tx = detail::lerp_tap(j, table.grid_cols, target.cols);
            const double w00 = (1.0 - ty.w_hi) * (1.0 - tx.w_hi);
            const double w01 = (1.0 - ty.w_hi) * tx.w_hi;
            const double w10 = ty.w_hi * (1.0 - tx.w_hi);
            const double w11 = ty.w_hi * tx.w_hi;
            for (int ch = 0; ch < ch_n; ++ch) {
                const T g = d_out.at(i, j, ch);
                slot(ty.lo, tx.lo, ch) += static_cast<T>(w00 * g);
                slot(ty.lo, tx.hi, ch) += static_cast<T>(w01 * g);
                slot(ty.hi, tx.lo, ch) += static_cast<T>(w10 * g);
                slot(ty.hi, tx.hi, ch) += static_cast<T>(w11 * g);
            }
        }
    }
}

// x = x + P on the flattened token view
template <typename T>
Mat<T> apply_positions(const Mat<T>& tokens, const Mat<T>& pos) {
    if (!tokens.same_shape(pos)) throw ShapeError("token and position shapes differ");
    Mat<T> out = tokens;
    for (std::int64_t k = 0; k < out.size(); ++k) out.v[static_cast<std::size_t>(k)] += pos.v[static_cast<std::size_t>(k)];
    return out;
}

} // namespace oryx
