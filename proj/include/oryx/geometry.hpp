#pragma once

#include <cstdint>

#include "oryx/errors.hpp"

namespace oryx {

inline constexpr int kPatchSize = 16;
inline constexpr int kImageMaxSide = 1536;   // stage-2 image pixel budget side
inline constexpr int kVideoMinSide = 288;
inline constexpr int kVideoMaxSide = 480;

struct Resolution {
    int height = 0;
    int width = 0;
    bool operator==(const Resolution&) const = default;
    std::int64_t area() const { return static_cast<std::int64_t>(height) * width; }
};

struct PatchGrid {
    int rows = 0;
    int cols = 0;
    int patch_size = kPatchSize;
    std::int64_t token_count = 0;
    bool operator==(const PatchGrid&) const = default;
};

namespace detail {

using u128 = unsigned __int128;

// floor(sqrt(x)) by bit-descending search; exact for all x.
inline std::uint64_t isqrt_u128(u128 x) {
    std::uint64_t r = 0;
    for (int b = 63; b >= 0; --b) {
        const std::uint64_t t = r | (std::uint64_t(1) << b);
        if (u128(t) * t <= x) r = t;
    }
    return r;
}

// floor(sqrt(num/den)) over the exact rational; floor(sqrt(r)) = isqrt(floor(r)).
inline std::uint64_t isqrt_floor_ratio(u128 num, u128 den) {
    return isqrt_u128(num / den);
}

// ceil(sqrt(num/den)): smallest f with f^2 * den >= num.
inline std::uint64_t isqrt_ceil_ratio(u128 num, u128 den) {
    std::uint64_t f = isqrt_floor_ratio(num, den);
    if (u128(f) * f * den < num) ++f;
    return f;
}

inline void check_positive(const Resolution& res) {
    if (res.height <= 0 || res.width <= 0)
        throw InvalidInput("resolution sides must be positive");
}

// side * sqrt(budget/area), floored (downscale) or ceiled (upscale).
inline int scale_side(int side, u128 budget, u128 area, bool up) {
    const u128 num = u128(side) * u128(side) * budget;
    const std::uint64_t s = up ? isqrt_ceil_ratio(num, area) : isqrt_floor_ratio(num, area);
    return static_cast<int>(s);
}

} // namespace detail

// Downscale so H*W <= max_area_side^2, aspect preserved. Flooring each side
// keeps the area under budget exactly; sides never land below p.
inline Resolution plan_image_resolution(Resolution res, int max_area_side,
                                        int p = kPatchSize) {
    detail::check_positive(res);
    if (max_area_side <= 0) throw InvalidInput("max_area_side must be positive");
    const detail::u128 area = detail::u128(res.height) * res.width;
    const detail::u128 budget = detail::u128(max_area_side) * max_area_side;
    Resolution out = res;
    if (area > budget) {
        out.height = detail::scale_side(res.height, budget, area, false);
        out.width = detail::scale_side(res.width, budget, area, false);
    }
    if (out.height < p) out.height = p;
    if (out.width < p) out.width = p;
    return out;
}

// Clamp H*W into [min_side^2, max_side^2]: ceil when scaling up, floor when
// scaling down, so the landed area respects the bound it was pushed toward.
inline Resolution plan_video_resolution(Resolution res, int min_side = kVideoMinSide,
                                        int max_side = kVideoMaxSide,
                                        int p = kPatchSize) {
    detail::check_positive(res);
    if (min_side <= 0 || min_side > max_side)
        throw InvalidInput("need 0 < min_side <= max_side");
    const detail::u128 area = detail::u128(res.height) * res.width;
    const detail::u128 lo = detail::u128(min_side) * min_side;
    const detail::u128 hi = detail::u128(max_side) * max_side;
    Resolution out = res;
    if (area < lo) {
        out.height = detail::scale_side(res.height, lo, area, true);
        out.width = detail::scale_side(res.width, lo, area, true);
    } else if (area > hi) {
        out.height = detail::scale_side(res.height, hi, area, false);
        out.width = detail::scale_side(res.width, hi, area, false);
    }
    if (out.height < p) out.height = p;
    if (out.width < p) out.width = p;
    return out;
}

inline PatchGrid patch_grid(Resolution res, int p = kPatchSize) {
    if (p <= 0) throw InvalidInput("patch size must be positive");
    detail::check_positive(res);
    if (res.height < p || res.width < p)
        throw TooSmall("resolution smaller than one patch");
    PatchGrid g;
    g.rows = res.height / p;
    g.cols = res.width / p;
    g.patch_size = p;
    g.token_count = static_cast<std::int64_t>(g.rows) * g.cols;
    return g;
}

} // namespace oryx
