#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "oryx/geometry.hpp"
#include "oryx/rng.hpp"

using namespace oryx;

TEST_CASE("image planning matches hand-checked cases") {
    // s = 0.75 exactly
    REQUIRE(plan_image_resolution({2048, 2048}, 1536) == Resolution{1536, 1536});
    // under budget, untouched
    REQUIRE(plan_image_resolution({800, 600}, 1536) == Resolution{800, 600});
    // s = sqrt(1536^2 / 12e6): 4000s = 1773.62.., 3000s = 1330.21..
    REQUIRE(plan_image_resolution({4000, 3000}, 1536) == Resolution{1773, 1330});
    REQUIRE(plan_image_resolution({3000, 4000}, 1536) == Resolution{1330, 1773});
}

TEST_CASE("video planning matches hand-checked cases") {
    REQUIRE(plan_video_resolution({1920, 1080}) == Resolution{640, 360});
    REQUIRE(plan_video_resolution({1080, 1920}) == Resolution{360, 640});
    REQUIRE(plan_video_resolution({100, 100}) == Resolution{288, 288});
    REQUIRE(plan_video_resolution({400, 300}) == Resolution{400, 300});
    REQUIRE(plan_video_resolution({480, 480}) == Resolution{480, 480});
    REQUIRE(plan_video_resolution({288, 288}) == Resolution{288, 288});
}

TEST_CASE("patch grids at the paper bounds") {
    PatchGrid g = patch_grid({640, 360});
    REQUIRE(g.rows == 40);
    REQUIRE(g.cols == 22);
    REQUIRE(g.token_count == 880);

    g = patch_grid({288, 288});
    REQUIRE(g.rows == 18);
    REQUIRE(g.cols == 18);
    REQUIRE(g.token_count == 324);

    g = patch_grid({480, 480});
    REQUIRE(g.rows == 30);
    REQUIRE(g.cols == 30);
    REQUIRE(g.token_count == 900);

    g = patch_grid({17, 33});
    REQUIRE(g.rows == 1);
    REQUIRE(g.cols == 2);
}

TEST_CASE("invalid inputs are rejected") {
    REQUIRE_THROWS_AS(plan_image_resolution({0, 100}, 1536), InvalidInput);
    REQUIRE_THROWS_AS(plan_image_resolution({100, -3}, 1536), InvalidInput);
    REQUIRE_THROWS_AS(plan_image_resolution({100, 100}, 0), InvalidInput);
    REQUIRE_THROWS_AS(plan_video_resolution({0, 7}), InvalidInput);
    REQUIRE_THROWS_AS(plan_video_resolution({64, 64}, 480, 288), InvalidInput);
    REQUIRE_THROWS_AS(patch_grid({15, 640}), TooSmall);
    REQUIRE_THROWS_AS(patch_grid({640, 15}), TooSmall);
    REQUIRE_THROWS_AS(patch_grid({640, 360}, 0), InvalidInput);
}

TEST_CASE("integer sqrt helpers are exact") {
    Rng rng(17);
    for (int i = 0; i < 20000; ++i) {
        const std::uint64_t x = rng.next_u64() >> (i % 40);
        const std::uint64_t r = detail::isqrt_u128(x);
        REQUIRE(detail::u128(r) * r <= x);
        REQUIRE(detail::u128(r + 1) * (r + 1) > detail::u128(x));
    }
    REQUIRE(detail::isqrt_u128(0) == 0);
    REQUIRE(detail::isqrt_u128(1) == 1);
    REQUIRE(detail::isqrt_u128(3) == 1);
    REQUIRE(detail::isqrt_u128(4) == 2);
    // floor vs ceil of sqrt(10/4)=1.581..
    REQUIRE(detail::isqrt_floor_ratio(10, 4) == 1);
    REQUIRE(detail::isqrt_ceil_ratio(10, 4) == 2);
    // exact square ratio: both sides agree
    REQUIRE(detail::isqrt_floor_ratio(900, 4) == 15);
    REQUIRE(detail::isqrt_ceil_ratio(900, 4) == 15);
}

TEST_CASE("square video frames cover the token range exactly") {
    // squares land on [288, 480] sides exactly, so the 324..900 token range
    // is attained at both ends and never left
    std::int64_t tmin = 1 << 30, tmax = 0;
    for (int side = 16; side <= 4000; ++side) {
        const Resolution r = plan_video_resolution({side, side});
        const std::int64_t a = r.area();
        REQUIRE(a >= 288 * 288);
        REQUIRE(a <= 480 * 480);
        const std::int64_t t = patch_grid(r).token_count;
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
        REQUIRE(t >= 324);
        REQUIRE(t <= 900);
    }
    REQUIRE(tmin == 324);
    REQUIRE(tmax == 900);
}

TEST_CASE("planning is idempotent") {
    Rng rng(23);
    for (int i = 0; i < 3000; ++i) {
        const int h = rng.uniform_int(16, 4096);
        const int w = rng.uniform_int(16, 4096);
        const Resolution img = plan_image_resolution({h, w}, 1536);
        REQUIRE(plan_image_resolution(img, 1536) == img);
        const Resolution vid = plan_video_resolution({h, w});
        REQUIRE(plan_video_resolution(vid) == vid);
    }
}

TEST_CASE("planned areas respect the clamps") {
    Rng rng(29);
    for (int i = 0; i < 3000; ++i) {
        const int h = rng.uniform_int(16, 8192);
        const int w = rng.uniform_int(16, 8192);
        const Resolution img = plan_image_resolution({h, w}, 1536);
        REQUIRE(img.area() <= std::int64_t(1536) * 1536);
        REQUIRE(img.height >= 16);
        REQUIRE(img.width >= 16);
        if (std::int64_t(h) * w <= std::int64_t(1536) * 1536) {
            REQUIRE(img == Resolution{h, w});
        }
        const Resolution vid = plan_video_resolution({h, w});
        REQUIRE(vid.area() >= 288 * 288);
        REQUIRE(vid.area() <= 480 * 480);
        REQUIRE(vid.height >= 16);
        REQUIRE(vid.width >= 16);
    }
}

TEST_CASE("aspect ratio drift stays within rounding slack") {
    // the 2/min(H',W') bound is sharp only up to 2:1 aspect; per-side rounding
    // can drift up to aspect/min beyond that
    Rng rng(31);
    for (int i = 0; i < 3000; ++i) {
        const int h = rng.uniform_int(32, 4096);
        const int hi = std::min(4096, h * 2);
        const int w = rng.uniform_int(std::max(32, h / 2), std::max(std::max(32, h / 2), hi));
        const double aspect = double(w) / double(h);
        const Resolution vid = plan_video_resolution({h, w});
        const double drift = std::abs(double(vid.width) / double(vid.height) - aspect);
        REQUIRE(drift <= 2.0 / std::min(vid.height, vid.width) + 1e-12);
        const Resolution img = plan_image_resolution({h, w}, 1536);
        const double drift2 = std::abs(double(img.width) / double(img.height) - aspect);
        REQUIRE(drift2 <= 2.0 / std::min(img.height, img.width) + 1e-12);
    }
}

TEST_CASE("downscale eats remainders below one patch") {
    // 384x216 sits exactly at the minimum area yet floors to 312 tokens;
    // the 324..900 range is about areas, not arbitrary aspect ratios
    const Resolution r = plan_video_resolution({216, 384});
    REQUIRE(r == Resolution{216, 384});
    REQUIRE(patch_grid(r).token_count == 312);
}
