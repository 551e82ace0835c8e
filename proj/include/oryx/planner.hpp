#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oryx/errors.hpp"
#include "oryx/geometry.hpp"

namespace oryx {

enum class Category { Image, ShortVideo, LongVideo };

inline constexpr int kShortVideoCap = 64;
inline constexpr int kLongVideoCap = 256;
// Classification boundary in 1-fps frames. The short path itself caps at 64
// sampled frames, so clips between the cap and this boundary subsample to 64;
// genuinely long footage (movie scale) routes through the 4x path.
inline constexpr std::int64_t kLongThreshold = 256;

inline const char* category_name(Category c) {
    switch (c) {
        case Category::Image: return "Image";
        case Category::ShortVideo: return "ShortVideo";
        default: return "LongVideo";
    }
}

inline int ratio_for(Category c) {
    switch (c) {
        case Category::Image: return 1;
        case Category::ShortVideo: return 2;
        default: return 4;
    }
}

inline int frame_cap_for(Category c) {
    switch (c) {
        case Category::Image: return 1;
        case Category::ShortVideo: return kShortVideoCap;
        default: return kLongVideoCap;
    }
}

inline Category classify_input(std::int64_t n_native_frames,
                               std::int64_t long_threshold = kLongThreshold) {
    if (n_native_frames < 1) throw InvalidInput("need at least one frame");
    if (n_native_frames == 1) return Category::Image;
    if (n_native_frames <= long_threshold) return Category::ShortVideo;
    return Category::LongVideo;
}

// One frame per second, then uniform subsampling once the cap is exceeded.
inline std::vector<std::int64_t> sample_frames(double duration_s, double fps_native, int cap) {
    if (!(duration_s > 0.0)) throw InvalidInput("duration must be positive");
    if (!(fps_native > 0.0)) throw InvalidInput("fps must be positive");
    if (cap < 1) throw InvalidInput("cap must be at least one frame");
    std::int64_t n = static_cast<std::int64_t>(std::floor(duration_s));
    if (n < 1) n = 1;
    std::vector<std::int64_t> idx;
    if (n <= cap) {
        idx.resize(static_cast<std::size_t>(n));
        for (std::int64_t k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k;
    } else {
        idx.resize(static_cast<std::size_t>(cap));
        for (std::int64_t k = 0; k < cap; ++k)
            idx[static_cast<std::size_t>(k)] = k * n / cap;
    }
    return idx;
}

struct CompressionPlan {
    Category category = Category::Image;
    int ratio = 1;
    int frame_cap = 1;
    std::vector<std::int64_t> indices;
    std::vector<std::int64_t> frame_tokens;
    std::int64_t total_tokens = 0;
};

// Token count of one frame after padding its grid up to a multiple of r.
inline std::int64_t compressed_tokens(const PatchGrid& g, int r) {
    const std::int64_t rows = (g.rows + r - 1) / r;
    const std::int64_t cols = (g.cols + r - 1) / r;
    return rows * cols;
}

// Frames arrive already planned for their modality; indices default to
// 0..frames-1 when the caller did not subsample.
inline CompressionPlan make_plan(std::span<const Resolution> frames, Category category,
                                 std::vector<std::int64_t> indices = {}, int p = kPatchSize) {
    if (frames.empty()) throw InvalidInput("plan needs at least one frame");
    if (!indices.empty() && indices.size() != frames.size())
        throw InvalidInput("one index per frame");
    CompressionPlan plan;
    plan.category = category;
    plan.ratio = ratio_for(category);
    plan.frame_cap = frame_cap_for(category);
    if (indices.empty()) {
        plan.indices.resize(frames.size());
        for (std::size_t k = 0; k < frames.size(); ++k)
            plan.indices[k] = static_cast<std::int64_t>(k);
    } else {
        plan.indices = std::move(indices);
    }
    plan.frame_tokens.reserve(frames.size());
    for (const Resolution& res : frames) {
        const std::int64_t t = compressed_tokens(patch_grid(res, p), plan.ratio);
        plan.frame_tokens.push_back(t);
        plan.total_tokens += t;
    }
    return plan;
}

// Whole routing pipeline for a uniform-resolution clip. A single native
// frame is an image; otherwise short vs long is judged on the 1-fps
// candidate count, then frames are sampled under the category cap and the
// resolution is clamped for the modality.
inline CompressionPlan plan_clip(Resolution native, std::int64_t n_native_frames, double fps_native,
                                 std::int64_t long_threshold = kLongThreshold) {
    if (n_native_frames < 1) throw InvalidInput("need at least one frame");
    if (!(fps_native > 0.0)) throw InvalidInput("fps must be positive");
    if (n_native_frames == 1) {
        const Resolution planned = plan_image_resolution(native, kImageMaxSide);
        std::vector<Resolution> one{planned};
        return make_plan(std::span<const Resolution>(one), Category::Image);
    }
    const double duration = static_cast<double>(n_native_frames) / fps_native;
    const std::int64_t candidates = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(duration)));
    const Category cat = candidates <= long_threshold ? Category::ShortVideo : Category::LongVideo;
    std::vector<std::int64_t> idx = sample_frames(duration, fps_native, frame_cap_for(cat));
    const Resolution planned = plan_video_resolution(native);
    std::vector<Resolution> frames(idx.size(), planned);
    return make_plan(std::span<const Resolution>(frames), cat, std::move(idx));
}

} // namespace oryx
