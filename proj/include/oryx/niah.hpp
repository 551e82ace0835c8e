#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "oryx/core.hpp"
#include "oryx/errors.hpp"
#include "oryx/rng.hpp"

namespace oryx {

// Synthetic haystack frames carry their ground truth in the pixels: a short
// byte header stored as k/256 values (exact in f32 and f64), the rest noise.
// That replaces external captions with a lossless round trip.

struct FramePayload {
    std::uint32_t frame_id = 0;
    std::uint32_t value = 0;
    bool needle = false;
};

inline constexpr std::uint32_t kNeedleFrameId = 0xFFFFFFFFu;
inline constexpr int kHeaderPixels = 11; // 'O' 'X' id[4] value[4] flag

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                              std::uint64_t c) {
    return mix64(mix64(mix64(seed ^ a) ^ b) ^ c);
}

template <typename T>
void put_byte(VisualInput<T>& f, int i, std::uint8_t b) {
    f.at(0, i, 0) = static_cast<T>(b) / T(256);
}

template <typename T>
std::uint8_t get_byte(const VisualInput<T>& f, int i) {
    const long v = std::lround(static_cast<double>(f.at(0, i, 0)) * 256.0);
    if (v < 0 || v > 255) throw IntegrityError("frame header byte out of range");
    return static_cast<std::uint8_t>(v);
}

} // namespace detail

template <typename T>
void encode_payload(VisualInput<T>& f, const FramePayload& p) {
    if (f.width < kHeaderPixels || f.height < 1) throw InvalidInput("frame too small for header");
    detail::put_byte(f, 0, 'O');
    detail::put_byte(f, 1, 'X');
    for (int k = 0; k < 4; ++k) detail::put_byte(f, 2 + k, (p.frame_id >> (8 * k)) & 0xFF);
    for (int k = 0; k < 4; ++k) detail::put_byte(f, 6 + k, (p.value >> (8 * k)) & 0xFF);
    detail::put_byte(f, 10, p.needle ? 1 : 0);
}

template <typename T>
FramePayload decode_payload(const VisualInput<T>& f) {
    if (f.width < kHeaderPixels || f.height < 1) throw IntegrityError("frame too small for header");
    if (detail::get_byte(f, 0) != 'O' || detail::get_byte(f, 1) != 'X')
        throw IntegrityError("frame header magic mismatch");
    FramePayload p;
    for (int k = 0; k < 4; ++k) p.frame_id |= std::uint32_t(detail::get_byte(f, 2 + k)) << (8 * k);
    for (int k = 0; k < 4; ++k) p.value |= std::uint32_t(detail::get_byte(f, 6 + k)) << (8 * k);
    p.needle = detail::get_byte(f, 10) != 0;
    return p;
}

inline std::string payload_hex(std::uint32_t value) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", value);
    return buf;
}

template <typename T>
std::string caption_of(const VisualInput<T>& frame) {
    const FramePayload p = decode_payload(frame);
    char buf[64];
    if (p.needle)
        std::snprintf(buf, sizeof buf, "needle carries %08x", p.value);
    else
        std::snprintf(buf, sizeof buf, "frame %u carries %08x", p.frame_id, p.value);
    return buf;
}

template <typename T>
VisualInput<T> make_haystack_frame(std::uint32_t frame_id, int height, int width, Rng& rng) {
    VisualInput<T> f(height, width, 1, Modality::LongVideoFrame);
    for (auto& px : f.pixels) px = static_cast<T>(rng.uniform());
    FramePayload p;
    p.frame_id = frame_id;
    p.value = static_cast<std::uint32_t>(rng.next_u64());
    encode_payload(f, p);
    return f;
}

template <typename T>
VisualInput<T> make_needle_frame(std::uint32_t payload_value, int height, int width, Rng& rng) {
    VisualInput<T> f(height, width, 1, Modality::LongVideoFrame);
    for (auto& px : f.pixels) px = static_cast<T>(rng.uniform());
    FramePayload p;
    p.frame_id = kNeedleFrameId;
    p.value = payload_value;
    p.needle = true;
    encode_payload(f, p);
    return f;
}

struct NeedlePayload {
    std::string question;
    std::string answer;
};

template <typename T>
struct NeedleSpec {
    std::int64_t haystack_frames = 0;
    double depth = 0.0;
    VisualInput<T> needle;
    NeedlePayload needle_payload;
};

template <typename T>
struct NeedleResult {
    std::vector<VisualInput<T>> frames; // haystack_frames + 1 entries
    std::int64_t needle_index = 0;
};

inline std::int64_t needle_index_for(double depth, std::int64_t haystack_frames) {
    if (!(depth >= 0.0 && depth <= 1.0)) throw InvalidInput("depth must be in [0, 1]");
    if (haystack_frames < 1) throw InvalidInput("need at least one haystack frame");
    std::int64_t idx = static_cast<std::int64_t>(std::floor(depth * static_cast<double>(haystack_frames)));
    if (idx > haystack_frames - 1) idx = haystack_frames - 1;
    if (idx < 0) idx = 0;
    return idx;
}

// Builds the haystack, slots the needle at the depth-derived index, keeps
// haystack order otherwise untouched.
template <typename T>
NeedleResult<T> insert_needle(const NeedleSpec<T>& spec, std::uint64_t seed, int height = 16,
                              int width = 16) {
    const std::int64_t idx = needle_index_for(spec.depth, spec.haystack_frames);
    NeedleResult<T> out;
    out.needle_index = idx;
    out.frames.reserve(static_cast<std::size_t>(spec.haystack_frames) + 1);
    Rng rng(seed);
    for (std::int64_t i = 0; i < spec.haystack_frames; ++i) {
        if (i == idx) out.frames.push_back(spec.needle);
        out.frames.push_back(make_haystack_frame<T>(static_cast<std::uint32_t>(i), height, width, rng));
    }
    return out;
}

// ---- tasks over synthetic frames ----

enum class TaskMode { Captioning, Differing };

struct TaskRecord {
    TaskMode mode = TaskMode::Captioning;
    std::vector<std::int64_t> indices;
    std::string prompt;
    std::string truth;
};

template <typename T>
std::vector<std::pair<int, int>> differing_patches(const VisualInput<T>& a, const VisualInput<T>& b,
                                                   int p = 16) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels)
        throw ShapeError("frames must share shape to diff");
    std::vector<std::pair<int, int>> out;
    const int rows = a.height / p, cols = a.width / p;
    for (int gi = 0; gi < rows; ++gi)
        for (int gj = 0; gj < cols; ++gj) {
            bool diff = false;
            for (int y = gi * p; y < (gi + 1) * p && !diff; ++y)
                for (int x = gj * p; x < (gj + 1) * p && !diff; ++x)
                    for (int c = 0; c < a.channels; ++c)
                        if (a.at(y, x, c) != b.at(y, x, c)) {
                            diff = true;
                            break;
                        }
            if (diff) out.emplace_back(gi, gj);
        }
    return out;
}

template <typename T>
TaskRecord build_task(std::span<const VisualInput<T>> frames, TaskMode mode,
                      std::span<const std::int64_t> indices, int patch = 16) {
    for (const std::int64_t i : indices)
        if (i < 0 || i >= static_cast<std::int64_t>(frames.size()))
            throw InvalidInput("task index out of range");
    TaskRecord rec;
    rec.mode = mode;
    rec.indices.assign(indices.begin(), indices.end());
    char buf[96];
    if (mode == TaskMode::Captioning) {
        if (indices.size() != 1) throw InvalidInput("captioning takes exactly one index");
        std::snprintf(buf, sizeof buf, "caption frame %lld", static_cast<long long>(indices[0]));
        rec.prompt = buf;
        rec.truth = caption_of(frames[static_cast<std::size_t>(indices[0])]);
    } else {
        if (indices.size() != 2) throw InvalidInput("differing takes exactly two indices");
        if (indices[0] == indices[1]) throw InvalidInput("differing needs two distinct frames");
        std::snprintf(buf, sizeof buf, "describe what changed between frame %lld and frame %lld",
                      static_cast<long long>(indices[0]), static_cast<long long>(indices[1]));
        rec.prompt = buf;
        const auto patches = differing_patches(frames[static_cast<std::size_t>(indices[0])],
                                               frames[static_cast<std::size_t>(indices[1])], patch);
        std::string t;
        for (const auto& [gi, gj] : patches) {
            std::snprintf(buf, sizeof buf, "patch (%d,%d)", gi, gj);
            if (!t.empty()) t += ", ";
            t += buf;
        }
        rec.truth = t.empty() ? "no difference" : t;
    }
    return rec;
}

template <typename T>
std::vector<TaskRecord> build_tasks(std::span<const VisualInput<T>> frames, TaskMode mode,
                                    std::span<const std::vector<std::int64_t>> index_groups,
                                    int patch = 16) {
    std::vector<TaskRecord> out;
    out.reserve(index_groups.size());
    for (const auto& g : index_groups)
        out.push_back(build_task(frames, mode, std::span<const std::int64_t>(g), patch));
    return out;
}

// ---- retrieval grid (depth x frame count) ----

template <typename T>
using RetrieverFn = std::function<std::string(const std::vector<VisualInput<T>>&)>;

struct EvalConfig {
    int trials = 5;
    int frame_height = 16;
    int frame_width = 16;
    std::uint64_t seed = 0;
};

inline std::vector<double> default_depths() {
    std::vector<double> d(11);
    for (int i = 0; i <= 10; ++i) d[static_cast<std::size_t>(i)] = i / 10.0;
    return d;
}

inline std::vector<std::int64_t> default_frame_counts() {
    std::vector<std::int64_t> n(16);
    for (int i = 0; i < 16; ++i) n[static_cast<std::size_t>(i)] = 100 * (i + 1);
    return n;
}

struct EvalGrid {
    std::vector<double> depths;
    std::vector<std::int64_t> frame_counts;
    Mat<double> accuracy; // [depths x frame_counts]
};

// answers the needle's payload by reading frame headers; retrieval upper bound
template <typename T>
std::string oracle_retriever(const std::vector<VisualInput<T>>& frames) {
    for (const auto& f : frames) {
        const FramePayload p = decode_payload(f);
        if (p.needle) return payload_hex(p.value);
    }
    return "";
}

// Trial seeds mix (seed, depth index, count index, trial), no shared stream,
// so the cell score is the same no matter how cells are scheduled.
template <typename T>
double eval_cell(const RetrieverFn<T>& model_fn, double depth, std::size_t depth_index,
                 std::int64_t frames, std::size_t count_index, const EvalConfig& cfg) {
    int correct = 0;
    for (int t = 0; t < cfg.trials; ++t) {
        const std::uint64_t ts =
            detail::mix_seed(cfg.seed, depth_index, count_index, static_cast<std::uint64_t>(t));
        Rng rng(ts);
        const auto payload = static_cast<std::uint32_t>(rng.next_u64());
        NeedleSpec<T> spec;
        spec.haystack_frames = frames;
        spec.depth = depth;
        spec.needle = make_needle_frame<T>(payload, cfg.frame_height, cfg.frame_width, rng);
        const auto built = insert_needle(spec, detail::mix64(ts), cfg.frame_height, cfg.frame_width);
        if (model_fn(built.frames) == payload_hex(payload)) ++correct;
    }
    return static_cast<double>(correct) / cfg.trials;
}

template <typename T>
EvalGrid eval_grid(const RetrieverFn<T>& model_fn, std::span<const double> depths,
                   std::span<const std::int64_t> frame_counts, const EvalConfig& cfg = {}) {
    if (depths.empty() || frame_counts.empty()) throw InvalidInput("grid axes must be nonempty");
    if (cfg.trials < 1) throw InvalidInput("need at least one trial");
    EvalGrid grid;
    grid.depths.assign(depths.begin(), depths.end());
    grid.frame_counts.assign(frame_counts.begin(), frame_counts.end());
    grid.accuracy = Mat<double>(static_cast<std::int64_t>(depths.size()),
                                static_cast<std::int64_t>(frame_counts.size()));
    for (std::size_t di = 0; di < depths.size(); ++di)
        for (std::size_t ni = 0; ni < frame_counts.size(); ++ni)
            grid.accuracy(static_cast<std::int64_t>(di), static_cast<std::int64_t>(ni)) =
                eval_cell(model_fn, depths[di], di, frame_counts[ni], ni, cfg);
    return grid;
}

inline std::string grid_csv(const EvalGrid& grid) {
    std::string out = "depth,frames,accuracy\n";
    char buf[64];
    for (std::size_t di = 0; di < grid.depths.size(); ++di)
        for (std::size_t ni = 0; ni < grid.frame_counts.size(); ++ni) {
            std::snprintf(buf, sizeof buf, "%.2f,%lld,%.4f\n", grid.depths[di],
                          static_cast<long long>(grid.frame_counts[ni]),
                          grid.accuracy(static_cast<std::int64_t>(di), static_cast<std::int64_t>(ni)));
            out += buf;
        }
    return out;
}

// ---- track overlays ----

struct TrackAnnotation {
    std::int64_t frame_index = 0;
    int object_id = 0;
    int x = 0, y = 0, w = 0, h = 0;
};

namespace detail {

// 3x5 digit bitmaps, rows top to bottom, bit 2 = left pixel
inline constexpr std::uint8_t kDigitRows[10][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111}, // 0
    {0b010, 0b110, 0b010, 0b010, 0b111}, // 1
    {0b111, 0b001, 0b111, 0b100, 0b111}, // 2
    {0b111, 0b001, 0b111, 0b001, 0b111}, // 3
    {0b101, 0b101, 0b111, 0b001, 0b001}, // 4
    {0b111, 0b100, 0b111, 0b001, 0b111}, // 5
    {0b111, 0b100, 0b111, 0b101, 0b111}, // 6
    {0b111, 0b001, 0b010, 0b010, 0b010}, // 7
    {0b111, 0b101, 0b111, 0b101, 0b111}, // 8
    {0b111, 0b101, 0b111, 0b001, 0b111}, // 9
};

template <typename T>
void draw_digit(VisualInput<T>& f, int top, int left, int digit) {
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) {
            const int y = top + r, x = left + c;
            if (y < 0 || y >= f.height || x < 0 || x >= f.width) continue;
            const bool on = (kDigitRows[digit][r] >> (2 - c)) & 1;
            for (int ch = 0; ch < f.channels; ++ch) f.at(y, x, ch) = on ? T(1) : T(0);
        }
}

} // namespace detail

// Box outline plus the numeric id drawn just inside the top-left corner; the
// same id always produces the same pixels.
template <typename T>
std::vector<VisualInput<T>> annotate_correspondences(std::vector<VisualInput<T>> frames,
                                                     std::span<const TrackAnnotation> tracks) {
    for (const TrackAnnotation& t : tracks) {
        if (t.frame_index < 0 || t.frame_index >= static_cast<std::int64_t>(frames.size()))
            throw InvalidInput("track references a missing frame");
        VisualInput<T>& f = frames[static_cast<std::size_t>(t.frame_index)];
        if (t.w < 1 || t.h < 1 || t.x < 0 || t.y < 0 || t.x + t.w > f.width || t.y + t.h > f.height)
            throw InvalidInput("track box out of bounds");
        if (t.object_id < 0) throw InvalidInput("object id must be non-negative");
        for (int x = t.x; x < t.x + t.w; ++x)
            for (int ch = 0; ch < f.channels; ++ch) {
                f.at(t.y, x, ch) = T(1);
                f.at(t.y + t.h - 1, x, ch) = T(1);
            }
        for (int y = t.y; y < t.y + t.h; ++y)
            for (int ch = 0; ch < f.channels; ++ch) {
                f.at(y, t.x, ch) = T(1);
                f.at(y, t.x + t.w - 1, ch) = T(1);
            }
        const std::string digits = std::to_string(t.object_id);
        int left = t.x + 2;
        for (char d : digits) {
            detail::draw_digit(f, t.y + 2, left, d - '0');
            left += 4;
        }
    }
    return frames;
}

// One JSON object per line: {"frame_index": i, "object_id": k, "box": [x,y,w,h]}
std::vector<TrackAnnotation> parse_tracks_jsonl(const std::string& text);

} // namespace oryx

#include "json.hpp"

namespace oryx {

inline std::vector<TrackAnnotation> parse_tracks_jsonl(const std::string& text) {
    std::vector<TrackAnnotation> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        const std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput(std::string("bad track line: ") + e.what());
        }
        if (!j.contains("frame_index") || !j.contains("object_id") || !j.contains("box") ||
            !j["box"].is_array() || j["box"].size() != 4)
            throw InvalidInput("track line missing frame_index/object_id/box[4]");
        TrackAnnotation t;
        t.frame_index = j["frame_index"].get<std::int64_t>();
        t.object_id = j["object_id"].get<int>();
        t.x = j["box"][0].get<int>();
        t.y = j["box"][1].get<int>();
        t.w = j["box"][2].get<int>();
        t.h = j["box"][3].get<int>();
        out.push_back(t);
    }
    return out;
}

} // namespace oryx
