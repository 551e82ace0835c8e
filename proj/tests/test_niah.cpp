#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstring>

#include "oryx/niah.hpp"
#include "test_util.hpp"

using namespace oryx;

TEST_CASE("payload survives the pixel round trip exactly") {
    Rng rng(11);
    for (int it = 0; it < 50; ++it) {
        VisualInput<float> f(16, 16, 1, Modality::LongVideoFrame);
        for (auto& px : f.pixels) px = static_cast<float>(rng.uniform());
        FramePayload p;
        p.frame_id = static_cast<std::uint32_t>(rng.next_u64());
        p.value = static_cast<std::uint32_t>(rng.next_u64());
        p.needle = (it % 2) == 0;
        encode_payload(f, p);
        const FramePayload q = decode_payload(f);
        REQUIRE(q.frame_id == p.frame_id);
        REQUIRE(q.value == p.value);
        REQUIRE(q.needle == p.needle);
    }
}

TEST_CASE("payload round trip holds in double frames too") {
    Rng rng(12);
    VisualInput<double> f(8, 16, 1, Modality::LongVideoFrame);
    FramePayload p;
    p.frame_id = 0xDEADBEEFu;
    p.value = 0x01020304u;
    encode_payload(f, p);
    const FramePayload q = decode_payload(f);
    REQUIRE(q.frame_id == p.frame_id);
    REQUIRE(q.value == p.value);
    REQUIRE_FALSE(q.needle);
}

TEST_CASE("decode rejects frames without the magic bytes") {
    VisualInput<float> f(16, 16, 1, Modality::LongVideoFrame);
    REQUIRE_THROWS_AS(decode_payload(f), IntegrityError);
    VisualInput<float> tiny(4, 4, 1, Modality::LongVideoFrame);
    REQUIRE_THROWS_AS(decode_payload(tiny), IntegrityError);
}

TEST_CASE("needle index matches the floor-with-clamp rule") {
    REQUIRE(needle_index_for(0.0, 100) == 0);
    REQUIRE(needle_index_for(1.0, 100) == 99);
    REQUIRE(needle_index_for(0.5, 1600) == 800);
    REQUIRE_THROWS_AS(needle_index_for(-0.01, 100), InvalidInput);
    REQUIRE_THROWS_AS(needle_index_for(1.01, 100), InvalidInput);
    REQUIRE_THROWS_AS(needle_index_for(std::nan(""), 100), InvalidInput);
    REQUIRE_THROWS_AS(needle_index_for(0.5, 0), InvalidInput);
}

TEST_CASE("needle index is monotone in depth for fixed n") {
    for (const std::int64_t n : {1ll, 2ll, 7ll, 100ll, 1600ll}) {
        std::int64_t prev = 0;
        for (int k = 0; k <= 40; ++k) {
            const std::int64_t idx = needle_index_for(k / 40.0, n);
            REQUIRE(idx >= prev);
            REQUIRE(idx >= 0);
            REQUIRE(idx <= n - 1);
            prev = idx;
        }
    }
}

TEST_CASE("insert_needle keeps haystack order and adds one frame") {
    Rng rng(21);
    NeedleSpec<float> spec;
    spec.haystack_frames = 37;
    spec.depth = 0.4;
    spec.needle = make_needle_frame<float>(0xABCD1234u, 16, 16, rng);
    const auto out = insert_needle(spec, 99);
    REQUIRE(out.frames.size() == 38);
    REQUIRE(out.needle_index == 14);
    std::uint32_t expect = 0;
    for (std::size_t i = 0; i < out.frames.size(); ++i) {
        const FramePayload p = decode_payload(out.frames[i]);
        if (static_cast<std::int64_t>(i) == out.needle_index) {
            REQUIRE(p.needle);
            REQUIRE(p.value == 0xABCD1234u);
        } else {
            REQUIRE_FALSE(p.needle);
            REQUIRE(p.frame_id == expect++);
        }
    }
    REQUIRE(expect == 37);
}

TEST_CASE("captioning truth is the frame's own embedded payload") {
    Rng rng(31);
    std::vector<VisualInput<float>> frames;
    for (int i = 0; i < 10; ++i) frames.push_back(make_haystack_frame<float>(static_cast<std::uint32_t>(i), 16, 16, rng));
    const std::int64_t idx[] = {7};
    const TaskRecord rec = build_task(std::span<const VisualInput<float>>(frames), TaskMode::Captioning,
                                      std::span<const std::int64_t>(idx));
    REQUIRE(rec.truth == caption_of(frames[7]));
    REQUIRE(rec.truth.find("frame 7") != std::string::npos);
    REQUIRE(rec.indices == std::vector<std::int64_t>{7});

    const std::int64_t bad[] = {12};
    REQUIRE_THROWS_AS(build_task(std::span<const VisualInput<float>>(frames), TaskMode::Captioning,
                                 std::span<const std::int64_t>(bad)),
                      InvalidInput);
    const std::int64_t two[] = {1, 2};
    REQUIRE_THROWS_AS(build_task(std::span<const VisualInput<float>>(frames), TaskMode::Captioning,
                                 std::span<const std::int64_t>(two)),
                      InvalidInput);
}

TEST_CASE("differing truth names the one constructed difference") {
    Rng rng(32);
    std::vector<VisualInput<float>> frames;
    for (int i = 0; i < 10; ++i) frames.push_back(make_haystack_frame<float>(static_cast<std::uint32_t>(i), 32, 48, rng));
    frames[9] = frames[3];
    frames[9].at(20, 40, 0) += 0.25f; // inside patch (1,2)
    const std::int64_t idx[] = {3, 9};
    const TaskRecord rec = build_task(std::span<const VisualInput<float>>(frames), TaskMode::Differing,
                                      std::span<const std::int64_t>(idx));
    REQUIRE(rec.truth == "patch (1,2)");

    const std::int64_t dup[] = {5, 5};
    REQUIRE_THROWS_AS(build_task(std::span<const VisualInput<float>>(frames), TaskMode::Differing,
                                 std::span<const std::int64_t>(dup)),
                      InvalidInput);
    const std::int64_t one[] = {5};
    REQUIRE_THROWS_AS(build_task(std::span<const VisualInput<float>>(frames), TaskMode::Differing,
                                 std::span<const std::int64_t>(one)),
                      InvalidInput);
}

TEST_CASE("identical frames produce the no-difference truth") {
    Rng rng(33);
    std::vector<VisualInput<float>> frames;
    frames.push_back(make_haystack_frame<float>(0, 16, 16, rng));
    frames.push_back(frames[0]);
    const std::int64_t idx[] = {0, 1};
    const TaskRecord rec = build_task(std::span<const VisualInput<float>>(frames), TaskMode::Differing,
                                      std::span<const std::int64_t>(idx));
    REQUIRE(rec.truth == "no difference");
}

TEST_CASE("build_tasks maps groups through build_task") {
    Rng rng(34);
    std::vector<VisualInput<float>> frames;
    for (int i = 0; i < 4; ++i) frames.push_back(make_haystack_frame<float>(static_cast<std::uint32_t>(i), 16, 16, rng));
    const std::vector<std::vector<std::int64_t>> groups = {{0}, {3}};
    const auto recs = build_tasks(std::span<const VisualInput<float>>(frames), TaskMode::Captioning,
                                  std::span<const std::vector<std::int64_t>>(groups));
    REQUIRE(recs.size() == 2);
    REQUIRE(recs[0].truth == caption_of(frames[0]));
    REQUIRE(recs[1].truth == caption_of(frames[3]));
}

TEST_CASE("oracle retriever scores a perfect grid, a fixed answer scores zero") {
    const std::vector<double> depths = {0.0, 0.5, 1.0};
    const std::vector<std::int64_t> counts = {4, 9};
    EvalConfig cfg;
    cfg.trials = 3;
    cfg.seed = 7;
    const auto top = eval_grid<float>(oracle_retriever<float>, depths, counts, cfg);
    REQUIRE(top.accuracy.rows == 3);
    REQUIRE(top.accuracy.cols == 2);
    for (const double a : top.accuracy.v) REQUIRE(a == 1.0);

    const RetrieverFn<float> wrong = [](const std::vector<VisualInput<float>>&) { return "never"; };
    const auto bottom = eval_grid<float>(wrong, depths, counts, cfg);
    for (const double a : bottom.accuracy.v) REQUIRE(a == 0.0);
}

TEST_CASE("default axes give the 11x16 grid") {
    const auto depths = default_depths();
    const auto counts = default_frame_counts();
    REQUIRE(depths.size() == 11);
    REQUIRE(depths.front() == 0.0);
    REQUIRE(depths.back() == 1.0);
    REQUIRE(counts.size() == 16);
    REQUIRE(counts.front() == 100);
    REQUIRE(counts.back() == 1600);
    EvalConfig cfg;
    cfg.trials = 1;
    cfg.frame_height = 1;
    cfg.frame_width = 16;
    const auto grid = eval_grid<float>(oracle_retriever<float>, depths, counts, cfg);
    REQUIRE(grid.accuracy.rows == 11);
    REQUIRE(grid.accuracy.cols == 16);
    for (const double a : grid.accuracy.v) REQUIRE(a == 1.0);
}

TEST_CASE("same seed reproduces the CSV byte for byte") {
    const std::vector<double> depths = {0.0, 0.3, 0.9};
    const std::vector<std::int64_t> counts = {5, 12, 20};
    EvalConfig cfg;
    cfg.trials = 4;
    cfg.seed = 31337;
    // answers only even payloads, so scores depend on the seeded content
    const RetrieverFn<float> flaky = [](const std::vector<VisualInput<float>>& fs) {
        for (const auto& f : fs) {
            const FramePayload p = decode_payload(f);
            if (p.needle) return (p.value & 1) == 0 ? payload_hex(p.value) : std::string("miss");
        }
        return std::string();
    };
    const auto a = eval_grid<float>(flaky, depths, counts, cfg);
    const auto b = eval_grid<float>(flaky, depths, counts, cfg);
    REQUIRE(grid_csv(a) == grid_csv(b));
    const std::string csv = grid_csv(a);
    REQUIRE(csv.rfind("depth,frames,accuracy\n", 0) == 0);
    REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 3);

    cfg.seed = 31338;
    const auto c = eval_grid<float>(flaky, depths, counts, cfg);
    REQUIRE(grid_csv(a) != grid_csv(c)); // seed actually feeds the trials
}

TEST_CASE("cell scores do not depend on evaluation order") {
    const std::vector<double> depths = {0.0, 0.4, 0.8};
    const std::vector<std::int64_t> counts = {3, 6};
    EvalConfig cfg;
    cfg.trials = 3;
    cfg.seed = 5;
    const auto grid = eval_grid<float>(oracle_retriever<float>, depths, counts, cfg);
    for (std::size_t di = depths.size(); di-- > 0;)
        for (std::size_t ni = counts.size(); ni-- > 0;) {
            const double solo = eval_cell<float>(oracle_retriever<float>, depths[di], di,
                                                 counts[ni], ni, cfg);
            REQUIRE(solo == grid.accuracy(static_cast<std::int64_t>(di), static_cast<std::int64_t>(ni)));
        }
}

TEST_CASE("empty axes are rejected") {
    const std::vector<double> none;
    const std::vector<double> depths = {0.5};
    const std::vector<std::int64_t> counts = {4};
    const std::vector<std::int64_t> nocounts;
    REQUIRE_THROWS_AS(eval_grid<float>(oracle_retriever<float>, none, counts), InvalidInput);
    REQUIRE_THROWS_AS(eval_grid<float>(oracle_retriever<float>, depths, nocounts), InvalidInput);
}

TEST_CASE("empty track list leaves frames untouched") {
    Rng rng(41);
    std::vector<VisualInput<float>> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(make_haystack_frame<float>(static_cast<std::uint32_t>(i), 24, 24, rng));
    const auto before = frames;
    const auto after = annotate_correspondences(frames, std::span<const TrackAnnotation>{});
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i)
        REQUIRE(std::memcmp(after[i].pixels.data(), before[i].pixels.data(),
                            before[i].pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("same object id renders the same pixels in every frame") {
    Rng rng(42);
    std::vector<VisualInput<float>> frames;
    for (int i = 0; i < 3; ++i) {
        VisualInput<float> f(32, 32, 1, Modality::LongVideoFrame);
        for (auto& px : f.pixels) px = 0.5f;
        frames.push_back(f);
    }
    const std::vector<TrackAnnotation> tracks = {
        {0, 7, 2, 3, 12, 12},
        {1, 7, 10, 14, 12, 12},
        {2, 7, 18, 1, 12, 12},
    };
    const auto out = annotate_correspondences(frames, std::span<const TrackAnnotation>(tracks));
    auto crop = [](const VisualInput<float>& f, int x, int y, int w, int h) {
        std::vector<float> v;
        for (int yy = y; yy < y + h; ++yy)
            for (int xx = x; xx < x + w; ++xx) v.push_back(f.at(yy, xx, 0));
        return v;
    };
    const auto a = crop(out[0], 2, 3, 12, 12);
    const auto b = crop(out[1], 10, 14, 12, 12);
    const auto c = crop(out[2], 18, 1, 12, 12);
    REQUIRE(a == b);
    REQUIRE(b == c);
    REQUIRE(std::count(a.begin(), a.end(), 1.0f) > 0);
    REQUIRE(std::count(a.begin(), a.end(), 0.5f) > 0); // interior, box is an outline
}

TEST_CASE("labels follow ids when objects swap positions") {
    std::vector<VisualInput<float>> frames(2, VisualInput<float>(32, 64, 1, Modality::LongVideoFrame));
    const std::vector<TrackAnnotation> tracks = {
        {0, 1, 0, 0, 16, 16},
        {0, 2, 40, 0, 16, 16},
        {1, 1, 40, 0, 16, 16},
        {1, 2, 0, 0, 16, 16},
    };
    const auto out = annotate_correspondences(frames, std::span<const TrackAnnotation>(tracks));
    auto crop = [](const VisualInput<float>& f, int x) {
        std::vector<float> v;
        for (int yy = 0; yy < 16; ++yy)
            for (int xx = x; xx < x + 16; ++xx) v.push_back(f.at(yy, xx, 0));
        return v;
    };
    REQUIRE(crop(out[0], 0) == crop(out[1], 40));  // id 1 moved, pixels identical
    REQUIRE(crop(out[0], 40) == crop(out[1], 0));  // id 2 likewise
    REQUIRE(crop(out[0], 0) != crop(out[0], 40));  // ids 1 and 2 distinguishable
}

TEST_CASE("out-of-bounds or malformed tracks are rejected") {
    std::vector<VisualInput<float>> frames(1, VisualInput<float>(16, 16, 1, Modality::LongVideoFrame));
    auto tryOne = [&](TrackAnnotation t) {
        const std::vector<TrackAnnotation> one = {t};
        return annotate_correspondences(frames, std::span<const TrackAnnotation>(one));
    };
    REQUIRE_THROWS_AS(tryOne({0, 1, 8, 8, 9, 4}), InvalidInput);   // x+w past edge
    REQUIRE_THROWS_AS(tryOne({0, 1, 0, 10, 4, 7}), InvalidInput);  // y+h past edge
    REQUIRE_THROWS_AS(tryOne({0, 1, -1, 0, 4, 4}), InvalidInput);
    REQUIRE_THROWS_AS(tryOne({0, 1, 0, 0, 0, 4}), InvalidInput);   // empty box
    REQUIRE_THROWS_AS(tryOne({1, 1, 0, 0, 4, 4}), InvalidInput);   // missing frame
    REQUIRE_THROWS_AS(tryOne({0, -3, 0, 0, 4, 4}), InvalidInput);  // negative id
    REQUIRE_NOTHROW(tryOne({0, 1, 0, 0, 16, 16}));                 // exact fit is fine
}

TEST_CASE("tracks parse from json lines") {
    const std::string text =
        "{\"frame_index\": 0, \"object_id\": 1, \"box\": [2, 3, 10, 12]}\n"
        "\n"
        "{\"frame_index\": 4, \"object_id\": 2, \"box\": [0, 0, 5, 5]}\n";
    const auto tracks = parse_tracks_jsonl(text);
    REQUIRE(tracks.size() == 2);
    REQUIRE(tracks[0].frame_index == 0);
    REQUIRE(tracks[0].object_id == 1);
    REQUIRE(tracks[0].x == 2);
    REQUIRE(tracks[0].y == 3);
    REQUIRE(tracks[0].w == 10);
    REQUIRE(tracks[0].h == 12);
    REQUIRE(tracks[1].frame_index == 4);

    REQUIRE_THROWS_AS(parse_tracks_jsonl("{not json"), InvalidInput);
    REQUIRE_THROWS_AS(parse_tracks_jsonl("{\"frame_index\": 0, \"object_id\": 1, \"box\": [1,2,3]}"),
                      InvalidInput);
    REQUIRE_THROWS_AS(parse_tracks_jsonl("{\"object_id\": 1, \"box\": [1,2,3,4]}"), InvalidInput);
    REQUIRE(parse_tracks_jsonl("").empty());
    REQUIRE(parse_tracks_jsonl("\n  \n").empty());
}
