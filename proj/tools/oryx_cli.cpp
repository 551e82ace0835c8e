#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "oryx/compressor.hpp"
#include "oryx/encoder.hpp"
#include "oryx/errors.hpp"
#include "oryx/geometry.hpp"
#include "oryx/harness.hpp"
#include "oryx/niah.hpp"
#include "oryx/packing.hpp"
#include "oryx/planner.hpp"
#include "oryx/rng.hpp"
#include "oryx/tensor_io.hpp"

using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

std::uint64_t seed_or_env(const CLI::Option* opt, std::uint64_t value) {
    if (opt != nullptr && opt->count() > 0) return value;
    if (const char* env = std::getenv("ORYX_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') throw oryx::InvalidInput("ORYX_SEED is not an integer");
        return static_cast<std::uint64_t>(v);
    }
    return value;
}

oryx::DownsampleVariant variant_from(const std::string& name) {
    if (name == "avgpool") return oryx::DownsampleVariant::AvgPool;
    if (name == "dwconv") return oryx::DownsampleVariant::DWConv;
    if (name == "convmlp") return oryx::DownsampleVariant::ConvMLP;
    throw oryx::InvalidInput("unknown variant: " + name);
}

// ---- plan ----

struct PlanArgs {
    int width = 0, height = 0;
    std::int64_t frames = 1;
    double fps = 1.0;
};

int run_plan(const PlanArgs& a) {
    const oryx::CompressionPlan plan =
        oryx::plan_clip({a.height, a.width}, a.frames, a.fps);
    json j;
    j["category"] = oryx::category_name(plan.category);
    j["ratio"] = plan.ratio;
    j["frame_cap"] = plan.frame_cap;
    j["indices"] = plan.indices;
    j["frames_sampled"] = plan.indices.size();
    j["tokens_per_frame"] = plan.frame_tokens.empty() ? 0 : plan.frame_tokens.front();
    j["total_tokens"] = plan.total_tokens;
    emit(j);
    return 0;
}

// ---- encode ----

struct EncodeArgs {
    std::string input, config, output;
    std::uint64_t seed = 0;
};

oryx::EncoderConfig encoder_config_from_json(const std::string& path, std::uint64_t seed) {
    oryx::EncoderConfig cfg;
    cfg.seed = seed;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw oryx::InvalidInput("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw oryx::InvalidInput(std::string("bad config json: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "patch_size") cfg.patch_size = value.get<int>();
        else if (key == "in_channels") cfg.in_channels = value.get<int>();
        else if (key == "channels") cfg.channels = value.get<int>();
        else if (key == "depth") cfg.depth = value.get<int>();
        else if (key == "heads") cfg.heads = value.get<int>();
        else if (key == "mlp_ratio") cfg.mlp_ratio = value.get<double>();
        else if (key == "table_grid") cfg.table_grid = value.get<int>();
        else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
        else throw oryx::InvalidInput("unknown config key: " + key);
    }
    return cfg;
}

template <typename T>
json encode_typed(const oryx::TensorFile& t, const oryx::EncoderConfig& cfg,
                  const std::vector<T>& data, const std::string& output) {
    const int h = static_cast<int>(t.dims[0]);
    const int w = static_cast<int>(t.dims[1]);
    const int ch = t.dims.size() == 3 ? static_cast<int>(t.dims[2]) : 1;
    oryx::EncoderConfig ec = cfg;
    ec.in_channels = ch;
    oryx::VisualInput<T> input(h, w, ch, oryx::Modality::Image);
    input.pixels = data;
    const auto enc = oryx::make_encoder<T>(ec);
    const std::vector<oryx::VisualInput<T>> one{input};
    const auto feats = oryx::encode_inputs(std::span<const oryx::VisualInput<T>>(one), enc);
    const oryx::FeatureMap<T>& f = feats.front();
    json j;
    j["grid"] = {{"rows", f.rows}, {"cols", f.cols}};
    j["tokens"] = f.token_count();
    j["channels"] = f.channels;
    if (!output.empty()) {
        oryx::TensorFile out;
        out.dtype = t.dtype;
        out.dims = {static_cast<std::uint32_t>(f.rows), static_cast<std::uint32_t>(f.cols),
                    static_cast<std::uint32_t>(f.channels)};
        if constexpr (std::is_same_v<T, float>)
            out.f32 = f.values;
        else
            out.f64 = f.values;
        oryx::write_tensor_file(output, out);
        j["output"] = output;
    }
    emit(j);
    return j;
}

int run_encode(const EncodeArgs& a) {
    const oryx::TensorFile t = oryx::read_tensor_file(a.input);
    if (t.dims.size() != 2 && t.dims.size() != 3)
        throw oryx::InvalidInput("encode expects dims [H,W] or [H,W,C]");
    oryx::EncoderConfig cfg = encoder_config_from_json(a.config, a.seed);
    if (t.dtype == 0)
        encode_typed<float>(t, cfg, t.f32, a.output);
    else
        encode_typed<double>(t, cfg, t.f64, a.output);
    return 0;
}

// ---- compress ----

struct CompressArgs {
    std::string input, output;
    int ratio = 1;
    std::string variant = "avgpool";
    int lm_channels = 16;
    int d_k = 0;
    std::uint64_t seed = 0;
};

template <typename T>
json compress_typed(const oryx::TensorFile& t, const CompressArgs& a, const std::vector<T>& data) {
    const int rows = static_cast<int>(t.dims[0]);
    const int cols = static_cast<int>(t.dims[1]);
    const int ch = static_cast<int>(t.dims[2]);
    oryx::FeatureMap<T> f(rows, cols, ch);
    f.values = data;
    const auto w = oryx::make_compressor<T>(ch, a.lm_channels, variant_from(a.variant), a.seed,
                                            a.d_k);
    const oryx::Mat<T> tokens = oryx::compress(f, a.ratio, w.variant, w);
    json j;
    j["tokens_in"] = static_cast<std::int64_t>(rows) * cols;
    j["tokens_out"] = tokens.rows;
    j["ratio"] = a.ratio;
    j["variant"] = a.variant;
    j["lm_channels"] = a.lm_channels;
    if (!a.output.empty()) {
        oryx::TensorFile out;
        out.dtype = t.dtype;
        out.dims = {static_cast<std::uint32_t>(tokens.rows),
                    static_cast<std::uint32_t>(tokens.cols)};
        if constexpr (std::is_same_v<T, float>)
            out.f32 = tokens.v;
        else
            out.f64 = tokens.v;
        oryx::write_tensor_file(a.output, out);
        j["output"] = a.output;
    }
    emit(j);
    return j;
}

int run_compress(const CompressArgs& a) {
    const oryx::TensorFile t = oryx::read_tensor_file(a.input);
    if (t.dims.size() != 3) throw oryx::InvalidInput("compress expects dims [rows,cols,C]");
    if (t.dtype == 0)
        compress_typed<float>(t, a, t.f32);
    else
        compress_typed<double>(t, a, t.f64);
    return 0;
}

// ---- niah-gen ----

struct NiahGenArgs {
    std::int64_t frames = 0;
    double depth = 0.0;
    std::uint64_t seed = 0;
    int height = 16, width = 16;
    std::string output;
};

int run_niah_gen(const NiahGenArgs& a) {
    oryx::Rng rng(a.seed);
    const auto payload = static_cast<std::uint32_t>(rng.next_u64());
    oryx::NeedleSpec<float> spec;
    spec.haystack_frames = a.frames;
    spec.depth = a.depth;
    spec.needle = oryx::make_needle_frame<float>(payload, a.height, a.width, rng);
    const auto built = oryx::insert_needle(spec, a.seed + 1, a.height, a.width);
    json j;
    j["frames"] = built.frames.size();
    j["needle_index"] = built.needle_index;
    j["depth"] = a.depth;
    j["payload_hex"] = oryx::payload_hex(payload);
    if (!a.output.empty()) {
        oryx::TensorFile out;
        out.dtype = 0;
        out.dims = {static_cast<std::uint32_t>(built.frames.size()),
                    static_cast<std::uint32_t>(a.height), static_cast<std::uint32_t>(a.width)};
        out.f32.reserve(built.frames.size() * static_cast<std::size_t>(a.height) * a.width);
        for (const auto& f : built.frames)
            out.f32.insert(out.f32.end(), f.pixels.begin(), f.pixels.end());
        oryx::write_tensor_file(a.output, out);
        j["output"] = a.output;
    }
    emit(j);
    return 0;
}

// ---- niah-eval ----

struct NiahEvalArgs {
    std::vector<double> depths;
    std::vector<std::int64_t> frame_counts;
    int trials = 5;
    std::string retriever = "oracle";
    std::uint64_t seed = 0;
    std::string out;
};

int run_niah_eval(const NiahEvalArgs& a) {
    const std::vector<double> depths = a.depths.empty() ? oryx::default_depths() : a.depths;
    const std::vector<std::int64_t> counts =
        a.frame_counts.empty() ? oryx::default_frame_counts() : a.frame_counts;
    oryx::EvalConfig cfg;
    cfg.trials = a.trials;
    cfg.seed = a.seed;
    oryx::RetrieverFn<float> fn;
    if (a.retriever == "oracle")
        fn = oryx::oracle_retriever<float>;
    else if (a.retriever == "wrong")
        fn = [](const std::vector<oryx::VisualInput<float>>&) { return "never right"; };
    else
        throw oryx::InvalidInput("unknown retriever: " + a.retriever);
    const oryx::EvalGrid grid = oryx::eval_grid<float>(
        fn, std::span<const double>(depths), std::span<const std::int64_t>(counts), cfg);
    const std::string csv = oryx::grid_csv(grid);
    double lo = 1.0, hi = 0.0;
    for (const double v : grid.accuracy.v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    json j;
    j["depths"] = depths;
    j["frame_counts"] = counts;
    j["trials"] = a.trials;
    j["retriever"] = a.retriever;
    j["accuracy_min"] = lo;
    j["accuracy_max"] = hi;
    if (a.out.empty()) {
        j["csv"] = csv;
    } else {
        std::ofstream f(a.out, std::ios::trunc);
        if (!f) throw oryx::InvalidInput("cannot open for writing: " + a.out);
        f << csv;
        j["csv_path"] = a.out;
    }
    emit(j);
    return 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
    int probes = 50;
    std::string group = "all";
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
};

int run_gradcheck(const GradcheckArgs& a) {
    oryx::EncoderConfig cfg;
    cfg.channels = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_ratio = 2.0;
    cfg.table_grid = 5;
    auto m = oryx::make_model<double>(cfg, 6, oryx::DownsampleVariant::ConvMLP, a.seed);
    oryx::Rng rng(a.seed + 1);
    for (auto& g : oryx::param_groups(m))
        for (auto& t : g.tensors)
            for (auto& x : t) x += rng.uniform(-0.2, 0.2);
    std::vector<oryx::Sample<double>> batch;
    batch.push_back(oryx::synthetic_sample<double>(32, 32, 1, 0.4, rng));
    batch.push_back(oryx::synthetic_sample<double>(32, 32, 64, -0.2, rng));
    batch.push_back(oryx::synthetic_sample<double>(32, 32, 300, 0.3, rng));
    const double err = oryx::finite_diff_check(m, std::span<const oryx::Sample<double>>(batch),
                                               a.group, a.probes, a.seed + 2);
    json j;
    j["group"] = a.group;
    j["probes"] = a.probes;
    j["max_rel_err"] = err;
    j["tolerance"] = a.tolerance;
    j["pass"] = err <= a.tolerance;
    emit(j);
    if (err > a.tolerance) return kExitNumerical;
    return 0;
}

// ---- bench ----

struct BenchArgs {
    std::vector<std::int64_t> segments;
    int channels = 32;
    int heads = 4;
    int repeat = 3;
    std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
    if (a.segments.empty()) throw oryx::InvalidInput("need at least one segment length");
    for (const std::int64_t n : a.segments)
        if (n < 1) throw oryx::InvalidInput("segment lengths must be positive");
    oryx::Rng rng(a.seed);
    std::vector<oryx::Mat<float>> seqs;
    for (const std::int64_t n : a.segments) {
        oryx::Mat<float> m(n, a.channels);
        for (auto& x : m.v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
        seqs.push_back(std::move(m));
    }
    const oryx::PackedBatch<float> batch = oryx::pack(std::span<const oryx::Mat<float>>(seqs));
    const auto w = oryx::make_attention_weights<float>(a.channels, a.heads, rng);
    const auto t0 = std::chrono::steady_clock::now();
    float sink = 0;
    for (int rep = 0; rep < a.repeat; ++rep) {
        const oryx::PackedBatch<float> out = oryx::segment_attention(batch, w);
        sink += out.tokens.v.front();
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const std::int64_t total = batch.tokens.rows;
    json j;
    j["segments"] = a.segments;
    j["total_tokens"] = total;
    j["repeats"] = a.repeat;
    j["ms_total"] = ms;
    j["tokens_per_second"] = ms > 0 ? static_cast<double>(total) * a.repeat / (ms / 1000.0) : 0.0;
    j["checksum"] = sink; // keeps the loop observable
    emit(j);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale visual token pipeline"};
    app.require_subcommand(1);

    PlanArgs plan;
    auto* cmd_plan = app.add_subcommand("plan", "frame sampling and token budget for a clip");
    cmd_plan->add_option("--width", plan.width, "native width")->required();
    cmd_plan->add_option("--height", plan.height, "native height")->required();
    cmd_plan->add_option("--frames", plan.frames, "native frame count")->required();
    cmd_plan->add_option("--fps", plan.fps, "native frames per second")->capture_default_str();

    EncodeArgs enc;
    auto* cmd_encode = app.add_subcommand("encode", "run the encoder over a tensor image");
    cmd_encode->add_option("--input", enc.input, "input tensor path")->required();
    cmd_encode->add_option("--config", enc.config, "encoder config json");
    cmd_encode->add_option("--output", enc.output, "feature tensor output path");
    auto* enc_seed = cmd_encode->add_option("--seed", enc.seed, "weight seed");

    CompressArgs comp;
    auto* cmd_compress = app.add_subcommand("compress", "compress a feature-map tensor");
    cmd_compress->add_option("--input", comp.input, "feature tensor [rows,cols,C]")->required();
    cmd_compress->add_option("--ratio", comp.ratio, "side ratio")->required()
        ->check(CLI::IsMember({1, 2, 4}));
    cmd_compress->add_option("--variant", comp.variant, "downsample variant")
        ->check(CLI::IsMember({"avgpool", "dwconv", "convmlp"}))->capture_default_str();
    cmd_compress->add_option("--lm-channels", comp.lm_channels, "output width")
        ->capture_default_str();
    cmd_compress->add_option("--d-k", comp.d_k, "attention key width (0 = C/4)")
        ->capture_default_str();
    cmd_compress->add_option("--output", comp.output, "token tensor output path");
    auto* comp_seed = cmd_compress->add_option("--seed", comp.seed, "weight seed");

    NiahGenArgs ngen;
    auto* cmd_ngen = app.add_subcommand("niah-gen", "build a haystack with one needle");
    cmd_ngen->add_option("--frames", ngen.frames, "haystack frame count")->required();
    cmd_ngen->add_option("--depth", ngen.depth, "insertion depth in [0,1]")->required();
    auto* ngen_seed = cmd_ngen->add_option("--seed", ngen.seed, "generation seed");
    cmd_ngen->add_option("--height", ngen.height, "frame height")->capture_default_str();
    cmd_ngen->add_option("--width", ngen.width, "frame width")->capture_default_str();
    cmd_ngen->add_option("--output", ngen.output, "frames tensor output path");

    NiahEvalArgs neval;
    auto* cmd_neval = app.add_subcommand("niah-eval", "depth x frame-count retrieval grid");
    cmd_neval->add_option("--depths", neval.depths, "depth axis")->delimiter(',');
    cmd_neval->add_option("--frame-counts", neval.frame_counts, "frame-count axis")
        ->delimiter(',');
    cmd_neval->add_option("--trials", neval.trials, "trials per cell")->capture_default_str();
    cmd_neval->add_option("--retriever", neval.retriever, "oracle or wrong")
        ->check(CLI::IsMember({"oracle", "wrong"}))->capture_default_str();
    auto* neval_seed = cmd_neval->add_option("--seed", neval.seed, "evaluation seed");
    cmd_neval->add_option("--out", neval.out, "write the CSV here instead of inline");

    GradcheckArgs gc;
    auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    cmd_gc->add_option("--probes", gc.probes, "probe count")->capture_default_str();
    cmd_gc->add_option("--group", gc.group, "parameter group or all")
        ->check(CLI::IsMember({"encoder", "compressor", "projector", "head", "all"}))
        ->capture_default_str();
    cmd_gc->add_option("--tolerance", gc.tolerance, "max relative error allowed")
        ->capture_default_str();
    auto* gc_seed = cmd_gc->add_option("--seed", gc.seed, "model and probe seed");

    BenchArgs bench;
    auto* cmd_bench = app.add_subcommand("bench", "packed attention throughput");
    cmd_bench->add_option("--segments", bench.segments, "segment lengths")->required()
        ->delimiter(',');
    cmd_bench->add_option("--channels", bench.channels, "token width")->capture_default_str();
    cmd_bench->add_option("--heads", bench.heads, "attention heads")->capture_default_str();
    cmd_bench->add_option("--repeat", bench.repeat, "timing repeats")->capture_default_str();
    auto* bench_seed = cmd_bench->add_option("--seed", bench.seed, "content seed");

    try {
        app.parse(argc, argv);
        if (cmd_plan->parsed()) return run_plan(plan);
        if (cmd_encode->parsed()) {
            enc.seed = seed_or_env(enc_seed, enc.seed);
            return run_encode(enc);
        }
        if (cmd_compress->parsed()) {
            comp.seed = seed_or_env(comp_seed, comp.seed);
            return run_compress(comp);
        }
        if (cmd_ngen->parsed()) {
            ngen.seed = seed_or_env(ngen_seed, ngen.seed);
            return run_niah_gen(ngen);
        }
        if (cmd_neval->parsed()) {
            neval.seed = seed_or_env(neval_seed, neval.seed);
            return run_niah_eval(neval);
        }
        if (cmd_gc->parsed()) {
            gc.seed = seed_or_env(gc_seed, gc.seed);
            return run_gradcheck(gc);
        }
        if (cmd_bench->parsed()) {
            bench.seed = seed_or_env(bench_seed, bench.seed);
            return run_bench(bench);
        }
        return kExitValidation;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        emit(json{{"error", e.what()}});
        return kExitValidation;
    } catch (const oryx::TensorFormatError& e) {
        emit(json{{"error", e.what()}, {"byte_offset", e.byte_offset}});
        return kExitValidation;
    } catch (const oryx::NumericalError& e) {
        emit(json{{"error", e.what()}});
        return kExitNumerical;
    } catch (const std::exception& e) {
        emit(json{{"error", e.what()}});
        return kExitValidation;
    }
}
