#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"
#include "oryx/rng.hpp"
#include "oryx/tensor_io.hpp"

using nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    const std::string cmd = env_prefix + std::string(ORYX_CLI_PATH) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    RunResult r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int rc = pclose(p);
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    return r;
}

json parse(const RunResult& r) { return json::parse(r.out); }

std::filesystem::path scratch_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "oryx_cli_test";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("plan reports the short-video budget for a 128-frame clip") {
    const auto r = run_cli("plan --width 1920 --height 1080 --frames 128 --fps 1");
    REQUIRE(r.exit_code == 0);
    const json j = parse(r);
    REQUIRE(j["category"] == "ShortVideo");
    REQUIRE(j["ratio"] == 2);
    REQUIRE(j["indices"].size() == 64);
    REQUIRE(j["total_tokens"] == 14080);
    REQUIRE(j["tokens_per_frame"] == 220);
}

TEST_CASE("plan routes single frames and long footage appropriately") {
    const json img = parse(run_cli("plan --width 100 --height 100 --frames 1"));
    REQUIRE(img["category"] == "Image");
    REQUIRE(img["ratio"] == 1);
    REQUIRE(img["indices"].size() == 1);
    REQUIRE(img["total_tokens"] == 36);

    const json lv = parse(run_cli("plan --width 1920 --height 1080 --frames 2000 --fps 1"));
    REQUIRE(lv["category"] == "LongVideo");
    REQUIRE(lv["ratio"] == 4);
    REQUIRE(lv["indices"].size() == 256);
    REQUIRE(lv["total_tokens"] ==
            256 * lv["tokens_per_frame"].get<std::int64_t>());
}

TEST_CASE("plan validation failures exit 2 with a json error") {
    const auto bad = run_cli("plan --width 0 --height 5 --frames 1");
    REQUIRE(bad.exit_code == 2);
    REQUIRE(parse(bad).contains("error"));
    const auto missing = run_cli("plan --width 64");
    REQUIRE(missing.exit_code == 2);
    REQUIRE(parse(missing).contains("error"));
    const auto none = run_cli("");
    REQUIRE(none.exit_code == 2);
}

TEST_CASE("encode consumes a tensor image and emits grid stats") {
    const auto dir = scratch_dir();
    oryx::Rng rng(3);
    std::vector<float> px;
    for (int i = 0; i < 32 * 32; ++i) px.push_back(static_cast<float>(rng.uniform()));
    oryx::write_tensor_file((dir / "img.tnsr").string(),
                            oryx::tensor_from_f32({32, 32}, px));
    std::ofstream((dir / "cfg.json").string())
        << R"({"channels": 8, "depth": 1, "heads": 2, "mlp_ratio": 2.0, "table_grid": 5})";
    const auto r = run_cli("encode --input " + (dir / "img.tnsr").string() + " --config " +
                           (dir / "cfg.json").string() + " --output " +
                           (dir / "enc.tnsr").string() + " --seed 7");
    REQUIRE(r.exit_code == 0);
    const json j = parse(r);
    REQUIRE(j["tokens"] == 4);
    REQUIRE(j["grid"]["rows"] == 2);
    REQUIRE(j["grid"]["cols"] == 2);
    REQUIRE(j["channels"] == 8);
    const auto out = oryx::read_tensor_file((dir / "enc.tnsr").string());
    REQUIRE(out.dims == std::vector<std::uint32_t>{2, 2, 8});
    REQUIRE(out.dtype == 0);
}

TEST_CASE("encode rejects an unknown config key") {
    const auto dir = scratch_dir();
    oryx::write_tensor_file((dir / "img2.tnsr").string(),
                            oryx::tensor_from_f32({16, 16}, std::vector<float>(256, 0.5f)));
    std::ofstream((dir / "bad_cfg.json").string()) << R"({"channles": 8})";
    const auto r = run_cli("encode --input " + (dir / "img2.tnsr").string() + " --config " +
                           (dir / "bad_cfg.json").string());
    REQUIRE(r.exit_code == 2);
    REQUIRE(parse(r)["error"].get<std::string>().find("channles") != std::string::npos);
}

TEST_CASE("compress keeps the grid at ratio 1 and ceils at ratio 4") {
    const auto dir = scratch_dir();
    oryx::Rng rng(5);
    std::vector<float> vals;
    for (int i = 0; i < 3 * 5 * 8; ++i) vals.push_back(static_cast<float>(rng.uniform(-1, 1)));
    const auto feat = (dir / "feat.tnsr").string();
    oryx::write_tensor_file(feat, oryx::tensor_from_f32({3, 5, 8}, vals));

    const json r1 = parse(run_cli("compress --input " + feat + " --ratio 1"));
    REQUIRE(r1["tokens_in"] == 15);
    REQUIRE(r1["tokens_out"] == 15);

    const auto tok = (dir / "tok.tnsr").string();
    const json r4 = parse(run_cli("compress --input " + feat +
                                  " --ratio 4 --variant convmlp --lm-channels 10 --output " + tok));
    REQUIRE(r4["tokens_out"] == 2); // ceil(3/4) x ceil(5/4)
    const auto out = oryx::read_tensor_file(tok);
    REQUIRE(out.dims == std::vector<std::uint32_t>{2, 10});
}

TEST_CASE("compress surfaces tensor-format violations with the byte offset") {
    const auto dir = scratch_dir();
    const auto bad = (dir / "bad.tnsr").string();
    {
        auto bytes = oryx::serialize_tensor(
            oryx::tensor_from_f32({2, 2, 1}, {1.f, 2.f, 3.f, 4.f}));
        bytes[9] = 9; // version high byte
        std::ofstream f(bad, std::ios::binary);
        f.write(reinterpret_cast<const char*>(bytes.data()),
                static_cast<std::streamsize>(bytes.size()));
    }
    const auto r = run_cli("compress --input " + bad + " --ratio 1");
    REQUIRE(r.exit_code == 2);
    const json j = parse(r);
    REQUIRE(j["byte_offset"] == 8);

    const auto r3 = run_cli("compress --input " + bad + " --ratio 3");
    REQUIRE(r3.exit_code == 2); // flag validation fires before any file io
}

TEST_CASE("niah-gen places the needle at the clamped floor index") {
    const json d0 = parse(run_cli("niah-gen --frames 100 --depth 0.0 --seed 5"));
    REQUIRE(d0["frames"] == 101);
    REQUIRE(d0["needle_index"] == 0);
    const json d1 = parse(run_cli("niah-gen --frames 100 --depth 1.0 --seed 5"));
    REQUIRE(d1["needle_index"] == 99);
    const auto bad = run_cli("niah-gen --frames 100 --depth 1.5 --seed 5");
    REQUIRE(bad.exit_code == 2);
}

TEST_CASE("niah-gen writes the frames tensor when asked") {
    const auto dir = scratch_dir();
    const auto frames = (dir / "frames.tnsr").string();
    const json j = parse(run_cli("niah-gen --frames 7 --depth 0.5 --seed 11 --output " + frames));
    REQUIRE(j["frames"] == 8);
    const auto t = oryx::read_tensor_file(frames);
    REQUIRE(t.dims == std::vector<std::uint32_t>{8, 16, 16});
}

TEST_CASE("the seed flag and the ORYX_SEED fallback agree") {
    const json flag = parse(run_cli("niah-gen --frames 10 --depth 0.5 --seed 5"));
    const json env = parse(run_cli("niah-gen --frames 10 --depth 0.5", "ORYX_SEED=5 "));
    REQUIRE(flag["payload_hex"] == env["payload_hex"]);
    const json other = parse(run_cli("niah-gen --frames 10 --depth 0.5", "ORYX_SEED=6 "));
    REQUIRE(flag["payload_hex"] != other["payload_hex"]);
}

TEST_CASE("niah-eval scores the oracle at one and the wrong retriever at zero") {
    const std::string axes = "--depths 0,0.5,1 --frame-counts 4,6 --trials 2 --seed 9";
    const auto oracle = run_cli("niah-eval " + axes);
    REQUIRE(oracle.exit_code == 0);
    const json jo = parse(oracle);
    REQUIRE(jo["accuracy_min"] == 1.0);
    REQUIRE(jo["accuracy_max"] == 1.0);

    const json jw = parse(run_cli("niah-eval " + axes + " --retriever wrong"));
    REQUIRE(jw["accuracy_min"] == 0.0);
    REQUIRE(jw["accuracy_max"] == 0.0);

    const auto again = run_cli("niah-eval " + axes);
    REQUIRE(again.out == oracle.out); // byte-stable under a fixed seed
}

TEST_CASE("niah-eval writes the grid CSV to a file") {
    const auto dir = scratch_dir();
    const auto csv_path = (dir / "grid.csv").string();
    const json j = parse(run_cli("niah-eval --depths 0,1 --frame-counts 3,5 --trials 1 --out " +
                                 csv_path));
    REQUIRE(j["csv_path"] == csv_path);
    std::ifstream f(csv_path);
    std::string header;
    std::getline(f, header);
    REQUIRE(header == "depth,frames,accuracy");
    int rows = 0;
    for (std::string line; std::getline(f, line);)
        if (!line.empty()) ++rows;
    REQUIRE(rows == 4);
}

TEST_CASE("gradcheck passes at the stock tolerance and fails at an impossible one") {
    const auto ok = run_cli("gradcheck --probes 25 --seed 3");
    REQUIRE(ok.exit_code == 0);
    const json j = parse(ok);
    REQUIRE(j["pass"] == true);
    REQUIRE(j["max_rel_err"].get<double>() <= 1e-4);
    REQUIRE(j["probes"] == 25);

    const auto strict = run_cli("gradcheck --probes 10 --group encoder --seed 3 --tolerance 0");
    REQUIRE(strict.exit_code == 3);
    REQUIRE(parse(strict)["pass"] == false);
}

TEST_CASE("bench reports the packed token total") {
    const auto r = run_cli("bench --segments 4,8,3 --repeat 2 --seed 1");
    REQUIRE(r.exit_code == 0);
    const json j = parse(r);
    REQUIRE(j["total_tokens"] == 15);
    REQUIRE(j["repeats"] == 2);
    REQUIRE(j["ms_total"].get<double>() >= 0.0);

    const auto bad = run_cli("bench --segments 3,0");
    REQUIRE(bad.exit_code == 2);
}
