#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "oryx/rng.hpp"
#include "oryx/tensor_io.hpp"

using namespace oryx;

TEST_CASE("serialized layout is exactly the documented bytes") {
    const TensorFile t = tensor_from_f32({2, 3}, {1.0f, 0.0f, -2.0f, 0.5f, 4.0f, -0.0f});
    const auto b = serialize_tensor(t);
    REQUIRE(b.size() == 14 + 8 + 24);
    REQUIRE(std::memcmp(b.data(), "ORYXTNSR", 8) == 0);
    REQUIRE(b[8] == 1);   // version 1 little-endian
    REQUIRE(b[9] == 0);
    REQUIRE(b[10] == 0);
    REQUIRE(b[11] == 0);
    REQUIRE(b[12] == 0);  // f32
    REQUIRE(b[13] == 2);  // ndim
    REQUIRE(b[14] == 2);  // dims[0] = 2
    REQUIRE(b[18] == 3);  // dims[1] = 3
    // 1.0f = 0x3F800000, stored low byte first
    REQUIRE(b[22] == 0x00);
    REQUIRE(b[23] == 0x00);
    REQUIRE(b[24] == 0x80);
    REQUIRE(b[25] == 0x3F);
}

TEST_CASE("f32 round trip is bitwise lossless, special values included") {
    Rng rng(7);
    std::vector<float> data;
    for (int i = 0; i < 97; ++i) data.push_back(static_cast<float>(rng.uniform(-10.0, 10.0)));
    data.push_back(0.0f);
    data.push_back(-0.0f);
    data.push_back(std::numeric_limits<float>::infinity());
    data.push_back(-std::numeric_limits<float>::infinity());
    data.push_back(std::numeric_limits<float>::quiet_NaN());
    data.push_back(std::numeric_limits<float>::denorm_min());
    data.push_back(std::numeric_limits<float>::max());
    const TensorFile t = tensor_from_f32({8, 13}, data);
    const TensorFile back = parse_tensor(serialize_tensor(t));
    REQUIRE(back.dtype == 0);
    REQUIRE(back.dims == std::vector<std::uint32_t>{8, 13});
    REQUIRE(back.f32.size() == data.size());
    REQUIRE(std::memcmp(back.f32.data(), data.data(), data.size() * sizeof(float)) == 0);
}

TEST_CASE("f64 round trip is bitwise lossless") {
    Rng rng(8);
    std::vector<double> data;
    for (int i = 0; i < 59; ++i) data.push_back(rng.normal());
    data.push_back(std::numeric_limits<double>::quiet_NaN());
    const TensorFile t = tensor_from_f64({4, 3, 5}, data);
    const TensorFile back = parse_tensor(serialize_tensor(t));
    REQUIRE(back.dtype == 1);
    REQUIRE(back.dims == std::vector<std::uint32_t>{4, 3, 5});
    REQUIRE(std::memcmp(back.f64.data(), data.data(), data.size() * sizeof(double)) == 0);
}

TEST_CASE("violations report the first offending byte") {
    const TensorFile t = tensor_from_f32({2, 2}, {1, 2, 3, 4});
    const auto good = serialize_tensor(t);
    auto offset_of = [](const std::vector<std::uint8_t>& bytes) -> std::size_t {
        try {
            parse_tensor(bytes);
        } catch (const TensorFormatError& e) {
            return e.byte_offset;
        }
        return static_cast<std::size_t>(-1);
    };

    auto bad = good;
    bad[3] = 'Z';
    REQUIRE(offset_of(bad) == 3);

    bad = good;
    bad[8] = 9; // version 9
    REQUIRE(offset_of(bad) == 8);

    bad = good;
    bad[12] = 2; // unknown dtype
    REQUIRE(offset_of(bad) == 12);

    bad = good;
    bad[13] = 0; // ndim 0
    REQUIRE(offset_of(bad) == 13);

    bad = good;
    bad[18] = 0; // dims[1] = 0
    bad[19] = 0;
    bad[20] = 0;
    bad[21] = 0;
    REQUIRE(offset_of(bad) == 18);

    bad = good;
    bad.resize(good.size() - 5); // truncated payload
    REQUIRE(offset_of(bad) == bad.size());

    bad = good;
    bad.push_back(0xFF); // surplus byte
    REQUIRE(offset_of(bad) == good.size());

    bad.assign(4, 'O'); // too short for the magic
    REQUIRE(offset_of(bad) == 4);

    bad.clear();
    REQUIRE(offset_of(bad) == 0);
}

TEST_CASE("write-read through a file is bitwise lossless") {
    Rng rng(9);
    std::vector<double> data;
    for (int i = 0; i < 24; ++i) data.push_back(rng.normal());
    const TensorFile t = tensor_from_f64({2, 3, 4}, data);
    const auto path =
        (std::filesystem::temp_directory_path() / "oryx_tensor_io_roundtrip.bin").string();
    write_tensor_file(path, t);
    const TensorFile back = read_tensor_file(path);
    REQUIRE(serialize_tensor(back) == serialize_tensor(t));
    std::filesystem::remove(path);
    REQUIRE_THROWS_AS(read_tensor_file(path), InvalidInput);
}

TEST_CASE("serialization rejects malformed tensors") {
    REQUIRE_THROWS_AS(tensor_from_f32({2, 2}, {1, 2, 3}), ShapeError);
    TensorFile t;
    t.dtype = 0;
    REQUIRE_THROWS_AS(serialize_tensor(t), InvalidInput); // no dims
    t.dims = {1, 0};
    t.f32 = {};
    REQUIRE_THROWS_AS(serialize_tensor(t), InvalidInput); // zero dim
}
