#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "saliency_forge/core.hpp"
#include "saliency_forge/errors.hpp"
#include "saliency_forge/io.hpp"
#include "saliency_forge/npy.hpp"
#include "test_support.hpp"

using namespace saliency_forge;
using sf_test::TempDir;

namespace {

std::vector<double> normalized(std::vector<double> v) {
    const auto n = v.size();
    return normalize_map(make_map(1, n, std::move(v))).scores;
}

void check_close(const std::vector<double>& got, const std::vector<double>& want, double tol = 1e-15) {
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(tol));
}

}  // namespace

TEST_SUITE("attribution") {

TEST_CASE("normalize_map clips then scales") {
    check_close(normalized({-1, 0, 1, 3}), {0, 0, 1.0 / 3.0, 1});
    check_close(normalized({5, 5, 5}), {0, 0, 0});
    // clip: [0.2, 0, 0.8]; min 0, max 0.8 -> [0.25, 0, 1]
    check_close(normalized({0.2, -0.4, 0.8}), {0.25, 0, 1});
    CHECK(normalize_map(make_map(1, 2, {1.0, 2.0})).normalized);
}

TEST_CASE("normalize_map names the offending index") {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        (void)normalize_map(AttributionMap{1, 3, {0.0, nan, 2.0}, "x", false});
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("index 1") != std::string::npos);
    }
}

TEST_CASE("normalize_map properties on random maps") {
    auto rng = sf_test::rng_for(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto map = make_map(4, 5, sf_test::uniform_values(rng, 20, -3.0, 3.0));
        const auto once = normalize_map(map);
        const auto twice = normalize_map(once);
        CHECK(once.scores == twice.scores);
        for (double v : once.scores) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }

        // Ranking preserved for nonnegative inputs with max > min.
        const auto positive = make_map(4, 5, sf_test::uniform_values(rng, 20, 0.0, 5.0));
        CHECK(descending_order(normalize_map(positive).scores) == descending_order(positive.scores));
    }
}

TEST_CASE("reduce_channels averages per pixel") {
    const AttributionGrid single{1, 2, 2, {1, 2, 3, 4}};
    CHECK(reduce_channels(single).scores == std::vector<double>{1, 2, 3, 4});

    const AttributionGrid three{3, 1, 1, {0.0, 0.3, 0.6}};
    CHECK(reduce_channels(three).scores[0] == doctest::Approx(0.3).epsilon(1e-15));

    auto rng = sf_test::rng_for(2);
    const auto data = sf_test::uniform_values(rng, 12, -1, 1);
    const auto reduced = reduce_channels(AttributionGrid{3, 2, 2, data});
    for (std::size_t p = 0; p < 4; ++p) {
        double s = 0.0;
        for (std::size_t c = 0; c < 3; ++c) s += data[c * 4 + p];
        CHECK(reduced.scores[p] == doctest::Approx(s / 3.0).epsilon(1e-15));
    }
    CHECK_THROWS_AS(reduce_channels(AttributionGrid{0, 2, 2, {}}), ValidationError);
}

TEST_CASE("make_noise_map is seeded standard normal") {
    const auto a = make_noise_map(8, 8, RngSeed{5});
    const auto b = make_noise_map(8, 8, RngSeed{5});
    CHECK(a.scores == b.scores);
    CHECK(a.source == "noise");
    CHECK(make_noise_map(8, 8, RngSeed{6}).scores != a.scores);

    double mean_sum = 0.0, std_sum = 0.0;
    for (std::uint64_t s = 0; s < 30; ++s) {
        const auto m = make_noise_map(64, 64, RngSeed{s});
        const double mean = std::accumulate(m.scores.begin(), m.scores.end(), 0.0) / m.size();
        double var = 0.0;
        for (double v : m.scores) var += (v - mean) * (v - mean);
        mean_sum += mean;
        std_sum += std::sqrt(var / m.size());
    }
    CHECK(std::abs(mean_sum / 30.0) < 0.05);
    CHECK(std::abs(std_sum / 30.0 - 1.0) < 0.05);
}

TEST_CASE("image validation") {
    CHECK_THROWS_AS(make_image(2, 2, 2, std::vector<double>(8, 0.5)), ValidationError);
    CHECK_THROWS_AS(make_image(1, 2, 2, {0.1, 0.2, 1.5, 0.3}), ValidationError);
    CHECK_THROWS_AS(make_image(1, 0, 2, {}), ValidationError);
    CHECK_NOTHROW(make_image(3, 1, 1, {0.0, 0.5, 1.0}));
}

TEST_CASE("stack shape checks") {
    AttributionStack stack;
    stack.id = "s";
    stack.maps.push_back(make_map(28, 28, std::vector<double>(784, 0.1)));
    stack.maps.push_back(make_map(32, 32, std::vector<double>(1024, 0.1)));
    CHECK_THROWS_AS(stack.validate(), ValidationError);

    AttributionStack single;
    single.maps.push_back(make_map(2, 2, {0, 1, 2, 3}));
    CHECK_NOTHROW(single.validate());
    CHECK_THROWS_AS(single.validate_for_ensemble(), ValidationError);
}

TEST_CASE("descending_order breaks ties by index") {
    CHECK(descending_order({0.5, 1.0, 0.5, 0.0, 1.0}) == std::vector<std::size_t>{1, 4, 0, 2, 3});
}

TEST_CASE("derive_seed and stable_hash are fixed functions") {
    CHECK(derive_seed(RngSeed{1}, 2) == derive_seed(RngSeed{1}, 2));
    CHECK_FALSE(derive_seed(RngSeed{1}, 2) == derive_seed(RngSeed{1}, 3));
    CHECK(stable_hash("") == 14695981039346656037ULL);
    CHECK(stable_hash("a") == 0xaf63dc4c8601ec8cULL);
}

}  // TEST_SUITE

TEST_SUITE("npy") {

TEST_CASE("round trip for every dtype") {
    const std::size_t shape[] = {2, 3};
    const std::vector<double> values{0, 1, 2, 3, 4, 5};
    for (auto dtype : {NpyDtype::Float64, NpyDtype::Float32, NpyDtype::Int32, NpyDtype::Int64, NpyDtype::UInt8}) {
        const auto bytes = encode_npy(shape, values, dtype);
        CHECK(bytes.substr(0, 6) == "\x93NUMPY");
        const auto header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<unsigned char>(bytes[9]) << 8);
        CHECK((10 + header_len) % 64 == 0);
        const auto back = decode_npy(bytes);
        CHECK(back.shape == std::vector<std::size_t>{2, 3});
        CHECK(back.data == values);
        CHECK(back.dtype == dtype);
    }
}

TEST_CASE("float64 payloads are lossless") {
    auto rng = sf_test::rng_for(3);
    const auto values = sf_test::uniform_values(rng, 17, -1e6, 1e6);
    const std::size_t shape[] = {17};
    CHECK(decode_npy(encode_npy(shape, values)).data == values);
}

TEST_CASE("fortran order is transposed into C order") {
    // 2×3 array [[0,1,2],[3,4,5]] stored column-major: 0,3,1,4,2,5
    std::string header = "{'descr': '<f8', 'fortran_order': True, 'shape': (2, 3), }";
    while ((10 + header.size() + 1) % 64 != 0) header += ' ';
    header += '\n';
    std::string bytes = std::string("\x93NUMPY\x01\x00", 8);
    bytes += static_cast<char>(header.size() & 0xFF);
    bytes += static_cast<char>(header.size() >> 8);
    bytes += header;
    for (double v : {0.0, 3.0, 1.0, 4.0, 2.0, 5.0}) bytes.append(reinterpret_cast<const char*>(&v), 8);
    CHECK(decode_npy(bytes).data == std::vector<double>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("corrupt buffers raise IoError") {
    CHECK_THROWS_AS(decode_npy(""), IoError);
    CHECK_THROWS_AS(decode_npy("not an npy file at all"), IoError);
    const std::size_t shape[] = {4};
    const std::vector<double> values{1, 2, 3, 4};
    auto bytes = encode_npy(shape, values);
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_npy(bytes), IoError);
}

}  // TEST_SUITE

TEST_SUITE("io") {

TEST_CASE("stack save/load round trip") {
    TempDir dir;
    auto rng = sf_test::rng_for(4);
    AttributionStack stack = sf_test::random_stack(rng, 3, 5, 4, false);
    stack.id = "img/0001";
    stack.maps[1].source = "lime";
    stack.image = sf_test::random_image(rng, 3, 5, 4);
    stack.image->label = 7;

    save_stack(stack, dir / "s.json");
    const auto back = load_stack(dir / "s.json");
    CHECK(back.id == stack.id);
    REQUIRE(back.maps.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.maps[i].scores == stack.maps[i].scores);
        CHECK(back.maps[i].source == stack.maps[i].source);
        CHECK(back.maps[i].normalized == stack.maps[i].normalized);
    }
    REQUIRE(back.image.has_value());
    CHECK(back.image->data == stack.image->data);
    CHECK(back.image->label == 7);
}

TEST_CASE("round trip over random stacks") {
    TempDir dir;
    auto rng = sf_test::rng_for(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<std::size_t> dim(1, 6), count(1, 5);
        const bool normalized = trial % 2 == 0;
        auto stack = sf_test::random_stack(rng, count(rng), dim(rng), dim(rng), normalized);
        stack.id = "t" + std::to_string(trial);
        const auto path = dir / (stack.id + ".json");
        save_stack(stack, path);
        const auto back = load_stack(path);
        REQUIRE(back.maps.size() == stack.maps.size());
        for (std::size_t i = 0; i < back.maps.size(); ++i) CHECK(back.maps[i].scores == stack.maps[i].scores);
    }
}

TEST_CASE("3D maps are channel-reduced on load") {
    TempDir dir;
    const std::size_t shape[] = {2, 1, 2};
    write_npy(dir / "m.npy", shape, std::vector<double>{0, 2, 4, 6}, NpyDtype::Float32);
    const auto map = load_map(dir / "m.npy");
    CHECK(map.scores == std::vector<double>{2, 4});
}

TEST_CASE("bad manifests") {
    TempDir dir;
    write_text_file(dir / "empty.json", "");
    CHECK_THROWS_AS(load_stack(dir / "empty.json"), IoError);
    write_text_file(dir / "garbage.json", "{not json");
    CHECK_THROWS_AS(load_stack(dir / "garbage.json"), IoError);
    write_text_file(dir / "v2.json", R"({"schema_version": 2, "maps": []})");
    CHECK_THROWS_AS(load_stack(dir / "v2.json"), IoError);
    CHECK_THROWS_AS(load_stack(dir / "missing.json"), IoError);

    const std::size_t a[] = {28, 28};
    const std::size_t b[] = {32, 32};
    write_npy(dir / "a.npy", a, std::vector<double>(784, 0.0));
    write_npy(dir / "b.npy", b, std::vector<double>(1024, 0.0));
    write_text_file(dir / "mismatch.json",
                    R"({"schema_version": 1, "id": "x", "maps": [{"path": "a.npy"}, {"path": "b.npy"}]})");
    CHECK_THROWS_AS(load_stack(dir / "mismatch.json"), ValidationError);
}

TEST_CASE("dataset manifest lists stacks relative to itself") {
    TempDir dir;
    auto rng = sf_test::rng_for(6);
    auto stack = sf_test::random_stack(rng, 2, 3, 3);
    stack.id = "a";
    save_stack(stack, dir / "sub" / "a.json");
    save_dataset_manifest(dir / "sub" / "dataset.json", {"a.json"});
    const auto stacks = load_dataset_manifest(dir / "sub" / "dataset.json");
    REQUIRE(stacks.size() == 1);
    CHECK(load_stack(stacks[0]).maps.size() == 2);
    // A stack manifest is a one-element dataset.
    CHECK(load_dataset_manifest(dir / "sub" / "a.json").size() == 1);
}

TEST_CASE("rbm params round trip") {
    TempDir dir;
    auto rng = sf_test::rng_for(7);
    const auto params = sf_test::random_params(rng, 4, 2);
    save_rbm_params(params, dir / "rbm");
    const auto back = load_rbm_params(dir / "rbm");
    CHECK(back.weights == params.weights);
    CHECK(back.visible_bias == params.visible_bias);
    CHECK(back.hidden_bias == params.hidden_bias);
}

TEST_CASE("git blob hash matches git's object id") {
    // `printf 'hello\n' | git hash-object --stdin`
    CHECK(git_blob_hash_bytes("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_hash_bytes("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

}  // TEST_SUITE
