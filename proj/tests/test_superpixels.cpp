#include <doctest.h>

#include <set>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/superpixels.hpp"
#include "test_support.hpp"

using namespace saliency_forge;

TEST_SUITE("superpixels") {

TEST_CASE("uniform image splits into grid blocks") {
    const auto image = make_image(3, 8, 8, std::vector<double>(192, 0.4));
    const auto seg = slic(image, 4);
    CHECK(seg.n_segments == 4);
    CHECK_NOTHROW(seg.validate());
    for (auto size : segment_sizes(seg)) CHECK(size == 16);
    // Quadrants.
    CHECK(seg.labels[0] != seg.labels[7]);
    CHECK(seg.labels[0] != seg.labels[56]);
    CHECK(seg.labels[0] == seg.labels[3 * 8 + 3]);
}

TEST_CASE("k = 1 is one segment") {
    auto rng = sf_test::rng_for(41);
    const auto seg = slic(sf_test::random_image(rng, 3, 7, 5), 1);
    CHECK(seg.n_segments == 1);
    for (int l : seg.labels) CHECK(l == 0);
}

TEST_CASE("two-tone image splits on the color edge") {
    // k = 2 seeds a 2×1 grid whose cells meet at row 4; the edge sits at row 3.
    std::vector<double> data(3 * 8 * 8);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 8; ++y) {
            for (std::size_t x = 0; x < 8; ++x) data[(c * 8 + y) * 8 + x] = y < 3 ? 0.1 : 0.9;
        }
    }
    const auto seg = slic(make_image(3, 8, 8, data), 2, 0.1);
    REQUIRE(seg.n_segments == 2);
    for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) CHECK(seg.labels[y * 8 + x] == seg.labels[y < 3 ? 0 : 63]);
    }
    CHECK(seg.labels[0] != seg.labels[63]);
}

TEST_CASE("range checks") {
    const auto image = make_image(1, 3, 3, std::vector<double>(9, 0.5));
    CHECK_THROWS_AS(slic(image, 0), ValidationError);
    CHECK_THROWS_AS(slic(image, 10), ValidationError);
    CHECK_NOTHROW(slic(image, 9));
}

TEST_CASE("random images: coverage, connectivity, determinism") {
    auto rng = sf_test::rng_for(42);
    std::uniform_int_distribution<std::size_t> dim(3, 16), channels(0, 1);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t h = dim(rng), w = dim(rng);
        const auto image = sf_test::random_image(rng, channels(rng) ? 3 : 1, h, w);
        std::uniform_int_distribution<std::size_t> kd(1, std::min<std::size_t>(h * w, 30));
        const std::size_t k = kd(rng);
        const auto a = slic(image, k, 10.0, RngSeed{7});
        CHECK_NOTHROW(a.validate());
        CHECK(segments_are_connected(a));
        std::size_t covered = 0;
        for (auto s : segment_sizes(a)) covered += s;
        CHECK(covered == h * w);
        CHECK(slic(image, k, 10.0, RngSeed{7}).labels == a.labels);
    }
}

TEST_CASE("segment relevance") {
    auto rng = sf_test::rng_for(43);
    SuperpixelSegmentation seg{8, 8, std::vector<int>(64), 3};
    std::uniform_int_distribution<int> lab(0, 2);
    for (std::size_t p = 0; p < 64; ++p) seg.labels[p] = p < 3 ? static_cast<int>(p) : lab(rng);
    const auto map = sf_test::random_map(rng, 8, 8);
    const auto rel = segment_relevance(seg, map);
    for (int k = 0; k < 3; ++k) {
        double sum = 0.0;
        int n = 0;
        for (std::size_t p = 0; p < 64; ++p) {
            if (seg.labels[p] == k) {
                sum += map.scores[p];
                ++n;
            }
        }
        CHECK(rel[static_cast<std::size_t>(k)] == doctest::Approx(sum / n).epsilon(1e-14));
    }
    const auto ones = make_map(8, 8, std::vector<double>(64, 1.0));
    for (double v : segment_relevance(seg, ones)) CHECK(v == 1.0);

    SuperpixelSegmentation single{8, 8, std::vector<int>(64, 0), 1};
    double total = 0.0;
    for (double v : map.scores) total += v;
    CHECK(segment_relevance(single, map)[0] == doctest::Approx(total / 64).epsilon(1e-14));
    CHECK_THROWS_AS(segment_relevance(single, make_map(2, 2, {0, 0, 0, 0})), ValidationError);
}

TEST_CASE("validate rejects broken label grids") {
    SuperpixelSegmentation gap{1, 3, {0, 2, 2}, 3};
    CHECK_THROWS_AS(gap.validate(), ValidationError);
    SuperpixelSegmentation split{1, 3, {0, 1, 0}, 2};
    CHECK_FALSE(segments_are_connected(split));
    CHECK_THROWS_AS(split.validate(), ValidationError);
}

}  // TEST_SUITE
