#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/metrics.hpp"
#include "test_support.hpp"

using namespace saliency_forge;

namespace {

constexpr std::size_t kSide = 8;

// Designated set: the top two rows (16 of 64 pixels = 25%).
std::vector<std::uint8_t> designated_mask() {
    std::vector<std::uint8_t> mask(kSide * kSide, 0);
    for (std::size_t p = 0; p < 2 * kSide; ++p) mask[p] = 1;
    return mask;
}

StubOracle stub(const std::string& kind, std::vector<std::uint8_t> mask) {
    StubSpec spec;
    spec.mask_height = kSide;
    spec.mask_width = kSide;
    spec.mask = std::move(mask);
    return StubOracle(make_stub(kind, spec).stub);
}

AttributionMap aligned_map(const std::vector<std::uint8_t>& mask) {
    std::vector<double> v(mask.size());
    for (std::size_t p = 0; p < v.size(); ++p) v[p] = mask[p] ? 1.0 : 0.0;
    return normalize_map(make_map(kSide, kSide, v));
}

MetricSpec spec_of(MetricKind kind, double step) {
    MetricSpec s;
    s.kind = kind;
    s.step_fraction = step;
    return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("trapezoid") {
    CHECK(make_curve({{0, 1}, {0.5, 0.5}, {1, 0}}).auc == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(make_curve({{0, 1}, {1, 1}}).auc == 1.0);
    CHECK_THROWS_AS(make_curve({{0, 1}}), ValidationError);
    CHECK_THROWS_AS(make_curve({{0.1, 1}, {1, 0}}), ValidationError);
    CHECK_THROWS_AS(make_curve({{0, 1}, {0.5, 1}, {0.5, 1}, {1, 0}}), ValidationError);
}

TEST_CASE("pixel schedule") {
    CHECK(pixel_schedule(4, 0.25) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(pixel_schedule(10, 0.3) == std::vector<std::size_t>{0, 3, 6, 9, 10});
    CHECK(pixel_schedule(3, 0.01) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(pixel_schedule(5, 1.0) == std::vector<std::size_t>{0, 5});
}

TEST_CASE("designated-pixel deletion fixture") {
    const auto mask = designated_mask();
    const auto oracle = stub("fraction_remaining", mask);
    auto rng = sf_test::rng_for(51);
    const auto image = sf_test::random_image(rng, 3, kSide, kSide);
    const auto curve = deletion_curve(image, aligned_map(mask), oracle, spec_of(MetricKind::Deletion, 0.25));
    REQUIRE(curve.points.size() == 5);
    const double want[] = {1, 0, 0, 0, 0};
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(curve.points[i].fraction == doctest::Approx(0.25 * i));
        CHECK(curve.points[i].score == want[i]);
    }
    CHECK(std::abs(curve.auc - 0.125) <= 1e-12);

    const auto ins = insertion_curve(image, aligned_map(mask), oracle, spec_of(MetricKind::Insertion, 0.25));
    CHECK(std::abs(ins.auc - 0.875) <= 1e-12);
}

TEST_CASE("constant oracles") {
    auto rng = sf_test::rng_for(52);
    const auto image = sf_test::random_image(rng, 1, kSide, kSide);
    const auto map = sf_test::random_map(rng, kSide, kSide);
    const StubOracle one(make_stub("constant", StubSpec{"constant", 1.0}).stub);
    const StubOracle zero(make_stub("constant", StubSpec{"constant", 0.0}).stub);
    CHECK(deletion_curve(image, map, one, spec_of(MetricKind::Deletion, 0.1)).auc == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(insertion_curve(image, map, zero, spec_of(MetricKind::Insertion, 0.1)).auc == 0.0);
    auto raw = spec_of(MetricKind::Insertion, 0.1);
    raw.score_mode = ScoreMode::Probability;
    CHECK(insertion_curve(image, map, zero, raw).auc == 0.0);
    CHECK(irof_score(image, map, one, spec_of(MetricKind::Irof, 0.1)) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("aligned and reversed maps bracket random orders") {
    const auto mask = designated_mask();
    const auto oracle = stub("fraction_remaining", mask);
    auto rng = sf_test::rng_for(53);
    const auto image = sf_test::random_image(rng, 3, kSide, kSide);
    const auto aligned = aligned_map(mask);
    std::vector<double> anti(aligned.scores.size());
    for (std::size_t p = 0; p < anti.size(); ++p) anti[p] = 1.0 - aligned.scores[p];
    const auto reversed = normalize_map(make_map(kSide, kSide, anti));
    const auto spec = spec_of(MetricKind::Insertion, 0.05);
    const double hi = insertion_curve(image, aligned, oracle, spec).auc;
    const double lo = insertion_curve(image, reversed, oracle, spec).auc;
    for (int trial = 0; trial < 20; ++trial) {
        const double mid = insertion_curve(image, sf_test::random_map(rng, kSide, kSide), oracle, spec).auc;
        CHECK(lo <= mid);
        CHECK(mid <= hi);
    }
    // Monotone sensitivity.
    CHECK(hi > lo);
    const auto del = spec_of(MetricKind::Deletion, 0.05);
    CHECK(deletion_curve(image, aligned, oracle, del).auc < deletion_curve(image, reversed, oracle, del).auc);
}

TEST_CASE("insertion/deletion duality under fraction_remaining") {
    auto rng = sf_test::rng_for(54);
    std::bernoulli_distribution coin(0.3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::uint8_t> mask(kSide * kSide);
        for (auto& m : mask) m = coin(rng);
        mask[static_cast<std::size_t>(trial) % mask.size()] = 1;
        const auto oracle = stub("fraction_remaining", mask);
        const auto image = sf_test::random_image(rng, 3, kSide, kSide);
        const auto map = sf_test::random_map(rng, kSide, kSide);
        const double step = trial % 2 ? 0.01 : 0.1;
        const double iauc = insertion_curve(image, map, oracle, spec_of(MetricKind::Insertion, step)).auc;
        const double dauc = deletion_curve(image, map, oracle, spec_of(MetricKind::Deletion, step)).auc;
        CHECK(std::abs(iauc + dauc - 1.0) <= step);
        CHECK(iauc >= 0.0);
        CHECK(iauc <= 1.0);
        CHECK(dauc >= 0.0);
        CHECK(dauc <= 1.0);
    }
}

TEST_CASE("metrics do not touch their inputs") {
    auto rng = sf_test::rng_for(55);
    const auto image = sf_test::random_image(rng, 3, kSide, kSide);
    const auto map = sf_test::random_map(rng, kSide, kSide);
    const auto image_copy = image;
    const auto map_copy = map;
    const auto oracle = stub("fraction_remaining", designated_mask());
    (void)deletion_curve(image, map, oracle, spec_of(MetricKind::Deletion, 0.1));
    (void)insertion_curve(image, map, oracle, spec_of(MetricKind::Insertion, 0.1));
    (void)irof(image, map, oracle, spec_of(MetricKind::Irof, 0.1));
    CHECK(image.data == image_copy.data);
    CHECK(map.scores == map_copy.scores);
}

TEST_CASE("IROF with a segment-counting oracle is linear") {
    auto rng = sf_test::rng_for(56);
    for (int trial = 0; trial < 10; ++trial) {
        const auto image = sf_test::random_image(rng, 3, 12, 12);
        const auto seg = slic(image, 4 + trial);
        // Score = fraction of segments with no baselined pixel.
        const FunctionOracle counting([&seg](const ImageTensor& img, int) {
            std::vector<bool> hit(static_cast<std::size_t>(seg.n_segments), false);
            for (std::size_t p = 0; p < img.pixel_count(); ++p) {
                bool black = true;
                for (std::size_t c = 0; c < img.channels; ++c) black = black && img.data[c * img.pixel_count() + p] == 0.0;
                if (black) hit[static_cast<std::size_t>(seg.labels[p])] = true;
            }
            return 1.0 - static_cast<double>(std::count(hit.begin(), hit.end(), true)) / seg.n_segments;
        });
        const auto result = irof_with_segmentation(image, sf_test::random_map(rng, 12, 12), counting,
                                                   spec_of(MetricKind::Irof, 0.1), seg);
        CHECK(result.curve.points.size() == static_cast<std::size_t>(seg.n_segments) + 1);
        CHECK(std::abs(result.curve.auc - 0.5) <= 1e-12);
        CHECK(std::abs(result.aoc - 0.5) <= 1e-12);
    }
}

TEST_CASE("IROF ranks a critical segment") {
    auto rng = sf_test::rng_for(57);
    const auto image = sf_test::random_image(rng, 3, kSide, kSide);
    const auto seg = slic(image, 6);
    REQUIRE(seg.n_segments >= 2);
    std::vector<std::uint8_t> critical(kSide * kSide, 0);
    for (std::size_t p = 0; p < critical.size(); ++p) critical[p] = seg.labels[p] == 0;
    const auto oracle = stub("segment_critical", critical);

    std::vector<double> first(critical.size()), last(critical.size());
    for (std::size_t p = 0; p < critical.size(); ++p) {
        first[p] = critical[p] ? 1.0 : 0.5;
        last[p] = critical[p] ? 0.0 : 0.5;
    }
    const auto spec = spec_of(MetricKind::Irof, 0.1);
    const double k = seg.n_segments;
    const auto a = irof_with_segmentation(image, normalize_map(make_map(kSide, kSide, first)), oracle, spec, seg);
    const auto b = irof_with_segmentation(image, normalize_map(make_map(kSide, kSide, last)), oracle, spec, seg);
    // Ranked first: the curve drops to 0 after one step, AUC = 1/(2K).
    CHECK(a.aoc == doctest::Approx(1.0 - 1.0 / (2.0 * k)).epsilon(1e-12));
    // Ranked last: 1 until the final step, AUC = (K-1)/K + 1/(2K).
    CHECK(b.aoc == doctest::Approx(1.0 - ((k - 1.0) / k + 1.0 / (2.0 * k))).epsilon(1e-12));
    CHECK(a.aoc > b.aoc);
}

TEST_CASE("normalized scores divide by the unperturbed score") {
    auto rng = sf_test::rng_for(58);
    const auto image = sf_test::random_image(rng, 1, 4, 4);
    const auto map = sf_test::random_map(rng, 4, 4);
    const StubOracle half(make_stub("constant", StubSpec{"constant", 0.5}).stub);
    CHECK(deletion_curve(image, map, half, spec_of(MetricKind::Deletion, 0.25)).auc == 1.0);
    auto raw = spec_of(MetricKind::Deletion, 0.25);
    raw.score_mode = ScoreMode::Probability;
    CHECK(deletion_curve(image, map, half, raw).auc == 0.5);
}

TEST_CASE("baselines") {
    auto rng = sf_test::rng_for(59);
    const auto image = sf_test::random_image(rng, 3, 2, 2);
    MetricSpec s;
    s.baseline = BaselineKind::DatasetMean;
    s.dataset_mean = {0.1, 0.2, 0.3};
    const auto canvas = baseline_image(image, s);
    CHECK(canvas.at(0, 1, 1) == 0.1);
    CHECK(canvas.at(2, 0, 0) == 0.3);
    s.dataset_mean = {0.5};
    CHECK_THROWS_AS(baseline_image(image, s), ValidationError);

    s.baseline = BaselineKind::UniformNoise;
    s.noise_seed = RngSeed{3};
    CHECK(baseline_image(image, s).data == baseline_image(image, s).data);
    s.baseline = BaselineKind::Black;
    for (double v : baseline_image(image, s).data) CHECK(v == 0.0);
}

TEST_CASE("perturbation stages are batched") {
    auto rng = sf_test::rng_for(60);
    const auto image = sf_test::random_image(rng, 1, 10, 10);
    const auto map = sf_test::random_map(rng, 10, 10);
    const StubOracle oracle(make_stub("constant", StubSpec{"constant", 0.5}).stub, 32);
    (void)deletion_curve(image, map, oracle, spec_of(MetricKind::Deletion, 0.01));
    CHECK(oracle.request_count() == 4);  // 101 stages in chunks of 32
}

TEST_CASE("evaluate_batch arithmetic and invariance") {
    auto rng = sf_test::rng_for(61);
    // Probability-mode deletion under a constant oracle returns that constant.
    const FunctionOracle by_label([](const ImageTensor& img, int) { return img.label / 10.0; });
    auto raw = spec_of(MetricKind::Deletion, 0.25);
    raw.score_mode = ScoreMode::Probability;

    std::vector<EvaluationItem> items;
    for (int label : {2, 4}) {
        auto image = sf_test::random_image(rng, 1, 4, 4);
        image.label = label;
        items.push_back({"img" + std::to_string(label), image, {{"m", sf_test::random_map(rng, 4, 4)}}});
    }
    const auto single = evaluate_batch({items[0]}, by_label, {raw});
    REQUIRE(single.rows.size() == 1);
    CHECK(single.rows[0].mean == doctest::Approx(0.2).epsilon(1e-14));
    CHECK(single.rows[0].std == 0.0);
    CHECK(single.rows[0].n == 1);

    const auto both = evaluate_batch(items, by_label, {raw});
    CHECK(both.rows[0].mean == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(both.rows[0].std == doctest::Approx(0.1).epsilon(1e-12));

    auto shuffled = items;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto again = evaluate_batch(shuffled, by_label, {raw});
    CHECK(again.rows[0].mean == both.rows[0].mean);
    CHECK(again.rows[0].std == both.rows[0].std);
}

TEST_CASE("evaluate_batch rows, workers and failures") {
    auto rng = sf_test::rng_for(62);
    const auto oracle = stub("fraction_remaining", designated_mask());
    std::vector<EvaluationItem> items;
    for (int i = 0; i < 6; ++i) {
        items.push_back({"img" + std::to_string(i), sf_test::random_image(rng, 3, kSide, kSide),
                         {{"a", sf_test::random_map(rng, kSide, kSide)}, {"b", sf_test::random_map(rng, kSide, kSide)}}});
    }
    const std::vector<MetricSpec> specs{spec_of(MetricKind::Insertion, 0.1), spec_of(MetricKind::Deletion, 0.1),
                                        spec_of(MetricKind::Irof, 0.1)};
    const auto serial = evaluate_batch(items, oracle, specs, RngSeed{1}, 1);
    const auto parallel = evaluate_batch(items, oracle, specs, RngSeed{1}, 3);
    REQUIRE(serial.rows.size() == 6);
    CHECK(serial.rows[0].method == "a");
    CHECK(serial.rows[0].metric == MetricKind::Insertion);
    CHECK(serial.rows[2].metric == MetricKind::Irof);
    for (std::size_t r = 0; r < serial.rows.size(); ++r) {
        CHECK(serial.rows[r].mean == parallel.rows[r].mean);
        CHECK(serial.rows[r].std == parallel.rows[r].std);
        CHECK_FALSE(serial.rows[r].incomplete);
        CHECK(serial.rows[r].mean >= 0.0);
        CHECK(serial.rows[r].mean <= 1.0);
    }

    const FunctionOracle flaky([](const ImageTensor& img, int) -> double {
        if (img.label == 1) throw OracleUnavailableError("down");
        return 0.5;
    });
    items[1].image.label = 1;
    const auto partial = evaluate_batch(items, flaky, {spec_of(MetricKind::Deletion, 0.1)});
    CHECK(partial.rows[0].incomplete);
    CHECK(partial.rows[0].n == 5);
    const auto failed = std::count_if(partial.records.begin(), partial.records.end(),
                                      [](const ImageMetricRecord& r) { return !r.value; });
    CHECK(failed == 2);
}

TEST_CASE("names and validation") {
    CHECK(parse_metric_kind("irof") == MetricKind::Irof);
    CHECK(parse_baseline_kind("dataset_mean") == BaselineKind::DatasetMean);
    CHECK(parse_score_mode("probability") == ScoreMode::Probability);
    CHECK_THROWS_AS(parse_metric_kind("roar"), ValidationError);
    CHECK(strictly_better(MetricKind::Deletion, 0.1, 0.2));
    CHECK(strictly_better(MetricKind::Insertion, 0.3, 0.2));
    CHECK_FALSE(strictly_better(MetricKind::Irof, 0.2, 0.2));
    MetricSpec bad;
    bad.step_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    auto rng = sf_test::rng_for(63);
    const auto image = sf_test::random_image(rng, 1, 4, 4);
    const StubOracle one(make_stub("constant", StubSpec{"constant", 1.0}).stub);
    CHECK_THROWS_AS(deletion_curve(image, sf_test::random_map(rng, 3, 4), one, MetricSpec{}), ValidationError);
}

}  // TEST_SUITE
