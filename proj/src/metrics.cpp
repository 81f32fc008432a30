#include "saliency_forge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/parallel.hpp"

namespace saliency_forge {

namespace {

void require_alignment(const ImageTensor& image, const AttributionMap& map) {
    if (image.height == 0 || image.width == 0 || image.data.empty()) {
        throw ValidationError("metric: empty image");
    }
    image.validate();
    map.validate();
    if (map.height != image.height || map.width != image.width) {
        throw ValidationError("metric: map is " + std::to_string(map.height) + "x" +
                              std::to_string(map.width) + " but image is " +
                              std::to_string(image.height) + "x" + std::to_string(image.width));
    }
}

void copy_pixel(const ImageTensor& from, ImageTensor& to, std::size_t pixel) {
    const std::size_t plane = from.pixel_count();
    for (std::size_t c = 0; c < from.channels; ++c) to.data[c * plane + pixel] = from.data[c * plane + pixel];
}

// Scores successive stages produced by `advance(stage_image, stage_index)`,
// never holding more than one oracle request worth of images.
template <typename Advance>
std::vector<double> score_stages(const ImageTensor& start, std::size_t stages, int label,
                                 const Oracle& oracle, Advance advance) {
    std::vector<double> scores;
    scores.reserve(stages);
    ImageTensor current = start;
    std::vector<ImageTensor> chunk;
    for (std::size_t s = 0; s < stages; ++s) {
        advance(current, s);
        chunk.push_back(current);
        if (chunk.size() == oracle.max_batch() || s + 1 == stages) {
            const auto part = oracle.target_scores(chunk, label);
            scores.insert(scores.end(), part.begin(), part.end());
            chunk.clear();
        }
    }
    return scores;
}

std::vector<double> apply_score_mode(std::vector<double> scores, double base, ScoreMode mode) {
    for (double& s : scores) {
        if (mode == ScoreMode::NormalizedProbability) {
            s = base > 0.0 ? std::clamp(s / base, 0.0, 1.0) : 0.0;
        } else {
            s = std::clamp(s, 0.0, 1.0);
        }
    }
    return scores;
}

PerturbationCurve curve_from(const std::vector<double>& fractions, const std::vector<double>& scores) {
    std::vector<CurvePoint> points(fractions.size());
    for (std::size_t i = 0; i < fractions.size(); ++i) points[i] = {fractions[i], scores[i]};
    return make_curve(std::move(points));
}

}  // namespace

std::string_view to_string(MetricKind kind) {
    switch (kind) {
        case MetricKind::Insertion: return "insertion";
        case MetricKind::Deletion: return "deletion";
        case MetricKind::Irof: return "irof";
    }
    return "deletion";
}

std::string_view to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Black: return "black";
        case BaselineKind::DatasetMean: return "dataset_mean";
        case BaselineKind::UniformNoise: return "uniform_noise";
    }
    return "black";
}

std::string_view to_string(ScoreMode mode) {
    return mode == ScoreMode::Probability ? "probability" : "normalized_probability";
}

MetricKind parse_metric_kind(std::string_view text) {
    if (text == "insertion") return MetricKind::Insertion;
    if (text == "deletion") return MetricKind::Deletion;
    if (text == "irof") return MetricKind::Irof;
    throw ValidationError("unknown metric '" + std::string(text) + "' (insertion, deletion, irof)");
}

BaselineKind parse_baseline_kind(std::string_view text) {
    if (text == "black") return BaselineKind::Black;
    if (text == "dataset_mean") return BaselineKind::DatasetMean;
    if (text == "uniform_noise") return BaselineKind::UniformNoise;
    throw ValidationError("unknown baseline '" + std::string(text) +
                          "' (black, dataset_mean, uniform_noise)");
}

ScoreMode parse_score_mode(std::string_view text) {
    if (text == "probability") return ScoreMode::Probability;
    if (text == "normalized_probability") return ScoreMode::NormalizedProbability;
    throw ValidationError("unknown score mode '" + std::string(text) + "'");
}

void MetricSpec::validate() const {
    if (!(step_fraction > 0.0) || step_fraction > 1.0) {
        throw ValidationError("metric spec: step_fraction must lie in (0, 1]");
    }
    if (irof_segments < 1) throw ValidationError("metric spec: irof_segments must be >= 1");
    if (!(irof_compactness > 0.0)) throw ValidationError("metric spec: irof_compactness must be positive");
    for (double v : dataset_mean) {
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw ValidationError("metric spec: dataset_mean entries must lie in [0,1]");
        }
    }
}

double trapezoid_auc(const std::vector<CurvePoint>& points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += 0.5 * (points[i].score + points[i - 1].score) *
                (points[i].fraction - points[i - 1].fraction);
    }
    return area;
}

PerturbationCurve make_curve(std::vector<CurvePoint> points) {
    if (points.size() < 2) throw ValidationError("curve: need at least two points");
    if (points.front().fraction != 0.0 || points.back().fraction != 1.0) {
        throw ValidationError("curve: fractions must start at 0 and end at 1");
    }
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (!(points[i].fraction > points[i - 1].fraction)) {
            throw ValidationError("curve: fractions must be strictly increasing");
        }
    }
    for (const auto& p : points) {
        if (!std::isfinite(p.score)) throw ValidationError("curve: non-finite score");
    }
    PerturbationCurve curve;
    curve.auc = trapezoid_auc(points);
    curve.points = std::move(points);
    return curve;
}

ImageTensor baseline_image(const ImageTensor& image, const MetricSpec& spec) {
    ImageTensor canvas = image;
    const std::size_t plane = image.pixel_count();
    switch (spec.baseline) {
        case BaselineKind::Black:
            std::fill(canvas.data.begin(), canvas.data.end(), 0.0);
            break;
        case BaselineKind::DatasetMean:
            if (spec.dataset_mean.size() != image.channels) {
                throw ValidationError("dataset_mean baseline needs one value per channel (" +
                                      std::to_string(image.channels) + ")");
            }
            for (std::size_t c = 0; c < image.channels; ++c) {
                std::fill_n(canvas.data.begin() + static_cast<std::ptrdiff_t>(c * plane), plane,
                            spec.dataset_mean[c]);
            }
            break;
        case BaselineKind::UniformNoise: {
            std::mt19937_64 rng(spec.noise_seed.value);
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            for (double& v : canvas.data) v = unit(rng);
            break;
        }
    }
    return canvas;
}

std::vector<std::size_t> pixel_schedule(std::size_t pixel_count, double step_fraction) {
    if (pixel_count == 0) throw ValidationError("pixel_schedule: no pixels");
    if (!(step_fraction > 0.0) || step_fraction > 1.0) {
        throw ValidationError("pixel_schedule: step_fraction must lie in (0, 1]");
    }
    const auto steps = static_cast<std::size_t>(std::ceil(1.0 / step_fraction - 1e-9));
    std::vector<std::size_t> counts{0};
    for (std::size_t s = 1; s <= steps; ++s) {
        const auto c = std::min<std::size_t>(
            pixel_count, static_cast<std::size_t>(std::llround(static_cast<double>(s) * step_fraction *
                                                               static_cast<double>(pixel_count))));
        if (c > counts.back()) counts.push_back(c);
    }
    if (counts.back() != pixel_count) counts.push_back(pixel_count);
    return counts;
}

namespace {

PerturbationCurve pixel_curve(const ImageTensor& image, const AttributionMap& map,
                              const Oracle& oracle, const MetricSpec& spec, bool deletion) {
    require_alignment(image, map);
    spec.validate();
    const auto order = descending_order(map.scores);
    const auto schedule = pixel_schedule(image.pixel_count(), spec.step_fraction);
    const ImageTensor canvas = baseline_image(image, spec);
    const ImageTensor& start = deletion ? image : canvas;
    const ImageTensor& source = deletion ? canvas : image;

    auto advance = [&](ImageTensor& current, std::size_t stage) {
        if (stage == 0) return;
        for (std::size_t i = schedule[stage - 1]; i < schedule[stage]; ++i) {
            copy_pixel(source, current, order[i]);
        }
    };
    auto raw = score_stages(start, schedule.size(), image.label, oracle, advance);
    // The unperturbed image is the first deletion stage and the last insertion stage.
    const double base = deletion ? raw.front() : raw.back();
    const auto scores = apply_score_mode(std::move(raw), base, spec.score_mode);

    const auto total = static_cast<double>(image.pixel_count());
    std::vector<double> fractions;
    fractions.reserve(schedule.size());
    for (auto c : schedule) fractions.push_back(static_cast<double>(c) / total);
    fractions.back() = 1.0;
    return curve_from(fractions, scores);
}

}  // namespace

PerturbationCurve deletion_curve(const ImageTensor& image, const AttributionMap& map,
                                 const Oracle& oracle, const MetricSpec& spec) {
    return pixel_curve(image, map, oracle, spec, true);
}

PerturbationCurve insertion_curve(const ImageTensor& image, const AttributionMap& map,
                                  const Oracle& oracle, const MetricSpec& spec) {
    return pixel_curve(image, map, oracle, spec, false);
}

IrofResult irof_with_segmentation(const ImageTensor& image, const AttributionMap& map,
                                  const Oracle& oracle, const MetricSpec& spec,
                                  SuperpixelSegmentation segmentation) {
    require_alignment(image, map);
    spec.validate();
    if (segmentation.height != image.height || segmentation.width != image.width) {
        throw ValidationError("irof: segmentation shape differs from the image");
    }
    const auto relevance = segment_relevance(segmentation, map);
    const auto segment_order = descending_order(relevance);
    const std::size_t k = relevance.size();

    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t p = 0; p < segmentation.labels.size(); ++p) {
        members[static_cast<std::size_t>(segmentation.labels[p])].push_back(p);
    }
    const ImageTensor canvas = baseline_image(image, spec);
    auto advance = [&](ImageTensor& current, std::size_t stage) {
        if (stage == 0) return;
        for (std::size_t p : members[segment_order[stage - 1]]) copy_pixel(canvas, current, p);
    };
    auto raw = score_stages(image, k + 1, image.label, oracle, advance);
    const double base = raw.front();
    const auto scores = apply_score_mode(std::move(raw), base, spec.score_mode);

    std::vector<double> fractions(k + 1);
    for (std::size_t s = 0; s <= k; ++s) fractions[s] = static_cast<double>(s) / static_cast<double>(k);
    fractions.back() = 1.0;

    IrofResult result;
    result.curve = curve_from(fractions, scores);
    result.aoc = 1.0 - result.curve.auc;
    result.segmentation = std::move(segmentation);
    return result;
}

IrofResult irof(const ImageTensor& image, const AttributionMap& map, const Oracle& oracle,
                const MetricSpec& spec, RngSeed seed) {
    spec.validate();
    require_alignment(image, map);
    const std::size_t k = std::min(spec.irof_segments, image.pixel_count());
    auto segmentation = slic(image, k, spec.irof_compactness, seed);
    return irof_with_segmentation(image, map, oracle, spec, std::move(segmentation));
}

double irof_score(const ImageTensor& image, const AttributionMap& map, const Oracle& oracle,
                  const MetricSpec& spec, RngSeed seed) {
    return irof(image, map, oracle, spec, seed).aoc;
}

MetricValue evaluate_metric(const ImageTensor& image, const AttributionMap& map,
                            const Oracle& oracle, const MetricSpec& spec, RngSeed seed) {
    switch (spec.kind) {
        case MetricKind::Deletion: {
            auto curve = deletion_curve(image, map, oracle, spec);
            const double v = curve.auc;
            return {v, std::move(curve)};
        }
        case MetricKind::Insertion: {
            auto curve = insertion_curve(image, map, oracle, spec);
            const double v = curve.auc;
            return {v, std::move(curve)};
        }
        case MetricKind::Irof: {
            auto result = irof(image, map, oracle, spec, seed);
            return {result.aoc, std::move(result.curve)};
        }
    }
    throw ValidationError("evaluate_metric: unknown metric kind");
}

bool strictly_better(MetricKind kind, double candidate, double incumbent) {
    return kind == MetricKind::Deletion ? candidate < incumbent : candidate > incumbent;
}

std::pair<double, double> mean_and_std(const std::vector<double>& values) {
    if (values.empty()) return {0.0, 0.0};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / n)};
}

BatchReport evaluate_batch(const std::vector<EvaluationItem>& dataset, const Oracle& oracle,
                           const std::vector<MetricSpec>& specs, RngSeed seed,
                           std::size_t workers) {
    if (specs.empty()) throw ValidationError("evaluate_batch: no metrics requested");
    for (const auto& s : specs) s.validate();

    std::vector<std::vector<ImageMetricRecord>> per_item(dataset.size());
    parallel_for(dataset.size(), workers, [&](std::size_t i) {
        const auto& item = dataset[i];
        const RngSeed item_seed = derive_seed(seed, stable_hash(item.id));
        for (const auto& [method, map] : item.maps) {
            for (const auto& spec : specs) {
                ImageMetricRecord record{item.id, method, spec.kind, std::nullopt, {}, {}};
                MetricSpec local = spec;
                local.noise_seed = derive_seed(spec.noise_seed, stable_hash(item.id));
                try {
                    auto value = evaluate_metric(item.image, map, oracle, local, item_seed);
                    record.value = value.value;
                    record.curve = std::move(value.curve);
                } catch (const Error& e) {
                    record.error = e.what();
                }
                per_item[i].push_back(std::move(record));
            }
        }
    });

    BatchReport report;
    report.specs = specs;
    for (auto& records : per_item) {
        std::move(records.begin(), records.end(), std::back_inserter(report.records));
    }
    // Aggregate in id order so the report does not depend on dataset order.
    std::stable_sort(report.records.begin(), report.records.end(),
                     [](const auto& a, const auto& b) {
                         if (a.method != b.method) return a.method < b.method;
                         return a.id < b.id;
                     });

    std::vector<std::string> methods;
    for (const auto& r : report.records) {
        if (methods.empty() || methods.back() != r.method) methods.push_back(r.method);
    }
    for (const auto& method : methods) {
        for (const auto& spec : specs) {
            MetricSummary row{method, spec.kind, 0.0, 0.0, 0, false};
            std::vector<double> values;
            for (const auto& r : report.records) {
                if (r.method != method || r.metric != spec.kind) continue;
                if (r.value) values.push_back(*r.value);
                else row.incomplete = true;
            }
            std::tie(row.mean, row.std) = mean_and_std(values);
            row.n = values.size();
            report.rows.push_back(row);
        }
    }
    return report;
}

}  // namespace saliency_forge
