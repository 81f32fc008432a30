#pragma once
// Perturbation metrics: deletion AUC, insertion AUC and IROF (area over the
// superpixel-removal curve), plus batch aggregation into report rows.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "saliency_forge/core.hpp"
#include "saliency_forge/oracle.hpp"
#include "saliency_forge/superpixels.hpp"

namespace saliency_forge {

enum class MetricKind { Insertion, Deletion, Irof };
enum class BaselineKind { Black, DatasetMean, UniformNoise };
enum class ScoreMode { Probability, NormalizedProbability };

std::string_view to_string(MetricKind kind);
std::string_view to_string(BaselineKind kind);
std::string_view to_string(ScoreMode mode);
MetricKind parse_metric_kind(std::string_view text);
BaselineKind parse_baseline_kind(std::string_view text);
ScoreMode parse_score_mode(std::string_view text);

struct MetricSpec {
    MetricKind kind = MetricKind::Deletion;
    double step_fraction = 0.01;
    BaselineKind baseline = BaselineKind::Black;
    std::vector<double> dataset_mean;  // per channel, for BaselineKind::DatasetMean
    RngSeed noise_seed{};              // for BaselineKind::UniformNoise
    std::size_t irof_segments = kDefaultSlicSegments;
    double irof_compactness = kDefaultSlicCompactness;
    ScoreMode score_mode = ScoreMode::NormalizedProbability;

    void validate() const;
};

struct CurvePoint {
    double fraction = 0.0;
    double score = 0.0;
};

struct PerturbationCurve {
    std::vector<CurvePoint> points;
    double auc = 0.0;
};

double trapezoid_auc(const std::vector<CurvePoint>& points);

// Checks fractions run strictly upward from 0 to 1 and computes the AUC.
PerturbationCurve make_curve(std::vector<CurvePoint> points);

// The canvas that perturbed pixels are replaced with.
ImageTensor baseline_image(const ImageTensor& image, const MetricSpec& spec);

// Perturbed pixel counts per stage: 0 = c_0 < c_1 < ... < c_last = H·W.
std::vector<std::size_t> pixel_schedule(std::size_t pixel_count, double step_fraction);

// Lower is better.
PerturbationCurve deletion_curve(const ImageTensor& image, const AttributionMap& map,
                                 const Oracle& oracle, const MetricSpec& spec);
// Higher is better.
PerturbationCurve insertion_curve(const ImageTensor& image, const AttributionMap& map,
                                  const Oracle& oracle, const MetricSpec& spec);

struct IrofResult {
    PerturbationCurve curve;  // fraction of segments removed vs score
    double aoc = 0.0;         // 1 − AUC, higher is better
    SuperpixelSegmentation segmentation;
};

IrofResult irof(const ImageTensor& image, const AttributionMap& map, const Oracle& oracle,
                const MetricSpec& spec, RngSeed seed = {});
double irof_score(const ImageTensor& image, const AttributionMap& map, const Oracle& oracle,
                  const MetricSpec& spec, RngSeed seed = {});

// IROF using a precomputed segmentation.
IrofResult irof_with_segmentation(const ImageTensor& image, const AttributionMap& map,
                                  const Oracle& oracle, const MetricSpec& spec,
                                  SuperpixelSegmentation segmentation);

struct MetricValue {
    double value = 0.0;  // AUC for insertion/deletion, AOC for IROF
    PerturbationCurve curve;
};

MetricValue evaluate_metric(const ImageTensor& image, const AttributionMap& map,
                            const Oracle& oracle, const MetricSpec& spec, RngSeed seed = {});

// True when `candidate` is strictly better than `incumbent` for this metric.
bool strictly_better(MetricKind kind, double candidate, double incumbent);

struct EvaluationItem {
    std::string id;
    ImageTensor image;
    std::map<std::string, AttributionMap> maps;  // method → map
};

struct ImageMetricRecord {
    std::string id;
    std::string method;
    MetricKind metric = MetricKind::Deletion;
    std::optional<double> value;  // empty when the evaluation failed
    std::string error;
    PerturbationCurve curve;
};

struct MetricSummary {
    std::string method;
    MetricKind metric = MetricKind::Deletion;
    double mean = 0.0;
    double std = 0.0;  // population
    std::size_t n = 0;
    bool incomplete = false;
};

struct BatchReport {
    std::vector<MetricSummary> rows;       // ordered by method, then metric order in specs
    std::vector<ImageMetricRecord> records;
    std::vector<MetricSpec> specs;
};

// Per-method mean ± std of every metric. Failures are recorded, not thrown.
// `workers` > 1 evaluates images concurrently; results do not depend on it.
BatchReport evaluate_batch(const std::vector<EvaluationItem>& dataset, const Oracle& oracle,
                           const std::vector<MetricSpec>& specs, RngSeed seed = {},
                           std::size_t workers = 1);

// Population mean and standard deviation.
std::pair<double, double> mean_and_std(const std::vector<double>& values);

}  // namespace saliency_forge
