#pragma once
// Mean, variance and RBM aggregation of attribution stacks, and the two
// policies that resolve the RBM's complement ambiguity.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "saliency_forge/core.hpp"
#include "saliency_forge/metrics.hpp"
#include "saliency_forge/oracle.hpp"
#include "saliency_forge/rbm.hpp"

namespace saliency_forge {

enum class EnsembleMethod { Mean, Variance, Rbm };
enum class FlipPolicy { FlipDetection, MetricOptimization, None };

std::string_view to_string(EnsembleMethod method);
std::string_view to_string(FlipPolicy policy);
EnsembleMethod parse_ensemble_method(std::string_view text);
FlipPolicy parse_flip_policy(std::string_view text);

struct EnsembleConfig {
    EnsembleMethod method = EnsembleMethod::Rbm;
    double epsilon = 1e-6;
    TrainConfig rbm_train{};
    FlipPolicy flip_policy = FlipPolicy::FlipDetection;
    double flip_fraction = 0.05;
    bool include_original_image = false;
    // Metric used by FlipPolicy::MetricOptimization.
    MetricSpec flip_metric{};

    void validate() const;
};

// Overlap counts between candidate and reference top/bottom slices.
struct FlipStatistic {
    std::size_t slice = 0;     // ⌈fraction·H·W⌉
    std::size_t agree = 0;     // |T_c ∩ T_r| + |B_c ∩ B_r|
    std::size_t disagree = 0;  // |T_c ∩ B_r| + |B_c ∩ T_r|
};

struct EnsembleDiagnostics {
    std::string method;
    std::size_t n_maps = 0;
    std::string flip_policy;
    std::size_t training_iterations = 0;
    std::size_t training_updates = 0;
    double reconstruction_error = 0.0;
    std::optional<FlipStatistic> flip_statistic;
    std::optional<double> metric_unflipped;
    std::optional<double> metric_flipped;
    bool metric_tie = false;
};

struct AggregatedMap {
    AttributionMap map;  // normalized, source = method name
    bool flipped = false;
    EnsembleDiagnostics diagnostics;
};

AggregatedMap mean_ensemble(const AttributionStack& stack);
AggregatedMap variance_ensemble(const AttributionStack& stack, double epsilon);

FlipStatistic flip_statistic(const AttributionMap& candidate, const AttributionMap& reference,
                             double fraction);
// True when the candidate's extreme slices disagree with the reference more than they agree.
bool flip_detect(const AttributionMap& candidate, const AttributionMap& reference, double fraction);

// 1 − value on a normalized map.
AttributionMap apply_flip(const AttributionMap& map);

// Keeps map or apply_flip(map), whichever scores better; ties keep the map.
AggregatedMap metric_optimize_flip(const AttributionMap& map, const ImageTensor& image,
                                   const Oracle& oracle, const MetricSpec& spec,
                                   RngSeed seed = {});

// One row per pixel, one column per map (H·W × N).
SampleMatrix stack_samples(const AttributionStack& stack);

// Sorts maps by source tag, then by content, so the RBM input does not depend
// on the order maps were supplied in.
AttributionStack canonical_map_order(const AttributionStack& stack);

// Appends the channel-reduced, normalized image as one more baseline map.
AttributionStack with_original_image(const AttributionStack& stack);

// Normalized per-pixel hidden posterior of a trained m = 1 RBM, in the
// canonical orientation of canonical_orientation().
AttributionMap rbm_posterior_map(const AttributionStack& stack, const RbmParams& params);

// Posterior map of `params`, then the configured flip policy, then normalize.
// `oracle` is required for FlipPolicy::MetricOptimization.
AggregatedMap aggregate_with_params(const AttributionStack& stack, const RbmParams& params,
                                    const EnsembleConfig& config, const Oracle* oracle = nullptr,
                                    RngSeed metric_seed = {});

AggregatedMap rbm_aggregate(const AttributionStack& stack, const EnsembleConfig& config,
                            const Oracle* oracle = nullptr);

// Dispatches on config.method; handles include_original_image.
AggregatedMap aggregate(const AttributionStack& stack, const EnsembleConfig& config,
                        const Oracle* oracle = nullptr);

}  // namespace saliency_forge
