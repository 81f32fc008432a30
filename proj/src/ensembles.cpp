#include "saliency_forge/ensembles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "saliency_forge/errors.hpp"

namespace saliency_forge {

namespace {

void require_normalized(const AttributionStack& stack) {
    stack.validate_for_ensemble();
    for (std::size_t n = 0; n < stack.maps.size(); ++n) {
        if (!stack.maps[n].normalized) {
            throw ValidationError("ensemble input map " + std::to_string(n) + " (" +
                                  stack.maps[n].source + ") is not normalized");
        }
    }
}

AttributionMap finish(std::vector<double> raw, std::size_t h, std::size_t w, std::string source) {
    return normalize_map(AttributionMap{h, w, std::move(raw), std::move(source), false});
}

std::vector<std::size_t> ascending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    return order;
}

}  // namespace

std::string_view to_string(EnsembleMethod method) {
    switch (method) {
        case EnsembleMethod::Mean: return "mean";
        case EnsembleMethod::Variance: return "variance";
        case EnsembleMethod::Rbm: return "rbm";
    }
    return "rbm";
}

std::string_view to_string(FlipPolicy policy) {
    switch (policy) {
        case FlipPolicy::FlipDetection: return "flip_detection";
        case FlipPolicy::MetricOptimization: return "metric_optimization";
        case FlipPolicy::None: return "none";
    }
    return "none";
}

EnsembleMethod parse_ensemble_method(std::string_view text) {
    if (text == "mean") return EnsembleMethod::Mean;
    if (text == "variance") return EnsembleMethod::Variance;
    if (text == "rbm") return EnsembleMethod::Rbm;
    throw ValidationError("unknown ensemble method '" + std::string(text) + "' (mean, variance, rbm)");
}

FlipPolicy parse_flip_policy(std::string_view text) {
    if (text == "flip_detection") return FlipPolicy::FlipDetection;
    if (text == "metric_optimization") return FlipPolicy::MetricOptimization;
    if (text == "none") return FlipPolicy::None;
    throw ValidationError("unknown flip policy '" + std::string(text) +
                          "' (flip_detection, metric_optimization, none)");
}

void EnsembleConfig::validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ValidationError("ensemble config: epsilon must be positive");
    }
    if (!(flip_fraction > 0.0) || flip_fraction > 0.5) {
        throw ValidationError("ensemble config: flip_fraction must lie in (0, 0.5]");
    }
    rbm_train.validate();
    flip_metric.validate();
}

AggregatedMap mean_ensemble(const AttributionStack& stack) {
    require_normalized(stack);
    const std::size_t size = stack.maps.front().size();
    std::vector<double> raw(size, 0.0);
    for (const auto& m : stack.maps) {
        for (std::size_t p = 0; p < size; ++p) raw[p] += m.scores[p];
    }
    const auto n = static_cast<double>(stack.maps.size());
    for (double& v : raw) v /= n;

    AggregatedMap out;
    out.map = finish(std::move(raw), stack.height(), stack.width(), "mean");
    out.diagnostics.method = "mean";
    out.diagnostics.n_maps = stack.maps.size();
    out.diagnostics.flip_policy = "none";
    return out;
}

AggregatedMap variance_ensemble(const AttributionStack& stack, double epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw ValidationError("variance_ensemble: epsilon must be positive");
    }
    require_normalized(stack);
    const std::size_t size = stack.maps.front().size();
    const auto n = static_cast<double>(stack.maps.size());
    std::vector<double> raw(size);
    for (std::size_t p = 0; p < size; ++p) {
        double mean = 0.0;
        for (const auto& m : stack.maps) mean += m.scores[p];
        mean /= n;
        double ss = 0.0;
        for (const auto& m : stack.maps) ss += (m.scores[p] - mean) * (m.scores[p] - mean);
        raw[p] = mean / (std::sqrt(ss / n) + epsilon);
    }

    AggregatedMap out;
    out.map = finish(std::move(raw), stack.height(), stack.width(), "variance");
    out.diagnostics.method = "variance";
    out.diagnostics.n_maps = stack.maps.size();
    out.diagnostics.flip_policy = "none";
    return out;
}

FlipStatistic flip_statistic(const AttributionMap& candidate, const AttributionMap& reference,
                             double fraction) {
    if (!(fraction > 0.0) || fraction > 0.5) {
        throw ValidationError("flip_detect: fraction must lie in (0, 0.5]");
    }
    candidate.validate();
    reference.validate();
    if (candidate.height != reference.height || candidate.width != reference.width) {
        throw ValidationError("flip_detect: candidate and reference shapes differ");
    }
    const std::size_t size = candidate.size();
    const auto k = std::min<std::size_t>(
        size, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(size) - 1e-9)));

    // Membership codes: bit 0 = top slice, bit 1 = bottom slice.
    auto slices = [&](const std::vector<double>& scores) {
        std::vector<unsigned char> code(size, 0);
        const auto top = descending_order(scores);
        const auto bottom = ascending_order(scores);
        for (std::size_t i = 0; i < k; ++i) {
            code[top[i]] |= 1U;
            code[bottom[i]] |= 2U;
        }
        return code;
    };
    const auto c = slices(candidate.scores);
    const auto r = slices(reference.scores);

    FlipStatistic stat;
    stat.slice = k;
    for (std::size_t p = 0; p < size; ++p) {
        const bool ct = c[p] & 1U, cb = c[p] & 2U, rt = r[p] & 1U, rb = r[p] & 2U;
        stat.agree += static_cast<std::size_t>(ct && rt) + static_cast<std::size_t>(cb && rb);
        stat.disagree += static_cast<std::size_t>(ct && rb) + static_cast<std::size_t>(cb && rt);
    }
    return stat;
}

bool flip_detect(const AttributionMap& candidate, const AttributionMap& reference, double fraction) {
    const auto stat = flip_statistic(candidate, reference, fraction);
    return stat.disagree > stat.agree;
}

AttributionMap apply_flip(const AttributionMap& map) {
    map.validate();
    if (!map.normalized) throw ValidationError("apply_flip: map is not normalized");
    AttributionMap out = map;
    for (double& v : out.scores) v = 1.0 - v;
    return out;
}

AggregatedMap metric_optimize_flip(const AttributionMap& map, const ImageTensor& image,
                                   const Oracle& oracle, const MetricSpec& spec, RngSeed seed) {
    const AttributionMap flipped = apply_flip(map);
    double original_value = 0.0;
    double flipped_value = 0.0;
    try {
        original_value = evaluate_metric(image, map, oracle, spec, seed).value;
        flipped_value = evaluate_metric(image, flipped, oracle, spec, seed).value;
    } catch (const OracleUnavailableError& e) {
        throw OracleUnavailableError(std::string("metric optimization (") +
                                     std::string(to_string(spec.kind)) + "): " + e.what());
    } catch (const ProtocolError& e) {
        throw ProtocolError(std::string("metric optimization (") +
                            std::string(to_string(spec.kind)) + "): " + e.what());
    }

    AggregatedMap out;
    out.flipped = strictly_better(spec.kind, flipped_value, original_value);
    out.map = normalize_map(out.flipped ? flipped : map);
    out.diagnostics.flip_policy = "metric_optimization";
    out.diagnostics.metric_unflipped = original_value;
    out.diagnostics.metric_flipped = flipped_value;
    out.diagnostics.metric_tie = original_value == flipped_value;
    return out;
}

SampleMatrix stack_samples(const AttributionStack& stack) {
    stack.validate();
    const auto rows = static_cast<Eigen::Index>(stack.maps.front().size());
    const auto cols = static_cast<Eigen::Index>(stack.maps.size());
    SampleMatrix samples(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        const auto& scores = stack.maps[static_cast<std::size_t>(c)].scores;
        for (Eigen::Index r = 0; r < rows; ++r) samples(r, c) = scores[static_cast<std::size_t>(r)];
    }
    return samples;
}

AttributionStack canonical_map_order(const AttributionStack& stack) {
    AttributionStack out = stack;
    std::stable_sort(out.maps.begin(), out.maps.end(), [](const auto& a, const auto& b) {
        if (a.source != b.source) return a.source < b.source;
        return a.scores < b.scores;
    });
    return out;
}

AttributionStack with_original_image(const AttributionStack& stack) {
    if (!stack.image) {
        throw ValidationError("include_original_image requested but stack '" + stack.id +
                              "' has no image");
    }
    AttributionStack out = stack;
    out.maps.push_back(image_as_map(*stack.image));
    out.validate();
    return out;
}

AttributionMap rbm_posterior_map(const AttributionStack& stack, const RbmParams& params) {
    if (params.n_hidden() != 1) throw ValidationError("rbm aggregation uses exactly one hidden unit");
    const auto samples = stack_samples(stack);
    if (samples.cols() != params.n_visible()) {
        throw ValidationError("rbm params have " + std::to_string(params.n_visible()) +
                              " visible units for a stack of " + std::to_string(samples.cols()));
    }
    const RbmParams oriented = canonical_orientation(params);
    const Eigen::MatrixXd posterior = hidden_posterior_rows(oriented, samples);
    std::vector<double> raw(static_cast<std::size_t>(posterior.rows()));
    for (Eigen::Index r = 0; r < posterior.rows(); ++r) raw[static_cast<std::size_t>(r)] = posterior(r, 0);
    return finish(std::move(raw), stack.height(), stack.width(), "rbm");
}

AggregatedMap aggregate_with_params(const AttributionStack& stack, const RbmParams& params,
                                    const EnsembleConfig& config, const Oracle* oracle,
                                    RngSeed metric_seed) {
    config.validate();
    require_normalized(stack);
    const AttributionMap posterior = rbm_posterior_map(stack, params);

    AggregatedMap out;
    switch (config.flip_policy) {
        case FlipPolicy::None:
            out.map = posterior;
            out.diagnostics.flip_policy = "none";
            break;
        case FlipPolicy::FlipDetection: {
            const auto reference = mean_ensemble(stack).map;
            const auto stat = flip_statistic(posterior, reference, config.flip_fraction);
            out.flipped = stat.disagree > stat.agree;
            out.map = normalize_map(out.flipped ? apply_flip(posterior) : posterior);
            out.diagnostics.flip_policy = "flip_detection";
            out.diagnostics.flip_statistic = stat;
            break;
        }
        case FlipPolicy::MetricOptimization: {
            if (oracle == nullptr) {
                throw ValidationError("metric_optimization flip policy needs an oracle");
            }
            if (!stack.image) {
                throw ValidationError("metric_optimization flip policy needs the stack's image");
            }
            out = metric_optimize_flip(posterior, *stack.image, *oracle, config.flip_metric,
                                       metric_seed);
            break;
        }
    }
    out.map.source = "rbm";
    out.diagnostics.method = "rbm";
    out.diagnostics.n_maps = stack.maps.size();
    return out;
}

AggregatedMap rbm_aggregate(const AttributionStack& stack, const EnsembleConfig& config,
                            const Oracle* oracle) {
    config.validate();
    require_normalized(stack);
    const AttributionStack ordered = canonical_map_order(stack);
    TrainReport report;
    const RbmParams params = train_cd(stack_samples(ordered), config.rbm_train, 1, &report);
    auto out = aggregate_with_params(ordered, params, config, oracle, config.rbm_train.seed);
    out.diagnostics.training_iterations = report.iterations;
    out.diagnostics.training_updates = report.updates;
    out.diagnostics.reconstruction_error = report.reconstruction_error;
    return out;
}

AggregatedMap aggregate(const AttributionStack& stack, const EnsembleConfig& config,
                        const Oracle* oracle) {
    config.validate();
    const AttributionStack input = config.include_original_image ? with_original_image(stack) : stack;
    switch (config.method) {
        case EnsembleMethod::Mean: return mean_ensemble(input);
        case EnsembleMethod::Variance: return variance_ensemble(input, config.epsilon);
        case EnsembleMethod::Rbm: return rbm_aggregate(input, config, oracle);
    }
    throw ValidationError("aggregate: unknown method");
}

}  // namespace saliency_forge
