#pragma once
// Resolved parameters of one CLI run. Precedence, lowest first: built-in
// defaults, the RBM preset, the JSON config file, command-line flags.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "saliency_forge/ensembles.hpp"
#include "saliency_forge/metrics.hpp"
#include "saliency_forge/oracle.hpp"

namespace saliency_forge {

inline constexpr const char* kSeedEnvironmentVariable = "SALIENCY_FORGE_SEED";
inline constexpr std::size_t kDefaultNoiseMaps = 15;

struct RunConfig {
    std::uint64_t seed = 0;
    std::string seed_source = "default";  // flag | config | environment | default
    std::size_t workers = 1;
    std::filesystem::path manifest;
    std::filesystem::path out;

    // ensemble
    std::vector<EnsembleMethod> methods{EnsembleMethod::Mean, EnsembleMethod::Variance,
                                        EnsembleMethod::Rbm};
    std::string preset = "cifar";
    EnsembleConfig ensemble{};
    std::size_t add_noise = 0;
    bool keep_inputs = true;
    MetricKind flip_metric = MetricKind::Deletion;

    // metrics
    std::vector<MetricKind> metric_kinds{MetricKind::Insertion, MetricKind::Deletion,
                                         MetricKind::Irof};
    MetricSpec metric{};  // shared parameters; kind is overwritten per entry

    // oracle
    std::string oracle_url;
    std::string oracle_stub;  // e.g. "constant:0.7"; used when oracle_url is empty
    std::size_t timeout_ms = 30000;
    std::size_t max_batch = 32;

    // outputs
    bool dump_curves = false;
    bool plots = false;
    bool csv = false;

    std::vector<MetricSpec> metric_specs() const;
    MetricSpec flip_metric_spec() const;
    // EnsembleConfig for one method and one image seed.
    EnsembleConfig ensemble_for(EnsembleMethod method, RngSeed image_seed) const;
    void validate() const;
};

// Applies the keys present in `doc` on top of `config`. The preset (the
// override when given, else the document's, else config.preset) replaces the
// RBM training parameters before any explicit "ensemble.rbm" keys apply.
void apply_config_document(RunConfig& config, const nlohmann::json& doc,
                           const std::optional<std::string>& preset_override = std::nullopt);
nlohmann::json load_config_document(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& config);

// Seed fallback: SALIENCY_FORGE_SEED when neither flag nor config set one.
void apply_seed_environment(RunConfig& config);

// Parses "constant:0.7", "fraction_remaining:mask.npy[:baseline]",
// "segment_critical:mask.npy".
OracleEndpoint parse_stub_spec(const std::string& text);
OracleEndpoint resolve_endpoint(const RunConfig& config);

// Stable per-image stream derived from the run seed and the image id.
RngSeed image_seed(std::uint64_t run_seed, const std::string& image_id);

}  // namespace saliency_forge
