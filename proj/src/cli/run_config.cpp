#include "saliency_forge/run_config.hpp"

#include <cstdlib>
#include <set>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/io.hpp"
#include "saliency_forge/npy.hpp"

namespace saliency_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json& section, std::string_view where, std::set<std::string> known) {
    if (!section.is_object()) throw ValidationError("config: '" + std::string(where) + "' must be an object");
    for (const auto& [key, _] : section.items()) {
        if (!known.count(key)) {
            throw ValidationError("config: unknown key '" + std::string(where) + "." + key + "'");
        }
    }
}

template <typename T>
T get(const json& section, const char* key, std::string_view where) {
    try {
        return section.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config: bad value for '" + std::string(where) + "." + key + "'");
    }
}

template <typename T>
void set_if(const json& section, const char* key, std::string_view where, T& target) {
    if (section.contains(key)) target = get<T>(section, key, where);
}

void apply_rbm(TrainConfig& train, const json& rbm) {
    reject_unknown(rbm, "ensemble.rbm", {"learning_rate", "batch_size", "n_iterations", "cd_steps"});
    set_if(rbm, "learning_rate", "ensemble.rbm", train.learning_rate);
    set_if(rbm, "batch_size", "ensemble.rbm", train.batch_size);
    set_if(rbm, "n_iterations", "ensemble.rbm", train.n_iterations);
    set_if(rbm, "cd_steps", "ensemble.rbm", train.cd_steps);
}

void apply_ensemble(RunConfig& config, const json& e, const std::optional<std::string>& preset_override) {
    reject_unknown(e, "ensemble",
                   {"methods", "preset", "epsilon", "flip_policy", "flip_fraction", "flip_metric",
                    "include_original_image", "add_noise", "keep_inputs", "rbm"});
    if (e.contains("methods")) {
        config.methods.clear();
        for (const auto& m : get<std::vector<std::string>>(e, "methods", "ensemble")) {
            config.methods.push_back(parse_ensemble_method(m));
        }
    }
    set_if(e, "preset", "ensemble", config.preset);
    if (preset_override) config.preset = *preset_override;
    config.ensemble.rbm_train = train_preset(config.preset);
    if (e.contains("rbm")) apply_rbm(config.ensemble.rbm_train, e["rbm"]);

    set_if(e, "epsilon", "ensemble", config.ensemble.epsilon);
    if (e.contains("flip_policy")) {
        config.ensemble.flip_policy = parse_flip_policy(get<std::string>(e, "flip_policy", "ensemble"));
    }
    set_if(e, "flip_fraction", "ensemble", config.ensemble.flip_fraction);
    if (e.contains("flip_metric")) {
        config.flip_metric = parse_metric_kind(get<std::string>(e, "flip_metric", "ensemble"));
    }
    set_if(e, "include_original_image", "ensemble", config.ensemble.include_original_image);
    set_if(e, "add_noise", "ensemble", config.add_noise);
    set_if(e, "keep_inputs", "ensemble", config.keep_inputs);
}

void apply_metrics(RunConfig& config, const json& m) {
    reject_unknown(m, "metrics",
                   {"kinds", "step_fraction", "baseline", "dataset_mean", "noise_seed",
                    "irof_segments", "irof_compactness", "score_mode"});
    if (m.contains("kinds")) {
        config.metric_kinds.clear();
        for (const auto& k : get<std::vector<std::string>>(m, "kinds", "metrics")) {
            config.metric_kinds.push_back(parse_metric_kind(k));
        }
    }
    set_if(m, "step_fraction", "metrics", config.metric.step_fraction);
    if (m.contains("baseline")) {
        config.metric.baseline = parse_baseline_kind(get<std::string>(m, "baseline", "metrics"));
    }
    set_if(m, "dataset_mean", "metrics", config.metric.dataset_mean);
    if (m.contains("noise_seed")) config.metric.noise_seed = RngSeed{get<std::uint64_t>(m, "noise_seed", "metrics")};
    set_if(m, "irof_segments", "metrics", config.metric.irof_segments);
    set_if(m, "irof_compactness", "metrics", config.metric.irof_compactness);
    if (m.contains("score_mode")) {
        config.metric.score_mode = parse_score_mode(get<std::string>(m, "score_mode", "metrics"));
    }
}

}  // namespace

std::vector<MetricSpec> RunConfig::metric_specs() const {
    std::vector<MetricSpec> specs;
    for (auto kind : metric_kinds) {
        MetricSpec spec = metric;
        spec.kind = kind;
        specs.push_back(spec);
    }
    return specs;
}

MetricSpec RunConfig::flip_metric_spec() const {
    MetricSpec spec = metric;
    spec.kind = flip_metric;
    return spec;
}

EnsembleConfig RunConfig::ensemble_for(EnsembleMethod method, RngSeed seed) const {
    EnsembleConfig out = ensemble;
    out.method = method;
    out.rbm_train.seed = derive_seed(seed, 1);
    out.flip_metric = flip_metric_spec();
    return out;
}

void RunConfig::validate() const {
    if (workers < 1) throw ValidationError("config: workers must be >= 1");
    if (methods.empty()) throw ValidationError("config: ensemble.methods is empty");
    if (metric_kinds.empty()) throw ValidationError("config: metrics.kinds is empty");
    std::set<MetricKind> seen(metric_kinds.begin(), metric_kinds.end());
    if (seen.size() != metric_kinds.size()) throw ValidationError("config: metrics.kinds has duplicates");
    std::set<EnsembleMethod> seen_methods(methods.begin(), methods.end());
    if (seen_methods.size() != methods.size()) throw ValidationError("config: ensemble.methods has duplicates");
    if (max_batch < 1) throw ValidationError("config: oracle.max_batch must be >= 1");
    if (timeout_ms < 1) throw ValidationError("config: oracle.timeout_ms must be >= 1");
    ensemble.validate();
    metric.validate();
}

json load_config_document(const fs::path& path) {
    const std::string text = read_text_file(path);
    try {
        json doc = json::parse(text);
        if (!doc.is_object()) throw ValidationError("config '" + path.string() + "' must be a JSON object");
        return doc;
    } catch (const json::parse_error& e) {
        throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void apply_config_document(RunConfig& config, const json& doc,
                           const std::optional<std::string>& preset_override) {
    reject_unknown(doc, "<root>",
                   {"schema_version", "seed", "workers", "manifest", "out", "ensemble", "metrics",
                    "oracle", "output"});
    if (doc.contains("schema_version") && doc["schema_version"] != kSchemaVersion) {
        throw ValidationError("config: unsupported schema_version");
    }
    if (doc.contains("seed")) {
        config.seed = get<std::uint64_t>(doc, "seed", "<root>");
        config.seed_source = "config";
    }
    set_if(doc, "workers", "<root>", config.workers);
    if (doc.contains("manifest")) config.manifest = get<std::string>(doc, "manifest", "<root>");
    if (doc.contains("out")) config.out = get<std::string>(doc, "out", "<root>");

    apply_ensemble(config, doc.contains("ensemble") ? doc["ensemble"] : json::object(), preset_override);
    if (doc.contains("metrics")) apply_metrics(config, doc["metrics"]);
    if (doc.contains("oracle")) {
        const json& o = doc["oracle"];
        reject_unknown(o, "oracle", {"url", "stub", "timeout_ms", "max_batch"});
        set_if(o, "url", "oracle", config.oracle_url);
        set_if(o, "stub", "oracle", config.oracle_stub);
        set_if(o, "timeout_ms", "oracle", config.timeout_ms);
        set_if(o, "max_batch", "oracle", config.max_batch);
    }
    if (doc.contains("output")) {
        const json& o = doc["output"];
        reject_unknown(o, "output", {"dump_curves", "plots", "csv"});
        set_if(o, "dump_curves", "output", config.dump_curves);
        set_if(o, "plots", "output", config.plots);
        set_if(o, "csv", "output", config.csv);
    }
}

json run_config_to_json(const RunConfig& config) {
    json methods = json::array();
    for (auto m : config.methods) methods.push_back(to_string(m));
    json kinds = json::array();
    for (auto k : config.metric_kinds) kinds.push_back(to_string(k));
    const auto& train = config.ensemble.rbm_train;
    return json{
        {"schema_version", kSchemaVersion},
        {"seed", config.seed},
        {"workers", config.workers},
        {"manifest", config.manifest.empty() ? "" : fs::absolute(config.manifest).lexically_normal().string()},
        {"out", config.out.empty() ? "" : fs::absolute(config.out).lexically_normal().string()},
        {"ensemble",
         {{"methods", methods},
          {"preset", config.preset},
          {"epsilon", config.ensemble.epsilon},
          {"flip_policy", to_string(config.ensemble.flip_policy)},
          {"flip_fraction", config.ensemble.flip_fraction},
          {"flip_metric", to_string(config.flip_metric)},
          {"include_original_image", config.ensemble.include_original_image},
          {"add_noise", config.add_noise},
          {"keep_inputs", config.keep_inputs},
          {"rbm",
           {{"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"n_iterations", train.n_iterations},
            {"cd_steps", train.cd_steps}}}}},
        {"metrics",
         {{"kinds", kinds},
          {"step_fraction", config.metric.step_fraction},
          {"baseline", to_string(config.metric.baseline)},
          {"dataset_mean", config.metric.dataset_mean},
          {"noise_seed", config.metric.noise_seed.value},
          {"irof_segments", config.metric.irof_segments},
          {"irof_compactness", config.metric.irof_compactness},
          {"score_mode", to_string(config.metric.score_mode)}}},
        {"oracle",
         {{"url", config.oracle_url},
          {"stub", config.oracle_stub},
          {"timeout_ms", config.timeout_ms},
          {"max_batch", config.max_batch}}},
        {"output", {{"dump_curves", config.dump_curves}, {"plots", config.plots}, {"csv", config.csv}}}};
}

void apply_seed_environment(RunConfig& config) {
    if (config.seed_source != "default") return;
    const char* env = std::getenv(kSeedEnvironmentVariable);
    if (env == nullptr || *env == '\0') return;
    try {
        std::size_t used = 0;
        const unsigned long long value = std::stoull(env, &used, 10);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        config.seed = value;
        config.seed_source = "environment";
    } catch (const std::exception&) {
        throw ValidationError(std::string(kSeedEnvironmentVariable) + " must be a non-negative integer");
    }
}

OracleEndpoint parse_stub_spec(const std::string& text) {
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    StubSpec spec;
    if (kind == "constant") {
        try {
            spec.value = rest.empty() ? 1.0 : std::stod(rest);
        } catch (const std::exception&) {
            throw ValidationError("stub '" + text + "': constant needs a number");
        }
        return make_stub(kind, spec);
    }
    if (kind == "fraction_remaining" || kind == "segment_critical") {
        std::string path = rest;
        if (kind == "fraction_remaining") {
            const auto last = rest.rfind(':');
            if (last != std::string::npos) {
                try {
                    std::size_t used = 0;
                    spec.baseline = std::stod(rest.substr(last + 1), &used);
                    if (used == rest.size() - last - 1) path = rest.substr(0, last);
                } catch (const std::exception&) {
                    // not a baseline suffix; the colon belongs to the path
                }
            }
        }
        if (path.empty()) throw ValidationError("stub '" + text + "' needs a mask .npy path");
        const auto mask = read_npy(path);
        if (mask.shape.size() != 2) throw ValidationError("stub mask '" + path + "' must be H×W");
        spec.mask_height = mask.shape[0];
        spec.mask_width = mask.shape[1];
        for (double v : mask.data) spec.mask.push_back(v != 0.0 ? 1 : 0);
        return make_stub(kind, spec);
    }
    return make_stub(kind, spec);  // raises for unknown kinds
}

OracleEndpoint resolve_endpoint(const RunConfig& config) {
    OracleEndpoint endpoint;
    if (!config.oracle_url.empty()) {
        endpoint.transport = Transport::Network;
        endpoint.address = config.oracle_url;
    } else if (!config.oracle_stub.empty()) {
        endpoint = parse_stub_spec(config.oracle_stub);
    } else {
        throw ValidationError("no oracle configured (set --oracle-url or --stub)");
    }
    endpoint.timeout = std::chrono::milliseconds(config.timeout_ms);
    endpoint.max_batch = config.max_batch;
    endpoint.validate();
    return endpoint;
}

RngSeed image_seed(std::uint64_t run_seed, const std::string& image_id) {
    return derive_seed(RngSeed{run_seed}, stable_hash(image_id));
}

}  // namespace saliency_forge
