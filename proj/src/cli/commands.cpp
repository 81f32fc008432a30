#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <thread>

#include <json.hpp>

#include "saliency_forge/cli.hpp"
#include "saliency_forge/errors.hpp"
#include "saliency_forge/io.hpp"
#include "saliency_forge/parallel.hpp"
#include "saliency_forge/report.hpp"

namespace saliency_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";
// Noise map k of an image draws from stream kNoiseStream + k of the image seed.
constexpr std::uint64_t kNoiseStream = 1000;

struct Dataset {
    fs::path manifest;
    std::vector<fs::path> stack_paths;
    std::vector<AttributionStack> stacks;
};

// Everything is read and validated before any output is written.
Dataset load_dataset(const RunConfig& config, bool need_images) {
    if (config.manifest.empty()) throw ValidationError("no manifest given (--manifest)");
    if (!fs::exists(config.manifest)) {
        throw ValidationError("manifest '" + config.manifest.string() + "' does not exist");
    }
    Dataset d;
    d.manifest = config.manifest;
    d.stack_paths = load_dataset_manifest(config.manifest);
    if (d.stack_paths.empty()) throw ValidationError("dataset '" + config.manifest.string() + "' is empty");
    std::set<std::string> ids;
    for (const auto& p : d.stack_paths) {
        auto stack = load_stack(p);
        if (need_images && !stack.image) {
            throw ValidationError("stack '" + stack.id + "' has no image");
        }
        if (!ids.insert(safe_name(stack.id)).second) {
            throw ValidationError("duplicate stack id '" + stack.id + "'");
        }
        d.stacks.push_back(std::move(stack));
    }
    return d;
}

// Git blob hashes of the manifests and every array they reference.
json input_hashes(const Dataset& d) {
    json hashes = json::object();
    auto add = [&](const fs::path& p) { hashes[fs::absolute(p).lexically_normal().string()] = git_blob_hash(p); };
    add(d.manifest);
    for (const auto& stack_path : d.stack_paths) {
        add(stack_path);
        const json doc = json::parse(read_text_file(stack_path));
        auto resolve = [&](const std::string& rel) {
            const fs::path p(rel);
            return p.is_absolute() ? p : stack_path.parent_path() / p;
        };
        if (doc.contains("image") && doc["image"].is_string()) add(resolve(doc["image"].get<std::string>()));
        for (const auto& m : doc.value("maps", json::array())) add(resolve(m.at("path").get<std::string>()));
    }
    return hashes;
}

std::unique_ptr<Oracle> open_oracle(const RunConfig& config, std::ostream& err) {
    auto oracle = connect(resolve_endpoint(config));
    if (const auto* http = dynamic_cast<const HttpOracle*>(oracle.get())) {
        try {
            const std::string model = http->health();
            err << "oracle " << config.oracle_url << " ready (model " << model << ")\n";
        } catch (const ProtocolError& e) {
            throw OracleUnavailableError(e.what());
        }
    }
    return oracle;
}

void write_run_record(const RunConfig& config, const std::string& command, const json& inputs,
                      json extra) {
    json record{{"schema_version", kSchemaVersion},
                {"command", command},
                {"tool_version", kToolVersion},
                {"seed", config.seed},
                {"seed_source", config.seed_source},
                {"schema_versions", {{"manifest", kSchemaVersion}, {"config", kSchemaVersion},
                                     {"report", kSchemaVersion}}},
                {"config", run_config_to_json(config)},
                {"inputs", inputs}};
    for (auto& [key, value] : extra.items()) record[key] = value;
    write_text_file(config.out / "config.json", run_config_to_json(config).dump(2) + "\n");
    write_text_file(config.out / "run.json", record.dump(2) + "\n");
}

// The stack an image is aggregated from: inputs plus optional noise maps, normalized.
AttributionStack prepared_stack(const AttributionStack& stack, const RunConfig& config, RngSeed seed) {
    AttributionStack working = stack;
    for (std::size_t k = 0; k < config.add_noise; ++k) {
        working.maps.push_back(make_noise_map(stack.height(), stack.width(), derive_seed(seed, kNoiseStream + k)));
    }
    return normalize_stack(working);
}

bool needs_oracle_for_aggregation(const RunConfig& config) {
    return config.ensemble.flip_policy == FlipPolicy::MetricOptimization &&
           std::find(config.methods.begin(), config.methods.end(), EnsembleMethod::Rbm) != config.methods.end();
}

std::map<std::string, AttributionMap> keyed_maps(const AttributionStack& stack) {
    std::map<std::string, AttributionMap> out;
    for (const auto& m : stack.maps) {
        std::string key = m.source.empty() ? "map" : m.source;
        for (int n = 2; out.count(key); ++n) key = (m.source.empty() ? "map" : m.source) + "#" + std::to_string(n);
        out.emplace(key, normalize_map(m));
    }
    return out;
}

// Left-justifies to `width` code points ("±" is two bytes).
std::string pad(std::string text, std::size_t width) {
    std::size_t shown = 0;
    for (unsigned char c : text) shown += (c & 0xC0) != 0x80;
    if (shown < width) text.append(width - shown, ' ');
    return text;
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

int cmd_aggregate(const RunConfig& config, std::ostream& out, std::ostream& err) {
    config.validate();
    if (config.out.empty()) throw ValidationError("aggregate needs an output directory (--out)");
    const Dataset dataset = load_dataset(config, config.ensemble.include_original_image);
    std::unique_ptr<Oracle> oracle;
    if (needs_oracle_for_aggregation(config)) {
        for (const auto& s : dataset.stacks) {
            if (!s.image) throw ValidationError("metric_optimization needs images; stack '" + s.id + "' has none");
        }
        oracle = open_oracle(config, err);
    }
    const json inputs = input_hashes(dataset);

    fs::create_directories(config.out);
    const std::size_t n = dataset.stacks.size();
    std::vector<std::optional<std::string>> failures(n);
    std::vector<fs::path> manifests(n);
    std::mutex writer;

    parallel_for(n, config.workers, [&](std::size_t i) {
        const AttributionStack& stack = dataset.stacks[i];
        try {
            const RngSeed seed = image_seed(config.seed, stack.id);
            const AttributionStack normalized = prepared_stack(stack, config, seed);
            AttributionStack result;
            result.id = stack.id;
            result.image = stack.image;
            if (config.keep_inputs) {
                result.maps.assign(normalized.maps.begin(), normalized.maps.begin() + static_cast<std::ptrdiff_t>(stack.maps.size()));
            }
            json diagnostics{{"id", stack.id},
                             {"seed", seed.value},
                             {"n_inputs", stack.maps.size()},
                             {"n_noise", config.add_noise},
                             {"include_original_image", config.ensemble.include_original_image},
                             {"methods", json::array()}};
            for (auto method : config.methods) {
                const auto aggregated = aggregate(normalized, config.ensemble_for(method, seed), oracle.get());
                result.maps.push_back(aggregated.map);
                diagnostics["methods"].push_back(diagnostics_to_json(aggregated));
            }

            std::lock_guard lock(writer);
            const fs::path manifest = config.out / (safe_name(stack.id) + ".json");
            save_stack(result, manifest);
            write_text_file(config.out / safe_name(stack.id) / "diagnostics.json", diagnostics.dump(2) + "\n");
            manifests[i] = manifest;
        } catch (const std::exception& e) {
            failures[i] = e.what();
        }
    });

    std::vector<fs::path> written;
    json failed = json::array();
    for (std::size_t i = 0; i < n; ++i) {
        if (failures[i]) {
            failed.push_back({{"id", dataset.stacks[i].id}, {"error", *failures[i]}});
            err << "error: " << dataset.stacks[i].id << ": " << *failures[i] << '\n';
        } else {
            written.push_back(fs::path(manifests[i].filename()));
        }
    }
    save_dataset_manifest(config.out / "aggregated.json", written);
    write_run_record(config, "aggregate", inputs,
                     {{"partial", !failed.empty()}, {"failures", failed},
                      {"outputs", {{"dataset", "aggregated.json"}, {"images", written.size()}}}});
    out << "aggregated " << written.size() << " of " << n << " images (" << config.methods.size()
        << " methods) into " << config.out.string() << '\n';
    if (!failed.empty()) {
        err << "partial output: " << failed.size() << " images failed; see run.json\n";
        return kExitFailure;
    }
    return kExitOk;
}

int cmd_evaluate(const RunConfig& config, std::ostream& out, std::ostream& err) {
    config.validate();
    const Dataset dataset = load_dataset(config, true);
    std::vector<EvaluationItem> items;
    for (const auto& s : dataset.stacks) items.push_back(EvaluationItem{s.id, *s.image, keyed_maps(s)});
    const auto oracle = open_oracle(config, err);

    const BatchReport report = evaluate_batch(items, *oracle, config.metric_specs(), RngSeed{config.seed}, config.workers);
    const std::string table = format_report_table(report);
    out << table;

    std::size_t failures = 0;
    for (const auto& r : report.records) failures += r.value ? 0 : 1;
    if (failures > 0) err << "warning: " << failures << " evaluations failed; affected rows are marked incomplete\n";

    if (!config.out.empty()) {
        const json inputs = input_hashes(dataset);
        fs::create_directories(config.out);
        json doc = report_to_json(report);
        doc["metadata"]["seed"] = config.seed;
        doc["metadata"]["oracle"] = run_config_to_json(config)["oracle"];
        doc["metadata"]["images"] = items.size();
        doc["metadata"]["oracle_requests"] = oracle->request_count();
        write_text_file(config.out / "report.json", doc.dump(2) + "\n");
        write_text_file(config.out / "report.txt", table);
        if (config.csv) write_text_file(config.out / "report.csv", report_to_csv(report));
        if (config.dump_curves) {
            for (const auto& r : report.records) {
                if (!r.value) continue;
                const fs::path p = config.out / "curves" / safe_name(r.id) /
                                   (safe_name(r.method) + "_" + std::string(to_string(r.metric)) + ".json");
                write_text_file(p, curve_to_json(r.curve).dump() + "\n");
            }
        }
        if (config.plots) {
            for (const auto& spec : report.specs) {
                const std::string name(to_string(spec.kind));
                write_text_file(config.out / "plots" / (name + "_summary.svg"), render_bar_chart_svg(report, spec.kind));
                write_text_file(config.out / "plots" / (name + "_curves.svg"), render_curves_svg(report, spec.kind));
            }
        }
        write_run_record(config, "evaluate", inputs,
                         {{"partial", failures > 0}, {"outputs", {{"report", "report.json"}}}});
    }
    return kExitOk;
}

int cmd_flip_compare(const RunConfig& config, std::ostream& out, std::ostream& err) {
    config.validate();
    const Dataset dataset = load_dataset(config, true);
    const auto oracle = open_oracle(config, err);
    const auto specs = config.metric_specs();

    struct Row {
        std::string id;
        bool flipped_detection = false;
        bool flipped_optimization = false;
        std::vector<double> detection;     // one value per spec
        std::vector<double> optimization;
        std::optional<std::string> error;
    };
    const std::size_t n = dataset.stacks.size();
    std::vector<Row> rows(n);

    parallel_for(n, config.workers, [&](std::size_t i) {
        const AttributionStack& stack = dataset.stacks[i];
        Row& row = rows[i];
        row.id = stack.id;
        try {
            const RngSeed seed = image_seed(config.seed, stack.id);
            AttributionStack input = prepared_stack(stack, config, seed);
            if (config.ensemble.include_original_image) input = with_original_image(input);
            const AttributionStack ordered = canonical_map_order(input);

            EnsembleConfig detection = config.ensemble_for(EnsembleMethod::Rbm, seed);
            detection.flip_policy = FlipPolicy::FlipDetection;
            EnsembleConfig optimization = detection;
            optimization.flip_policy = FlipPolicy::MetricOptimization;
            auto local_spec = [&](MetricSpec spec) {
                spec.noise_seed = derive_seed(spec.noise_seed, stable_hash(stack.id));
                return spec;
            };
            optimization.flip_metric = local_spec(optimization.flip_metric);

            // One training run feeds both policies.
            const RbmParams params = train_cd(stack_samples(ordered), detection.rbm_train, 1);
            const RngSeed metric_seed = detection.rbm_train.seed;
            const auto fd = aggregate_with_params(ordered, params, detection, oracle.get(), metric_seed);
            const auto mo = aggregate_with_params(ordered, params, optimization, oracle.get(), metric_seed);
            row.flipped_detection = fd.flipped;
            row.flipped_optimization = mo.flipped;
            for (const auto& spec : specs) {
                const MetricSpec s = local_spec(spec);
                row.detection.push_back(evaluate_metric(*stack.image, fd.map, *oracle, s, metric_seed).value);
                row.optimization.push_back(evaluate_metric(*stack.image, mo.map, *oracle, s, metric_seed).value);
            }
        } catch (const std::exception& e) {
            row.error = e.what();
        }
    });

    json per_image = json::array();
    json summary = json::object();
    std::string table = "metric      flip_detection     metric_optimization  mo_wins  fd_wins  ties  mean_delta\n";
    std::size_t failures = 0;
    for (const auto& row : rows) {
        if (row.error) {
            ++failures;
            err << "error: " << row.id << ": " << *row.error << '\n';
            per_image.push_back({{"id", row.id}, {"error", *row.error}});
            continue;
        }
        json metrics = json::object();
        for (std::size_t k = 0; k < specs.size(); ++k) {
            metrics[std::string(to_string(specs[k].kind))] = {
                {"flip_detection", row.detection[k]},
                {"metric_optimization", row.optimization[k]},
                {"delta", row.optimization[k] - row.detection[k]}};
        }
        per_image.push_back({{"id", row.id},
                             {"flipped", {{"flip_detection", row.flipped_detection},
                                          {"metric_optimization", row.flipped_optimization}}},
                             {"metrics", metrics}});
    }
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const MetricKind kind = specs[k].kind;
        std::vector<double> fd, mo;
        std::size_t mo_wins = 0, fd_wins = 0, ties = 0;
        double delta_sum = 0.0;
        for (const auto& row : rows) {
            if (row.error) continue;
            fd.push_back(row.detection[k]);
            mo.push_back(row.optimization[k]);
            delta_sum += row.optimization[k] - row.detection[k];
            if (strictly_better(kind, row.optimization[k], row.detection[k])) {
                ++mo_wins;
            } else if (strictly_better(kind, row.detection[k], row.optimization[k])) {
                ++fd_wins;
            } else {
                ++ties;
            }
        }
        const auto [fd_mean, fd_std] = mean_and_std(fd);
        const auto [mo_mean, mo_std] = mean_and_std(mo);
        const double mean_delta = fd.empty() ? 0.0 : delta_sum / static_cast<double>(fd.size());
        const std::string name(to_string(kind));
        summary[name] = {{"flip_detection", {{"mean", fd_mean}, {"std", fd_std}}},
                         {"metric_optimization", {{"mean", mo_mean}, {"std", mo_std}}},
                         {"metric_optimization_wins", mo_wins},
                         {"flip_detection_wins", fd_wins},
                         {"ties", ties},
                         {"mean_delta", mean_delta},
                         {"n", fd.size()}};
        char line[256];
        std::snprintf(line, sizeof(line), "%7zu  %7zu  %4zu  %+.4f\n", mo_wins, fd_wins, ties, mean_delta);
        table += pad(name, 10) + "  " + pad(fixed(fd_mean, 2) + " ± " + fixed(fd_std, 2), 17) + "  " +
                 pad(fixed(mo_mean, 2) + " ± " + fixed(mo_std, 2), 19) + "  " + line;
    }
    out << table;

    if (!config.out.empty()) {
        const json inputs = input_hashes(dataset);
        fs::create_directories(config.out);
        json doc{{"schema_version", kSchemaVersion},
                 {"optimized_metric", to_string(config.flip_metric)},
                 {"images", per_image},
                 {"summary", summary}};
        json spec_list = json::array();
        for (const auto& s : specs) spec_list.push_back(metric_spec_to_json(s));
        doc["metadata"] = {{"metric_specs", spec_list}, {"seed", config.seed}};
        write_text_file(config.out / "flip_compare.json", doc.dump(2) + "\n");
        write_text_file(config.out / "flip_compare.txt", table);
        if (config.csv) {
            std::string csv = "id,metric,flip_detection,metric_optimization,delta\n";
            for (const auto& row : rows) {
                if (row.error) continue;
                for (std::size_t k = 0; k < specs.size(); ++k) {
                    csv += row.id + "," + std::string(to_string(specs[k].kind)) + "," + fixed(row.detection[k], 6) +
                           "," + fixed(row.optimization[k], 6) + "," +
                           fixed(row.optimization[k] - row.detection[k], 6) + "\n";
                }
            }
            write_text_file(config.out / "flip_compare.csv", csv);
        }
        write_run_record(config, "flip-compare", inputs, {{"partial", failures > 0}});
    }
    return failures > 0 ? kExitFailure : kExitOk;
}

int cmd_gen_noise(const RunConfig& config, const NoiseRequest& request, std::ostream& out, std::ostream&) {
    if (config.out.empty()) throw ValidationError("gen-noise needs an output directory (--out)");
    if (request.count < 1) throw ValidationError("gen-noise: --count must be >= 1");
    if (config.manifest.empty()) {
        if (request.height < 1 || request.width < 1) {
            throw ValidationError("gen-noise: give --manifest or both --height and --width");
        }
        fs::create_directories(config.out);
        for (std::size_t k = 0; k < request.count; ++k) {
            const auto map = make_noise_map(request.height, request.width, derive_seed(RngSeed{config.seed}, kNoiseStream + k));
            save_map(map, config.out / ("noise_" + std::to_string(k) + ".npy"));
        }
        write_run_record(config, "gen-noise", json::object(), {{"count", request.count}});
        out << "wrote " << request.count << " noise maps to " << config.out.string() << '\n';
        return kExitOk;
    }

    // Same streams as aggregate --add-noise.
    const Dataset dataset = load_dataset(config, false);
    const json inputs = input_hashes(dataset);
    std::vector<fs::path> written;
    for (const auto& stack : dataset.stacks) {
        const RngSeed seed = image_seed(config.seed, stack.id);
        AttributionStack noisy = stack;
        for (std::size_t k = 0; k < request.count; ++k) {
            noisy.maps.push_back(make_noise_map(stack.height(), stack.width(), derive_seed(seed, kNoiseStream + k)));
        }
        const std::string name = safe_name(stack.id) + ".json";
        save_stack(noisy, config.out / name);
        written.emplace_back(name);
    }
    save_dataset_manifest(config.out / "dataset.json", written);
    write_run_record(config, "gen-noise", inputs, {{"count", request.count}});
    out << "added " << request.count << " noise maps to " << written.size() << " stacks in "
        << config.out.string() << '\n';
    return kExitOk;
}

namespace {
std::atomic<bool> g_stop_requested{false};
extern "C" void request_stop(int) { g_stop_requested = true; }
}  // namespace

int cmd_stub_oracle(const RunConfig& config, const StubServerRequest& request, std::ostream& out,
                    std::ostream&) {
    if (config.oracle_stub.empty()) throw ValidationError("stub-oracle needs --stub");
    OracleEndpoint endpoint = parse_stub_spec(config.oracle_stub);
    endpoint.max_batch = config.max_batch;
    std::shared_ptr<const Oracle> oracle = connect(endpoint);
    OracleServer server(oracle, request.model_name);
    const int port = server.bind(request.host, request.port);
    out << "listening on http://" << request.host << ":" << port << std::endl;

    g_stop_requested = false;
    std::signal(SIGINT, request_stop);
    std::signal(SIGTERM, request_stop);
    server.start_background();
    while (!g_stop_requested) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return kExitOk;
}

}  // namespace saliency_forge
