#include <algorithm>
#include <iostream>

#include <CLI11.hpp>

#include "saliency_forge/cli.hpp"
#include "saliency_forge/errors.hpp"

namespace saliency_forge {

namespace {

// Raw flag values; a value only counts when its option was given.
struct Flags {
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::string manifest;
    std::string out;

    std::vector<std::string> methods;
    std::string preset;
    double epsilon = 0.0;
    std::string flip_policy;
    double flip_fraction = 0.0;
    std::string flip_metric;
    double learning_rate = 0.0;
    std::size_t batch_size = 0;
    std::size_t iterations = 0;
    std::size_t cd_steps = 0;
    std::string add_noise;
    bool include_original_image = false;
    bool no_inputs = false;

    std::vector<std::string> metrics;
    double step_fraction = 0.0;
    std::string baseline;
    std::vector<double> dataset_mean;
    std::string score_mode;
    std::size_t irof_segments = 0;
    double irof_compactness = 0.0;

    std::string oracle_url;
    std::string stub;
    std::size_t timeout_ms = 0;
    std::size_t max_batch = 0;

    bool dump_curves = false;
    bool plots = false;
    bool csv = false;

    NoiseRequest noise;
    StubServerRequest server;
};

void add_common(CLI::App* sub, Flags& f) {
    sub->add_option("-c,--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Run seed (else config, else $SALIENCY_FORGE_SEED, else 0)");
    sub->add_option("-m,--manifest", f.manifest, "Dataset or stack manifest");
    sub->add_option("-o,--out", f.out, "Output directory");
}

void add_workers(CLI::App* sub, Flags& f) {
    sub->add_option("-j,--workers", f.workers, "Images processed concurrently");
}

void add_ensemble(CLI::App* sub, Flags& f) {
    sub->add_option("--preset", f.preset, "RBM preset: mnist, cifar, imagenet");
    sub->add_option("--epsilon", f.epsilon, "Variance ensemble stabilizer");
    sub->add_option("--flip-fraction", f.flip_fraction, "Top/bottom slice for flip detection");
    sub->add_option("--flip-metric", f.flip_metric, "Metric optimized by metric_optimization");
    sub->add_option("--learning-rate", f.learning_rate);
    sub->add_option("--batch-size", f.batch_size);
    sub->add_option("--iterations", f.iterations, "Training passes over the pixels");
    sub->add_option("--cd-steps", f.cd_steps);
    sub->add_option("--add-noise", f.add_noise, "Append K standard-normal maps (K defaults to 15)")
        ->expected(0, 1);
    sub->add_flag("--include-original-image", f.include_original_image);
}

void add_metrics(CLI::App* sub, Flags& f) {
    sub->add_option("--metrics", f.metrics, "insertion,deletion,irof")->delimiter(',');
    sub->add_option("--step-fraction", f.step_fraction);
    sub->add_option("--baseline", f.baseline, "black, dataset_mean, uniform_noise");
    sub->add_option("--dataset-mean", f.dataset_mean, "Per-channel mean for dataset_mean")->delimiter(',');
    sub->add_option("--score-mode", f.score_mode, "probability or normalized_probability");
    sub->add_option("--irof-segments", f.irof_segments);
    sub->add_option("--irof-compactness", f.irof_compactness);
}

void add_oracle(CLI::App* sub, Flags& f) {
    sub->add_option("--oracle-url", f.oracle_url, "Base URL of a /predict + /healthz service");
    sub->add_option("--stub", f.stub, "Stub oracle, e.g. constant:0.7 or fraction_remaining:mask.npy");
    sub->add_option("--timeout-ms", f.timeout_ms);
    sub->add_option("--max-batch", f.max_batch);
}

void add_outputs(CLI::App* sub, Flags& f) {
    sub->add_flag("--dump-curves", f.dump_curves, "Write every perturbation curve");
    sub->add_flag("--plots", f.plots, "Write SVG summaries");
    sub->add_flag("--csv", f.csv, "Also write the report as CSV");
}

bool given(const CLI::App* sub, const std::string& name) {
    const CLI::Option* opt = sub->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
}

RunConfig resolve(const CLI::App* sub, const Flags& f) {
    RunConfig config;
    const nlohmann::json doc = f.config_path.empty() ? nlohmann::json::object() : load_config_document(f.config_path);
    std::optional<std::string> preset;
    if (given(sub, "--preset")) preset = f.preset;
    apply_config_document(config, doc, preset);

    if (given(sub, "--seed")) {
        config.seed = f.seed;
        config.seed_source = "flag";
    }
    apply_seed_environment(config);
    if (given(sub, "--workers")) config.workers = f.workers;
    if (given(sub, "--manifest")) config.manifest = f.manifest;
    if (given(sub, "--out")) config.out = f.out;

    if (given(sub, "--methods")) {
        config.methods.clear();
        for (const auto& m : f.methods) config.methods.push_back(parse_ensemble_method(m));
    }
    auto& e = config.ensemble;
    if (given(sub, "--epsilon")) e.epsilon = f.epsilon;
    if (given(sub, "--flip-policy")) e.flip_policy = parse_flip_policy(f.flip_policy);
    if (given(sub, "--flip-fraction")) e.flip_fraction = f.flip_fraction;
    if (given(sub, "--flip-metric")) config.flip_metric = parse_metric_kind(f.flip_metric);
    if (given(sub, "--learning-rate")) e.rbm_train.learning_rate = f.learning_rate;
    if (given(sub, "--batch-size")) e.rbm_train.batch_size = f.batch_size;
    if (given(sub, "--iterations")) e.rbm_train.n_iterations = f.iterations;
    if (given(sub, "--cd-steps")) e.rbm_train.cd_steps = f.cd_steps;
    if (given(sub, "--add-noise")) {
        if (f.add_noise.empty()) {
            config.add_noise = kDefaultNoiseMaps;
        } else {
            try {
                std::size_t used = 0;
                config.add_noise = std::stoul(f.add_noise, &used);
                if (used != f.add_noise.size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ValidationError("--add-noise takes a non-negative count");
            }
        }
    }
    if (given(sub, "--include-original-image")) e.include_original_image = true;
    if (given(sub, "--no-inputs")) config.keep_inputs = false;

    if (given(sub, "--metrics")) {
        config.metric_kinds.clear();
        for (const auto& m : f.metrics) config.metric_kinds.push_back(parse_metric_kind(m));
    }
    if (given(sub, "--step-fraction")) config.metric.step_fraction = f.step_fraction;
    if (given(sub, "--baseline")) config.metric.baseline = parse_baseline_kind(f.baseline);
    if (given(sub, "--dataset-mean")) config.metric.dataset_mean = f.dataset_mean;
    if (given(sub, "--score-mode")) config.metric.score_mode = parse_score_mode(f.score_mode);
    if (given(sub, "--irof-segments")) config.metric.irof_segments = f.irof_segments;
    if (given(sub, "--irof-compactness")) config.metric.irof_compactness = f.irof_compactness;

    if (given(sub, "--oracle-url")) {
        config.oracle_url = f.oracle_url;
        config.oracle_stub.clear();
    }
    if (given(sub, "--stub")) {
        config.oracle_stub = f.stub;
        config.oracle_url.clear();
    }
    if (given(sub, "--timeout-ms")) config.timeout_ms = f.timeout_ms;
    if (given(sub, "--max-batch")) config.max_batch = f.max_batch;

    if (given(sub, "--dump-curves")) config.dump_curves = true;
    if (given(sub, "--plots")) config.plots = true;
    if (given(sub, "--csv")) config.csv = true;
    return config;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Aggregate attribution maps and score them with perturbation metrics.", "saliency-forge"};
    app.require_subcommand(1, 1);
    app.set_version_flag("--version", "saliency-forge 0.1.0");
    Flags f;

    auto* aggregate = app.add_subcommand("aggregate", "Mean / variance / RBM aggregation of every stack");
    add_common(aggregate, f);
    add_workers(aggregate, f);
    aggregate->add_option("--methods", f.methods, "mean,variance,rbm")->delimiter(',');
    aggregate->add_option("--flip-policy", f.flip_policy, "flip_detection, metric_optimization, none");
    add_ensemble(aggregate, f);
    aggregate->add_flag("--no-inputs", f.no_inputs, "Leave the input maps out of the output stacks");
    add_metrics(aggregate, f);
    add_oracle(aggregate, f);

    auto* evaluate = app.add_subcommand("evaluate", "Score every map of every stack");
    add_common(evaluate, f);
    add_workers(evaluate, f);
    add_metrics(evaluate, f);
    add_oracle(evaluate, f);
    add_outputs(evaluate, f);

    auto* flip = app.add_subcommand("flip-compare", "Paired comparison of the two RBM flip policies");
    add_common(flip, f);
    add_workers(flip, f);
    add_ensemble(flip, f);
    add_metrics(flip, f);
    add_oracle(flip, f);
    flip->add_flag("--csv", f.csv, "Also write per-image deltas as CSV");

    auto* noise = app.add_subcommand("gen-noise", "Write standard-normal attribution maps");
    add_common(noise, f);
    noise->add_option("-k,--count", f.noise.count, "Number of maps")->capture_default_str();
    noise->add_option("--height", f.noise.height);
    noise->add_option("--width", f.noise.width);

    auto* stub = app.add_subcommand("stub-oracle", "Serve a stub oracle over HTTP until interrupted");
    stub->add_option("--stub", f.stub, "Stub spec, e.g. constant:0.7")->required();
    stub->add_option("--host", f.server.host)->capture_default_str();
    stub->add_option("--port", f.server.port, "0 picks a free port")->capture_default_str();
    stub->add_option("--model-name", f.server.model_name)->capture_default_str();
    stub->add_option("--max-batch", f.max_batch);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion& e) {
        out << e.what() << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const auto* failed = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << "error: " << e.what() << '\n';
        err << "run '" << failed->get_name() << " --help' for usage\n";
        return kExitValidation;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        const RunConfig config = resolve(sub, f);
        if (sub == aggregate) return cmd_aggregate(config, out, err);
        if (sub == evaluate) return cmd_evaluate(config, out, err);
        if (sub == flip) return cmd_flip_compare(config, out, err);
        if (sub == noise) return cmd_gen_noise(config, f.noise, out, err);
        return cmd_stub_oracle(config, f.server, out, err);
    } catch (const OracleUnavailableError& e) {
        err << "error: oracle unavailable: " << e.what() << '\n';
        return kExitOracleUnavailable;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace saliency_forge
