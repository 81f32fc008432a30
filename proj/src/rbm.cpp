#include "saliency_forge/rbm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "saliency_forge/errors.hpp"

namespace saliency_forge {

namespace {

void require_binary(const Eigen::VectorXd& v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (v[i] != 0.0 && v[i] != 1.0) {
            throw ValidationError(std::string(what) + " must be binary, entry " +
                                  std::to_string(i) + " is " + std::to_string(v[i]));
        }
    }
}

void require_unit_interval(const Eigen::VectorXd& v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]) || v[i] < 0.0 || v[i] > 1.0) {
            throw ValidationError(std::string(what) + " entry " + std::to_string(i) +
                                  " outside [0,1]");
        }
    }
}

void require_size(Eigen::Index actual, Eigen::Index expected, const char* what) {
    if (actual != expected) {
        throw ValidationError(std::string(what) + " has length " + std::to_string(actual) +
                              ", expected " + std::to_string(expected));
    }
}

void require_enumerable(const RbmParams& params) {
    params.validate();
    const auto units = params.n_visible() + params.n_hidden();
    if (units > kMaxEnumerationUnits) {
        throw CapacityError("exact enumeration supports n + m <= " +
                            std::to_string(kMaxEnumerationUnits) + ", got " +
                            std::to_string(units) + "; use sampled estimates instead");
    }
}

void fill_bits(std::uint64_t bits, Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>((bits >> i) & 1U);
}

double log_sum_exp(const std::vector<double>& terms) {
    const double hi = *std::max_element(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - hi);
    return hi + std::log(acc);
}

// Negative energies of every joint state, x in the low bits.
std::vector<double> all_negative_energies(const RbmParams& params) {
    const auto n = params.n_visible();
    const auto m = params.n_hidden();
    const std::uint64_t states = std::uint64_t{1} << (n + m);
    Eigen::VectorXd x(n), h(m);
    std::vector<double> out(states);
    for (std::uint64_t s = 0; s < states; ++s) {
        fill_bits(s, x);
        fill_bits(s >> n, h);
        out[s] = -energy(params, x, h);
    }
    return out;
}

Eigen::MatrixXd sigmoid_rows(Eigen::MatrixXd z) {
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

// Evaluated on z >= 0 and mirrored, so sigmoid(-z) == 1 - sigmoid(z) bit for bit
// (1 - s is exact for s in [0.5, 1]).
double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    return 1.0 - 1.0 / (1.0 + std::exp(z));
}

void RbmParams::validate() const {
    if (weights.rows() < 1 || weights.cols() < 1) {
        throw ValidationError("rbm params: need at least one visible and one hidden unit");
    }
    require_size(visible_bias.size(), weights.rows(), "visible bias");
    require_size(hidden_bias.size(), weights.cols(), "hidden bias");
    if (!weights.allFinite() || !visible_bias.allFinite() || !hidden_bias.allFinite()) {
        throw ValidationError("rbm params: non-finite entry");
    }
}

RbmParams zero_params(Eigen::Index n_visible, Eigen::Index n_hidden) {
    return RbmParams{Eigen::MatrixXd::Zero(n_visible, n_hidden),
                     Eigen::VectorXd::Zero(n_visible), Eigen::VectorXd::Zero(n_hidden)};
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("train config: learning_rate must be positive");
    }
    if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
    if (n_iterations == 0) throw ValidationError("train config: n_iterations must be positive");
    if (cd_steps == 0) throw ValidationError("train config: cd_steps must be positive");
}

TrainConfig train_preset(std::string_view name) {
    TrainConfig config;
    if (name == "mnist") {
        config.batch_size = 5;
        config.learning_rate = 0.01;
        config.n_iterations = 100;
    } else if (name == "cifar" || name == "cifar10" || name == "imagenet") {
        config.batch_size = 35;
        config.learning_rate = 0.001;
        config.n_iterations = 250;
    } else {
        throw ValidationError("unknown preset '" + std::string(name) +
                              "' (expected mnist, cifar or imagenet)");
    }
    return config;
}

void validate_samples(const SampleMatrix& samples) {
    if (samples.rows() < 1 || samples.cols() < 1) {
        throw ValidationError("sample matrix must have at least one row and one column");
    }
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        for (Eigen::Index c = 0; c < samples.cols(); ++c) {
            const double v = samples(r, c);
            if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
                throw ValidationError("sample (" + std::to_string(r) + ", " + std::to_string(c) +
                                      ") outside [0,1]");
            }
        }
    }
}

double energy(const RbmParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
    params.validate();
    require_size(x.size(), params.n_visible(), "visible state");
    require_size(h.size(), params.n_hidden(), "hidden state");
    require_binary(x, "visible state");
    require_binary(h, "hidden state");
    return -(params.visible_bias.dot(x) + params.hidden_bias.dot(h) + x.dot(params.weights * h));
}

double log_partition_function(const RbmParams& params) {
    require_enumerable(params);
    return log_sum_exp(all_negative_energies(params));
}

double partition_function(const RbmParams& params) {
    return std::exp(log_partition_function(params));
}

double joint_probability(const RbmParams& params, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h) {
    const double log_z = log_partition_function(params);
    return std::exp(-energy(params, x, h) - log_z);
}

Eigen::VectorXd hidden_posterior(const RbmParams& params, const Eigen::VectorXd& x) {
    params.validate();
    require_size(x.size(), params.n_visible(), "visible vector");
    require_unit_interval(x, "visible vector");
    Eigen::VectorXd z = params.hidden_bias + params.weights.transpose() * x;
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::VectorXd visible_posterior(const RbmParams& params, const Eigen::VectorXd& h) {
    params.validate();
    require_size(h.size(), params.n_hidden(), "hidden vector");
    require_unit_interval(h, "hidden vector");
    Eigen::VectorXd z = params.visible_bias + params.weights * h;
    return z.unaryExpr([](double v) { return sigmoid(v); });
}

Eigen::MatrixXd hidden_posterior_rows(const RbmParams& params, const SampleMatrix& samples) {
    params.validate();
    validate_samples(samples);
    require_size(samples.cols(), params.n_visible(), "sample row");
    Eigen::MatrixXd z = samples * params.weights;
    z.rowwise() += params.hidden_bias.transpose();
    return sigmoid_rows(std::move(z));
}

RbmParams train_cd(const SampleMatrix& samples, const TrainConfig& config, Eigen::Index n_hidden,
                   TrainReport* report) {
    validate_samples(samples);
    config.validate();
    if (n_hidden < 1) throw ValidationError("train_cd: need at least one hidden unit");

    const Eigen::Index n_samples = samples.rows();
    const Eigen::Index n_visible = samples.cols();
    std::mt19937_64 rng(config.seed.value);
    std::normal_distribution<double> init(0.0, 0.01);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    RbmParams params = zero_params(n_visible, n_hidden);
    for (Eigen::Index i = 0; i < n_visible; ++i) {
        for (Eigen::Index j = 0; j < n_hidden; ++j) params.weights(i, j) = init(rng);
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_samples));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto batch_size = static_cast<Eigen::Index>(config.batch_size);

    Eigen::MatrixXd visible, hidden_pos, hidden_state, visible_neg, hidden_neg;
    std::size_t updates = 0;
    double squared_error = 0.0;
    for (std::size_t iteration = 0; iteration < config.n_iterations; ++iteration) {
        std::shuffle(order.begin(), order.end(), rng);
        squared_error = 0.0;
        for (Eigen::Index start = 0; start < n_samples; start += batch_size) {
            const Eigen::Index rows = std::min(batch_size, n_samples - start);
            visible.resize(rows, n_visible);
            for (Eigen::Index r = 0; r < rows; ++r) {
                visible.row(r) = samples.row(order[static_cast<std::size_t>(start + r)]);
            }

            hidden_pos = visible * params.weights;
            hidden_pos.rowwise() += params.hidden_bias.transpose();
            hidden_pos = sigmoid_rows(std::move(hidden_pos));

            hidden_state = hidden_pos.unaryExpr([&](double p) { return unit(rng) < p ? 1.0 : 0.0; });
            for (std::size_t step = 0; step < config.cd_steps; ++step) {
                visible_neg = hidden_state * params.weights.transpose();
                visible_neg.rowwise() += params.visible_bias.transpose();
                visible_neg = sigmoid_rows(std::move(visible_neg));
                hidden_neg = visible_neg * params.weights;
                hidden_neg.rowwise() += params.hidden_bias.transpose();
                hidden_neg = sigmoid_rows(std::move(hidden_neg));
                if (step + 1 < config.cd_steps) {
                    hidden_state =
                        hidden_neg.unaryExpr([&](double p) { return unit(rng) < p ? 1.0 : 0.0; });
                }
            }

            const double rate = config.learning_rate / static_cast<double>(rows);
            params.weights.noalias() +=
                rate * (visible.transpose() * hidden_pos - visible_neg.transpose() * hidden_neg);
            params.visible_bias +=
                rate * (visible.colwise().sum() - visible_neg.colwise().sum()).transpose();
            params.hidden_bias +=
                rate * (hidden_pos.colwise().sum() - hidden_neg.colwise().sum()).transpose();
            squared_error += (visible - visible_neg).squaredNorm();
            ++updates;
        }
        if (!params.weights.allFinite() || !params.visible_bias.allFinite() ||
            !params.hidden_bias.allFinite()) {
            throw TrainingDivergedError(iteration, "train_cd: parameters became non-finite at iteration " +
                                                       std::to_string(iteration));
        }
    }

    if (report != nullptr) {
        report->iterations = config.n_iterations;
        report->updates = updates;
        report->reconstruction_error =
            squared_error / static_cast<double>(n_samples * n_visible);
    }
    return params;
}

RbmParams mirror_hidden_unit(const RbmParams& params, Eigen::Index j) {
    params.validate();
    if (j < 0 || j >= params.n_hidden()) throw ValidationError("mirror_hidden_unit: bad unit index");
    RbmParams out = params;
    out.visible_bias = params.visible_bias + params.weights.col(j);
    out.weights.col(j) = -params.weights.col(j);
    out.hidden_bias[j] = -params.hidden_bias[j];
    return out;
}

RbmParams canonical_orientation(const RbmParams& params) {
    params.validate();
    RbmParams out = params;
    for (Eigen::Index j = 0; j < params.n_hidden(); ++j) {
        const auto column = out.weights.col(j);
        double key = column.sum();
        if (key == 0.0) key = out.hidden_bias[j];
        for (Eigen::Index i = 0; key == 0.0 && i < column.size(); ++i) key = column[i];
        if (key < 0.0) out = mirror_hidden_unit(out, j);
    }
    return out;
}

double exact_log_likelihood(const RbmParams& params, const SampleMatrix& samples) {
    require_enumerable(params);
    validate_samples(samples);
    require_size(samples.cols(), params.n_visible(), "sample row");
    const double log_z = log_partition_function(params);
    const auto m = params.n_hidden();
    const std::uint64_t hidden_states = std::uint64_t{1} << m;
    Eigen::VectorXd h(m);
    std::vector<double> terms(hidden_states);
    double total = 0.0;
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        const Eigen::VectorXd x = samples.row(r).transpose();
        for (std::uint64_t s = 0; s < hidden_states; ++s) {
            fill_bits(s, h);
            terms[s] = -energy(params, x, h);
        }
        total += log_sum_exp(terms) - log_z;
    }
    return total / static_cast<double>(samples.rows());
}

RbmParams exact_log_likelihood_gradient(const RbmParams& params, const SampleMatrix& samples) {
    require_enumerable(params);
    validate_samples(samples);
    require_size(samples.cols(), params.n_visible(), "sample row");
    const auto n = params.n_visible();
    const auto m = params.n_hidden();

    RbmParams grad = zero_params(n, m);
    // Data term: E_data[x hᵀ] with h replaced by its exact conditional mean.
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
        const Eigen::VectorXd x = samples.row(r).transpose();
        require_binary(x, "sample row");
        const Eigen::VectorXd ph = hidden_posterior(params, x);
        grad.weights += x * ph.transpose();
        grad.visible_bias += x;
        grad.hidden_bias += ph;
    }
    const double inv_s = 1.0 / static_cast<double>(samples.rows());
    grad.weights *= inv_s;
    grad.visible_bias *= inv_s;
    grad.hidden_bias *= inv_s;

    // Model term from the enumerated joint.
    const auto neg_energy = all_negative_energies(params);
    const double log_z = log_sum_exp(neg_energy);
    Eigen::VectorXd x(n), h(m);
    for (std::uint64_t s = 0; s < neg_energy.size(); ++s) {
        const double p = std::exp(neg_energy[s] - log_z);
        fill_bits(s, x);
        fill_bits(s >> n, h);
        grad.weights -= p * x * h.transpose();
        grad.visible_bias -= p * x;
        grad.hidden_bias -= p * h;
    }
    return grad;
}

}  // namespace saliency_forge
