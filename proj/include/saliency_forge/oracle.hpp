#pragma once
// Black-box classifier access: deterministic stub oracles for tests and an
// HTTP client speaking the /predict + /healthz protocol.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saliency_forge/core.hpp"

namespace saliency_forge {

struct OracleScore {
    // Either a full distribution over classes or a single target-class probability.
    std::vector<double> probabilities;
    int target_class = -1;

    double target_probability() const;
};

enum class Transport { Network, Stub };

struct StubSpec {
    std::string kind;                // constant | fraction_remaining | segment_critical
    double value = 1.0;              // constant
    std::size_t mask_height = 0;     // fraction_remaining / segment_critical
    std::size_t mask_width = 0;
    std::vector<std::uint8_t> mask;  // row-major H×W, nonzero = designated pixel
    double baseline = 0.0;           // a pixel counts as removed when every channel equals this
};

struct OracleEndpoint {
    Transport transport = Transport::Stub;
    std::string address;  // e.g. http://127.0.0.1:8080
    StubSpec stub;
    std::chrono::milliseconds timeout{30000};
    std::size_t max_batch = 32;

    void validate() const;
};

class Oracle {
public:
    explicit Oracle(std::size_t max_batch);
    virtual ~Oracle() = default;
    Oracle(const Oracle&) = delete;
    Oracle& operator=(const Oracle&) = delete;

    // One score per image, in order. Splits into requests of at most max_batch().
    std::vector<OracleScore> score_batch(std::span<const ImageTensor> images,
                                         std::optional<int> target_class) const;
    std::vector<double> target_scores(std::span<const ImageTensor> images, int target_class) const;

    std::size_t max_batch() const noexcept { return max_batch_; }
    std::size_t request_count() const noexcept { return requests_.load(); }

protected:
    virtual std::vector<OracleScore> score_request(std::span<const ImageTensor> images,
                                                   std::optional<int> target_class) const = 0;

private:
    std::size_t max_batch_;
    mutable std::atomic<std::size_t> requests_{0};
};

// Analytic scores, pure and deterministic.
class StubOracle final : public Oracle {
public:
    explicit StubOracle(StubSpec spec, std::size_t max_batch = 32);

    double score_image(const ImageTensor& image) const;
    const StubSpec& spec() const noexcept { return spec_; }

protected:
    std::vector<OracleScore> score_request(std::span<const ImageTensor> images,
                                           std::optional<int> target_class) const override;

private:
    StubSpec spec_;
};

// Wraps a callable returning the target-class probability of one image.
class FunctionOracle final : public Oracle {
public:
    using ScoreFn = std::function<double(const ImageTensor&, int target_class)>;
    explicit FunctionOracle(ScoreFn fn, std::size_t max_batch = 32);

protected:
    std::vector<OracleScore> score_request(std::span<const ImageTensor> images,
                                           std::optional<int> target_class) const override;

private:
    ScoreFn fn_;
};

// Client for POST /predict and GET /healthz. Safe for concurrent use.
class HttpOracle final : public Oracle {
public:
    explicit HttpOracle(OracleEndpoint endpoint);

    // Returns the model name reported by /healthz; throws OracleUnavailableError.
    std::string health() const;
    const OracleEndpoint& endpoint() const noexcept { return endpoint_; }

    // Delays before retries 1..3.
    static constexpr std::chrono::milliseconds kRetryDelays[] = {
        std::chrono::milliseconds(100), std::chrono::milliseconds(400),
        std::chrono::milliseconds(1600)};

protected:
    std::vector<OracleScore> score_request(std::span<const ImageTensor> images,
                                           std::optional<int> target_class) const override;

private:
    OracleEndpoint endpoint_;
};

// Validates kind and parameters; unknown kinds raise ValidationError.
OracleEndpoint make_stub(std::string_view kind, StubSpec params = {});

std::unique_ptr<Oracle> connect(const OracleEndpoint& endpoint);

// Request body for /predict: NPY float32 array of shape B×C×H×W.
std::string encode_predict_request(std::span<const ImageTensor> images);
std::vector<ImageTensor> decode_predict_request(std::string_view body);

// Serves an oracle over the /predict + /healthz protocol.
class OracleServer {
public:
    OracleServer(std::shared_ptr<const Oracle> oracle, std::string model_name);
    ~OracleServer();
    OracleServer(const OracleServer&) = delete;
    OracleServer& operator=(const OracleServer&) = delete;

    // Binds (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    void listen();              // blocks until stop()
    void start_background();    // listen() on an owned thread
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace saliency_forge
