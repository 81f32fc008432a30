#pragma once
// Images, attribution maps and stacks, plus the normalization pipeline shared
// by the ensembles and the metrics.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace saliency_forge {

// Identical seeds yield bit-identical stochastic outputs.
struct RngSeed {
    std::uint64_t value = 0;

    friend bool operator==(RngSeed, RngSeed) = default;
};

// Derives an independent stream seed (splitmix64 finalizer over base ^ stream).
RngSeed derive_seed(RngSeed base, std::uint64_t stream) noexcept;

// FNV-1a 64-bit; turns image ids into seed streams.
std::uint64_t stable_hash(std::string_view text) noexcept;

// C×H×W grid in [0,1], row-major, plus the class label the image belongs to.
struct ImageTensor {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;
    int label = 0;

    std::size_t pixel_count() const noexcept { return height * width; }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return data[(c * height + y) * width + x];
    }

    // Throws ValidationError unless C ∈ {1,3}, H,W ≥ 1 and all values finite in [0,1].
    void validate() const;
};

ImageTensor make_image(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<double> data, int label = 0);

struct AttributionMap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> scores;  // row-major H×W
    std::string source;
    bool normalized = false;

    std::size_t size() const noexcept { return scores.size(); }
    double at(std::size_t y, std::size_t x) const { return scores[y * width + x]; }

    // Finite values, consistent shape, and the [0,1] range when normalized.
    void validate() const;
};

AttributionMap make_map(std::size_t height, std::size_t width, std::vector<double> scores,
                        std::string source = {}, bool normalized = false);

// Raw per-channel attributions as produced by most explainers.
struct AttributionGrid {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> data;  // C×H×W
};

struct AttributionStack {
    std::string id;
    std::vector<AttributionMap> maps;
    std::optional<ImageTensor> image;

    std::size_t height() const noexcept { return maps.empty() ? 0 : maps.front().height; }
    std::size_t width() const noexcept { return maps.empty() ? 0 : maps.front().width; }

    // All maps share one H×W matching the image, when present.
    void validate() const;
    // validate() plus N ≥ 2.
    void validate_for_ensemble() const;
};

// Clips negatives to zero then min-max scales into [0,1]; constant maps become all zeros.
AttributionMap normalize_map(const AttributionMap& map);

// Per-pixel channel mean.
AttributionMap reduce_channels(const AttributionGrid& grid, std::string source = {});

// I.i.d. standard normal samples tagged "noise".
AttributionMap make_noise_map(std::size_t height, std::size_t width, RngSeed seed);

// The image itself as a baseline map: channel mean, then normalize_map.
AttributionMap image_as_map(const ImageTensor& image);

// Copy of the stack with every map normalized.
AttributionStack normalize_stack(const AttributionStack& stack);

// Sort pixel indices by descending score, ties by ascending index.
std::vector<std::size_t> descending_order(const std::vector<double>& scores);

}  // namespace saliency_forge
