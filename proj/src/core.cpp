#include "saliency_forge/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "saliency_forge/errors.hpp"

namespace saliency_forge {

namespace {

void require_finite(const std::vector<double>& values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw ValidationError(std::string(what) + ": non-finite value at index " +
                                  std::to_string(i));
        }
    }
}

}  // namespace

RngSeed derive_seed(RngSeed base, std::uint64_t stream) noexcept {
    std::uint64_t z = base.value ^ (stream * 0x9E3779B97F4A7C15ULL);
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return RngSeed{z ^ (z >> 31)};
}

std::uint64_t stable_hash(std::string_view text) noexcept {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

void ImageTensor::validate() const {
    if (channels != 1 && channels != 3) {
        throw ValidationError("image: channel count must be 1 or 3, got " +
                              std::to_string(channels));
    }
    if (height == 0 || width == 0) throw ValidationError("image: empty spatial extent");
    if (data.size() != channels * height * width) {
        throw ValidationError("image: data size does not match C×H×W");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]) || data[i] < 0.0 || data[i] > 1.0) {
            throw ValidationError("image: value outside [0,1] at index " + std::to_string(i));
        }
    }
}

ImageTensor make_image(std::size_t channels, std::size_t height, std::size_t width,
                       std::vector<double> data, int label) {
    ImageTensor image{channels, height, width, std::move(data), label};
    image.validate();
    return image;
}

void AttributionMap::validate() const {
    if (height == 0 || width == 0) throw ValidationError("attribution map: empty shape");
    if (scores.size() != height * width) {
        throw ValidationError("attribution map: " + std::to_string(scores.size()) +
                              " scores for shape " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
    require_finite(scores, "attribution map");
    if (normalized) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] < 0.0 || scores[i] > 1.0) {
                throw ValidationError("attribution map: normalized value outside [0,1] at index " +
                                      std::to_string(i));
            }
        }
    }
}

AttributionMap make_map(std::size_t height, std::size_t width, std::vector<double> scores,
                        std::string source, bool normalized) {
    AttributionMap map{height, width, std::move(scores), std::move(source), normalized};
    map.validate();
    return map;
}

void AttributionStack::validate() const {
    if (maps.empty()) throw ValidationError("attribution stack '" + id + "' holds no maps");
    const auto h = maps.front().height;
    const auto w = maps.front().width;
    for (std::size_t n = 0; n < maps.size(); ++n) {
        maps[n].validate();
        if (maps[n].height != h || maps[n].width != w) {
            throw ValidationError("attribution stack '" + id + "': map " + std::to_string(n) +
                                  " (" + maps[n].source + ") is " +
                                  std::to_string(maps[n].height) + "x" +
                                  std::to_string(maps[n].width) + ", expected " +
                                  std::to_string(h) + "x" + std::to_string(w));
        }
    }
    if (image) {
        image->validate();
        if (image->height != h || image->width != w) {
            throw ValidationError("attribution stack '" + id +
                                  "': image shape differs from map shape");
        }
    }
}

void AttributionStack::validate_for_ensemble() const {
    validate();
    if (maps.size() < 2) {
        throw ValidationError("ensembles need at least 2 maps, stack '" + id + "' has " +
                              std::to_string(maps.size()));
    }
}

AttributionMap normalize_map(const AttributionMap& map) {
    require_finite(map.scores, "normalize_map");
    AttributionMap out = map;
    double lo = 0.0;
    double hi = 0.0;
    bool first = true;
    for (double& v : out.scores) {
        v = std::max(v, 0.0);
        if (first) {
            lo = hi = v;
            first = false;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    const double range = hi - lo;
    for (double& v : out.scores) {
        v = range > 0.0 ? (v - lo) / range : 0.0;
    }
    out.normalized = true;
    return out;
}

AttributionMap reduce_channels(const AttributionGrid& grid, std::string source) {
    if (grid.channels == 0 || grid.height == 0 || grid.width == 0) {
        throw ValidationError("reduce_channels: zero-size grid");
    }
    const std::size_t plane = grid.height * grid.width;
    if (grid.data.size() != grid.channels * plane) {
        throw ValidationError("reduce_channels: data size does not match C×H×W");
    }
    require_finite(grid.data, "reduce_channels");
    std::vector<double> scores(plane, 0.0);
    for (std::size_t c = 0; c < grid.channels; ++c) {
        for (std::size_t p = 0; p < plane; ++p) scores[p] += grid.data[c * plane + p];
    }
    if (grid.channels > 1) {
        for (double& v : scores) v /= static_cast<double>(grid.channels);
    }
    return AttributionMap{grid.height, grid.width, std::move(scores), std::move(source), false};
}

AttributionMap make_noise_map(std::size_t height, std::size_t width, RngSeed seed) {
    if (height == 0 || width == 0) throw ValidationError("make_noise_map: empty shape");
    std::mt19937_64 rng(seed.value);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> scores(height * width);
    for (double& v : scores) v = normal(rng);
    return AttributionMap{height, width, std::move(scores), "noise", false};
}

AttributionMap image_as_map(const ImageTensor& image) {
    image.validate();
    AttributionGrid grid{image.channels, image.height, image.width, image.data};
    return normalize_map(reduce_channels(grid, "original_image"));
}

AttributionStack normalize_stack(const AttributionStack& stack) {
    AttributionStack out = stack;
    for (auto& m : out.maps) m = normalize_map(m);
    return out;
}

std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace saliency_forge
