#pragma once

#include <cstddef>
#include <vector>

#include "saliency_forge/core.hpp"

namespace saliency_forge {

struct SuperpixelSegmentation {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> labels;  // row-major, values 0..n_segments-1
    int n_segments = 0;

    // Contiguous non-empty label set, full coverage, 4-connected segments.
    void validate() const;
};

inline constexpr std::size_t kDefaultSlicSegments = 60;
inline constexpr double kDefaultSlicCompactness = 10.0;
inline constexpr int kSlicIterations = 10;

// SLIC in CIELAB (3 channels) or raw intensity (1 channel). The returned
// segment count may differ slightly from `k`. `seed` is accepted for interface
// stability; the algorithm itself draws no random numbers.
SuperpixelSegmentation slic(const ImageTensor& image, std::size_t k,
                            double compactness = kDefaultSlicCompactness, RngSeed seed = {});

// Mean attribution per segment.
std::vector<double> segment_relevance(const SuperpixelSegmentation& segmentation,
                                      const AttributionMap& map);

std::vector<std::size_t> segment_sizes(const SuperpixelSegmentation& segmentation);

// True when every label's pixel set is 4-connected.
bool segments_are_connected(const SuperpixelSegmentation& segmentation);

}  // namespace saliency_forge
