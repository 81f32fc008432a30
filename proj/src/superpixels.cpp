#include "saliency_forge/superpixels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "saliency_forge/errors.hpp"

namespace saliency_forge {

namespace {

struct Center {
    std::vector<double> color;
    double y = 0.0;
    double x = 0.0;
};

double srgb_to_linear(double c) {
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3.0 * delta * delta) + 4.0 / 29.0;
}

// Feature planes: L, a, b for colour images, intensity for grayscale.
std::vector<std::vector<double>> color_features(const ImageTensor& image) {
    const std::size_t plane = image.pixel_count();
    if (image.channels == 1) return {image.data};
    std::vector<std::vector<double>> lab(3, std::vector<double>(plane));
    constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;  // D65
    for (std::size_t p = 0; p < plane; ++p) {
        const double r = srgb_to_linear(image.data[p]);
        const double g = srgb_to_linear(image.data[plane + p]);
        const double b = srgb_to_linear(image.data[2 * plane + p]);
        const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        const double fx = lab_f(x / xn), fy = lab_f(y / yn), fz = lab_f(z / zn);
        lab[0][p] = 116.0 * fy - 16.0;
        lab[1][p] = 500.0 * (fx - fy);
        lab[2][p] = 200.0 * (fy - fz);
    }
    return lab;
}

double color_distance_sq(const std::vector<std::vector<double>>& features, std::size_t p,
                         const std::vector<double>& color) {
    double d = 0.0;
    for (std::size_t c = 0; c < features.size(); ++c) {
        const double diff = features[c][p] - color[c];
        d += diff * diff;
    }
    return d;
}

// Labels 4-connected components; returns the component count.
int connected_components(const std::vector<int>& labels, std::size_t h, std::size_t w,
                         std::vector<int>& component) {
    component.assign(labels.size(), -1);
    int count = 0;
    std::vector<std::size_t> queue;
    for (std::size_t start = 0; start < labels.size(); ++start) {
        if (component[start] >= 0) continue;
        component[start] = count;
        queue.assign(1, start);
        for (std::size_t head = 0; head < queue.size(); ++head) {
            const std::size_t p = queue[head];
            const std::size_t y = p / w, x = p % w;
            const std::array<std::pair<bool, std::size_t>, 4> nbrs = {{
                {y > 0, p - w}, {y + 1 < h, p + w}, {x > 0, p - 1}, {x + 1 < w, p + 1}}};
            for (const auto& [ok, q] : nbrs) {
                if (ok && component[q] < 0 && labels[q] == labels[p]) {
                    component[q] = count;
                    queue.push_back(q);
                }
            }
        }
        ++count;
    }
    return count;
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
}

// Keeps each label's largest component and merges every other fragment into
// its largest adjacent region, then relabels 0..K-1 in raster order.
std::vector<int> enforce_connectivity(const std::vector<int>& labels, std::size_t h,
                                      std::size_t w, int n_labels) {
    std::vector<int> component;
    const int n_comp = connected_components(labels, h, w, component);
    std::vector<std::size_t> size(static_cast<std::size_t>(n_comp), 0);
    std::vector<int> comp_label(static_cast<std::size_t>(n_comp), 0);
    for (std::size_t p = 0; p < labels.size(); ++p) {
        ++size[static_cast<std::size_t>(component[p])];
        comp_label[static_cast<std::size_t>(component[p])] = labels[p];
    }
    std::vector<int> keeper(static_cast<std::size_t>(n_labels), -1);
    for (int c = 0; c < n_comp; ++c) {
        auto& k = keeper[static_cast<std::size_t>(comp_label[static_cast<std::size_t>(c)])];
        if (k < 0 || size[static_cast<std::size_t>(c)] > size[static_cast<std::size_t>(k)]) k = c;
    }

    std::vector<std::size_t> orphans;
    for (int c = 0; c < n_comp; ++c) {
        if (keeper[static_cast<std::size_t>(comp_label[static_cast<std::size_t>(c)])] != c) {
            orphans.push_back(static_cast<std::size_t>(c));
        }
    }
    std::stable_sort(orphans.begin(), orphans.end(),
                     [&](std::size_t a, std::size_t b) { return size[a] < size[b]; });

    // Component adjacency (each pair listed from both sides).
    std::vector<std::vector<std::size_t>> adjacent(static_cast<std::size_t>(n_comp));
    for (std::size_t p = 0; p < labels.size(); ++p) {
        const std::size_t y = p / w, x = p % w;
        const auto a = static_cast<std::size_t>(component[p]);
        if (x + 1 < w && component[p + 1] != component[p]) {
            adjacent[a].push_back(static_cast<std::size_t>(component[p + 1]));
            adjacent[static_cast<std::size_t>(component[p + 1])].push_back(a);
        }
        if (y + 1 < h && component[p + w] != component[p]) {
            adjacent[a].push_back(static_cast<std::size_t>(component[p + w]));
            adjacent[static_cast<std::size_t>(component[p + w])].push_back(a);
        }
    }

    std::vector<std::size_t> parent(static_cast<std::size_t>(n_comp));
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    std::vector<std::size_t> merged_size = size;
    for (std::size_t orphan : orphans) {
        const std::size_t self = find_root(parent, orphan);
        std::size_t best = self;
        std::size_t best_size = 0;
        for (std::size_t nb : adjacent[orphan]) {
            const std::size_t root = find_root(parent, nb);
            if (root == self) continue;
            if (merged_size[root] > best_size || (merged_size[root] == best_size && root < best)) {
                best = root;
                best_size = merged_size[root];
            }
        }
        if (best == self) continue;  // isolated: only possible for a single-region image
        parent[self] = best;
        merged_size[best] += merged_size[self];
    }

    std::vector<int> relabel(static_cast<std::size_t>(n_comp), -1);
    std::vector<int> out(labels.size());
    int next = 0;
    for (std::size_t p = 0; p < labels.size(); ++p) {
        const std::size_t root = find_root(parent, static_cast<std::size_t>(component[p]));
        if (relabel[root] < 0) relabel[root] = next++;
        out[p] = relabel[root];
    }
    return out;
}

}  // namespace

void SuperpixelSegmentation::validate() const {
    if (height == 0 || width == 0 || labels.size() != height * width) {
        throw ValidationError("segmentation: label grid does not match its shape");
    }
    if (n_segments < 1) throw ValidationError("segmentation: no segments");
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_segments), 0);
    for (int l : labels) {
        if (l < 0 || l >= n_segments) {
            throw ValidationError("segmentation: label " + std::to_string(l) + " out of range");
        }
        ++counts[static_cast<std::size_t>(l)];
    }
    for (std::size_t k = 0; k < counts.size(); ++k) {
        if (counts[k] == 0) throw ValidationError("segmentation: label " + std::to_string(k) + " is empty");
    }
    if (!segments_are_connected(*this)) throw ValidationError("segmentation: disconnected segment");
}

SuperpixelSegmentation slic(const ImageTensor& image, std::size_t k, double compactness,
                            RngSeed /*seed*/) {
    image.validate();
    const std::size_t h = image.height, w = image.width, n = h * w;
    if (k < 1 || k > n) {
        throw ValidationError("slic: k must lie in [1, " + std::to_string(n) + "], got " +
                              std::to_string(k));
    }
    if (!(compactness > 0.0) || !std::isfinite(compactness)) {
        throw ValidationError("slic: compactness must be positive");
    }

    const auto features = color_features(image);
    const double step = std::sqrt(static_cast<double>(n) / static_cast<double>(k));

    // Grid of ny × nx seeds with roughly square cells.
    auto nx = static_cast<std::size_t>(std::max(
        1.0, std::round(std::sqrt(static_cast<double>(k) * static_cast<double>(w) /
                                  static_cast<double>(h)))));
    nx = std::min({nx, w, k});
    auto ny = static_cast<std::size_t>(
        std::max(1.0, std::round(static_cast<double>(k) / static_cast<double>(nx))));
    ny = std::min(ny, h);
    if (k == 1) nx = ny = 1;
    const double cell_y = static_cast<double>(h) / static_cast<double>(ny);
    const double cell_x = static_cast<double>(w) / static_cast<double>(nx);

    auto gradient = [&](std::size_t y, std::size_t x) {
        const std::size_t y0 = y > 0 ? y - 1 : y, y1 = y + 1 < h ? y + 1 : y;
        const std::size_t x0 = x > 0 ? x - 1 : x, x1 = x + 1 < w ? x + 1 : x;
        double g = 0.0;
        for (const auto& f : features) {
            const double dy = f[y1 * w + x] - f[y0 * w + x];
            const double dx = f[y * w + x1] - f[y * w + x0];
            g += dy * dy + dx * dx;
        }
        return g;
    };

    std::vector<Center> centers;
    centers.reserve(nx * ny);
    for (std::size_t iy = 0; iy < ny; ++iy) {
        for (std::size_t ix = 0; ix < nx; ++ix) {
            // Cell centre in pixel coordinates; it snaps to a pixel only when the
            // 3×3 neighbourhood offers a strictly lower gradient.
            const double fy = (static_cast<double>(iy) + 0.5) * cell_y - 0.5;
            const double fx = (static_cast<double>(ix) + 0.5) * cell_x - 0.5;
            const auto cy = std::min(static_cast<std::size_t>(std::lround(fy)), h - 1);
            const auto cx = std::min(static_cast<std::size_t>(std::lround(fx)), w - 1);
            std::size_t by = cy, bx = cx;
            double best = gradient(cy, cx);
            for (std::size_t yy = cy > 0 ? cy - 1 : cy; yy <= std::min(cy + 1, h - 1); ++yy) {
                for (std::size_t xx = cx > 0 ? cx - 1 : cx; xx <= std::min(cx + 1, w - 1); ++xx) {
                    const double g = gradient(yy, xx);
                    if (g < best) {
                        best = g;
                        by = yy;
                        bx = xx;
                    }
                }
            }
            Center c;
            const bool moved = by != cy || bx != cx;
            c.y = moved ? static_cast<double>(by) : fy;
            c.x = moved ? static_cast<double>(bx) : fx;
            for (const auto& f : features) c.color.push_back(f[by * w + bx]);
            centers.push_back(std::move(c));
        }
    }

    const double spatial_weight = (compactness / step) * (compactness / step);
    const auto window = static_cast<std::ptrdiff_t>(std::ceil(step));
    std::vector<int> labels(n, -1);
    std::vector<double> distance(n);

    auto full_distance = [&](std::size_t p, const Center& c) {
        const double dy = static_cast<double>(p / w) - c.y;
        const double dx = static_cast<double>(p % w) - c.x;
        return color_distance_sq(features, p, c.color) + (dy * dy + dx * dx) * spatial_weight;
    };

    for (int iteration = 0; iteration < kSlicIterations; ++iteration) {
        std::fill(distance.begin(), distance.end(), std::numeric_limits<double>::infinity());
        std::fill(labels.begin(), labels.end(), -1);
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const auto& c = centers[ci];
            const auto cy = static_cast<std::ptrdiff_t>(std::lround(c.y));
            const auto cx = static_cast<std::ptrdiff_t>(std::lround(c.x));
            const auto y0 = std::max<std::ptrdiff_t>(0, cy - window);
            const auto y1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1, cy + window);
            const auto x0 = std::max<std::ptrdiff_t>(0, cx - window);
            const auto x1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1, cx + window);
            for (auto y = y0; y <= y1; ++y) {
                for (auto x = x0; x <= x1; ++x) {
                    const auto p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
                    const double d = full_distance(p, c);
                    if (d < distance[p]) {
                        distance[p] = d;
                        labels[p] = static_cast<int>(ci);
                    }
                }
            }
        }
        // Pixels outside every search window fall back to the global nearest centre.
        for (std::size_t p = 0; p < n; ++p) {
            if (labels[p] >= 0) continue;
            for (std::size_t ci = 0; ci < centers.size(); ++ci) {
                const double d = full_distance(p, centers[ci]);
                if (d < distance[p]) {
                    distance[p] = d;
                    labels[p] = static_cast<int>(ci);
                }
            }
        }

        std::vector<Center> sums(centers.size());
        std::vector<std::size_t> counts(centers.size(), 0);
        for (auto& s : sums) s.color.assign(features.size(), 0.0);
        for (std::size_t p = 0; p < n; ++p) {
            const auto ci = static_cast<std::size_t>(labels[p]);
            ++counts[ci];
            sums[ci].y += static_cast<double>(p / w);
            sums[ci].x += static_cast<double>(p % w);
            for (std::size_t f = 0; f < features.size(); ++f) sums[ci].color[f] += features[f][p];
        }
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            if (counts[ci] == 0) continue;
            const double inv = 1.0 / static_cast<double>(counts[ci]);
            centers[ci].y = sums[ci].y * inv;
            centers[ci].x = sums[ci].x * inv;
            for (std::size_t f = 0; f < features.size(); ++f) centers[ci].color[f] = sums[ci].color[f] * inv;
        }
    }

    SuperpixelSegmentation seg;
    seg.height = h;
    seg.width = w;
    seg.labels = enforce_connectivity(labels, h, w, static_cast<int>(centers.size()));
    seg.n_segments = *std::max_element(seg.labels.begin(), seg.labels.end()) + 1;
    return seg;
}

std::vector<double> segment_relevance(const SuperpixelSegmentation& segmentation,
                                      const AttributionMap& map) {
    if (map.height != segmentation.height || map.width != segmentation.width) {
        throw ValidationError("segment_relevance: map is " + std::to_string(map.height) + "x" +
                              std::to_string(map.width) + ", segmentation is " +
                              std::to_string(segmentation.height) + "x" +
                              std::to_string(segmentation.width));
    }
    map.validate();
    const auto k = static_cast<std::size_t>(segmentation.n_segments);
    std::vector<double> sums(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t p = 0; p < segmentation.labels.size(); ++p) {
        const int l = segmentation.labels[p];
        if (l < 0 || static_cast<std::size_t>(l) >= k) {
            throw ValidationError("segment_relevance: label out of range");
        }
        sums[static_cast<std::size_t>(l)] += map.scores[p];
        ++counts[static_cast<std::size_t>(l)];
    }
    for (std::size_t i = 0; i < k; ++i) {
        if (counts[i] == 0) throw ValidationError("segment_relevance: empty segment " + std::to_string(i));
        sums[i] /= static_cast<double>(counts[i]);
    }
    return sums;
}

std::vector<std::size_t> segment_sizes(const SuperpixelSegmentation& segmentation) {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(segmentation.n_segments, 0)), 0);
    for (int l : segmentation.labels) {
        if (l >= 0 && static_cast<std::size_t>(l) < sizes.size()) ++sizes[static_cast<std::size_t>(l)];
    }
    return sizes;
}

bool segments_are_connected(const SuperpixelSegmentation& segmentation) {
    if (segmentation.labels.size() != segmentation.height * segmentation.width) return false;
    std::vector<int> component;
    connected_components(segmentation.labels, segmentation.height, segmentation.width, component);
    std::vector<int> first_component(static_cast<std::size_t>(std::max(segmentation.n_segments, 0)), -1);
    for (std::size_t p = 0; p < segmentation.labels.size(); ++p) {
        const int l = segmentation.labels[p];
        if (l < 0 || l >= segmentation.n_segments) return false;
        auto& fc = first_component[static_cast<std::size_t>(l)];
        if (fc < 0) fc = component[p];
        else if (fc != component[p]) return false;
    }
    return true;
}

}  // namespace saliency_forge
