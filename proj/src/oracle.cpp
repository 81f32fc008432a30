#include "saliency_forge/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/npy.hpp"

namespace saliency_forge {

namespace {

bool pixel_is_baseline(const ImageTensor& image, std::size_t pixel, double baseline) {
    const std::size_t plane = image.pixel_count();
    for (std::size_t c = 0; c < image.channels; ++c) {
        if (image.data[c * plane + pixel] != baseline) return false;
    }
    return true;
}

void require_mask_shape(const StubSpec& spec, const ImageTensor& image) {
    if (spec.mask_height != image.height || spec.mask_width != image.width) {
        throw ValidationError("stub oracle: mask is " + std::to_string(spec.mask_height) + "x" +
                              std::to_string(spec.mask_width) + " but image is " +
                              std::to_string(image.height) + "x" + std::to_string(image.width));
    }
}

}  // namespace

double OracleScore::target_probability() const {
    if (probabilities.size() == 1) return probabilities.front();
    if (target_class < 0 || static_cast<std::size_t>(target_class) >= probabilities.size()) {
        throw ValidationError("oracle score has no entry for target class " +
                              std::to_string(target_class));
    }
    return probabilities[static_cast<std::size_t>(target_class)];
}

void OracleEndpoint::validate() const {
    if (max_batch < 1) throw ValidationError("oracle endpoint: max_batch must be >= 1");
    if (timeout.count() <= 0) throw ValidationError("oracle endpoint: timeout must be positive");
    if (transport == Transport::Network && address.empty()) {
        throw ValidationError("oracle endpoint: network transport needs an address");
    }
}

Oracle::Oracle(std::size_t max_batch) : max_batch_(max_batch) {
    if (max_batch_ < 1) throw ValidationError("oracle: max_batch must be >= 1");
}

std::vector<OracleScore> Oracle::score_batch(std::span<const ImageTensor> images,
                                             std::optional<int> target_class) const {
    std::vector<OracleScore> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += max_batch_) {
        const std::size_t count = std::min(max_batch_, images.size() - start);
        auto chunk = score_request(images.subspan(start, count), target_class);
        ++requests_;
        if (chunk.size() != count) {
            throw ProtocolError("oracle returned " + std::to_string(chunk.size()) +
                                " scores for " + std::to_string(count) + " images");
        }
        std::move(chunk.begin(), chunk.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<double> Oracle::target_scores(std::span<const ImageTensor> images,
                                          int target_class) const {
    const auto scores = score_batch(images, target_class);
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) out.push_back(s.target_probability());
    return out;
}

StubOracle::StubOracle(StubSpec spec, std::size_t max_batch)
    : Oracle(max_batch), spec_(std::move(spec)) {
    make_stub(spec_.kind, spec_);
}

double StubOracle::score_image(const ImageTensor& image) const {
    if (spec_.kind == "constant") return spec_.value;
    require_mask_shape(spec_, image);
    std::size_t designated = 0;
    std::size_t removed = 0;
    for (std::size_t p = 0; p < spec_.mask.size(); ++p) {
        if (spec_.mask[p] == 0) continue;
        ++designated;
        if (pixel_is_baseline(image, p, spec_.baseline)) ++removed;
    }
    if (designated == 0) return 1.0;
    if (spec_.kind == "fraction_remaining") {
        return static_cast<double>(designated - removed) / static_cast<double>(designated);
    }
    return removed == 0 ? 1.0 : 0.0;  // segment_critical
}

std::vector<OracleScore> StubOracle::score_request(std::span<const ImageTensor> images,
                                                   std::optional<int> target_class) const {
    std::vector<OracleScore> out;
    out.reserve(images.size());
    for (const auto& image : images) {
        const double s = score_image(image);
        if (target_class) {
            out.push_back(OracleScore{{s}, *target_class});
        } else {
            // Two-class view: class 1 is the scored class.
            out.push_back(OracleScore{{1.0 - s, s}, -1});
        }
    }
    return out;
}

FunctionOracle::FunctionOracle(ScoreFn fn, std::size_t max_batch)
    : Oracle(max_batch), fn_(std::move(fn)) {
    if (!fn_) throw ValidationError("function oracle: empty callable");
}

std::vector<OracleScore> FunctionOracle::score_request(std::span<const ImageTensor> images,
                                                       std::optional<int> target_class) const {
    std::vector<OracleScore> out;
    out.reserve(images.size());
    const int target = target_class.value_or(0);
    for (const auto& image : images) {
        const double s = fn_(image, target);
        if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
            throw ProtocolError("function oracle returned " + std::to_string(s) +
                                ", expected a probability");
        }
        out.push_back(OracleScore{{s}, target});
    }
    return out;
}

OracleEndpoint make_stub(std::string_view kind, StubSpec params) {
    params.kind = std::string(kind);
    if (kind == "constant") {
        if (!std::isfinite(params.value) || params.value < 0.0 || params.value > 1.0) {
            throw ValidationError("constant stub: value must be a probability");
        }
    } else if (kind == "fraction_remaining" || kind == "segment_critical") {
        if (params.mask.size() != params.mask_height * params.mask_width) {
            throw ValidationError(std::string(kind) + " stub: mask size does not match its shape");
        }
    } else {
        throw ValidationError("unknown stub oracle kind '" + std::string(kind) +
                              "' (expected constant, fraction_remaining or segment_critical)");
    }
    OracleEndpoint endpoint;
    endpoint.transport = Transport::Stub;
    endpoint.stub = std::move(params);
    return endpoint;
}

std::unique_ptr<Oracle> connect(const OracleEndpoint& endpoint) {
    endpoint.validate();
    if (endpoint.transport == Transport::Stub) {
        return std::make_unique<StubOracle>(endpoint.stub, endpoint.max_batch);
    }
    return std::make_unique<HttpOracle>(endpoint);
}

std::string encode_predict_request(std::span<const ImageTensor> images) {
    if (images.empty()) throw ValidationError("predict request: empty batch");
    const auto& first = images.front();
    std::vector<double> payload;
    payload.reserve(images.size() * first.data.size());
    for (const auto& image : images) {
        if (image.channels != first.channels || image.height != first.height ||
            image.width != first.width) {
            throw ValidationError("predict request: images in one batch must share C×H×W");
        }
        payload.insert(payload.end(), image.data.begin(), image.data.end());
    }
    const std::size_t shape[] = {images.size(), first.channels, first.height, first.width};
    return encode_npy(shape, payload, NpyDtype::Float32);
}

std::vector<ImageTensor> decode_predict_request(std::string_view body) {
    const auto array = decode_npy(body, "predict request body");
    if (array.shape.size() != 4) {
        throw ProtocolError("predict request: expected a B×C×H×W array, got rank " +
                            std::to_string(array.shape.size()));
    }
    const std::size_t b = array.shape[0], c = array.shape[1], h = array.shape[2], w = array.shape[3];
    const std::size_t per = c * h * w;
    std::vector<ImageTensor> images;
    images.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> data(array.data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                 array.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        images.push_back(make_image(c, h, w, std::move(data)));
    }
    return images;
}

}  // namespace saliency_forge
