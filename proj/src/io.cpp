#include "saliency_forge/io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <span>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "saliency_forge/errors.hpp"
#include "saliency_forge/npy.hpp"

namespace saliency_forge {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json parse_manifest(const fs::path& path) {
    const std::string text = read_text_file(path);
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        throw IoError("manifest '" + path.string() + "' is empty");
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw IoError("manifest '" + path.string() + "' must be a JSON object");
    const int version = doc.value("schema_version", 0);
    if (version != kSchemaVersion) {
        throw IoError("manifest '" + path.string() + "' has schema_version " +
                      std::to_string(version) + ", expected " + std::to_string(kSchemaVersion));
    }
    return doc;
}

fs::path resolve(const fs::path& manifest, const std::string& entry) {
    fs::path p(entry);
    return p.is_absolute() ? p : manifest.parent_path() / p;
}

template <typename T>
T field(const json& doc, const char* key, const fs::path& path) {
    if (!doc.contains(key)) throw IoError("manifest '" + path.string() + "' lacks \"" + key + "\"");
    try {
        return doc.at(key).get<T>();
    } catch (const json::exception& e) {
        throw IoError("manifest '" + path.string() + "': bad \"" + key + "\": " + e.what());
    }
}

}  // namespace

std::string safe_name(const std::string& text) {
    std::string out;
    for (char c : text) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
    }
    return out.empty() ? "map" : out;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

ImageTensor load_image(const fs::path& path, int label) {
    auto array = read_npy(path);
    ImageTensor image;
    image.label = label;
    if (array.shape.size() == 2) {
        image.channels = 1;
        image.height = array.shape[0];
        image.width = array.shape[1];
    } else if (array.shape.size() == 3) {
        image.channels = array.shape[0];
        image.height = array.shape[1];
        image.width = array.shape[2];
    } else {
        throw IoError("image '" + path.string() + "' must be H×W or C×H×W");
    }
    image.data = std::move(array.data);
    try {
        image.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("image '" + path.string() + "': " + e.what());
    }
    return image;
}

void save_image(const ImageTensor& image, const fs::path& path) {
    image.validate();
    const std::size_t shape[] = {image.channels, image.height, image.width};
    write_npy(path, shape, image.data, NpyDtype::Float64);
}

AttributionMap load_map(const fs::path& path, std::string source) {
    auto array = read_npy(path);
    AttributionMap map;
    if (array.shape.size() == 2) {
        map = AttributionMap{array.shape[0], array.shape[1], std::move(array.data), std::move(source), false};
    } else if (array.shape.size() == 3) {
        map = reduce_channels(AttributionGrid{array.shape[0], array.shape[1], array.shape[2],
                                              std::move(array.data)},
                              std::move(source));
    } else {
        throw IoError("attribution '" + path.string() + "' must be H×W or C×H×W");
    }
    try {
        map.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("attribution '" + path.string() + "': " + e.what());
    }
    return map;
}

void save_map(const AttributionMap& map, const fs::path& path) {
    map.validate();
    const std::size_t shape[] = {map.height, map.width};
    write_npy(path, shape, map.scores, NpyDtype::Float64);
}

AttributionStack load_stack(const fs::path& manifest) {
    const json doc = parse_manifest(manifest);
    if (doc.value("kind", "attribution_stack") != "attribution_stack") {
        throw IoError("manifest '" + manifest.string() + "' is not an attribution stack");
    }
    AttributionStack stack;
    stack.id = doc.value("id", manifest.stem().string());
    const int label = doc.value("label", 0);

    const json maps = field<json>(doc, "maps", manifest);
    if (!maps.is_array()) throw IoError("manifest '" + manifest.string() + "': \"maps\" must be a list");
    for (const auto& entry : maps) {
        const auto rel = field<std::string>(entry, "path", manifest);
        auto map = load_map(resolve(manifest, rel), entry.value("source", fs::path(rel).stem().string()));
        if (entry.value("normalized", false)) {
            map.normalized = true;
            map.validate();
        }
        stack.maps.push_back(std::move(map));
    }
    if (doc.contains("image") && !doc["image"].is_null()) {
        stack.image = load_image(resolve(manifest, field<std::string>(doc, "image", manifest)), label);
    }
    if (doc.contains("shape")) {
        const auto shape = field<std::vector<std::size_t>>(doc, "shape", manifest);
        if (shape.size() != 2 || (!stack.maps.empty() &&
                                  (shape[0] != stack.height() || shape[1] != stack.width()))) {
            throw ValidationError("stack '" + stack.id + "': declared shape does not match its maps");
        }
    }
    stack.validate();
    return stack;
}

void save_stack(const AttributionStack& stack, const fs::path& manifest) {
    stack.validate();
    const fs::path base = manifest.parent_path();
    const std::string folder = safe_name(stack.id.empty() ? manifest.stem().string() : stack.id);
    fs::create_directories(base / folder);

    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["kind"] = "attribution_stack";
    doc["id"] = stack.id;
    doc["label"] = stack.image ? stack.image->label : 0;
    doc["shape"] = {stack.height(), stack.width()};
    if (stack.image) {
        const fs::path rel = fs::path(folder) / "image.npy";
        save_image(*stack.image, base / rel);
        doc["image"] = rel.generic_string();
    }
    json maps = json::array();
    for (std::size_t n = 0; n < stack.maps.size(); ++n) {
        std::string name = std::to_string(n) + "_" + safe_name(stack.maps[n].source);
        const fs::path rel = fs::path(folder) / (name + ".npy");
        save_map(stack.maps[n], base / rel);
        maps.push_back({{"path", rel.generic_string()},
                        {"source", stack.maps[n].source},
                        {"normalized", stack.maps[n].normalized}});
    }
    doc["maps"] = std::move(maps);
    write_text_file(manifest, doc.dump(2) + "\n");
}

std::vector<fs::path> load_dataset_manifest(const fs::path& manifest) {
    const json doc = parse_manifest(manifest);
    const std::string kind = doc.value("kind", "dataset");
    if (kind == "attribution_stack") return {manifest};
    if (kind != "dataset") throw IoError("manifest '" + manifest.string() + "' has unknown kind '" + kind + "'");
    const auto entries = field<std::vector<std::string>>(doc, "stacks", manifest);
    std::vector<fs::path> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(resolve(manifest, e));
    return out;
}

void save_dataset_manifest(const fs::path& manifest, const std::vector<fs::path>& stacks) {
    json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["kind"] = "dataset";
    json entries = json::array();
    for (const auto& s : stacks) {
        const fs::path rel = s.is_absolute() ? fs::relative(s, fs::absolute(manifest).parent_path()) : s;
        entries.push_back(rel.generic_string());
    }
    doc["stacks"] = std::move(entries);
    write_text_file(manifest, doc.dump(2) + "\n");
}

void save_rbm_params(const RbmParams& params, const fs::path& directory) {
    params.validate();
    fs::create_directories(directory);
    const auto n = static_cast<std::size_t>(params.n_visible());
    const auto m = static_cast<std::size_t>(params.n_hidden());
    std::vector<double> w(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            w[i * m + j] = params.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    const std::size_t w_shape[] = {n, m};
    const std::size_t a_shape[] = {n};
    const std::size_t b_shape[] = {m};
    write_npy(directory / "W.npy", w_shape, w);
    write_npy(directory / "a.npy", a_shape,
              std::span<const double>(params.visible_bias.data(), n));
    write_npy(directory / "b.npy", b_shape,
              std::span<const double>(params.hidden_bias.data(), m));
    json doc{{"schema_version", kSchemaVersion},
             {"kind", "rbm_params"},
             {"n_visible", n},
             {"n_hidden", m},
             {"weights", "W.npy"},
             {"visible_bias", "a.npy"},
             {"hidden_bias", "b.npy"}};
    write_text_file(directory / "rbm.json", doc.dump(2) + "\n");
}

RbmParams load_rbm_params(const fs::path& directory) {
    const fs::path manifest = directory / "rbm.json";
    const json doc = parse_manifest(manifest);
    const auto w = read_npy(resolve(manifest, field<std::string>(doc, "weights", manifest)));
    const auto a = read_npy(resolve(manifest, field<std::string>(doc, "visible_bias", manifest)));
    const auto b = read_npy(resolve(manifest, field<std::string>(doc, "hidden_bias", manifest)));
    if (w.shape.size() != 2 || a.shape.size() != 1 || b.shape.size() != 1) {
        throw IoError("rbm params in '" + directory.string() + "' have wrong ranks");
    }
    const auto n = static_cast<Eigen::Index>(w.shape[0]);
    const auto m = static_cast<Eigen::Index>(w.shape[1]);
    RbmParams params = zero_params(n, m);
    if (a.shape[0] != w.shape[0] || b.shape[0] != w.shape[1]) {
        throw ValidationError("rbm params in '" + directory.string() + "' have inconsistent shapes");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) params.weights(i, j) = w.data[static_cast<std::size_t>(i * m + j)];
        params.visible_bias[i] = a.data[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index j = 0; j < m; ++j) params.hidden_bias[j] = b.data[static_cast<std::size_t>(j)];
    params.validate();
    return params;
}

void save_segmentation(const SuperpixelSegmentation& segmentation, const fs::path& path) {
    segmentation.validate();
    std::vector<double> labels(segmentation.labels.begin(), segmentation.labels.end());
    const std::size_t shape[] = {segmentation.height, segmentation.width};
    write_npy(path, shape, labels, NpyDtype::Int32);
}

std::string git_blob_hash_bytes(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw Error("sha1: cannot allocate context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, digest, &length) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw Error("sha1: digest failed");
    std::ostringstream hex;
    for (unsigned int i = 0; i < length; ++i) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return hex.str();
}

std::string git_blob_hash(const fs::path& path) { return git_blob_hash_bytes(read_text_file(path)); }

}  // namespace saliency_forge
