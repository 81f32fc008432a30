#pragma once
// On-disk layout: NPY arrays plus JSON manifests carrying "schema_version": 1.
//
// Stack manifest:
//   {"schema_version": 1, "kind": "attribution_stack", "id": "img_0001",
//    "label": 3, "shape": [H, W], "image": "img_0001/image.npy",
//    "maps": [{"path": "img_0001/lime.npy", "source": "lime", "normalized": false}, ...]}
// Dataset manifest:
//   {"schema_version": 1, "kind": "dataset", "stacks": ["img_0001.json", ...]}
// Relative paths resolve against the manifest's directory.

#include <filesystem>
#include <string>
#include <vector>

#include "saliency_forge/core.hpp"
#include "saliency_forge/rbm.hpp"
#include "saliency_forge/superpixels.hpp"

namespace saliency_forge {

inline constexpr int kSchemaVersion = 1;

// Maps stored as C×H×W are reduced by channel mean on load.
AttributionStack load_stack(const std::filesystem::path& manifest);

// Writes the manifest plus one array per map (and the image, when present)
// into the manifest's directory, under a folder named after the stack id.
void save_stack(const AttributionStack& stack, const std::filesystem::path& manifest);

// Accepts a dataset manifest or a single stack manifest; returns stack manifest paths.
std::vector<std::filesystem::path> load_dataset_manifest(const std::filesystem::path& manifest);
void save_dataset_manifest(const std::filesystem::path& manifest,
                           const std::vector<std::filesystem::path>& stacks);

// H×W arrays load as one channel, C×H×W as C channels.
ImageTensor load_image(const std::filesystem::path& path, int label = 0);
void save_image(const ImageTensor& image, const std::filesystem::path& path);

AttributionMap load_map(const std::filesystem::path& path, std::string source = {});
void save_map(const AttributionMap& map, const std::filesystem::path& path);

// Writes W.npy, a.npy, b.npy and rbm.json into `directory`.
void save_rbm_params(const RbmParams& params, const std::filesystem::path& directory);
RbmParams load_rbm_params(const std::filesystem::path& directory);

// Integer label grid (int32 NPY).
void save_segmentation(const SuperpixelSegmentation& segmentation,
                       const std::filesystem::path& path);

// Git blob hash ("blob <size>\0<content>", SHA-1, hex) of a file's bytes.
std::string git_blob_hash(const std::filesystem::path& path);
std::string git_blob_hash_bytes(const std::string& bytes);

// File-system safe rendering of an id or source tag.
std::string safe_name(const std::string& text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace saliency_forge
