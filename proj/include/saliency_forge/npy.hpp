#pragma once
// NPY v1.0 array serialization (one array per file). Payloads are converted
// to double on read; writers pick the on-disk element type explicitly.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace saliency_forge {

enum class NpyDtype { Float64, Float32, Int32, Int64, UInt8 };

struct NpyArray {
    std::vector<std::size_t> shape;
    std::vector<double> data;  // C order
    NpyDtype dtype = NpyDtype::Float64;

    std::size_t element_count() const noexcept;
};

std::string encode_npy(std::span<const std::size_t> shape, std::span<const double> data,
                       NpyDtype dtype = NpyDtype::Float64);

// `context` names the source in error messages (file path, "request body", ...).
NpyArray decode_npy(std::string_view bytes, std::string_view context = "npy buffer");

NpyArray read_npy(const std::filesystem::path& path);
void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const double> data, NpyDtype dtype = NpyDtype::Float64);

}  // namespace saliency_forge
