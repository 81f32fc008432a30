#include "saliency_forge/npy.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "saliency_forge/errors.hpp"

namespace saliency_forge {

static_assert(std::endian::native == std::endian::little,
              "NPY codec assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

const char* descr_of(NpyDtype dtype) {
    switch (dtype) {
        case NpyDtype::Float64: return "<f8";
        case NpyDtype::Float32: return "<f4";
        case NpyDtype::Int32: return "<i4";
        case NpyDtype::Int64: return "<i8";
        case NpyDtype::UInt8: return "|u1";
    }
    return "<f8";
}

std::size_t width_of(NpyDtype dtype) {
    switch (dtype) {
        case NpyDtype::Float64:
        case NpyDtype::Int64: return 8;
        case NpyDtype::Float32:
        case NpyDtype::Int32: return 4;
        case NpyDtype::UInt8: return 1;
    }
    return 8;
}

NpyDtype parse_descr(std::string descr, std::string_view context) {
    if (descr.size() == 3 && (descr[0] == '<' || descr[0] == '|' || descr[0] == '=')) {
        descr[0] = '<';
    }
    if (descr == "<f8") return NpyDtype::Float64;
    if (descr == "<f4") return NpyDtype::Float32;
    if (descr == "<i4") return NpyDtype::Int32;
    if (descr == "<i8") return NpyDtype::Int64;
    if (descr == "<u1" || descr == "<b1") return NpyDtype::UInt8;
    throw IoError(std::string(context) + ": unsupported NPY dtype '" + descr + "'");
}

template <typename T>
T load_le(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

// Extracts the value following `'key':` in the header dictionary.
std::string header_value(std::string_view header, std::string_view key, std::string_view context) {
    const std::string needle = "'" + std::string(key) + "'";
    auto pos = header.find(needle);
    if (pos == std::string_view::npos) {
        throw IoError(std::string(context) + ": NPY header lacks " + needle);
    }
    pos = header.find(':', pos + needle.size());
    if (pos == std::string_view::npos) throw IoError(std::string(context) + ": malformed NPY header");
    ++pos;
    while (pos < header.size() && header[pos] == ' ') ++pos;
    if (pos >= header.size()) throw IoError(std::string(context) + ": malformed NPY header");
    std::size_t end = pos;
    if (header[pos] == '\'') {
        end = header.find('\'', pos + 1);
        if (end == std::string_view::npos) throw IoError(std::string(context) + ": malformed NPY header");
        return std::string(header.substr(pos + 1, end - pos - 1));
    }
    if (header[pos] == '(') {
        end = header.find(')', pos);
        if (end == std::string_view::npos) throw IoError(std::string(context) + ": malformed NPY header");
        return std::string(header.substr(pos, end - pos + 1));
    }
    while (end < header.size() && header[end] != ',' && header[end] != '}') ++end;
    return std::string(header.substr(pos, end - pos));
}

std::vector<std::size_t> parse_shape(const std::string& text, std::string_view context) {
    std::vector<std::size_t> shape;
    std::string inner = text.substr(1, text.size() - 2);
    std::stringstream ss(inner);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" ");
        if (first == std::string::npos) continue;
        const auto last = item.find_last_not_of(" L");
        const auto digits = item.substr(first, last - first + 1);
        try {
            std::size_t consumed = 0;
            const auto value = std::stoull(digits, &consumed);
            if (consumed != digits.size()) throw std::invalid_argument(digits);
            shape.push_back(static_cast<std::size_t>(value));
        } catch (const std::exception&) {
            throw IoError(std::string(context) + ": bad NPY shape entry '" + item + "'");
        }
    }
    return shape;
}

}  // namespace

std::size_t NpyArray::element_count() const noexcept {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string encode_npy(std::span<const std::size_t> shape, std::span<const double> data,
                       NpyDtype dtype) {
    std::size_t count = 1;
    for (auto d : shape) count *= d;
    if (count != data.size()) {
        throw ValidationError("encode_npy: shape holds " + std::to_string(count) +
                              " elements but data has " + std::to_string(data.size()));
    }

    std::string header = "{'descr': '";
    header += descr_of(dtype);
    header += "', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        header += std::to_string(shape[i]);
        if (shape.size() == 1 || i + 1 < shape.size()) header += ",";
        if (i + 1 < shape.size()) header += " ";
    }
    header += "), }";
    // Pad so that magic + version + length + header is a multiple of 64.
    const std::size_t preamble = kMagicLen + 2 + 2;
    std::size_t total = preamble + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header += '\n';
    if (header.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw ValidationError("encode_npy: header too long for format 1.0");
    }

    std::string out;
    const std::size_t width = width_of(dtype);
    out.reserve(preamble + header.size() + count * width);
    out.append(kMagic, kMagicLen);
    out.push_back('\x01');
    out.push_back('\x00');
    const auto hlen = static_cast<std::uint16_t>(header.size());
    out.push_back(static_cast<char>(hlen & 0xFF));
    out.push_back(static_cast<char>(hlen >> 8));
    out += header;

    char buf[8];
    for (double v : data) {
        switch (dtype) {
            case NpyDtype::Float64: std::memcpy(buf, &v, 8); break;
            case NpyDtype::Float32: {
                const auto f = static_cast<float>(v);
                std::memcpy(buf, &f, 4);
                break;
            }
            case NpyDtype::Int32: {
                const auto i = static_cast<std::int32_t>(std::llround(v));
                std::memcpy(buf, &i, 4);
                break;
            }
            case NpyDtype::Int64: {
                const auto i = static_cast<std::int64_t>(std::llround(v));
                std::memcpy(buf, &i, 8);
                break;
            }
            case NpyDtype::UInt8: buf[0] = static_cast<char>(static_cast<std::uint8_t>(std::lround(v))); break;
        }
        out.append(buf, width);
    }
    return out;
}

NpyArray decode_npy(std::string_view bytes, std::string_view context) {
    const std::string ctx(context);
    if (bytes.size() < kMagicLen + 4 || bytes.substr(0, kMagicLen) != std::string_view(kMagic, kMagicLen)) {
        throw IoError(ctx + ": not an NPY payload (bad magic, " + std::to_string(bytes.size()) +
                      " bytes)");
    }
    const auto major = static_cast<unsigned char>(bytes[kMagicLen]);
    std::size_t header_len = 0;
    std::size_t offset = 0;
    if (major == 1) {
        header_len = load_le<std::uint16_t>(bytes.data() + kMagicLen + 2);
        offset = kMagicLen + 4;
    } else if (major == 2 || major == 3) {
        if (bytes.size() < kMagicLen + 6) throw IoError(ctx + ": truncated NPY preamble");
        header_len = load_le<std::uint32_t>(bytes.data() + kMagicLen + 2);
        offset = kMagicLen + 6;
    } else {
        throw IoError(ctx + ": unsupported NPY version " + std::to_string(major));
    }
    if (bytes.size() < offset + header_len) throw IoError(ctx + ": truncated NPY header");
    const auto header = bytes.substr(offset, header_len);
    offset += header_len;

    NpyArray array;
    array.dtype = parse_descr(header_value(header, "descr", ctx), ctx);
    const auto fortran = header_value(header, "fortran_order", ctx);
    const bool fortran_order = fortran.find("True") != std::string::npos;
    array.shape = parse_shape(header_value(header, "shape", ctx), ctx);

    const std::size_t count = array.element_count();
    const std::size_t width = width_of(array.dtype);
    if (bytes.size() - offset < count * width) {
        throw IoError(ctx + ": payload has " + std::to_string(bytes.size() - offset) +
                      " bytes, expected " + std::to_string(count * width));
    }
    std::vector<double> raw(count);
    const char* p = bytes.data() + offset;
    for (std::size_t i = 0; i < count; ++i, p += width) {
        switch (array.dtype) {
            case NpyDtype::Float64: raw[i] = load_le<double>(p); break;
            case NpyDtype::Float32: raw[i] = load_le<float>(p); break;
            case NpyDtype::Int32: raw[i] = load_le<std::int32_t>(p); break;
            case NpyDtype::Int64: raw[i] = static_cast<double>(load_le<std::int64_t>(p)); break;
            case NpyDtype::UInt8: raw[i] = static_cast<unsigned char>(*p); break;
        }
    }

    if (!fortran_order || array.shape.size() < 2) {
        array.data = std::move(raw);
        return array;
    }
    // Reorder column-major payload into C order.
    const auto& shape = array.shape;
    array.data.resize(count);
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t c_index = 0; c_index < count; ++c_index) {
        std::size_t f_index = 0;
        std::size_t stride = 1;
        for (std::size_t d = 0; d < shape.size(); ++d) {
            f_index += idx[d] * stride;
            stride *= shape[d];
        }
        array.data[c_index] = raw[f_index];
        for (std::size_t d = shape.size(); d-- > 0;) {
            if (++idx[d] < shape[d]) break;
            idx[d] = 0;
        }
    }
    return array;
}

NpyArray read_npy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return decode_npy(buffer.str(), path.string());
}

void write_npy(const std::filesystem::path& path, std::span<const std::size_t> shape,
               std::span<const double> data, NpyDtype dtype) {
    const auto bytes = encode_npy(shape, data, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace saliency_forge
