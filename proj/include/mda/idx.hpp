#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "mda/tensor.hpp"

namespace mda {

inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;

class IdxError : public std::runtime_error {
public:
    enum class Code { Io, BadMagic, Truncated, CountMismatch };

    IdxError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

struct IdxImages {
    std::size_t count = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

namespace detail {

inline std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxError::Code::Io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::string& path) {
    if (buf.size() < offset + 4) throw IdxError(IdxError::Code::Truncated, path + ": truncated header");
    return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
           (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    buf.push_back(static_cast<std::uint8_t>(v >> 24));
    buf.push_back(static_cast<std::uint8_t>(v >> 16));
    buf.push_back(static_cast<std::uint8_t>(v >> 8));
    buf.push_back(static_cast<std::uint8_t>(v));
}

inline void write_all(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IdxError(IdxError::Code::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

}  // namespace detail

inline IdxImages idx_read_images(const std::string& path) {
    const auto buf = detail::read_all(path);
    const std::uint32_t magic = detail::read_be32(buf, 0, path);
    if (magic != kIdxImageMagic) throw IdxError(IdxError::Code::BadMagic, path + ": not an IDX image file");
    IdxImages img;
    img.count = detail::read_be32(buf, 4, path);
    img.rows = detail::read_be32(buf, 8, path);
    img.cols = detail::read_be32(buf, 12, path);
    const std::size_t bytes = img.count * img.rows * img.cols;
    if (buf.size() < 16 + bytes) throw IdxError(IdxError::Code::Truncated, path + ": truncated pixel data");
    img.pixels.assign(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(bytes));
    return img;
}

inline std::vector<int> idx_read_labels(const std::string& path) {
    const auto buf = detail::read_all(path);
    const std::uint32_t magic = detail::read_be32(buf, 0, path);
    if (magic != kIdxLabelMagic) throw IdxError(IdxError::Code::BadMagic, path + ": not an IDX label file");
    const std::size_t n = detail::read_be32(buf, 4, path);
    if (buf.size() < 8 + n) throw IdxError(IdxError::Code::Truncated, path + ": truncated label data");
    return {buf.begin() + 8, buf.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

struct IdxDataset {
    Tensor images;  // [n, 1, h, w], values in [0, 1]
    std::vector<int> labels;
};

inline IdxDataset idx_load(const std::string& images_path, const std::string& labels_path) {
    IdxImages img = idx_read_images(images_path);
    std::vector<int> labels = idx_read_labels(labels_path);
    if (labels.size() != img.count) {
        throw IdxError(IdxError::Code::CountMismatch, images_path + " holds " + std::to_string(img.count) +
                                                          " images but " + labels_path + " holds " +
                                                          std::to_string(labels.size()) + " labels");
    }
    if (img.count == 0 || img.rows == 0 || img.cols == 0) {
        throw IdxError(IdxError::Code::Truncated, images_path + ": empty image set");
    }
    std::vector<double> values(img.pixels.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.pixels[i] / 255.0;
    return {Tensor({img.count, 1, img.rows, img.cols}, std::move(values)), std::move(labels)};
}

inline void idx_write_images(const std::string& path, const IdxImages& img) {
    std::vector<std::uint8_t> buf;
    detail::write_be32(buf, kIdxImageMagic);
    detail::write_be32(buf, static_cast<std::uint32_t>(img.count));
    detail::write_be32(buf, static_cast<std::uint32_t>(img.rows));
    detail::write_be32(buf, static_cast<std::uint32_t>(img.cols));
    buf.insert(buf.end(), img.pixels.begin(), img.pixels.end());
    detail::write_all(path, buf);
}

inline void idx_write_labels(const std::string& path, const std::vector<int>& labels) {
    std::vector<std::uint8_t> buf;
    detail::write_be32(buf, kIdxLabelMagic);
    detail::write_be32(buf, static_cast<std::uint32_t>(labels.size()));
    for (int y : labels) buf.push_back(static_cast<std::uint8_t>(y));
    detail::write_all(path, buf);
}

}  // namespace mda
