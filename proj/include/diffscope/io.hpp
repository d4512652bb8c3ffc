#pragma once

#include "diffscope/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace diffscope {

/// Raised for unreadable, truncated or corrupt files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

/// Binary P6 with maxval 255. Accepts [C, H, W] or [1, C, H, W] with C = 1 or 3, values in [0, 1].
std::string encode_ppm(const Tensor<float>& image);
void write_ppm(const std::filesystem::path& path, const Tensor<float>& image);
/// Decodes to [3, H, W] in [0, 1].
Tensor<float> decode_ppm(std::span<const unsigned char> bytes);

/// Side-by-side strip of equally shaped images with a one-pixel white gutter.
Tensor<float> hstack_images(const std::vector<Tensor<float>>& images);

/// Minimal CSV assembly. The first line is always the schema tag.
class CsvWriter {
public:
    CsvWriter(std::string_view schema, int version, const std::vector<std::string>& columns);

    CsvWriter& cell(std::string_view v);
    CsvWriter& cell(std::int64_t v);
    CsvWriter& cell(double v);
    CsvWriter& cell(int v) { return cell(static_cast<std::int64_t>(v)); }
    CsvWriter& cell(std::size_t v) { return cell(static_cast<std::int64_t>(v)); }
    void end_row();

    const std::string& text() const { return text_; }
    void save(const std::filesystem::path& path) const { write_text_atomic(path, text_); }

private:
    std::string text_;
    std::size_t columns_;
    std::size_t in_row_ = 0;
};

std::string csv_schema_line(std::string_view schema, int version);

/// Parsed CSV: schema tag, header and rows of raw cells.
struct CsvTable {
    std::string schema;
    int version = 0;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(std::string_view text);

}  // namespace diffscope
