#include "diffscope/io.hpp"

#include "diffscope/metrics.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <memory>
#include <unistd.h>

namespace diffscope {

namespace fs = std::filesystem;

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw IoError("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

std::vector<unsigned char> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

std::string read_text(const fs::path& path) {
    auto b = read_file(path);
    return std::string(b.begin(), b.end());
}

void write_file_atomic(const fs::path& path, std::span<const unsigned char> bytes) {
    const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw IoError("cannot move into place: " + path.string());
    }
}

void write_text_atomic(const fs::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::string encode_ppm(const Tensor<float>& image) {
    Tensor<float> img = image;
    if (img.rank() == 4) {
        if (img.dim(0) != 1) throw UsageError("encode_ppm: batch must be 1");
        img = img.reshaped({img.dim(1), img.dim(2), img.dim(3)});
    }
    if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) throw UsageError("encode_ppm: need [C, H, W] with C in {1, 3}");
    const auto C = img.dim(0), H = img.dim(1), W = img.dim(2);
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + static_cast<std::size_t>(3 * H * W));
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t c = 0; c < 3; ++c) {
                const float v = img[static_cast<std::size_t>(((C == 1 ? 0 : c) * H + i) * W + j)];
                const double q = std::nearbyint(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
                out += static_cast<char>(static_cast<unsigned char>(q));
            }
    return out;
}

void write_ppm(const fs::path& path, const Tensor<float>& image) { write_text_atomic(path, encode_ppm(image)); }

Tensor<float> decode_ppm(std::span<const unsigned char> bytes) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string s;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) s += static_cast<char>(bytes[pos++]);
        return s;
    };
    if (token() != "P6") throw IoError("not a binary PPM");
    const int w = std::stoi(token()), h = std::stoi(token()), maxval = std::stoi(token());
    if (maxval != 255 || w <= 0 || h <= 0) throw IoError("unsupported PPM header");
    ++pos;
    if (bytes.size() - pos < static_cast<std::size_t>(3 * w * h)) throw IoError("truncated PPM");
    Tensor<float> out({3, h, w});
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int c = 0; c < 3; ++c)
                out[static_cast<std::size_t>((c * h + i) * w + j)] = static_cast<float>(bytes[pos++]) / 255.0f;
    return out;
}

Tensor<float> hstack_images(const std::vector<Tensor<float>>& images) {
    if (images.empty()) throw UsageError("hstack_images: nothing to stack");
    std::vector<Tensor<float>> parts;
    for (const auto& im : images) parts.push_back(im.rank() == 4 ? im.reshaped({im.dim(1), im.dim(2), im.dim(3)}) : im);
    const auto C = parts[0].dim(0), H = parts[0].dim(1), W = parts[0].dim(2);
    for (const auto& p : parts)
        if (p.shape() != parts[0].shape()) throw UsageError("hstack_images: shapes differ");
    const auto n = static_cast<std::int64_t>(parts.size());
    const auto total_w = n * W + (n - 1);
    Tensor<float> out({C, H, total_w}, 1.0f);
    for (std::int64_t k = 0; k < n; ++k)
        for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < H; ++i)
                for (std::int64_t j = 0; j < W; ++j)
                    out[static_cast<std::size_t>((c * H + i) * total_w + k * (W + 1) + j)] =
                        parts[static_cast<std::size_t>(k)][static_cast<std::size_t>((c * H + i) * W + j)];
    return out;
}

std::string csv_schema_line(std::string_view schema, int version) {
    return "#schema=" + std::string(schema) + ";version=" + std::to_string(version);
}

CsvWriter::CsvWriter(std::string_view schema, int version, const std::vector<std::string>& columns)
    : columns_(columns.size()) {
    text_ = csv_schema_line(schema, version) + "\n";
    for (const auto& c : columns) cell(c);
    end_row();
}

CsvWriter& CsvWriter::cell(std::string_view v) {
    if (in_row_ == columns_) throw UsageError("CsvWriter: too many cells in row");
    if (in_row_ > 0) text_ += ',';
    if (v.find_first_of(",\"\n") != std::string_view::npos) {
        text_ += '"';
        for (char ch : v) {
            if (ch == '"') text_ += '"';
            text_ += ch;
        }
        text_ += '"';
    } else {
        text_ += v;
    }
    ++in_row_;
    return *this;
}

CsvWriter& CsvWriter::cell(std::int64_t v) { return cell(std::to_string(v)); }
CsvWriter& CsvWriter::cell(double v) { return cell(format_metric(v)); }

void CsvWriter::end_row() {
    if (in_row_ != columns_)
        throw UsageError("CsvWriter: row has " + std::to_string(in_row_) + " cells, expected " + std::to_string(columns_));
    text_ += '\n';
    in_row_ = 0;
}

std::size_t CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("csv has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
}

CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    std::vector<std::vector<std::string>> lines;
    std::vector<std::string> row;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"' && i + 1 < text.size() && text[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            row.push_back(std::move(cur));
            cur.clear();
        } else if (ch == '\n') {
            row.push_back(std::move(cur));
            cur.clear();
            lines.push_back(std::move(row));
            row.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty() || !row.empty()) {
        row.push_back(std::move(cur));
        lines.push_back(std::move(row));
    }
    if (lines.size() < 2 || lines[0].size() != 1 || lines[0][0].rfind("#schema=", 0) != 0)
        throw IoError("csv lacks a schema line and header");
    const std::string& tag = lines[0][0];
    const auto semi = tag.find(";version=");
    if (semi == std::string::npos) throw IoError("malformed schema line: " + tag);
    t.schema = tag.substr(8, semi - 8);
    t.version = std::stoi(tag.substr(semi + 9));
    t.header = lines[1];
    for (std::size_t i = 2; i < lines.size(); ++i) {
        if (lines[i].size() != t.header.size()) throw IoError("csv row " + std::to_string(i) + " has wrong width");
        t.rows.push_back(std::move(lines[i]));
    }
    return t;
}

}  // namespace diffscope
