#pragma once

#include "diffscope/io.hpp"

#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace diffscope {

inline constexpr const char* kManifestName = "manifest.sha256";

/// An output directory filled file by file and sealed by a manifest written last.
/// Without commit() the files written so far are removed again, unless told to keep them;
/// either way an uncommitted directory has no manifest.
class OutputDir {
public:
    /// `root` must be absent or an empty directory.
    explicit OutputDir(std::filesystem::path root);
    ~OutputDir();
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    void write_text(const std::string& rel, std::string_view text);
    void write_bytes(const std::string& rel, std::span<const unsigned char> bytes);
    void write_ppm(const std::string& rel, const Tensor<float>& image);

    const std::filesystem::path& final_path() const { return root_; }
    void keep_partial_on_failure(bool keep) { keep_partial_ = keep; }

    /// Writes the manifest (sha256sum format, sorted by path).
    void commit();

private:
    std::filesystem::path prepare(const std::string& rel);

    std::filesystem::path root_;
    std::set<std::string> files_;
    bool created_ = false;
    bool committed_ = false;
    bool keep_partial_ = false;
};

struct ManifestEntry {
    std::string sha256;
    std::string path;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

/// Empty when every listed file exists with the listed checksum and no other file is present.
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

}  // namespace diffscope
