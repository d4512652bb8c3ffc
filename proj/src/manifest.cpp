#include "diffscope/manifest.hpp"

#include <sstream>

namespace diffscope {

namespace fs = std::filesystem;

OutputDir::OutputDir(fs::path root) : root_(std::move(root)) {
    if (fs::exists(root_)) {
        if (!fs::is_directory(root_)) throw IoError("output path exists and is not a directory: " + root_.string());
        if (!fs::is_empty(root_)) throw IoError("output directory is not empty: " + root_.string());
    } else {
        fs::create_directories(root_);
        created_ = true;
    }
}

OutputDir::~OutputDir() {
    if (committed_ || keep_partial_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(root_ / f, ec);
    if (created_) {
        fs::remove_all(root_, ec);
    } else {
        // Drop subdirectories left empty, deepest first.
        std::set<fs::path, std::greater<>> dirs;
        for (const auto& f : files_)
            for (fs::path d = fs::path(f).parent_path(); !d.empty(); d = d.parent_path()) dirs.insert(d);
        for (const auto& d : dirs)
            if (fs::is_empty(root_ / d, ec)) fs::remove(root_ / d, ec);
    }
}

fs::path OutputDir::prepare(const std::string& rel) {
    if (committed_) throw UsageError("output directory already committed");
    if (rel.empty() || rel == kManifestName || fs::path(rel).is_absolute() || rel.find("..") != std::string::npos)
        throw UsageError("bad output file name: " + rel);
    const fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    files_.insert(fs::path(rel).generic_string());
    return p;
}

void OutputDir::write_text(const std::string& rel, std::string_view text) { write_text_atomic(prepare(rel), text); }

void OutputDir::write_bytes(const std::string& rel, std::span<const unsigned char> bytes) {
    write_file_atomic(prepare(rel), bytes);
}

void OutputDir::write_ppm(const std::string& rel, const Tensor<float>& image) { write_text(rel, encode_ppm(image)); }

void OutputDir::commit() {
    if (committed_) throw UsageError("output directory already committed");
    std::string text;
    for (const auto& f : files_) text += sha256_file(root_ / f) + "  " + f + "\n";
    write_text_atomic(root_ / kManifestName, text);
    committed_ = true;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    const fs::path p = dir / kManifestName;
    if (!fs::exists(p)) throw IoError("no manifest in " + dir.string() + " (run incomplete or not a run directory)");
    std::vector<ManifestEntry> out;
    std::istringstream in(read_text(p));
    std::string line;
    while (std::getline(in, line)) {
        if (line.size() < 67 || line[64] != ' ' || line[65] != ' ') throw IoError("malformed manifest line: " + line);
        out.push_back({line.substr(0, 64), line.substr(66)});
    }
    return out;
}

std::vector<std::string> verify_manifest(const fs::path& dir) {
    std::vector<std::string> problems;
    std::vector<ManifestEntry> entries;
    try {
        entries = read_manifest(dir);
    } catch (const IoError& e) {
        return {e.what()};
    }
    std::set<std::string> listed;
    for (const auto& e : entries) {
        listed.insert(e.path);
        const fs::path p = dir / e.path;
        if (!fs::exists(p)) {
            problems.push_back("missing: " + e.path);
            continue;
        }
        if (sha256_file(p) != e.sha256) problems.push_back("checksum mismatch: " + e.path);
    }
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), dir).generic_string();
        if (rel != kManifestName && !listed.count(rel)) problems.push_back("not in manifest: " + rel);
    }
    return problems;
}

}  // namespace diffscope
