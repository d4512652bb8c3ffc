#include "diffscope/checkpoint.hpp"

#include "diffscope/unet.hpp"

#include <bit>
#include <cstring>

namespace diffscope {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    template <typename T>
    void put(T v) {
        const auto* p = reinterpret_cast<const unsigned char*>(&v);
        out.insert(out.end(), p, p + sizeof(T));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<unsigned char> out;
};

class Reader {
public:
    Reader(std::span<const unsigned char> b) : buf(b) {}
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    void copy(void* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf.data() + pos, n);
        pos += n;
    }
    std::size_t left() const { return buf.size() - pos; }
    void need(std::size_t n) const {
        if (left() < n) throw IoError("checkpoint truncated");
    }

    std::span<const unsigned char> buf;
    std::size_t pos = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
    Json meta;
    meta["unet"] = to_json(c.unet);
    meta["schedule"] = to_json(c.schedule);
    meta["data"] = to_json(c.data);
    meta["train_seed"] = c.train_seed;
    meta["step"] = c.step;
    const std::string text = meta.dump();

    Writer w;
    w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(text.size());
    w.bytes(text.data(), text.size());
    for (const auto& [name, t] : c.params) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.put<std::uint64_t>(static_cast<std::uint64_t>(d));
        w.bytes(t.ptr(), t.numel() * sizeof(float));
    }
    w.put<std::uint64_t>(fnv1a64(w.out));
    return std::move(w.out);
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
    if (bytes.size() < sizeof(kCheckpointMagic) + 4 + 8 + 8) throw IoError("checkpoint truncated");
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
        throw IoError("not a checkpoint (bad magic)");
    const auto body = bytes.first(bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (fnv1a64(body) != stored) throw IoError("checkpoint checksum mismatch");

    Reader r(body);
    r.pos = sizeof(kCheckpointMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto text_len = r.get<std::uint64_t>();
    r.need(text_len);
    std::string text(reinterpret_cast<const char*>(body.data() + r.pos), text_len);
    r.pos += text_len;

    const Json meta = parse_json_text(text, "checkpoint config");
    Checkpoint c;
    try {
        c.unet = unet_config_from_json(meta.at("unet"));
        c.schedule = schedule_spec_from_json(meta.at("schedule"));
        c.data = toy_spec_from_json(meta.at("data"));
        c.train_seed = meta.at("train_seed").get<std::uint64_t>();
        c.step = meta.at("step").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint config: ") + e.what());
    }

    while (r.left() > 0) {
        const auto name_len = r.get<std::uint32_t>();
        r.need(name_len);
        std::string name(reinterpret_cast<const char*>(body.data() + r.pos), name_len);
        r.pos += name_len;
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw IoError("implausible rank for " + name);
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            const auto d = r.get<std::uint64_t>();
            if (d > (std::uint64_t(1) << 32)) throw IoError("implausible dimension for " + name);
            numel *= d;
            shape.push_back(static_cast<std::int64_t>(d));
        }
        r.need(numel * sizeof(float));
        Tensor<float> t(shape);
        r.copy(t.ptr(), numel * sizeof(float));
        c.params.add(name, std::move(t));
    }

    // The tensors must be exactly what the config builds.
    const auto ref = init_unet_params<float>(c.unet, 0);
    if (ref.size() != c.params.size()) throw ConfigError("checkpoint tensors do not match its unet config");
    for (const auto& [name, t] : ref) {
        if (!c.params.contains(name)) throw ConfigError("checkpoint lacks tensor " + name);
        if (c.params.get(name).shape() != t.shape()) throw ConfigError("checkpoint tensor " + name + " has the wrong shape");
    }
    return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("checkpoint not found: " + path.string());
    return decode_checkpoint(read_file(path));
}

}  // namespace diffscope
