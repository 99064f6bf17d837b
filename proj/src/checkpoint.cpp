#include "truemoe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "truemoe/digest.hpp"
#include "truemoe/errors.hpp"
#include "truemoe/image_io.hpp"

namespace truemoe {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
public:
    template <class T>
    void pod(T v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        out.insert(out.end(), p, p + sizeof(T));
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        out.insert(out.end(), p, p + n);
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : buf(b) {}
    template <class T>
    T pod() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::uint8_t* take(std::size_t n) {
        if (n > buf.size() - pos) throw IoError("checkpoint truncated");
        const auto* p = buf.data() + pos;
        pos += n;
        return p;
    }
    std::span<const std::uint8_t> buf;
    std::size_t pos = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, Tensor t) {
    for (auto& [k, v] : entries_) {
        if (k == name) {
            v = std::move(t);
            return;
        }
    }
    entries_.emplace_back(name, std::move(t));
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [k, v] : entries_) {
        if (k == name) return true;
    }
    return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [k, v] : entries_) {
        if (k == name) return v;
    }
    throw StateError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::set_text(const std::string& name, const std::string& text) {
    Tensor t({text.size()});
    for (std::size_t i = 0; i < text.size(); ++i) t[i] = float(static_cast<unsigned char>(text[i]));
    put(name, std::move(t));
}

std::string Checkpoint::text(const std::string& name) const {
    const Tensor& t = get(name);
    std::string s(t.size(), '\0');
    for (std::size_t i = 0; i < t.size(); ++i) s[i] = char(static_cast<unsigned char>(t[i]));
    return s;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    Writer w;
    w.bytes("TMOE", 4);
    w.pod<std::uint16_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(std::uint32_t(ckpt.entries().size()));
    for (const auto& [name, t] : ckpt.entries()) {
        w.pod<std::uint32_t>(std::uint32_t(name.size()));
        w.bytes(name.data(), name.size());
        w.pod<std::uint32_t>(std::uint32_t(t.rank()));
        for (std::size_t d : t.shape()) w.pod<std::uint64_t>(d);
        w.bytes(t.data(), t.size() * sizeof(float));
    }
    w.pod<std::uint64_t>(fnv1a(w.out));
    return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 + 2 + 4 + 8 || std::memcmp(bytes.data(), "TMOE", 4) != 0) {
        throw IoError("not a checkpoint (bad magic)");
    }
    const auto body = bytes.first(bytes.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (fnv1a(body) != stored) throw IoError("checkpoint digest mismatch");
    Reader r(body);
    r.take(4);
    const auto version = r.pod<std::uint16_t>();
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.pod<std::uint32_t>();
    Checkpoint ckpt;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto len = r.pod<std::uint32_t>();
        const auto* name = r.take(len);
        const auto rank = r.pod<std::uint32_t>();
        if (rank > 8) throw IoError("checkpoint tensor rank too large");
        Shape shape(rank);
        for (auto& d : shape) d = std::size_t(r.pod<std::uint64_t>());
        const std::size_t n = shape_numel(shape);
        if (n > (body.size() - r.pos) / sizeof(float)) throw IoError("checkpoint truncated");
        std::vector<float> data(n);
        std::memcpy(data.data(), r.take(n * sizeof(float)), n * sizeof(float));
        ckpt.put(std::string(reinterpret_cast<const char*>(name), len), Tensor(std::move(shape), std::move(data)));
    }
    if (r.pos != body.size()) throw IoError("trailing bytes in checkpoint");
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
    const auto bytes = serialize_checkpoint(ckpt);
    if (file.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(file.parent_path(), ec);
    }
    std::ofstream out(file, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    return deserialize_checkpoint(read_file_bytes(file));
}

}  // namespace truemoe
