#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "truemoe/tensor.hpp"

namespace truemoe {

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Named f32 tensors in insertion order. Phase tag and config echo are stored
// as byte-valued tensors under "meta/phase" and "meta/config".
class Checkpoint {
public:
    void put(const std::string& name, Tensor t);
    bool has(const std::string& name) const;
    const Tensor& get(const std::string& name) const;  // StateError when missing

    void set_text(const std::string& name, const std::string& text);
    std::string text(const std::string& name) const;

    const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

// "TMOE", u16 version, u32 count, then per entry: u32 name length, name,
// u32 rank, u64 dims[rank], f32 payload; trailing u64 FNV-1a of all prior
// bytes. Everything little-endian.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file);
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace truemoe
