#include "ofield/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace ofield {
namespace {

constexpr char kMagic[4] = {'O', 'F', 'L', 'D'};

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (static_cast<int64_t>(t.values.size()) != ad::numel(t.shape))
            throw CheckpointError("checkpoint: tensor " + t.name + " has inconsistent shape");
        put_u32(os, static_cast<uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u32(os, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) put_u32(os, static_cast<uint32_t>(d));
        for (float f : t.values) put_u32(os, std::bit_cast<uint32_t>(f));
    }
    if (!os) throw CheckpointError("checkpoint: write failed for " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("checkpoint: bad magic in " + path.string());
    const uint32_t version = get_u32(is);
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t count = get_u32(is);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const uint32_t len = get_u32(is);
        t.name.resize(len);
        if (!is.read(t.name.data(), len)) throw CheckpointError("checkpoint: truncated name");
        const uint32_t rank = get_u32(is);
        for (uint32_t r = 0; r < rank; ++r) t.shape.push_back(get_u32(is));
        t.values.resize(static_cast<std::size_t>(ad::numel(t.shape)));
        for (float& f : t.values) f = std::bit_cast<float>(get_u32(is));
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<NamedTensor> to_named(const ad::ParameterSet<float>& params) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : params.entries)
        out.push_back({name, t.shape(), std::vector<float>(t.values().begin(), t.values().end())});
    return out;
}

void assign_from(ad::ParameterSet<float>& params, const std::vector<NamedTensor>& tensors) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    for (auto& [name, t] : params.entries) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError("checkpoint: missing tensor " + name);
        if (it->second->shape != t.shape())
            throw CheckpointError("checkpoint: shape mismatch for " + name + ": " +
                                  ad::to_string(it->second->shape) + " vs " + ad::to_string(t.shape()));
        std::copy(it->second->values.begin(), it->second->values.end(), t.mutable_values().begin());
    }
}

}  // namespace ofield
