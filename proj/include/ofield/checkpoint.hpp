#pragma once

// Binary checkpoint: "OFLD", u32 version, u32 count, then per entry
// u32 name length, utf-8 name, u32 rank, u32 dims[rank], float32 payload.
// All integers and floats little-endian.

#include "ofield/autodiff.hpp"
#include "ofield/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofield {

inline constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    ad::Shape shape;
    std::vector<float> values;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::vector<NamedTensor> to_named(const ad::ParameterSet<float>& params);
/// Copies values into matching parameters by name; every parameter must be present
/// with an identical shape.
void assign_from(ad::ParameterSet<float>& params, const std::vector<NamedTensor>& tensors);

}  // namespace ofield
