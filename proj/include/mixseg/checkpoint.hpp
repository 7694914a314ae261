#pragma once

#include <filesystem>
#include <optional>

#include "mixseg/adam.hpp"
#include "mixseg/model.hpp"

namespace mixseg {

// Binary checkpoint: the "MSEG1" magic, a format version, the model
// configuration, one entry per named tensor (parameters then batch-norm
// buffers) with little-endian f32 payloads, and an optional Adam section.
inline constexpr char kCheckpointMagic[5] = {'M', 'S', 'E', 'G', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model<float>& model, const AdamState<float>* optimizer,
                     const std::filesystem::path& path);

// Restores a model; the stored configuration must match `expected`. When
// `optimizer_out` is given and the file has an optimizer section, the Adam
// state is restored into it.
Model<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected,
                             AdamState<float>* optimizer_out = nullptr);

}  // namespace mixseg
