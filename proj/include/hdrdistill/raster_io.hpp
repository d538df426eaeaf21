#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hdrdistill/layers.hpp"

namespace hdrdistill {

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raster container family: little-endian header {4-byte magic, u32 k, u32 c,
// u32 h, u32 w} followed by 32-bit float planes in C-major, row-major order.
// Extra per-format payload (variable-size level records, exposure lists) sits
// between header and planes and is owned by the specific format's reader.
struct Raster {
    std::string magic;
    std::uint32_t k = 0, c = 0, h = 0, w = 0;
    std::vector<float> payload;
};

void write_raster(const std::string& path, const Raster& r);
Raster read_raster(const std::string& path, const std::string& expected_magic);

// Multi-section variant used for pyramid features: header {magic, levels,
// 0, h, w}, then per level {u32 c, u32 h, u32 w} + its plane data.
struct RasterLevel {
    std::uint32_t c = 0, h = 0, w = 0;
    std::vector<float> data;
};
void write_raster_levels(const std::string& path, const std::string& magic, std::uint32_t base_h,
                         std::uint32_t base_w, const std::vector<RasterLevel>& levels);
std::vector<RasterLevel> read_raster_levels(const std::string& path,
                                            const std::string& expected_magic,
                                            std::uint32_t* base_h = nullptr,
                                            std::uint32_t* base_w = nullptr);

// Parameter checkpoints: "CKPT" header, then ordered named tensors stored as
// {u32 name_len, name, u32 ndims, u32 dims[], f64 data}. Doubles, not floats:
// resuming must reproduce training bit for bit.
void write_checkpoint(const std::string& path, const ParamGroup& params);
ParamGroup read_checkpoint(const std::string& path);
// Reads only the sections whose name starts with `prefix`; everything else is
// skipped without being deserialized.
ParamGroup read_checkpoint_section(const std::string& path, const std::string& prefix);
std::vector<std::string> checkpoint_tensor_names(const std::string& path);

}  // namespace hdrdistill
