#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sarl/core.hpp"
#include "sarl/model.hpp"
#include "sarl/train.hpp"

namespace sarl::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// NIfTI-1, single file, float32, little-endian.

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiDataOffset = 352;
inline constexpr std::int16_t kNiftiFloat32 = 16;

struct NiftiImage {
  Volume4D volume;
  // Raw 348-byte header as read; passing it back to write_nifti keeps every
  // field this library does not interpret.
  std::vector<std::uint8_t> header;
};

NiftiImage read_nifti(const fs::path& path);
NiftiImage decode_nifti(std::span<const std::uint8_t> bytes);

// H, W, Z, N map to NIfTI dims 1..4 with H varying fastest on disk.
std::vector<std::uint8_t> encode_nifti(const Volume4D& vol,
                                       std::span<const std::uint8_t> header_template = {});
void write_nifti(const Volume4D& vol, const fs::path& path,
                 std::span<const std::uint8_t> header_template = {});

// ---------------------------------------------------------------------------
// FSL gradient tables: bvals is one row, bvecs is three rows (x, y, z).

inline constexpr double kBvecNormTolerance = 0.1;

GradientTable parse_bvalbvec(const std::string& bval_text, const std::string& bvec_text);
GradientTable read_bvalbvec(const fs::path& bval_path, const fs::path& bvec_path);
void write_bvalbvec(const GradientTable& table, const fs::path& bval_path,
                    const fs::path& bvec_path);

// ---------------------------------------------------------------------------
// Checkpoints: a directory holding manifest.json and params.bin.

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "sarl-checkpoint";

struct Checkpoint {
  model::ModelConfig model;
  train::TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  nlohmann::json metrics = nlohmann::json::object();
  // Gradient directions of the model's input channels, in channel order.
  std::vector<Vec3> input_dirs;
  model::ParameterSet params;
};

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir);
Checkpoint load_checkpoint(const fs::path& dir);

// ---------------------------------------------------------------------------
// Rendering and hashing.

// H x W map rendered as binary PGM with H rows; NaN renders as 0.
std::vector<std::uint8_t> encode_pgm(std::span<const double> map, std::size_t h, std::size_t w,
                                     double lo, double hi);
void render_map(std::span<const double> map, std::size_t h, std::size_t w, const fs::path& path,
                double lo, double hi);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_file(const fs::path& path);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace sarl::io
