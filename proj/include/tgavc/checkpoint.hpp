// Binary checkpoint archive: a format tag, a JSON metadata document and a
// list of float32 tensors keyed by path strings ("decoder/blocks.0.attn.q.weight",
// "optim/a/decoder/m/...").
//
// Layout (little endian):
//   char[8]  "TGAVCCK1"
//   u32      format version
//   u64      metadata length, then UTF-8 JSON
//   u64      tensor count, then per tensor:
//            u32 key length, key bytes, i64 rows, i64 cols, rows*cols f32 (row major)

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tgavc/autograd.hpp"
#include "tgavc/optim.hpp"

namespace tgavc::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Archive {
  std::string metadata = "{}";
  std::map<std::string, Eigen::MatrixXf> tensors;
};

std::vector<std::uint8_t> serialize(const Archive& a);
Archive deserialize(const std::vector<std::uint8_t>& bytes);
void write(const std::filesystem::path& path, const Archive& a);
/// Throws FileError if unreadable, CheckpointError on a bad tag, version or layout.
Archive read(const std::filesystem::path& path);

void put(Archive& a, const std::string& prefix, const ParamStore<float>& store);
/// Copies tensors into an existing store; every entry must be present with
/// the stored shape.
void get(const Archive& a, const std::string& prefix, ParamStore<float>& store);
bool has_prefix(const Archive& a, const std::string& prefix);

void put(Archive& a, const std::string& prefix, const optim::AdamState<float>& state, const ParamStore<float>& store);
/// Restores moments; a missing group leaves the state empty (fresh optimizer).
/// The step count is kept in metadata by the caller.
void get(const Archive& a, const std::string& prefix, optim::AdamState<float>& state, const ParamStore<float>& store);

}  // namespace tgavc::checkpoint
