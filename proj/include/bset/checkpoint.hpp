#pragma once

// Little-endian binary checkpoint:
//
//   "BSET"                       4 bytes magic
//   version                      u32 (currently 1)
//   input rank r, dims           u32, r x u64
//   layer count L                u32
//     per layer: kind u8, units u32, kernel u32, padding u32, pool u32, rate f64
//   tensor count P               u32
//     per tensor: name length u32, name bytes, rank u32, dims u64..., values f64...
//
// A plain tensor archive (used by the perturbed-corpus cache) has input rank 0
// and no layers.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "bset/network.hpp"

namespace bset {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Architecture arch;  // input empty and no layers for a tensor archive
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

void save_tensors(const std::vector<NamedTensor>& tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

// SHA-256 of the encoded checkpoint bytes.
std::string model_fingerprint(const Model& model);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bset
