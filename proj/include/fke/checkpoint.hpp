#pragma once

#include <filesystem>
#include <stdexcept>

#include "fke/concept_model.hpp"

namespace fke {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ConceptModel model;
  NoiseModel noise;
};

// Binary layout, integers little-endian:
//   "FKCM" | u8 version | u64 header length | header JSON
//   | tensor data as IEEE-754 u64 bit patterns, header order | u32 crc32 of all preceding bytes
// The header holds the vocabulary, dims, encoder mode and the name and shape of every tensor.
void save_checkpoint(const ConceptModel& model, const NoiseModel& noise, const std::filesystem::path& path);

// Throws CheckpointError on a missing file, wrong magic or version, checksum
// failure, or tensors that do not fit the described model.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fke
