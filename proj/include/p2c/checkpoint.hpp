#pragma once

#include <filesystem>
#include <string>

#include "p2c/model.hpp"
#include "p2c/tokenizer.hpp"

// Checkpoint file layout (all integers little-endian):
//   bytes 0..7   magic "P2CCKPT\0"
//   bytes 8..11  uint32 format version (1)
//   bytes 12..19 uint64 header length H
//   next H bytes UTF-8 JSON header:
//                {"version", "config": ModelConfig, "src_vocab": vocab, "tgt_vocab": vocab,
//                 "arrays": [{"name", "rows", "cols"}, ...]}
//   remainder    float64 values of each array in header order, row-major
namespace p2c::model {

struct Checkpoint {
  Parameters params;
  tok::Vocabulary src_vocab;
  tok::Vocabulary tgt_vocab;
  std::string id;  // FNV-1a 64-bit digest of the file, hex
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const tok::Vocabulary& src_vocab,
                     const tok::Vocabulary& tgt_vocab);

/// Validates magic, version, vocabulary sizes and every array shape against the config.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace p2c::model
