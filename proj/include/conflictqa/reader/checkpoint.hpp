#pragma once

#include <filesystem>
#include <vector>

#include "conflictqa/reader/model.hpp"
#include "conflictqa/reader/trainer.hpp"

namespace conflictqa::reader {

// Binary layout: the 8-byte magic "CQARDR01", a little-endian u64 header length, a JSON header
// {format, version, config, vocab, history, tensors: [{name, shape, offset, dtype}]}, then the
// tensors as little-endian 32-bit floats.
void save_checkpoint(const std::filesystem::path& path, const ReaderModel& model,
                     const std::vector<EpochRecord>& history);

struct LoadedCheckpoint {
  ReaderModel model;
  std::vector<EpochRecord> history;
};

// Throws ValidationError on malformed files and ConfigError on missing or mis-shaped tensors.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Rounds every parameter to 32-bit precision, as a save/load round trip would.
void round_to_f32(ReaderModel& model);

}  // namespace conflictqa::reader
