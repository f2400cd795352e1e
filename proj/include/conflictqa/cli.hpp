#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "conflictqa/errors.hpp"
#include "conflictqa/generation.hpp"
#include "conflictqa/prompting.hpp"
#include "conflictqa/reader/model.hpp"

namespace conflictqa::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitClient = 3,
  kExitNonFinite = 4,
  kExitMissingSplit = 5,
};

class MissingSplitError : public Error {
 public:
  using Error::Error;
};

// Too many generation calls failed for the run to be trusted.
class ClientBudgetError : public Error {
 public:
  using Error::Error;
};

// Settings shared by the subcommands. Paths left empty are unused by the command at hand.
struct RunConfig {
  std::vector<std::filesystem::path> inputs;  // every file the command reads
  std::filesystem::path out_dir = "out";
  std::size_t top_k = 5;
  std::string method = "entity";
  std::vector<double> probabilities;
  reader::ReaderConfig reader;
  PromptVariant variant = PromptVariant::SemiParametric;
  std::size_t k = 5;
  GenerationParams params;
  std::optional<std::int64_t> seed;

  // Throws ConfigError; missing input files are reported before any work starts.
  void validate() const;
};

// Parses "0.3,0.5,0.75" style lists; each value must lie in [0, 1]. Throws ConfigError naming `flag`.
std::vector<double> parse_probabilities(const std::string& text, const std::string& flag);

// Level label of a perturbed split, e.g. 0.3539 -> "35%".
std::string level_label(double perturbed_fraction);

// Entry point of the conflictqa executable. Never throws; returns an ExitCode.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace conflictqa::cli
