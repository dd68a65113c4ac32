#pragma once

#include <filesystem>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "mmfusion/config.hpp"
#include "mmfusion/data.hpp"
#include "mmfusion/model.hpp"
#include "mmfusion/training.hpp"

namespace mmfusion {

// Keys accepted by train/compare config files.
const std::set<std::string>& training_config_keys();
// Keys accepted by synthetic spec files.
const std::set<std::string>& synthetic_spec_keys();

inline constexpr std::size_t kDefaultValidationCount = 500;

SyntheticSpec synthetic_spec_from_config(const KeyValueConfig& cfg);

struct CompareRow {
  FusionKind fusion;
  EvalResult result;
  std::vector<TrainLogRow> log;
};

// Trains audio-only, video-only, concat, fc_concat and mfb variants of the
// configured aggregator with identical seeds and budgets, sequentially.
std::vector<CompareRow> run_comparison(const KeyValueConfig& cfg, const Dataset& train_set,
                                       const Dataset& val_set);

// Entry point behind the `mmfusion` executable. Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmfusion
