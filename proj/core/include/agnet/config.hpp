#pragma once

// Layered run configuration: built-in defaults <- config file <- overrides.
// The file format is flat dotted keys, one `key = value` per line, with `#`
// comments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agnet/data.hpp"
#include "agnet/evaluation.hpp"
#include "agnet/gradcheck.hpp"
#include "agnet/model.hpp"
#include "agnet/training.hpp"

namespace agnet {

class Config {
 public:
  static Config defaults();

  // Rejects keys that have no default, suggesting the closest valid key.
  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);  // "key=value"

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  std::vector<std::string> keys() const;
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

Config load_config(const std::optional<std::filesystem::path>& path,
                   std::span<const std::string> overrides);

// Closest candidate by edit distance.
std::string nearest_key(const std::string& key, std::span<const std::string> candidates);

ModelConfig model_config_from(const Config& config);
TrainConfig train_config_from(const Config& config);
SyntheticSpec synthetic_spec_from(const Config& config);
FusionConfig fusion_config_from(const Config& config);
EvalOptions eval_options_from(const Config& config);
GradCheckOptions gradcheck_options_from(const Config& config);

std::vector<LrSpan> parse_lr_schedule(const std::string& text);

}  // namespace agnet
