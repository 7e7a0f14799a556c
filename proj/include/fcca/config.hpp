#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fcca/federation.hpp"

namespace fcca {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExperimentKind { fcca, fedavg, m_sweep, ablation_unknown };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_kind(std::string_view text);

struct RunConfig {
  FederationConfig federation;
  ExperimentKind kind = ExperimentKind::fcca;
  std::filesystem::path out = "fcca_out";
  std::vector<std::uint64_t> seeds{0};
  std::size_t sweep_min = 1;
  std::size_t sweep_max = 4;
  bool dump_datasets = false;

  void validate() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Flat `key = value` lines; '#' starts a comment. Later layers win:
// defaults < file < overrides. Unknown keys and bad values throw ConfigError.
RunConfig parse_config(std::string_view file_text, const Overrides& overrides = {});
RunConfig load_config(const std::optional<std::filesystem::path>& path, const Overrides& overrides = {});

// Splits "key=value".
std::pair<std::string, std::string> split_assignment(std::string_view text);

// Canonical key = value text that parse_config reads back to the same config.
std::string render_config(const RunConfig& config);
void write_effective_config(const std::filesystem::path& dir, const RunConfig& config);

std::vector<std::string> config_keys();

}  // namespace fcca
