#pragma once

// File formats. Tabular data is CSV with a header row; configs and manifests
// are line-oriented key=value. Lines starting with '#' are comments, and every
// written file starts with one naming the manifest it belongs to. Doubles are
// written with 17 significant digits so they read back bit-identically.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "crlhf/core.hpp"

namespace crlhf::io {

std::string format_double(double v);

// Ordered key=value pairs; later duplicates replace earlier values.
class KeyValues {
 public:
  void set(const std::string& key, std::string value);
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  std::optional<std::string> get(const std::string& key) const;
  double get_double(const std::string& key) const;  // throws validation if absent
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

KeyValues parse_key_values(const std::string& text, const std::string& source);
KeyValues read_key_values(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
// Writes "# manifest: <manifest>" followed by body. An empty manifest skips the line.
void write_text(const std::filesystem::path& path, const std::string& body,
                const std::string& manifest = {});

// Features: prompt,action,f0..f{d-1}, one row per (prompt, action) pair.
std::string features_csv(const FeatureTable& table);
struct FeatureLoad {
  FeatureTable table;
  std::vector<std::string> warnings;
};
// Rows whose norm exceeds 1 are rescaled with a warning when renormalize is
// set, otherwise they are a validation error.
FeatureLoad parse_features(const std::string& text, const std::string& source,
                           bool renormalize = true);

// Preferences: prompt,action1,action2,y1..y{K}.
std::string preferences_csv(const PreferenceDataset& data);
PreferenceDataset parse_preferences(const std::string& text, const std::string& source);

// Policy: prompt,action,prob. Rows must sum to 1 within 1e-9.
std::string policy_csv(const Policy& pi);
Policy parse_policy(const std::string& text, const std::string& source, std::size_t num_prompts,
                    std::size_t num_actions);

// Reward parameters: oracle,t0..t{d-1}; oracle 0 is the target.
std::string thetas_csv(const std::vector<std::vector<double>>& thetas);
std::vector<std::vector<double>> parse_thetas(const std::string& text, const std::string& source);

struct ExternalData {
  FeatureTable table;
  PreferenceDataset data;
  Policy pi0;
  std::vector<std::string> warnings;
};

// Loads an externally produced feature table, preference records and an
// optional reference policy (uniform when absent), then checks that the
// records index into the table.
ExternalData ingest_external(const std::filesystem::path& features,
                             const std::filesystem::path& preferences,
                             const std::optional<std::filesystem::path>& reference = std::nullopt,
                             bool renormalize = true);

}  // namespace crlhf::io
