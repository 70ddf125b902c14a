#pragma once

#include <map>
#include <string>
#include <vector>

#include "ins/data.hpp"
#include "ins/pipeline.hpp"

namespace ins::cli {

/// Flat key=value configuration. Every key has a documented default (the
/// desk preset); `preset=full` switches to the full-scale values. Unknown
/// keys are rejected.
class RunConfig {
 public:
  RunConfig();

  struct KeyInfo {
    std::string name;
    std::string desk;
    std::string full;
    std::string help;
  };
  static const std::vector<KeyInfo>& keys();

  /// `preset` is applied first so later keys override it.
  void set(const std::string& key, const std::string& value);
  void apply_preset(const std::string& preset);
  /// "key=value" form.
  void set_assignment(const std::string& assignment);
  /// Lines of key=value; '#' starts a comment.
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin);

  const std::string& get(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::size_t get_count(const std::string& key) const;
  Real get_real(const std::string& key) const;
  bool is_set_explicitly(const std::string& key) const { return explicit_.count(key) > 0; }

  std::string to_text() const;
  void save(const std::string& path) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> explicit_;
};

data::SyntheticBodyConfig body_config(const RunConfig& cfg);
data::SamplingOptions sampling_options(const RunConfig& cfg, std::uint64_t seed);
InsConfig model_config(const RunConfig& cfg);
TrainerConfig trainer_config(const RunConfig& cfg);

}  // namespace ins::cli
