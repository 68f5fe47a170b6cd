// Run configuration: flat "section.key = value" text with typed, validated
// entries. Unknown keys and malformed values are rejected with the line.
#pragma once

#include "vedit/bench.hpp"
#include "vedit/meta_train.hpp"
#include "vedit/pretrain.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace vedit {

inline constexpr const char* kVersionTag = "vedit-1.0.0";

enum class Stage { kPretrain, kMine, kBuildBench, kTrainHypernet, kEdit, kEvaluate, kScopeSearch, kReport };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);
const std::vector<Stage>& all_stages();

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& msg, int line = 0, std::string key = {});
  int line() const { return line_; }
  const std::string& key() const { return key_; }

 private:
  int line_;
  std::string key_;
};

struct RunConfig {
  std::uint64_t seed = 1;

  // Output directory and artifact names (relative names resolve against out).
  std::string out = "vedit_out";
  std::string base_model = "base.ckpt";
  std::string strong_model = "strong.ckpt";
  std::string mined = "mined.tsv";
  std::string benchmark = "bench.ckpt";
  std::string manifest = "manifest.txt";
  std::string hypernet = "hypernet.ckpt";
  std::string meta_log = "meta_log.jsonl";
  std::string edit_log = "edits.jsonl";
  std::string metrics = "metrics.json";
  std::string curve_plot = "grlr.svg";
  std::string scopes = "scopes.json";
  std::string report = "report.md";

  ViTConfig vit;

  int train_count = 6000;
  int heldout_count = 500;
  int strong_train_count = 12000;
  int pool_count = 1500;
  int shift_source_count = 300;
  int locality_source_count = 400;

  TrainSchedule pretrain{600, 32, 1e-3, 0.05, 30, 1.0, true, 0};
  TrainSchedule strong{4000, 32, 5e-4, 0.05, 200, 1.0, true, 0};

  std::size_t mine_count = 600;
  std::string distance = "tree";  // tree | zero_one
  std::size_t min_group = 20;
  std::size_t max_group = 40;
  std::vector<desk::Corruption> shifts{desk::Corruption::kArtStyle, desk::Corruption::kStageLight};
  std::size_t locality_size = 100;

  std::string scope = "ffn:4-6";
  int hyper_blocks = 5;
  int hyper_heads = 4;
  int hyper_hidden = 128;
  MetaTrainConfig meta;

  EditConfig edit;
  double rho = 0.0;
  double target_sparsity = -1.0;  // negative: use rho
  std::size_t edit_group = 0;
  std::size_t edit_member = 0;

  std::vector<double> sparsity_grid{0.25, 0.5, 0.75, 0.9, 0.95};
  bool eval_random = true;
  std::size_t max_edits_per_group = 0;
  bool scope_include_msa = true;

  void validate() const;
  std::string path(const std::string& name) const;
  std::uint64_t stream_seed(const std::string& name) const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Every key, one per line, in a fixed order.
std::string serialize_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace vedit
