#include "vedit/config.hpp"

#include "vedit/io_util.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace vedit {

namespace {

const std::vector<std::pair<Stage, const char*>>& stage_names() {
  static const std::vector<std::pair<Stage, const char*>> names{
      {Stage::kPretrain, "pretrain"},         {Stage::kMine, "mine"},     {Stage::kBuildBench, "build-bench"},
      {Stage::kTrainHypernet, "train-hypernet"}, {Stage::kEdit, "edit"},  {Stage::kEvaluate, "evaluate"},
      {Stage::kScopeSearch, "scope-search"},  {Stage::kReport, "report"}};
  return names;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_integer(const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v) {
  try {
    return io::parse_double(v);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T>
Entry integer(std::string key, T RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return std::to_string(c.*field); },
          [field](RunConfig& c, const std::string& v) { c.*field = parse_integer<T>(v); }};
}

template <class Get>
Entry integer_ref(std::string key, Get ref) {
  using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_integer<T>(v); }};
}

template <class Get>
Entry real_ref(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return io::format_double(ref(const_cast<RunConfig&>(c))); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_real(v); }};
}

template <class Get>
Entry bool_ref(std::string key, Get ref) {
  return {key, [ref](const RunConfig& c) { return std::string(ref(const_cast<RunConfig&>(c)) ? "true" : "false"); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v); }};
}

Entry text(std::string key, std::string RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return c.*field; },
          [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

#define REF(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t;
    t.push_back(integer("seed", &RunConfig::seed));
    for (auto [k, f] : std::initializer_list<std::pair<const char*, std::string RunConfig::*>>{
             {"paths.out", &RunConfig::out},
             {"paths.base_model", &RunConfig::base_model},
             {"paths.strong_model", &RunConfig::strong_model},
             {"paths.mined", &RunConfig::mined},
             {"paths.benchmark", &RunConfig::benchmark},
             {"paths.manifest", &RunConfig::manifest},
             {"paths.hypernet", &RunConfig::hypernet},
             {"paths.meta_log", &RunConfig::meta_log},
             {"paths.edit_log", &RunConfig::edit_log},
             {"paths.metrics", &RunConfig::metrics},
             {"paths.curve_plot", &RunConfig::curve_plot},
             {"paths.scopes", &RunConfig::scopes},
             {"paths.report", &RunConfig::report}}) {
      t.push_back(text(k, f));
    }
    t.push_back(integer_ref("vit.image_size", REF(vit.image_size)));
    t.push_back(integer_ref("vit.patch_size", REF(vit.patch_size)));
    t.push_back(integer_ref("vit.embed_dim", REF(vit.embed_dim)));
    t.push_back(integer_ref("vit.mlp_dim", REF(vit.mlp_dim)));
    t.push_back(integer_ref("vit.num_blocks", REF(vit.num_blocks)));
    t.push_back(integer_ref("vit.num_heads", REF(vit.num_heads)));

    t.push_back(integer("data.train_count", &RunConfig::train_count));
    t.push_back(integer("data.heldout_count", &RunConfig::heldout_count));
    t.push_back(integer("data.strong_train_count", &RunConfig::strong_train_count));
    t.push_back(integer("data.pool_count", &RunConfig::pool_count));
    t.push_back(integer("data.shift_source_count", &RunConfig::shift_source_count));
    t.push_back(integer("data.locality_source_count", &RunConfig::locality_source_count));

    for (auto [prefix, get] : std::initializer_list<std::pair<std::string, TrainSchedule& (*)(RunConfig&)>>{
             {"pretrain.", [](RunConfig& c) -> TrainSchedule& { return c.pretrain; }},
             {"strong.", [](RunConfig& c) -> TrainSchedule& { return c.strong; }}}) {
      t.push_back(integer_ref(prefix + "steps", [get](RunConfig& c) -> auto& { return get(c).steps; }));
      t.push_back(integer_ref(prefix + "batch_size", [get](RunConfig& c) -> auto& { return get(c).batch_size; }));
      t.push_back(real_ref(prefix + "lr", [get](RunConfig& c) -> auto& { return get(c).lr; }));
      t.push_back(real_ref(prefix + "weight_decay", [get](RunConfig& c) -> auto& { return get(c).weight_decay; }));
      t.push_back(integer_ref(prefix + "warmup_steps", [get](RunConfig& c) -> auto& { return get(c).warmup_steps; }));
      t.push_back(real_ref(prefix + "clip_norm", [get](RunConfig& c) -> auto& { return get(c).clip_norm; }));
      t.push_back(bool_ref(prefix + "hflip", [get](RunConfig& c) -> auto& { return get(c).hflip; }));
    }

    t.push_back(integer("mine.count", &RunConfig::mine_count));
    t.push_back(text("mine.distance", &RunConfig::distance));
    t.push_back(integer("bench.min_group", &RunConfig::min_group));
    t.push_back(integer("bench.max_group", &RunConfig::max_group));
    t.push_back({"bench.shifts",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.shifts.size(); ++i) s += (i ? "," : "") + std::string(desk::to_string(c.shifts[i]));
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.shifts.clear();
                   for (const auto& item : split_list(v)) c.shifts.push_back(desk::corruption_from_string(item));
                 }});
    t.push_back(integer("bench.locality_size", &RunConfig::locality_size));

    t.push_back(text("scope", &RunConfig::scope));
    t.push_back(integer("hyper.blocks", &RunConfig::hyper_blocks));
    t.push_back(integer("hyper.heads", &RunConfig::hyper_heads));
    t.push_back(integer("hyper.hidden_dim", &RunConfig::hyper_hidden));

    t.push_back({"meta.path", [](const RunConfig& c) { return std::string(to_string(c.meta.path)); },
                 [](RunConfig& c, const std::string& v) { c.meta.path = meta_path_from_string(v); }});
    t.push_back({"meta.episodes", [](const RunConfig& c) { return std::string(to_string(c.meta.episodes)); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "cutmix") c.meta.episodes = EpisodeKind::kCutMix;
                   else if (v == "pgd") c.meta.episodes = EpisodeKind::kPgd;
                   else throw std::invalid_argument("expected cutmix or pgd, got '" + v + "'");
                 }});
    t.push_back(integer_ref("meta.inner_steps", REF(meta.inner.steps)));
    t.push_back(real_ref("meta.inner_lr", REF(meta.inner.lr)));
    t.push_back(real_ref("meta.inner_clip", REF(meta.inner.clip_norm)));
    t.push_back(real_ref("meta.outer_lr", REF(meta.outer.lr)));
    t.push_back(real_ref("meta.aux_lr", REF(meta.outer.aux_lr)));
    t.push_back(integer_ref("meta.aux_steps", REF(meta.outer.aux_steps)));
    t.push_back(real_ref("meta.aux_init", REF(meta.outer.aux_init)));
    t.push_back(bool_ref("meta.aux_init_from_hypernet", REF(meta.outer.aux_init_from_hypernet)));
    t.push_back(real_ref("meta.lambda", REF(meta.outer.lambda)));
    t.push_back(real_ref("meta.k", REF(meta.outer.temperature)));
    t.push_back(real_ref("meta.outer_clip", REF(meta.outer.clip_norm)));
    t.push_back(integer_ref("meta.batch_size", REF(meta.outer.batch_size)));
    t.push_back(integer_ref("meta.iters", REF(meta.outer.max_iters)));
    t.push_back(integer_ref("meta.cutmix_min_side", REF(meta.cutmix.min_side)));
    t.push_back(integer_ref("meta.cutmix_max_side", REF(meta.cutmix.max_side)));
    t.push_back(integer_ref("meta.checkpoint_every", REF(meta.checkpoint_every)));

    t.push_back(real_ref("edit.lr", REF(edit.lr)));
    t.push_back(integer_ref("edit.max_steps", REF(edit.max_steps)));
    t.push_back(real_ref("edit.stop_loss", REF(edit.stop_loss)));
    t.push_back(real_ref("edit.rho", REF(rho)));
    t.push_back(real_ref("edit.target_sparsity", REF(target_sparsity)));
    t.push_back(integer("edit.group", &RunConfig::edit_group));
    t.push_back(integer("edit.member", &RunConfig::edit_member));

    t.push_back({"eval.sparsity_grid",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sparsity_grid.size(); ++i) s += (i ? "," : "") + io::format_double(c.sparsity_grid[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sparsity_grid.clear();
                   for (const auto& item : split_list(v)) c.sparsity_grid.push_back(parse_real(item));
                 }});
    t.push_back(bool_ref("eval.random_baseline", REF(eval_random)));
    t.push_back(integer("eval.max_edits_per_group", &RunConfig::max_edits_per_group));
    t.push_back(bool_ref("scope_search.include_msa", REF(scope_include_msa)));
    return t;
  }();
  return table;
}

#undef REF

}  // namespace

const char* to_string(Stage s) {
  for (const auto& [st, name] : stage_names()) {
    if (st == s) return name;
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  for (const auto& [st, name] : stage_names()) {
    if (s == name) return st;
  }
  throw ConfigError("unknown stage '" + s + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> out;
    for (const auto& [st, name] : stage_names()) out.push_back(st);
    return out;
  }();
  return stages;
}

ConfigError::ConfigError(const std::string& msg, int line, std::string key)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + (key.empty() ? "" : " (" + key + ")") + ": " + msg
                                  : msg),
      line_(line),
      key_(std::move(key)) {}

void RunConfig::validate() const {
  const auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(why, 0, key); };
  try {
    ViTConfig v = vit;
    v.validate();
  } catch (const std::invalid_argument& e) {
    fail("vit", e.what());
  }
  if (out.empty()) fail("paths.out", "paths.out must not be empty");
  for (auto [k, n] : {std::pair{"data.train_count", train_count}, {"data.heldout_count", heldout_count},
                      {"data.strong_train_count", strong_train_count}, {"data.pool_count", pool_count},
                      {"data.shift_source_count", shift_source_count},
                      {"data.locality_source_count", locality_source_count}}) {
    if (n <= 0) fail(k, std::string(k) + " must be > 0");
  }
  for (const auto* s : {&pretrain, &strong}) {
    const std::string p = s == &pretrain ? "pretrain." : "strong.";
    if (s->steps < 0) fail(p + "steps", "steps must be >= 0");
    if (s->batch_size <= 0) fail(p + "batch_size", "batch_size must be > 0");
    if (!(s->lr > 0)) fail(p + "lr", "lr must be > 0");
    if (s->warmup_steps < 0) fail(p + "warmup_steps", "warmup_steps must be >= 0");
  }
  if (mine_count == 0 || int(mine_count) > pool_count) fail("mine.count", "mine.count must be in [1, data.pool_count]");
  if (distance != "tree" && distance != "zero_one") fail("mine.distance", "mine.distance must be tree or zero_one");
  if (min_group < 2) fail("bench.min_group", "bench.min_group must be >= 2");
  if (max_group != 0 && max_group < min_group) fail("bench.max_group", "bench.max_group must be 0 or >= bench.min_group");
  try {
    EditScope::parse(scope).validate(vit);
  } catch (const std::exception& e) {
    fail("scope", e.what());
  }
  if (hyper_blocks <= 0 || hyper_heads <= 0 || hyper_hidden <= 0) fail("hyper", "hypernetwork sizes must be > 0");
  if (!(meta.outer.temperature > 0)) fail("meta.k", "meta.k must be > 0");
  try {
    meta.inner.validate();
    meta.outer.validate();
  } catch (const std::invalid_argument& e) {
    fail("meta", e.what());
  }
  if (meta.cutmix.min_side <= 0 || meta.cutmix.max_side < meta.cutmix.min_side ||
      meta.cutmix.max_side > vit.image_size) {
    fail("meta.cutmix_max_side", "cutmix sides must satisfy 0 < min <= max <= image size");
  }
  if (meta.checkpoint_every < 0) fail("meta.checkpoint_every", "meta.checkpoint_every must be >= 0");
  try {
    edit.validate();
  } catch (const std::invalid_argument& e) {
    fail("edit", e.what());
  }
  if (!(rho >= 0.0 && rho <= 1.0)) fail("edit.rho", "edit.rho must be in [0, 1]");
  if (target_sparsity > 1.0) fail("edit.target_sparsity", "edit.target_sparsity must be <= 1 (negative disables it)");
  if (sparsity_grid.empty()) fail("eval.sparsity_grid", "eval.sparsity_grid must not be empty");
  for (double s : sparsity_grid) {
    if (!(s >= 0.0 && s <= 1.0)) fail("eval.sparsity_grid", "sparsities must lie in [0, 1]");
  }
}

std::string RunConfig::path(const std::string& name) const {
  const std::filesystem::path p(name);
  return p.is_absolute() ? name : (std::filesystem::path(out) / p).string();
}

std::uint64_t RunConfig::stream_seed(const std::string& name) const { return desk::mix_seed(seed, io::fnv1a(name)); }

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const Entry*> index;
  for (const auto& e : entries()) index[e.key] = &e;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line);
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown key '" + key + "'", line, key);
    if (!seen.insert(key).second) throw ConfigError("duplicate key '" + key + "'", line, key);
    try {
      it->second->set(cfg, value);
    } catch (const std::exception& e) {
      throw ConfigError(e.what(), line, key);
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

// The output directory does not change any result, so it is left out.
std::string config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.out = RunConfig{}.out;
  return io::hex64(io::fnv1a(serialize_config(c)));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.push_back(e.key);
  return keys;
}

}  // namespace vedit
