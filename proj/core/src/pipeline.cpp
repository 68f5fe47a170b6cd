#include "vedit/pipeline.hpp"

#include "vedit/checkpoint.hpp"
#include "vedit/errors.hpp"
#include "vedit/io_util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace vedit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class StageLog {
 public:
  StageLog(const RunConfig& cfg, std::ostream& out) : out_(out), path_(cfg.path("run.log")) {
    fs::create_directories(cfg.out);
    file_.open(path_, std::ios::app);
    const char* v = std::getenv("VEDIT_LOG");
    quiet_ = v && std::string(v) == "quiet";
  }
  void operator()(const std::string& msg) {
    file_ << msg << '\n';
    file_.flush();
    if (!quiet_) out_ << msg << std::endl;
  }
  const std::string& path() const { return path_; }

 private:
  std::ostream& out_;
  std::string path_;
  std::ofstream file_;
  bool quiet_ = false;
};

void require(const std::string& path, const std::string& produced_by) {
  if (!fs::exists(path)) throw MissingInputError("missing input " + path + " (run the " + produced_by + " stage first)");
}

void write_text(const std::string& path, const std::string& text) {
  io::write_atomic(path, [&](std::ostream& o) { o << text; });
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Splits {
  std::uint64_t root;
  explicit Splits(const RunConfig& c) : root(c.stream_seed("data")) {}
};

json stamp(const RunConfig& cfg) {
  json j;
  for (const auto& [k, v] : provenance(cfg)) j[k] = v;
  return j;
}

json point_json(const bench::PointMetrics& p) {
  json j;
  j["control"] = p.control.by_sparsity ? "sparsity" : "rho";
  j["value"] = p.control.value;
  j["sr"] = p.sr;
  j["mean_gr"] = p.mean_gr ? json(*p.mean_gr) : json(nullptr);
  j["lr"] = p.lr ? json(*p.lr) : json(nullptr);
  json g = json::array();
  for (const auto& v : p.group_gr) g.push_back(v ? json(*v) : json(nullptr));
  j["group_gr"] = g;
  j["mean_sparsity"] = p.mean_sparsity;
  j["mean_steps"] = p.mean_steps;
  j["edits"] = p.edits;
  return j;
}

HypernetConfig hyper_config(const RunConfig& cfg, const EditScope& scope) {
  HypernetConfig h = HypernetConfig::for_model(cfg.vit, scope, cfg.stream_seed("hypernet-init"));
  h.num_blocks = cfg.hyper_blocks;
  h.num_heads = cfg.hyper_heads;
  h.hidden_dim = cfg.hyper_hidden;
  return h;
}

BaseModel load_base(const RunConfig& cfg) {
  require(cfg.path(cfg.base_model), "pretrain");
  return load_model(cfg.path(cfg.base_model));
}

void stage_pretrain(const RunConfig& cfg, StageLog& log) {
  const Splits s(cfg);
  const auto heldout = desk::make_split(desk::heldout_split(s.root, cfg.heldout_count), cfg.vit.image_size);
  ViTConfig vc = cfg.vit;
  vc.seed = cfg.stream_seed("vit-init");
  TrainSchedule sched = cfg.pretrain;
  sched.seed = cfg.stream_seed("pretrain");
  const auto every = std::max(1, sched.steps / 10);
  const auto train = desk::make_split(desk::base_train_split(s.root, cfg.train_count), cfg.vit.image_size);
  BaseModel base = pretrain_base(train, heldout, vc, sched, nullptr, [&](int step, double loss) {
    if (step % every == 0) log("pretrain step " + std::to_string(step) + " loss " + io::format_double(loss));
  });
  log("base held-out accuracy " + io::format_double(base.heldout_accuracy));
  save_model(cfg.path(cfg.base_model), base, provenance(cfg));

  TrainSchedule ss = cfg.strong;
  ss.seed = cfg.stream_seed("strong");
  // The reference model sees the base data plus a larger, more varied split.
  auto strain = desk::make_split(desk::strong_train_split(s.root, cfg.strong_train_count), cfg.vit.image_size);
  strain.insert(strain.end(), train.begin(), train.end());
  const int every_s = std::max(1, ss.steps / 10);
  BaseModel strong = train_model(base, strain, heldout, ss, nullptr, [&](int step, double loss) {
    if (step % every_s == 0) log("strong step " + std::to_string(step) + " loss " + io::format_double(loss));
  });
  log("strong held-out accuracy " + io::format_double(strong.heldout_accuracy));
  if (strong.heldout_accuracy <= base.heldout_accuracy) {
    log("warning: the strong model is not more accurate than the base on held-out data");
  }
  save_model(cfg.path(cfg.strong_model), strong, provenance(cfg));
}

LabeledImages mining_pool(const RunConfig& cfg) {
  return desk::make_split(desk::mining_pool_split(Splits(cfg).root, cfg.pool_count), cfg.vit.image_size);
}

void stage_mine(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  require(cfg.path(cfg.strong_model), "pretrain");
  const BaseModel strong = load_model(cfg.path(cfg.strong_model));
  const auto pool = mining_pool(cfg);
  std::vector<Image> images;
  for (const auto& p : pool) images.push_back(p.image);
  const auto dist = cfg.distance == "tree" ? bench::ClassDistance::desk_tree()
                                           : bench::ClassDistance::zero_one(cfg.vit.num_classes);
  const auto mined = bench::mad_mine(images, base, strong, dist, cfg.mine_count);
  std::ostringstream out;
  for (const auto& [k, v] : provenance(cfg)) out << "# " << k << "=" << v << "\n";
  out << "rank\tpool_index\tscore\tbase_pred\tstrong_pred\n";
  std::size_t positive = 0;
  for (std::size_t r = 0; r < mined.size(); ++r) {
    const auto& m = mined[r];
    positive += m.score > 0 ? 1 : 0;
    out << r << '\t' << m.pool_index << '\t' << io::format_double(m.score) << '\t' << m.base_pred << '\t'
        << m.strong_pred << '\n';
  }
  write_text(cfg.path(cfg.mined), out.str());
  log("mined " + std::to_string(mined.size()) + " samples, " + std::to_string(positive) + " with disagreement");
}

std::vector<bench::MinedSample> read_mined(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<bench::MinedSample> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("rank", 0) == 0) continue;
    std::istringstream ls(line);
    std::size_t rank;
    std::string score;
    bench::MinedSample m;
    if (!(ls >> rank >> m.pool_index >> score >> m.base_pred >> m.strong_pred)) {
      throw std::runtime_error(path + ": malformed line '" + line + "'");
    }
    m.score = io::parse_double(score);
    out.push_back(m);
  }
  return out;
}

void stage_build_bench(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  require(cfg.path(cfg.mined), "mine");
  const auto mined = read_mined(cfg.path(cfg.mined));
  const auto pool = mining_pool(cfg);
  std::vector<Image> images;
  std::vector<int> truth;
  for (const auto& p : pool) {
    images.push_back(p.image);
    truth.push_back(p.label);
  }
  Benchmark b;
  bench::GroupingConfig gc;
  gc.min_size = cfg.min_group;
  gc.max_size = cfg.max_group;
  b.groups = bench::build_groups(mined, images, gc, truth);
  const Splits s(cfg);
  const auto source = desk::make_split(desk::shift_source_split(s.root, cfg.shift_source_count), cfg.vit.image_size);
  std::vector<bench::ShiftSpec> shifts;
  for (std::size_t i = 0; i < cfg.shifts.size(); ++i) shifts.push_back({cfg.shifts[i], cfg.stream_seed("shift") + i});
  for (auto& g : bench::build_shift_groups(source, base, shifts, cfg.max_group)) {
    if (g.members.size() >= cfg.min_group) b.groups.push_back(std::move(g));
  }
  const auto cand_src =
      desk::make_split(desk::locality_candidate_split(s.root, cfg.locality_source_count), cfg.vit.image_size);
  b.locality = bench::build_locality_pool(bench::boundary_candidates(cand_src, base), base);
  if (b.locality.members.size() > cfg.locality_size) {
    b.locality.members.resize(cfg.locality_size);
    b.locality.base_pred.resize(cfg.locality_size);
    b.locality.source_index.resize(cfg.locality_size);
  }
  b.header = provenance(cfg);
  std::size_t failures = 0;
  for (const auto& g : b.groups) {
    failures += g.members.size();
    log("group " + g.id + " '" + g.name + "' size " + std::to_string(g.members.size()));
  }
  log(std::to_string(b.groups.size()) + " groups, " + std::to_string(failures) + " failures, locality pool " +
      std::to_string(b.locality.members.size()));
  if (b.groups.empty()) throw std::runtime_error("no benchmark groups reached the minimum size");
  save_benchmark(cfg.path(cfg.benchmark), b);
  bench::write_manifest(cfg.path(cfg.manifest), b.groups, b.locality, b.header);
}

Benchmark load_bench(const RunConfig& cfg) {
  require(cfg.path(cfg.benchmark), "build-bench");
  return load_benchmark(cfg.path(cfg.benchmark));
}

HypernetState load_hyper(const RunConfig& cfg) {
  require(cfg.path(cfg.hypernet), "train-hypernet");
  return load_hypernet(cfg.path(cfg.hypernet));
}

void stage_train_hypernet(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  const EditScope scope = EditScope::parse(cfg.scope);
  const auto pool = desk::make_split(desk::base_train_split(Splits(cfg).root, cfg.train_count), cfg.vit.image_size);
  MetaTrainConfig mc = cfg.meta;
  mc.seed = cfg.stream_seed("meta");
  if (mc.checkpoint_every > 0) mc.checkpoint_path = cfg.path(cfg.hypernet) + ".partial";
  MetaTrainLog mlog;
  const int every = std::max(1, mc.outer.max_iters / 20);
  const HypernetState state = train_hypernetwork(base, pool, scope, hyper_config(cfg, scope), mc, &mlog,
                                                 [&](const MetaTrainRecord& r) {
                                                   if (r.iteration % every == 0) {
                                                     log("meta iter " + std::to_string(r.iteration) + " kl " +
                                                         io::format_double(r.kl_loss) + " sparsity " +
                                                         io::format_double(r.sparsity));
                                                   }
                                                 });
  save_hypernet(cfg.path(cfg.hypernet), state, provenance(cfg));
  mlog.write_jsonl(cfg.path(cfg.meta_log));
  if (mlog.size() >= 4) {
    const auto [first, last] = quarter_means(mlog);
    log("meta KL first quarter " + io::format_double(first) + ", last quarter " + io::format_double(last));
  }
}

void stage_edit(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  const Benchmark b = load_bench(cfg);
  const HypernetState h = load_hyper(cfg);
  if (cfg.edit_group >= b.groups.size() || cfg.edit_member >= b.groups[cfg.edit_group].members.size()) {
    throw ConfigError("edit.group / edit.member out of range for the benchmark");
  }
  const auto& g = b.groups[cfg.edit_group];
  EditRequest req;
  req.image = g.members[cfg.edit_member].image;
  req.label = g.members[cfg.edit_member].label;
  req.rho = cfg.rho;
  if (cfg.target_sparsity >= 0) req.target_sparsity = cfg.target_sparsity;
  req.group = g.id;
  req.id = g.id + "/" + std::to_string(cfg.edit_member);
  const EditOutcome o = edit_once(base, h, EditScope::parse(cfg.scope), req, cfg.edit);
  append_edit_log(cfg.path(cfg.edit_log), {req.id, req.group, o.mask ? o.mask->rho : 0.0,
                                           o.mask ? o.mask->sparsity() : 0.0, o.steps, o.success, o.final_loss});
  auto extra = provenance(cfg);
  extra["edit.request"] = req.id;
  save_model(cfg.path("edited.ckpt"), base.with_params(o.params), extra);
  log("edit " + req.id + ": " + (o.success ? "success" : "failure") + " after " + std::to_string(o.steps) +
      " steps, loss " + io::format_double(o.final_loss) + ", sparsity " +
      io::format_double(o.mask ? o.mask->sparsity() : 0.0));
}

void stage_evaluate(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  const Benchmark b = load_bench(cfg);
  const HypernetState h = load_hyper(cfg);
  const EditScope scope = EditScope::parse(cfg.scope);
  bench::EvalConfig ec;
  ec.edit = cfg.edit;
  ec.seed = cfg.stream_seed("evaluate");
  ec.max_edits_per_group = cfg.max_edits_per_group;
  ec.log_path = cfg.path(cfg.edit_log);
  json j = stamp(cfg);
  json curves;
  std::vector<CurveSeries> series;
  const auto run = [&](const std::string& name, bench::MaskPolicy policy, std::vector<bench::SweepPoint> sweep) {
    ec.policy = policy;
    ec.sweep = std::move(sweep);
    const auto rep = bench::evaluate(base, policy == bench::MaskPolicy::kHypernet ? &h : nullptr, scope, b.groups,
                                     b.locality, ec);
    json arr = json::array();
    CurveSeries cs{name, {}, {}};
    for (const auto& p : rep.points) {
      arr.push_back(point_json(p));
      cs.points.emplace_back(p.mean_gr.value_or(0.0), p.lr.value_or(1.0));
      cs.labels.push_back(io::format_double(p.control.value));
      log(name + " " + (p.control.by_sparsity ? "sparsity " : "rho ") + io::format_double(p.control.value) +
          ": SR " + io::format_double(p.sr) + " GR " + io::format_double(p.mean_gr.value_or(-1)) + " LR " +
          io::format_double(p.lr.value_or(-1)));
    }
    curves[name] = arr;
    series.push_back(std::move(cs));
  };
  std::vector<bench::SweepPoint> grid;
  for (double s : cfg.sparsity_grid) grid.push_back({true, s});
  run("ft", bench::MaskPolicy::kHypernet, {{false, 0.0}});
  run("hypernet", bench::MaskPolicy::kHypernet, grid);
  if (cfg.eval_random) run("random", bench::MaskPolicy::kRandom, grid);
  j["curves"] = curves;
  json groups = json::array();
  for (const auto& g : b.groups) {
    groups.push_back({{"id", g.id}, {"name", g.name}, {"provenance", bench::to_string(g.provenance)},
                      {"size", g.members.size()}});
  }
  j["groups"] = groups;
  j["locality_size"] = b.locality.members.size();
  j["scope"] = scope.describe();
  write_text(cfg.path(cfg.metrics), j.dump(2) + "\n");
  series.erase(series.begin());  // the single FT point is reported, not plotted
  write_text(cfg.path(cfg.curve_plot), grlr_svg(series));
}

void stage_scope_search(const RunConfig& cfg, StageLog& log) {
  const BaseModel base = load_base(cfg);
  const Benchmark b = load_bench(cfg);
  bench::EvalConfig ec;
  ec.edit = cfg.edit;
  ec.max_edits_per_group = cfg.max_edits_per_group;
  const auto results =
      bench::scope_search(base, b.groups, b.locality, bench::triple_candidates(base, cfg.scope_include_msa), ec);
  json j = stamp(cfg);
  json arr = json::array();
  for (const auto& r : results) {
    arr.push_back({{"scope", r.candidate.name}, {"gr", r.gr}, {"lr", r.lr}, {"sr", r.sr}, {"front", r.front}});
    log("scope " + r.candidate.name + ": GR " + io::format_double(r.gr) + " LR " + io::format_double(r.lr) +
        " front " + std::to_string(r.front));
  }
  j["scopes"] = arr;
  write_text(cfg.path(cfg.scopes), j.dump(2) + "\n");
}

void stage_report(const RunConfig& cfg, StageLog& log) {
  require(cfg.path(cfg.metrics), "evaluate");
  const json m = json::parse(read_text(cfg.path(cfg.metrics)));
  std::ostringstream r;
  r << "# Editing report\n\n";
  for (const auto& [k, v] : provenance(cfg)) r << "- " << k << ": " << v << "\n";
  r << "\nScope: " << m.value("scope", "") << ", locality pool: " << m.value("locality_size", 0) << " samples\n\n";
  r << "| group | name | provenance | size |\n|---|---|---|---|\n";
  for (const auto& g : m["groups"]) {
    r << "| " << g["id"].get<std::string>() << " | " << g["name"].get<std::string>() << " | "
      << g["provenance"].get<std::string>() << " | " << g["size"] << " |\n";
  }
  const auto fmt = [](const json& v) {
    if (v.is_null()) return std::string("n/a");
    std::ostringstream o;
    o << std::fixed << std::setprecision(3) << v.get<double>();
    return o.str();
  };
  for (const auto& [name, pts] : m["curves"].items()) {
    r << "\n## " << name << "\n\n| control | value | SR | GR | LR | sparsity | steps |\n|---|---|---|---|---|---|---|\n";
    for (const auto& p : pts) {
      r << "| " << p["control"].get<std::string>() << " | " << fmt(p["value"]) << " | " << fmt(p["sr"]) << " | "
        << fmt(p["mean_gr"]) << " | " << fmt(p["lr"]) << " | " << fmt(p["mean_sparsity"]) << " | "
        << fmt(p["mean_steps"]) << " |\n";
    }
  }
  if (fs::exists(cfg.path(cfg.scopes))) {
    const json s = json::parse(read_text(cfg.path(cfg.scopes)));
    r << "\n## Scope search\n\n| scope | GR | LR | front |\n|---|---|---|---|\n";
    for (const auto& e : s["scopes"]) {
      r << "| " << e["scope"].get<std::string>() << " | " << fmt(e["gr"]) << " | " << fmt(e["lr"]) << " | "
        << e["front"] << " |\n";
    }
  }
  if (fs::exists(cfg.path(cfg.meta_log))) {
    std::istringstream in(read_text(cfg.path(cfg.meta_log)));
    MetaTrainLog ml;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json e = json::parse(line);
      MetaTrainRecord rec;
      rec.iteration = e.value("iteration", 0);
      rec.kl_loss = e.value("kl_loss", 0.0);
      rec.wall_ms = e.value("wall_ms", 0.0);
      ml.append(rec);
    }
    if (ml.size() >= 4) {
      const auto [first, last] = quarter_means(ml);
      r << "\nMeta-training KL: first quarter " << fmt(json(first)) << ", last quarter " << fmt(json(last)) << "\n";
    }
  }
  write_text(cfg.path(cfg.report), r.str());
  log("wrote " + cfg.path(cfg.report));
}

}  // namespace

std::map<std::string, std::string> provenance(const RunConfig& cfg) {
  return {{"config_hash", config_hash(cfg)}, {"seed", std::to_string(cfg.seed)}, {"version", kVersionTag}};
}

int run_stage(Stage stage, const RunConfig& cfg, std::ostream& out) {
  std::unique_ptr<StageLog> log;
  try {
    cfg.validate();
    log = std::make_unique<StageLog>(cfg, out);
    (*log)(std::string("stage ") + to_string(stage) + " config " + config_hash(cfg) + " seed " +
           std::to_string(cfg.seed));
    switch (stage) {
      case Stage::kPretrain: stage_pretrain(cfg, *log); break;
      case Stage::kMine: stage_mine(cfg, *log); break;
      case Stage::kBuildBench: stage_build_bench(cfg, *log); break;
      case Stage::kTrainHypernet: stage_train_hypernet(cfg, *log); break;
      case Stage::kEdit: stage_edit(cfg, *log); break;
      case Stage::kEvaluate: stage_evaluate(cfg, *log); break;
      case Stage::kScopeSearch: stage_scope_search(cfg, *log); break;
      case Stage::kReport: stage_report(cfg, *log); break;
    }
    return kExitOk;
  } catch (const MissingInputError& e) {
    out << "error: " << e.what() << std::endl;
    return kExitMissingInput;
  } catch (const ConfigError& e) {
    out << "config error: " << e.what() << std::endl;
    return kExitMissingInput;
  } catch (const NumericalError& e) {
    out << "numerical error: " << e.what() << (log ? " (see " + log->path() + ")" : std::string()) << std::endl;
    if (log) (*log)(std::string("numerical error: ") + e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    out << "error: " << e.what() << std::endl;
    if (log) (*log)(std::string("error: ") + e.what());
    return kExitFailure;
  }
}

void save_benchmark(const std::string& path, const Benchmark& b) {
  Checkpoint ck;
  ck.header = b.header;
  ck.header["kind"] = "benchmark";
  ck.header["groups"] = std::to_string(b.groups.size());
  const auto join = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  const auto image_matrix = [](const Image& im) {
    ad::Matrix m(im.channels, im.height * im.width);
    for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = im.data[std::size_t(i)];
    return m;
  };
  for (std::size_t g = 0; g < b.groups.size(); ++g) {
    const auto& grp = b.groups[g];
    const std::string p = "group." + std::to_string(g) + ".";
    ck.header[p + "id"] = grp.id;
    ck.header[p + "name"] = grp.name;
    ck.header[p + "provenance"] = bench::to_string(grp.provenance);
    std::vector<int> labels;
    for (const auto& m : grp.members) labels.push_back(m.label);
    ck.header[p + "labels"] = join(labels);
    ck.header[p + "sources"] = join(grp.source_index);
    for (std::size_t i = 0; i < grp.members.size(); ++i) {
      ck.tensors.emplace_back("g" + std::to_string(g) + "/" + std::to_string(i), image_matrix(grp.members[i].image));
    }
  }
  std::vector<int> labels;
  for (const auto& m : b.locality.members) labels.push_back(m.label);
  ck.header["locality.labels"] = join(labels);
  ck.header["locality.base_pred"] = join(b.locality.base_pred);
  ck.header["locality.sources"] = join(b.locality.source_index);
  ck.header["locality.max_gap"] = io::format_double(b.locality.max_gap);
  for (std::size_t i = 0; i < b.locality.members.size(); ++i) {
    ck.tensors.emplace_back("l/" + std::to_string(i), image_matrix(b.locality.members[i].image));
  }
  if (!b.groups.empty()) {
    const auto& im = b.groups.front().members.front().image;
    ck.header["image.size"] = std::to_string(im.height);
  }
  write_checkpoint(path, ck);
}

Benchmark load_benchmark(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  const auto get = [&](const std::string& k) -> const std::string& {
    auto it = ck.header.find(k);
    if (it == ck.header.end()) throw std::runtime_error(path + ": benchmark header missing '" + k + "'");
    return it->second;
  };
  if (get("kind") != "benchmark") throw std::runtime_error(path + ": not a benchmark file");
  const auto ints = [](const std::string& s) {
    std::vector<long long> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoll(item));
    return out;
  };
  const auto image = [](const ad::Matrix& m) {
    const int side = int(std::lround(std::sqrt(double(m.cols()))));
    Image im(int(m.rows()), side, side);
    for (ad::Index i = 0; i < m.size(); ++i) im.data[std::size_t(i)] = m.data()[i];
    return im;
  };
  Benchmark b;
  b.header = ck.header;
  std::size_t t = 0;
  const std::size_t ng = std::stoul(get("groups"));
  for (std::size_t g = 0; g < ng; ++g) {
    const std::string p = "group." + std::to_string(g) + ".";
    bench::BenchmarkGroup grp;
    grp.id = get(p + "id");
    grp.name = get(p + "name");
    grp.provenance = get(p + "provenance") == "mad-mined" ? bench::Provenance::kMadMined
                                                          : bench::Provenance::kSyntheticShift;
    const auto labels = ints(get(p + "labels"));
    for (auto s : ints(get(p + "sources"))) grp.source_index.push_back(std::size_t(s));
    for (std::size_t i = 0; i < labels.size(); ++i, ++t) {
      if (t >= ck.tensors.size()) throw std::runtime_error(path + ": truncated benchmark");
      grp.members.push_back({image(ck.tensors[t].second), int(labels[i])});
    }
    b.groups.push_back(std::move(grp));
  }
  const auto labels = ints(get("locality.labels"));
  for (auto v : ints(get("locality.base_pred"))) b.locality.base_pred.push_back(int(v));
  for (auto v : ints(get("locality.sources"))) b.locality.source_index.push_back(std::size_t(v));
  b.locality.max_gap = io::parse_double(get("locality.max_gap"));
  for (std::size_t i = 0; i < labels.size(); ++i, ++t) {
    if (t >= ck.tensors.size()) throw std::runtime_error(path + ": truncated benchmark");
    b.locality.members.push_back({image(ck.tensors[t].second), int(labels[i])});
  }
  return b;
}

std::string grlr_svg(const std::vector<CurveSeries>& series) {
  const double W = 480, H = 360, L = 60, R = 20, T = 20, B = 50;
  double x0 = 1, x1 = 0, y0 = 1, y1 = 0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 <= x0) { x0 = std::max(0.0, x0 - 0.05); x1 = std::min(1.0, x1 + 0.05); }
  if (y1 <= y0) { y0 = std::max(0.0, y0 - 0.05); y1 = std::min(1.0, y1 + 0.05); }
  if (x1 <= x0) x1 = x0 + 0.1;
  if (y1 <= y0) y1 = y0 + 0.1;
  const auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  const auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream o;
  o << std::fixed << std::setprecision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">GR</text>\n";
  o << "<text x=\"15\" y=\"" << (H - B + T) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
    << (H - B + T) / 2 << ")\">LR</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" font-size=\"10\" text-anchor=\"middle\">"
      << std::setprecision(3) << xv << std::setprecision(2) << "</text>\n";
    o << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 3 << "\" font-size=\"10\" text-anchor=\"end\">"
      << std::setprecision(3) << yv << std::setprecision(2) << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* c = colors[s % 4];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
    for (const auto& [x, y] : series[s].points) o << px(x) << "," << py(y) << " ";
    o << "\"/>\n";
    for (std::size_t i = 0; i < series[s].points.size(); ++i) {
      const auto [x, y] = series[s].points[i];
      o << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
      if (i < series[s].labels.size()) {
        o << "<text x=\"" << px(x) + 5 << "\" y=\"" << py(y) - 5 << "\" font-size=\"9\">" << series[s].labels[i]
          << "</text>\n";
      }
    }
    o << "<text x=\"" << W - R - 80 << "\" y=\"" << T + 14 * (s + 1) << "\" fill=\"" << c << "\">" << series[s].name
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace vedit
