// vedit <stage> --config PATH [--seed N] [--out DIR]
#include "vedit/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
  CLI::App app{"Structured-mask model editing for a desk-scale vision transformer"};
  std::string stage_name, config_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool print_config = false;

  std::vector<std::string> stages;
  for (auto s : vedit::all_stages()) stages.emplace_back(vedit::to_string(s));
  app.add_option("stage", stage_name, "Pipeline stage")->required()->check(CLI::IsMember(stages));
  app.add_option("--config", config_path, "Run configuration (key = value lines)")->required();
  app.add_option("--seed", seed, "Override the root seed");
  app.add_option("--out", out_dir, "Override the output directory");
  app.add_flag("--print-config", print_config, "Print the resolved configuration and exit");
  CLI11_PARSE(app, argc, argv);

  vedit::RunConfig cfg;
  try {
    cfg = vedit::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    cfg.validate();
  } catch (const vedit::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return vedit::kExitMissingInput;
  }
  if (print_config) {
    std::cout << vedit::serialize_config(cfg);
    return vedit::kExitOk;
  }
  return vedit::run_stage(vedit::stage_from_string(stage_name), cfg, std::cerr);
}
