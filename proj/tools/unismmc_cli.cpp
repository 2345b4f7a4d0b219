// unismmc: dataset generation, training sweeps and consistency tables.
//
//   unismmc gen --spec semi70.json --out semi70.ummc
//   unismmc train --config sweep.json --out runs/ [--parallel 4]
//   unismmc consistency runs/mt_mml_seed0 runs/unis_mmc_seed0

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unismmc/unismmc.hpp"

namespace fs = std::filesystem;
using namespace unismmc;

namespace {

int cmd_gen(const fs::path& spec_path, const fs::path& out) {
  const auto spec = synth_spec_from_json(schema::parse(io::read_file(spec_path), spec_path.string()),
                                         spec_path.string());
  const Dataset ds = generate(spec);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, out);
  char crc[16];
  std::snprintf(crc, sizeof crc, "%08x", dataset_checksum(ds));
  std::cout << "wrote " << out.string() << " (" << ds.train.size() << "/" << ds.valid.size() << "/" << ds.test.size()
            << " samples, crc32 " << crc << ")\n";
  return 0;
}

int cmd_train(const fs::path& config_path, const fs::path& out, std::size_t parallel) {
  const ExperimentConfig ec = load_experiment_config(config_path);
  const Dataset data = load_experiment_data(ec);
  const SweepResult res = run_sweep(ec, data, out, parallel);
  std::cout << format_summary_table(res.summary);
  for (const auto& r : res.runs)
    if (!r.error.empty()) std::cerr << "error: " << r.error << '\n';
  return res.ok() ? 0 : 1;
}

int cmd_consistency(const std::vector<fs::path>& dirs) {
  std::cout << format_consistency_table(consistency_table(dirs));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unimodality-supervised multimodal contrastive learning experiments"};
  app.require_subcommand(1);

  fs::path spec_path, gen_out;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic multimodal dataset");
  gen->add_option("--spec", spec_path, "JSON dataset spec")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output dataset file")->required();

  fs::path config_path, train_out;
  std::size_t parallel = 1;
  auto* train = app.add_subcommand("train", "Run every (method, seed) pair of an experiment config");
  train->add_option("--config", config_path, "JSON experiment config")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);

  std::vector<fs::path> run_dirs;
  auto* cons = app.add_subcommand("consistency", "Compare unimodal prediction consistency across runs");
  cons->add_option("run_dirs", run_dirs, "Completed run directories")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(spec_path, gen_out);
    if (*train) return cmd_train(config_path, train_out, parallel);
    if (*cons) return cmd_consistency(run_dirs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
