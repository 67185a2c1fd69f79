#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lithopatch/lithopatch.hpp"

namespace lp = lithopatch;
namespace pl = lithopatch::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Kidney-stone patch classification pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  bool resume = false;
  std::vector<std::string> overrides;

  const std::vector<std::pair<std::string, std::string>> stage_commands = {
      {"extract", "cut grid patches inside the fragment masks"},
      {"balance", "equalize per-class patch counts"},
      {"split", "group-aware train/val/test split"},
      {"augment", "augmented copies of train and val patches"},
      {"featurize", "HSI + LBP feature matrices"},
      {"train", "fit the configured classifier per view"},
      {"evaluate", "confusion matrices and weighted precision/recall"},
      {"crossval", "repeated stratified k-fold or leave-one-out"},
      {"project", "PCA projection and scatter export"},
      {"ablate", "compare patch sizes end to end"},
      {"run", "extract through project in one go"},
  };
  std::vector<CLI::App*> stage_apps;
  for (const auto& [name, help] : stage_commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_flag("--resume", resume, "skip stages whose inputs and outputs match the ledger");
    sub->add_option("--seed-override", overrides, "name=value, repeatable");
    stage_apps.push_back(sub);
  }

  std::string fixture_dir;
  std::uint64_t fixture_seed = 7;
  int per_class_view = 5;
  int image_size = 960;
  auto* fixtures = app.add_subcommand("make-fixtures", "write synthetic fragment images, masks and a manifest");
  fixtures->add_option("--out", fixture_dir, "output directory")->required();
  fixtures->add_option("--seed", fixture_seed, "generator seed");
  fixtures->add_option("--per-class-view", per_class_view, "images per class and view");
  fixtures->add_option("--image-size", image_size, "square image side in pixels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (fixtures->parsed()) {
      const auto manifest = lp::make_fixtures(fixture_dir, fixture_seed, {per_class_view, image_size});
      std::cout << "wrote " << manifest.entries.size() << " images to " << fixture_dir << '\n';
      return 0;
    }
    auto cfg = pl::load_config(config_path);
    for (const auto& o : overrides) pl::apply_seed_override(cfg, o);
    pl::RunOptions opts;
    opts.resume = resume;
    pl::Runner runner(cfg, opts);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "extract") runner.extract();
    else if (cmd == "balance") runner.balance();
    else if (cmd == "split") runner.split();
    else if (cmd == "augment") runner.augment();
    else if (cmd == "featurize") runner.featurize();
    else if (cmd == "train") runner.train();
    else if (cmd == "evaluate") runner.evaluate();
    else if (cmd == "crossval") runner.crossval();
    else if (cmd == "project") runner.project();
    else if (cmd == "ablate") runner.ablate();
    else runner.run_all();
    return 0;
  } catch (const lp::Error& e) {
    std::cerr << "lithopatch: " << e.what() << '\n';
    return lp::exit_status(e.code());
  } catch (const std::exception& e) {
    std::cerr << "lithopatch: internal error: " << e.what() << '\n';
    return 3;
  }
}
