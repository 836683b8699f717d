#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "occludox/error.hpp"
#include "occludox/harness.hpp"

namespace h = occludox::harness;

int main(int argc, char** argv) {
  h::tune_allocator();
  CLI::App app{"occlusion-attack robustness toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", h::version());

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool fast = false, force = false;
  std::string out;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--threads", threads, "worker cap for evaluation")->check(CLI::PositiveNumber);
  app.add_flag("--fast", fast, "short default iteration grid {0, 10, 50}");
  app.add_flag("--force", force, "allow gen-data into a non-empty directory");
  app.add_option("--out", out, "output path of the command");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as PPM folders");
  auto* train = app.add_subcommand("train", "train a model and write its checkpoint");
  auto* attack = app.add_subcommand("attack", "attack one checkpoint over a strength grid");
  auto* sweep = app.add_subcommand("sweep", "evaluate every defense at every strength");
  auto* smooth = app.add_subcommand("smooth-predict", "randomized-smoothing predictions on the test split");
  auto* plot = app.add_subcommand("plot", "render a report CSV as an SVG chart");
  std::string report_path;
  plot->add_option("report", report_path, "report CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(h::ExitCode::kConfig);
  }

  try {
    if (plot->parsed()) {
      h::cmd_plot(report_path, out.empty() ? std::filesystem::path(report_path).replace_extension(".svg")
                                           : std::filesystem::path(out));
      return 0;
    }
    h::Config config = config_path.empty() ? h::parse_config("{}") : h::load_config(config_path);
    h::apply_overrides(config, {seed, threads, fast});
    if (gen->parsed()) {
      std::filesystem::path dir = out;
      if (dir.empty()) {
        if (!config.data.dir) throw occludox::ConfigError("gen-data needs --out or data.dir");
        dir = *config.data.dir;
      }
      h::cmd_gen_data(config, dir, force);
    } else if (train->parsed()) {
      if (!out.empty()) config.train.out = out;
      h::cmd_train(config);
    } else if (attack->parsed()) {
      if (!out.empty()) config.attack.out = out;
      h::cmd_attack(config);
    } else if (sweep->parsed()) {
      if (!out.empty()) config.sweep.out = out;
      h::cmd_sweep(config);
    } else if (smooth->parsed()) {
      if (!out.empty()) config.smooth.out = out;
      std::printf("%.4f\n", h::cmd_smooth_predict(config));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return static_cast<int>(h::exit_code_for(e));
  }
  return 0;
}
