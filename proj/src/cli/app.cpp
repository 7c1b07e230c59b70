#include <CLI11.hpp>

#include <ostream>

#include "abmil/cli.hpp"
#include "abmil/errors.hpp"

namespace abmil::cli {

namespace {

Config config_from(const std::string& path, const std::optional<std::uint64_t>& seed) {
  Config config = path.empty() ? Config{} : load_config(path);
  if (seed) config.set_seed(*seed);
  return config;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-based multiple instance learning with memory-bounded gradient accumulation", "abmil"};
  app.require_subcommand(1);

  std::string config_path, out_dir, dataset_dir, checkpoint, scale = "smoke";
  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen", "Generate a bag dataset");
  gen->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Dataset directory")->required();
  gen->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* tr = app.add_subcommand("train", "Train on a dataset directory");
  tr->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  tr->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  tr->add_option("--out", out_dir, "Run directory")->required();
  tr->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ev->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  ev->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* mx = app.add_subcommand("matrix", "Run the strategy comparison matrix");
  mx->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  mx->add_option("--out", out_dir, "Output directory")->required();
  mx->add_option("--seed", seed, "Master seed (overrides the config)");

  auto* vf = app.add_subcommand("verify", "Run the verification suites");
  vf->add_option("--scale", scale, "smoke or full")->check(CLI::IsMember({"smoke", "full"}));
  vf->add_option("--out", out_dir, "Optional report directory");
  vf->add_option("--seed", seed, "Seed for the randomized checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kConfigError;
  }

  try {
    if (gen->parsed()) return cmd_gen(config_from(config_path, seed), out_dir, out);
    if (tr->parsed()) return cmd_train(config_from(config_path, seed), dataset_dir, out_dir, out);
    if (ev->parsed()) return cmd_eval(config_from(config_path, seed), dataset_dir, checkpoint, out_dir, out);
    if (mx->parsed()) return cmd_matrix(config_from(config_path, seed), out_dir, out);
    if (vf->parsed()) {
      std::optional<std::filesystem::path> dir;
      if (!out_dir.empty()) dir = out_dir;
      return cmd_verify(verify::parse_scale(scale), seed.value_or(0), dir, out);
    }
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ShapeError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const FormatError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kIoError;
  } catch (const std::invalid_argument& e) {
    err << "configuration error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kConfigError;
}

}  // namespace abmil::cli
