#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "abmil/bagdata.hpp"
#include "abmil/evalbench.hpp"
#include "abmil/gradstrat.hpp"
#include "abmil/model.hpp"
#include "abmil/verify.hpp"

namespace abmil::cli {

/// 1 covers failed verification and any other runtime failure.
enum ExitCode : int { kSuccess = 0, kFailed = 1, kConfigError = 2, kIoError = 3 };

enum class DataSource { Synthetic, Idx };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::size_t n_classes = 10;
  std::filesystem::path idx_images;
  std::filesystem::path idx_labels;
  std::size_t idx_limit = 60000;
  data::BagSpec bags;
};

struct MatrixConfig {
  std::vector<train::Strategy> strategies{train::Strategy::FullBag, train::Strategy::Accumulate};
  std::vector<double> alphas{25.0, 50.0, 100.0};
  std::vector<double> infer_samples{100.0};
  std::size_t repeats = 3;
};

/// Everything a command needs. One master seed feeds the dataset, the
/// initialization and every training stream.
struct Config {
  std::uint64_t seed = 0;
  DataConfig data;
  model::ModelConfig model;
  train::TrainConfig train;
  MatrixConfig matrix;
  double infer_sample_percent = 100.0;

  /// Propagates the master seed into the nested configs.
  void set_seed(std::uint64_t s);
  void validate() const;
};

/// Flat key = value text with [data], [model], [train], [matrix] and [eval]
/// sections; keys before the first section are global (only `seed`). Lines
/// starting with '#' or ';' are comments. Throws ConfigError naming the
/// offending line and key.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

/// Canonical text of every setting; parse_config(echo_config(c)) == c.
std::string echo_config(const Config& config);

/// Writes <dir>/manifest.txt: comment lines with command, version, timestamp
/// and outputs, followed by echo_config, so the manifest is itself a config.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const Config& config,
                    const std::vector<std::pair<std::string, std::string>>& paths);

data::Dataset make_dataset(const Config& config);

int cmd_gen(const Config& config, const std::filesystem::path& out_dir, std::ostream& log);
int cmd_train(const Config& config, const std::filesystem::path& dataset_dir, const std::filesystem::path& out_dir,
              std::ostream& log);
int cmd_eval(const Config& config, const std::filesystem::path& dataset_dir, const std::filesystem::path& checkpoint,
             const std::filesystem::path& out_dir, std::ostream& log);
int cmd_matrix(const Config& config, const std::filesystem::path& out_dir, std::ostream& log);
int cmd_verify(verify::Scale scale, std::uint64_t seed, const std::optional<std::filesystem::path>& out_dir,
               std::ostream& log);

/// Argument parsing and dispatch; maps exceptions to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace abmil::cli
