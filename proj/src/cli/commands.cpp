#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "abmil/cli.hpp"
#include "abmil/errors.hpp"

#ifndef ABMIL_VERSION
#define ABMIL_VERSION "0.0.0"
#endif

namespace abmil::cli {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : "nan"; }

data::Dataset load_checked(const Config& config, const fs::path& dataset_dir) {
  data::Dataset ds = data::load_dataset(dataset_dir);
  if (ds.input_dim() != config.model.input_dim) {
    throw ConfigError("dataset/config dimension mismatch: dataset instances have dimension " +
                      std::to_string(ds.input_dim()) + ", config input_dim is " +
                      std::to_string(config.model.input_dim));
  }
  return ds;
}

}  // namespace

void write_manifest(const fs::path& dir, const std::string& command, const Config& config,
                    const std::vector<std::pair<std::string, std::string>>& paths) {
  std::ostringstream os;
  os << "# command = " << command << '\n';
  os << "# tool_version = " << ABMIL_VERSION << '\n';
  os << "# timestamp = " << utc_timestamp() << '\n';
  for (const auto& [name, path] : paths) os << "# " << name << " = " << path << '\n';
  os << echo_config(config);
  write_text(dir / "manifest.txt", os.str());
}

data::Dataset make_dataset(const Config& config) {
  if (config.data.source == DataSource::Synthetic) {
    return data::make_synthetic_dataset(config.data.bags, config.model.input_dim, config.data.n_classes);
  }
  const data::InstancePool pool = data::load_idx(config.data.idx_images, config.data.idx_labels, config.data.idx_limit);
  if (pool.dim() != config.model.input_dim) {
    throw ConfigError("IDX images have dimension " + std::to_string(pool.dim()) + " but input_dim is " +
                      std::to_string(config.model.input_dim));
  }
  return data::build_bags(pool, config.data.bags);
}

int cmd_gen(const Config& config, const fs::path& out_dir, std::ostream& log) {
  const data::Dataset ds = make_dataset(config);
  ensure_dir(out_dir);
  data::save_dataset(ds, out_dir);
  write_manifest(out_dir, "gen", config, {{"out", out_dir.string()}});
  log << "wrote " << ds.train.size() << "/" << ds.validation.size() << "/" << ds.test.size()
      << " train/validation/test bags to " << out_dir.string() << '\n';
  return kSuccess;
}

int cmd_train(const Config& config, const fs::path& dataset_dir, const fs::path& out_dir, std::ostream& log) {
  const data::Dataset ds = load_checked(config, dataset_dir);
  const train::TrainResult result = train::train(ds, config.train, config.model);
  ensure_dir(out_dir);
  model::save_params(result.best, out_dir / "checkpoint.bin");
  write_text(out_dir / "checkpoint.txt", model::shape_manifest(result.best));
  train::write_history_csv(result.history, out_dir / "history.csv");
  write_manifest(out_dir, "train", config,
                 {{"dataset", dataset_dir.string()},
                  {"out", out_dir.string()},
                  {"best_epoch", std::to_string(result.best_epoch)}});
  log << "trained " << result.history.size() << " epochs with " << train::strategy_name(config.train.strategy)
      << "; best epoch " << result.best_epoch << " (validation error " << result.history[result.best_epoch - 1].val_error
      << ")\n";
  return kSuccess;
}

int cmd_eval(const Config& config, const fs::path& dataset_dir, const fs::path& checkpoint, const fs::path& out_dir,
             std::ostream& log) {
  const data::Dataset ds = load_checked(config, dataset_dir);
  const model::ParamSet params = model::load_params(checkpoint);
  if (params.encoder.input_dim() != ds.input_dim()) {
    throw ConfigError("checkpoint expects instances of dimension " + std::to_string(params.encoder.input_dim()) +
                      ", dataset has " + std::to_string(ds.input_dim()));
  }
  Rng rng(substream_seed(config.seed, "infer_sample"));
  const eval::EvalResult result = eval::evaluate(params, ds.test, config.infer_sample_percent, rng);

  ensure_dir(out_dir);
  std::ostringstream summary;
  summary << "bag_accuracy = " << num(result.bag_accuracy) << '\n'
          << "instance_auc = " << opt(result.instance_auc) << '\n'
          << "per_bag_auc = " << opt(result.per_bag_auc) << '\n'
          << "mean_loss = " << num(result.mean_loss) << '\n'
          << "infer_sample_percent = " << num(result.sample_percent) << '\n'
          << "bags = " << result.bags.size() << '\n'
          << "wall_ms = " << result.wall_ms << '\n';
  write_text(out_dir / "eval.txt", summary.str());

  std::ostringstream bags, attention;
  bags << "bag,label,score,predicted\n";
  attention << "bag,instance,attention,instance_label\n";
  for (std::size_t b = 0; b < result.bags.size(); ++b) {
    const auto& rec = result.bags[b];
    bags << b << ',' << rec.label << ',' << num(rec.score) << ',' << (rec.score >= 0.5 ? 1 : 0) << '\n';
    for (std::size_t i = 0; i < rec.attention.size(); ++i) {
      attention << b << ',' << i << ',' << num(rec.attention[i]) << ',' << rec.instance_labels[i] << '\n';
    }
  }
  write_text(out_dir / "bags.csv", bags.str());
  write_text(out_dir / "attention.csv", attention.str());
  write_manifest(out_dir, "eval", config,
                 {{"dataset", dataset_dir.string()}, {"checkpoint", checkpoint.string()}, {"out", out_dir.string()}});
  log << "test bag accuracy " << result.bag_accuracy << ", instance AUC " << opt(result.instance_auc) << '\n';
  return kSuccess;
}

int cmd_matrix(const Config& config, const fs::path& out_dir, std::ostream& log) {
  eval::MatrixSpec spec;
  spec.strategies = config.matrix.strategies;
  spec.alphas = config.matrix.alphas;
  spec.infer_samples = config.matrix.infer_samples;
  spec.repeats = config.matrix.repeats;
  spec.seed = config.seed;
  spec.train = config.train;
  spec.model = config.model;
  spec.validate();

  const eval::MatrixReport report = eval::run_matrix(
      [&](std::uint64_t seed) {
        Config c = config;
        c.set_seed(seed);
        return make_dataset(c);
      },
      spec);
  ensure_dir(out_dir);
  write_text(out_dir / "runs.csv", eval::runs_csv(report));
  write_text(out_dir / "summary.csv", eval::summary_csv(report));
  write_manifest(out_dir, "matrix", config, {{"out", out_dir.string()}});
  std::size_t failed = 0;
  for (const auto& r : report.runs) failed += r.ok ? 0 : 1;
  log << report.aggregates.size() << " cells, " << report.runs.size() << " runs, " << failed << " failed\n";
  return kSuccess;
}

int cmd_verify(verify::Scale scale, std::uint64_t seed, const std::optional<fs::path>& out_dir, std::ostream& log) {
  const auto results = verify::run_suite(scale, seed);
  std::ostringstream report;
  bool ok = true;
  for (const auto& r : results) {
    report << verify::format(r) << '\n';
    ok = ok && r.passed;
  }
  report << (ok ? "verify: all checks passed" : "verify: FAILED") << " (" << verify::scale_name(scale) << " scale, seed "
         << seed << ")\n";
  log << report.str();
  if (out_dir) {
    ensure_dir(*out_dir);
    write_text(*out_dir / "verify.txt", report.str());
    Config config;
    config.set_seed(seed);
    write_manifest(*out_dir, std::string("verify --scale ") + verify::scale_name(scale), config,
                   {{"out", out_dir->string()}});
  }
  return ok ? kSuccess : kFailed;
}

}  // namespace abmil::cli
