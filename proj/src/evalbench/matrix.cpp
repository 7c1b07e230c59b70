#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "abmil/errors.hpp"
#include "abmil/evalbench.hpp"

namespace abmil::eval {

void MatrixSpec::validate() const {
  if (strategies.empty()) throw ConfigError("matrix: strategy list is empty");
  if (alphas.empty()) throw ConfigError("matrix: alpha list is empty");
  if (infer_samples.empty()) throw ConfigError("matrix: inference sampling list is empty");
  if (repeats < 1) throw ConfigError("matrix: repeats must be at least 1");
  for (double a : alphas) {
    if (!(a > 0.0) || a > 100.0) throw ConfigError("matrix: alpha values must lie in (0, 100]");
  }
  for (double s : infer_samples) {
    if (!(s > 0.0) || s > 100.0) throw ConfigError("matrix: inference sampling values must lie in (0, 100]");
  }
  train.validate();
  model.validate();
}

std::vector<MatrixCell> MatrixSpec::cells() const {
  std::vector<MatrixCell> out;
  auto push = [&](MatrixCell c) {
    const bool seen = std::any_of(out.begin(), out.end(), [&](const MatrixCell& o) {
      return o.strategy == c.strategy && o.alpha_pct == c.alpha_pct && o.infer_sample_pct == c.infer_sample_pct;
    });
    if (!seen) out.push_back(c);
  };
  for (auto s : strategies) {
    if (s == train::Strategy::FullBag) {
      for (double inf : infer_samples) push({s, 100.0, inf});
    } else {
      for (double a : alphas)
        for (double inf : infer_samples) push({s, a, inf});
    }
  }
  return out;
}

namespace {

std::uint64_t infer_stream(double percent) { return static_cast<std::uint64_t>(std::llround(percent * 1000.0)); }

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

}  // namespace

MatrixReport run_matrix(const DatasetFactory& make_dataset, const MatrixSpec& spec) {
  spec.validate();
  const auto cells = spec.cells();
  MatrixReport report;

  for (std::size_t r = 0; r < spec.repeats; ++r) {
    const std::uint64_t seed = substream_seed(spec.seed, "repeat", r);
    std::optional<data::Dataset> ds;
    std::string dataset_error;
    try {
      ds = make_dataset(seed);
    } catch (const std::exception& e) {
      dataset_error = std::string("dataset: ") + e.what();
    }

    // Cells sharing (strategy, alpha) share one training run.
    std::map<std::pair<int, double>, std::pair<std::optional<train::TrainResult>, std::string>> trained;
    for (const MatrixCell& cell : cells) {
      MatrixRun run;
      run.cell = cell;
      run.repeat = r;
      run.seed = seed;
      if (!ds) {
        run.error = dataset_error;
        report.runs.push_back(std::move(run));
        continue;
      }
      const auto key = std::make_pair(static_cast<int>(cell.strategy), cell.alpha_pct);
      auto it = trained.find(key);
      if (it == trained.end()) {
        train::TrainConfig cfg = spec.train;
        cfg.strategy = cell.strategy;
        cfg.seed = seed;
        if (cell.strategy == train::Strategy::Accumulate) cfg.alpha_percent = cell.alpha_pct;
        if (cell.strategy == train::Strategy::SampleTrain) cfg.sample_percent = cell.alpha_pct;
        model::ModelConfig mc = spec.model;
        mc.input_dim = ds->input_dim();
        std::pair<std::optional<train::TrainResult>, std::string> entry;
        try {
          entry.first = train::train(*ds, cfg, mc);
        } catch (const std::exception& e) {
          entry.second = std::string("train: ") + e.what();
        }
        it = trained.emplace(key, std::move(entry)).first;
      }
      const auto& [result, error] = it->second;
      if (!result) {
        run.error = error;
        report.runs.push_back(std::move(run));
        continue;
      }
      try {
        Rng rng(substream_seed(seed, "infer_sample", infer_stream(cell.infer_sample_pct)));
        const EvalResult ev = evaluate(result->best, ds->test, cell.infer_sample_pct, rng);
        run.bag_acc = ev.bag_accuracy;
        run.inst_auc = ev.instance_auc;
        run.per_bag_auc = ev.per_bag_auc;
        run.train_wall_s = result->total_wall_ms / 1000.0;
        for (const auto& step : result->steps) {
          run.peak_scalars = std::max(run.peak_scalars, step.peak_retained_scalars);
          run.fwd_count = std::max(run.fwd_count, step.forward_count);
        }
        run.ok = true;
      } catch (const std::exception& e) {
        run.error = std::string("eval: ") + e.what();
      }
      report.runs.push_back(std::move(run));
    }
  }

  // Cell-major order for the raw rows.
  std::stable_sort(report.runs.begin(), report.runs.end(), [&](const MatrixRun& a, const MatrixRun& b) {
    auto index = [&](const MatrixCell& c) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].strategy == c.strategy && cells[i].alpha_pct == c.alpha_pct &&
            cells[i].infer_sample_pct == c.infer_sample_pct)
          return i;
      }
      return cells.size();
    };
    return index(a.cell) < index(b.cell);
  });

  for (const MatrixCell& cell : cells) {
    MatrixAggregate agg;
    agg.cell = cell;
    std::vector<double> acc, auc, wall;
    for (const MatrixRun& run : report.runs) {
      if (run.cell.strategy != cell.strategy || run.cell.alpha_pct != cell.alpha_pct ||
          run.cell.infer_sample_pct != cell.infer_sample_pct)
        continue;
      ++agg.runs;
      if (!run.ok) {
        ++agg.failures;
        continue;
      }
      acc.push_back(run.bag_acc);
      if (run.inst_auc) auc.push_back(*run.inst_auc);
      wall.push_back(run.train_wall_s);
      agg.peak_scalars = std::max(agg.peak_scalars, run.peak_scalars);
      agg.fwd_count = std::max(agg.fwd_count, run.fwd_count);
    }
    std::tie(agg.bag_acc_mean, agg.bag_acc_std) = mean_std(acc);
    std::tie(agg.inst_auc_mean, agg.inst_auc_std) = mean_std(auc);
    std::tie(agg.train_wall_s_mean, agg.train_wall_s_std) = mean_std(wall);
    report.aggregates.push_back(agg);
  }
  return report;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? num(*v) : "nan"; }

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string secs(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

std::string runs_csv(const MatrixReport& report) {
  std::ostringstream os;
  os << "strategy,alpha_pct,infer_sample_pct,repeat,bag_acc,inst_auc,train_wall_s,peak_scalars,fwd_count,seed,"
        "per_bag_auc,status\n";
  for (const MatrixRun& r : report.runs) {
    os << train::strategy_name(r.cell.strategy) << ',' << pct(r.cell.alpha_pct) << ',' << pct(r.cell.infer_sample_pct)
       << ',' << r.repeat << ',';
    if (r.ok) {
      os << num(r.bag_acc) << ',' << opt(r.inst_auc) << ',' << secs(r.train_wall_s) << ',' << r.peak_scalars << ','
         << r.fwd_count << ',' << r.seed << ',' << opt(r.per_bag_auc) << ",ok\n";
    } else {
      os << "nan,nan,nan,0,0," << r.seed << ",nan,failed: " << sanitize(r.error) << '\n';
    }
  }
  return os.str();
}

std::string summary_csv(const MatrixReport& report) {
  std::ostringstream os;
  os << "strategy,alpha_pct,infer_sample_pct,runs,failures,bag_acc_mean,bag_acc_std,inst_auc_mean,inst_auc_std,"
        "train_wall_s_mean,train_wall_s_std,peak_scalars,fwd_count\n";
  for (const MatrixAggregate& a : report.aggregates) {
    os << train::strategy_name(a.cell.strategy) << ',' << pct(a.cell.alpha_pct) << ',' << pct(a.cell.infer_sample_pct)
       << ',' << a.runs << ',' << a.failures << ',' << num(a.bag_acc_mean) << ',' << num(a.bag_acc_std) << ','
       << num(a.inst_auc_mean) << ',' << num(a.inst_auc_std) << ',' << secs(a.train_wall_s_mean) << ','
       << secs(a.train_wall_s_std) << ',' << a.peak_scalars << ',' << a.fwd_count << '\n';
  }
  return os.str();
}

}  // namespace abmil::eval
