/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command line driver: train, eval, gradcheck, ablate, sweep.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bituning/bituning.hpp"

namespace fs = std::filesystem;
using namespace bituning;

namespace {

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  std::string out = "runs/default";
  std::size_t jobs = 1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_out = true) {
  cmd->add_option("--config", o.config, "INI run configuration");
  cmd->add_option("--set", o.overrides, "override a key, e.g. --set optimizer.base_lr=0.001")->allow_extra_args(false);
  cmd->add_option("--seed", o.seed, "run seed (beats the config file)");
  if (with_out) cmd->add_option("--out", o.out, "output directory");
}

RunConfig effective_config(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& s : o.overrides) apply_override(c, s);
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  validate(c);
  return c;
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

template <class Writer>
void write_file(const fs::path& path, Writer&& w) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  w(os);
  if (!os) throw IoError("write failed for " + path.string());
}

template <class T>
std::vector<T> parse_list(const std::string& what, const std::string& raw) {
  std::vector<T> out;
  for (auto cell : detail::split(raw, ',')) {
    T v{};
    if (!detail::parse_number(cell, v)) throw ConfigError(what + ": cannot parse '" + std::string(cell) + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

int cmd_train(const CommonOptions& o) {
  const RunConfig c = effective_config(o);
  const fs::path out = prepare_out(o.out);
  write_file(out / "config.ini", [&](std::ostream& os) { os << serialize(c); });
  const TrainRun run = run_experiment(c);
  write_file(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, run.log); });
  save_checkpoint((out / "checkpoint.txt").string(), run.params);
  nlohmann::ordered_json summary = {
      {"config_hash", hex(config_hash(c))},
      {"seed", c.seed},
      {"iterations", c.train.iterations},
      {"final_val_accuracy", run.final_accuracy},
      {"best_val_accuracy", run.best_accuracy},
      {"metrics", "metrics.csv"},
      {"checkpoint", "checkpoint.txt"},
      {"config", "config.ini"},
      {"wall_ms", run.wall_ms},
  };
  write_file(out / "summary.json", [&](std::ostream& os) { os << summary.dump(2) << '\n'; });
  std::cout << "seed " << c.seed << "  final val acc " << format_double(run.final_accuracy) << "  best "
            << format_double(run.best_accuracy) << "  -> " << out.string() << '\n';
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& split) {
  const RunConfig c = effective_config(o);
  const ModelParams params = load_checkpoint(checkpoint);
  const ExperimentData data = build_data(c);
  const Dataset& ds = split == "train" ? data.train : data.validation;
  if (ds.input_dim() != params.dims.input || ds.classes != params.dims.classes) {
    throw ConfigError("checkpoint expects " + std::to_string(params.dims.input) + " features / " +
                      std::to_string(params.dims.classes) + " classes, dataset has " +
                      std::to_string(ds.input_dim()) + " / " + std::to_string(ds.classes));
  }
  std::cout << format_double(evaluate(params, ds)) << '\n';
  return 0;
}

int cmd_gradcheck(std::size_t seeds, const GradcheckSizes& sizes, double tolerance) {
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  const auto report = run_gradcheck(seeds, sizes, opt);
  bool ok = true;
  std::cout << "check                         instances  worst_rel_err  status\n";
  for (const auto& e : report) {
    char line[160];
    std::snprintf(line, sizeof line, "%-30s %9zu  %13.3e  %s\n", e.name.c_str(), e.instances, e.worst,
                  e.passed ? "ok" : "FAIL");
    std::cout << line;
    ok = ok && e.passed;
  }
  std::cout << (ok ? "all gradients agree with finite differences\n" : "gradient check FAILED\n");
  return ok ? 0 : static_cast<int>(ExitCode::kNumerical);
}

int cmd_ablate(const CommonOptions& o, const std::string& rates_raw, const std::string& seeds_raw) {
  const RunConfig c = effective_config(o);
  const auto rates = parse_list<double>("--rates", rates_raw);
  const auto seeds = parse_list<std::uint64_t>("--seeds", seeds_raw);
  const fs::path out = prepare_out(o.out);
  write_file(out / "config.ini", [&](std::ostream& os) { os << serialize(c); });
  const auto rows = ablate(c, rates, seeds, o.jobs);
  write_file(out / "ablation.csv", [&](std::ostream& os) { write_ablation_csv(os, rows, rates); });
  write_ablation_csv(std::cout, rows, rates);
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& axis_raw, const std::string& values_raw,
              const std::string& seeds_raw) {
  const RunConfig c = effective_config(o);
  const SweepAxis axis = parse_axis(axis_raw);
  const auto values = parse_list<double>("--values", values_raw);
  const auto seeds = parse_list<std::uint64_t>("--seeds", seeds_raw);
  const fs::path out = prepare_out(o.out);
  write_file(out / "config.ini", [&](std::ostream& os) { os << serialize(c); });
  const auto rows = sweep(c, axis, values, seeds, o.jobs);
  write_file(out / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, axis, rows); });
  write_sweep_csv(std::cout, axis, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bituning: joint CE / contrastive cross-entropy / categorical contrastive fine-tuning"};
  app.require_subcommand(1);

  CommonOptions train_opt, eval_opt, ablate_opt, sweep_opt;
  auto* train = app.add_subcommand("train", "train one model and write metrics, checkpoint and summary");
  add_common(train, train_opt);

  auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on the configured dataset");
  add_common(eval, eval_opt, false);
  std::string checkpoint, split = "val";
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "val or train")->check(CLI::IsMember({"val", "train"}));

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  std::size_t grad_seeds = 20;
  double tolerance = 1e-4;
  GradcheckSizes sizes;
  grad->add_option("--seeds", grad_seeds, "random instances per check");
  grad->add_option("--tolerance", tolerance, "maximum relative error");
  grad->add_option("--feature", sizes.feature, "hidden feature width d");
  grad->add_option("--classes", sizes.classes, "number of classes C");
  grad->add_option("--projection", sizes.projection, "projection width L");
  grad->add_option("--max-keys", sizes.max_keys, "largest sampled key count K");
  grad->add_option("--batch", sizes.batch, "queries per instance");

  auto* abl = app.add_subcommand("ablate", "the five loss combinations across sampling rates and seeds");
  add_common(abl, ablate_opt);
  std::string rates = "0.25,0.5,0.75,1", abl_seeds = "1,2,3";
  abl->add_option("--rates", rates, "comma-separated sampling rates");
  abl->add_option("--seeds", abl_seeds, "comma-separated seeds");
  abl->add_option("--jobs", ablate_opt.jobs, "parallel fits");

  auto* swp = app.add_subcommand("sweep", "accuracy against one hyper-parameter");
  add_common(swp, sweep_opt);
  std::string axis, values, swp_seeds = "1,2,3";
  swp->add_option("--axis", axis, "keys_per_class|projector_dim|queue_size|tau")->required();
  swp->add_option("--values", values, "comma-separated axis values")->required();
  swp->add_option("--seeds", swp_seeds, "comma-separated seeds");
  swp->add_option("--jobs", sweep_opt.jobs, "parallel fits");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (*train) return cmd_train(train_opt);
    if (*eval) return cmd_eval(eval_opt, checkpoint, split);
    if (*grad) return cmd_gradcheck(grad_seeds, sizes, tolerance);
    if (*abl) return cmd_ablate(ablate_opt, rates, abl_seeds);
    if (*swp) return cmd_sweep(sweep_opt, axis, values, swp_seeds);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kValidation);
  }
  return 0;
}
