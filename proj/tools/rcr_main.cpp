// Command-line front end: synthetic data generation, MNIST conversion,
// continual training runs, ablation sweeps, and checkpoint evaluation.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rcr/checkpoint.hpp"
#include "rcr/config.hpp"
#include "rcr/dataset_io.hpp"
#include "rcr/trainer.hpp"

namespace fs = std::filesystem;
using namespace rcr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

void print_usage() {
  std::cout <<
      "usage: rcr <command> [options]\n"
      "\n"
      "commands:\n"
      "  gen-data       --classes N --per-class N --points N --seed N --out FILE\n"
      "  convert-mnist  --images FILE --labels FILE --points N --seed N --out FILE\n"
      "                 [--threshold N]\n"
      "  train          --config FILE [--out DIR] [--<config-key> VALUE ...]\n"
      "  ablate         --config FILE --grid SPEC [--seeds a,b,c] [--out DIR]\n"
      "                 grid SPEC: key=v1,v2;key2=w1,w2\n"
      "  eval           --checkpoint FILE --dataset FILE\n"
      "\n"
      "train reads the dataset at dataset_path and its held-out split at\n"
      "<stem>_test<ext>; it writes matrix.csv, summary.csv, loss_trace.csv,\n"
      "resolved_config.txt and model.rcrw into --out (default '.').\n";
}

/// Flat --key value parser; returns nullopt on malformed input.
std::optional<std::map<std::string, std::string>> parse_flags(
    int argc, char** argv, int start) {
  std::map<std::string, std::string> flags;
  for (int i = start; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0 || arg.size() <= 2) {
      std::cerr << "unexpected argument: " << arg << "\n";
      return std::nullopt;
    }
    if (i + 1 >= argc) {
      std::cerr << "missing value for " << arg << "\n";
      return std::nullopt;
    }
    flags[arg.substr(2)] = argv[++i];
  }
  return flags;
}

std::string require_flag(const std::map<std::string, std::string>& flags,
                         const std::string& name) {
  auto it = flags.find(name);
  if (it == flags.end())
    throw std::invalid_argument("missing required flag --" + name);
  return it->second;
}

long parse_long_flag(const std::map<std::string, std::string>& flags,
                     const std::string& name, std::optional<long> fallback = {}) {
  auto it = flags.find(name);
  if (it == flags.end()) {
    if (fallback) return *fallback;
    throw std::invalid_argument("missing required flag --" + name);
  }
  try {
    size_t used = 0;
    const long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("bad numeric value for --" + name + ": " + it->second);
  }
}

std::string test_path_for(const std::string& train_path) {
  const auto dot = train_path.find_last_of('.');
  const auto slash = train_path.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash))
    return train_path + "_test";
  return train_path.substr(0, dot) + "_test" + train_path.substr(dot);
}

void print_class_histogram(const LabeledDataset& data) {
  const auto counts = data.per_class_counts();
  for (int c = 0; c < data.class_count; ++c) {
    std::cout << "  class " << c;
    if (!data.class_names.empty()) std::cout << " (" << data.class_names[c] << ")";
    std::cout << ": " << counts[c] << " samples\n";
  }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::map<std::string, std::string>& flags) {
  const int classes = static_cast<int>(parse_long_flag(flags, "classes", 10));
  const int per_class = static_cast<int>(parse_long_flag(flags, "per-class"));
  const int points = static_cast<int>(parse_long_flag(flags, "points", 2048));
  const auto seed = static_cast<std::uint64_t>(parse_long_flag(flags, "seed", 0));
  const std::string out = require_flag(flags, "out");

  Rng rng(seed);
  const LabeledDataset data = gen_synthetic(classes, per_class, points, rng);
  write_dataset(data, out);
  std::cout << "wrote " << data.size() << " samples (" << classes
            << " classes x " << per_class << ", " << points
            << " points each) to " << out << "\n";
  print_class_histogram(data);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// convert-mnist
// ---------------------------------------------------------------------------

int cmd_convert_mnist(const std::map<std::string, std::string>& flags) {
  const std::string images = require_flag(flags, "images");
  const std::string labels = require_flag(flags, "labels");
  const int points = static_cast<int>(parse_long_flag(flags, "points", 2048));
  const int threshold = static_cast<int>(parse_long_flag(flags, "threshold", 128));
  const auto seed = static_cast<std::uint64_t>(parse_long_flag(flags, "seed", 0));
  const std::string out = require_flag(flags, "out");

  Rng rng(seed);
  const LabeledDataset data = mnist_to_pointcloud(images, labels, points, threshold, rng);
  write_dataset(data, out);
  std::cout << "converted " << data.size() << " images to " << points
            << "-point clouds in " << out << "\n";
  print_class_histogram(data);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArtifacts {
  std::string run_id;
  RunOutput output;
  RunConfig config;
  std::vector<std::string> scenarios;
};

std::vector<ResultRow> matrix_rows(const TrainArtifacts& art) {
  std::vector<ResultRow> rows;
  for (const auto& e : art.output.matrix.entries) {
    const std::string sc = scenario_name(e.scenario);
    if (std::find(art.scenarios.begin(), art.scenarios.end(), sc) ==
        art.scenarios.end())
      continue;
    rows.push_back({art.run_id, art.config.seed, art.config.method,
                    art.config.dataset_name, sc, e.tasks_trained,
                    e.task_evaluated, e.accuracy, 0.0});
  }
  return rows;
}

std::vector<SummaryRow> summary_rows(const TrainArtifacts& art) {
  std::vector<SummaryRow> rows;
  for (const auto& a : art.output.matrix.averages) {
    const std::string sc = scenario_name(a.scenario);
    if (std::find(art.scenarios.begin(), art.scenarios.end(), sc) ==
        art.scenarios.end())
      continue;
    double wall = 0.0;
    for (int t = 0; t < a.tasks_trained &&
                    t < static_cast<int>(art.output.task_wall_seconds.size());
         ++t)
      wall += art.output.task_wall_seconds[static_cast<size_t>(t)];
    rows.push_back({art.run_id, art.config.seed, art.config.method,
                    art.config.dataset_name, sc, a.tasks_trained, a.micro,
                    a.macro, wall});
  }
  return rows;
}

TrainArtifacts execute_run(const RunConfig& resolved,
                           const LabeledDataset& train_data,
                           const LabeledDataset& test_data) {
  const TaskSchedule schedule = build_task_schedule(
      train_data, test_data, resolved.classes_per_task,
      resolved.ordering == "split_order" ? Ordering::kSplitOrder
                                         : Ordering::kByPopulation,
      resolved.tasks);
  RunSpec spec = run_spec_from_config(resolved, train_data.dims());
  const Method method = method_from_string(resolved.method);

  TrainArtifacts art;
  art.config = resolved;
  art.scenarios = split_list(resolved.scenarios);
  art.run_id = hex_hash(fnv1a(echo_run_config(resolved)));
  art.output = run_method(method, train_data, test_data, schedule, spec);
  return art;
}

void write_run_files(const TrainArtifacts& art, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_results(matrix_rows(art), (out_dir / "matrix.csv").string(),
                summary_rows(art), (out_dir / "summary.csv").string());

  {
    std::ofstream os(out_dir / "loss_trace.csv", std::ios::trunc);
    os << "task,epoch,loss,loss_c,loss_r\n";
    for (const auto& trace : art.output.traces)
      for (size_t e = 0; e < trace.epochs.size(); ++e)
        os << trace.task_id << ',' << e + 1 << ','
           << detail::format_fixed6(trace.epochs[e].loss) << ','
           << detail::format_fixed6(trace.epochs[e].classification) << ','
           << detail::format_fixed6(trace.epochs[e].reconstruction) << "\n";
  }
  {
    std::ofstream os(out_dir / "resolved_config.txt", std::ios::trunc);
    os << "# run_id = " << art.run_id << "\n";
    os << "# schedule_hash = " << hex_hash(art.output.schedule_hash) << "\n";
    os << echo_run_config(art.config);
  }

  const std::string ckpt = (out_dir / "model.rcrw").string();
  save_checkpoint(ckpt, *art.output.model);
  std::vector<std::pair<std::string, std::string>> meta;
  const ModelConfig& mc = art.output.model->config();
  meta.emplace_back("input_dims", std::to_string(mc.input_dims));
  meta.emplace_back("z_size", std::to_string(mc.z_size));
  meta.emplace_back("decoder_points", std::to_string(mc.decoder_points));
  meta.emplace_back("class_count", std::to_string(mc.class_count));
  meta.emplace_back("dropout_p", detail::format_double_key(mc.dropout_p));
  meta.emplace_back("reconstruction", mc.reconstruction ? "on" : "off");
  meta.emplace_back("dataset_name", art.config.dataset_name);
  meta.emplace_back("classes_per_task", std::to_string(art.config.classes_per_task));
  std::string order;
  std::vector<int> logit_to_class(static_cast<size_t>(mc.class_count), -1);
  for (size_t c = 0; c < art.output.class_to_logit.size(); ++c)
    if (art.output.class_to_logit[c] >= 0)
      logit_to_class[static_cast<size_t>(art.output.class_to_logit[c])] =
          static_cast<int>(c);
  for (size_t i = 0; i < logit_to_class.size(); ++i)
    order += (i ? "," : "") + std::to_string(logit_to_class[i]);
  meta.emplace_back("class_order", order);
  write_meta_file(ckpt + ".meta", meta);
}

int cmd_train(const std::map<std::string, std::string>& flags) {
  const std::string config_path = require_flag(flags, "config");
  const fs::path out_dir = flags.count("out") ? flags.at("out") : ".";

  std::ifstream is(config_path);
  if (!is) {
    std::cerr << "cannot open config: " << config_path << "\n";
    return kExitIo;
  }
  std::stringstream buf;
  buf << is.rdbuf();

  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& [key, value] : flags)
    if (key != "config" && key != "out") overrides.emplace_back(key, value);

  RunConfig cfg = parse_run_config_with_overrides(buf.str(), overrides);
  validate_run_config(cfg);

  const LabeledDataset train_data = read_dataset(cfg.dataset_path);
  const LabeledDataset test_data = read_dataset(test_path_for(cfg.dataset_path));
  resolve_run_config(cfg, train_data.dims());

  TrainArtifacts art = execute_run(cfg, train_data, test_data);
  write_run_files(art, out_dir);

  std::cout << "run_id " << art.run_id << "  schedule_hash "
            << hex_hash(art.output.schedule_hash) << "\n";
  int final_t = 0;
  for (const auto& a : art.output.matrix.averages)
    final_t = std::max(final_t, a.tasks_trained);
  for (const auto& a : art.output.matrix.averages)
    if (a.tasks_trained == final_t)
      std::cout << "final " << scenario_name(a.scenario) << " micro "
                << detail::format_fixed6(a.micro) << " macro "
                << detail::format_fixed6(a.macro) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

std::vector<GridAxis> parse_grid(const std::string& spec) {
  std::vector<GridAxis> axes;
  std::istringstream is(spec);
  std::string part;
  while (std::getline(is, part, ';')) {
    part = detail::trim(part);
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("grid: expected key=v1,v2 in '" + part + "'");
    GridAxis axis;
    axis.key = detail::trim(part.substr(0, eq));
    axis.values = split_list(part.substr(eq + 1));
    if (axis.values.empty())
      throw std::invalid_argument("grid: no values for " + axis.key);
    axes.push_back(std::move(axis));
  }
  if (axes.empty()) throw std::invalid_argument("grid: empty specification");
  return axes;
}

int cmd_ablate(const std::map<std::string, std::string>& flags) {
  const std::string config_path = require_flag(flags, "config");
  const std::string grid_spec = require_flag(flags, "grid");
  const fs::path out_dir = flags.count("out") ? flags.at("out") : "ablation";

  std::ifstream is(config_path);
  if (!is) {
    std::cerr << "cannot open config: " << config_path << "\n";
    return kExitIo;
  }
  std::stringstream buf;
  buf << is.rdbuf();
  const std::string base_text = buf.str();

  std::vector<std::uint64_t> seeds;
  if (flags.count("seeds")) {
    for (const auto& s : split_list(flags.at("seeds")))
      seeds.push_back(std::stoull(s));
  }

  const auto axes = parse_grid(grid_spec);
  std::vector<std::vector<std::pair<std::string, std::string>>> cells{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& cell : cells)
      for (const auto& value : axis.values) {
        auto extended = cell;
        extended.emplace_back(axis.key, value);
        next.push_back(std::move(extended));
      }
    cells = std::move(next);
  }

  fs::create_directories(out_dir / "cells");
  std::optional<LabeledDataset> train_data, test_data;
  std::string loaded_path;

  int executed = 0, skipped = 0, failed = 0;
  for (const auto& cell : cells) {
    std::vector<std::uint64_t> cell_seeds = seeds;
    if (cell_seeds.empty()) {
      RunConfig probe = parse_run_config_with_overrides(base_text, cell);
      cell_seeds.push_back(probe.seed);
    }
    for (const auto seed : cell_seeds) {
      auto overrides = cell;
      overrides.emplace_back("seed", std::to_string(seed));
      RunConfig cfg;
      try {
        cfg = parse_run_config_with_overrides(base_text, overrides);
        validate_run_config(cfg);
      } catch (const std::exception& ex) {
        std::cerr << "bad cell config: " << ex.what() << "\n";
        return kExitConfig;
      }

      if (!train_data || loaded_path != cfg.dataset_path) {
        train_data = read_dataset(cfg.dataset_path);
        test_data = read_dataset(test_path_for(cfg.dataset_path));
        loaded_path = cfg.dataset_path;
      }
      resolve_run_config(cfg, train_data->dims());

      // Resume key: content hash of the fully resolved cell config + seed.
      const std::string run_id = hex_hash(fnv1a(echo_run_config(cfg)));
      const fs::path cell_dir = out_dir / "cells" / run_id;
      std::string tag;
      for (const auto& [k, v] : cell) tag += (tag.empty() ? "" : "|") + k + "=" + v;
      if (fs::exists(cell_dir / "done")) {
        ++skipped;
        std::cout << "skip " << run_id << " (" << tag << ", seed " << seed << ")\n";
        continue;
      }
      std::cout << "run  " << run_id << " (" << tag << ", seed " << seed << ")\n";
      try {
        TrainArtifacts art = execute_run(cfg, *train_data, *test_data);
        write_run_files(art, cell_dir);
        std::ofstream tag_file(cell_dir / "cell.txt", std::ios::trunc);
        tag_file << tag << "\n";
        std::ofstream done(cell_dir / "done", std::ios::trunc);
        done << "ok\n";
        ++executed;
      } catch (const std::exception& ex) {
        ++failed;
        std::cerr << "cell " << run_id << " failed: " << ex.what() << "\n";
        std::ofstream fail_log(out_dir / "failures.txt", std::ios::app);
        fail_log << run_id << " (" << tag << ", seed " << seed
                 << "): " << ex.what() << "\n";
      }
    }
  }

  // Merge per-cell summaries into one table.
  std::ofstream combined(out_dir / "ablation.csv", std::ios::trunc);
  combined << "cell,run_id,seed,method,dataset_name,scenario,tasks_trained,"
              "micro_average,macro_average,wall_time_seconds\n";
  for (const auto& entry : fs::directory_iterator(out_dir / "cells")) {
    if (!fs::exists(entry.path() / "done")) continue;
    std::ifstream tag_file(entry.path() / "cell.txt");
    std::string tag;
    std::getline(tag_file, tag);
    std::ifstream summary(entry.path() / "summary.csv");
    std::string line;
    std::getline(summary, line);  // header
    while (std::getline(summary, line))
      if (!line.empty()) combined << tag << ',' << line << "\n";
  }

  std::cout << "ablation: " << executed << " run, " << skipped << " skipped, "
            << failed << " failed\n";
  return failed > 0 ? kExitIo : kExitOk;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const std::map<std::string, std::string>& flags) {
  const std::string ckpt_path = require_flag(flags, "checkpoint");
  const std::string dataset_path = require_flag(flags, "dataset");

  const auto meta = read_meta_file(ckpt_path + ".meta");
  auto meta_value = [&](const std::string& key) -> std::string {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw std::invalid_argument("meta: missing key " + key);
  };

  ModelConfig cfg;
  cfg.input_dims = std::stoi(meta_value("input_dims"));
  cfg.z_size = std::stoi(meta_value("z_size"));
  cfg.decoder_points = std::stoi(meta_value("decoder_points"));
  cfg.class_count = std::stoi(meta_value("class_count"));
  Rng dummy(0);
  RcrModel<float> model(cfg, dummy);
  load_checkpoint(ckpt_path, model);
  model.set_mode(Mode::kEval);

  const LabeledDataset data = read_dataset(dataset_path);
  const int classes_per_task = std::stoi(meta_value("classes_per_task"));
  std::vector<int> class_order;
  for (const auto& c : split_list(meta_value("class_order")))
    class_order.push_back(std::stoi(c));
  detail::require(static_cast<int>(class_order.size()) == cfg.class_count,
                  "meta: class_order length mismatch");

  TaskSchedule schedule;
  schedule.classes_per_task = classes_per_task;
  std::vector<int> class_to_logit(static_cast<size_t>(data.class_count), -1);
  for (size_t i = 0; i < class_order.size(); ++i) {
    const int cls = class_order[i];
    detail::require(cls >= 0 && cls < data.class_count,
                    "meta: class id outside the dataset inventory");
    class_to_logit[static_cast<size_t>(cls)] = static_cast<int>(i);
    if (i % static_cast<size_t>(classes_per_task) == 0)
      schedule.tasks.push_back({static_cast<int>(schedule.tasks.size()) + 1, {}, {}, {}});
    schedule.tasks.back().classes.push_back(cls);
  }
  for (int i = 0; i < data.size(); ++i) {
    const int slot = class_to_logit[static_cast<size_t>(data.samples[i].label)];
    if (slot < 0) continue;
    schedule.tasks[static_cast<size_t>(slot / classes_per_task)].test_indices.push_back(i);
  }

  const EvalSlice slice = evaluate_tasks(model, data, schedule,
                                         schedule.task_count(), class_to_logit);
  std::cout << "task,classes,count,task_il,class_il\n";
  for (int t = 0; t < schedule.task_count(); ++t) {
    std::string classes;
    for (int c : schedule.tasks[static_cast<size_t>(t)].classes)
      classes += (classes.empty() ? "" : "+") + std::to_string(c);
    std::cout << t + 1 << ',' << classes << ','
              << slice.per_task_counts[static_cast<size_t>(t)] << ','
              << detail::format_fixed6(slice.per_task_accuracy[0][static_cast<size_t>(t)])
              << ','
              << detail::format_fixed6(slice.per_task_accuracy[1][static_cast<size_t>(t)])
              << "\n";
  }
  std::cout << "micro," << detail::format_fixed6(slice.micro[0]) << ','
            << detail::format_fixed6(slice.micro[1]) << "\n";
  std::cout << "macro," << detail::format_fixed6(slice.macro[0]) << ','
            << detail::format_fixed6(slice.macro[1]) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage();
    return kExitConfig;
  }
  const std::string command = argv[1];
  if (command == "--help" || command == "-h" || command == "help") {
    print_usage();
    return kExitOk;
  }

  auto flags = parse_flags(argc, argv, 2);
  if (!flags) {
    print_usage();
    return kExitConfig;
  }

  try {
    if (command == "gen-data") return cmd_gen_data(*flags);
    if (command == "convert-mnist") return cmd_convert_mnist(*flags);
    if (command == "train") return cmd_train(*flags);
    if (command == "ablate") return cmd_ablate(*flags);
    if (command == "eval") return cmd_eval(*flags);
    std::cerr << "unknown command: " << command << "\n";
    print_usage();
    return kExitConfig;
  } catch (const NumericError& ex) {
    std::cerr << "numeric failure: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const FormatError& ex) {
    std::cerr << "format error: " << ex.what() << "\n";
    return kExitIo;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "invalid arguments: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kExitIo;
  }
}
