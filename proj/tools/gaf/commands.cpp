#include "commands.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gaf/checkpoint.hpp"
#include "gaf/errors.hpp"
#include "gaf/io.hpp"
#include "gaf/synthgen.hpp"
#include "gaf/trainer.hpp"

namespace gaf::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs `body`, mapping library errors onto exit codes.
template <typename F>
int guarded(const char* command, F&& body) {
  try {
    return body();
  } catch (const NumericalError& e) {
    spdlog::error("{}: numerical failure: {}", command, e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    spdlog::error("{}: {}", command, e.what());
    return kExitInput;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}: malformed JSON: {}", command, e.what());
    return kExitInput;
  }
}

struct LoadedData {
  std::vector<FeatureSequence> sequences;
  std::uint64_t checksum = 0xcbf29ce484222325ULL;

  void add(const fs::path& path) {
    if (!fs::exists(path)) throw ContractError(fmt::format("dataset {} does not exist", path.string()));
    const std::string bytes = read_file(path);
    checksum = fnv1a(bytes, checksum);
    std::istringstream in(bytes);
    auto seqs = read_dataset(in);
    sequences.insert(sequences.end(), std::make_move_iterator(seqs.begin()),
                     std::make_move_iterator(seqs.end()));
  }
  std::string checksum_hex() const { return fmt::format("{:016x}", checksum); }
};

fs::path resolve(const fs::path& base_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

struct ResolvedConfig {
  TrainConfig cfg;
  fs::path train_data;
  fs::path eval_data;  // empty when absent
  fs::path checkpoint;
};

// Relative paths in a config file are taken relative to the file itself.
ResolvedConfig load_train_config(const fs::path& config_path) {
  ResolvedConfig out;
  out.cfg = train_config_from_json(read_file(config_path));
  if (const char* env = std::getenv("GAF_SEED")) {
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ContractError(fmt::format("GAF_SEED={} is not an integer", env));
    out.cfg.seed = seed;
  }
  out.cfg.validate();
  const fs::path dir = config_path.parent_path();
  if (out.cfg.train_data.empty()) throw ContractError("config has no train_data");
  out.train_data = resolve(dir, out.cfg.train_data);
  if (!out.cfg.eval_data.empty()) out.eval_data = resolve(dir, out.cfg.eval_data);
  out.checkpoint = out.cfg.checkpoint.empty() ? derived_path(config_path, ".ckpt.json")
                                              : resolve(dir, out.cfg.checkpoint);
  return out;
}

std::string history_jsonl(const TrainHistory& history) {
  std::string out;
  for (const auto& r : history.records) {
    out += epoch_record_to_json(r);
    out += '\n';
  }
  return out;
}

void check_audits(const TrainHistory& history) {
  for (const auto& a : history.audits) {
    if (a.before != a.after) {
      throw NumericalError(fmt::format("epoch {}: frozen {} parameters changed", a.epoch, a.frozen));
    }
  }
}

std::string csv_number(double v) { return fmt::format("{:.17g}", v); }

}  // namespace

json RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["dataset_checksum"] = dataset_checksum;
  j["tool_version"] = tool_version;
  j["duration_seconds"] = duration_seconds;
  j["outputs"] = outputs;
  return j;
}

void write_manifest(const fs::path& path, const RunManifest& manifest) {
  atomic_write(path, manifest.to_json().dump(2) + "\n");
}

fs::path derived_path(const fs::path& base, const std::string& suffix) {
  fs::path out = base;
  out.replace_extension();
  out += suffix;
  return out;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0' || !(v > 0.0 && v <= 1.0)) {
      throw ContractError(fmt::format("bad IoU threshold '{}'", item));
    }
    out.push_back(v);
  }
  if (out.empty()) throw ContractError("no IoU thresholds given");
  return out;
}

int cmd_generate(const GenerateOptions& opts) {
  return guarded("generate", [&] {
    const auto t0 = Clock::now();
    DatasetSpec spec;
    if (opts.spec) spec = dataset_spec_from_json(read_file(*opts.spec));
    spec.validate();
    const auto seqs = generate(spec);
    const std::size_t n_train = spec.num_sequences - spec.num_eval;

    std::ostringstream train, eval;
    write_dataset(train, {seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(n_train)});
    write_dataset(eval, {seqs.begin() + static_cast<std::ptrdiff_t>(n_train), seqs.end()});
    const fs::path train_path = opts.out / "train.jsonl";
    const fs::path eval_path = opts.out / "eval.jsonl";
    const fs::path spec_path = opts.out / "spec.json";
    atomic_write(train_path, train.str());
    atomic_write(eval_path, eval.str());
    atomic_write(spec_path, dataset_spec_to_json(spec));

    RunManifest m;
    m.command = "generate";
    m.config = json::parse(dataset_spec_to_json(spec));
    m.seed = spec.seed;
    m.dataset_checksum = fmt::format("{:016x}", fnv1a(eval.str(), fnv1a(train.str())));
    m.outputs = {train_path.string(), eval_path.string(), spec_path.string()};
    m.duration_seconds = seconds_since(t0);
    write_manifest(opts.out / "manifest.json", m);
    spdlog::info("wrote {} train and {} eval sequences to {}", n_train, spec.num_eval,
                 opts.out.string());
    return kExitOk;
  });
}

int cmd_train(const TrainOptions& opts) {
  return guarded("train", [&] {
    const auto t0 = Clock::now();
    ResolvedConfig rc = load_train_config(opts.config);
    LoadedData train, eval;
    train.add(rc.train_data);
    if (!rc.eval_data.empty()) eval.add(rc.eval_data);

    TrainConfig cfg = rc.cfg;
    cfg.checkpoint = rc.checkpoint.string();
    GafModels models = GafModels::create(ModelConfig::for_data(train.sequences), cfg.seed);
    Trainer trainer(models, cfg);
    const TrainHistory history = trainer.train_alternating(train.sequences, eval.sequences);
    check_audits(history);

    const fs::path metrics = derived_path(rc.checkpoint, ".metrics.jsonl");
    atomic_write(metrics, history_jsonl(history));

    RunManifest m;
    m.command = "train";
    m.config = json::parse(train_config_to_json(rc.cfg));
    m.seed = cfg.seed;
    m.dataset_checksum =
        fmt::format("{:016x}", rc.eval_data.empty() ? train.checksum : fnv1a(read_file(rc.eval_data), train.checksum));
    m.outputs = {rc.checkpoint.string(), metrics.string()};
    m.duration_seconds = seconds_since(t0);
    write_manifest(derived_path(rc.checkpoint, ".manifest.json"), m);
    if (!history.records.empty()) {
      const auto& last = history.records.back();
      spdlog::info("trained {} epochs, lambda fg {:.3f} bg {:.3f}", history.records.size(),
                   last.lambda_fg_mean, last.lambda_bg_mean);
    }
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& opts) {
  return guarded("eval", [&] {
    const auto t0 = Clock::now();
    const std::vector<double> thresholds =
        opts.thresholds.empty() ? kDefaultIouThresholds : opts.thresholds;
    LoadedData data;
    data.add(opts.data);

    EvalReport report;
    if (opts.oracle) {
      std::vector<DetectionResult> results;
      for (const auto& seq : data.sequences) {
        DetectionResult r{seq.seq_id, {}};
        for (const auto& iv : seq.intervals) {
          r.proposals.push_back({static_cast<double>(iv.start), static_cast<double>(iv.end),
                                 iv.class_id, 1.0});
        }
        results.push_back(std::move(r));
      }
      report = evaluate_map(results, data.sequences, thresholds);
    } else {
      const GafModels models = load_checkpoint(opts.checkpoint);
      report = evaluate_models(models, data.sequences, thresholds);
    }

    const std::string text = eval_report_to_json(report);
    const fs::path out =
        opts.out ? *opts.out
                 : derived_path(opts.checkpoint.empty() ? opts.data : opts.checkpoint, ".eval.json");
    atomic_write(out, text + "\n");
    fmt::print("{}\n", text);

    RunManifest m;
    m.command = opts.oracle ? "eval --oracle" : "eval";
    m.config = {{"checkpoint", opts.checkpoint.string()},
                {"data", opts.data.string()},
                {"thresholds", thresholds}};
    m.dataset_checksum = data.checksum_hex();
    m.outputs = {out.string()};
    m.duration_seconds = seconds_since(t0);
    write_manifest(derived_path(out, ".manifest.json"), m);
    return kExitOk;
  });
}

int cmd_ablate(const AblateOptions& opts) {
  return guarded("ablate", [&] {
    const auto t0 = Clock::now();
    const ResolvedConfig rc = load_train_config(opts.config);
    LoadedData train, eval;
    train.add(rc.train_data);
    if (!rc.eval_data.empty()) eval.add(rc.eval_data);
    const auto& scored = eval.sequences.empty() ? train.sequences : eval.sequences;

    struct Variant {
      const char* name;
      LossTerms terms;
    };
    const Variant variants[] = {{"L_ai", LossTerms::basic()},
                                {"+L_n-ai", LossTerms::with_non_action()},
                                {"+L_R", LossTerms::full()}};

    json table = json::array();
    std::string csv = "variant";
    for (double t : kDefaultIouThresholds) csv += ",map@" + threshold_key(t);
    csv += ",avg_map\n";
    RunManifest m;
    m.command = "ablate";
    m.config = json::parse(train_config_to_json(rc.cfg));
    m.seed = rc.cfg.seed;
    m.dataset_checksum = fmt::format(
        "{:016x}", rc.eval_data.empty() ? train.checksum : fnv1a(read_file(rc.eval_data), train.checksum));

    char tag = 'a';
    for (const auto& v : variants) {
      TrainConfig cfg = rc.cfg;
      cfg.checkpoint = derived_path(rc.checkpoint, fmt::format(".ablate-{}.json", tag++)).string();
      GafModels models = GafModels::create(ModelConfig::for_data(train.sequences), cfg.seed);
      Trainer trainer(models, cfg, v.terms);
      const TrainHistory history = trainer.train_alternating(train.sequences, eval.sequences);
      check_audits(history);
      const EvalReport report = evaluate_models(models, scored);

      json row;
      row["variant"] = v.name;
      json maps;
      csv += v.name;
      for (std::size_t i = 0; i < report.thresholds.size(); ++i) {
        maps[threshold_key(report.thresholds[i])] = report.map[i];
        csv += "," + csv_number(report.map[i]);
      }
      row["map"] = maps;
      row["avg_map"] = report.avg_map;
      csv += "," + csv_number(report.avg_map) + "\n";
      table.push_back(row);
      m.outputs.push_back(cfg.checkpoint);
      spdlog::info("{}: mAP@0.5 {:.4f}", v.name, report.map_at(0.5));
    }

    const fs::path json_path = derived_path(rc.checkpoint, ".ablation.json");
    const fs::path csv_path = derived_path(rc.checkpoint, ".ablation.csv");
    atomic_write(json_path, table.dump(2) + "\n");
    atomic_write(csv_path, csv);
    fmt::print("{}", csv);
    m.outputs.push_back(json_path.string());
    m.outputs.push_back(csv_path.string());
    m.duration_seconds = seconds_since(t0);
    write_manifest(derived_path(rc.checkpoint, ".ablation.manifest.json"), m);
    return kExitOk;
  });
}

int cmd_export_plots(const ExportPlotsOptions& opts) {
  return guarded("export-plots", [&] {
    const auto t0 = Clock::now();
    if (!fs::exists(opts.history)) {
      throw ContractError(fmt::format("history {} does not exist", opts.history.string()));
    }
    const std::string text = read_file(opts.history);
    std::string loss = "epoch,stage,loss\n";
    std::string lambda = "epoch,lambda_fg_mean,lambda_bg_mean,separation\n";
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      EpochRecord r;
      try {
        r = epoch_record_from_json(line);
      } catch (const ParseError& e) {
        throw ParseError(e.what(), line_no);
      }
      loss += fmt::format("{},{},{}\n", r.epoch, r.stage, csv_number(r.loss));
      lambda += fmt::format("{},{},{},{}\n", r.epoch, csv_number(r.lambda_fg_mean),
                            csv_number(r.lambda_bg_mean),
                            csv_number(r.lambda_fg_mean - r.lambda_bg_mean));
    }
    const fs::path loss_path = opts.out_dir / "loss.csv";
    const fs::path lambda_path = opts.out_dir / "lambda_separation.csv";
    atomic_write(loss_path, loss);
    atomic_write(lambda_path, lambda);

    RunManifest m;
    m.command = "export-plots";
    m.config = {{"history", opts.history.string()}};
    m.dataset_checksum = fnv1a_hex(text);
    m.outputs = {loss_path.string(), lambda_path.string()};
    m.duration_seconds = seconds_since(t0);
    write_manifest(opts.out_dir / "manifest.json", m);
    return kExitOk;
  });
}

int run(int argc, char** argv) {
  CLI::App app{"Gated attention features for temporal action detection"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenerateOptions gen;
  std::string gen_spec;
  auto* g = app.add_subcommand("generate", "write a synthetic dataset");
  g->add_option("--spec", gen_spec, "dataset spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "output directory")->required();

  TrainOptions train;
  auto* t = app.add_subcommand("train", "run alternating training");
  t->add_option("--config", train.config, "training config JSON")->required()->check(CLI::ExistingFile);

  EvalOptions ev;
  std::string thresholds;
  std::string ev_out;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a dataset");
  e->add_option("--ckpt", ev.checkpoint, "checkpoint JSON (required unless --oracle)");
  e->add_option("--data", ev.data, "dataset JSON-lines")->required();
  e->add_option("--thresholds", thresholds, "comma-separated IoU thresholds");
  e->add_option("--out", ev_out, "report path (default: next to the checkpoint)");
  e->add_flag("--oracle", ev.oracle, "score the ground-truth intervals instead of the model");

  AblateOptions ab;
  auto* a = app.add_subcommand("ablate", "train the three loss variants");
  a->add_option("--config", ab.config, "training config JSON")->required()->check(CLI::ExistingFile);

  ExportPlotsOptions ex;
  auto* x = app.add_subcommand("export-plots", "turn a metrics history into CSV series");
  x->add_option("--history", ex.history, "metrics JSON-lines")->required();
  x->add_option("--out-dir", ex.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInput;
  }

  if (g->parsed()) {
    if (!gen_spec.empty()) gen.spec = gen_spec;
    return cmd_generate(gen);
  }
  if (t->parsed()) return cmd_train(train);
  if (e->parsed()) {
    if (ev.checkpoint.empty() && !ev.oracle) {
      spdlog::error("eval: --ckpt is required unless --oracle is given");
      return kExitInput;
    }
    if (!thresholds.empty()) {
      try {
        ev.thresholds = parse_thresholds(thresholds);
      } catch (const ContractError& err) {
        spdlog::error("eval: {}", err.what());
        return kExitInput;
      }
    }
    if (!ev_out.empty()) ev.out = ev_out;
    return cmd_eval(ev);
  }
  if (a->parsed()) return cmd_ablate(ab);
  return cmd_export_plots(ex);
}

}  // namespace gaf::cli
