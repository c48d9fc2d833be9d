// Command-line front end: synth, split, pretrain, probe, scratch, eval,
// cluster, gradcheck. Exit codes: 0 ok, 1 invalid configuration, 2 failure.
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "cytocon/config.hpp"
#include "cytocon/corpus.hpp"
#include "cytocon/error.hpp"
#include "cytocon/evaluate.hpp"
#include "cytocon/gradcheck.hpp"
#include "cytocon/trainer.hpp"

namespace fs = std::filesystem;
using namespace cytocon;

namespace {

struct Invocation {
  std::string config_path;
  std::map<std::string, std::string> flags;
};

void add_setting_flags(CLI::App& cmd, Invocation& inv) {
  cmd.add_option("--config", inv.config_path, "key=value config file");
  for (const auto& spec : Settings::schema()) {
    cmd.add_option("--" + spec.key, inv.flags[spec.key], spec.help + " [" + spec.default_value + "]");
  }
}

Settings resolve(const CLI::App& cmd, const Invocation& inv) {
  Settings::Pairs file_values;
  if (!inv.config_path.empty()) file_values = Settings::parse_file(inv.config_path);
  Settings::Pairs flag_values;
  for (const auto& [key, value] : inv.flags) {
    if (cmd.count("--" + key) > 0) flag_values.emplace_back(key, value);
  }
  return Settings::resolve(file_values, flag_values);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

// <out>/<config hash>-<UTC timestamp>, with the resolved config inside.
fs::path make_run_dir(const Settings& s, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &utc);
  fs::path dir = fs::path(s.get("out")) / (s.hash() + "-" + stamp);
  fs::create_directories(dir);
  write_text(dir / "config.txt", "# " + command + "\n" + s.resolved_text());
  std::cout << "run directory: " << dir.string() << "\n";
  return dir;
}

const std::string& required(const Settings& s, const std::string& key) {
  if (!s.has_value(key)) throw ConfigError("--" + key + " is required");
  return s.get(key);
}

Corpus corpus_of(const Settings& s) { return load_corpus(required(s, "corpus")); }
SplitSpec split_of(const Settings& s) { return load_split(required(s, "split")); }

void print_epoch(const EpochRecord& r) {
  std::printf("epoch %3d  loss %.6f  lr %.6g  %.1fs\n", r.epoch, r.loss, r.lr, r.seconds);
  std::fflush(stdout);
}

TrainControl control_of(const Settings& s, const fs::path& run) {
  TrainControl c;
  c.checkpoint_path = run / "model.ckpt";
  c.checkpoint_every = s.get_int("checkpoint-every");
  if (s.has_value("resume")) c.resume_from = s.get("resume");
  c.on_epoch = print_epoch;
  return c;
}

MetricsRow metrics_for(const ModelParams& params, const TrainConfig& config, const Corpus& corpus,
                       const SplitSpec& split, const std::string& model, const std::string& dataset) {
  const auto entries = evaluation_entries(corpus.manifest(), split, dataset);
  const Tensor logits = logits_for_entries(params, config.model.encoder, corpus, entries);
  std::vector<int> labels;
  for (const auto i : entries) labels.push_back(corpus.manifest().entries[i].label);
  return MetricsRow{model, dataset, evaluate_logits(logits, labels)};
}

void report_metrics(const fs::path& run, const std::vector<MetricsRow>& rows) {
  write_metrics_csv(run / "metrics.csv", rows);
  std::cout << "model,dataset,f1,top1,top3\n";
  for (const auto& r : rows) std::cout << metrics_csv_row(r) << "\n";
}

// Test-set rows, plus the unseen brain when the split withholds one.
std::vector<MetricsRow> standard_rows(const ModelParams& params, const TrainConfig& config,
                                      const Corpus& corpus, const SplitSpec& split,
                                      const std::string& model) {
  std::vector<MetricsRow> rows{metrics_for(params, config, corpus, split, model, "test")};
  if (split.holdout_brain) rows.push_back(metrics_for(params, config, corpus, split, model, "unseen"));
  return rows;
}

int cmd_synth(const Settings& s) {
  SynthConfig c;
  c.classes = s.get_int("classes");
  c.patches_per_class = s.get_int("per-class");
  c.side = s.get_int("side");
  c.brains = s.get_int("brains");
  c.sections_per_brain = s.get_int("sections-per-brain");
  c.seed = s.get_u64("seed");
  c.resolution_um = s.get_double("resolution-um");
  c.separability = s.get_double("separability");
  const Corpus corpus = generate_synthetic_corpus(c);
  const fs::path out = s.get("out");
  save_corpus(corpus, out);
  write_text(out / "config.txt", "# synth\n" + s.resolved_text());
  std::printf("wrote %zu patches (%d classes, side %d) to %s\n", corpus.size(), c.classes, c.side,
              out.string().c_str());
  return 0;
}

int cmd_split(const Settings& s) {
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_by_section(corpus.manifest(), s.get_double("train-fraction"),
                                           s.get_optional_int("holdout-brain"), s.get_u64("seed"));
  const fs::path run = make_run_dir(s, "split");
  save_split(split, run / "split.txt");
  std::printf("train sections %zu, test sections %zu -> %s\n", split.train_sections.size(),
              split.test_sections.size(), (run / "split.txt").string().c_str());
  return 0;
}

int cmd_pretrain(const Settings& s) {
  const auto config = TrainConfig::from_settings(s);
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_of(s);
  const fs::path run = make_run_dir(s, "pretrain");
  const auto result = pretrain_contrastive(config, corpus, split, control_of(s, run));
  result.log.write_csv(run / "runlog.csv");
  std::cout << "checkpoint: " << (run / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_probe(const Settings& s) {
  const auto config = TrainConfig::from_settings(s);
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_of(s);
  const ModelParams pretrained = read_model_params(required(s, "checkpoint"));
  const fs::path run = make_run_dir(s, "probe");
  const auto result = train_probe(config, corpus, split, pretrained, control_of(s, run));
  result.log.write_csv(run / "runlog.csv");
  report_metrics(run, standard_rows(result.params, config, corpus, split, "contrastive"));
  return 0;
}

int cmd_scratch(const Settings& s) {
  const auto config = TrainConfig::from_settings(s);
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_of(s);
  const fs::path run = make_run_dir(s, "scratch");
  const auto result = train_scratch(config, corpus, split, control_of(s, run));
  result.log.write_csv(run / "runlog.csv");
  report_metrics(run, standard_rows(result.params, config, corpus, split, "scratch"));
  return 0;
}

int cmd_eval(const Settings& s) {
  const std::string model = s.get("model-name");
  const std::string dataset = s.get("dataset");
  if (s.has_value("pred") || s.has_value("truth")) {
    const Tensor logits = read_logits_csv(required(s, "pred"));
    const auto labels = read_labels_csv(required(s, "truth"));
    if (labels.size() != logits.dim(0)) {
      throw ConfigError("--truth has " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(logits.dim(0)) + " prediction rows");
    }
    const int k = s.get_int("k");
    if (k < 1 || k > static_cast<int>(logits.dim(1))) {
      throw ConfigError("--k " + std::to_string(k) + " outside [1, " + std::to_string(logits.dim(1)) + "]");
    }
    auto metrics = evaluate_logits(logits, labels);
    metrics.top3 = topk_accuracy(logits, labels, k);
    const fs::path run = make_run_dir(s, "eval");
    report_metrics(run, {MetricsRow{model, dataset, metrics}});
    return 0;
  }
  const auto config = TrainConfig::from_settings(s);
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_of(s);
  const ModelParams params = read_model_params(required(s, "checkpoint"));
  const fs::path run = make_run_dir(s, "eval");
  report_metrics(run, {metrics_for(params, config, corpus, split, model, dataset)});
  return 0;
}

int cmd_cluster(const Settings& s) {
  const auto config = TrainConfig::from_settings(s);
  const Corpus corpus = corpus_of(s);
  const SplitSpec split = split_of(s);
  const ModelParams params = read_model_params(required(s, "checkpoint"));
  const auto entries = evaluation_entries(corpus.manifest(), split, s.get("dataset"));
  const Tensor h = encode_entries(params, config.model.encoder, corpus, entries);
  const int k = s.get_int("clusters");
  if (k < 1 || k > static_cast<int>(entries.size())) {
    throw ConfigError("--clusters " + std::to_string(k) + " outside [1, " +
                      std::to_string(entries.size()) + "]");
  }
  std::vector<int> labels, brains;
  for (const auto i : entries) {
    labels.push_back(corpus.manifest().entries[i].label);
    brains.push_back(corpus.manifest().entries[i].brain_id);
  }
  const auto report = ward_cluster(h, k);
  const auto rows = cluster_composition(report, labels, s.get_int("top-m"));
  const fs::path run = make_run_dir(s, "cluster");
  write_cluster_csv(run / "clusters.csv", rows, corpus.manifest().class_names);
  write_embedding_csv(run / "embedding.csv", embed_2d(h, s.get_u64("seed")), labels, brains,
                      report.assignments);
  std::cout << "cluster,label,percent\n";
  for (const auto& r : rows) {
    std::printf("%d,%s,%.1f\n", r.cluster + 1, corpus.manifest().class_names[r.label].c_str(), r.percent);
  }
  return 0;
}

int cmd_gradcheck(const Settings& s) {
  GradcheckOptions options;
  options.trials = s.get_int("trials");
  if (options.trials < 1) throw ConfigError("--trials must be >= 1");
  options.seed = s.get_u64("seed");
  const fs::path run = make_run_dir(s, "gradcheck");
  std::ofstream csv(run / "gradcheck.csv");
  csv << "op,trials,max_rel_error,tolerance,passed\n";
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(options)) {
    std::printf("%-20s trials %3d  max rel error %.3e  (tol %.0e)  %s\n", r.op.c_str(), r.trials,
                r.max_relative_error, r.tolerance, r.passed() ? "ok" : "FAILED");
    csv << r.op << ',' << r.trials << ',' << r.max_relative_error << ',' << r.tolerance << ','
        << (r.passed() ? 1 : 0) << '\n';
    ok = ok && r.passed();
  }
  if (!ok) {
    std::cerr << "gradcheck: at least one op exceeded its tolerance\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised contrastive patch representations: data, training, evaluation"};
  app.require_subcommand(1);
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Settings&);
  };
  const Command commands[] = {
      {"synth", "generate a synthetic corpus into --out", cmd_synth},
      {"split", "section-level train/test split of --corpus", cmd_split},
      {"pretrain", "contrastive pre-training", cmd_pretrain},
      {"probe", "linear probe on a frozen pre-trained encoder (--checkpoint)", cmd_probe},
      {"scratch", "end-to-end cross-entropy baseline", cmd_scratch},
      {"eval", "metrics from --pred/--truth CSVs or a --checkpoint", cmd_eval},
      {"cluster", "Ward clustering of encoder features", cmd_cluster},
      {"gradcheck", "finite-difference gradient suite", cmd_gradcheck},
  };
  std::map<std::string, Invocation> invocations;
  std::map<std::string, CLI::App*> subcommands;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_setting_flags(*sub, invocations[c.name]);
    subcommands[c.name] = sub;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  for (const auto& c : commands) {
    auto* sub = subcommands[c.name];
    if (!sub->parsed()) continue;
    try {
      const Settings settings = resolve(*sub, invocations[c.name]);
      return c.run(settings);
    } catch (const ConfigError& e) {
      std::cerr << c.name << ": invalid configuration: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << c.name << ": " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
