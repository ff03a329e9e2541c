#include <openssl/evp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mperl/config.hpp"
#include "mperl/error.hpp"
#include "mperl/ntriples.hpp"
#include "mperl/synthetic.hpp"
#include "mperl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace mperl;

namespace {

struct Overrides {
  std::map<std::string, std::string> kv;  // flag overrides in key=value form
};

RunConfig resolve_config(const std::string& config_path, const Overrides& over) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_kv_file(config_path);
  for (const auto& [k, v] : over.kv) kv[k] = v;  // flags take precedence
  std::vector<std::string> errors;
  RunConfig cfg = parse_config(kv, errors);
  if (!errors.empty()) {
    for (const std::string& e : errors) std::cerr << "config error: " << e << "\n";
    throw ConfigError("invalid configuration (" + std::to_string(errors.size()) + " errors)");
  }
  return cfg;
}

// registers the shared override flags on a subcommand
class OverrideFlags {
 public:
  OverrideFlags(CLI::App* cmd, Overrides& over) {
    add(cmd, "--config", config_path_, "configuration file (key = value lines)");
    opt(cmd, over, "--dataset", "dataset", "dataset name (registry, synthetic, or custom)");
    opt(cmd, over, "--data-root", "data_root", "dataset cache root (env MPERL_DATA)");
    opt(cmd, over, "--out", "out_dir", "run output directory");
    opt(cmd, over, "--seed", "seed", "base RNG seed");
    opt(cmd, over, "--repeats", "repeats", "number of repeated runs");
    opt(cmd, over, "--jobs", "jobs", "parallel worker bound for repeated runs");
    opt(cmd, over, "--epochs", "epochs", "training epochs");
    opt(cmd, over, "--lr", "lr", "learning rate");
    opt(cmd, over, "--lambda-p", "lambda_p", "geometric prior parameter in (0,1]");
    opt(cmd, over, "--beta", "beta", "halting regularization weight");
    opt(cmd, over, "--steps", "max_steps", "Markov horizon (0 = derived from lambda_p)");
    opt(cmd, over, "--hidden", "hidden", "hidden width");
    opt(cmd, over, "--bases", "bases", "basis count (0 = derived)");
    opt(cmd, over, "--loss", "loss", "loss kind: evidential | cross_entropy");
    opt(cmd, over, "--batch-size", "batch_size", "mini-batch size (0 = full batch)");
    opt(cmd, over, "--fanout", "fanout", "training neighbor fanout (0 = full)");
  }
  const std::string& config_path() const { return config_path_; }

 private:
  static void add(CLI::App* cmd, const std::string& flag, std::string& target,
                  const std::string& help) {
    cmd->add_option(flag, target, help);
  }
  static void opt(CLI::App* cmd, Overrides& over, const std::string& flag,
                  const std::string& key, const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&over, key](const std::string& v) { over.kv[key] = v; }, help);
  }
  std::string config_path_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path);
  out << text;
}

ordered_json run_to_json(const RunResult& r, TaskMode mode) {
  ordered_json j;
  j["seed"] = r.seed;
  if (mode == TaskMode::SingleLabel) {
    j["accuracy"] = r.classification->accuracy;
    j["f1_macro"] = r.classification->f1_macro;
  } else {
    j["mrr"] = r.ranking->mrr;
    j["hit1"] = r.ranking->hit1;
    j["hit3"] = r.ranking->hit3;
    j["hit10"] = r.ranking->hit10;
  }
  j["final_loss"] = r.curve.empty() ? 0.0 : r.curve.back().total;
  j["steps"] = r.executed_steps;
  return j;
}

ordered_json report_to_json(const MetricsReport& rep, const RunConfig& cfg) {
  ordered_json j;
  j["dataset"] = cfg.dataset;
  j["task"] = cfg.task;
  j["repeats"] = rep.runs.size();
  j["seed"] = cfg.train.seed;
  j["epochs"] = cfg.train.epochs;
  j["lambda_p"] = cfg.train.hp.lambda_p;
  j["beta"] = cfg.train.loss.beta;
  j["max_steps"] = rep.runs.empty() ? 0 : rep.runs.front().executed_steps;
  ordered_json runs = ordered_json::array();
  for (const RunResult& r : rep.runs) runs.push_back(run_to_json(r, rep.mode));
  j["runs"] = runs;
  ordered_json mean, stdev;
  if (rep.mode == TaskMode::SingleLabel) {
    mean["accuracy"] = rep.cls_mean.accuracy;
    mean["f1_macro"] = rep.cls_mean.f1_macro;
    stdev["accuracy"] = rep.cls_std.accuracy;
    stdev["f1_macro"] = rep.cls_std.f1_macro;
  } else {
    mean["mrr"] = rep.rank_mean.mrr;
    mean["hit1"] = rep.rank_mean.hit1;
    mean["hit3"] = rep.rank_mean.hit3;
    mean["hit10"] = rep.rank_mean.hit10;
    stdev["mrr"] = rep.rank_std.mrr;
    stdev["hit1"] = rep.rank_std.hit1;
    stdev["hit3"] = rep.rank_std.hit3;
    stdev["hit10"] = rep.rank_std.hit10;
  }
  j["mean"] = mean;
  j["std"] = stdev;
  return j;
}

void write_run_artifacts(const RunConfig& cfg, const MetricsReport& rep) {
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/effective.config", render_config(cfg));
  write_text(cfg.out_dir + "/metrics.json", report_to_json(rep, cfg).dump(2) + "\n");
  for (std::size_t i = 0; i < rep.runs.size(); ++i) {
    write_curve_csv(cfg.out_dir + "/loss_curve_run" + std::to_string(i) + ".csv",
                    rep.runs[i].curve);
    const bool save = cfg.checkpoints == "all" || (cfg.checkpoints == "first" && i == 0);
    if (save) {
      save_checkpoint(rep.runs[i].params, rep.runs[i].hp,
                      cfg.out_dir + "/checkpoint_run" + std::to_string(i) + ".ckpt");
    }
  }
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

int cmd_prepare(const RunConfig& cfg, const std::string& archive) {
  if (is_synthetic_dataset(cfg.dataset)) {
    std::cout << "dataset '" << cfg.dataset << "' is generated in-process; nothing to prepare\n";
    return 0;
  }
  std::optional<DatasetInfo> info = find_dataset(cfg.dataset);
  if (!info) throw ConfigError("dataset: unknown name '" + cfg.dataset + "'");
  const std::string dir = effective_data_root(cfg) + "/" + info->name;
  fs::create_directories(dir);

  std::string archive_path = archive;
  const std::string triples = dir + "/" + info->triples_file;
  if (!fs::exists(triples) && archive_path.empty() && !info->archive_url.empty()) {
    archive_path = dir + "/" + info->name + ".tgz";
    if (!fs::exists(archive_path)) {
      std::string cmd = "curl -fsSL -o '" + archive_path + "' '" + info->archive_url + "'";
      std::cout << "fetching " << info->archive_url << "\n";
      if (std::system(cmd.c_str()) != 0) {
        std::remove(archive_path.c_str());
        throw IngestError("download failed; fetch " + info->archive_url +
                          " manually and pass it with --archive");
      }
    }
  }
  if (!archive_path.empty() && fs::exists(archive_path)) {
    const std::string digest = sha256_file(archive_path);
    const std::string pin_file = dir + "/archive.sha256";
    if (!info->archive_sha256.empty() && digest != info->archive_sha256) {
      throw IngestError("archive digest mismatch: got " + digest);
    }
    if (fs::exists(pin_file)) {
      std::string pinned;
      std::ifstream(pin_file) >> pinned;
      if (pinned != digest) {
        throw IngestError("archive digest changed since first fetch: " + digest +
                          " (pinned " + pinned + ")");
      }
    } else {
      write_text(pin_file, digest + "\n");
    }
    std::cout << "archive sha256 " << digest << "\n";
    std::string cmd = "tar -xzf '" + archive_path + "' -C '" + dir + "'";
    if (std::system(cmd.c_str()) != 0) throw IngestError("extraction failed");
  }

  // archives may unpack into a subdirectory; surface the expected files
  auto locate = [&](const std::string& filename) -> std::string {
    if (fs::exists(dir + "/" + filename)) return dir + "/" + filename;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename() == filename) {
        fs::copy_file(entry.path(), dir + "/" + filename);
        return dir + "/" + filename;
      }
    }
    return "";
  };
  if (locate(info->triples_file).empty()) {
    throw IngestError("triple file '" + info->triples_file + "' not found under " + dir);
  }
  for (const RawTaskFile& f : info->raw_task_files) locate(f.file);
  if (!fs::exists(dir + "/labels.tsv")) {
    const std::size_t rows = convert_raw_labels(*info, dir, dir + "/labels.tsv");
    std::cout << "labels.tsv written (" << rows << " assertions)\n";
  }

  std::remove((dir + "/graph.cache").c_str());
  KnowledgeGraph kg = load_dataset(cfg);
  std::cout << stats_to_json(compute_stats(kg, cfg.dataset)) << "\n";
  return 0;
}

int cmd_stats(const RunConfig& cfg, const std::string& degrees_csv) {
  KnowledgeGraph kg = load_dataset(cfg);
  std::cout << stats_to_json(compute_stats(kg, cfg.dataset)) << "\n";
  if (!degrees_csv.empty()) {
    std::ofstream out(degrees_csv);
    out << "degree,count\n";
    for (auto [d, c] : degree_histogram(kg)) out << d << ',' << c << '\n';
    std::cout << "degree histogram written to " << degrees_csv << "\n";
  }
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  KnowledgeGraph kg = load_dataset(cfg);
  RelationalAdjacency adj = RelationalAdjacency::build(kg, cfg.include_inverse);
  MetricsReport rep = run_repeats(kg, adj, cfg.train, cfg.repeats, cfg.jobs);
  write_run_artifacts(cfg, rep);
  std::cout << report_to_json(rep, cfg)["mean"].dump() << "\n";
  std::cout << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split) {
  KnowledgeGraph kg = load_dataset(cfg);
  RelationalAdjacency adj = RelationalAdjacency::build(kg, cfg.include_inverse);
  auto [params, hp] = load_checkpoint(checkpoint);
  ordered_json j;
  j["dataset"] = cfg.dataset;
  j["split"] = split;
  if (kg.mode == TaskMode::SingleLabel) {
    ClassificationMetrics m =
        evaluate_classification(params, hp, kg, adj, split_from_name(split));
    j["accuracy"] = m.accuracy;
    j["f1_macro"] = m.f1_macro;
  } else {
    RankingMetrics m = evaluate_ranking(params, hp, kg, adj, split_from_name(split));
    j["mrr"] = m.mrr;
    j["hit1"] = m.hit1;
    j["hit3"] = m.hit3;
    j["hit10"] = m.hit10;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_sweep(const RunConfig& cfg) {
  KnowledgeGraph kg = load_dataset(cfg);
  RelationalAdjacency adj = RelationalAdjacency::build(kg, cfg.include_inverse);
  auto entries = sweep_lambda(kg, adj, cfg.train, cfg.sweep_values, cfg.repeats, cfg.jobs);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/effective.config", render_config(cfg));
  ordered_json summary = ordered_json::array();
  for (const SweepEntry& e : entries) {
    std::ostringstream name;
    name << cfg.out_dir << "/sweep_curve_lambda_" << e.lambda_p << ".csv";
    std::ofstream out(name.str());
    out << "epoch,mean_total\n";
    for (std::size_t i = 0; i < e.mean_curve.size(); ++i) {
      out << i << ',' << e.mean_curve[i] << '\n';
    }
    ordered_json row;
    row["lambda_p"] = e.lambda_p;
    row["steps"] = e.steps;
    row["first_epoch_loss"] = e.mean_curve.front();
    row["final_epoch_loss"] = e.mean_curve.back();
    if (!e.report.runs.empty() && e.report.mode == TaskMode::SingleLabel) {
      row["accuracy_mean"] = e.report.cls_mean.accuracy;
    }
    summary.push_back(row);
  }
  write_text(cfg.out_dir + "/sweep_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  std::cout << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg) {
  KnowledgeGraph kg = load_dataset(cfg);
  if (kg.mode != TaskMode::SingleLabel) {
    throw ConfigError("dataset: the ablation grid requires a single-label dataset");
  }
  RelationalAdjacency adj = RelationalAdjacency::build(kg, cfg.include_inverse);
  auto grid = ablate(kg, adj, cfg.train, cfg.repeats, cfg.jobs);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir + "/effective.config", render_config(cfg));
  std::ostringstream csv;
  csv << "cell,markov,evidential,accuracy_mean,accuracy_std,f1_macro_mean,f1_macro_std\n";
  ordered_json j = ordered_json::array();
  for (const AblationCell& cell : grid) {
    const std::string name = std::string(cell.markov ? "+MP" : "-MP") + "," +
                             (cell.evidential ? "+ERL" : "-ERL");
    csv << '"' << name << '"' << ',' << (cell.markov ? 1 : 0) << ','
        << (cell.evidential ? 1 : 0) << ',' << cell.report.cls_mean.accuracy << ','
        << cell.report.cls_std.accuracy << ',' << cell.report.cls_mean.f1_macro << ','
        << cell.report.cls_std.f1_macro << '\n';
    ordered_json row;
    row["cell"] = name;
    row["accuracy_mean"] = cell.report.cls_mean.accuracy;
    row["f1_macro_mean"] = cell.report.cls_mean.f1_macro;
    j.push_back(row);
  }
  write_text(cfg.out_dir + "/ablation.csv", csv.str());
  write_text(cfg.out_dir + "/ablation.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  std::cout << "artifacts in " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-graph entity classification with a Markov-halting relational GCN"};
  app.require_subcommand(1);

  Overrides over;
  std::string archive, degrees_csv, checkpoint, split = "test";

  CLI::App* prepare = app.add_subcommand("prepare", "fetch, verify, and cache a dataset");
  OverrideFlags prepare_flags(prepare, over);
  prepare->add_option("--archive", archive, "use a local archive instead of downloading");

  CLI::App* stats = app.add_subcommand("stats", "print dataset statistics");
  OverrideFlags stats_flags(stats, over);
  stats->add_option("--degrees", degrees_csv, "write the degree histogram CSV here");

  CLI::App* train = app.add_subcommand("train", "train and evaluate over repeated seeds");
  OverrideFlags train_flags(train, over);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  OverrideFlags eval_flags(eval, over);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "train | valid | test");

  CLI::App* sweep = app.add_subcommand("sweep-lambda", "learning curves per prior rate");
  OverrideFlags sweep_flags(sweep, over);
  sweep->add_option_function<std::string>(
      "--values", [&over](const std::string& v) { over.kv["sweep_values"] = v; },
      "comma-separated prior rates in (0,1]");

  CLI::App* ablation = app.add_subcommand("ablate", "run the 2x2 component grid");
  OverrideFlags ablation_flags(ablation, over);

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed()) return cmd_prepare(resolve_config(prepare_flags.config_path(), over), archive);
    if (stats->parsed()) return cmd_stats(resolve_config(stats_flags.config_path(), over), degrees_csv);
    if (train->parsed()) return cmd_train(resolve_config(train_flags.config_path(), over));
    if (eval->parsed()) return cmd_eval(resolve_config(eval_flags.config_path(), over), checkpoint, split);
    if (sweep->parsed()) return cmd_sweep(resolve_config(sweep_flags.config_path(), over));
    if (ablation->parsed()) return cmd_ablate(resolve_config(ablation_flags.config_path(), over));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
