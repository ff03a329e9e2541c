#include "mperl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mperl/error.hpp"
#include "mperl/synthetic.hpp"

namespace fs = std::filesystem;

namespace mperl {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

struct Parser {
  const std::map<std::string, std::string>& kv;
  std::vector<std::string>& errors;
  std::vector<std::string> consumed;

  const std::string* get(const std::string& key) {
    consumed.push_back(key);
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  }

  void str(const std::string& key, std::string& out) {
    if (const std::string* v = get(key)) out = *v;
  }

  void choice(const std::string& key, std::string& out, std::vector<std::string> allowed) {
    if (const std::string* v = get(key)) {
      for (const std::string& a : allowed) {
        if (*v == a) {
          out = *v;
          return;
        }
      }
      std::string opts;
      for (const std::string& a : allowed) opts += (opts.empty() ? "" : "|") + a;
      errors.push_back(key + ": must be one of " + opts);
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (const std::string* v = get(key)) {
      if (*v == "true" || *v == "1") {
        out = true;
      } else if (*v == "false" || *v == "0") {
        out = false;
      } else {
        errors.push_back(key + ": must be true|false");
      }
    }
  }

  void size(const std::string& key, std::size_t& out, std::size_t lo, std::size_t hi,
            const std::string& range) {
    if (const std::string* v = get(key)) {
      std::size_t parsed = 0;
      auto res = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (res.ec != std::errc() || res.ptr != v->data() + v->size() || parsed < lo ||
          parsed > hi) {
        errors.push_back(key + ": must be " + range);
        return;
      }
      out = parsed;
    }
  }

  void u64(const std::string& key, std::uint64_t& out) {
    if (const std::string* v = get(key)) {
      std::uint64_t parsed = 0;
      auto res = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (res.ec != std::errc() || res.ptr != v->data() + v->size()) {
        errors.push_back(key + ": must be a non-negative integer");
        return;
      }
      out = parsed;
    }
  }

  void real(const std::string& key, double& out, double lo, double hi, bool lo_open,
            const std::string& range) {
    if (const std::string* v = get(key)) {
      double parsed = 0;
      auto res = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (res.ec != std::errc() || res.ptr != v->data() + v->size() ||
          (lo_open ? !(parsed > lo) : !(parsed >= lo)) || parsed > hi) {
        errors.push_back(key + ": must be " + range);
        return;
      }
      out = parsed;
    }
  }
};

}  // namespace

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(lineno, "expected key = value");
    }
    auto trim = [](std::string s) {
      std::size_t a = s.find_first_not_of(" \t");
      std::size_t b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

RunConfig parse_config(const std::map<std::string, std::string>& kv,
                       std::vector<std::string>& errors) {
  RunConfig cfg;
  if (const char* env = std::getenv("MPERL_DATA")) cfg.data_root = env;

  Parser p{kv, errors, {}};
  p.str("dataset", cfg.dataset);
  p.str("data_root", cfg.data_root);
  p.str("out_dir", cfg.out_dir);
  p.choice("task", cfg.task, {"single", "multi"});
  p.choice("checkpoints", cfg.checkpoints, {"first", "all", "none"});
  p.size("repeats", cfg.repeats, 1, 1000000, ">= 1");
  p.size("jobs", cfg.jobs, 1, 4096, ">= 1");
  p.boolean("include_inverse", cfg.include_inverse);
  p.boolean("type_augment", cfg.type_augment);
  p.str("triples_path", cfg.triples_path);
  p.str("labels_path", cfg.labels_path);
  if (const std::string* v = p.get("target_relations")) cfg.target_relations = split_csv(*v);
  if (const std::string* v = p.get("sweep_values")) {
    cfg.sweep_values.clear();
    for (const std::string& tok : split_csv(*v)) {
      double d = 0;
      auto res = std::from_chars(tok.data(), tok.data() + tok.size(), d);
      if (res.ec != std::errc() || !(d > 0.0) || d > 1.0) {
        errors.push_back("sweep_values: each value must be in (0,1]");
        break;
      }
      cfg.sweep_values.push_back(d);
    }
  }

  p.u64("seed", cfg.train.seed);
  p.size("epochs", cfg.train.epochs, 1, 1000000, ">= 1");
  p.real("lr", cfg.train.lr, 0.0, 1e9, true, "> 0");
  p.real("weight_decay", cfg.train.weight_decay, 0.0, 1e9, false, ">= 0");
  p.real("lambda_p", cfg.train.hp.lambda_p, 0.0, 1.0, true, "in (0,1]");
  p.real("beta", cfg.train.loss.beta, 0.0, 1e9, false, ">= 0");
  p.size("max_steps", cfg.train.hp.max_steps, 0, 1000, "in [0,1000] (0 = derived)");
  p.size("hidden", cfg.train.hp.hidden, 1, 100000, ">= 1");
  p.size("last_hidden", cfg.train.hp.last_hidden, 0, 100000, ">= 0 (0 = class count)");
  p.size("layers", cfg.train.hp.num_layers, 1, 16, "in [1,16]");
  p.size("bases", cfg.train.hp.num_bases, 0, 100000, ">= 0 (0 = derived)");
  p.size("anneal_horizon", cfg.train.loss.anneal_horizon, 1, 1000000, ">= 1");
  p.size("batch_size", cfg.train.batch_size, 0, 1000000, ">= 0 (0 = full batch)");
  p.size("fanout", cfg.train.fanout, 0, 1000000, ">= 0 (0 = full neighborhoods)");

  std::string loss_kind = "evidential", geo = "paper";
  p.choice("loss", loss_kind, {"evidential", "cross_entropy"});
  p.choice("geometric_kl", geo, {"paper", "textbook"});
  cfg.train.loss.kind =
      loss_kind == "cross_entropy" ? LossKind::CrossEntropy : LossKind::Evidential;
  cfg.train.loss.geo_form =
      geo == "textbook" ? GeometricKlForm::Textbook : GeometricKlForm::Paper;

  for (const auto& [key, value] : kv) {
    if (std::find(p.consumed.begin(), p.consumed.end(), key) == p.consumed.end()) {
      errors.push_back(key + ": unknown key");
    }
  }

  if (cfg.dataset.empty()) {
    if (cfg.triples_path.empty() || cfg.labels_path.empty()) {
      errors.push_back("dataset: required (a registry name, or triples_path + labels_path)");
    } else {
      cfg.dataset = "custom";
    }
  }

  cfg.train.loss.lambda_p = cfg.train.hp.lambda_p;
  if (auto info = find_dataset(cfg.dataset)) {
    cfg.task = info->mode == TaskMode::MultiLabel ? "multi" : "single";
    if (!kv.count("type_augment")) cfg.type_augment = info->type_augment;
    if (!kv.count("fanout")) cfg.train.fanout = info->suggested_fanout;
    if (!kv.count("max_steps") && info->suggested_max_steps > 0) {
      cfg.train.hp.max_steps = info->suggested_max_steps;
    }
    if (!kv.count("batch_size")) cfg.train.batch_size = info->suggested_batch;
  }
  return cfg;
}

RunConfig load_config(const std::string& path, std::vector<std::string>& errors) {
  return parse_config(read_kv_file(path), errors);
}

std::string render_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "dataset = " << cfg.dataset << '\n';
  out << "data_root = " << cfg.data_root << '\n';
  out << "out_dir = " << cfg.out_dir << '\n';
  out << "task = " << cfg.task << '\n';
  out << "checkpoints = " << cfg.checkpoints << '\n';
  out << "repeats = " << cfg.repeats << '\n';
  out << "jobs = " << cfg.jobs << '\n';
  out << "include_inverse = " << (cfg.include_inverse ? "true" : "false") << '\n';
  out << "type_augment = " << (cfg.type_augment ? "true" : "false") << '\n';
  if (!cfg.triples_path.empty()) out << "triples_path = " << cfg.triples_path << '\n';
  if (!cfg.labels_path.empty()) out << "labels_path = " << cfg.labels_path << '\n';
  if (!cfg.target_relations.empty()) {
    out << "target_relations = ";
    for (std::size_t i = 0; i < cfg.target_relations.size(); ++i) {
      out << (i ? "," : "") << cfg.target_relations[i];
    }
    out << '\n';
  }
  out << "sweep_values = ";
  for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
    out << (i ? "," : "") << fmt_double(cfg.sweep_values[i]);
  }
  out << '\n';
  out << "seed = " << cfg.train.seed << '\n';
  out << "epochs = " << cfg.train.epochs << '\n';
  out << "lr = " << fmt_double(cfg.train.lr) << '\n';
  out << "weight_decay = " << fmt_double(cfg.train.weight_decay) << '\n';
  out << "lambda_p = " << fmt_double(cfg.train.hp.lambda_p) << '\n';
  out << "beta = " << fmt_double(cfg.train.loss.beta) << '\n';
  out << "max_steps = " << cfg.train.hp.max_steps << '\n';
  out << "hidden = " << cfg.train.hp.hidden << '\n';
  out << "last_hidden = " << cfg.train.hp.last_hidden << '\n';
  out << "layers = " << cfg.train.hp.num_layers << '\n';
  out << "bases = " << cfg.train.hp.num_bases << '\n';
  out << "anneal_horizon = " << cfg.train.loss.anneal_horizon << '\n';
  out << "batch_size = " << cfg.train.batch_size << '\n';
  out << "fanout = " << cfg.train.fanout << '\n';
  out << "loss = "
      << (cfg.train.loss.kind == LossKind::CrossEntropy ? "cross_entropy" : "evidential")
      << '\n';
  out << "geometric_kl = "
      << (cfg.train.loss.geo_form == GeometricKlForm::Textbook ? "textbook" : "paper") << '\n';
  return out.str();
}

const std::vector<DatasetInfo>& dataset_registry() {
  static const std::vector<DatasetInfo> registry = [] {
    std::vector<DatasetInfo> r;
    DatasetInfo aifb;
    aifb.name = "aifb";
    aifb.archive_url = "https://data.dgl.ai/dataset/aifb.tgz";
    aifb.triples_file = "aifb_stripped.nt.gz";
    aifb.target_relations = {"http://swrc.ontoware.org/ontology#employs",
                             "http://swrc.ontoware.org/ontology#affiliation"};
    aifb.raw_task_files = {{"trainingSet.tsv", Split::Train}, {"testSet.tsv", Split::Test}};
    aifb.raw_entity_column = "person";
    aifb.raw_label_column = "label_affiliation";
    r.push_back(aifb);

    DatasetInfo mutag;
    mutag.name = "mutag";
    mutag.archive_url = "https://data.dgl.ai/dataset/mutag.tgz";
    mutag.triples_file = "mutag_stripped.nt.gz";
    mutag.target_relations = {"http://dl-learner.org/carcinogenesis#isMutagenic"};
    mutag.raw_task_files = {{"trainingSet.tsv", Split::Train}, {"testSet.tsv", Split::Test}};
    mutag.raw_entity_column = "bond";
    mutag.raw_label_column = "label_mutagenic";
    r.push_back(mutag);

    DatasetInfo bgs;
    bgs.name = "bgs";
    bgs.archive_url = "https://data.dgl.ai/dataset/bgs.tgz";
    bgs.triples_file = "bgs_stripped.nt.gz";
    bgs.target_relations = {"http://data.bgs.ac.uk/ref/Lexicon/hasLithogenesis"};
    bgs.raw_task_files = {{"trainingSet.tsv", Split::Train}, {"testSet.tsv", Split::Test}};
    bgs.raw_entity_column = "rock";
    bgs.raw_label_column = "label_lithogenesis";
    bgs.suggested_fanout = 32;
    r.push_back(bgs);

    DatasetInfo am;
    am.name = "am";
    am.archive_url = "https://data.dgl.ai/dataset/am.tgz";
    am.triples_file = "am_stripped.nt.gz";
    am.target_relations = {"http://purl.org/collections/nl/am/objectCategory",
                           "http://purl.org/collections/nl/am/material"};
    am.raw_task_files = {{"trainingSet.tsv", Split::Train}, {"testSet.tsv", Split::Test}};
    am.raw_entity_column = "proxy";
    am.raw_label_column = "label_cateogory";  // header typo is part of the dump
    am.suggested_fanout = 32;
    r.push_back(am);

    DatasetInfo fb;
    fb.name = "fb15ket";
    fb.archive_url = "";  // distributed with the entity-typing benchmarks; see README
    fb.triples_file = "freebase_mtr100_mte100-train.txt";
    fb.mode = TaskMode::MultiLabel;
    fb.type_augment = true;
    fb.suggested_fanout = 10;
    fb.suggested_max_steps = 2;
    fb.suggested_batch = 16;
    fb.raw_task_files = {{"FB15k_Entity_Type_train.txt", Split::Train},
                         {"FB15k_Entity_Type_valid.txt", Split::Valid},
                         {"FB15k_Entity_Type_test.txt", Split::Test}};
    r.push_back(fb);

    DatasetInfo yago;
    yago.name = "yago43ket";
    yago.archive_url = "";
    yago.triples_file = "yago_train.txt";
    yago.mode = TaskMode::MultiLabel;
    yago.type_augment = true;
    yago.suggested_fanout = 10;
    yago.suggested_max_steps = 2;
    yago.suggested_batch = 16;
    yago.raw_task_files = {{"YAGO43k_Entity_Type_train.txt", Split::Train},
                           {"YAGO43k_Entity_Type_valid.txt", Split::Valid},
                           {"YAGO43k_Entity_Type_test.txt", Split::Test}};
    r.push_back(yago);
    return r;
  }();
  return registry;
}

std::optional<DatasetInfo> find_dataset(const std::string& name) {
  for (const DatasetInfo& d : dataset_registry()) {
    if (d.name == name) return d;
  }
  return std::nullopt;
}

bool is_synthetic_dataset(const std::string& name) {
  return name == "synthetic" || name == "synthetic-multi";
}

std::string effective_data_root(const RunConfig& cfg) { return cfg.data_root; }

namespace {

SyntheticSpec synthetic_spec_for(const std::string& name) {
  SyntheticSpec spec;
  if (name == "synthetic") {
    spec.classes = 4;
    spec.entities_per_class = 40;
    spec.attrs_per_class = 2;
    spec.attr_edge_prob = 0.85;
    spec.noise_edge_prob = 0.15;
    spec.test_fraction = 0.3;
    spec.seed = 20240601;
  } else {
    spec.classes = 6;
    spec.entities_per_class = 30;
    spec.mode = TaskMode::MultiLabel;
    spec.test_fraction = 0.2;
    spec.valid_fraction = 0.1;
    spec.extra_type_prob = 0.5;
    spec.seed = 20240602;
  }
  return spec;
}

std::vector<RawTriple> parse_triples_any(const std::string& path) {
  const bool tsv = path.ends_with(".txt") || path.ends_with(".tsv") ||
                   path.ends_with(".txt.gz") || path.ends_with(".tsv.gz");
  return tsv ? parse_triples_tsv_file(path) : parse_ntriples_file(path);
}

}  // namespace

std::size_t convert_raw_labels(const DatasetInfo& info, const std::string& dataset_dir,
                               const std::string& out_labels_path) {
  std::vector<LabelRow> rows;
  const bool header_mode = !info.raw_entity_column.empty();
  for (const RawTaskFile& task : info.raw_task_files) {
    const std::string path = dataset_dir + "/" + task.file;
    if (!fs::exists(path)) {
      throw IngestError("missing raw task file " + path);
    }
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t lineno = 0;
    std::size_t ent_col = 0, lab_col = 1;
    bool saw_header = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cols;
      std::size_t start = 0;
      while (true) {
        std::size_t tab = line.find('\t', start);
        cols.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (header_mode && !saw_header) {
        saw_header = true;
        bool found_ent = false, found_lab = false;
        for (std::size_t c = 0; c < cols.size(); ++c) {
          if (cols[c] == info.raw_entity_column) {
            ent_col = c;
            found_ent = true;
          }
          if (cols[c] == info.raw_label_column) {
            lab_col = c;
            found_lab = true;
          }
        }
        if (!found_ent || !found_lab) {
          throw IngestError(task.file + ": expected columns '" + info.raw_entity_column +
                            "' and '" + info.raw_label_column + "'");
        }
        continue;
      }
      if (cols.size() <= std::max(ent_col, lab_col)) {
        throw ParseError(lineno, task.file + ": too few columns");
      }
      rows.push_back({cols[ent_col], cols[lab_col], task.split});
    }
  }
  std::ofstream out(out_labels_path);
  if (!out) throw IngestError("cannot write " + out_labels_path);
  for (const LabelRow& row : rows) {
    out << row.entity << '\t' << row.label << '\t' << split_name(row.split) << '\n';
  }
  return rows.size();
}

KnowledgeGraph load_dataset(const RunConfig& cfg) {
  if (is_synthetic_dataset(cfg.dataset)) {
    KnowledgeGraph kg = synthetic_graph(synthetic_spec_for(cfg.dataset));
    if (kg.mode == TaskMode::MultiLabel && cfg.type_augment) augment_type_triples(kg);
    return kg;
  }

  const std::string root = effective_data_root(cfg);
  std::optional<DatasetInfo> info = find_dataset(cfg.dataset);
  if (!info && cfg.dataset != "custom") {
    throw ConfigError("dataset: unknown name '" + cfg.dataset +
                      "' (and no custom triples_path/labels_path given)");
  }

  std::string triples_path, labels_path;
  DatasetSpec spec;
  spec.name = cfg.dataset;
  spec.mode = cfg.mode();
  if (info) {
    const std::string dir = root + "/" + info->name;
    const std::string cache = dir + "/graph.cache";
    if (fs::exists(cache)) return load_graph(cache);
    triples_path = dir + "/" + info->triples_file;
    labels_path = dir + "/labels.tsv";
    spec.mode = info->mode;
    spec.target_relations = info->target_relations;
    if (!fs::exists(triples_path)) {
      throw IngestError("dataset file not found: " + triples_path +
                        " (run `mperl prepare --dataset " + cfg.dataset +
                        "` or place the benchmark files there)");
    }
    if (!fs::exists(labels_path) && !info->raw_task_files.empty()) {
      convert_raw_labels(*info, dir, labels_path);
    }
  } else {
    triples_path = cfg.triples_path;
    labels_path = cfg.labels_path;
    spec.target_relations = cfg.target_relations;
  }
  if (!fs::exists(triples_path)) {
    throw IngestError("dataset file not found: " + triples_path);
  }
  KnowledgeGraph kg =
      build_graph(parse_triples_any(triples_path), read_label_tsv(labels_path), spec);
  if (kg.mode == TaskMode::MultiLabel && cfg.type_augment) augment_type_triples(kg);
  if (info) {
    save_graph(kg, root + "/" + info->name + "/graph.cache");
  }
  return kg;
}

}  // namespace mperl
