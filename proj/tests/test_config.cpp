#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mperl/config.hpp"
#include "mperl/error.hpp"
#include "mperl/synthetic.hpp"

using namespace mperl;
namespace fs = std::filesystem;

namespace {

RunConfig parse_ok(const std::map<std::string, std::string>& kv) {
  std::vector<std::string> errors;
  RunConfig cfg = parse_config(kv, errors);
  for (const std::string& e : errors) INFO(e);
  REQUIRE(errors.empty());
  return cfg;
}

}  // namespace

TEST_CASE("defaults follow the recommended settings") {
  RunConfig cfg = parse_ok({{"dataset", "aifb"}});
  CHECK(cfg.train.hp.lambda_p == 0.2);
  CHECK(cfg.train.loss.beta == 0.01);
  CHECK(cfg.train.loss.anneal_horizon == 10);
  CHECK(cfg.repeats == 10);
  CHECK(cfg.train.epochs == 100);
  CHECK(cfg.task == "single");
  CHECK(cfg.train.loss.lambda_p == cfg.train.hp.lambda_p);
}

TEST_CASE("violations are collected with key names and ranges") {
  std::vector<std::string> errors;
  parse_config({{"dataset", "aifb"}, {"lambda_p", "0"}, {"beta", "-1"}, {"epochs", "0"}},
               errors);
  REQUIRE(errors.size() == 3);
  bool saw_lambda = false;
  for (const std::string& e : errors) {
    if (e.find("lambda_p") != std::string::npos) {
      saw_lambda = true;
      CHECK(e.find("(0,1]") != std::string::npos);
    }
  }
  CHECK(saw_lambda);

  errors.clear();
  parse_config({}, errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].substr(0, 7) == "dataset");

  errors.clear();
  parse_config({{"dataset", "aifb"}, {"no_such_key", "1"}}, errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("no_such_key") != std::string::npos);
}

TEST_CASE("flag-style overrides and file round-trip") {
  const std::string path = "test_tmp_config.cfg";
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "dataset = synthetic\n";
    out << "lambda_p = 0.5\n";
    out << "epochs = 17\n";
  }
  std::vector<std::string> errors;
  RunConfig cfg = load_config(path, errors);
  REQUIRE(errors.empty());
  CHECK(cfg.train.hp.lambda_p == 0.5);
  CHECK(cfg.train.epochs == 17);

  // the rendered snapshot reparses to the same effective configuration
  const std::string snapshot = "test_tmp_config2.cfg";
  {
    std::ofstream out(snapshot);
    out << render_config(cfg);
  }
  RunConfig back = load_config(snapshot, errors);
  REQUIRE(errors.empty());
  CHECK(render_config(back) == render_config(cfg));
  std::remove(path.c_str());
  std::remove(snapshot.c_str());
}

TEST_CASE("registry entries carry the benchmark recipes") {
  auto aifb = find_dataset("aifb");
  REQUIRE(aifb.has_value());
  CHECK(aifb->target_relations.size() == 2);
  CHECK(aifb->mode == TaskMode::SingleLabel);

  auto fb = find_dataset("fb15ket");
  REQUIRE(fb.has_value());
  CHECK(fb->mode == TaskMode::MultiLabel);
  CHECK(fb->suggested_max_steps == 2);
  CHECK(fb->suggested_batch == 16);
  CHECK(fb->suggested_fanout == 10);

  RunConfig cfg = parse_ok({{"dataset", "fb15ket"}});
  CHECK(cfg.task == "multi");
  CHECK(cfg.type_augment);
  CHECK(cfg.train.hp.max_steps == 2);
  CHECK(cfg.train.batch_size == 16);

  CHECK(!find_dataset("nope").has_value());
}

TEST_CASE("synthetic datasets load hermetically") {
  RunConfig cfg = parse_ok({{"dataset", "synthetic"}});
  KnowledgeGraph kg = load_dataset(cfg);
  CHECK(kg.num_classes() == 4);
  CHECK(kg.mode == TaskMode::SingleLabel);
  CHECK(!kg.rows_of(Split::Train).empty());
  CHECK(!kg.rows_of(Split::Test).empty());
  // stripping removed the affiliation statements
  for (const Triple& t : kg.triples) {
    CHECK(kg.relation_names[t.relation] != "syn:affiliation");
  }
  KnowledgeGraph again = load_dataset(cfg);
  CHECK(again == kg);
}

TEST_CASE("custom datasets load from explicit paths") {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.entities_per_class = 8;
  spec.seed = 5;
  SyntheticData data = make_synthetic(spec);
  write_synthetic_files(data, "test_tmp_custom.nt", "test_tmp_custom.tsv");

  RunConfig cfg = parse_ok({{"triples_path", "test_tmp_custom.nt"},
                            {"labels_path", "test_tmp_custom.tsv"},
                            {"target_relations", "syn:affiliation"}});
  CHECK(cfg.dataset == "custom");
  KnowledgeGraph kg = load_dataset(cfg);
  CHECK(kg.num_classes() == 2);
  for (const Triple& t : kg.triples) {
    CHECK(kg.relation_names[t.relation] != "syn:affiliation");
  }
  std::remove("test_tmp_custom.nt");
  std::remove("test_tmp_custom.tsv");
}

TEST_CASE("registry ingestion converts raw task files and caches the graph") {
  // stage a miniature benchmark in the aifb layout
  const std::string root = "test_tmp_root";
  const std::string dir = root + "/aifb";
  fs::create_directories(dir);
  {
    // plain text behind a .gz name: the reader inflates only real gzip
    std::ofstream out(dir + "/aifb_stripped.nt.gz");
    out << "<http://p1> <http://knows> <http://p2> .\n";
    out << "<http://p2> <http://knows> <http://p3> .\n";
    out << "<http://p3> <http://knows> <http://p1> .\n";
  }
  {
    std::ofstream out(dir + "/trainingSet.tsv");
    out << "id\tperson\tlabel_affiliation\n";
    out << "1\thttp://p1\thttp://g1\n";
    out << "2\thttp://p2\thttp://g2\n";
  }
  {
    std::ofstream out(dir + "/testSet.tsv");
    out << "id\tperson\tlabel_affiliation\n";
    out << "3\thttp://p3\thttp://g1\n";
  }
  RunConfig cfg = parse_ok({{"dataset", "aifb"}, {"data_root", root}});
  KnowledgeGraph kg = load_dataset(cfg);
  CHECK(kg.num_entities() == 3);
  CHECK(kg.num_classes() == 2);
  CHECK(kg.rows_of(Split::Train).size() == 2);
  CHECK(kg.rows_of(Split::Test).size() == 1);
  CHECK(fs::exists(dir + "/labels.tsv"));
  CHECK(fs::exists(dir + "/graph.cache"));
  KnowledgeGraph cached = load_dataset(cfg);
  CHECK(cached == kg);
  fs::remove_all(root);
}

TEST_CASE("missing dataset files point at prepare") {
  RunConfig cfg = parse_ok({{"dataset", "mutag"}, {"data_root", "test_tmp_nowhere"}});
  try {
    load_dataset(cfg);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("prepare") != std::string::npos);
  }
}
