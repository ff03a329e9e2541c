#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mperl/error.hpp"
#include "mperl/kg.hpp"

using namespace mperl;

namespace {

RawTriple iri_triple(const std::string& s, const std::string& p, const std::string& o) {
  return {{Term::Kind::Iri, s}, {Term::Kind::Iri, p}, {Term::Kind::Iri, o}};
}

// toy staff graph: persons linked to groups via employs, plus misc triples
std::vector<RawTriple> toy_triples() {
  return {
      iri_triple("p1", "employs", "g1"),
      iri_triple("p2", "employs", "g2"),
      iri_triple("p1", "knows", "p2"),
      iri_triple("p2", "knows", "p3"),
      iri_triple("p3", "worksAt", "g1"),
  };
}

std::vector<LabelRow> toy_labels() {
  return {
      {"p1", "g1", Split::Train},
      {"p2", "g2", Split::Train},
      {"p3", "g1", Split::Test},
  };
}

DatasetSpec toy_spec() {
  DatasetSpec spec;
  spec.name = "toy";
  spec.target_relations = {"employs"};
  return spec;
}

}  // namespace

TEST_CASE("target relations are stripped while dictionaries keep full counts") {
  KnowledgeGraph kg = build_graph(toy_triples(), toy_labels(), toy_spec());
  CHECK(kg.parsed_triples == 5);
  CHECK(kg.triples.size() == 3);
  for (const Triple& t : kg.triples) {
    CHECK(kg.relation_names[t.relation] != "employs");
  }
  // employs still counted as a relation of the raw dump
  CHECK(kg.num_relations() == 3);
  CHECK(kg.num_entities() == 5);  // p1 p2 p3 g1 g2
  CHECK(kg.num_classes() == 2);
}

TEST_CASE("labeled entity missing from the graph is an ingestion error") {
  auto labels = toy_labels();
  labels.push_back({"ghost", "g1", Split::Test});
  try {
    build_graph(toy_triples(), labels, toy_spec());
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}

TEST_CASE("single-label mode rejects multi-class and multi-split entities") {
  auto labels = toy_labels();
  labels.push_back({"p1", "g2", Split::Train});
  CHECK_THROWS_AS(build_graph(toy_triples(), labels, toy_spec()), IngestError);

  labels = toy_labels();
  labels.push_back({"p1", "g1", Split::Test});
  CHECK_THROWS_AS(build_graph(toy_triples(), labels, toy_spec()), IngestError);
}

TEST_CASE("fewer than two classes is rejected") {
  std::vector<LabelRow> labels = {{"p1", "g1", Split::Train}, {"p3", "g1", Split::Test}};
  CHECK_THROWS_AS(build_graph(toy_triples(), labels, toy_spec()), IngestError);
}

TEST_CASE("splits are disjoint and cover the labeled set") {
  KnowledgeGraph kg = build_graph(toy_triples(), toy_labels(), toy_spec());
  auto train = kg.rows_of(Split::Train);
  auto valid = kg.rows_of(Split::Valid);
  auto test = kg.rows_of(Split::Test);
  CHECK(train.size() + valid.size() + test.size() == kg.labeled.size());
  CHECK(train.size() == 2);
  CHECK(test.size() == 1);
}

TEST_CASE("type-triple augmentation adds train assertions only") {
  DatasetSpec spec = toy_spec();
  spec.mode = TaskMode::MultiLabel;
  std::vector<LabelRow> labels = {
      {"p1", "t1", Split::Train}, {"p1", "t2", Split::Train}, {"p1", "t3", Split::Train},
      {"p2", "t1", Split::Test},  {"p3", "t2", Split::Valid},
  };
  KnowledgeGraph kg = build_graph(toy_triples(), labels, spec);
  const std::size_t before = kg.triples.size();
  const std::size_t added = augment_type_triples(kg);
  CHECK(added == 3);  // p1's three training types
  CHECK(kg.triples.size() == before + 3);
  const std::uint32_t rel = kg.relation_index.at("mperl:hastype");
  std::size_t count = 0;
  for (const Triple& t : kg.triples) {
    if (t.relation == rel) {
      ++count;
      CHECK(t.subject == kg.entity_index.at("p1"));
    }
  }
  CHECK(count == 3);

  // empty training set leaves the graph unchanged
  std::vector<LabelRow> eval_only = {{"p2", "t1", Split::Test}, {"p3", "t2", Split::Valid}};
  KnowledgeGraph kg2 = build_graph(toy_triples(), eval_only, spec);
  const std::size_t before2 = kg2.triples.size();
  CHECK(augment_type_triples(kg2) == 0);
  CHECK(kg2.triples.size() == before2);
}

TEST_CASE("augmentation requires multi-label mode") {
  KnowledgeGraph kg = build_graph(toy_triples(), toy_labels(), toy_spec());
  CHECK_THROWS_AS(augment_type_triples(kg), ContractError);
}

TEST_CASE("degree histogram counts every entity") {
  // triangle plus one isolated entity (appears only via a stripped triple)
  std::vector<RawTriple> triples = {
      iri_triple("a", "r", "b"),     iri_triple("b", "r", "c"),
      iri_triple("c", "r", "a"),     iri_triple("iso", "employs", "a"),
      iri_triple("x1", "r2", "x2"),  // labels need two classes
  };
  std::vector<LabelRow> labels = {{"a", "c1", Split::Train}, {"b", "c2", Split::Test}};
  DatasetSpec spec = toy_spec();
  KnowledgeGraph kg = build_graph(triples, labels, spec);
  auto hist = degree_histogram(kg);
  CHECK(hist[2] == 3);  // the triangle
  CHECK(hist[0] == 1);  // iso
  CHECK(hist[1] == 2);  // x1, x2
  std::size_t total = 0;
  for (auto [d, c] : hist) total += c;
  CHECK(total == kg.num_entities());
}

TEST_CASE("graph cache round-trips exactly") {
  KnowledgeGraph kg = build_graph(toy_triples(), toy_labels(), toy_spec());
  const std::string path = "test_tmp_graph.bin";
  save_graph(kg, path);
  KnowledgeGraph back = load_graph(path);
  CHECK(back == kg);
  CHECK(back.entity_index.at("p2") == kg.entity_index.at("p2"));
  std::remove(path.c_str());
}

TEST_CASE("label tsv reader") {
  const std::string path = "test_tmp_labels.tsv";
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "http://e1\tC1\ttrain\n";
    out << "http://e2\tC2\ttest\n";
  }
  auto rows = read_label_tsv(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].entity == "http://e1");
  CHECK(rows[0].split == Split::Train);
  CHECK(rows[1].split == Split::Test);
  {
    std::ofstream out(path);
    out << "http://e1\tC1\tnowhere\n";
  }
  CHECK_THROWS_AS(read_label_tsv(path), ConfigError);
  {
    std::ofstream out(path);
    out << "just-one-column\n";
  }
  CHECK_THROWS_AS(read_label_tsv(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("dataset stats json shape") {
  KnowledgeGraph kg = build_graph(toy_triples(), toy_labels(), toy_spec());
  DatasetStats s = compute_stats(kg, "toy");
  CHECK(s.entities == 5);
  CHECK(s.relations == 3);
  CHECK(s.triples == 5);
  CHECK(s.kept_triples == 3);
  CHECK(s.labeled == 3);
  CHECK(s.classes == 2);
  std::string j = stats_to_json(s);
  CHECK(j.find("\"entities\": 5") != std::string::npos);
}
