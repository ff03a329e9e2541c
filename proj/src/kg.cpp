#include "mperl/kg.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mperl/error.hpp"

namespace mperl {

namespace {

std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& index,
                     std::vector<std::string>& names, const std::string& key) {
  auto [it, inserted] = index.try_emplace(key, static_cast<std::uint32_t>(names.size()));
  if (inserted) names.push_back(key);
  return it->second;
}

// --- little-endian binary cache helpers ---

void put_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& in) {
  std::string s(get_u64(in), '\0');
  in.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

void put_names(std::ostream& out, const std::vector<std::string>& names) {
  put_u64(out, names.size());
  for (const std::string& s : names) put_str(out, s);
}

std::vector<std::string> get_names(std::istream& in) {
  std::vector<std::string> names(get_u64(in));
  for (std::string& s : names) s = get_str(in);
  return names;
}

constexpr char kMagic[8] = {'M', 'P', 'K', 'G', '0', '0', '0', '1'};

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "valid" || name == "validation" || name == "dev") return Split::Valid;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split tag '" + name + "' (expected train|valid|test)");
}

std::vector<std::size_t> KnowledgeGraph::rows_of(Split split) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].split == split) rows.push_back(i);
  }
  return rows;
}

std::size_t KnowledgeGraph::assertion_count() const {
  std::size_t n = 0;
  for (const LabeledEntity& l : labeled) n += l.classes.size();
  return n;
}

bool KnowledgeGraph::operator==(const KnowledgeGraph& other) const {
  return entity_names == other.entity_names && relation_names == other.relation_names &&
         class_names == other.class_names && triples == other.triples &&
         labeled == other.labeled && parsed_triples == other.parsed_triples &&
         mode == other.mode;
}

std::vector<LabelRow> read_label_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open label file " + path);
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw ParseError(lineno, "expected 3 tab-separated columns (entity, class, split)");
    }
    rows.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1),
                    split_from_name(line.substr(t2 + 1))});
  }
  return rows;
}

KnowledgeGraph build_graph(const std::vector<RawTriple>& triples,
                           const std::vector<LabelRow>& labels, const DatasetSpec& spec) {
  KnowledgeGraph kg;
  kg.mode = spec.mode;
  kg.parsed_triples = triples.size();

  const std::set<std::string> targets(spec.target_relations.begin(),
                                      spec.target_relations.end());

  // Dictionaries cover every parsed statement so reported dataset
  // statistics describe the raw dump; the kept triple list excludes the
  // label-bearing relations.
  for (const RawTriple& t : triples) {
    std::uint32_t s = intern(kg.entity_index, kg.entity_names, t.subject.text);
    std::uint32_t r = intern(kg.relation_index, kg.relation_names, t.predicate.text);
    std::uint32_t o = intern(kg.entity_index, kg.entity_names, t.object.text);
    if (!targets.count(t.predicate.text)) kg.triples.push_back({s, r, o});
  }

  // Class dictionary sorted for index stability against label-file order.
  std::set<std::string> class_set;
  for (const LabelRow& row : labels) class_set.insert(row.label);
  for (const std::string& c : class_set) intern(kg.class_index, kg.class_names, c);
  if (kg.num_classes() < 2) {
    throw IngestError(spec.name + ": found " + std::to_string(kg.num_classes()) +
                      " classes; at least 2 required");
  }

  std::map<std::pair<std::uint32_t, std::uint8_t>, std::size_t> row_of;
  for (const LabelRow& row : labels) {
    auto eit = kg.entity_index.find(row.entity);
    if (eit == kg.entity_index.end()) {
      throw IngestError("labeled entity not present in graph: " + row.entity);
    }
    const std::uint32_t cls = kg.class_index.at(row.label);
    const auto key = std::make_pair(eit->second, static_cast<std::uint8_t>(row.split));
    auto [it, inserted] = row_of.try_emplace(key, kg.labeled.size());
    if (inserted) {
      kg.labeled.push_back({eit->second, {cls}, row.split});
    } else {
      std::vector<std::uint32_t>& classes = kg.labeled[it->second].classes;
      if (std::find(classes.begin(), classes.end(), cls) == classes.end()) {
        classes.push_back(cls);
      }
    }
  }

  if (spec.mode == TaskMode::SingleLabel) {
    std::set<std::uint32_t> seen;
    for (const LabeledEntity& l : kg.labeled) {
      if (l.classes.size() != 1) {
        throw IngestError("single-label dataset but entity " + kg.entity_names[l.entity] +
                          " carries " + std::to_string(l.classes.size()) + " classes");
      }
      if (!seen.insert(l.entity).second) {
        throw IngestError("entity appears in more than one split: " +
                          kg.entity_names[l.entity]);
      }
    }
  }
  return kg;
}

std::size_t augment_type_triples(KnowledgeGraph& kg, const std::string& relation_name) {
  if (kg.mode != TaskMode::MultiLabel) {
    throw ContractError("type-triple augmentation requires multi-label mode");
  }
  const std::uint32_t rel = intern(kg.relation_index, kg.relation_names, relation_name);
  std::size_t added = 0;
  for (const LabeledEntity& l : kg.labeled) {
    if (l.split != Split::Train) continue;  // never leak valid/test assertions
    for (std::uint32_t cls : l.classes) {
      const std::uint32_t type_entity =
          intern(kg.entity_index, kg.entity_names, kg.class_names[cls]);
      kg.triples.push_back({l.entity, rel, type_entity});
      ++added;
    }
  }
  return added;
}

std::map<std::size_t, std::size_t> degree_histogram(const KnowledgeGraph& kg) {
  std::vector<std::size_t> degree(kg.num_entities(), 0);
  for (const Triple& t : kg.triples) {
    ++degree[t.subject];
    ++degree[t.object];
  }
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t d : degree) ++hist[d];
  return hist;
}

void save_graph(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write graph cache " + path);
  out.write(kMagic, sizeof(kMagic));
  put_names(out, kg.entity_names);
  put_names(out, kg.relation_names);
  put_names(out, kg.class_names);
  put_u64(out, kg.triples.size());
  for (const Triple& t : kg.triples) {
    put_u64(out, t.subject);
    put_u64(out, t.relation);
    put_u64(out, t.object);
  }
  put_u64(out, kg.labeled.size());
  for (const LabeledEntity& l : kg.labeled) {
    put_u64(out, l.entity);
    put_u64(out, static_cast<std::uint64_t>(l.split));
    put_u64(out, l.classes.size());
    for (std::uint32_t c : l.classes) put_u64(out, c);
  }
  put_u64(out, kg.parsed_triples);
  put_u64(out, static_cast<std::uint64_t>(kg.mode));
  if (!out) throw IngestError("write failure on " + path);
}

KnowledgeGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open graph cache " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw IngestError("bad graph cache header in " + path);
  }
  KnowledgeGraph kg;
  kg.entity_names = get_names(in);
  kg.relation_names = get_names(in);
  kg.class_names = get_names(in);
  for (std::uint32_t i = 0; i < kg.entity_names.size(); ++i) {
    kg.entity_index.emplace(kg.entity_names[i], i);
  }
  for (std::uint32_t i = 0; i < kg.relation_names.size(); ++i) {
    kg.relation_index.emplace(kg.relation_names[i], i);
  }
  for (std::uint32_t i = 0; i < kg.class_names.size(); ++i) {
    kg.class_index.emplace(kg.class_names[i], i);
  }
  kg.triples.resize(get_u64(in));
  for (Triple& t : kg.triples) {
    t.subject = static_cast<std::uint32_t>(get_u64(in));
    t.relation = static_cast<std::uint32_t>(get_u64(in));
    t.object = static_cast<std::uint32_t>(get_u64(in));
  }
  kg.labeled.resize(get_u64(in));
  for (LabeledEntity& l : kg.labeled) {
    l.entity = static_cast<std::uint32_t>(get_u64(in));
    l.split = static_cast<Split>(get_u64(in));
    l.classes.resize(get_u64(in));
    for (std::uint32_t& c : l.classes) c = static_cast<std::uint32_t>(get_u64(in));
  }
  kg.parsed_triples = get_u64(in);
  kg.mode = static_cast<TaskMode>(get_u64(in));
  if (!in) throw IngestError("truncated graph cache " + path);
  return kg;
}

DatasetStats compute_stats(const KnowledgeGraph& kg, const std::string& name) {
  DatasetStats s;
  s.name = name;
  s.entities = kg.num_entities();
  s.relations = kg.num_relations();
  s.triples = kg.parsed_triples;
  s.kept_triples = kg.triples.size();
  s.labeled = kg.assertion_count();
  s.classes = kg.num_classes();
  return s;
}

std::string stats_to_json(const DatasetStats& s) {
  nlohmann::ordered_json j;
  j["dataset"] = s.name;
  j["entities"] = s.entities;
  j["relations"] = s.relations;
  j["triples"] = s.triples;
  j["kept_triples"] = s.kept_triples;
  j["labeled"] = s.labeled;
  j["classes"] = s.classes;
  return j.dump(2);
}

}  // namespace mperl
