#include "mperl/synthetic.hpp"

#include <fstream>

#include "mperl/error.hpp"
#include "mperl/rng.hpp"

namespace mperl {

namespace {

Term iri(std::string text) { return {Term::Kind::Iri, std::move(text)}; }

const char* kAffiliation = "syn:affiliation";
const char* kHasAttr = "syn:hasAttr";
const char* kLinked = "syn:linked";
const char* kNote = "syn:note";

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ConfigError("synthetic: classes must be >= 2");
  Rng rng(spec.seed);
  SyntheticData data;
  data.dataset.name = "synthetic";
  data.dataset.mode = spec.mode;
  data.dataset.target_relations = {kAffiliation};

  const std::size_t n = spec.classes * spec.entities_per_class;
  auto entity = [](std::size_t i) { return "syn:ent/" + std::to_string(i); };
  auto attr = [](std::size_t c, std::size_t a) {
    return "syn:attr/" + std::to_string(c) + "/" + std::to_string(a);
  };
  auto cls = [](std::size_t c) { return "syn:Class/" + std::to_string(c); };

  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % spec.classes;
    data.triples.push_back({iri(entity(i)), iri(kAffiliation), iri(cls(c))});
    for (std::size_t a = 0; a < spec.attrs_per_class; ++a) {
      if (rng.uniform() < spec.attr_edge_prob) {
        data.triples.push_back({iri(entity(i)), iri(kHasAttr), iri(attr(c, a))});
      }
    }
    if (rng.uniform() < spec.noise_edge_prob) {
      data.triples.push_back({iri(entity(i)), iri(kHasAttr),
                              iri(attr(rng.index(spec.classes), rng.index(spec.attrs_per_class)))});
    }
    // same-class link most of the time, otherwise a random one
    const std::size_t peer = rng.uniform() < 0.7
                                 ? (c + spec.classes * rng.index(spec.entities_per_class)) % n
                                 : rng.index(n);
    data.triples.push_back({iri(entity(i)), iri(kLinked), iri(entity(peer))});
    if (i % 5 == 0) {  // a few literal-valued statements
      data.triples.push_back({iri(entity(i)), iri(kNote),
                              {Term::Kind::Literal, "\"note " + std::to_string(i) + "\""}});
    }
  }

  if (spec.mode == TaskMode::SingleLabel) {
    const std::size_t stride =
        spec.test_fraction > 0.0
            ? std::max<std::size_t>(2, static_cast<std::size_t>(1.0 / spec.test_fraction))
            : n + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % spec.classes;
      const bool test = (i / spec.classes) % stride == stride - 1;
      data.labels.push_back({entity(i), cls(c), test ? Split::Test : Split::Train});
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> types = {i % spec.classes};
      if (rng.uniform() < spec.extra_type_prob) {
        types.push_back((i % spec.classes + 1 + rng.index(spec.classes - 1)) % spec.classes);
      }
      for (std::size_t t : types) {
        const double u = rng.uniform();
        Split split = Split::Train;
        if (u < spec.test_fraction) {
          split = Split::Test;
        } else if (u < spec.test_fraction + spec.valid_fraction) {
          split = Split::Valid;
        }
        data.labels.push_back({entity(i), cls(t), split});
      }
    }
  }
  return data;
}

KnowledgeGraph synthetic_graph(const SyntheticSpec& spec) {
  SyntheticData data = make_synthetic(spec);
  return build_graph(data.triples, data.labels, data.dataset);
}

void write_synthetic_files(const SyntheticData& data, const std::string& triples_path,
                           const std::string& labels_path) {
  std::ofstream tf(triples_path);
  if (!tf) throw IngestError("cannot write " + triples_path);
  auto render = [](const Term& t) {
    return t.kind == Term::Kind::Literal ? t.text : "<" + t.text + ">";
  };
  for (const RawTriple& t : data.triples) {
    tf << render(t.subject) << ' ' << render(t.predicate) << ' ' << render(t.object) << " .\n";
  }
  std::ofstream lf(labels_path);
  if (!lf) throw IngestError("cannot write " + labels_path);
  for (const LabelRow& row : data.labels) {
    lf << row.entity << '\t' << row.label << '\t' << split_name(row.split) << '\n';
  }
}

}  // namespace mperl
