#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mperl {

// One RDF term. Literal text is preserved verbatim as written in the
// source, including quotes and any datatype/language suffix, so distinct
// lexical forms stay distinct dictionary keys.
struct Term {
  enum class Kind { Iri, Blank, Literal };
  Kind kind = Kind::Iri;
  std::string text;  // IRI without angle brackets; blank as "_:label"; literal raw

  bool operator==(const Term&) const = default;
};

struct RawTriple {
  Term subject;
  Term predicate;
  Term object;
};

// Parses W3C N-Triples. Comment and blank lines are skipped; malformed
// lines raise ParseError with the 1-based line number.
std::vector<RawTriple> parse_ntriples(std::istream& in);

// File variant; gzip-compressed input is detected and inflated
// transparently.
std::vector<RawTriple> parse_ntriples_file(const std::string& path);

// Whole file as text, inflating gzip members transparently.
std::string read_text_file(const std::string& path);

// Plain three-column tab-separated triples (the large benchmark graphs
// ship in this form); terms are taken verbatim as IRI-kind tokens.
std::vector<RawTriple> parse_triples_tsv(std::istream& in);
std::vector<RawTriple> parse_triples_tsv_file(const std::string& path);

}  // namespace mperl
