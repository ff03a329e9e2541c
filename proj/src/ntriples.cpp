#include "mperl/ntriples.hpp"

#include <zlib.h>

#include <cstring>
#include <istream>
#include <sstream>
#include <string>

#include "mperl/error.hpp"

namespace mperl {

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r'; }

struct LineScanner {
  const std::string& line;
  std::size_t lineno;
  std::size_t pos = 0;

  void skip_ws() {
    while (pos < line.size() && is_ws(line[pos])) ++pos;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(lineno, msg); }

  Term iri() {
    if (pos >= line.size() || line[pos] != '<') fail("expected IRI");
    std::size_t end = line.find('>', pos + 1);
    if (end == std::string::npos) fail("unterminated IRI");
    Term t{Term::Kind::Iri, line.substr(pos + 1, end - pos - 1)};
    pos = end + 1;
    return t;
  }

  Term blank() {
    std::size_t start = pos;
    pos += 2;  // "_:"
    while (pos < line.size() && !is_ws(line[pos]) && line[pos] != '.') ++pos;
    if (pos == start + 2) fail("empty blank node label");
    return Term{Term::Kind::Blank, line.substr(start, pos - start)};
  }

  Term literal() {
    std::size_t start = pos;
    ++pos;  // opening quote
    while (pos < line.size()) {
      if (line[pos] == '\\') {
        pos += 2;
        continue;
      }
      if (line[pos] == '"') break;
      ++pos;
    }
    if (pos >= line.size()) fail("unterminated literal");
    ++pos;  // closing quote
    if (pos < line.size() && line[pos] == '@') {
      while (pos < line.size() && !is_ws(line[pos])) ++pos;
    } else if (pos + 1 < line.size() && line[pos] == '^' && line[pos + 1] == '^') {
      pos += 2;
      if (pos >= line.size() || line[pos] != '<') fail("expected datatype IRI after ^^");
      std::size_t end = line.find('>', pos + 1);
      if (end == std::string::npos) fail("unterminated datatype IRI");
      pos = end + 1;
    }
    return Term{Term::Kind::Literal, line.substr(start, pos - start)};
  }

  Term subject() {
    skip_ws();
    if (pos >= line.size()) fail("missing subject");
    if (line[pos] == '<') return iri();
    if (line.compare(pos, 2, "_:") == 0) return blank();
    fail("subject must be an IRI or blank node");
  }

  Term predicate() {
    skip_ws();
    if (pos >= line.size() || line[pos] != '<') fail("predicate must be an IRI");
    return iri();
  }

  Term object() {
    skip_ws();
    if (pos >= line.size()) fail("missing object");
    if (line[pos] == '<') return iri();
    if (line[pos] == '"') return literal();
    if (line.compare(pos, 2, "_:") == 0) return blank();
    fail("object must be an IRI, blank node, or literal");
  }

  void terminator() {
    skip_ws();
    if (pos >= line.size() || line[pos] != '.') fail("expected '.' terminator");
    ++pos;
    skip_ws();
    if (pos < line.size() && line[pos] != '#') fail("trailing content after '.'");
  }
};

bool parse_line(const std::string& line, std::size_t lineno, RawTriple& out) {
  LineScanner sc{line, lineno};
  sc.skip_ws();
  if (sc.pos >= line.size() || line[sc.pos] == '#') return false;
  out.subject = sc.subject();
  out.predicate = sc.predicate();
  out.object = sc.object();
  sc.terminator();
  return true;
}

}  // namespace

std::vector<RawTriple> parse_ntriples(std::istream& in) {
  std::vector<RawTriple> triples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    RawTriple t;
    if (parse_line(line, lineno, t)) triples.push_back(std::move(t));
  }
  return triples;
}

std::string read_text_file(const std::string& path) {
  // gzopen reads plain files unchanged and inflates gzip members, so one
  // reader covers both encodings.
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IngestError("cannot open " + path);
  std::string content;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) content.append(buf, static_cast<std::size_t>(n));
  const bool read_error = (n < 0);
  gzclose(f);
  if (read_error) throw IngestError("read/inflate failure on " + path);
  return content;
}

std::vector<RawTriple> parse_ntriples_file(const std::string& path) {
  std::istringstream in(read_text_file(path));
  return parse_ntriples(in);
}

std::vector<RawTriple> parse_triples_tsv(std::istream& in) {
  std::vector<RawTriple> triples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw ParseError(lineno, "expected 3 tab-separated columns");
    }
    triples.push_back({{Term::Kind::Iri, line.substr(0, t1)},
                       {Term::Kind::Iri, line.substr(t1 + 1, t2 - t1 - 1)},
                       {Term::Kind::Iri, line.substr(t2 + 1)}});
  }
  return triples;
}

std::vector<RawTriple> parse_triples_tsv_file(const std::string& path) {
  std::istringstream in(read_text_file(path));
  return parse_triples_tsv(in);
}

}  // namespace mperl
