#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/graph.hpp"
#include "affconv/mesh.hpp"
#include "affconv/sparse.hpp"

namespace affconv {

/// Shortest round-trip decimal representation.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail(ErrorCode::InvalidArgument, "cannot format number");
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view token, std::string_view context) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    fail(ErrorCode::ParseError, std::string(context) + ": bad number '" + std::string(token) + "'");
  return v;
}

inline std::size_t parse_index(std::string_view token, std::string_view context) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size())
    fail(ErrorCode::ParseError, std::string(context) + ": bad index '" + std::string(token) + "'");
  return v;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed for " + path);
}

namespace detail {

// Whitespace tokens per non-empty, non-comment line.
inline std::vector<std::vector<std::string>> tokenize_lines(const std::string& text) {
  std::vector<std::vector<std::string>> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    for (std::string t; ls >> t;) tokens.push_back(t);
    if (!tokens.empty()) lines.push_back(std::move(tokens));
  }
  return lines;
}

}  // namespace detail

// OFF: "OFF", "<V> <F> <E>", V coordinate rows, F rows "3 a b c".
inline Mesh parse_off(const std::string& text) {
  auto lines = detail::tokenize_lines(text);
  require(!lines.empty(), ErrorCode::ParseError, "OFF: empty input");
  std::size_t cursor = 0;
  std::vector<std::string> header = lines[cursor++];
  require(header[0] == "OFF", ErrorCode::ParseError, "OFF: missing OFF header");
  header.erase(header.begin());
  if (header.empty()) {
    require(cursor < lines.size(), ErrorCode::ParseError, "OFF: missing counts line");
    header = lines[cursor++];
  }
  require(header.size() >= 2, ErrorCode::ParseError, "OFF: counts line needs V F");
  const std::size_t nv = parse_index(header[0], "OFF vertex count");
  const std::size_t nf = parse_index(header[1], "OFF face count");
  require(lines.size() >= cursor + nv + nf, ErrorCode::ParseError, "OFF: truncated file");
  Tensor<double> pos(nv, 3);
  for (std::size_t i = 0; i < nv; ++i) {
    const auto& t = lines[cursor++];
    require(t.size() >= 3, ErrorCode::ParseError, "OFF: vertex line needs 3 coordinates");
    for (int c = 0; c < 3; ++c) pos(i, c) = parse_double(t[c], "OFF vertex");
  }
  std::vector<Face> faces;
  faces.reserve(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    const auto& t = lines[cursor++];
    require(!t.empty() && parse_index(t[0], "OFF face") == 3 && t.size() >= 4,
            ErrorCode::ParseError, "OFF: only triangle faces are supported");
    faces.push_back({parse_index(t[1], "OFF face"), parse_index(t[2], "OFF face"),
                     parse_index(t[3], "OFF face")});
  }
  return Mesh(std::move(pos), std::move(faces));
}

inline std::string to_off(const Mesh& mesh) {
  std::string out = "OFF\n" + std::to_string(mesh.num_vertices()) + " " +
                    std::to_string(mesh.faces().size()) + " 0\n";
  const auto& pos = mesh.positions();
  for (std::size_t i = 0; i < pos.rows(); ++i)
    out += format_double(pos(i, 0)) + " " + format_double(pos(i, 1)) + " " +
           format_double(pos(i, 2)) + "\n";
  for (const Face& f : mesh.faces())
    out += "3 " + std::to_string(f[0]) + " " + std::to_string(f[1]) + " " + std::to_string(f[2]) + "\n";
  return out;
}

// OBJ subset: "v x y z" and triangular "f a b c" (1-based, "a/b/c" forms accepted).
inline Mesh parse_obj(const std::string& text) {
  std::vector<double> coords;
  std::vector<Face> faces;
  for (const auto& t : detail::tokenize_lines(text)) {
    if (t[0] == "v") {
      require(t.size() >= 4, ErrorCode::ParseError, "OBJ: vertex needs 3 coordinates");
      for (int c = 1; c <= 3; ++c) coords.push_back(parse_double(t[c], "OBJ vertex"));
    } else if (t[0] == "f") {
      require(t.size() == 4, ErrorCode::ParseError, "OBJ: only triangle faces are supported");
      Face f{};
      for (int k = 0; k < 3; ++k) {
        std::string_view tok = t[k + 1];
        tok = tok.substr(0, tok.find('/'));
        const std::size_t idx = parse_index(tok, "OBJ face");
        require(idx >= 1, ErrorCode::ParseError, "OBJ: indices are 1-based");
        f[k] = idx - 1;
      }
      faces.push_back(f);
    }
  }
  const std::size_t nv = coords.size() / 3;
  return Mesh(Tensor<double>(nv, 3, std::move(coords)), std::move(faces));
}

inline std::string to_obj(const Mesh& mesh) {
  std::string out;
  const auto& pos = mesh.positions();
  for (std::size_t i = 0; i < pos.rows(); ++i)
    out += "v " + format_double(pos(i, 0)) + " " + format_double(pos(i, 1)) + " " +
           format_double(pos(i, 2)) + "\n";
  for (const Face& f : mesh.faces())
    out += "f " + std::to_string(f[0] + 1) + " " + std::to_string(f[1] + 1) + " " +
           std::to_string(f[2] + 1) + "\n";
  return out;
}

/// Edge list: "v <n>" then "e <i> <j>" lines. Loading symmetrises.
inline Graph parse_edge_list(const std::string& text) {
  auto lines = detail::tokenize_lines(text);
  require(!lines.empty() && lines[0][0] == "v" && lines[0].size() == 2, ErrorCode::ParseError,
          "edge list: expected 'v <n>' header");
  const std::size_t n = parse_index(lines[0][1], "edge list vertex count");
  std::vector<Edge> pairs;
  for (std::size_t k = 1; k < lines.size(); ++k) {
    const auto& t = lines[k];
    require(t[0] == "e" && t.size() == 3, ErrorCode::ParseError, "edge list: expected 'e <i> <j>'");
    pairs.push_back({parse_index(t[1], "edge list"), parse_index(t[2], "edge list")});
  }
  return Graph::undirected(n, pairs);
}

inline std::string to_edge_list(const Graph& g) {
  std::string out = "v " + std::to_string(g.num_vertices()) + "\n";
  for (const Edge& e : g.edges())
    out += "e " + std::to_string(e.source) + " " + std::to_string(e.target) + "\n";
  return out;
}

/// Sorted COO text: "<rows> <cols> <nnz>" then "<r> <c> <v>" triplets.
inline SparseMatrix parse_coo(const std::string& text) {
  auto lines = detail::tokenize_lines(text);
  require(!lines.empty() && lines[0].size() == 3, ErrorCode::ParseError,
          "COO: expected '<rows> <cols> <nnz>' header");
  const std::size_t rows = parse_index(lines[0][0], "COO rows");
  const std::size_t cols = parse_index(lines[0][1], "COO cols");
  const std::size_t nnz = parse_index(lines[0][2], "COO nnz");
  require(lines.size() == nnz + 1, ErrorCode::ParseError, "COO: triplet count does not match nnz");
  std::vector<Triplet> entries;
  entries.reserve(nnz);
  for (std::size_t k = 1; k <= nnz; ++k) {
    const auto& t = lines[k];
    require(t.size() == 3, ErrorCode::ParseError, "COO: triplet needs 3 fields");
    entries.push_back({parse_index(t[0], "COO row"), parse_index(t[1], "COO col"),
                       parse_double(t[2], "COO value")});
  }
  return SparseMatrix(rows, cols, std::move(entries));
}

inline std::string to_coo(const SparseMatrix& m) {
  std::string out = std::to_string(m.rows()) + " " + std::to_string(m.cols()) + " " +
                    std::to_string(m.nnz()) + "\n";
  for (const Triplet& e : m.entries())
    out += std::to_string(e.row) + " " + std::to_string(e.col) + " " + format_double(e.value) + "\n";
  return out;
}

// CSV: comma separator, '.' decimal, one header row.
struct CsvTable {
  std::vector<std::string> header;
  Tensor<double> values;
};

inline CsvTable parse_csv(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  require(!lines.empty(), ErrorCode::ParseError, "csv: missing header row");
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      std::string cell = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      const auto a = cell.find_first_not_of(" \t"), b = cell.find_last_not_of(" \t");
      cells.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return cells;
  };
  CsvTable t;
  t.header = split(lines[0]);
  const std::size_t cols = t.header.size();
  std::vector<double> values;
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = split(lines[r]);
    require(cells.size() == cols, ErrorCode::ParseError,
            "csv: row " + std::to_string(r) + " has " + std::to_string(cells.size()) + " cells, header has " +
                std::to_string(cols));
    for (const auto& c : cells) values.push_back(parse_double(c, "csv row " + std::to_string(r)));
  }
  t.values = Tensor<double>(lines.size() - 1, cols, std::move(values));
  return t;
}

inline std::string to_csv(const std::vector<std::string>& header, const Tensor<double>& values) {
  require(header.size() == values.cols(), ErrorCode::ShapeMismatch, "csv header does not match column count");
  std::string out;
  for (std::size_t c = 0; c < header.size(); ++c) out += (c ? "," : "") + header[c];
  out += "\n";
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) out += (c ? "," : "") + format_double(values(r, c));
    out += "\n";
  }
  return out;
}

inline Mesh load_mesh(const std::string& path) {
  const std::string text = read_text_file(path);
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".obj") == 0) return parse_obj(text);
  return parse_off(text);
}

}  // namespace affconv
