#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "affconv/autodiff.hpp"
#include "affconv/error.hpp"
#include "affconv/io.hpp"
#include "affconv/tensor.hpp"

namespace affconv {

// Layout:
//   affconv-checkpoint 1
//   meta <key> <value>          (optional, repeated)
//   tensors <count>
//   <name> <rows> <cols>        (manifest, one line per tensor)
//   end
//   <little-endian fp64 payload, tensors in manifest order, row-major>

struct NamedTensor {
  std::string name;
  Tensor<double> value;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  std::string meta_value(const std::string& key, const std::string& fallback = "") const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return fallback;
  }
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string out = "affconv-checkpoint 1\n";
  for (const auto& [k, v] : ck.meta) {
    require(k.find_first_of(" \t\n") == std::string::npos && v.find('\n') == std::string::npos,
            ErrorCode::InvalidArgument, "checkpoint meta entries must be single-line, key without spaces");
    out += "meta " + k + " " + v + "\n";
  }
  out += "tensors " + std::to_string(ck.tensors.size()) + "\n";
  for (const auto& t : ck.tensors) {
    require(!t.name.empty() && t.name.find_first_of(" \t\n") == std::string::npos,
            ErrorCode::InvalidArgument, "tensor name '" + t.name + "' must be a single token");
    out += t.name + " " + std::to_string(t.value.rows()) + " " + std::to_string(t.value.cols()) + "\n";
  }
  out += "end\n";
  for (const auto& t : ck.tensors) {
    for (double v : t.value.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    require(nl != std::string::npos, ErrorCode::ParseError, "checkpoint: truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  require(next_line() == "affconv-checkpoint 1", ErrorCode::ParseError, "checkpoint: bad magic line");
  Checkpoint ck;
  std::string line = next_line();
  while (line.rfind("meta ", 0) == 0) {
    const std::size_t sp = line.find(' ', 5);
    require(sp != std::string::npos, ErrorCode::ParseError, "checkpoint: malformed meta line");
    ck.meta.emplace_back(line.substr(5, sp - 5), line.substr(sp + 1));
    line = next_line();
  }
  std::istringstream head(line);
  std::string word;
  std::string count_tok;
  head >> word >> count_tok;
  require(word == "tensors", ErrorCode::ParseError, "checkpoint: expected 'tensors <count>'");
  const std::size_t count = parse_index(count_tok, "checkpoint tensor count");
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> manifest;
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream ls(next_line());
    std::string name, r, c;
    ls >> name >> r >> c;
    require(!c.empty(), ErrorCode::ParseError, "checkpoint: manifest line needs name rows cols");
    manifest.push_back({name, {parse_index(r, "checkpoint rows"), parse_index(c, "checkpoint cols")}});
  }
  require(next_line() == "end", ErrorCode::ParseError, "checkpoint: missing 'end' after manifest");
  for (const auto& [name, shape] : manifest) {
    const std::size_t n = shape.first * shape.second;
    require(bytes.size() >= pos + 8 * n, ErrorCode::ParseError, "checkpoint: payload truncated at " + name);
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + 8 * i + b])) << (8 * b);
      values[i] = std::bit_cast<double>(bits);
    }
    pos += 8 * n;
    ck.tensors.push_back({name, Tensor<double>(shape.first, shape.second, std::move(values))});
  }
  require(pos == bytes.size(), ErrorCode::ParseError, "checkpoint: trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_text_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_text_file(path));
}

template <typename T>
Checkpoint checkpoint_from_params(const std::vector<ad::Param<T>*>& params,
                                  std::vector<std::pair<std::string, std::string>> meta = {}) {
  Checkpoint ck{std::move(meta), {}};
  for (const auto* p : params) ck.tensors.push_back({p->name, p->value.template cast<double>()});
  return ck;
}

/// Copies checkpoint values into params by name; every param must be present with a matching shape.
template <typename T>
void load_params(const Checkpoint& ck, const std::vector<ad::Param<T>*>& params) {
  for (auto* p : params) {
    const NamedTensor* t = ck.find(p->name);
    require(t != nullptr, ErrorCode::ParseError, "checkpoint has no tensor '" + p->name + "'");
    require(t->value.rows() == p->value.rows() && t->value.cols() == p->value.cols(), ErrorCode::ShapeMismatch,
            "checkpoint tensor '" + p->name + "' is " + t->value.shape_string() + ", expected " +
                p->value.shape_string());
    p->value = t->value.template cast<T>();
  }
}

}  // namespace affconv
