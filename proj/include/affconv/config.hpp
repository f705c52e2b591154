#pragma once

// Declarative text configs:
//
//   # comment
//   format_version = 1
//   key = value
//   name:            ordered list block, one entry per line
//     entry ...
//   end
//
// Used for model/training configs, dataset manifests and generator specs.

#include <charconv>
#include <filesystem>
#include <map>
#include <set>
#include <optional>
#include <string>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/io.hpp"
#include "affconv/model.hpp"

namespace affconv {

inline constexpr int kFormatVersion = 1;

class ConfigDoc {
 public:
  static ConfigDoc parse(const std::string& text, const std::string& source = "config") {
    ConfigDoc doc;
    doc.source_ = source;
    std::string list;
    std::size_t lineno = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      std::size_t nl = text.find('\n', start);
      if (nl == std::string::npos) nl = text.size();
      std::string line = text.substr(start, nl - start);
      start = nl + 1;
      ++lineno;
      if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
      line = trim(line);
      if (line.empty()) continue;
      const std::string where = source + ":" + std::to_string(lineno);
      if (!list.empty()) {
        if (line == "end") {
          list.clear();
        } else {
          doc.lists_[list].push_back(line);
        }
        continue;
      }
      if (line.back() == ':' && line.find('=') == std::string::npos) {
        list = trim(line.substr(0, line.size() - 1));
        require(!list.empty() && !doc.lists_.contains(list), ErrorCode::ParseError, where + ": bad or repeated list");
        doc.lists_[list];
        doc.list_order_.push_back(list);
        continue;
      }
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorCode::ParseError, where + ": expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      require(!key.empty(), ErrorCode::ParseError, where + ": empty key");
      require(!doc.values_.contains(key), ErrorCode::ParseError, where + ": duplicate key '" + key + "'");
      doc.values_[key] = trim(line.substr(eq + 1));
      doc.order_.push_back(key);
    }
    require(list.empty(), ErrorCode::ParseError, source + ": list '" + list + "' is missing 'end'");
    const std::string v = doc.get("format_version", "");
    require(!v.empty(), ErrorCode::ParseError, source + ": missing format_version");
    require(v == std::to_string(kFormatVersion), ErrorCode::ParseError,
            source + ": unsupported format_version " + v);
    return doc;
  }

  static ConfigDoc load(const std::string& path) {
    auto d = parse(read_text_file(path), path);
    d.dir_ = std::filesystem::absolute(path).parent_path().string();
    return d;
  }

  bool has(const std::string& key) const { return values_.contains(key); }
  bool has_list(const std::string& name) const { return lists_.contains(name); }
  const std::string& dir() const noexcept { return dir_; }
  const std::string& source() const noexcept { return source_; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_key(const std::string& key) const {
    require(has(key), ErrorCode::ParseError, source_ + ": missing key '" + key + "'");
    return get(key, "");
  }

  std::size_t get_size(const std::string& key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    return parse_index(get(key, ""), source_ + ": " + key);
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return parse_double(get(key, ""), source_ + ": " + key);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get(key, "");
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && p == s.data() + s.size(), ErrorCode::ParseError,
            source_ + ": " + key + ": bad integer '" + s + "'");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    return parse_bool(get(key, ""), source_ + ": " + key);
  }

  std::vector<std::size_t> get_sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::size_t> out;
    for (const auto& tok : split(get(key, ""), ',')) out.push_back(parse_index(trim(tok), source_ + ": " + key));
    return out;
  }

  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    std::vector<double> out;
    for (const auto& tok : split(get(key, ""), ',')) out.push_back(parse_double(trim(tok), source_ + ": " + key));
    return out;
  }

  const std::vector<std::string>& list(const std::string& name) const {
    static const std::vector<std::string> empty;
    auto it = lists_.find(name);
    return it == lists_.end() ? empty : it->second;
  }

  /// Path relative to the config file's directory.
  std::string path(const std::string& key, const std::string& fallback = "") const {
    const std::string p = get(key, fallback);
    if (p.empty()) return p;
    return resolve(p);
  }

  std::string resolve(const std::string& p) const {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || dir_.empty()) return fp.lexically_normal().string();
    return (std::filesystem::path(dir_) / fp).lexically_normal().string();
  }

  /// Keys present in the file that nothing asked for.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (!used_.contains(k) && k != "format_version") out.push_back(k);
    return out;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
      const auto p = s.find(sep, start);
      out.push_back(s.substr(start, p == std::string::npos ? std::string::npos : p - start));
      if (p == std::string::npos) break;
      start = p + 1;
    }
    return out;
  }

  /// Whitespace-separated tokens.
  static std::vector<std::string> tokens(const std::string& s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
      std::size_t j = i;
      while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
      if (j > i) out.push_back(s.substr(i, j - i));
      i = j;
    }
    return out;
  }

  static bool parse_bool(const std::string& s, const std::string& ctx) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    fail(ErrorCode::ParseError, ctx + ": bad boolean '" + s + "'");
  }

 private:
  std::string source_;
  std::string dir_;
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::map<std::string, std::vector<std::string>> lists_;
  std::vector<std::string> list_order_;
  mutable std::set<std::string> used_;
};

/// Writes `key = value` lines in the given order plus optional lists.
class ConfigWriter {
 public:
  ConfigWriter() { add("format_version", std::to_string(kFormatVersion)); }

  ConfigWriter& add(const std::string& key, const std::string& value) {
    text_ += key + " = " + value + "\n";
    return *this;
  }
  ConfigWriter& add(const std::string& key, double v) { return add(key, format_double(v)); }
  ConfigWriter& add(const std::string& key, std::size_t v) { return add(key, std::to_string(v)); }
  ConfigWriter& add(const std::string& key, std::uint64_t v, int) { return add(key, std::to_string(v)); }
  ConfigWriter& add(const std::string& key, bool v) { return add(key, std::string(v ? "true" : "false")); }
  ConfigWriter& add(const std::string& key, const char* v) { return add(key, std::string(v)); }

  template <typename Seq>
  ConfigWriter& add_seq(const std::string& key, const Seq& values) {
    std::string s;
    for (const auto& v : values) {
      if (!s.empty()) s += ",";
      if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
        s += format_double(v);
      } else {
        s += std::to_string(v);
      }
    }
    return add(key, s);
  }

  ConfigWriter& list(const std::string& name, const std::vector<std::string>& entries) {
    text_ += name + ":\n";
    for (const auto& e : entries) text_ += "  " + e + "\n";
    text_ += "end\n";
    return *this;
  }

  const std::string& str() const noexcept { return text_; }

 private:
  std::string text_;
};

// ---------------------------------------------------------------- layer lines
//
//   conv kind=monet out=16 kernel=9 wrapper=affine center_weight=true self_loops=true
//        pseudo=cartesian pseudo_dim=3 translation_invariant=false gin_eps=0
//        gin_train_eps=false gin_norm=false
//   linear out=16 | dropout rate=0.5 | elu | relu | pool | unpool | flatten |
//   unflatten | global_avg | softmax

inline std::string_view to_string(PseudoMode m) { return m == PseudoMode::Cartesian ? "cartesian" : "degree"; }

inline PseudoMode parse_pseudo_mode(std::string_view s) {
  if (s == "cartesian") return PseudoMode::Cartesian;
  if (s == "degree") return PseudoMode::Degree;
  fail(ErrorCode::ParseError, "unknown pseudo-coordinate mode '" + std::string(s) + "'");
}

inline std::string format_layer(const LayerEntry& e) {
  std::string s(to_string(e.type));
  switch (e.type) {
    case LayerType::Conv: {
      const LayerSpec& c = e.conv;
      auto b = [](bool v) { return v ? "true" : "false"; };
      s += " kind=" + std::string(to_string(c.kind)) + " out=" + std::to_string(c.out_channels) +
           " kernel=" + std::to_string(c.kernel_size) + " wrapper=" + std::string(to_string(c.wrapper)) +
           " center_weight=" + b(c.center_weight) + " self_loops=" + b(c.self_loops) +
           " pseudo=" + std::string(to_string(c.pseudo_mode)) + " pseudo_dim=" + std::to_string(c.pseudo_dim) +
           " translation_invariant=" + b(c.feast_translation_invariant) + " gin_eps=" + format_double(c.gin_eps) +
           " gin_train_eps=" + b(c.gin_train_eps) + " gin_norm=" + b(c.gin_norm);
      break;
    }
    case LayerType::Linear: s += " out=" + std::to_string(e.out); break;
    case LayerType::Dropout: s += " rate=" + format_double(e.rate); break;
    default: break;
  }
  return s;
}

inline LayerEntry parse_layer(const std::string& line) {
  const auto toks = ConfigDoc::tokens(line);
  require(!toks.empty(), ErrorCode::ParseError, "empty layer line");
  LayerEntry e = LayerEntry::of(parse_layer_type(toks[0]));
  bool has_out = false;
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const auto eq = toks[i].find('=');
    require(eq != std::string::npos, ErrorCode::ParseError, "layer '" + line + "': expected key=value, got '" + toks[i] + "'");
    const std::string k = toks[i].substr(0, eq), v = toks[i].substr(eq + 1);
    const std::string ctx = "layer '" + toks[0] + "' " + k;
    auto known = [&](bool ok) { require(ok, ErrorCode::ParseError, "layer '" + toks[0] + "': unknown option '" + k + "'"); };
    switch (e.type) {
      case LayerType::Conv: {
        LayerSpec& c = e.conv;
        if (k == "kind") c.kind = parse_op_kind(v);
        else if (k == "out") { c.out_channels = parse_index(v, ctx); has_out = true; }
        else if (k == "kernel") c.kernel_size = parse_index(v, ctx);
        else if (k == "wrapper") c.wrapper = parse_wrapper(v);
        else if (k == "center_weight") c.center_weight = ConfigDoc::parse_bool(v, ctx);
        else if (k == "self_loops") c.self_loops = ConfigDoc::parse_bool(v, ctx);
        else if (k == "pseudo") c.pseudo_mode = parse_pseudo_mode(v);
        else if (k == "pseudo_dim") c.pseudo_dim = parse_index(v, ctx);
        else if (k == "translation_invariant") c.feast_translation_invariant = ConfigDoc::parse_bool(v, ctx);
        else if (k == "gin_eps") c.gin_eps = parse_double(v, ctx);
        else if (k == "gin_train_eps") c.gin_train_eps = ConfigDoc::parse_bool(v, ctx);
        else if (k == "gin_norm") c.gin_norm = ConfigDoc::parse_bool(v, ctx);
        else known(false);
        break;
      }
      case LayerType::Linear:
        known(k == "out");
        e.out = parse_index(v, ctx);
        has_out = true;
        break;
      case LayerType::Dropout:
        known(k == "rate");
        e.rate = parse_double(v, ctx);
        break;
      default: known(false);
    }
  }
  require(has_out || (e.type != LayerType::Conv && e.type != LayerType::Linear), ErrorCode::ParseError,
          "layer '" + line + "' needs out=");
  return e;
}

}  // namespace affconv
