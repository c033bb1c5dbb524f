#include "crlhf/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "crlhf/error.hpp"

namespace crlhf::io {
namespace {

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::string& at) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  require(res.ec == std::errc() && res.ptr == end && !s.empty(), ErrorKind::parse,
          at + ": expected a number, got '" + s + "'");
  require(std::isfinite(v), ErrorKind::parse, at + ": value is not finite");
  return v;
}

std::size_t to_index(const std::string& s, const std::string& at) {
  std::size_t v = 0;
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  require(res.ec == std::errc() && res.ptr == end && !s.empty(), ErrorKind::parse,
          at + ": expected a nonnegative integer, got '" + s + "'");
  return v;
}

// Data rows with their 1-based line numbers, header removed and checked.
struct Table {
  std::vector<std::string> header;
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
};

Table parse_csv(const std::string& text, const std::string& source) {
  Table t;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto cells = split(s);
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    require(cells.size() == t.header.size(), ErrorKind::parse,
            where(source, n) + ": expected " + std::to_string(t.header.size()) + " fields, got " +
                std::to_string(cells.size()));
    t.rows.emplace_back(n, std::move(cells));
  }
  require(!t.header.empty(), ErrorKind::parse, source + ": missing header row");
  return t;
}

void expect_header(const Table& t, const std::vector<std::string>& prefix, const std::string& source) {
  bool ok = t.header.size() >= prefix.size();
  for (std::size_t i = 0; ok && i < prefix.size(); ++i) ok = t.header[i] == prefix[i];
  std::string want;
  for (const auto& p : prefix) want += p + ",";
  require(ok, ErrorKind::parse, source + ": header must start with " + want.substr(0, want.size() - 1));
}

// Short form for messages.
std::string brief(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void KeyValues::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

std::optional<std::string> KeyValues::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

double KeyValues::get_double(const std::string& key) const {
  const auto v = get(key);
  require(v.has_value(), ErrorKind::validation, "missing key '" + key + "'");
  return to_double(*v, key);
}

std::string KeyValues::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#' || s.front() == '[') continue;
    const auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::parse,
            where(source, n) + ": expected key=value");
    kv.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_text(path), path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& body,
                const std::string& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  if (!manifest.empty()) out << "# manifest: " << manifest << '\n';
  out << body;
  out.flush();
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path.string() + "' failed");
}

std::string features_csv(const FeatureTable& table) {
  std::ostringstream os;
  os << "prompt,action";
  for (std::size_t j = 0; j < table.dim(); ++j) os << ",f" << j;
  os << '\n';
  for (std::size_t x = 0; x < table.num_prompts(); ++x) {
    for (std::size_t a = 0; a < table.num_actions(); ++a) {
      os << x << ',' << a;
      for (double v : table.feature(x, a)) os << ',' << format_double(v);
      os << '\n';
    }
  }
  return os.str();
}

FeatureLoad parse_features(const std::string& text, const std::string& source, bool renormalize) {
  const Table t = parse_csv(text, source);
  expect_header(t, {"prompt", "action"}, source);
  const std::size_t d = t.header.size() - 2;
  require(d >= 1, ErrorKind::parse, source + ": no feature columns");
  std::size_t x_count = 0;
  std::size_t a_count = 0;
  for (const auto& [line, cells] : t.rows) {
    x_count = std::max(x_count, to_index(cells[0], where(source, line)) + 1);
    a_count = std::max(a_count, to_index(cells[1], where(source, line)) + 1);
  }
  require(x_count * a_count == t.rows.size(), ErrorKind::validation,
          source + ": expected one row for each of " + std::to_string(x_count) + "x" +
              std::to_string(a_count) + " prompt-action pairs, got " + std::to_string(t.rows.size()));
  std::vector<double> feats(x_count * a_count * d);
  std::vector<char> seen(x_count * a_count, 0);
  std::vector<std::string> warnings;
  for (const auto& [line, cells] : t.rows) {
    const std::string at = where(source, line);
    const std::size_t x = to_index(cells[0], at);
    const std::size_t a = to_index(cells[1], at);
    const std::size_t e = x * a_count + a;
    require(!seen[e], ErrorKind::validation, at + ": duplicate row for prompt " + std::to_string(x) +
                                                 " action " + std::to_string(a));
    seen[e] = 1;
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      feats[e * d + j] = to_double(cells[2 + j], at);
      sq += feats[e * d + j] * feats[e * d + j];
    }
    const double norm = std::sqrt(sq);
    if (norm > 1.0 + 1e-12) {
      require(renormalize, ErrorKind::validation,
              at + ": feature norm " + brief(norm) + " exceeds 1");
      for (std::size_t j = 0; j < d; ++j) feats[e * d + j] /= norm;
      warnings.push_back(at + ": feature norm " + brief(norm) + " rescaled to 1");
    }
  }
  return {FeatureTable(x_count, a_count, d, std::move(feats)), std::move(warnings)};
}

std::string preferences_csv(const PreferenceDataset& data) {
  std::ostringstream os;
  os << "prompt,action1,action2";
  for (std::size_t k = 1; k <= data.num_oracles(); ++k) os << ",y" << k;
  os << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data.records()[i];
    os << r.prompt << ',' << r.action1 << ',' << r.action2;
    for (std::size_t k = 0; k < data.num_oracles(); ++k) os << ',' << int{data.label(i, k)};
    os << '\n';
  }
  return os.str();
}

PreferenceDataset parse_preferences(const std::string& text, const std::string& source) {
  const Table t = parse_csv(text, source);
  expect_header(t, {"prompt", "action1", "action2"}, source);
  const std::size_t k = t.header.size() - 3;
  require(k >= 2, ErrorKind::parse, source + ": need at least two label columns (target and one constraint)");
  std::vector<Comparison> records;
  std::vector<std::uint8_t> labels;
  for (const auto& [line, cells] : t.rows) {
    const std::string at = where(source, line);
    records.push_back({static_cast<std::uint32_t>(to_index(cells[0], at)),
                       static_cast<std::uint32_t>(to_index(cells[1], at)),
                       static_cast<std::uint32_t>(to_index(cells[2], at))});
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t y = to_index(cells[3 + j], at);
      require(y <= 1, ErrorKind::parse, at + ": labels must be 0 or 1");
      labels.push_back(static_cast<std::uint8_t>(y));
    }
  }
  require(!records.empty(), ErrorKind::validation, source + ": no preference records");
  return PreferenceDataset(k, std::move(records), std::move(labels));
}

std::string policy_csv(const Policy& pi) {
  std::ostringstream os;
  os << "prompt,action,prob\n";
  for (std::size_t x = 0; x < pi.num_prompts(); ++x) {
    for (std::size_t a = 0; a < pi.num_actions(); ++a) {
      os << x << ',' << a << ',' << format_double(pi(x, a)) << '\n';
    }
  }
  return os.str();
}

Policy parse_policy(const std::string& text, const std::string& source, std::size_t num_prompts,
                    std::size_t num_actions) {
  const Table t = parse_csv(text, source);
  expect_header(t, {"prompt", "action", "prob"}, source);
  require(t.header.size() == 3, ErrorKind::parse, source + ": expected exactly prompt,action,prob");
  std::vector<double> probs(num_prompts * num_actions, 0.0);
  std::vector<char> seen(probs.size(), 0);
  for (const auto& [line, cells] : t.rows) {
    const std::string at = where(source, line);
    const std::size_t x = to_index(cells[0], at);
    const std::size_t a = to_index(cells[1], at);
    require(x < num_prompts && a < num_actions, ErrorKind::validation,
            at + ": prompt or action outside the feature table");
    const double p = to_double(cells[2], at);
    require(p >= 0.0 && p <= 1.0, ErrorKind::validation, at + ": probability outside [0, 1]");
    require(!seen[x * num_actions + a], ErrorKind::validation, at + ": duplicate row");
    seen[x * num_actions + a] = 1;
    probs[x * num_actions + a] = p;
  }
  for (std::size_t x = 0; x < num_prompts; ++x) {
    double total = 0.0;
    for (std::size_t a = 0; a < num_actions; ++a) total += probs[x * num_actions + a];
    require(std::abs(total - 1.0) <= 1e-9, ErrorKind::validation,
            source + ": probabilities for prompt " + std::to_string(x) + " sum to " +
                brief(total) + ", not 1");
    if (std::abs(total - 1.0) > 1e-12) {
      for (std::size_t a = 0; a < num_actions; ++a) probs[x * num_actions + a] /= total;
    }
  }
  return Policy(num_prompts, num_actions, std::move(probs));
}

std::string thetas_csv(const std::vector<std::vector<double>>& thetas) {
  require(!thetas.empty(), ErrorKind::shape, "no parameters to write");
  std::ostringstream os;
  os << "oracle";
  for (std::size_t j = 0; j < thetas[0].size(); ++j) os << ",t" << j;
  os << '\n';
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    require(thetas[k].size() == thetas[0].size(), ErrorKind::shape, "parameter dimensions differ");
    os << k;
    for (double v : thetas[k]) os << ',' << format_double(v);
    os << '\n';
  }
  return os.str();
}

std::vector<std::vector<double>> parse_thetas(const std::string& text, const std::string& source) {
  const Table t = parse_csv(text, source);
  expect_header(t, {"oracle"}, source);
  require(t.header.size() >= 2, ErrorKind::parse, source + ": no parameter columns");
  std::vector<std::vector<double>> out;
  for (const auto& [line, cells] : t.rows) {
    const std::string at = where(source, line);
    require(to_index(cells[0], at) == out.size(), ErrorKind::parse,
            at + ": oracles must be listed in order starting at 0");
    std::vector<double> th;
    for (std::size_t j = 1; j < cells.size(); ++j) th.push_back(to_double(cells[j], at));
    out.push_back(std::move(th));
  }
  require(!out.empty(), ErrorKind::validation, source + ": no parameter rows");
  return out;
}

ExternalData ingest_external(const std::filesystem::path& features,
                             const std::filesystem::path& preferences,
                             const std::optional<std::filesystem::path>& reference,
                             bool renormalize) {
  FeatureLoad f = parse_features(read_text(features), features.string(), renormalize);
  PreferenceDataset data = parse_preferences(read_text(preferences), preferences.string());
  data.check_against(f.table);
  std::vector<std::string> warnings = std::move(f.warnings);
  const std::size_t x = f.table.num_prompts();
  const std::size_t a = f.table.num_actions();
  Policy pi0 = Policy::uniform(x, a);
  if (reference) {
    pi0 = parse_policy(read_text(*reference), reference->string(), x, a);
  } else {
    warnings.emplace_back("no reference policy given; using uniform");
  }
  return {std::move(f.table), std::move(data), std::move(pi0), std::move(warnings)};
}

}  // namespace crlhf::io
