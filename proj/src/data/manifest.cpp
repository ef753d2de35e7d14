#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mtlface/data/data.hpp"

namespace mtlface::data {

namespace fs = std::filesystem;

int Manifest::num_identities() const {
  int k = 0;
  for (const auto& r : records) k = std::max(k, r.identity + 1);
  return k;
}

std::string Manifest::resolve(const Record& r) const {
  fs::path p(r.path);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t t = line.find('\t', start);
    out.push_back(line.substr(start, t == std::string::npos ? std::string::npos : t - start));
    if (t == std::string::npos) break;
    start = t + 1;
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto r = std::from_chars(b, e, out);
  return r.ec == std::errc() && r.ptr == e;
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace

Manifest parse_manifest(const std::string& text, const std::string& base_dir) {
  Manifest m;
  m.base_dir = base_dir;
  std::map<long long, int> remap;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fail = [&](const std::string& why) {
      throw DataError("manifest line " + std::to_string(lineno) + ": " + why);
    };
    const auto f = split_tabs(line);
    if (f.size() != 4) fail("expected 4 tab-separated fields, got " + std::to_string(f.size()));
    if (f[0].empty()) fail("empty path");
    long long raw_id = 0;
    if (!parse_number(f[1], raw_id)) fail("bad identity '" + f[1] + "'");
    double age = 0;
    if (!parse_number(f[2], age) || !(age >= 0.0) || age > 1e6) fail("bad age '" + f[2] + "'");
    if (f[3] != "0" && f[3] != "1") fail("synthetic flag must be 0 or 1, got '" + f[3] + "'");
    auto it = remap.find(raw_id);
    if (it == remap.end()) it = remap.emplace(raw_id, static_cast<int>(remap.size())).first;
    m.records.push_back({f[0], it->second, age, f[3] == "1"});
  }
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open manifest " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_manifest(ss.str(), fs::path(path).parent_path().string());
}

std::string format_manifest(const Manifest& m) {
  std::string out;
  for (const auto& r : m.records) {
    out += r.path + "\t" + std::to_string(r.identity) + "\t" + format_double(r.age) + "\t" +
           (r.synthetic ? "1" : "0") + "\n";
  }
  return out;
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write manifest " + path);
  f << format_manifest(m);
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::uint64_t state = mix64(seed ^ mix64(epoch + 0x51ed2701ULL));
  for (std::size_t i = n; i > 1; --i) {
    state = mix64(state);
    const std::size_t j = static_cast<std::size_t>(state % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace mtlface::data
