#include "facet/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

namespace facet {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  require(f.good(), "cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  require(f.good(), "cannot open for reading: " + path);
  return f;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 1, "PGM image must be [1,H,W]");
  const int h = image.dim(1), w = image.dim(2);
  std::ofstream f = open_out(path, std::ios::binary);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(std::size_t(h) * std::size_t(w));
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    double v = std::clamp(image.values[i], 0.0, 1.0);
    bytes[std::size_t(i)] = (unsigned char)std::lround(v * 255.0);
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(f.good(), "short write: " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream f = open_in(path, std::ios::binary);
  std::string magic;
  f >> magic;
  require(magic == "P5", "not a binary PGM: " + path);
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  require(w > 0 && h > 0 && maxval == 255, "unsupported PGM header: " + path);
  f.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(std::size_t(h) * std::size_t(w));
  f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  require(f.gcount() == std::streamsize(bytes.size()), "truncated PGM: " + path);
  Tensor t = Tensor::zeros({1, h, w});
  for (Eigen::Index i = 0; i < t.size(); ++i) t.values[i] = bytes[std::size_t(i)] / 255.0;
  return t;
}

void write_ppm(const std::string& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3, "PPM image must be [3,H,W]");
  const int h = image.dim(1), w = image.dim(2);
  const Eigen::Index plane = Eigen::Index(h) * w;
  std::ofstream f = open_out(path, std::ios::binary);
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes(std::size_t(plane) * 3);
  for (Eigen::Index i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      double v = std::clamp(image.values[c * plane + i], 0.0, 1.0);
      bytes[std::size_t(i) * 3 + std::size_t(c)] = (unsigned char)std::lround(v * 255.0);
    }
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(f.good(), "short write: " + path);
}

void write_landmarks(const std::string& path, const Landmarks& pts) {
  std::ofstream f = open_out(path);
  f << "index,x,y\n";
  f.precision(17);
  for (std::size_t i = 0; i < pts.size(); ++i)
    f << i << "," << pts[i].x() << "," << pts[i].y() << "\n";
  require(f.good(), "short write: " + path);
}

Landmarks read_landmarks(const std::string& path) {
  std::ifstream f = open_in(path);
  std::string line;
  std::getline(f, line);
  require(trim(line) == "index,x,y", "bad landmark header in " + path);
  Landmarks pts;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    require(cols.size() == 3, "bad landmark row in " + path);
    std::size_t idx = std::stoul(cols[0]);
    require(idx == pts.size(), "landmark rows out of order in " + path);
    pts.emplace_back(std::stod(cols[1]), std::stod(cols[2]));
  }
  return pts;
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream f = open_out(path);
  f << "identity,split,image_path,landmark_path\n";
  for (const ManifestRow& r : rows)
    f << r.identity << "," << r.split << "," << r.image_path << "," << r.landmark_path << "\n";
  require(f.good(), "short write: " + path);
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream f = open_in(path);
  std::string line;
  std::getline(f, line);
  require(trim(line) == "identity,split,image_path,landmark_path",
          "bad manifest header in " + path);
  std::vector<ManifestRow> rows;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    auto cols = split(line, ',');
    require(cols.size() == 4, "bad manifest row in " + path);
    rows.push_back(ManifestRow{std::stoi(cols[0]), cols[1], cols[2], cols[3]});
  }
  return rows;
}

Config Config::load(const std::string& path) { return from_string(read_text_file(path)); }

Config Config::from_string(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    require(eq != std::string::npos, "config line missing '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    require(!key.empty(), "config line with empty key: " + line);
    c.kv_[key] = value;
  }
  return c;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stoi(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' is not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw std::invalid_argument("config key '" + key + "' is not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "' is not a boolean: " + v);
}

std::string Config::require_string(const std::string& key) const {
  auto it = kv_.find(key);
  require(it != kv_.end(), "missing required config key '" + key + "'");
  return it->second;
}

void append_doubles(std::ostream& out, const Array& a) {
  static_assert(sizeof(double) == 8);
  // host is little-endian on all supported targets; write raw
  out.write(reinterpret_cast<const char*>(a.data()), std::streamsize(a.size()) * 8);
}

Array read_doubles(std::istream& in, Eigen::Index n) {
  Array a(n);
  in.read(reinterpret_cast<char*>(a.data()), std::streamsize(n) * 8);
  require(in.gcount() == std::streamsize(n) * 8, "truncated double block");
  return a;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r' && ch != '\n') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream f = open_in(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f = open_out(path, std::ios::binary);
  f << content;
  require(f.good(), "short write: " + path);
}

}  // namespace facet
