#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "facet/common.hpp"
#include "facet/tensor.hpp"

namespace facet {

// ---- images ----------------------------------------------------------------
// Grayscale images are Tensor[1,H,W] with values in [0,1]; written as binary
// PGM (P5, maxval 255). Color overlays are Tensor[3,H,W], written as PPM (P6).

void write_pgm(const std::string& path, const Tensor& image);
Tensor read_pgm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

// ---- landmarks -------------------------------------------------------------
// CSV with one row per point: `index,x,y`.

void write_landmarks(const std::string& path, const Landmarks& pts);
Landmarks read_landmarks(const std::string& path);

// ---- dataset manifest ------------------------------------------------------
// CSV with header `identity,split,image_path,landmark_path`; paths relative
// to the manifest's directory.

struct ManifestRow {
  int identity = 0;
  std::string split;  // "train" | "test"
  std::string image_path;
  std::string landmark_path;
};

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

// ---- configuration ---------------------------------------------------------
// Flat `key = value` text files; '#' starts a comment; later keys override
// earlier ones. Typed getters with defaults plus required-key variants.

class Config {
 public:
  Config() = default;
  static Config load(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string require_string(const std::string& key) const;
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

// ---- raw numeric blocks ----------------------------------------------------
// Little-endian double arrays for checkpoint payloads (byte-exact round trip).

void append_doubles(std::ostream& out, const Array& a);
Array read_doubles(std::istream& in, Eigen::Index n);

// ---- small helpers ---------------------------------------------------------

std::vector<std::string> split(const std::string& line, char sep);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace facet
