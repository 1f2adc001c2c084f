#include "facet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "facet/io.hpp"

#ifndef FACET_DATA_DIR
#define FACET_DATA_DIR "data"
#endif

namespace facet {

namespace {

constexpr double kInsideTol = -1e-9;

double cross2(const Vector2d& u, const Vector2d& v) { return u.x() * v.y() - u.y() * v.x(); }

/// Lowest-index triangle of an arbitrary point set containing p, or -1.
/// The tolerance admits points on shared edges; lowest index breaks ties.
/// Template triangles are stored with positive orientation, so a negative
/// orientation here marks a fold artifact of a warped mesh; such triangles
/// are skipped (their mirror-image coverage is spurious).
int find_triangle(const Vector2d& p, const std::vector<std::array<int, 3>>& triangles,
                  const std::vector<Vector2d>& pts, Eigen::Vector3d* coords_out) {
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto& tr = triangles[t];
    const Vector2d &a = pts[std::size_t(tr[0])], &b = pts[std::size_t(tr[1])],
                   &c = pts[std::size_t(tr[2])];
    if (cross2(b - a, c - a) < 1e-12) continue;  // degenerate or flipped
    Eigen::Vector3d w = barycentric_coords(p, a, b, c);
    if (w[0] >= kInsideTol && w[1] >= kInsideTol && w[2] >= kInsideTol) {
      if (coords_out) *coords_out = w;
      return int(t);
    }
  }
  return -1;
}

std::vector<Vector2d> all_points(const FaceTemplate& tpl) {
  std::vector<Vector2d> pts = tpl.landmarks;
  pts.insert(pts.end(), tpl.boundary.begin(), tpl.boundary.end());
  return pts;
}

/// Target-side mesh vertices: warped landmarks + the target image's own
/// boundary control points in template order (corners, then midpoints).
std::vector<Vector2d> target_points(const Landmarks& target_landmarks, int w, int h) {
  std::vector<Vector2d> pts = target_landmarks;
  const double fw = double(w), fh = double(h);
  pts.emplace_back(0.0, 0.0);
  pts.emplace_back(fw, 0.0);
  pts.emplace_back(fw, fh);
  pts.emplace_back(0.0, fh);
  pts.emplace_back(fw / 2, 0.0);
  pts.emplace_back(fw, fh / 2);
  pts.emplace_back(fw / 2, fh);
  pts.emplace_back(0.0, fh / 2);
  return pts;
}

}  // namespace

FaceTemplate FaceTemplate::load(const std::string& path) {
  std::istringstream in(read_text_file(path));
  FaceTemplate tpl;
  std::string line;
  auto next_line = [&](const char* what) {
    while (std::getline(in, line)) {
      if (!line.empty() && line[0] == '#') continue;
      if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
      return;
    }
    throw std::invalid_argument(std::string("template file ended before ") + what);
  };

  auto read_points = [&](int n, Landmarks& dst, int base) {
    for (int i = 0; i < n; ++i) {
      next_line("point row");
      std::istringstream row(line);
      int idx;
      double x, y;
      require(bool(row >> idx >> x >> y), "bad point row: " + line);
      require(idx == base + i, "point rows out of order: " + line);
      dst.emplace_back(x, y);
    }
  };

  next_line("size");
  {
    std::istringstream row(line);
    std::string tag;
    require(bool(row >> tag >> tpl.width >> tpl.height) && tag == "size",
            "expected 'size W H': " + line);
  }
  next_line("landmarks header");
  {
    std::istringstream row(line);
    std::string tag;
    int n;
    require(bool(row >> tag >> n) && tag == "landmarks", "expected 'landmarks N': " + line);
    read_points(n, tpl.landmarks, 0);
  }
  next_line("boundary header");
  {
    std::istringstream row(line);
    std::string tag;
    int n;
    require(bool(row >> tag >> n) && tag == "boundary", "expected 'boundary M': " + line);
    read_points(n, tpl.boundary, int(tpl.landmarks.size()));
  }
  next_line("triangles header");
  {
    std::istringstream row(line);
    std::string tag;
    int n;
    require(bool(row >> tag >> n) && tag == "triangles", "expected 'triangles T': " + line);
    for (int t = 0; t < n; ++t) {
      next_line("triangle row");
      std::istringstream tr(line);
      std::array<int, 3> idx{};
      require(bool(tr >> idx[0] >> idx[1] >> idx[2]), "bad triangle row: " + line);
      for (int v : idx)
        require(v >= 0 && v < tpl.num_points(), "triangle vertex out of range: " + line);
      tpl.triangles.push_back(idx);
    }
  }
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream row(line);
    std::string tag, name;
    int n;
    require(bool(row >> tag >> name >> n) && tag == "region", "expected 'region NAME V': " + line);
    Landmarks poly;
    for (int i = 0; i < n; ++i) {
      next_line("region vertex");
      std::istringstream v(line);
      double x, y;
      require(bool(v >> x >> y), "bad region vertex: " + line);
      poly.emplace_back(x, y);
    }
    tpl.regions[name] = std::move(poly);
  }

  require(tpl.width > 0 && tpl.height > 0, "template size must be positive");
  require(tpl.landmarks.size() == 68, "template must have 68 landmarks");
  require(!tpl.triangles.empty(), "template has no triangles");
  return tpl;
}

const FaceTemplate& FaceTemplate::standard() {
  static const FaceTemplate tpl = [] {
    const char* env = std::getenv("FACET_DATA_DIR");
    std::string dir = env ? env : FACET_DATA_DIR;
    return load(dir + "/face_template.txt");
  }();
  return tpl;
}

Eigen::Vector3d barycentric_coords(const Vector2d& p, const Vector2d& a, const Vector2d& b,
                                   const Vector2d& c) {
  const Vector2d ab = b - a, ac = c - a;
  const double det = cross2(ab, ac);
  require(std::abs(det) * 0.5 >= 1e-12, "degenerate triangle in barycentric_coords");
  const Vector2d ap = p - a;
  const double beta = cross2(ap, ac) / det;
  const double gamma = cross2(ab, ap) / det;
  return {1.0 - beta - gamma, beta, gamma};
}

BarycentricAnchor anchor_point(const Vector2d& p, const FaceTemplate& tpl) {
  Eigen::Vector3d w;
  const int t = find_triangle(p, tpl.triangles, all_points(tpl), &w);
  require(t >= 0, "point (" + std::to_string(p.x()) + "," + std::to_string(p.y()) +
                      ") lies outside the template mesh");
  return BarycentricAnchor{t, w[0], w[1], w[2]};
}

std::array<BarycentricAnchor, 4> place_occluder(const OccluderSpec& spec, const FaceTemplate& tpl,
                                                Rng& rng) {
  const std::vector<Vector2d> pts = all_points(tpl);
  double min_x = 1e30, max_x = -1e30, min_y = 1e30, max_y = -1e30;
  for (const Vector2d& p : tpl.landmarks) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }

  for (int attempt = 0; attempt < 100; ++attempt) {
    double w = 32.0, h = 12.0;
    if (spec.size_mode == SizeMode::Dynamic) {
      w = rng.uniform(12.0, 32.0);
      h = rng.uniform(12.0, 32.0);
    }
    const double lo_x = min_x + w / 2, hi_x = max_x - w / 2;
    const double lo_y = min_y + h / 2, hi_y = max_y - h / 2;
    if (lo_x >= hi_x || lo_y >= hi_y) continue;  // rectangle larger than face
    const double cx = rng.uniform(lo_x, hi_x);
    const double cy = rng.uniform(lo_y, hi_y);
    const std::array<Vector2d, 4> corners = {
        Vector2d(cx - w / 2, cy - h / 2),  // top-left, then clockwise
        Vector2d(cx + w / 2, cy - h / 2),
        Vector2d(cx + w / 2, cy + h / 2),
        Vector2d(cx - w / 2, cy + h / 2),
    };
    std::array<BarycentricAnchor, 4> anchors;
    bool ok = true;
    for (int i = 0; i < 4 && ok; ++i) {
      Eigen::Vector3d wgt;
      const int t = find_triangle(corners[std::size_t(i)], tpl.triangles, pts, &wgt);
      const auto& tr = t >= 0 ? tpl.triangles[std::size_t(t)] : std::array<int, 3>{68, 68, 68};
      if (t < 0 || std::max({tr[0], tr[1], tr[2]}) >= 68) {
        ok = false;  // corner outside the landmark-only part of the mesh
      } else {
        anchors[std::size_t(i)] = BarycentricAnchor{t, wgt[0], wgt[1], wgt[2]};
      }
    }
    if (ok) return anchors;
  }
  throw std::invalid_argument("could not place occluder after 100 attempts");
}

std::array<Vector2d, 4> warp_anchors(const std::array<BarycentricAnchor, 4>& anchors,
                                     const FaceTemplate& tpl,
                                     const Landmarks& target_landmarks) {
  require(target_landmarks.size() == tpl.landmarks.size(),
          "target landmark count does not match template");
  std::array<Vector2d, 4> out;
  for (int i = 0; i < 4; ++i) {
    const BarycentricAnchor& a = anchors[std::size_t(i)];
    require(a.triangle_index >= 0 && a.triangle_index < int(tpl.triangles.size()),
            "anchor triangle index out of range");
    const auto& tr = tpl.triangles[std::size_t(a.triangle_index)];
    require(std::max({tr[0], tr[1], tr[2]}) < int(target_landmarks.size()),
            "anchor references a boundary vertex; cannot warp by landmarks alone");
    out[std::size_t(i)] = a.alpha * target_landmarks[std::size_t(tr[0])] +
                          a.beta * target_landmarks[std::size_t(tr[1])] +
                          a.gamma * target_landmarks[std::size_t(tr[2])];
  }
  return out;
}

Tensor render_occlusion(const Tensor& image, const std::array<Vector2d, 4>& quad, FillMode fill,
                        Rng& rng, bool* degenerate_quad) {
  require(image.rank() == 3, "render_occlusion expects an image tensor [C,H,W]");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (degenerate_quad) *degenerate_quad = false;

  std::array<Vector2d, 4> q = quad;
  for (Vector2d& v : q) {
    v.x() = std::clamp(v.x(), 0.0, double(w));
    v.y() = std::clamp(v.y(), 0.0, double(h));
  }
  // shoelace area of the clamped quadrilateral
  double area2 = 0.0;
  for (int i = 0; i < 4; ++i) area2 += cross2(q[std::size_t(i)], q[std::size_t((i + 1) % 4)]);
  if (std::abs(area2) * 0.5 < 1e-12) {
    if (degenerate_quad) *degenerate_quad = true;
    return image;
  }

  auto in_tri = [](const Vector2d& p, const Vector2d& a, const Vector2d& b, const Vector2d& c2) {
    const double det = cross2(b - a, c2 - a);
    if (std::abs(det) < 1e-15) return false;
    const double beta = cross2(p - a, c2 - a) / det;
    const double gamma = cross2(b - a, p - a) / det;
    const double alpha = 1.0 - beta - gamma;
    return alpha >= kInsideTol && beta >= kInsideTol && gamma >= kInsideTol;
  };

  Tensor out = image;
  const Eigen::Index plane = Eigen::Index(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vector2d p(x + 0.5, y + 0.5);
      if (!in_tri(p, q[0], q[1], q[2]) && !in_tri(p, q[0], q[2], q[3])) continue;
      double v = 0.0;
      if (fill == FillMode::GaussianNoise) v = std::clamp(rng.normal(0.5, 0.25), 0.0, 1.0);
      for (int ch = 0; ch < c; ++ch) out.values[ch * plane + Eigen::Index(y) * w + x] = v;
    }
  return out;
}

std::optional<Vector2d> try_to_canonical(const Vector2d& p, const Landmarks& target_landmarks,
                                         const FaceTemplate& tpl, int img_w, int img_h) {
  require(target_landmarks.size() == tpl.landmarks.size(),
          "target landmark count does not match template");
  const std::vector<Vector2d> tgt = target_points(target_landmarks, img_w, img_h);
  Eigen::Vector3d w;
  const int t = find_triangle(p, tpl.triangles, tgt, &w);
  if (t < 0) return std::nullopt;
  const auto& tr = tpl.triangles[std::size_t(t)];
  const std::vector<Vector2d> src = all_points(tpl);
  return Vector2d(w[0] * src[std::size_t(tr[0])] + w[1] * src[std::size_t(tr[1])] +
                  w[2] * src[std::size_t(tr[2])]);
}

Vector2d to_canonical(const Vector2d& p, const Landmarks& target_landmarks,
                      const FaceTemplate& tpl, int img_w, int img_h) {
  std::optional<Vector2d> out = try_to_canonical(p, target_landmarks, tpl, img_w, img_h);
  require(out.has_value(), "point (" + std::to_string(p.x()) + "," + std::to_string(p.y()) +
                               ") lies outside the target mesh");
  return *out;
}

bool point_in_polygon(const Vector2d& p, const Landmarks& polygon) {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vector2d &a = polygon[i], &b = polygon[j];
    // on-edge counts as inside
    const double d = cross2(b - a, p - a);
    const double lo = std::min(a.x(), b.x()), hi = std::max(a.x(), b.x());
    const double lo_y = std::min(a.y(), b.y()), hi_y = std::max(a.y(), b.y());
    if (std::abs(d) < 1e-12 && p.x() >= lo - 1e-12 && p.x() <= hi + 1e-12 &&
        p.y() >= lo_y - 1e-12 && p.y() <= hi_y + 1e-12)
      return true;
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_int = a.x() + (p.y() - a.y()) / (b.y() - a.y()) * (b.x() - a.x());
      if (p.x() < x_int) inside = !inside;
    }
  }
  return inside;
}

}  // namespace facet
