#include "facet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "facet/io.hpp"

namespace facet {
namespace {

// Landmark group ranges (standard 68-point layout, matching the template):
// jaw 0-16, left brow 17-21, right brow 22-26, nose bridge 27-30, nose base
// 31-35, left eye 36-41, right eye 42-47, mouth outer 48-59, inner 60-67.

Vector2d group_mean(const Landmarks& lm, int lo, int hi) {
  Vector2d c(0, 0);
  for (int i = lo; i <= hi; ++i) c += lm[std::size_t(i)];
  return c / double(hi - lo + 1);
}

// ---- tiny rasterizer ---------------------------------------------------------

struct Canvas {
  int size;
  Array px;     // current image, row-major
  Array alpha;  // scratch coverage buffer for one part at a time

  explicit Canvas(int n, double background)
      : size(n), px(Array::Constant(Eigen::Index(n) * n, background)),
        alpha(Array::Zero(Eigen::Index(n) * n)) {}

  // Accumulates coverage as a per-pixel max so overlapping strokes of one
  // part do not double-darken.
  void add_alpha(int x, int y, double a) {
    if (x < 0 || x >= size || y < 0 || y >= size) return;
    double& slot = alpha[Eigen::Index(y) * size + x];
    slot = std::max(slot, std::min(1.0, std::max(0.0, a)));
  }

  // Composites the accumulated part coverage at the given ink level.
  void commit(double level) {
    for (Eigen::Index i = 0; i < px.size(); ++i) {
      if (alpha[i] > 0.0) px[i] = px[i] * (1.0 - alpha[i]) + level * alpha[i];
      alpha[i] = 0.0;
    }
  }
};

double segment_distance(const Vector2d& p, const Vector2d& a, const Vector2d& b) {
  const Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

void stroke_polyline(Canvas& c, const std::vector<Vector2d>& pts, bool closed, double half_width,
                     double level) {
  const std::size_t n = pts.size();
  if (n < 2) return;
  const std::size_t segs = closed ? n : n - 1;
  for (std::size_t s = 0; s < segs; ++s) {
    const Vector2d& a = pts[s];
    const Vector2d& b = pts[(s + 1) % n];
    const int x0 = int(std::floor(std::min(a.x(), b.x()) - half_width - 1));
    const int x1 = int(std::ceil(std::max(a.x(), b.x()) + half_width + 1));
    const int y0 = int(std::floor(std::min(a.y(), b.y()) - half_width - 1));
    const int y1 = int(std::ceil(std::max(a.y(), b.y()) + half_width + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Vector2d p(x + 0.5, y + 0.5);
        c.add_alpha(x, y, half_width + 0.5 - segment_distance(p, a, b));
      }
  }
  c.commit(level);
}

void fill_ellipse(Canvas& c, const Vector2d& centre, double rx, double ry, double level) {
  if (rx <= 0.0 || ry <= 0.0) return;
  const int x0 = int(std::floor(centre.x() - rx - 1));
  const int x1 = int(std::ceil(centre.x() + rx + 1));
  const int y0 = int(std::floor(centre.y() - ry - 1));
  const int y1 = int(std::ceil(centre.y() + ry + 1));
  const double edge = std::min(rx, ry);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const Vector2d p(x + 0.5, y + 0.5);
      const double dx = (p.x() - centre.x()) / rx;
      const double dy = (p.y() - centre.y()) / ry;
      const double r = std::sqrt(dx * dx + dy * dy);
      c.add_alpha(x, y, (1.0 - r) * edge + 0.5);
    }
  c.commit(level);
}

std::vector<Vector2d> slice(const Landmarks& lm, int lo, int hi) {
  return std::vector<Vector2d>(lm.begin() + lo, lm.begin() + hi + 1);
}

std::string sample_name(int identity, int sample) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id%03d_s%03d", identity, sample);
  return buf;
}

}  // namespace

IdentityParams IdentityParams::derive(std::uint64_t dataset_seed, int identity_index) {
  require(identity_index >= 0, "identity index must be non-negative");
  // Tagged salt keeps the parameter stream disjoint from the per-sample pose
  // and noise streams, which fork from the same dataset seed.
  Rng r = Rng(dataset_seed).fork(0xFACE0000ull + std::uint64_t(identity_index));
  IdentityParams p;
  p.eye_dx = r.uniform(-2.0, 2.0);
  p.eye_dy = r.uniform(-1.2, 1.2);
  p.eye_scale = r.uniform(0.85, 1.15);
  p.brow_dy = r.uniform(-1.5, 1.5);
  p.nose_len = r.uniform(-2.5, 2.5);
  p.nose_width = r.uniform(0.85, 1.15);
  p.mouth_scale = r.uniform(0.85, 1.15);
  p.mouth_dy = r.uniform(-1.5, 1.5);
  p.mouth_curve = r.uniform(-1.5, 1.5);
  p.jaw_scale = r.uniform(0.92, 1.08);
  p.skin_level = r.uniform(0.70, 0.86);
  p.eye_level = r.uniform(0.05, 0.20);
  p.brow_level = r.uniform(0.20, 0.40);
  p.nose_level = r.uniform(0.35, 0.55);
  p.mouth_level = r.uniform(0.18, 0.38);
  p.jaw_level = r.uniform(0.40, 0.60);
  return p;
}

void IdentityParams::validate() const {
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  require(in(eye_dx, -2, 2) && in(eye_dy, -1.2, 1.2) && in(eye_scale, 0.85, 1.15) &&
              in(brow_dy, -1.5, 1.5) && in(nose_len, -2.5, 2.5) && in(nose_width, 0.85, 1.15) &&
              in(mouth_scale, 0.85, 1.15) && in(mouth_dy, -1.5, 1.5) &&
              in(mouth_curve, -1.5, 1.5) && in(jaw_scale, 0.92, 1.08),
          "identity geometry offsets out of documented bounds");
  require(in(skin_level, 0.70, 0.86) && in(eye_level, 0.05, 0.20) &&
              in(brow_level, 0.20, 0.40) && in(nose_level, 0.35, 0.55) &&
              in(mouth_level, 0.18, 0.38) && in(jaw_level, 0.40, 0.60),
          "identity intensity levels out of documented bounds");
}

Landmarks identity_landmarks(const FaceTemplate& tpl, const IdentityParams& id) {
  id.validate();
  Landmarks lm = tpl.landmarks;
  require(lm.size() == 68, "identity morphing expects the 68-point template");

  const Vector2d eye_l = group_mean(lm, 36, 41);
  const Vector2d eye_r = group_mean(lm, 42, 47);
  for (int i = 36; i <= 41; ++i)
    lm[std::size_t(i)] =
        eye_l + id.eye_scale * (lm[std::size_t(i)] - eye_l) + Vector2d(-id.eye_dx, id.eye_dy);
  for (int i = 42; i <= 47; ++i)
    lm[std::size_t(i)] =
        eye_r + id.eye_scale * (lm[std::size_t(i)] - eye_r) + Vector2d(id.eye_dx, id.eye_dy);

  for (int i = 17; i <= 21; ++i)
    lm[std::size_t(i)] += Vector2d(-id.eye_dx, id.eye_dy + id.brow_dy);
  for (int i = 22; i <= 26; ++i)
    lm[std::size_t(i)] += Vector2d(id.eye_dx, id.eye_dy + id.brow_dy);

  // Nose: stretch the bridge towards the tip and widen the base about the
  // subnasale column.
  const double nose_cx = lm[33].x();
  for (int i = 28; i <= 30; ++i) lm[std::size_t(i)].y() += id.nose_len * double(i - 27) / 3.0;
  for (int i = 31; i <= 35; ++i) {
    lm[std::size_t(i)].y() += id.nose_len;
    lm[std::size_t(i)].x() = nose_cx + id.nose_width * (lm[std::size_t(i)].x() - nose_cx);
  }

  const Vector2d mouth_c = group_mean(lm, 48, 67);
  for (int i = 48; i <= 67; ++i) {
    Vector2d rel = lm[std::size_t(i)] - mouth_c;
    rel.x() *= id.mouth_scale;
    lm[std::size_t(i)] = mouth_c + rel + Vector2d(0.0, id.mouth_dy);
  }
  lm[48].y() -= id.mouth_curve;
  lm[54].y() -= id.mouth_curve;
  lm[60].y() -= 0.5 * id.mouth_curve;
  lm[64].y() -= 0.5 * id.mouth_curve;

  const double jaw_cx = tpl.width / 2.0;
  for (int i = 0; i <= 16; ++i)
    lm[std::size_t(i)].x() = jaw_cx + id.jaw_scale * (lm[std::size_t(i)].x() - jaw_cx);

  return lm;
}

Vector2d apply_pose(const Vector2d& p, const Pose& pose, int image_size) {
  // The identity pose is an exact no-op so that frontal samples carry the
  // morphed template landmarks bit-for-bit (recentering would round).
  if (pose.rotation_deg == 0.0 && pose.scale_x == 1.0 && pose.scale_y == 1.0 && pose.tx == 0.0 &&
      pose.ty == 0.0)
    return p;
  const double c = image_size / 2.0;
  const Vector2d centre(c, c);
  Vector2d q((p.x() - c) * pose.scale_x + pose.tx, (p.y() - c) * pose.scale_y + pose.ty);
  const double th = pose.rotation_deg * M_PI / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  return Vector2d(ct * q.x() - st * q.y(), st * q.x() + ct * q.y()) + centre;
}

FaceSample render_face(const FaceTemplate& tpl, const IdentityParams& id, const Pose& pose,
                       int image_size, double noise_std, Rng& noise_rng) {
  require(image_size >= 16, "image size must be at least 16");
  require(std::abs(pose.rotation_deg) <= 30.0, "pose rotation must lie within +-30 degrees");
  require(pose.scale_x >= 0.8 && pose.scale_x <= 1.2 && pose.scale_y >= 0.8 &&
              pose.scale_y <= 1.2,
          "pose scales must lie within [0.8, 1.2]");
  require(std::abs(pose.tx) <= image_size / 8.0 && std::abs(pose.ty) <= image_size / 8.0,
          "pose translation must lie within an eighth of the image size");
  require(noise_std >= 0.0 && noise_std <= 0.02, "pixel noise std must lie in [0, 0.02]");

  const double s = double(image_size) / double(tpl.width);
  Landmarks morphed = identity_landmarks(tpl, id);
  Landmarks lm(morphed.size());
  for (std::size_t i = 0; i < morphed.size(); ++i)
    lm[i] = apply_pose(s * morphed[i], pose, image_size);

  const double stroke = s * (pose.scale_x + pose.scale_y) / 2.0;
  Canvas canvas(image_size, id.skin_level);

  stroke_polyline(canvas, slice(lm, 0, 16), false, 0.9 * stroke, id.jaw_level);
  stroke_polyline(canvas, slice(lm, 17, 21), false, 0.8 * stroke, id.brow_level);
  stroke_polyline(canvas, slice(lm, 22, 26), false, 0.8 * stroke, id.brow_level);
  stroke_polyline(canvas, slice(lm, 27, 30), false, 0.7 * stroke, id.nose_level);
  stroke_polyline(canvas, slice(lm, 31, 35), false, 0.7 * stroke, id.nose_level);

  for (int lo : {36, 42}) {
    const Vector2d c = group_mean(lm, lo, lo + 5);
    double rx = 0.0, ry = 0.0;
    for (int i = lo; i <= lo + 5; ++i) {
      rx = std::max(rx, std::abs(lm[std::size_t(i)].x() - c.x()));
      ry = std::max(ry, std::abs(lm[std::size_t(i)].y() - c.y()));
    }
    fill_ellipse(canvas, c, rx + 0.5 * stroke, ry + 0.5 * stroke, id.eye_level + 0.25);
    fill_ellipse(canvas, c, 0.62 * (rx + 0.5 * stroke), 0.9 * (ry + 0.5 * stroke), id.eye_level);
  }

  {
    const Vector2d c = group_mean(lm, 48, 67);
    double rx = 0.0, ry = 0.0;
    for (int i = 48; i <= 59; ++i) {
      rx = std::max(rx, std::abs(lm[std::size_t(i)].x() - c.x()));
      ry = std::max(ry, std::abs(lm[std::size_t(i)].y() - c.y()));
    }
    fill_ellipse(canvas, c, rx, ry, id.mouth_level);
    stroke_polyline(canvas, slice(lm, 60, 67), true, 0.45 * stroke,
                    std::max(0.0, id.mouth_level - 0.1));
  }

  if (noise_std > 0.0)
    for (Eigen::Index i = 0; i < canvas.px.size(); ++i)
      canvas.px[i] += noise_std * noise_rng.normal();
  canvas.px = canvas.px.cwiseMax(0.0).cwiseMin(1.0);

  FaceSample out;
  out.image = Tensor({1, image_size, image_size}, std::move(canvas.px));
  out.landmarks = std::move(lm);
  out.pose = pose;
  return out;
}

void gen_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::string& out_dir) {
  require(spec.num_ids >= 2, "at least two identities are required");
  require(spec.samples_per_id >= 2, "at least two samples per identity are required");
  require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0,
          "train fraction must lie strictly between 0 and 1");
  require(spec.max_rotation_deg >= 0.0 && spec.max_rotation_deg <= 30.0 &&
              spec.min_scale >= 0.8 && spec.max_scale <= 1.2 && spec.min_scale <= spec.max_scale,
          "dataset pose ranges exceed the render limits");
  require(spec.max_translation >= 0.0 && spec.max_translation <= spec.image_size / 8.0,
          "dataset translation range exceeds the render limits");

  const FaceTemplate& tpl = FaceTemplate::standard();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "landmarks");

  int n_train = int(std::lround(spec.train_fraction * spec.samples_per_id));
  n_train = std::clamp(n_train, 1, spec.samples_per_id - 1);

  Rng master(seed);
  std::vector<ManifestRow> rows;
  for (int id = 0; id < spec.num_ids; ++id) {
    const IdentityParams ip = IdentityParams::derive(seed, id);
    for (int sm = 0; sm < spec.samples_per_id; ++sm) {
      Rng sr = master.fork(std::uint64_t(id) * 1000003u + std::uint64_t(sm));
      Pose pose;
      if (sm > 0) {
        pose.rotation_deg = sr.uniform(-spec.max_rotation_deg, spec.max_rotation_deg);
        pose.scale_x = sr.uniform(spec.min_scale, spec.max_scale);
        pose.scale_y = sr.uniform(spec.min_scale, spec.max_scale);
        pose.tx = sr.uniform(-spec.max_translation, spec.max_translation);
        pose.ty = sr.uniform(-spec.max_translation, spec.max_translation);
      }
      FaceSample sample = render_face(tpl, ip, pose, spec.image_size, spec.noise_std, sr);
      const std::string name = sample_name(id, sm);
      write_pgm((fs::path(out_dir) / "images" / (name + ".pgm")).string(), sample.image);
      write_landmarks((fs::path(out_dir) / "landmarks" / (name + ".csv")).string(),
                      sample.landmarks);
      ManifestRow row;
      row.identity = id;
      row.split = sm < n_train ? "train" : "test";
      row.image_path = "images/" + name + ".pgm";
      row.landmark_path = "landmarks/" + name + ".csv";
      rows.push_back(std::move(row));
    }
  }
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), rows);
}

std::vector<std::size_t> Dataset::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  const std::vector<ManifestRow> rows = read_manifest(manifest_path);
  require(!rows.empty(), "dataset manifest is empty");
  Dataset ds;
  for (const ManifestRow& row : rows) {
    FaceSample s;
    s.image = read_pgm((base / row.image_path).string());
    s.landmarks = read_landmarks((base / row.landmark_path).string());
    s.identity = row.identity;
    s.split = row.split;
    require(s.identity >= 0, "negative identity label in manifest");
    ds.num_ids = std::max(ds.num_ids, s.identity + 1);
    if (ds.image_size == 0) ds.image_size = s.image.dim(1);
    require(s.image.dim(1) == ds.image_size && s.image.dim(2) == ds.image_size,
            "dataset images must share one size");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace facet
