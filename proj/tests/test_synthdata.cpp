#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "facet/io.hpp"
#include "facet/synthdata.hpp"

using facet::Dataset;
using facet::DatasetSpec;
using facet::FaceSample;
using facet::FaceTemplate;
using facet::IdentityParams;
using facet::Landmarks;
using facet::Pose;
using facet::Rng;
using facet::Tensor;
using facet::Vector2d;

namespace {

namespace fs = std::filesystem;

std::string fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("facet_synth_" + name);
  fs::remove_all(p);
  return p.string();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

// Relative path -> file bytes for every regular file under root.
std::map<std::string, std::string> tree_contents(const std::string& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      out[fs::relative(entry.path(), root).string()] = read_bytes(entry.path());
  return out;
}

Vector2d group_mean(const Landmarks& lm, int lo, int hi) {
  Vector2d c(0, 0);
  for (int i = lo; i <= hi; ++i) c += lm[std::size_t(i)];
  return c / double(hi - lo + 1);
}

// Darkness-weighted centroid of the pixels whose centres fall inside
// [lo, hi], weighting by how far below the skin tone each pixel sits.
Vector2d ink_centroid(const Tensor& img, double skin, const Vector2d& lo, const Vector2d& hi) {
  const int h = img.dim(1), w = img.dim(2);
  double wsum = 0.0;
  Vector2d acc(0, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Vector2d p(x + 0.5, y + 0.5);
      if (p.x() < lo.x() || p.x() > hi.x() || p.y() < lo.y() || p.y() > hi.y()) continue;
      const double wgt = std::max(0.0, skin - img.values[Eigen::Index(y) * w + x]);
      wsum += wgt;
      acc += wgt * p;
    }
  REQUIRE(wsum > 0.0);
  return acc / wsum;
}

void bbox(const Landmarks& lm, int lo, int hi, Vector2d& mn, Vector2d& mx) {
  mn = Vector2d(1e30, 1e30);
  mx = Vector2d(-1e30, -1e30);
  for (int i = lo; i <= hi; ++i) {
    mn = mn.cwiseMin(lm[std::size_t(i)]);
    mx = mx.cwiseMax(lm[std::size_t(i)]);
  }
}

bool same_params(const IdentityParams& a, const IdentityParams& b) {
  return a.eye_dx == b.eye_dx && a.eye_dy == b.eye_dy && a.eye_scale == b.eye_scale &&
         a.brow_dy == b.brow_dy && a.nose_len == b.nose_len && a.nose_width == b.nose_width &&
         a.mouth_scale == b.mouth_scale && a.mouth_dy == b.mouth_dy &&
         a.mouth_curve == b.mouth_curve && a.jaw_scale == b.jaw_scale &&
         a.skin_level == b.skin_level && a.eye_level == b.eye_level &&
         a.brow_level == b.brow_level && a.nose_level == b.nose_level &&
         a.mouth_level == b.mouth_level && a.jaw_level == b.jaw_level;
}

}  // namespace

TEST_CASE("identity parameters: deterministic derivation within bounds") {
  const IdentityParams a = IdentityParams::derive(7, 3);
  const IdentityParams b = IdentityParams::derive(7, 3);
  CHECK(same_params(a, b));
  CHECK_FALSE(same_params(a, IdentityParams::derive(7, 4)));
  CHECK_FALSE(same_params(a, IdentityParams::derive(8, 3)));

  for (std::uint64_t seed : {1ull, 2ull, 3ull})
    for (int id = 0; id < 30; ++id) CHECK_NOTHROW(IdentityParams::derive(seed, id).validate());

  IdentityParams bad;
  bad.eye_dx = 3.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = IdentityParams{};
  bad.skin_level = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(IdentityParams::derive(1, -1), std::invalid_argument);
}

TEST_CASE("render: identity pose carries morphed template landmarks exactly") {
  const FaceTemplate& tpl = FaceTemplate::standard();
  const IdentityParams id = IdentityParams::derive(5, 0);
  Rng rng(1);
  const FaceSample s = facet::render_face(tpl, id, Pose{}, 96, 0.0, rng);

  CHECK(s.image.dim(0) == 1);
  CHECK(s.image.dim(1) == 96);
  CHECK(s.image.dim(2) == 96);
  REQUIRE(s.landmarks.size() == 68);
  CHECK((s.image.values >= 0.0).all());
  CHECK((s.image.values <= 1.0).all());

  const Landmarks expect = facet::identity_landmarks(tpl, id);
  for (std::size_t i = 0; i < 68; ++i) {
    CHECK(s.landmarks[i].x() == expect[i].x());
    CHECK(s.landmarks[i].y() == expect[i].y());
  }

  // At other sizes the template is scaled by size/96 before posing; the
  // identity pose must still be an exact pass-through of the scaled points.
  Rng rng2(1);
  const FaceSample half = facet::render_face(tpl, id, Pose{}, 48, 0.0, rng2);
  const double sc = 48.0 / 96.0;
  for (std::size_t i = 0; i < 68; ++i) {
    CHECK(half.landmarks[i].x() == sc * expect[i].x());
    CHECK(half.landmarks[i].y() == sc * expect[i].y());
  }
}

TEST_CASE("render: bit-identical re-renders, noise controlled by the rng") {
  const FaceTemplate& tpl = FaceTemplate::standard();
  const IdentityParams id = IdentityParams::derive(9, 2);
  Pose pose;
  pose.rotation_deg = 12.0;
  pose.scale_x = 1.1;
  pose.scale_y = 0.92;
  pose.tx = 3.0;
  pose.ty = -2.0;

  Rng r1(42), r2(42), r3(43);
  const FaceSample a = facet::render_face(tpl, id, pose, 64, 0.02, r1);
  const FaceSample b = facet::render_face(tpl, id, pose, 64, 0.02, r2);
  const FaceSample c = facet::render_face(tpl, id, pose, 64, 0.02, r3);
  CHECK((a.image.values == b.image.values).all());
  CHECK_FALSE((a.image.values == c.image.values).all());
  for (std::size_t i = 0; i < 68; ++i) {
    CHECK((a.landmarks[i] - b.landmarks[i]).norm() == 0.0);
    CHECK((a.landmarks[i] - c.landmarks[i]).norm() == 0.0);  // noise never moves landmarks
  }
}

TEST_CASE("render: rotation rotates landmarks about the image centre") {
  const FaceTemplate& tpl = FaceTemplate::standard();
  const IdentityParams id = IdentityParams::derive(3, 1);
  Pose base;
  base.scale_x = 1.08;
  base.scale_y = 0.94;
  base.tx = 2.5;
  base.ty = -1.5;
  Pose rot = base;
  rot.rotation_deg = 17.0;

  Rng r1(1), r2(1);
  const FaceSample s0 = facet::render_face(tpl, id, base, 64, 0.0, r1);
  const FaceSample s1 = facet::render_face(tpl, id, rot, 64, 0.0, r2);

  const double th = 17.0 * M_PI / 180.0;
  const double ct = std::cos(th), st = std::sin(th);
  const Vector2d centre(32.0, 32.0);
  for (std::size_t i = 0; i < 68; ++i) {
    const Vector2d q = s0.landmarks[i] - centre;
    const Vector2d expect = Vector2d(ct * q.x() - st * q.y(), st * q.x() + ct * q.y()) + centre;
    CHECK((s1.landmarks[i] - expect).norm() < 1e-9);
  }
}

TEST_CASE("render: pose and noise ranges are enforced") {
  const FaceTemplate& tpl = FaceTemplate::standard();
  const IdentityParams id;
  auto render = [&](Pose p, int size, double noise) {
    Rng r(1);
    return facet::render_face(tpl, id, p, size, noise, r);
  };
  Pose p;
  p.rotation_deg = 31.0;
  CHECK_THROWS_AS(render(p, 96, 0.0), std::invalid_argument);
  p = Pose{};
  p.scale_x = 0.79;
  CHECK_THROWS_AS(render(p, 96, 0.0), std::invalid_argument);
  p = Pose{};
  p.scale_y = 1.21;
  CHECK_THROWS_AS(render(p, 96, 0.0), std::invalid_argument);
  p = Pose{};
  p.tx = 12.5;  // > 96/8
  CHECK_THROWS_AS(render(p, 96, 0.0), std::invalid_argument);
  p = Pose{};
  p.ty = -12.5;
  CHECK_THROWS_AS(render(p, 96, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(render(Pose{}, 96, 0.021), std::invalid_argument);
  CHECK_THROWS_AS(render(Pose{}, 96, -0.001), std::invalid_argument);
  CHECK_THROWS_AS(render(Pose{}, 8, 0.0), std::invalid_argument);
  CHECK_NOTHROW(render(Pose{}, 96, 0.02));
}

TEST_CASE("render: part centres coincide with their landmark groups") {
  const FaceTemplate& tpl = FaceTemplate::standard();
  std::vector<IdentityParams> ids = {IdentityParams{}, IdentityParams::derive(11, 0),
                                     IdentityParams::derive(11, 1)};
  for (const IdentityParams& id : ids) {
    Rng rng(1);
    const FaceSample s = facet::render_face(tpl, id, Pose{}, 96, 0.0, rng);
    Vector2d mn, mx;
    for (int lo : {36, 42}) {
      bbox(s.landmarks, lo, lo + 5, mn, mx);
      const Vector2d centre = ink_centroid(s.image, id.skin_level, mn - Vector2d(2, 2),
                                           mx + Vector2d(2, 2));
      CHECK((centre - group_mean(s.landmarks, lo, lo + 5)).norm() < 0.5);
    }
  }
  // Mouth: checked at the neutral identity, whose window clears the jaw line.
  Rng rng(1);
  const IdentityParams id;
  const FaceSample s = facet::render_face(tpl, id, Pose{}, 96, 0.0, rng);
  Vector2d mn, mx;
  bbox(s.landmarks, 48, 59, mn, mx);
  const Vector2d centre =
      ink_centroid(s.image, id.skin_level, mn - Vector2d(1.5, 1.5), mx + Vector2d(1.5, 1.5));
  CHECK((centre - group_mean(s.landmarks, 48, 67)).norm() < 0.5);
}

TEST_CASE("gen_dataset: counts, byte-identical reruns, split layout") {
  DatasetSpec spec;  // 10 ids x 20 samples, 32 px
  const std::string dir_a = fresh_dir("a");
  const std::string dir_b = fresh_dir("b");
  const std::string dir_c = fresh_dir("c");
  facet::gen_dataset(spec, 77, dir_a);
  facet::gen_dataset(spec, 77, dir_b);
  facet::gen_dataset(spec, 78, dir_c);

  const auto count_files = [](const std::string& d) {
    return std::distance(fs::directory_iterator(d), fs::directory_iterator{});
  };
  CHECK(count_files(dir_a + "/images") == 200);
  CHECK(count_files(dir_a + "/landmarks") == 200);

  const std::vector<facet::ManifestRow> rows = facet::read_manifest(dir_a + "/manifest.csv");
  REQUIRE(rows.size() == 200);

  const auto tree_a = tree_contents(dir_a);
  CHECK(tree_a == tree_contents(dir_b));
  CHECK(tree_a != tree_contents(dir_c));

  std::set<int> train_ids, test_ids;
  std::map<int, int> train_count;
  for (const auto& row : rows) {
    REQUIRE((row.split == "train" || row.split == "test"));
    (row.split == "train" ? train_ids : test_ids).insert(row.identity);
    if (row.split == "train") ++train_count[row.identity];
  }
  CHECK(train_ids.size() == 10);  // every identity in both splits
  CHECK(test_ids.size() == 10);
  for (const auto& [id, n] : train_count) CHECK(n == 16);  // 0.8 * 20

  DatasetSpec bad = spec;
  bad.num_ids = 1;
  CHECK_THROWS_AS(facet::gen_dataset(bad, 1, fresh_dir("bad")), std::invalid_argument);
  bad = spec;
  bad.train_fraction = 1.0;
  CHECK_THROWS_AS(facet::gen_dataset(bad, 1, fresh_dir("bad")), std::invalid_argument);
  CHECK_THROWS(facet::gen_dataset(spec, 1, "/dev/null/nested"));
}

TEST_CASE("dataset loading and raw-pixel separability") {
  DatasetSpec spec;
  const std::string dir = fresh_dir("load");
  facet::gen_dataset(spec, 123, dir);
  const Dataset ds = facet::load_dataset(dir + "/manifest.csv");

  REQUIRE(ds.samples.size() == 200);
  CHECK(ds.num_ids == 10);
  CHECK(ds.image_size == 32);
  for (int i = 0; i < 20; ++i) CHECK(ds.samples[std::size_t(i)].identity == 0);
  CHECK(ds.samples[20].identity == 1);

  const auto train = ds.split_indices("train");
  const auto test = ds.split_indices("test");
  CHECK(train.size() == 160);
  CHECK(test.size() == 40);
  std::set<std::size_t> seen(train.begin(), train.end());
  for (std::size_t i : test) CHECK(seen.insert(i).second);  // disjoint
  CHECK(seen.size() == 200);

  for (const FaceSample& s : ds.samples) {
    REQUIRE(s.landmarks.size() == 68);
    for (const Vector2d& p : s.landmarks) {
      CHECK(p.x() > 0.0);
      CHECK(p.x() < 32.0);
      CHECK(p.y() > 0.0);
      CHECK(p.y() < 32.0);
    }
  }

  // Baseline oracle: identities must be separable from raw pixels alone.
  std::vector<facet::Array> centroid(10, facet::Array::Zero(32 * 32));
  std::vector<int> count(10, 0);
  for (std::size_t i : train) {
    centroid[std::size_t(ds.samples[i].identity)] += ds.samples[i].image.values;
    ++count[std::size_t(ds.samples[i].identity)];
  }
  for (int id = 0; id < 10; ++id) centroid[std::size_t(id)] /= double(count[std::size_t(id)]);
  int correct = 0;
  for (std::size_t i : test) {
    int best = -1;
    double best_d = 1e300;
    for (int id = 0; id < 10; ++id) {
      const double d = (ds.samples[i].image.values - centroid[std::size_t(id)]).matrix().norm();
      if (d < best_d) {
        best_d = d;
        best = id;
      }
    }
    correct += best == ds.samples[i].identity;
  }
  const double accuracy = double(correct) / double(test.size());
  CHECK(accuracy > 1.0 / 10.0);
  CHECK(accuracy >= 0.5);  // identities are designed to be clearly separable

  CHECK_THROWS_AS(facet::load_dataset(dir + "/missing.csv"), std::invalid_argument);
}
