#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "facet/common.hpp"
#include "facet/geometry.hpp"
#include "facet/tensor.hpp"

namespace facet {

/// In-plane pose: anisotropic scale about the image centre, then a
/// translation, then a rotation about the centre. Rotation is outermost so
/// that changing only the angle rotates every landmark about the centre
/// exactly.
struct Pose {
  double rotation_deg = 0.0;
  double scale_x = 1.0, scale_y = 1.0;
  double tx = 0.0, ty = 0.0;
};

/// Bounded per-identity geometry offsets and draw intensities, in canonical
/// 96-scale pixels. Derived deterministically from (dataset_seed, index).
struct IdentityParams {
  double eye_dx = 0.0;       // [-2, 2] px: eyes apart (+) / together (-)
  double eye_dy = 0.0;       // [-1.2, 1.2] px
  double eye_scale = 1.0;    // [0.85, 1.15]
  double brow_dy = 0.0;      // [-1.5, 1.5] px on top of the eye shift
  double nose_len = 0.0;     // [-2.5, 2.5] px
  double nose_width = 1.0;   // [0.85, 1.15]
  double mouth_scale = 1.0;  // [0.85, 1.15]
  double mouth_dy = 0.0;     // [-1.5, 1.5] px
  double mouth_curve = 0.0;  // [-1.5, 1.5] px corner lift
  double jaw_scale = 1.0;    // [0.92, 1.08]
  double skin_level = 0.78;  // [0.70, 0.86]
  double eye_level = 0.12;   // [0.05, 0.20]
  double brow_level = 0.30;  // [0.20, 0.40]
  double nose_level = 0.45;  // [0.35, 0.55]
  double mouth_level = 0.28; // [0.18, 0.38]
  double jaw_level = 0.50;   // [0.40, 0.60]

  static IdentityParams derive(std::uint64_t dataset_seed, int identity_index);
  void validate() const;
};

struct FaceSample {
  Tensor image;  // [1,H,W], values in [0,1]
  Landmarks landmarks;
  int identity = 0;
  Pose pose;
  std::string split;  // "train" | "test" (set by the dataset layer)
};

/// Template landmarks morphed by the identity offsets (96-scale).
Landmarks identity_landmarks(const FaceTemplate& tpl, const IdentityParams& id);

/// Applies the pose transform in image coordinates of the given size.
Vector2d apply_pose(const Vector2d& p, const Pose& pose, int image_size);

/// Renders the parametric face with exact landmarks. Pose must satisfy
/// |rotation| <= 30 deg, scales in [0.8, 1.2], |translation| <= size/8;
/// noise_std must lie in [0, 0.02].
FaceSample render_face(const FaceTemplate& tpl, const IdentityParams& id, const Pose& pose,
                       int image_size, double noise_std, Rng& noise_rng);

struct DatasetSpec {
  int num_ids = 10;
  int samples_per_id = 20;
  int image_size = 32;
  double noise_std = 0.015;
  double max_rotation_deg = 15.0;  // per-sample rotation ~ U[-r, r]
  double min_scale = 0.9, max_scale = 1.1;
  double max_translation = 1.0;  // px at the target scale
  double train_fraction = 0.8;
};

/// Writes images/, landmarks/ and manifest.csv under out_dir. Sample 0 of
/// every identity is frontal; later samples draw poses from the spec
/// ranges. The same seed reproduces the tree byte-for-byte.
void gen_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::string& out_dir);

struct Dataset {
  std::vector<FaceSample> samples;
  int num_ids = 0;
  int image_size = 0;

  std::vector<std::size_t> split_indices(const std::string& split) const;
};

Dataset load_dataset(const std::string& manifest_path);

}  // namespace facet
