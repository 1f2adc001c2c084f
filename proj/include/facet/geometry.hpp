#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "facet/common.hpp"
#include "facet/tensor.hpp"

namespace facet {

/// Canonical frontal face mesh: 68 landmarks strictly inside the canonical
/// frame plus 8 boundary control points (corners TL,TR,BR,BL then edge
/// midpoints top,right,bottom,left), triangulated into 142 non-overlapping
/// triangles that tile the full rectangle. Region polygons (eyes, nose,
/// mouth) accompany the mesh for part-based analysis.
struct FaceTemplate {
  int width = 0;
  int height = 0;
  Landmarks landmarks;                         // 68 points, indices 0..67
  Landmarks boundary;                          // 8 points, indices 68..75
  std::vector<std::array<int, 3>> triangles;   // vertex indices into 0..75
  std::map<std::string, Landmarks> regions;    // named canonical polygons

  Vector2d point(int idx) const {
    require(idx >= 0 && idx < int(landmarks.size() + boundary.size()),
            "template point index out of range");
    return idx < int(landmarks.size()) ? landmarks[std::size_t(idx)]
                                       : boundary[std::size_t(idx) - landmarks.size()];
  }
  int num_points() const { return int(landmarks.size() + boundary.size()); }

  static FaceTemplate load(const std::string& path);
  /// The template shipped in the repository's data directory (override the
  /// location with the FACET_DATA_DIR environment variable). Loaded once.
  static const FaceTemplate& standard();
};

/// A point expressed relative to one mesh triangle.
struct BarycentricAnchor {
  int triangle_index = -1;
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
};

enum class FillMode { Black, GaussianNoise };
enum class SizeMode { Static, Dynamic };

/// Template-space occluding rectangle: static is exactly 32x12; dynamic draws
/// width and height independently and uniformly from [12,32].
struct OccluderSpec {
  FillMode fill = FillMode::Black;
  SizeMode size_mode = SizeMode::Static;
  std::uint64_t rng_seed = 0;
};

/// Affine weights (alpha,beta,gamma) of `p` w.r.t. triangle (a,b,c); they sum
/// to 1 and reproduce p exactly. Degenerate triangles (area < 1e-12) rejected.
Eigen::Vector3d barycentric_coords(const Vector2d& p, const Vector2d& a, const Vector2d& b,
                                   const Vector2d& c);

/// Lowest-index template triangle containing the point (coords >= -1e-9).
/// Throws if the point lies outside the whole mesh.
BarycentricAnchor anchor_point(const Vector2d& p, const FaceTemplate& tpl);

/// Samples a template-space rectangle whose four corners all anchor inside
/// landmark-only triangles (every vertex index < 68). Corners are returned
/// clockwise from top-left. Throws after 100 failed placement attempts.
std::array<BarycentricAnchor, 4> place_occluder(const OccluderSpec& spec, const FaceTemplate& tpl,
                                                Rng& rng);

/// Evaluates each anchor at the target face's triangle: vertex v of the
/// anchored triangle maps to target_landmarks[v]. Anchors must reference
/// landmark-only triangles.
std::array<Vector2d, 4> warp_anchors(const std::array<BarycentricAnchor, 4>& anchors,
                                     const FaceTemplate& tpl, const Landmarks& target_landmarks);

/// Replaces pixels whose centers fall inside the quadrilateral: black fill
/// writes 0, Gaussian noise writes clamp(N(0.5, 0.25), 0, 1) per pixel
/// (shared across channels). Vertices are clamped to image bounds first.
/// A zero-area quad returns the input unchanged and sets *degenerate_quad.
Tensor render_occlusion(const Tensor& image, const std::array<Vector2d, 4>& quad, FillMode fill,
                        Rng& rng, bool* degenerate_quad = nullptr);

/// Inverse warp of a single point: finds the enclosing triangle of the target
/// mesh (the 68 target landmarks plus 8 boundary points of the W x H target
/// image frame) and evaluates the same barycentric coords at the template.
Vector2d to_canonical(const Vector2d& p, const Landmarks& target_landmarks,
                      const FaceTemplate& tpl, int img_w, int img_h);
/// As to_canonical but returns nullopt instead of throwing when p lies
/// outside the target mesh.
std::optional<Vector2d> try_to_canonical(const Vector2d& p, const Landmarks& target_landmarks,
                                         const FaceTemplate& tpl, int img_w, int img_h);

/// True if p lies inside (or on) the polygon, by winding parity.
bool point_in_polygon(const Vector2d& p, const Landmarks& polygon);

}  // namespace facet
