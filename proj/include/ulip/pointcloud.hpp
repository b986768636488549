#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ulip/errors.hpp"
#include "ulip/rng.hpp"

namespace ulip {

using Vec3 = std::array<float, 3>;

struct PointCloud {
    std::vector<Vec3> points;
    std::optional<int> label;

    size_t size() const { return points.size(); }
};

// Per-transform augmentation settings. Parameter defaults follow common
// point-cloud training recipes: per-call drop ratio uniform in
// [0, drop_max_ratio], isotropic scale in scale_range, per-axis shift in
// [-shift_max, shift_max], small per-axis rotation angles
// ~ Normal(0, rot_sigma) clipped to +-rot_clip.
struct AugmentConfig {
    bool drop_enabled = true;
    float drop_max_ratio = 0.4f;

    bool scale_enabled = true;
    float scale_lo = 0.8f;
    float scale_hi = 1.25f;

    bool shift_enabled = true;
    float shift_max = 0.1f;

    bool rotate_enabled = true;
    float rot_sigma = 0.06f;
    float rot_clip = 0.18f;

    static AugmentConfig disabled() {
        AugmentConfig c;
        c.drop_enabled = c.scale_enabled = c.shift_enabled = c.rotate_enabled = false;
        return c;
    }

    void validate() const;
};

enum class ShapeCategory : int {
    Sphere = 0,
    Cube = 1,
    Cylinder = 2,
    Cone = 3,
    Torus = 4,
    Plane = 5,
    Pyramid = 6,
    Helix = 7,
};

inline constexpr int kShapeCategoryCount = 8;

std::string_view shape_category_name(ShapeCategory c);
ShapeCategory parse_shape_category(std::string_view name);

// Uniform draw of n_points rows; without replacement when the cloud has at
// least n_points, with replacement otherwise. Label is preserved.
PointCloud resample(const PointCloud& pc, size_t n_points, Rng& rng);

// Centroid to the origin, max radius scaled to 1 (radius stays 0 when all
// points coincide).
PointCloud normalize_unit_sphere(const PointCloud& pc);

// Transforms applied in order drop -> scale -> shift -> rotate. Dropped
// points are overwritten with the first surviving point so the point count
// never changes.
PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, Rng& rng);

// Noisy samples of a parametric surface, unit-sphere normalized, labeled
// with the category id.
PointCloud gen_shape(ShapeCategory category, size_t n_points, float noise_sigma, Rng& rng);

// Rotation about the z (up) axis; used by the renderer equivariance checks.
PointCloud rotate_z(const PointCloud& pc, double angle_rad);

// Binary point-cloud format: "ULIPPC01", u32 LE point count, then N*3 LE
// float32 coordinates. The label travels in the dataset manifest, not here.
void save_pointcloud(const std::filesystem::path& path, const PointCloud& pc);
PointCloud load_pointcloud(const std::filesystem::path& path);

} // namespace ulip
