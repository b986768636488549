#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "ulip/pointcloud.hpp"

namespace ulip {

// Depth image of one view; background pixels hold +inf and are written as
// 0 in exported files.
struct DepthMap {
    int width = 0;
    int height = 0;
    int view = 0;
    std::vector<float> depth;

    static constexpr float kBackground = std::numeric_limits<float>::infinity();

    float at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
    bool foreground(int x, int y) const { return std::isfinite(at(x, y)); }
    size_t foreground_count() const;
};

// Ring of cameras looking at the origin from a fixed elevation; azimuth
// advances by `step_deg` per view (30 views of 12 degrees cover 360).
// focal_px == 0 selects the default focal length of 0.8 * resolution,
// which makes the unit sphere fill about 70% of the frame at radius 2.5.
struct CameraRing {
    int view_count = 30;
    double step_deg = 12.0;
    double elevation_deg = 20.0;
    double radius = 2.5;
    double focal_px = 0.0;

    void validate() const; // view_count * step_deg must cover 360 exactly
};

// Perspective projection with a 1-pixel z-buffered splat per point
// (nearest depth wins); points behind the camera are culled. The cloud
// must be unit-sphere normalized (max radius <= 1 + 1e-3).
DepthMap render_depth(const PointCloud& pc, const CameraRing& ring, int view, int res);

// Frozen random projection standing in for an image encoder: the map is
// area-averaged down to 32x32 (background counted as 0), flattened, and
// multiplied by a seed-derived Gaussian matrix, then L2-normalized.
class StandInImageEncoder {
  public:
    StandInImageEncoder(int input_res, int dim, uint64_t seed);
    std::vector<float> embed(const DepthMap& map) const;

    int input_res() const { return input_res_; }
    int dim() const { return dim_; }

  private:
    int input_res_;
    int dim_;
    std::vector<float> projection_; // [dim, 32*32]
};

std::vector<float> stand_in_image_embed(const DepthMap& map, int dim, uint64_t seed);

// 16-bit PGM with the depth range declared in a header comment; foreground
// depths quantize linearly onto [1, 65535], background maps to 0. Passing
// NaN for near/far derives the range from the map content.
void export_depth_pgm(const DepthMap& map, const std::filesystem::path& path,
                      double near = std::numeric_limits<double>::quiet_NaN(),
                      double far = std::numeric_limits<double>::quiet_NaN());
DepthMap import_depth_pgm(const std::filesystem::path& path);

} // namespace ulip
