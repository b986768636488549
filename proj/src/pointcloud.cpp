#include "ulip/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace ulip {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[8] = {'U', 'L', 'I', 'P', 'P', 'C', '0', '1'};

void require_nonempty(const PointCloud& pc, const char* op) {
    if (pc.points.empty()) throw EmptyCloud(std::string(op) + ": point cloud is empty");
}

std::array<std::array<double, 3>, 3> rotation_xyz(double ax, double ay, double az) {
    double cx = std::cos(ax), sx = std::sin(ax);
    double cy = std::cos(ay), sy = std::sin(ay);
    double cz = std::cos(az), sz = std::sin(az);
    // R = Rz * Ry * Rx
    return {{
        {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
        {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
        {-sy, cy * sx, cy * cx},
    }};
}

Vec3 apply_rot(const std::array<std::array<double, 3>, 3>& r, const Vec3& p) {
    double x = p[0], y = p[1], z = p[2];
    return {static_cast<float>(r[0][0] * x + r[0][1] * y + r[0][2] * z),
            static_cast<float>(r[1][0] * x + r[1][1] * y + r[1][2] * z),
            static_cast<float>(r[2][0] * x + r[2][1] * y + r[2][2] * z)};
}

} // namespace

void AugmentConfig::validate() const {
    if (drop_max_ratio < 0.0f || drop_max_ratio >= 1.0f)
        throw Error("augment config: drop_max_ratio must lie in [0, 1)");
    if (!(scale_lo > 0.0f) || scale_lo > scale_hi)
        throw Error("augment config: scale range must satisfy 0 < lo <= hi");
    if (shift_max < 0.0f) throw Error("augment config: shift_max must be >= 0");
    if (rot_clip < 0.0f) throw Error("augment config: rot_clip must be >= 0");
}

std::string_view shape_category_name(ShapeCategory c) {
    switch (c) {
        case ShapeCategory::Sphere: return "sphere";
        case ShapeCategory::Cube: return "cube";
        case ShapeCategory::Cylinder: return "cylinder";
        case ShapeCategory::Cone: return "cone";
        case ShapeCategory::Torus: return "torus";
        case ShapeCategory::Plane: return "plane";
        case ShapeCategory::Pyramid: return "pyramid";
        case ShapeCategory::Helix: return "helix";
    }
    throw UnknownCategory("unknown shape category id");
}

ShapeCategory parse_shape_category(std::string_view name) {
    for (int i = 0; i < kShapeCategoryCount; ++i) {
        auto c = static_cast<ShapeCategory>(i);
        if (shape_category_name(c) == name) return c;
    }
    throw UnknownCategory("unknown shape category: " + std::string(name));
}

PointCloud resample(const PointCloud& pc, size_t n_points, Rng& rng) {
    require_nonempty(pc, "resample");
    if (n_points == 0) throw Error("resample: n_points must be >= 1");

    PointCloud out;
    out.label = pc.label;
    out.points.reserve(n_points);

    size_t n = pc.points.size();
    if (n >= n_points) {
        // partial Fisher-Yates: the first n_points entries are a uniform
        // without-replacement draw
        std::vector<uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        for (size_t i = 0; i < n_points; ++i) {
            size_t j = i + static_cast<size_t>(rng.below(n - i));
            std::swap(idx[i], idx[j]);
        }
        for (size_t i = 0; i < n_points; ++i) out.points.push_back(pc.points[idx[i]]);
    } else {
        for (size_t i = 0; i < n_points; ++i)
            out.points.push_back(pc.points[static_cast<size_t>(rng.below(n))]);
    }
    return out;
}

PointCloud normalize_unit_sphere(const PointCloud& pc) {
    require_nonempty(pc, "normalize_unit_sphere");
    double cx = 0.0, cy = 0.0, cz = 0.0;
    for (const Vec3& p : pc.points) {
        cx += p[0];
        cy += p[1];
        cz += p[2];
    }
    double inv_n = 1.0 / static_cast<double>(pc.points.size());
    cx *= inv_n;
    cy *= inv_n;
    cz *= inv_n;

    double max_r = 0.0;
    for (const Vec3& p : pc.points) {
        double dx = p[0] - cx, dy = p[1] - cy, dz = p[2] - cz;
        max_r = std::max(max_r, std::sqrt(dx * dx + dy * dy + dz * dz));
    }
    double scale = max_r > 1e-12 ? 1.0 / max_r : 1.0;

    PointCloud out;
    out.label = pc.label;
    out.points.reserve(pc.points.size());
    for (const Vec3& p : pc.points) {
        out.points.push_back({static_cast<float>((p[0] - cx) * scale),
                              static_cast<float>((p[1] - cy) * scale),
                              static_cast<float>((p[2] - cz) * scale)});
    }
    return out;
}

PointCloud augment(const PointCloud& pc, const AugmentConfig& cfg, Rng& rng) {
    require_nonempty(pc, "augment");
    cfg.validate();

    PointCloud out = pc;
    size_t n = out.points.size();

    if (cfg.drop_enabled && cfg.drop_max_ratio > 0.0f) {
        double ratio = rng.uniform(0.0, cfg.drop_max_ratio);
        size_t k = static_cast<size_t>(std::floor(ratio * static_cast<double>(n)));
        if (k > 0) {
            std::vector<uint32_t> idx(n);
            std::iota(idx.begin(), idx.end(), 0u);
            for (size_t i = 0; i < k; ++i) {
                size_t j = i + static_cast<size_t>(rng.below(n - i));
                std::swap(idx[i], idx[j]);
            }
            std::vector<char> dropped(n, 0);
            for (size_t i = 0; i < k; ++i) dropped[idx[i]] = 1;
            size_t first_kept = 0;
            while (first_kept < n && dropped[first_kept]) ++first_kept;
            // k < n always (drop_max_ratio < 1), so a survivor exists
            Vec3 fill = out.points[first_kept];
            for (size_t i = 0; i < n; ++i)
                if (dropped[i]) out.points[i] = fill;
        }
    }

    if (cfg.scale_enabled) {
        double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
        for (Vec3& p : out.points)
            for (float& v : p) v = static_cast<float>(v * s);
    }

    if (cfg.shift_enabled) {
        double dx = rng.uniform(-cfg.shift_max, cfg.shift_max);
        double dy = rng.uniform(-cfg.shift_max, cfg.shift_max);
        double dz = rng.uniform(-cfg.shift_max, cfg.shift_max);
        for (Vec3& p : out.points) {
            p[0] = static_cast<float>(p[0] + dx);
            p[1] = static_cast<float>(p[1] + dy);
            p[2] = static_cast<float>(p[2] + dz);
        }
    }

    if (cfg.rotate_enabled) {
        double clip = cfg.rot_clip;
        double ax = std::clamp(rng.normal(0.0, cfg.rot_sigma), -clip, clip);
        double ay = std::clamp(rng.normal(0.0, cfg.rot_sigma), -clip, clip);
        double az = std::clamp(rng.normal(0.0, cfg.rot_sigma), -clip, clip);
        auto r = rotation_xyz(ax, ay, az);
        for (Vec3& p : out.points) p = apply_rot(r, p);
    }

    return out;
}

namespace {

Vec3 sample_unit_direction(Rng& rng) {
    for (;;) {
        double x = rng.normal(), y = rng.normal(), z = rng.normal();
        double n = std::sqrt(x * x + y * y + z * z);
        if (n > 1e-9)
            return {static_cast<float>(x / n), static_cast<float>(y / n),
                    static_cast<float>(z / n)};
    }
}

void sample_sphere(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    // antipodal pairs keep the sample centroid exactly at the origin, so
    // unit-sphere normalization leaves every radius at 1 (even n)
    while (pts.size() + 2 <= n) {
        Vec3 d = sample_unit_direction(rng);
        pts.push_back(d);
        pts.push_back({-d[0], -d[1], -d[2]});
    }
    if (pts.size() < n) pts.push_back(sample_unit_direction(rng));
}

void sample_cube(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) {
        int face = static_cast<int>(rng.below(6));
        float u = static_cast<float>(rng.uniform(-1.0, 1.0));
        float v = static_cast<float>(rng.uniform(-1.0, 1.0));
        float s = (face % 2 == 0) ? 1.0f : -1.0f;
        switch (face / 2) {
            case 0: pts.push_back({s, u, v}); break;
            case 1: pts.push_back({u, s, v}); break;
            default: pts.push_back({u, v, s}); break;
        }
    }
}

void sample_cylinder(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    // lateral area 4*pi vs. two caps 2*pi
    for (size_t i = 0; i < n; ++i) {
        double theta = rng.uniform(0.0, 2.0 * kPi);
        if (rng.uniform() < 2.0 / 3.0) {
            double z = rng.uniform(-1.0, 1.0);
            pts.push_back({static_cast<float>(std::cos(theta)),
                           static_cast<float>(std::sin(theta)), static_cast<float>(z)});
        } else {
            double r = std::sqrt(rng.uniform());
            float z = rng.uniform() < 0.5 ? 1.0f : -1.0f;
            pts.push_back({static_cast<float>(r * std::cos(theta)),
                           static_cast<float>(r * std::sin(theta)), z});
        }
    }
}

void sample_cone(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    // apex (0,0,1), base disk radius 1 at z=-1; lateral/base area ratio
    const double p_lateral = std::sqrt(5.0) / (std::sqrt(5.0) + 1.0);
    for (size_t i = 0; i < n; ++i) {
        double theta = rng.uniform(0.0, 2.0 * kPi);
        if (rng.uniform() < p_lateral) {
            double s = std::sqrt(rng.uniform());
            pts.push_back({static_cast<float>(s * std::cos(theta)),
                           static_cast<float>(s * std::sin(theta)),
                           static_cast<float>(1.0 - 2.0 * s)});
        } else {
            double r = std::sqrt(rng.uniform());
            pts.push_back({static_cast<float>(r * std::cos(theta)),
                           static_cast<float>(r * std::sin(theta)), -1.0f});
        }
    }
}

void sample_torus(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    const double R = 1.0, r = 0.4;
    for (size_t i = 0; i < n; ++i) {
        double u = rng.uniform(0.0, 2.0 * kPi);
        double v;
        // rejection keeps the density uniform per surface area
        for (;;) {
            v = rng.uniform(0.0, 2.0 * kPi);
            if (rng.uniform() < (R + r * std::cos(v)) / (R + r)) break;
        }
        double w = R + r * std::cos(v);
        pts.push_back({static_cast<float>(w * std::cos(u)), static_cast<float>(w * std::sin(u)),
                       static_cast<float>(r * std::sin(v))});
    }
}

void sample_plane(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) {
        pts.push_back({static_cast<float>(rng.uniform(-1.0, 1.0)),
                       static_cast<float>(rng.uniform(-1.0, 1.0)), 0.0f});
    }
}

void sample_pyramid(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    const Vec3 apex = {0.0f, 0.0f, 1.0f};
    const Vec3 base[4] = {{1, 1, -0.5f}, {-1, 1, -0.5f}, {-1, -1, -0.5f}, {1, -1, -0.5f}};
    const double side_area = 0.5 * 2.0 * std::sqrt(1.0 + 1.5 * 1.5);
    const double p_base = 4.0 / (4.0 + 4.0 * side_area);
    for (size_t i = 0; i < n; ++i) {
        if (rng.uniform() < p_base) {
            pts.push_back({static_cast<float>(rng.uniform(-1.0, 1.0)),
                           static_cast<float>(rng.uniform(-1.0, 1.0)), -0.5f});
        } else {
            int f = static_cast<int>(rng.below(4));
            const Vec3& a = base[f];
            const Vec3& b = base[(f + 1) % 4];
            double r1 = rng.uniform(), r2 = rng.uniform();
            if (r1 + r2 > 1.0) {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            Vec3 p;
            for (int k = 0; k < 3; ++k)
                p[static_cast<size_t>(k)] = static_cast<float>(
                    a[static_cast<size_t>(k)] +
                    r1 * (b[static_cast<size_t>(k)] - a[static_cast<size_t>(k)]) +
                    r2 * (apex[static_cast<size_t>(k)] - a[static_cast<size_t>(k)]));
            pts.push_back(p);
        }
    }
}

void sample_helix(std::vector<Vec3>& pts, size_t n, Rng& rng) {
    const double turns = 3.0;
    for (size_t i = 0; i < n; ++i) {
        double t = rng.uniform(0.0, turns * 2.0 * kPi);
        double z = -1.0 + 2.0 * t / (turns * 2.0 * kPi);
        pts.push_back({static_cast<float>(std::cos(t)), static_cast<float>(std::sin(t)),
                       static_cast<float>(z)});
    }
}

} // namespace

PointCloud gen_shape(ShapeCategory category, size_t n_points, float noise_sigma, Rng& rng) {
    if (n_points < 8) throw Error("gen_shape: n_points must be >= 8");

    PointCloud pc;
    pc.points.reserve(n_points);
    switch (category) {
        case ShapeCategory::Sphere: sample_sphere(pc.points, n_points, rng); break;
        case ShapeCategory::Cube: sample_cube(pc.points, n_points, rng); break;
        case ShapeCategory::Cylinder: sample_cylinder(pc.points, n_points, rng); break;
        case ShapeCategory::Cone: sample_cone(pc.points, n_points, rng); break;
        case ShapeCategory::Torus: sample_torus(pc.points, n_points, rng); break;
        case ShapeCategory::Plane: sample_plane(pc.points, n_points, rng); break;
        case ShapeCategory::Pyramid: sample_pyramid(pc.points, n_points, rng); break;
        case ShapeCategory::Helix: sample_helix(pc.points, n_points, rng); break;
        default: throw UnknownCategory("gen_shape: unknown category id");
    }

    if (noise_sigma > 0.0f) {
        for (Vec3& p : pc.points)
            for (float& v : p) v = static_cast<float>(v + rng.normal(0.0, noise_sigma));
    }

    PointCloud out = normalize_unit_sphere(pc);
    out.label = static_cast<int>(category);
    return out;
}

PointCloud rotate_z(const PointCloud& pc, double angle_rad) {
    double c = std::cos(angle_rad), s = std::sin(angle_rad);
    PointCloud out;
    out.label = pc.label;
    out.points.reserve(pc.points.size());
    for (const Vec3& p : pc.points) {
        out.points.push_back({static_cast<float>(c * p[0] - s * p[1]),
                              static_cast<float>(s * p[0] + c * p[1]), p[2]});
    }
    return out;
}

void save_pointcloud(const std::filesystem::path& path, const PointCloud& pc) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_pointcloud: cannot open " + path.string());
    f.write(kMagic, sizeof(kMagic));
    uint32_t n = static_cast<uint32_t>(pc.points.size());
    f.write(reinterpret_cast<const char*>(&n), sizeof(n));
    f.write(reinterpret_cast<const char*>(pc.points.data()),
            static_cast<std::streamsize>(pc.points.size() * sizeof(Vec3)));
    if (!f) throw IoError("save_pointcloud: write failed for " + path.string());
}

PointCloud load_pointcloud(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_pointcloud: cannot open " + path.string());
    char magic[8];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw BadMagic("load_pointcloud: bad magic in " + path.string());
    uint32_t n = 0;
    if (!f.read(reinterpret_cast<char*>(&n), sizeof(n)))
        throw TruncatedFile("load_pointcloud: truncated header in " + path.string());
    if (n == 0) throw EmptyCloud("load_pointcloud: file declares zero points");
    PointCloud pc;
    pc.points.resize(n);
    if (!f.read(reinterpret_cast<char*>(pc.points.data()),
                static_cast<std::streamsize>(n * sizeof(Vec3))))
        throw TruncatedFile("load_pointcloud: truncated payload in " + path.string());
    for (const Vec3& p : pc.points)
        for (float v : p)
            if (!std::isfinite(v))
                throw NonFiniteValue("load_pointcloud: non-finite coordinate in " + path.string());
    return pc;
}

} // namespace ulip
