#include "ulip/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ulip/rng.hpp"

namespace ulip {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kEmbedRes = 32;

struct Basis {
    std::array<double, 3> eye, right, up, forward;
};

Basis camera_basis(const CameraRing& ring, int view) {
    double az = static_cast<double>(view) * ring.step_deg * kPi / 180.0;
    double el = ring.elevation_deg * kPi / 180.0;
    Basis b;
    b.eye = {ring.radius * std::cos(el) * std::cos(az), ring.radius * std::cos(el) * std::sin(az),
             ring.radius * std::sin(el)};
    double inv = 1.0 / ring.radius;
    b.forward = {-b.eye[0] * inv, -b.eye[1] * inv, -b.eye[2] * inv};
    // world up is +z; right = normalize(forward x up)
    double rx = b.forward[1], ry = -b.forward[0];
    double rn = std::sqrt(rx * rx + ry * ry);
    if (rn < 1e-9) throw Error("render_depth: camera looks along the up axis");
    b.right = {rx / rn, ry / rn, 0.0};
    b.up = {b.right[1] * b.forward[2] - b.right[2] * b.forward[1],
            b.right[2] * b.forward[0] - b.right[0] * b.forward[2],
            b.right[0] * b.forward[1] - b.right[1] * b.forward[0]};
    return b;
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

} // namespace

size_t DepthMap::foreground_count() const {
    size_t n = 0;
    for (float d : depth)
        if (std::isfinite(d)) ++n;
    return n;
}

void CameraRing::validate() const {
    if (view_count <= 0 || step_deg <= 0.0)
        throw Error("camera ring: view count and step must be positive");
    if (std::abs(static_cast<double>(view_count) * step_deg - 360.0) > 1e-9)
        throw Error("camera ring: view_count * step_deg must equal 360");
    if (radius <= 0.0) throw Error("camera ring: radius must be positive");
}

DepthMap render_depth(const PointCloud& pc, const CameraRing& ring, int view, int res) {
    ring.validate();
    if (view < 0 || view >= ring.view_count)
        throw Error("render_depth: view index out of range");
    if (res < 2) throw Error("render_depth: resolution too small");
    if (pc.points.empty()) throw EmptyCloud("render_depth: empty cloud");

    for (const Vec3& p : pc.points) {
        double r = std::sqrt(double(p[0]) * p[0] + double(p[1]) * p[1] + double(p[2]) * p[2]);
        if (r > 1.0 + 1e-3)
            throw UnnormalizedCloud("render_depth: cloud exceeds the unit sphere");
    }

    Basis b = camera_basis(ring, view);
    double focal = ring.focal_px > 0.0 ? ring.focal_px : 0.8 * static_cast<double>(res);
    double cx = (static_cast<double>(res) - 1.0) / 2.0;
    double cy = cx;

    DepthMap map;
    map.width = res;
    map.height = res;
    map.view = view;
    map.depth.assign(static_cast<size_t>(res) * res, DepthMap::kBackground);

    for (const Vec3& p : pc.points) {
        std::array<double, 3> d = {double(p[0]) - b.eye[0], double(p[1]) - b.eye[1],
                                   double(p[2]) - b.eye[2]};
        double zc = dot3(d, b.forward);
        if (zc <= 1e-6) continue; // behind the camera
        double u = cx + focal * dot3(d, b.right) / zc;
        double v = cy - focal * dot3(d, b.up) / zc;
        int px = static_cast<int>(std::floor(u + 0.5));
        int py = static_cast<int>(std::floor(v + 0.5));
        if (px < 0 || px >= res || py < 0 || py >= res) continue;
        float& slot = map.depth[static_cast<size_t>(py) * res + px];
        float depth = static_cast<float>(zc);
        if (depth < slot) slot = depth;
    }
    return map;
}

StandInImageEncoder::StandInImageEncoder(int input_res, int dim, uint64_t seed)
    : input_res_(input_res), dim_(dim) {
    if (dim < 1) throw DimMismatch("stand-in image encoder: dim must be >= 1");
    if (input_res < kEmbedRes || input_res % kEmbedRes != 0)
        throw ResolutionMismatch("stand-in image encoder: input resolution must be a multiple of 32");
    projection_.resize(static_cast<size_t>(dim) * kEmbedRes * kEmbedRes);
    for (int r = 0; r < dim; ++r) {
        Rng rng = derived_rng(seed, "standin-image", static_cast<uint64_t>(r));
        for (int c = 0; c < kEmbedRes * kEmbedRes; ++c)
            projection_[static_cast<size_t>(r) * kEmbedRes * kEmbedRes + c] =
                static_cast<float>(rng.normal());
    }
}

std::vector<float> StandInImageEncoder::embed(const DepthMap& map) const {
    if (map.width != input_res_ || map.height != input_res_)
        throw ResolutionMismatch("stand-in image encoder: map resolution does not match");

    int block = input_res_ / kEmbedRes;
    std::vector<double> pooled(kEmbedRes * kEmbedRes, 0.0);
    double inv_area = 1.0 / (static_cast<double>(block) * block);
    for (int by = 0; by < kEmbedRes; ++by) {
        for (int bx = 0; bx < kEmbedRes; ++bx) {
            double acc = 0.0;
            for (int y = by * block; y < (by + 1) * block; ++y)
                for (int x = bx * block; x < (bx + 1) * block; ++x) {
                    float d = map.at(x, y);
                    if (std::isfinite(d)) acc += d;
                }
            pooled[static_cast<size_t>(by) * kEmbedRes + bx] = acc * inv_area;
        }
    }

    std::vector<double> out(static_cast<size_t>(dim_), 0.0);
    for (int r = 0; r < dim_; ++r) {
        const float* row = projection_.data() + static_cast<size_t>(r) * kEmbedRes * kEmbedRes;
        double acc = 0.0;
        for (int c = 0; c < kEmbedRes * kEmbedRes; ++c) acc += double(row[c]) * pooled[static_cast<size_t>(c)];
        out[static_cast<size_t>(r)] = acc;
    }
    double norm = 0.0;
    for (double v : out) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 1e-12)
        throw DegenerateEmbedding("stand-in image encoder: zero response (all-background map?)");
    std::vector<float> result(out.size());
    for (size_t i = 0; i < out.size(); ++i) result[i] = static_cast<float>(out[i] / norm);
    return result;
}

std::vector<float> stand_in_image_embed(const DepthMap& map, int dim, uint64_t seed) {
    return StandInImageEncoder(map.width, dim, seed).embed(map);
}

void export_depth_pgm(const DepthMap& map, const std::filesystem::path& path, double near,
                      double far) {
    if (map.width <= 0 || map.height <= 0 || map.depth.empty())
        throw Error("export_depth_pgm: empty map");

    if (std::isnan(near) || std::isnan(far)) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (float d : map.depth) {
            if (!std::isfinite(d)) continue;
            lo = std::min(lo, double(d));
            hi = std::max(hi, double(d));
        }
        if (!std::isfinite(lo)) {
            lo = 0.0;
            hi = 1.0;
        }
        near = lo;
        far = hi;
    }
    if (far - near < 1e-9) far = near + 1e-9;

    char header[160];
    int header_len = std::snprintf(header, sizeof(header), "P5\n# depthrange %.17g %.17g\n%d %d\n65535\n",
                                   near, far, map.width, map.height);
    if (header_len <= 0) throw IoError("export_depth_pgm: header formatting failed");

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("export_depth_pgm: cannot open " + path.string());
    f.write(header, header_len);

    double scale = 65534.0 / (far - near);
    std::vector<unsigned char> row(static_cast<size_t>(map.width) * 2);
    for (int y = 0; y < map.height; ++y) {
        for (int x = 0; x < map.width; ++x) {
            float d = map.at(x, y);
            uint16_t q = 0;
            if (std::isfinite(d)) {
                double clamped = std::clamp(double(d), near, far);
                q = static_cast<uint16_t>(1 + std::lround((clamped - near) * scale));
            }
            // PGM stores 16-bit samples most significant byte first
            row[static_cast<size_t>(x) * 2] = static_cast<unsigned char>(q >> 8);
            row[static_cast<size_t>(x) * 2 + 1] = static_cast<unsigned char>(q & 0xFF);
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("export_depth_pgm: write failed for " + path.string());
}

DepthMap import_depth_pgm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("import_depth_pgm: cannot open " + path.string());

    std::string magic;
    f >> magic;
    if (magic != "P5") throw BadHeader("import_depth_pgm: not a binary PGM: " + path.string());

    double near = 0.0, far = 1.0;
    bool have_range = false;
    int width = -1, height = -1, maxval = -1;

    // read tokens, honoring comment lines (one of which declares the range)
    auto next_token = [&]() -> std::string {
        for (;;) {
            int c = f.peek();
            if (c == EOF) throw BadHeader("import_depth_pgm: truncated header");
            if (std::isspace(c)) {
                f.get();
                continue;
            }
            if (c == '#') {
                std::string line;
                std::getline(f, line);
                std::istringstream ls(line);
                std::string hash, tag;
                ls >> hash >> tag;
                if (tag == "depthrange" || hash == "#depthrange") {
                    if (hash == "#depthrange") { // "#depthrange a b" with no space
                        ls.clear();
                        ls.str(line.substr(11));
                    }
                    double a, b;
                    if (ls >> a >> b) {
                        near = a;
                        far = b;
                        have_range = true;
                    }
                }
                continue;
            }
            std::string tok;
            f >> tok;
            return tok;
        }
    };

    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw BadHeader("import_depth_pgm: malformed header in " + path.string());
    }
    if (width <= 0 || height <= 0) throw BadHeader("import_depth_pgm: bad dimensions");
    if (maxval != 65535) throw BadHeader("import_depth_pgm: expected 16-bit maxval 65535");
    if (!have_range) throw BadHeader("import_depth_pgm: missing depthrange comment");

    f.get(); // single whitespace after maxval

    DepthMap map;
    map.width = width;
    map.height = height;
    map.depth.assign(static_cast<size_t>(width) * height, DepthMap::kBackground);

    std::vector<unsigned char> bytes(static_cast<size_t>(width) * height * 2);
    if (!f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
        throw TruncatedFile("import_depth_pgm: truncated pixel data in " + path.string());

    double scale = (far - near) / 65534.0;
    for (size_t i = 0; i < map.depth.size(); ++i) {
        uint16_t q = static_cast<uint16_t>((bytes[i * 2] << 8) | bytes[i * 2 + 1]);
        if (q > 0) map.depth[i] = static_cast<float>(near + (q - 1) * scale);
    }
    return map;
}

} // namespace ulip
