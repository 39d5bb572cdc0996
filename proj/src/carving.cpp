#include "ofield/carving.hpp"

#include "ofield/morphology.hpp"
#include "ofield/parallel.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace ofield {

namespace {
constexpr float kInf = std::numeric_limits<float>::infinity();
}

Mask binarize_dilate(const Image& alpha, double threshold, int radius) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("binarize_dilate: threshold must be in (0,1)");
    if (alpha.channels != 1) throw std::invalid_argument("binarize_dilate: expected a single-channel matte");
    Mask m(alpha.width, alpha.height);
    for (std::size_t i = 0; i < alpha.data.size(); ++i) m.data[i] = alpha.data[i] >= threshold ? 1 : 0;
    return dilate_square(m, radius);
}

Eigen::Vector3d VoxelGrid::voxel_size() const {
    return (bounds.hi - bounds.lo).cwiseQuotient(Eigen::Vector3d(nx, ny, nz));
}

Eigen::Vector3d VoxelGrid::center(int i, int j, int k) const {
    return bounds.lo + (Eigen::Vector3d(i, j, k).array() + 0.5).matrix().cwiseProduct(voxel_size());
}

std::size_t VoxelGrid::occupied_count() const {
    std::size_t n = 0;
    for (uint8_t v : occupancy) n += v != 0;
    return n;
}

CarveResult carve(const std::vector<Mask>& silhouettes, const std::vector<CameraView>& views, int resolution,
                  const Aabb& bounds) {
    if (silhouettes.size() != views.size()) throw std::invalid_argument("carve: silhouettes and views differ in count");
    if (views.size() < 2) throw std::invalid_argument("carve: need at least two views");
    if (resolution <= 0) throw std::invalid_argument("carve: resolution must be positive");
    for (std::size_t v = 0; v < views.size(); ++v)
        if (silhouettes[v].width != views[v].width || silhouettes[v].height != views[v].height)
            throw std::invalid_argument("carve: silhouette " + std::to_string(v) + " does not match its camera");

    CarveResult out;
    out.grid = VoxelGrid(resolution, resolution, resolution, bounds);
    VoxelGrid& g = out.grid;
    parallel_for(resolution, [&](int64_t kk) {
        const int k = static_cast<int>(kk);
        for (int j = 0; j < g.ny; ++j)
            for (int i = 0; i < g.nx; ++i) {
                const Eigen::Vector3d c = g.center(i, j, k);
                bool keep = true;
                for (std::size_t v = 0; v < views.size() && keep; ++v) {
                    const Projection p = project(views[v], c);
                    if (!p.in_front) continue;
                    const int col = static_cast<int>(std::floor(p.pixel.x()));
                    const int row = static_cast<int>(std::floor(p.pixel.y()));
                    keep = row >= 0 && row < silhouettes[v].height && col >= 0 && col < silhouettes[v].width &&
                           silhouettes[v].at(row, col) != 0;
                }
                g.occupancy[g.index(i, j, k)] = keep ? 1 : 0;
            }
    });
    if (g.occupied_count() == 0) out.warning = "carve: no voxel survived; silhouettes are inconsistent";
    return out;
}

namespace {

// Amanatides-Woo traversal; returns false when no occupied voxel is hit.
bool trace(const VoxelGrid& g, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double& t_near, double& t_far) {
    const auto hit = g.bounds.intersect(o, d);
    if (!hit) return false;
    const Eigen::Vector3d size = g.voxel_size();
    const int dims[3] = {g.nx, g.ny, g.nz};
    double t = hit->first;
    const Eigen::Vector3d p = o + t * d;
    int idx[3], step[3];
    double t_max[3], t_delta[3];
    for (int a = 0; a < 3; ++a) {
        idx[a] = std::clamp(static_cast<int>(std::floor((p[a] - g.bounds.lo[a]) / size[a])), 0, dims[a] - 1);
        if (d[a] > 0.0) {
            step[a] = 1;
            t_max[a] = (g.bounds.lo[a] + (idx[a] + 1) * size[a] - o[a]) / d[a];
            t_delta[a] = size[a] / d[a];
        } else if (d[a] < 0.0) {
            step[a] = -1;
            t_max[a] = (g.bounds.lo[a] + idx[a] * size[a] - o[a]) / d[a];
            t_delta[a] = -size[a] / d[a];
        } else {
            step[a] = 0;
            t_max[a] = t_delta[a] = std::numeric_limits<double>::infinity();
        }
    }
    bool found = false;
    while (true) {
        int axis = 0;
        if (t_max[1] < t_max[axis]) axis = 1;
        if (t_max[2] < t_max[axis]) axis = 2;
        const double t_exit = std::min(t_max[axis], hit->second);
        if (g.occupied(idx[0], idx[1], idx[2])) {
            if (!found) t_near = t;
            t_far = t_exit;
            found = true;
        }
        if (t_max[axis] >= hit->second) break;
        t = t_max[axis];
        idx[axis] += step[axis];
        if (idx[axis] < 0 || idx[axis] >= dims[axis]) break;
        t_max[axis] += t_delta[axis];
    }
    return found;
}

DepthBounds empty_bounds(int w, int h) {
    DepthBounds b;
    b.width = w;
    b.height = h;
    b.near.assign(static_cast<std::size_t>(w) * h, kInf);
    b.far.assign(static_cast<std::size_t>(w) * h, kInf);
    b.valid = Mask(w, h);
    return b;
}

}  // namespace

DepthBounds rasterize_depth_bounds(const VoxelGrid& grid, const CameraView& view, double margin) {
    if (grid.occupied_count() == 0) throw std::invalid_argument("rasterize_depth_bounds: empty grid");
    if (margin < 0.0) margin = grid.voxel_diagonal();
    DepthBounds b = empty_bounds(view.width, view.height);
    parallel_for(view.height, [&](int64_t row) {
        for (int col = 0; col < view.width; ++col) {
            const Ray r = pixel_ray(view, static_cast<int>(row), col);
            double tn = 0.0, tf = 0.0;
            if (!trace(grid, r.origin, r.direction, tn, tf)) continue;
            const std::size_t i = static_cast<std::size_t>(row) * view.width + col;
            b.near[i] = static_cast<float>(std::max(0.0, tn - margin));
            b.far[i] = static_cast<float>(tf + margin);
            b.valid.data[i] = 1;
        }
    });
    return b;
}

DepthBounds box_depth_bounds(const Aabb& bounds, const CameraView& view) {
    DepthBounds b = empty_bounds(view.width, view.height);
    for (int row = 0; row < view.height; ++row)
        for (int col = 0; col < view.width; ++col) {
            const Ray r = pixel_ray(view, row, col);
            const auto hit = bounds.intersect(r.origin, r.direction);
            if (!hit || hit->second <= hit->first) continue;
            const std::size_t i = static_cast<std::size_t>(row) * view.width + col;
            b.near[i] = static_cast<float>(hit->first);
            b.far[i] = static_cast<float>(hit->second);
            b.valid.data[i] = 1;
        }
    return b;
}

// ---------------------------------------------------------------------------
// files

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    const char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                       static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
    os.write(b, 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("voxel grid: truncated file");
    return b[0] | b[1] << 8 | b[2] << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void put_f64(std::ostream& os, double v) {
    const uint64_t bits = std::bit_cast<uint64_t>(v);
    put_u32(os, static_cast<uint32_t>(bits & 0xFFFFFFFFu));
    put_u32(os, static_cast<uint32_t>(bits >> 32));
}

double get_f64(std::istream& is) {
    const uint64_t lo = get_u32(is);
    const uint64_t hi = get_u32(is);
    return std::bit_cast<double>(lo | hi << 32);
}

}  // namespace

void save_voxel_grid(const std::filesystem::path& path, const VoxelGrid& g) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("voxel grid: cannot write " + path.string());
    os.write("VOXG", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(g.nx));
    put_u32(os, static_cast<uint32_t>(g.ny));
    put_u32(os, static_cast<uint32_t>(g.nz));
    for (int a = 0; a < 3; ++a) put_f64(os, g.bounds.lo[a]);
    for (int a = 0; a < 3; ++a) put_f64(os, g.bounds.hi[a]);
    std::vector<char> bits((g.occupancy.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < g.occupancy.size(); ++i)
        if (g.occupancy[i]) bits[i / 8] = static_cast<char>(bits[i / 8] | (1 << (i % 8)));
    os.write(bits.data(), static_cast<std::streamsize>(bits.size()));
    if (!os) throw IoError("voxel grid: write failed for " + path.string());
}

VoxelGrid load_voxel_grid(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("voxel grid: cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VOXG", 4) != 0) throw IoError("voxel grid: bad magic in " + path.string());
    if (get_u32(is) != 1) throw IoError("voxel grid: unsupported version");
    const int nx = static_cast<int>(get_u32(is)), ny = static_cast<int>(get_u32(is)), nz = static_cast<int>(get_u32(is));
    Aabb b;
    for (int a = 0; a < 3; ++a) b.lo[a] = get_f64(is);
    for (int a = 0; a < 3; ++a) b.hi[a] = get_f64(is);
    VoxelGrid g(nx, ny, nz, b);
    std::vector<char> bits((g.occupancy.size() + 7) / 8);
    if (!is.read(bits.data(), static_cast<std::streamsize>(bits.size()))) throw IoError("voxel grid: truncated occupancy");
    for (std::size_t i = 0; i < g.occupancy.size(); ++i) g.occupancy[i] = (bits[i / 8] >> (i % 8)) & 1;
    return g;
}

void save_depth_bounds(const std::filesystem::path& near_path, const std::filesystem::path& far_path,
                       const DepthBounds& b) {
    Image n(b.width, b.height, 1), f(b.width, b.height, 1);
    n.data = b.near;
    f.data = b.far;
    write_pfm(near_path, n);
    write_pfm(far_path, f);
}

DepthBounds load_depth_bounds(const std::filesystem::path& near_path, const std::filesystem::path& far_path) {
    const Image n = read_pfm(near_path), f = read_pfm(far_path);
    if (n.width != f.width || n.height != f.height) throw IoError("depth bounds: near/far size mismatch");
    DepthBounds b = empty_bounds(n.width, n.height);
    b.near = n.data;
    b.far = f.data;
    for (std::size_t i = 0; i < b.near.size(); ++i) b.valid.data[i] = std::isfinite(b.near[i]) ? 1 : 0;
    return b;
}

}  // namespace ofield
