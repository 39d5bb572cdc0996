#include "ofield/sampler.hpp"

#include "ofield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ofield {

namespace {

uint64_t patch_key(const SampleKey& k, uint64_t stage) { return hash_key({k.seed, k.view, k.patch, k.epoch, stage}); }

// Degenerate bound handling shared by both stages.
constexpr float kMinSpan = 1e-4f;

void recompute_deltas(RayPatch& p) {
    const int n = p.samples;
    p.delta.assign(p.t.size(), 0.0f);
    for (int r = 0; r < p.rays(); ++r) {
        float* t = p.t.data() + static_cast<std::size_t>(r) * n;
        float* d = p.delta.data() + static_cast<std::size_t>(r) * n;
        const float span = p.far[r] - p.near[r];
        if (span < kMinSpan) {
            for (int i = 0; i < n; ++i) d[i] = (span + kMinSpan) / static_cast<float>(n);
            continue;
        }
        // Adjacent jittered samples can round to the same float depth.
        const float floor = span * 1e-6f;
        for (int i = 0; i + 1 < n; ++i) d[i] = std::max(t[i + 1] - t[i], floor);
        d[n - 1] = std::max(p.far[r] - t[n - 1], floor);
    }
}

}  // namespace

std::vector<RayPatch> partition_patches(const CameraView& view, const DepthBounds& bounds, int K, int view_index) {
    if (K <= 0) throw std::invalid_argument("partition_patches: K must be positive");
    if (bounds.width != view.width || bounds.height != view.height)
        throw std::invalid_argument("partition_patches: depth bounds do not match the view");
    const int prow = (view.height + K - 1) / K, pcol = (view.width + K - 1) / K;
    const Eigen::Matrix3d rt = view.rotation().transpose();
    const Eigen::Vector3d origin = view.center();
    std::vector<RayPatch> out;
    for (int pr = 0; pr < prow; ++pr)
        for (int pc = 0; pc < pcol; ++pc) {
            RayPatch p;
            p.view = view_index;
            p.row0 = pr * K;
            p.col0 = pc * K;
            p.K = K;
            const int n = K * K;
            p.near.assign(n, 0.0f);
            p.far.assign(n, 0.0f);
            p.valid.assign(n, 0);
            p.in_image.assign(n, 0);
            float lo = std::numeric_limits<float>::infinity(), hi = -lo;
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j) {
                    const int r = p.row0 + i, c = p.col0 + j, k = i * K + j;
                    if (r >= view.height || c >= view.width) continue;
                    p.in_image[k] = 1;
                    if (!bounds.valid.at(r, c)) continue;
                    p.valid[k] = 1;
                    p.near[k] = bounds.near_at(r, c);
                    p.far[k] = bounds.far_at(r, c);
                    lo = std::min(lo, p.near[k]);
                    hi = std::max(hi, p.far[k]);
                }
            if (!(lo <= hi)) continue;
            p.origins.resize(3 * static_cast<std::size_t>(n));
            p.directions.resize(3 * static_cast<std::size_t>(n));
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j) {
                    const int k = i * K + j;
                    if (!p.valid[k]) {
                        p.near[k] = lo;
                        p.far[k] = hi;
                    }
                    // Padded pixels still get a ray through their (virtual) center.
                    const Eigen::Vector3d cam((p.col0 + j + 0.5 - view.cx) / view.fx,
                                              (p.row0 + i + 0.5 - view.cy) / view.fy, 1.0);
                    const Eigen::Vector3d d = (rt * cam).normalized();
                    for (int a = 0; a < 3; ++a) {
                        p.origins[3 * k + a] = static_cast<float>(origin[a]);
                        p.directions[3 * k + a] = static_cast<float>(d[a]);
                    }
                }
            out.push_back(std::move(p));
        }
    if (out.empty()) throw EmptyProxyError("partition_patches: no patch holds a valid depth-bound pixel");
    return out;
}

void sample_coarse(RayPatch& p, int n_coarse, bool jitter, const SampleKey& key) {
    if (n_coarse <= 0) throw std::invalid_argument("sample_coarse: n_coarse must be positive");
    p.samples = n_coarse;
    p.t.assign(static_cast<std::size_t>(p.rays()) * n_coarse, 0.0f);
    const uint64_t base = patch_key(key, 1);
    for (int r = 0; r < p.rays(); ++r) {
        CounterRng rng(hash_key({base, static_cast<uint64_t>(r)}));
        const double near = p.near[r], far = p.far[r];
        const double bin = (far - near) / n_coarse;
        float* t = p.t.data() + static_cast<std::size_t>(r) * n_coarse;
        for (int i = 0; i < n_coarse; ++i) {
            const double u = jitter ? rng.uniform() : 0.5;
            t[i] = static_cast<float>(std::min(near + (i + u) * bin, far));
        }
    }
    recompute_deltas(p);
}

std::vector<double> inverse_cdf_samples(const std::vector<double>& weights, double near, double far, int n,
                                        bool jitter, uint64_t key) {
    const std::size_t bins = weights.size();
    std::vector<double> w(weights);
    for (double& x : w)
        if (!(x > 0.0)) x = 0.0;
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
        std::fill(w.begin(), w.end(), 1.0);
        total = static_cast<double>(bins);
    }
    std::vector<double> cdf(bins + 1, 0.0);
    for (std::size_t i = 0; i < bins; ++i) cdf[i + 1] = cdf[i] + w[i] / total;
    cdf[bins] = 1.0;
    const double width = (far - near) / static_cast<double>(bins);
    CounterRng rng(key);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double u = (k + (jitter ? rng.uniform() : 0.5)) / n;
        // First bin whose upper cdf edge exceeds u, skipping empty bins.
        std::size_t b = static_cast<std::size_t>(std::upper_bound(cdf.begin() + 1, cdf.end(), u) - cdf.begin() - 1);
        b = std::min(b, bins - 1);
        while (w[b] <= 0.0 && b + 1 < bins) ++b;
        const double mass = cdf[b + 1] - cdf[b];
        const double frac = mass > 0.0 ? std::clamp((u - cdf[b]) / mass, 0.0, 1.0) : 0.5;
        out[static_cast<std::size_t>(k)] = near + (static_cast<double>(b) + frac) * width;
    }
    return out;
}

void sample_fine(RayPatch& p, const std::vector<float>& weights, int n_fine, bool jitter, const SampleKey& key) {
    const int nc = p.samples;
    if (n_fine <= 0) throw std::invalid_argument("sample_fine: n_fine must be positive");
    if (weights.size() != static_cast<std::size_t>(p.rays()) * nc)
        throw std::invalid_argument("sample_fine: weights must hold rays x coarse samples");
    const int n = nc + n_fine;
    std::vector<float> merged(static_cast<std::size_t>(p.rays()) * n);
    const uint64_t base = patch_key(key, 2);
    for (int r = 0; r < p.rays(); ++r) {
        const double near = p.near[r], far = p.far[r];
        std::vector<double> w(weights.begin() + static_cast<std::ptrdiff_t>(r) * nc,
                              weights.begin() + static_cast<std::ptrdiff_t>(r + 1) * nc);
        const std::vector<double> fine =
            inverse_cdf_samples(w, near, far, n_fine, jitter, hash_key({base, static_cast<uint64_t>(r)}));
        float* t = merged.data() + static_cast<std::size_t>(r) * n;
        std::copy(p.t.begin() + static_cast<std::ptrdiff_t>(r) * nc, p.t.begin() + static_cast<std::ptrdiff_t>(r + 1) * nc, t);
        for (int k = 0; k < n_fine; ++k) t[nc + k] = static_cast<float>(fine[static_cast<std::size_t>(k)]);
        std::sort(t, t + n);
        if (far - near < kMinSpan) continue;
        // Break ties so the sequence is strictly increasing.
        const float gap = std::max(static_cast<float>((far - near) * 1e-5),
                                   4.0f * std::numeric_limits<float>::epsilon() * static_cast<float>(std::abs(far)));
        for (int i = 1; i < n; ++i) t[i] = std::max(t[i], t[i - 1] + gap);
        if (t[n - 1] >= static_cast<float>(far)) {
            t[n - 1] = static_cast<float>(far) - gap;
            for (int i = n - 2; i >= 0; --i) t[i] = std::min(t[i], t[i + 1] - gap);
        }
    }
    p.samples = n;
    p.t = std::move(merged);
    recompute_deltas(p);
}

SampleBatch::Index SampleBatch::index_of(int64_t row) const {
    Index ix{};
    ix.sample = static_cast<int>(row % samples);
    row /= samples;
    ix.pixel = static_cast<int>(row % rays_per_patch);
    ix.patch = static_cast<int>(row / rays_per_patch);
    return ix;
}

SampleBatch make_sample_batch(const std::vector<RayPatch>& patches, const Aabb& bounds) {
    SampleBatch b;
    if (patches.empty()) throw std::invalid_argument("make_sample_batch: no patches");
    b.patches = static_cast<int>(patches.size());
    b.rays_per_patch = patches[0].rays();
    b.samples = patches[0].samples;
    for (const auto& p : patches)
        if (p.rays() != b.rays_per_patch || p.samples != b.samples || p.samples == 0)
            throw std::invalid_argument("make_sample_batch: patches differ in size or are unsampled");
    const int64_t rows = b.rows();
    std::vector<float> pos(static_cast<std::size_t>(rows) * 3), dir(static_cast<std::size_t>(rows) * 3);
    std::vector<float> del(static_cast<std::size_t>(rows));
    const Eigen::Vector3f center = (0.5 * (bounds.lo + bounds.hi)).cast<float>();
    const Eigen::Vector3f inv_half = (2.0 * (bounds.hi - bounds.lo).cwiseInverse()).cast<float>();
    for (int pi = 0; pi < b.patches; ++pi) {
        const RayPatch& p = patches[static_cast<std::size_t>(pi)];
        for (int r = 0; r < p.rays(); ++r)
            for (int s = 0; s < p.samples; ++s) {
                const std::size_t row = static_cast<std::size_t>(b.row_of(pi, r, s));
                const float t = p.t[static_cast<std::size_t>(r) * p.samples + s];
                for (int a = 0; a < 3; ++a) {
                    const float x = p.origins[3 * r + a] + t * p.directions[3 * r + a];
                    pos[3 * row + a] = (x - center[a]) * inv_half[a];
                    dir[3 * row + a] = p.directions[3 * r + a];
                }
                del[row] = p.delta[static_cast<std::size_t>(r) * p.samples + s];
            }
    }
    b.positions = ad::Tensor({rows, 3}, std::move(pos));
    b.directions = ad::Tensor({rows, 3}, std::move(dir));
    b.deltas = ad::Tensor({rows / b.samples, b.samples}, std::move(del));
    return b;
}

int64_t issued_samples(const std::vector<RayPatch>& patches) {
    int64_t n = 0;
    for (const auto& p : patches) n += static_cast<int64_t>(p.rays()) * p.samples;
    return n;
}

}  // namespace ofield
