#pragma once

// Patch partition and bounded coarse-to-fine sampling along rays.

#include "ofield/autodiff.hpp"
#include "ofield/carving.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace ofield {

class EmptyProxyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RayPatch {
    int view = 0;
    int row0 = 0, col0 = 0;  // multiples of K
    int K = 0;
    // Per ray, row-major within the patch (K*K entries; xyz triples for vectors).
    std::vector<float> origins, directions;
    std::vector<float> near, far;
    std::vector<uint8_t> valid;     // ray bounds came from the proxy
    std::vector<uint8_t> in_image;  // false for right/bottom padding
    int samples = 0;                // per ray
    std::vector<float> t, delta;    // K*K*samples, ascending per ray

    int rays() const { return K * K; }
};

/// Keyed by (seed, view, patch, epoch) so draws are independent of processing order.
struct SampleKey {
    uint64_t seed = 0;
    uint64_t view = 0;
    uint64_t patch = 0;
    uint64_t epoch = 0;
};

/// Patches holding at least one valid pixel, in raster order. Rays of invalid
/// (or padded) pixels inherit the patch-wide [min near, max far].
std::vector<RayPatch> partition_patches(const CameraView& view, const DepthBounds& bounds, int K, int view_index = 0);

/// Stratified samples: bin i of [near, far] gets one draw (its midpoint without jitter).
void sample_coarse(RayPatch& patch, int n_coarse, bool jitter, const SampleKey& key);

/// Inverse-transform draws from the piecewise-constant pdf ∝ weights over the
/// coarse bins, merged with the coarse samples. `weights` holds rays × n_coarse.
void sample_fine(RayPatch& patch, const std::vector<float>& weights, int n_fine, bool jitter, const SampleKey& key);

/// Fine-sample positions in [near, far] for one ray; exposed for testing.
std::vector<double> inverse_cdf_samples(const std::vector<double>& weights, double near, double far, int n,
                                        bool jitter, uint64_t key);

/// Flattened sample rows of a patch list; row = (patch·K² + pixel)·N + sample.
struct SampleBatch {
    int patches = 0, rays_per_patch = 0, samples = 0;
    ad::Tensor positions;   // [rows, 3]
    ad::Tensor directions;  // [rows, 3]
    ad::Tensor deltas;      // [patches·K², N]

    int64_t rows() const { return static_cast<int64_t>(patches) * rays_per_patch * samples; }
    int64_t row_of(int patch, int pixel, int sample) const {
        return (static_cast<int64_t>(patch) * rays_per_patch + pixel) * samples + sample;
    }
    struct Index {
        int patch, pixel, sample;
    };
    Index index_of(int64_t row) const;
};

/// Positions are mapped from `bounds` to [−1,1]³.
SampleBatch make_sample_batch(const std::vector<RayPatch>& patches, const Aabb& bounds);

/// Number of samples the patch list issues (Σ K²·N).
int64_t issued_samples(const std::vector<RayPatch>& patches);

}  // namespace ofield
