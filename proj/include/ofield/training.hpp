#pragma once

// Alternating generator / discriminator optimization over a pool of
// ground-truth patches.

#include "ofield/checkpoint.hpp"
#include "ofield/model.hpp"
#include "ofield/optim.hpp"

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofield {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepStats {
    int64_t step = 0;
    double recon = 0, perceptual = 0, intermediate = 0;  // L_C, L_P, L_N
    double adversarial = 0;                              // λ_adv-scaled generator term
    double discriminator = 0;
    double psnr_fg = 0, sad_alpha = 0;                   // on the batch
    int64_t samples = 0;                                 // field queries issued

    double generator() const { return recon + perceptual + intermediate; }
};

/// One training patch: sampling template plus ground truth, all [1,·,K,K].
struct PoolEntry {
    RayPatch patch;
    ad::Tensor image;  // composite over white
    ad::Tensor alpha;
    ad::Tensor mask;   // 1 on real image pixels
};

class Trainer {
public:
    Trainer(const TrainConfig& config, std::vector<GroundTruthView> views);
    Trainer(const TrainConfig& config, std::vector<GroundTruthView> views, Proxy proxy);

    /// One G update followed (in adversarial mode) by one D update.
    StepStats step();
    /// Losses on the given pool entries without touching any state.
    StepStats probe(const std::vector<std::size_t>& entries, uint64_t key_step) const;

    /// Pool indices for a step: consecutive slots of a per-epoch permutation.
    std::vector<std::size_t> batch_indices(int64_t step) const;

    int64_t step_count() const { return step_; }
    OpacityFieldModel& model() { return *model_; }
    const OpacityFieldModel& model() const { return *model_; }
    const Proxy& proxy() const { return proxy_; }
    const std::vector<GroundTruthView>& views() const { return views_; }
    const std::vector<PoolEntry>& pool() const { return pool_; }

    /// Where a dump of the offending batch goes when a loss turns non-finite.
    void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

    /// Parameters, optimizer moments and the step counter.
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

    static std::string csv_header();
    static std::string csv_row(const StepStats& s);

private:
    struct Losses {
        ad::Tensor recon, perceptual, intermediate, adversarial;
    };
    Losses generator_losses(const PatchForward& f, const ad::Tensor& gt, const ad::Tensor& gt_alpha,
                            const ad::Tensor& mask) const;
    std::vector<RayPatch> gather(const std::vector<std::size_t>& idx, ad::Tensor& gt, ad::Tensor& gt_alpha,
                                 ad::Tensor& mask) const;
    [[noreturn]] void numeric_failure(const std::string& what, const std::vector<std::size_t>& idx) const;
    void build_pool();

    TrainConfig config_;
    std::vector<GroundTruthView> views_;
    Proxy proxy_;
    std::unique_ptr<OpacityFieldModel> model_;
    PerceptualBackbone<float> backbone_;
    std::vector<PoolEntry> pool_;
    ad::Optimizer<float> g_opt_, d_opt_;
    int64_t step_ = 0;
    std::filesystem::path dump_dir_;
};

/// Batch PSNR over ground-truth foreground pixels and alpha SAD (÷1000).
void batch_metrics(const ad::Tensor& image, const ad::Tensor& alpha, const ad::Tensor& gt, const ad::Tensor& gt_alpha,
                   const ad::Tensor& mask, double& psnr_fg, double& sad_alpha);

}  // namespace ofield
