#include "ofield/training.hpp"

#include "ofield/metrics.hpp"
#include "ofield/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace ofield {
namespace {

constexpr uint64_t kPermutationStream = 0x7065726D;  // "perm"
constexpr uint64_t kRealStream = 0x7265616C;         // "real"

ad::Tensor stack(const std::vector<ad::Tensor>& parts) {
    return parts.size() == 1 ? parts[0] : ad::concat<float>(parts, 0);
}

bool finite(const ad::Tensor& t) { return std::isfinite(static_cast<double>(t.item())); }

}  // namespace

void batch_metrics(const ad::Tensor& image, const ad::Tensor& alpha, const ad::Tensor& gt, const ad::Tensor& gt_alpha,
                   const ad::Tensor& mask, double& psnr_fg, double& sad_alpha) {
    const int64_t P = image.dim(0), plane = image.dim(2) * image.dim(3);
    const auto im = image.values(), a = alpha.values(), g = gt.values(), ga = gt_alpha.values(), m = mask.values();
    double se = 0.0, sad = 0.0;
    int64_t n = 0;
    for (int64_t p = 0; p < P; ++p)
        for (int64_t i = 0; i < plane; ++i) {
            const std::size_t px = static_cast<std::size_t>(p * plane + i);
            if (m[px] <= 0.0f) continue;
            sad += std::abs(static_cast<double>(a[px]) - ga[px]);
            if (!(ga[px] > 0.5f / 255.0f)) continue;
            for (int c = 0; c < 3; ++c) {
                const std::size_t k = static_cast<std::size_t>((p * 3 + c) * plane + i);
                const double d = static_cast<double>(im[k]) - g[k];
                se += d * d;
                ++n;
            }
        }
    psnr_fg = n == 0 ? kPsnrCap : std::min(kPsnrCap, se > 0.0 ? -10.0 * std::log10(se / n) : kPsnrCap);
    sad_alpha = sad / 1000.0;
}

Trainer::Trainer(const TrainConfig& config, std::vector<GroundTruthView> views)
    : Trainer(config, views, build_proxy(views, config)) {}

Trainer::Trainer(const TrainConfig& config, std::vector<GroundTruthView> views, Proxy proxy)
    : config_(config),
      views_(std::move(views)),
      proxy_(std::move(proxy)),
      model_(std::make_unique<OpacityFieldModel>(config)),
      g_opt_(ad::Optimizer<float>::adam(config.learning_rate)),
      d_opt_(ad::Optimizer<float>::adam(config.learning_rate)) {
    config_.validate();
    if (views_.empty()) throw ConfigError("training: dataset has no views");
    build_pool();
}

void Trainer::build_pool() {
    const int K = config_.patch_size;
    for (std::size_t v = 0; v < views_.size(); ++v) {
        const GroundTruthView& gv = views_[v];
        const DepthBounds bounds = proxy_.depth_bounds(gv.view);
        for (RayPatch& patch : partition_patches(gv.view, bounds, K, static_cast<int>(v))) {
            PoolEntry e;
            std::vector<float> img(3 * K * K, 0.0f), alpha(K * K, 0.0f), mask(K * K, 0.0f);
            for (int i = 0; i < K; ++i)
                for (int j = 0; j < K; ++j) {
                    const int r = patch.row0 + i, c = patch.col0 + j;
                    if (r >= gv.view.height || c >= gv.view.width) continue;
                    const float a = gv.alpha.at(r, c);
                    alpha[i * K + j] = a;
                    mask[i * K + j] = 1.0f;
                    for (int k = 0; k < 3; ++k) img[(k * K + i) * K + j] = a * gv.foreground.at(r, c, k) + (1.0f - a);
                }
            e.image = ad::Tensor({1, 3, K, K}, std::move(img));
            e.alpha = ad::Tensor({1, 1, K, K}, std::move(alpha));
            e.mask = ad::Tensor({1, 1, K, K}, std::move(mask));
            e.patch = std::move(patch);
            pool_.push_back(std::move(e));
        }
    }
    if (pool_.empty()) throw EmptyProxyError("training: the proxy covers no pixel of any view");
}

std::vector<std::size_t> Trainer::batch_indices(int64_t step) const {
    const auto n = static_cast<int64_t>(pool_.size());
    const int64_t B = config_.patches_per_batch;
    std::vector<std::size_t> out;
    int64_t cached_epoch = -1;
    std::vector<std::size_t> perm;
    for (int64_t k = 0; k < B; ++k) {
        const int64_t slot = step * B + k;
        const int64_t epoch = slot / n;
        if (epoch != cached_epoch) {
            perm.resize(static_cast<std::size_t>(n));
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            CounterRng rng(hash_key({config_.seed, kPermutationStream, static_cast<uint64_t>(epoch)}));
            for (int64_t i = n - 1; i > 0; --i) {
                const auto j = static_cast<int64_t>(rng.uniform() * static_cast<double>(i + 1));
                std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(std::min(j, i))]);
            }
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<std::size_t>(slot % n)]);
    }
    return out;
}

std::vector<RayPatch> Trainer::gather(const std::vector<std::size_t>& idx, ad::Tensor& gt, ad::Tensor& gt_alpha,
                                      ad::Tensor& mask) const {
    std::vector<RayPatch> patches;
    std::vector<ad::Tensor> g, a, m;
    for (std::size_t i : idx) {
        const PoolEntry& e = pool_.at(i);
        patches.push_back(e.patch);
        g.push_back(e.image);
        a.push_back(e.alpha);
        m.push_back(e.mask);
    }
    ad::NoGradGuard guard;
    gt = stack(g);
    gt_alpha = stack(a);
    mask = stack(m);
    return patches;
}

Trainer::Losses Trainer::generator_losses(const PatchForward& f, const ad::Tensor& gt, const ad::Tensor& gt_alpha,
                                          const ad::Tensor& mask) const {
    Losses l;
    const bool perceptual = config_.perceptual_weight > 0.0;
    const auto pw = static_cast<float>(config_.perceptual_weight);
    const auto wa = static_cast<float>(config_.loss.alpha_weight);
    l.recon = loss_reconstruction(f.image, f.alpha, gt, gt_alpha, mask);
    l.perceptual = perceptual ? ad::scale(loss_perceptual(backbone_, f.image, gt, f.alpha, gt_alpha, mask), pw)
                              : ad::Tensor::scalar(0.0f);
    // Intermediate supervision on the fine network's direct composite, plus the
    // coarse network's own composite so its density keeps guiding the fine samples.
    ad::Tensor inter = loss_intermediate(f.mlp_image, f.features.coarse_alpha, gt, gt_alpha, mask, config_.loss,
                                         perceptual ? &backbone_ : nullptr);
    inter = ad::add(inter, masked_mse(f.coarse_image, gt, mask));
    if (wa > 0.0f) inter = ad::add(inter, ad::scale(masked_mse(f.coarse_alpha_c, gt_alpha, mask), wa));
    l.intermediate = inter;
    l.adversarial = config_.adversarial()
                        ? ad::scale(loss_generator_adv(model_->discriminator(), f.image),
                                    static_cast<float>(config_.loss.adversarial))
                        : ad::Tensor::scalar(0.0f);
    return l;
}

void Trainer::numeric_failure(const std::string& what, const std::vector<std::size_t>& idx) const {
    std::ostringstream msg;
    msg << "training: non-finite " << what << " at step " << step_ << "; batch";
    for (std::size_t i : idx) {
        const RayPatch& p = pool_[i].patch;
        msg << " (view " << p.view << ", row " << p.row0 << ", col " << p.col0 << ")";
    }
    if (!dump_dir_.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(dump_dir_, ec);
        nlohmann::json dump = {{"step", step_}, {"what", what}, {"config", config_to_json(config_)}};
        for (std::size_t i : idx) {
            const RayPatch& p = pool_[i].patch;
            dump["batch"].push_back({{"pool_index", i}, {"view", p.view}, {"row0", p.row0}, {"col0", p.col0},
                                     {"near", p.near}, {"far", p.far}});
        }
        std::ofstream(dump_dir_ / "nan_dump.json") << dump.dump(2);
        try {
            save_checkpoint(dump_dir_ / "nan_params.ofld", to_named(model_->all_parameters()));
        } catch (const std::exception&) {
        }
        msg << "; dump written to " << dump_dir_.string();
    }
    throw NumericError(msg.str());
}

StepStats Trainer::probe(const std::vector<std::size_t>& idx, uint64_t key_step) const {
    ad::NoGradGuard guard;
    ad::Tensor gt, gt_alpha, mask;
    std::vector<RayPatch> patches = gather(idx, gt, gt_alpha, mask);
    const PatchForward f = model_->forward(patches, key_step, config_.jitter);
    const Losses l = generator_losses(f, gt, gt_alpha, mask);
    StepStats s;
    s.step = step_;
    s.recon = l.recon.item();
    s.perceptual = l.perceptual.item();
    s.intermediate = l.intermediate.item();
    s.adversarial = l.adversarial.item();
    s.samples = issued_samples(patches);
    batch_metrics(f.image, f.alpha, gt, gt_alpha, mask, s.psnr_fg, s.sad_alpha);
    return s;
}

StepStats Trainer::step() {
    auto& tape = ad::Tape<float>::current();
    tape.clear();
    const std::vector<std::size_t> idx = batch_indices(step_);
    ad::Tensor gt, gt_alpha, mask;
    std::vector<RayPatch> patches = gather(idx, gt, gt_alpha, mask);

    // generator
    PatchForward f;
    try {
        f = model_->forward(patches, static_cast<uint64_t>(step_), config_.jitter);
    } catch (const std::invalid_argument& e) {
        // Non-finite weights surface as invalid densities inside the forward pass.
        for (const auto& [name, t] : model_->generator_parameters().entries)
            for (float v : t.values())
                if (!std::isfinite(v)) numeric_failure("parameter " + name + " (" + e.what() + ")", idx);
        throw;
    }
    const Losses l = generator_losses(f, gt, gt_alpha, mask);
    const ad::Tensor total = ad::add(ad::add(ad::add(l.recon, l.perceptual), l.intermediate), l.adversarial);
    StepStats s;
    s.step = step_;
    s.recon = l.recon.item();
    s.perceptual = l.perceptual.item();
    s.intermediate = l.intermediate.item();
    s.adversarial = l.adversarial.item();
    s.samples = issued_samples(patches);
    if (!finite(total)) numeric_failure("generator loss", idx);
    batch_metrics(f.image, f.alpha, gt, gt_alpha, mask, s.psnr_fg, s.sad_alpha);
    ad::backward(total);
    ad::ParameterSet<float> g_params = model_->generator_parameters();
    for (auto& [name, t] : g_params.entries)
        for (float g : t.grad())
            if (!std::isfinite(g)) numeric_failure("gradient of " + name, idx);
    g_opt_.step(g_params.tensors());
    const ad::Tensor fake = f.image.detach();
    tape.clear();

    // discriminator
    ad::ParameterSet<float> d_params = model_->discriminator_parameters();
    d_params.zero_grad();
    if (config_.adversarial()) {
        CounterRng rng(hash_key({config_.seed, kRealStream, static_cast<uint64_t>(step_)}));
        std::vector<ad::Tensor> real;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(pool_.size()));
            real.push_back(pool_[std::min(j, pool_.size() - 1)].image);
        }
        const ad::Tensor ld = loss_discriminator(model_->discriminator(), fake, stack(real));
        s.discriminator = ld.item();
        if (!finite(ld)) numeric_failure("discriminator loss", idx);
        ad::backward(ld);
        d_opt_.step(d_params.tensors());
        tape.clear();
    }
    ++step_;
    return s;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

void put_moments(std::vector<NamedTensor>& out, const std::string& prefix, ad::Optimizer<float>& opt,
                 const ad::ParameterSet<float>& params) {
    auto& m = opt.first_moments();
    auto& v = opt.second_moments();
    out.push_back({prefix + ".steps", {1}, {static_cast<float>(opt.step_count())}});
    for (std::size_t i = 0; i < m.size(); ++i) {
        out.push_back({prefix + ".m." + params.entries[i].first, params.entries[i].second.shape(), m[i]});
        out.push_back({prefix + ".v." + params.entries[i].first, params.entries[i].second.shape(), v[i]});
    }
}

void get_moments(const std::vector<NamedTensor>& in, const std::string& prefix, ad::Optimizer<float>& opt,
                 const ad::ParameterSet<float>& params) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : in) by_name[t.name] = &t;
    auto it = by_name.find(prefix + ".steps");
    if (it == by_name.end()) throw CheckpointError("checkpoint: missing " + prefix + ".steps");
    opt.set_step_count(static_cast<int64_t>(it->second->values.at(0)));
    auto& m = opt.first_moments();
    auto& v = opt.second_moments();
    m.clear();
    v.clear();
    if (opt.step_count() == 0) return;
    for (const auto& [name, t] : params.entries) {
        auto mi = by_name.find(prefix + ".m." + name), vi = by_name.find(prefix + ".v." + name);
        if (mi == by_name.end() || vi == by_name.end()) throw CheckpointError("checkpoint: missing moments for " + name);
        if (mi->second->values.size() != static_cast<std::size_t>(t.numel()))
            throw CheckpointError("checkpoint: moment size mismatch for " + name);
        m.push_back(mi->second->values);
        v.push_back(vi->second->values);
    }
}

}  // namespace

void Trainer::save(const std::filesystem::path& path) const {
    auto& self = const_cast<Trainer&>(*this);
    std::vector<NamedTensor> out = to_named(model_->all_parameters());
    out.push_back({"trainer.step", {2},
                   {static_cast<float>(step_ & 0xFFFFFF), static_cast<float>(step_ >> 24)}});
    put_moments(out, "adam.generator", self.g_opt_, model_->generator_parameters());
    put_moments(out, "adam.discriminator", self.d_opt_, model_->discriminator_parameters());
    save_checkpoint(path, out);
}

void Trainer::load(const std::filesystem::path& path) {
    const std::vector<NamedTensor> in = load_checkpoint(path);
    ad::ParameterSet<float> params = model_->all_parameters();
    assign_from(params, in);
    const auto it = std::find_if(in.begin(), in.end(), [](const NamedTensor& t) { return t.name == "trainer.step"; });
    if (it == in.end() || it->values.size() != 2) throw CheckpointError("checkpoint: missing trainer.step");
    step_ = static_cast<int64_t>(it->values[0]) + (static_cast<int64_t>(it->values[1]) << 24);
    get_moments(in, "adam.generator", g_opt_, model_->generator_parameters());
    get_moments(in, "adam.discriminator", d_opt_, model_->discriminator_parameters());
}

std::string Trainer::csv_header() { return "step,L_C,L_P,L_N,L_adv,L_D,psnr_fg,sad_alpha"; }

std::string Trainer::csv_row(const StepStats& s) {
    std::ostringstream os;
    os << s.step << std::setprecision(8) << ',' << s.recon << ',' << s.perceptual << ',' << s.intermediate << ','
       << s.adversarial << ',' << s.discriminator << ',' << s.psnr_fg << ',' << s.sad_alpha;
    return os.str();
}

}  // namespace ofield
