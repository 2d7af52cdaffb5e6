#ifndef LRNOISE_TRAINING_HPP
#define LRNOISE_TRAINING_HPP

#include <optional>
#include <string>
#include <vector>

#include "lrnoise/data.hpp"
#include "lrnoise/models.hpp"

namespace lrnoise {

struct TrainConfig {
    double lambda1 = 0.1;    // L1 alignment weight
    double lambda2 = 0.01;   // perceptual weight
    double penalty_coef = 10.0;
    double lr_init = 2e-4;
    double lr_final = 1e-6;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int epochs = 60;
    int batch_size = 16;
    int patch_size = 32;
    int critic_steps_per_gen_step = 5;
    uint64_t seed = 0;
};

/// Plain-text key=value file, one key per TrainConfig field. Unknown keys
/// are errors.
TrainConfig load_config(const std::string& path);
void save_config(const TrainConfig& cfg, const std::string& path);
void validate_config(const TrainConfig& cfg);

/// lr(t) = lr_final + (lr_init - lr_final) * (1 + cos(pi t / T)) / 2
double cosine_lr(int64_t t, int64_t total, double lr_init, double lr_final);

// --- Adam ------------------------------------------------------------------------

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t step = 0;
};

AdamState make_adam_state(const std::vector<Tensor*>& params);

/// Standard bias-corrected Adam update, epsilon 1e-8. Zero gradients leave
/// parameters untouched only at step counts where both corrections agree;
/// the canonical property (grad == 0 for all steps => no movement) holds
/// because m and v stay zero.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps = 1e-8);

// --- losses (graph builders) -------------------------------------------------------

/// || P(d_hat) - P(d_rn) ||_1 with the denoiser bound frozen. Gradients flow
/// through d_hat only.
Var loss_l1_aligned(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn);

/// Mean squared difference of the denoiser's feature taps, averaged over taps.
Var loss_perceptual(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn);

/// Both alignment losses with a single denoiser evaluation per input.
struct AlignedLosses {
    Var l1;
    Var perceptual;
};
AlignedLosses aligned_losses(Graph& g, UNetParams& denoiser, Var d_hat, Var d_rn);

/// First-order Lipschitz surrogate for the gradient penalty: for a pair of
/// nearby critic scores at inputs distance `l2_dist` apart,
/// (max(0, |s1 - s2| / l2_dist - 1))^2.
double diff_quotient_penalty(double s1, double s2, double l2_dist);

/// Critic objective: mean(fake scores) - mean(real scores)
/// + penalty_coef * mean(pair penalties). Pair tensors must be stacked as
/// [2P, 4, S, S] with the perturbed partner in the second half; the pair
/// distance is constant `pair_dist`.
Var critic_loss(Graph& g, Binder& critic_bind, FtdParams& critic, Var real_batch, Var fake_batch,
                Var interp_pairs, double pair_dist, double penalty_coef);

/// Generator objective: -mean(critic(fake)).
Var generator_adv_loss(Graph& g, Binder& critic_bind, FtdParams& critic, Var fake_batch);

/// L = adv + lambda1 * l1 + lambda2 * perceptual.
Var total_loss(Graph& g, Var adv, Var l1, Var perceptual, double lambda1, double lambda2);

// --- inference path -----------------------------------------------------------------

/// Full learned-model synthesis: exact shot noise at K, generator noise from
/// an initial map at sigma_r (DN, scaled into the normalized domain), clamped
/// composition. Consumes only (clean, K, sigma_r, rng) - no real noisy image.
RawPatch synthesize_learned(const RawPatch& clean, UNetParams& generator, double gain_k,
                            double sigma_r_dn, RngStream& rng);

// --- training loops -----------------------------------------------------------------

struct EpochLogRow {
    int epoch = 0;
    int step = 0;
    double critic_loss = 0.0;
    double gen_loss = 0.0;
    double l1 = 0.0;
    double perceptual = 0.0;
    double lr = 0.0;
    double val_metric = 0.0;  // written on epoch-final rows only
    bool has_val = false;
    bool has_adv = false;
    bool has_aligned = false;
};

using LogSink = std::function<void(const EpochLogRow&)>;

struct DenoiserTrainResult {
    UNetParams params;
    std::vector<double> epoch_train_l1;
    std::vector<double> epoch_val_l1;
    double noisy_baseline_l1 = 0.0;  // validation L1 of the identity denoiser
};

/// Minimizes mean |P(noisy) - clean| with Adam and a cosine schedule.
/// `state_path`, when set, persists resumable training state each epoch;
/// `stop_after_epoch` ends the run early (for resume tests and staging).
DenoiserTrainResult train_denoiser(const PairedSet& pairs, const TrainConfig& cfg,
                                   const LogSink& log = {},
                                   const std::string& state_path = "",
                                   int stop_after_epoch = -1,
                                   const std::string& resume_from = "");

struct NoiseModelTrainResult {
    UNetParams generator;  // best validation KLD weights
    FtdParams critic;      // final critic
    std::vector<double> epoch_val_kld;
    double initial_val_kld = 0.0;
    int best_epoch = -1;
};

struct NoiseModelOptions {
    bool spectral_critic = true;  // false = vanilla transformer ablation
    std::string state_path;
    int stop_after_epoch = -1;
    std::string resume_from;
};

/// Alternating WGAN training of the noise generator against the critic with
/// the full objective. `denoiser` stays frozen (bit-identical afterwards).
NoiseModelTrainResult train_noise_model(const PairedSet& pairs,
                                        const std::vector<SensorProfile>& profiles,
                                        UNetParams& denoiser, const TrainConfig& cfg,
                                        const LogSink& log = {},
                                        const NoiseModelOptions& opt = {});

}  // namespace lrnoise

#endif
