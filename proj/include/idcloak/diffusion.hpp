#pragma once

#include <utility>
#include <vector>

#include "idcloak/denoiser.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
DataTensor forward_diffuse(const DataTensor& x0, int t, const DataTensor& eps, const NoiseSchedule& sched);

// x0_hat = (x_t - sqrt(1 - ab_t) eps_pred) / sqrt(ab_t), for 1 <= t <= T.
DataTensor predict_x0(const DataTensor& x_t, int t, const DataTensor& eps_pred, const NoiseSchedule& sched);

// One DDIM update from t to t_prev:
//   sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev - sigma^2) eps_pred + sigma eps_extra
DataTensor ddim_step(const DataTensor& x_t, int t, int t_prev, const DataTensor& eps_pred, double sigma_t,
                     const DataTensor& eps_extra, const NoiseSchedule& sched);

// Timesteps visited by the deterministic reverse chain from T down to t_stop
// on a grid of `steps` evenly spaced intervals over [0, T]. The first entry
// is T and the last is t_stop.
std::vector<int> reverse_chain(int T, int t_stop, int steps);

// Draws x_T ~ N(0, I) for every column of `conditions` and runs DDIM with
// sigma = 0 down to t_stop. Noise is drawn column by column.
Batch sample_latent_batch(const NoisePredictor& model, const Batch& conditions, int t_stop, int steps, Rng& rng,
                          const NoiseSchedule& sched);

DataTensor sample_latent(const NoisePredictor& model, const ConditionEmbedding& c, int t_stop, int steps, Rng& rng,
                         const NoiseSchedule& sched, const Shape& shape);

struct LossEval {
    double loss = 0.0;
    Gradients grads;
};

// Sum over columns of ||eps - eps_model(x_t, t, c)||^2 with the requested
// gradients (w.r.t. parameters, x_t and c).
LossEval noise_prediction_loss(const DifferentiablePredictor& model, const Batch& x_t, const Timesteps& t,
                               const Batch& eps, const Batch& c, GradRequest want);

struct DenoiseDraw {
    int t = 0;
    Eigen::VectorXd eps;
};

// Samples t ~ U{1..T} and eps ~ N(0, I), diffuses x0, and evaluates the
// noise-prediction loss with its parameter gradient.
LossEval denoise_loss(const DifferentiablePredictor& model, const DataTensor& x0, const ConditionEmbedding& c,
                      Rng& rng, const NoiseSchedule& sched, DenoiseDraw* draw = nullptr);

struct TrainingExample {
    DataTensor image;
    ConditionEmbedding condition;
};

struct TrainOptions {
    int steps = 0;
    double lr = 1e-3;
    int batch = 16;
};

struct TrainResult {
    DenoiserModel model;
    std::vector<double> losses;  // mean per-example loss for every step
};

// Adam on the batch-mean noise-prediction loss.
TrainResult train_denoiser(const std::vector<TrainingExample>& dataset, DenoiserModel model, const TrainOptions& opt,
                           Rng& rng, const NoiseSchedule& sched);

} // namespace idcloak
