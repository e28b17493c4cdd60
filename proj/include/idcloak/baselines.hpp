#pragma once

#include <cstdint>
#include <vector>

#include "idcloak/cloak.hpp"
#include "idcloak/denoiser.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

// Image-level comparison methods. Both maximise the denoising loss of the
// surrogate model on the perturbed image,
//   L(delta) = ||eps - eps_model(sqrt(ab_t)(x + delta) + sqrt(1 - ab_t) eps, t, c)||^2,
// with signed PGD steps inside the same l_inf ball as the identity cloak.
struct ImageCloakConfig {
    int steps = 200;
    double alpha = 0.005;
    double eta = kDefaultEta;
    int t_min = 1;
    int t_max = 0;  // 0 means T

    void validate(const NoiseSchedule& sched) const;
};

struct ImageLossEval {
    double loss = 0.0;
    DataTensor grad;  // w.r.t. delta
};

ImageLossEval image_cloak_loss(const DifferentiablePredictor& model, const DataTensor& x, const DataTensor& delta,
                               int t, const Eigen::VectorXd& eps, const ConditionEmbedding& c,
                               const NoiseSchedule& sched);

// One cloak per image. Images are processed in order from a single stream;
// each step draws t then eps.
std::vector<DataTensor> craft_image_specific(const DenoiserModel& model, const std::vector<DataTensor>& images,
                                             const ConditionEmbedding& c, const ImageCloakConfig& cfg,
                                             const NoiseSchedule& sched, Rng& rng,
                                             std::vector<std::vector<DataTensor>>* trajectories = nullptr);

// Universal variant: each step draws (t, eps) per image in order, averages
// the per-image delta gradients and takes one signed step on the shared delta.
DataTensor craft_gradient_average(const DenoiserModel& model, const std::vector<DataTensor>& images,
                                  const ConditionEmbedding& c, const ImageCloakConfig& cfg,
                                  const NoiseSchedule& sched, Rng& rng,
                                  std::vector<DataTensor>* trajectory = nullptr);

// Random assignment of source cloaks to `targets` images.
std::vector<DataTensor> transfer_cloaks(const std::vector<DataTensor>& cloaks, std::size_t targets, Rng& rng);

} // namespace idcloak
