#include "idcloak/baselines.hpp"

#include <cmath>
#include <stdexcept>

#include "idcloak/diffusion.hpp"

namespace idcloak {

void ImageCloakConfig::validate(const NoiseSchedule& sched) const {
    if (steps < 0) throw std::invalid_argument("image cloak config: negative steps");
    if (!(alpha > 0.0) || !(eta > 0.0)) throw std::invalid_argument("image cloak config: alpha and eta must be > 0");
    const int hi = t_max == 0 ? sched.T : t_max;
    if (t_min < 1 || hi > sched.T || t_min > hi) throw std::invalid_argument("image cloak config: bad timestep range");
}

ImageLossEval image_cloak_loss(const DifferentiablePredictor& model, const DataTensor& x, const DataTensor& delta,
                               int t, const Eigen::VectorXd& eps, const ConditionEmbedding& c,
                               const NoiseSchedule& sched) {
    require_same_shape(x, delta, "image_cloak_loss");
    sched.check_timestep(t, 1);
    const double ab = sched[t];
    const Batch x_t = std::sqrt(ab) * (x.values() + delta.values()) + std::sqrt(1.0 - ab) * eps;
    const LossEval ev = noise_prediction_loss(model, x_t, Timesteps{t}, Batch(eps), Batch(c.values), {.input = true});
    return {ev.loss, x.with_values(std::sqrt(ab) * ev.grads.input.col(0))};
}

std::vector<DataTensor> craft_image_specific(const DenoiserModel& model, const std::vector<DataTensor>& images,
                                             const ConditionEmbedding& c, const ImageCloakConfig& cfg,
                                             const NoiseSchedule& sched, Rng& rng,
                                             std::vector<std::vector<DataTensor>>* trajectories) {
    cfg.validate(sched);
    const int t_hi = cfg.t_max == 0 ? sched.T : cfg.t_max;
    std::vector<DataTensor> out;
    for (const auto& x : images) {
        DataTensor delta = DataTensor::zeros(x.shape());
        if (trajectories) trajectories->emplace_back();
        for (int s = 0; s < cfg.steps; ++s) {
            const int t = rng.uniform_int(cfg.t_min, t_hi);
            const Eigen::VectorXd eps = rng.normal_vector(static_cast<Eigen::Index>(x.size()));
            const ImageLossEval ev = image_cloak_loss(model, x, delta, t, eps, c, sched);
            delta = pgd_step(delta, ev.grad, cfg.alpha, cfg.eta);
            if (trajectories) trajectories->back().push_back(delta);
        }
        out.push_back(std::move(delta));
    }
    return out;
}

DataTensor craft_gradient_average(const DenoiserModel& model, const std::vector<DataTensor>& images,
                                  const ConditionEmbedding& c, const ImageCloakConfig& cfg,
                                  const NoiseSchedule& sched, Rng& rng, std::vector<DataTensor>* trajectory) {
    cfg.validate(sched);
    if (images.empty()) throw std::invalid_argument("craft_gradient_average: no images");
    const int t_hi = cfg.t_max == 0 ? sched.T : cfg.t_max;
    DataTensor delta = DataTensor::zeros(images[0].shape());
    for (int s = 0; s < cfg.steps; ++s) {
        DataTensor total = DataTensor::zeros(delta.shape());
        for (const auto& x : images) {
            const int t = rng.uniform_int(cfg.t_min, t_hi);
            const Eigen::VectorXd eps = rng.normal_vector(static_cast<Eigen::Index>(x.size()));
            total.values() += image_cloak_loss(model, x, delta, t, eps, c, sched).grad.values();
        }
        total.values() /= static_cast<double>(images.size());
        delta = pgd_step(delta, total, cfg.alpha, cfg.eta);
        if (trajectory) trajectory->push_back(delta);
    }
    return delta;
}

std::vector<DataTensor> transfer_cloaks(const std::vector<DataTensor>& cloaks, std::size_t targets, Rng& rng) {
    if (cloaks.empty()) throw std::invalid_argument("transfer_cloaks: no source cloaks");
    std::vector<DataTensor> out;
    out.reserve(targets);
    const int last = static_cast<int>(cloaks.size()) - 1;
    for (std::size_t i = 0; i < targets; ++i) out.push_back(cloaks[static_cast<std::size_t>(rng.uniform_int(0, last))]);
    return out;
}

} // namespace idcloak
