#include "idcloak/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "idcloak/errors.hpp"
#include "idcloak/optim.hpp"

namespace idcloak {

DataTensor forward_diffuse(const DataTensor& x0, int t, const DataTensor& eps, const NoiseSchedule& sched) {
    require_same_shape(x0, eps, "forward_diffuse");
    sched.check_timestep(t);
    const double ab = sched[t];
    return x0.with_values(std::sqrt(ab) * x0.values() + std::sqrt(1.0 - ab) * eps.values());
}

DataTensor predict_x0(const DataTensor& x_t, int t, const DataTensor& eps_pred, const NoiseSchedule& sched) {
    require_same_shape(x_t, eps_pred, "predict_x0");
    sched.check_timestep(t, 1);
    const double ab = sched[t];
    if (!(ab > 0.0)) throw std::domain_error("predict_x0: alpha_bar[" + std::to_string(t) + "] is zero");
    return x_t.with_values((x_t.values() - std::sqrt(1.0 - ab) * eps_pred.values()) / std::sqrt(ab));
}

DataTensor ddim_step(const DataTensor& x_t, int t, int t_prev, const DataTensor& eps_pred, double sigma_t,
                     const DataTensor& eps_extra, const NoiseSchedule& sched) {
    require_same_shape(x_t, eps_pred, "ddim_step");
    require_same_shape(x_t, eps_extra, "ddim_step");
    sched.check_timestep(t, 1);
    if (t_prev < 0 || t_prev >= t) {
        throw std::invalid_argument("ddim_step: need 0 <= t_prev < t, got t_prev=" + std::to_string(t_prev) +
                                    " t=" + std::to_string(t));
    }
    if (sigma_t < 0.0) throw std::invalid_argument("ddim_step: sigma_t must be >= 0");
    const double ab_prev = sched[t_prev];
    const double dir_var = 1.0 - ab_prev - sigma_t * sigma_t;
    if (dir_var < 0.0) throw std::invalid_argument("ddim_step: 1 - alpha_bar_prev - sigma^2 < 0");
    const DataTensor x0_hat = predict_x0(x_t, t, eps_pred, sched);
    return x_t.with_values(std::sqrt(ab_prev) * x0_hat.values() + std::sqrt(dir_var) * eps_pred.values() +
                           sigma_t * eps_extra.values());
}

std::vector<int> reverse_chain(int T, int t_stop, int steps) {
    if (t_stop < 0 || t_stop > T) throw std::invalid_argument("reverse chain: t_stop out of range");
    if (steps < 1 || steps > T) throw std::invalid_argument("reverse chain: steps must lie in [1, T]");
    std::vector<int> chain{T};
    for (int i = steps - 1; i >= 0; --i) {
        const int g = static_cast<int>(std::llround(static_cast<double>(i) * T / steps));
        if (g < chain.back() && g > t_stop) chain.push_back(g);
    }
    if (chain.back() > t_stop) chain.push_back(t_stop);
    return chain;
}

Batch sample_latent_batch(const NoisePredictor& model, const Batch& conditions, int t_stop, int steps, Rng& rng,
                          const NoiseSchedule& sched) {
    const auto chain = reverse_chain(sched.T, t_stop, steps);
    const Eigen::Index n = conditions.cols();
    Batch x(model.data_dim(), n);
    for (Eigen::Index j = 0; j < n; ++j) x.col(j) = rng.normal_vector(model.data_dim());

    for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
        const int t = chain[k];
        const int t_prev = chain[k + 1];
        const Batch eps = model.predict(x, Timesteps(static_cast<std::size_t>(n), t), conditions);
        const double ab = sched[t];
        const double ab_prev = sched[t_prev];
        const Batch x0_hat = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
        x = std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps;
    }
    return x;
}

DataTensor sample_latent(const NoisePredictor& model, const ConditionEmbedding& c, int t_stop, int steps, Rng& rng,
                         const NoiseSchedule& sched, const Shape& shape) {
    const Batch x = sample_latent_batch(model, Batch(c.values), t_stop, steps, rng, sched);
    return DataTensor(shape, x.col(0), Space::latent);
}

LossEval noise_prediction_loss(const DifferentiablePredictor& model, const Batch& x_t, const Timesteps& t,
                               const Batch& eps, const Batch& c, GradRequest want) {
    if (eps.rows() != x_t.rows() || eps.cols() != x_t.cols()) {
        throw std::invalid_argument("noise_prediction_loss: eps shape does not match x_t");
    }
    Tape tape;
    const Batch pred = model.forward(x_t, t, c, tape);
    const Batch diff = pred - eps;
    LossEval out;
    out.loss = diff.squaredNorm();
    if (want.params || want.input || want.condition) out.grads = model.backward(tape, 2.0 * diff, want);
    return out;
}

LossEval denoise_loss(const DifferentiablePredictor& model, const DataTensor& x0, const ConditionEmbedding& c,
                      Rng& rng, const NoiseSchedule& sched, DenoiseDraw* draw) {
    if (c.dim() != model.cond_dim()) throw std::invalid_argument("denoise_loss: condition dim mismatch");
    if (static_cast<int>(x0.size()) != model.data_dim()) throw std::invalid_argument("denoise_loss: data dim mismatch");
    const int t = rng.uniform_int(1, sched.T);
    const DataTensor eps = x0.with_values(rng.normal_vector(static_cast<Eigen::Index>(x0.size())));
    const DataTensor x_t = forward_diffuse(x0, t, eps, sched);
    if (draw) *draw = {t, eps.values()};
    return noise_prediction_loss(model, Batch(x_t.values()), Timesteps{t}, Batch(eps.values()), Batch(c.values),
                                 GradRequest{.params = true});
}

TrainResult train_denoiser(const std::vector<TrainingExample>& dataset, DenoiserModel model, const TrainOptions& opt,
                           Rng& rng, const NoiseSchedule& sched) {
    if (opt.steps < 0) throw std::invalid_argument("train_denoiser: steps must be >= 0");
    TrainResult result{std::move(model), {}};
    if (opt.steps == 0) return result;
    if (dataset.empty()) throw std::invalid_argument("train_denoiser: empty dataset");
    if (opt.batch < 1) throw std::invalid_argument("train_denoiser: batch must be >= 1");

    DenoiserModel& m = result.model;
    const int D = m.data_dim();
    for (const auto& ex : dataset) {
        if (static_cast<int>(ex.image.size()) != D || ex.condition.dim() != m.cond_dim()) {
            throw std::invalid_argument("train_denoiser: example dims do not match model");
        }
    }

    Adam adam(m.params().size(), opt.lr);
    result.losses.reserve(static_cast<std::size_t>(opt.steps));
    const int last = static_cast<int>(dataset.size()) - 1;
    for (int step = 0; step < opt.steps; ++step) {
        Batch x_t(D, opt.batch), eps(D, opt.batch), c(m.cond_dim(), opt.batch);
        Timesteps t(static_cast<std::size_t>(opt.batch));
        for (int j = 0; j < opt.batch; ++j) {
            const auto& ex = dataset[static_cast<std::size_t>(rng.uniform_int(0, last))];
            t[j] = rng.uniform_int(1, sched.T);
            eps.col(j) = rng.normal_vector(D);
            const double ab = sched[t[j]];
            x_t.col(j) = std::sqrt(ab) * ex.image.values() + std::sqrt(1.0 - ab) * eps.col(j);
            c.col(j) = ex.condition.values;
        }
        LossEval ev = noise_prediction_loss(m, x_t, t, eps, c, GradRequest{.params = true});
        const double mean_loss = ev.loss / opt.batch;
        if (!std::isfinite(mean_loss)) {
            throw NumericError("train_denoiser: non-finite loss at step " + std::to_string(step));
        }
        result.losses.push_back(mean_loss);
        adam.step(m.params(), ev.grads.params / opt.batch);
    }
    return result;
}

} // namespace idcloak
