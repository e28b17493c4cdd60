#include "idcloak/cloak.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "idcloak/diffusion.hpp"

namespace idcloak {

void CloakOptConfig::validate(const NoiseSchedule& sched) const {
    if (outer < 0 || inner < 0 || sampler_steps < 1) throw std::invalid_argument("cloak config: negative count");
    if (!(eta > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("cloak config: eta and alpha must be > 0");
    const int hi = resolved_t_max(sched);
    if (t_min < 1 || hi > sched.T || t_min > hi) throw std::invalid_argument("cloak config: bad timestep range");
    if (sampler_steps > sched.T) throw std::invalid_argument("cloak config: sampler steps exceed T");
    if (!(truncation > 0.0)) throw std::invalid_argument("cloak config: truncation must be > 0");
}

DataTensor apply_cloak_latent(const DataTensor& x_t, int t, const DataTensor& eps_pred, const DataTensor& delta,
                              const NoiseSchedule& sched) {
    require_same_shape(x_t, delta, "apply_cloak_latent");
    const DataTensor x0_hat = predict_x0(x_t, t, eps_pred, sched);
    const double ab = sched[t];
    return x_t.with_values(std::sqrt(ab) * (x0_hat.values() + delta.values()) +
                           std::sqrt(1.0 - ab) * eps_pred.values());
}

ObjectiveEval cloak_objective(const DifferentiablePredictor& model, const DataTensor& x_t,
                              const DataTensor& x_t_cloaked, int t, const ConditionEmbedding& c) {
    require_same_shape(x_t, x_t_cloaked, "cloak_objective");
    const Batch cb(c.values);
    const Timesteps ts{t};
    const Batch clean = model.predict(Batch(x_t.values()), ts, cb);
    Tape tape;
    const Batch cloaked = model.forward(Batch(x_t_cloaked.values()), ts, cb, tape);
    const Batch diff = cloaked - clean;
    ObjectiveEval out;
    out.value = diff.squaredNorm();
    const Gradients g = model.backward(tape, 2.0 * diff, {.input = true});
    out.grad = x_t.with_values(g.input.col(0));
    return out;
}

double sign0(double v) {
    return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
}

DataTensor pgd_step(const DataTensor& delta, const DataTensor& g, double alpha, double eta) {
    require_same_shape(delta, g, "pgd_step");
    if (!(alpha > 0.0) || !(eta > 0.0)) throw std::invalid_argument("pgd_step: alpha and eta must be > 0");
    Eigen::VectorXd out(delta.values().size());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(delta.values()[i] + alpha * sign0(g.values()[i]), -eta, eta);
    }
    return delta.with_values(std::move(out));
}

Cloak optimize_cloak(const DenoiserModel& model, const IdentitySubspace& q, const CloakOptConfig& cfg,
                     const NoiseSchedule& sched, const Shape& shape, Rng& rng, CloakTrace* trace) {
    cfg.validate(sched);
    if (q.dim() != model.cond_dim() || q.sigma.size() != q.mu.values.size()) {
        throw std::invalid_argument("optimize_cloak: subspace dim does not match model condition dim");
    }
    if (shape_volume(shape) != static_cast<std::size_t>(model.data_dim())) {
        throw std::invalid_argument("optimize_cloak: cloak shape does not match model data dim");
    }

    Cloak cloak;
    cloak.delta = DataTensor::zeros(shape);
    cloak.eta = cfg.eta;
    cloak.alpha = cfg.alpha;
    cloak.outer = cfg.outer;
    cloak.inner = cfg.inner;
    cloak.seed = rng.seed();
    cloak.model_hash = model.hash();
    cloak.subspace_hash = q.hash();

    const int t_hi = cfg.resolved_t_max(sched);
    for (int n = 0; n < cfg.outer; ++n) {
        DataTensor delta_inner = cloak.delta;
        DataTensor aggregate = DataTensor::zeros(shape);
        const bool keep = trace && n < trace->keep_inner;
        if (keep) trace->inner.emplace_back();

        for (int m = 0; m < cfg.inner; ++m) {
            const ConditionEmbedding c = sample_condition(q, rng, cfg.truncation);
            const int t = rng.uniform_int(cfg.t_min, t_hi);
            const DataTensor x_t = sample_latent(model, c, t, std::min(cfg.sampler_steps, sched.T), rng, sched, shape);
            const DataTensor eps_pred = model.predict(x_t, t, c);
            const DataTensor cloaked = apply_cloak_latent(x_t, t, eps_pred, delta_inner, sched);
            const ObjectiveEval obj = cloak_objective(model, x_t, cloaked, t, c);

            DataTensor g = obj.grad;
            if (cfg.scale_grad) g.values() *= std::sqrt(sched[t]);
            if (keep) trace->inner.back().push_back({c, t, x_t, delta_inner, g});

            if (cfg.presearch) delta_inner = pgd_step(delta_inner, g, cfg.alpha, cfg.eta);
            aggregate.values() += g.values();
        }
        cloak.delta = pgd_step(cloak.delta, aggregate, cfg.alpha, cfg.eta);
        if (trace) {
            trace->iterates.push_back(cloak.delta);
            trace->aggregates.push_back(aggregate);
        }
    }
    return cloak;
}

Cloak optimize_cloak(const DenoiserModel& model, const IdentitySubspace& q, const CloakOptConfig& cfg,
                     const NoiseSchedule& sched, const Shape& shape, CloakTrace* trace) {
    Rng rng(cfg.seed);
    return optimize_cloak(model, q, cfg, sched, shape, rng, trace);
}

DataTensor apply_cloak_image(const DataTensor& x, const DataTensor& delta, double lo, double hi) {
    require_same_shape(x, delta, "apply_cloak_image");
    return x.with_values((x.values() + delta.values()).cwiseMax(lo).cwiseMin(hi));
}

DataTensor apply_cloak_image(const DataTensor& x, const Cloak& cloak, double lo, double hi) {
    return apply_cloak_image(x, cloak.delta, lo, hi);
}

} // namespace idcloak
