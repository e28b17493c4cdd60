#include "idcloak/identity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "idcloak/errors.hpp"
#include "idcloak/optim.hpp"

namespace idcloak {

PersonalizedModel learn_identity(const std::vector<DataTensor>& images, const DenoiserModel& model,
                                 const TextEncoderStub& encoder, const PromptTemplate& prompt,
                                 const IdentityLearningOptions& opt, Rng& rng, const NoiseSchedule& sched) {
    if (opt.steps < 0) throw std::invalid_argument("learn_identity: steps must be >= 0");
    if (images.empty()) throw std::invalid_argument("learn_identity: empty training set");
    if (encoder.dim() != model.cond_dim()) throw std::invalid_argument("learn_identity: encoder/model dim mismatch");
    if (opt.batch < 1) throw std::invalid_argument("learn_identity: batch must be >= 1");

    PersonalizedModel out{model, encoder, {}};
    if (opt.steps == 0) return out;

    const int D = model.data_dim();
    Adam adam_model(out.model.params().size(), opt.lr);
    Adam adam_encoder(out.encoder.table().size(), opt.lr);
    const int last = static_cast<int>(images.size()) - 1;
    for (int step = 0; step < opt.steps; ++step) {
        const ConditionEmbedding c = out.encoder.encode(prompt);
        Batch x_t(D, opt.batch), eps(D, opt.batch);
        Timesteps t(static_cast<std::size_t>(opt.batch));
        for (int j = 0; j < opt.batch; ++j) {
            const DataTensor& x = images[static_cast<std::size_t>(rng.uniform_int(0, last))];
            t[j] = rng.uniform_int(1, sched.T);
            eps.col(j) = rng.normal_vector(D);
            const double ab = sched[t[j]];
            x_t.col(j) = std::sqrt(ab) * x.values() + std::sqrt(1.0 - ab) * eps.col(j);
        }
        const Batch cb = c.values.replicate(1, opt.batch);
        LossEval ev = noise_prediction_loss(out.model, x_t, t, eps, cb, {.params = true, .condition = true});
        const double mean_loss = ev.loss / opt.batch;
        if (!std::isfinite(mean_loss)) throw NumericError("learn_identity: non-finite loss");
        out.losses.push_back(mean_loss);

        const Eigen::VectorXd grad_c = ev.grads.condition.rowwise().sum() / opt.batch;
        Eigen::MatrixXd grad_table = out.encoder.backward(prompt, grad_c);
        adam_model.step(out.model.params(), ev.grads.params / opt.batch);
        adam_encoder.step(out.encoder.table().reshaped(), grad_table.reshaped());
    }
    return out;
}

ConditionEmbedding core_identity(const TextEncoderStub& encoder, const PromptTemplate& prompt) {
    return encoder.encode(prompt);
}

AnchorLoss anchor_objective(const DenoiserModel& model, const DataTensor& image, const ConditionEmbedding& c,
                            const std::vector<NoiseDraw>& draws, const NoiseSchedule& sched) {
    if (c.dim() != model.cond_dim()) throw std::invalid_argument("anchor_objective: condition dim mismatch");
    if (draws.empty()) throw std::invalid_argument("anchor_objective: no noise draws");
    const int D = model.data_dim();
    const auto n = static_cast<Eigen::Index>(draws.size());
    Batch x_t(D, n), eps(D, n);
    Timesteps t(draws.size());
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& d = draws[static_cast<std::size_t>(j)];
        sched.check_timestep(d.t, 1);
        t[static_cast<std::size_t>(j)] = d.t;
        eps.col(j) = d.eps;
        const double ab = sched[d.t];
        x_t.col(j) = std::sqrt(ab) * image.values() + std::sqrt(1.0 - ab) * d.eps;
    }
    LossEval ev = noise_prediction_loss(model, x_t, t, eps, c.values.replicate(1, n), {.condition = true});
    return {ev.loss / static_cast<double>(n), ev.grads.condition.rowwise().sum() / static_cast<double>(n)};
}

AnchorSet diversify_contexts(const std::vector<DataTensor>& images, const DenoiserModel& model,
                             const ConditionEmbedding& c_id, const PromptTuningOptions& opt, Rng& rng,
                             const NoiseSchedule& sched) {
    if (opt.steps < 0) throw std::invalid_argument("diversify_contexts: steps must be >= 0");
    if (opt.batch < 1) throw std::invalid_argument("diversify_contexts: batch must be >= 1");
    if (c_id.dim() != model.cond_dim()) throw std::invalid_argument("diversify_contexts: condition dim mismatch");

    AnchorSet set;
    const std::uint64_t stream_seed = rng.next_u64();
    for (std::size_t i = 0; i < images.size(); ++i) {
        Rng local(Rng::derive(stream_seed, i));
        ConditionEmbedding c = c_id;
        for (int step = 0; step < opt.steps; ++step) {
            std::vector<NoiseDraw> draws(static_cast<std::size_t>(opt.batch));
            for (auto& d : draws) {
                d.t = local.uniform_int(1, sched.T);
                d.eps = local.normal_vector(model.data_dim());
            }
            const AnchorLoss l = anchor_objective(model, images[i], c, draws, sched);
            if (!std::isfinite(l.loss)) throw NumericError("diversify_contexts: non-finite loss");
            c.values -= opt.lr * l.grad;
        }
        set.anchors.push_back(std::move(c));
        set.image_ids.push_back(static_cast<int>(i));
    }
    return set;
}

std::uint64_t IdentitySubspace::hash() const {
    return hash_vector(sigma, hash_vector(mu.values));
}

IdentitySubspace IdentitySubspace::point(const ConditionEmbedding& c) {
    return {c, Eigen::VectorXd::Zero(c.dim()), 1, SigmaDivisor::unbiased};
}

IdentitySubspace estimate_subspace(const AnchorSet& set, SigmaDivisor divisor) {
    if (set.anchors.empty()) throw std::invalid_argument("estimate_subspace: empty anchor set");
    const auto n = static_cast<double>(set.anchors.size());
    const int dim = set.anchors[0].dim();
    // Shifted by the first anchor so identical anchors reproduce it exactly.
    const Eigen::VectorXd& origin = set.anchors[0].values;
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(dim);
    for (const auto& a : set.anchors) {
        if (a.dim() != dim) throw std::invalid_argument("estimate_subspace: anchors differ in dim");
        shift += a.values - origin;
    }
    const Eigen::VectorXd mean = origin + shift / n;
    Eigen::VectorXd ss = Eigen::VectorXd::Zero(dim);
    for (const auto& a : set.anchors) ss += (a.values - mean).cwiseAbs2();
    const double denom = divisor == SigmaDivisor::unbiased ? n - 1.0 : n;
    IdentitySubspace q;
    q.mu = ConditionEmbedding(mean);
    q.sigma = denom > 0.0 ? Eigen::VectorXd((ss / denom).cwiseSqrt()) : Eigen::VectorXd::Zero(dim);
    q.anchor_count = static_cast<int>(set.anchors.size());
    q.divisor = divisor;
    return q;
}

ConditionEmbedding sample_condition(const IdentitySubspace& q, Rng& rng, double truncation) {
    if (!(truncation > 0.0)) throw std::invalid_argument("sample_condition: truncation must be > 0");
    Eigen::VectorXd c = q.mu.values;
    for (Eigen::Index i = 0; i < c.size(); ++i) {
        const double z = std::clamp(rng.normal(), -truncation, truncation);
        c[i] += q.sigma[i] * z;
    }
    return ConditionEmbedding(std::move(c));
}

} // namespace idcloak
