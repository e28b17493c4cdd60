#include "idcloak/threat.hpp"

#include <cmath>
#include <stdexcept>

#include "idcloak/diffusion.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/optim.hpp"

namespace idcloak {

AttackMethod parse_attack_method(const std::string& name) {
    if (name == "full_finetune") return AttackMethod::full_finetune;
    if (name == "low_rank") return AttackMethod::low_rank;
    if (name == "embedding_only") return AttackMethod::embedding_only;
    throw std::invalid_argument("unknown attack method '" + name + "'");
}

std::string to_string(AttackMethod m) {
    switch (m) {
    case AttackMethod::full_finetune: return "full_finetune";
    case AttackMethod::low_rank: return "low_rank";
    case AttackMethod::embedding_only: return "embedding_only";
    }
    return "?";
}

void AttackConfig::validate() const {
    if (steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
    if (batch < 1) throw std::invalid_argument("attack: batch must be >= 1");
    if (method == AttackMethod::low_rank && rank < 1) throw std::invalid_argument("attack: rank must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("attack: lr must be > 0");
}

std::vector<std::string> low_rank_targets(const DenoiserModel& model) {
    std::vector<std::string> out;
    for (const auto& s : model.slices()) {
        if (s.cols > 1 && (s.name[0] == 'W' || s.name[0] == 'V')) out.push_back(s.name);
    }
    return out;
}

namespace {

struct Minibatch {
    Batch x_t, eps;
    Timesteps t;
};

Minibatch draw_minibatch(const std::vector<DataTensor>& images, int batch, Rng& rng, const NoiseSchedule& sched) {
    const auto D = static_cast<Eigen::Index>(images[0].size());
    Minibatch mb{Batch(D, batch), Batch(D, batch), Timesteps(static_cast<std::size_t>(batch))};
    const int last = static_cast<int>(images.size()) - 1;
    for (int j = 0; j < batch; ++j) {
        const DataTensor& x = images[static_cast<std::size_t>(rng.uniform_int(0, last))];
        mb.t[static_cast<std::size_t>(j)] = rng.uniform_int(1, sched.T);
        mb.eps.col(j) = rng.normal_vector(D);
        const double ab = sched[mb.t[static_cast<std::size_t>(j)]];
        mb.x_t.col(j) = std::sqrt(ab) * x.values() + std::sqrt(1.0 - ab) * mb.eps.col(j);
    }
    return mb;
}

struct Adapter {
    ParamSlice slice;
    Eigen::MatrixXd left;   // rows x r, starts at zero
    Eigen::MatrixXd right;  // r x cols
};

} // namespace

AttackResult personalize_attack(const std::vector<DataTensor>& published, const DenoiserModel& base,
                                const TextEncoderStub& encoder, const PromptTemplate& prompt,
                                const AttackConfig& cfg, const NoiseSchedule& sched) {
    cfg.validate();
    if (published.empty()) throw std::invalid_argument("personalize_attack: no published images");
    if (encoder.dim() != base.cond_dim()) throw std::invalid_argument("personalize_attack: encoder/model dim mismatch");
    for (const auto& img : published) {
        if (static_cast<int>(img.size()) != base.data_dim()) {
            throw std::invalid_argument("personalize_attack: image size does not match model");
        }
    }

    AttackResult out{base, encoder, {}};
    if (cfg.steps == 0) return out;
    Rng rng(cfg.seed);
    const int B = cfg.batch;
    const int vstar = prompt.tokens[prompt.slot];

    auto record = [&](double loss) {
        const double mean = loss / B;
        if (!std::isfinite(mean)) throw NumericError("personalize_attack: non-finite loss");
        out.losses.push_back(mean);
    };

    switch (cfg.method) {
    case AttackMethod::full_finetune: {
        Adam adam_model(out.model.params().size(), cfg.lr);
        Adam adam_enc(out.encoder.table().size(), cfg.lr);
        for (int step = 0; step < cfg.steps; ++step) {
            const Minibatch mb = draw_minibatch(published, B, rng, sched);
            const ConditionEmbedding c = out.encoder.encode(prompt);
            const LossEval ev = noise_prediction_loss(out.model, mb.x_t, mb.t, mb.eps, c.values.replicate(1, B),
                                                      {.params = true, .condition = true});
            record(ev.loss);
            const Eigen::MatrixXd gt = out.encoder.backward(prompt, ev.grads.condition.rowwise().sum() / B);
            adam_model.step(out.model.params(), ev.grads.params / B);
            adam_enc.step(out.encoder.table().reshaped(), gt.reshaped());
        }
        break;
    }
    case AttackMethod::low_rank: {
        std::vector<Adapter> adapters;
        Eigen::Index total = 0;
        for (const auto& name : low_rank_targets(base)) {
            const ParamSlice& s = base.slice(name);
            Adapter a{s, Eigen::MatrixXd::Zero(s.rows, cfg.rank), Eigen::MatrixXd(cfg.rank, s.cols)};
            const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
            for (Eigen::Index i = 0; i < a.right.size(); ++i) a.right.data()[i] = scale * rng.normal();
            total += a.left.size() + a.right.size();
            adapters.push_back(std::move(a));
        }
        Eigen::VectorXd flat(total);
        auto pack = [&] {
            Eigen::Index off = 0;
            for (const auto& a : adapters) {
                flat.segment(off, a.left.size()) = a.left.reshaped();
                off += a.left.size();
                flat.segment(off, a.right.size()) = a.right.reshaped();
                off += a.right.size();
            }
        };
        auto unpack = [&] {
            Eigen::Index off = 0;
            for (auto& a : adapters) {
                a.left.reshaped() = flat.segment(off, a.left.size());
                off += a.left.size();
                a.right.reshaped() = flat.segment(off, a.right.size());
                off += a.right.size();
            }
        };
        auto merge = [&] {
            out.model.params() = base.params();
            for (const auto& a : adapters) out.model.matrix(a.slice) += a.left * a.right;
        };
        pack();
        Adam adam(total, cfg.lr);
        const ConditionEmbedding c = out.encoder.encode(prompt);
        for (int step = 0; step < cfg.steps; ++step) {
            merge();
            const Minibatch mb = draw_minibatch(published, B, rng, sched);
            const LossEval ev =
                noise_prediction_loss(out.model, mb.x_t, mb.t, mb.eps, c.values.replicate(1, B), {.params = true});
            record(ev.loss);
            Eigen::VectorXd grad(total);
            Eigen::Index off = 0;
            for (const auto& a : adapters) {
                const Eigen::Map<const Eigen::MatrixXd> dW(ev.grads.params.data() + a.slice.offset, a.slice.rows,
                                                           a.slice.cols);
                const Eigen::MatrixXd dl = dW * a.right.transpose() / B;
                const Eigen::MatrixXd dr = a.left.transpose() * dW / B;
                grad.segment(off, dl.size()) = dl.reshaped();
                off += dl.size();
                grad.segment(off, dr.size()) = dr.reshaped();
                off += dr.size();
            }
            adam.step(flat, grad);
            unpack();
        }
        merge();
        break;
    }
    case AttackMethod::embedding_only: {
        Adam adam(out.encoder.dim(), cfg.lr);
        for (int step = 0; step < cfg.steps; ++step) {
            const Minibatch mb = draw_minibatch(published, B, rng, sched);
            const ConditionEmbedding c = out.encoder.encode(prompt);
            const LossEval ev =
                noise_prediction_loss(out.model, mb.x_t, mb.t, mb.eps, c.values.replicate(1, B), {.condition = true});
            record(ev.loss);
            const Eigen::MatrixXd gt = out.encoder.backward(prompt, ev.grads.condition.rowwise().sum() / B);
            Eigen::VectorXd col = out.encoder.table().col(vstar);
            adam.step(col, gt.col(vstar));
            out.encoder.table().col(vstar) = col;
        }
        break;
    }
    }
    return out;
}

std::vector<DataTensor> generate_batch(const DenoiserModel& model, const TextEncoderStub& encoder,
                                       const PromptTemplate& prompt, int n, int steps, Rng& rng,
                                       const NoiseSchedule& sched, const Shape& shape, double lo, double hi) {
    if (n < 1) throw std::invalid_argument("generate_batch: n must be >= 1");
    const ConditionEmbedding c = encoder.encode(prompt);
    const Batch x = sample_latent_batch(model, c.values.replicate(1, n), 0, steps, rng, sched);
    std::vector<DataTensor> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
        Eigen::VectorXd v = x.col(j).cwiseMax(lo).cwiseMin(hi);
        if (!v.allFinite()) throw NumericError("generate_batch: non-finite sample");
        out.emplace_back(shape, std::move(v));
    }
    return out;
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    if (a.rows() != b.rows()) throw std::invalid_argument("frechet_distance: feature dims differ");
    if (a.cols() < 1 || b.cols() < 1) throw std::invalid_argument("frechet_distance: empty sample set");
    const Eigen::VectorXd mu_a = a.rowwise().mean();
    const Eigen::VectorXd mu_b = b.rowwise().mean();
    auto centred = [](const Eigen::MatrixXd& m, const Eigen::VectorXd& mu) {
        Eigen::MatrixXd c = m.colwise() - mu;
        return m.cols() > 1 ? Eigen::MatrixXd(c / std::sqrt(static_cast<double>(m.cols() - 1)))
                            : Eigen::MatrixXd(Eigen::MatrixXd::Zero(m.rows(), 1));
    };
    const Eigen::MatrixXd A = centred(a, mu_a);
    const Eigen::MatrixXd B = centred(b, mu_b);
    const Eigen::MatrixXd cross = A.transpose() * B;
    const double nuclear = Eigen::JacobiSVD<Eigen::MatrixXd>(cross).singularValues().sum();
    const double fd = (mu_a - mu_b).squaredNorm() + A.squaredNorm() + B.squaredNorm() - 2.0 * nuclear;
    return std::max(fd, 0.0);
}

Eigen::VectorXd recognition_confidence(const Eigen::MatrixXd& generated_emb, const Eigen::MatrixXd& reference_emb) {
    const Eigen::MatrixXd sims = reference_emb.transpose() * generated_emb;  // refs x gens
    return sims.colwise().maxCoeff().transpose().cwiseMax(0.0);
}

MetricsReport evaluate_protection(const std::vector<DataTensor>& generated, const std::vector<DataTensor>& reference,
                                  const IdentityEmbedder& embedder, double threshold) {
    if (generated.empty() || reference.empty()) throw std::invalid_argument("evaluate_protection: empty input");
    const Eigen::MatrixXd g = embedder.embed(generated);
    const Eigen::MatrixXd r = embedder.embed(reference);
    const Eigen::MatrixXd sims = r.transpose() * g;
    const Eigen::VectorXd best = sims.colwise().maxCoeff().transpose();
    const Eigen::VectorXd conf = best.cwiseMax(0.0);

    MetricsReport rep;
    rep.n = static_cast<int>(generated.size());
    rep.threshold = threshold;
    rep.ism_proxy = best.mean();
    rep.fdfr_proxy = static_cast<double>((conf.array() < threshold).count()) / rep.n;
    rep.quality_proxy = frechet_distance(g, r);
    return rep;
}

} // namespace idcloak
