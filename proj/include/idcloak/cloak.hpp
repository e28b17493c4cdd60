#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "idcloak/denoiser.hpp"
#include "idcloak/identity.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

inline constexpr double kDefaultEta = 16.0 / 255.0;

struct CloakOptConfig {
    int outer = 200;          // N
    int inner = 10;           // M, gradient aggregation
    double alpha = 0.05;      // PGD step
    double eta = kDefaultEta; // l_inf budget
    int sampler_steps = 50;   // DDIM grid for x_t
    int t_min = 1;
    int t_max = 0;            // 0 means T
    double truncation = 3.0;  // subspace sampling
    bool presearch = true;    // surrogate update of delta_inner inside the inner loop
    bool scale_grad = true;   // carry the sqrt(alpha_bar_t) chain factor into the accumulator
    std::uint64_t seed = 0;

    void validate(const NoiseSchedule& sched) const;
    int resolved_t_max(const NoiseSchedule& sched) const { return t_max == 0 ? sched.T : t_max; }
};

struct Cloak {
    DataTensor delta;
    double eta = kDefaultEta;
    double alpha = 0.05;
    int outer = 0;
    int inner = 0;
    std::uint64_t seed = 0;
    std::uint64_t model_hash = 0;
    std::uint64_t subspace_hash = 0;
};

// x_hat'_t = sqrt(ab_t) (predict_x0(x_t, eps_pred) + delta) + sqrt(1 - ab_t) eps_pred
DataTensor apply_cloak_latent(const DataTensor& x_t, int t, const DataTensor& eps_pred, const DataTensor& delta,
                              const NoiseSchedule& sched);

struct ObjectiveEval {
    double value = 0.0;
    DataTensor grad;  // w.r.t. x_t_cloaked; the clean branch is a constant
};

// ||eps_model(x_t, t, c) - eps_model(x_t_cloaked, t, c)||^2
ObjectiveEval cloak_objective(const DifferentiablePredictor& model, const DataTensor& x_t,
                              const DataTensor& x_t_cloaked, int t, const ConditionEmbedding& c);

double sign0(double v);

// clamp(delta + alpha * sign(g), -eta, eta), with sign(0) = 0
DataTensor pgd_step(const DataTensor& delta, const DataTensor& g, double alpha, double eta);

// One inner draw of the aggregation loop, kept for audits.
struct InnerSample {
    ConditionEmbedding c;
    int t = 0;
    DataTensor x_t;
    DataTensor delta_used;
    DataTensor grad;  // contribution added to the accumulator
};

struct CloakTrace {
    std::vector<DataTensor> iterates;            // delta after every outer update
    std::vector<DataTensor> aggregates;          // accumulated gradient per outer step
    std::vector<std::vector<InnerSample>> inner; // filled for the first `keep_inner` outer steps
    int keep_inner = 0;
};

// Universal cloak over the identity subspace with stochastic gradient
// aggregation. Every outer step resets delta_inner to delta and the
// accumulator to zero; each inner step samples c ~ Q and t, draws x_t from
// the reverse chain, cloaks it with delta_inner, adds the delta-space
// gradient to the accumulator and (with presearch) advances delta_inner by a
// PGD step. The outer PGD step uses the sign of the accumulator.
Cloak optimize_cloak(const DenoiserModel& model, const IdentitySubspace& q, const CloakOptConfig& cfg,
                     const NoiseSchedule& sched, const Shape& shape, Rng& rng, CloakTrace* trace = nullptr);
Cloak optimize_cloak(const DenoiserModel& model, const IdentitySubspace& q, const CloakOptConfig& cfg,
                     const NoiseSchedule& sched, const Shape& shape, CloakTrace* trace = nullptr);

// x + delta clamped to [lo, hi].
DataTensor apply_cloak_image(const DataTensor& x, const DataTensor& delta, double lo = 0.0, double hi = 1.0);
DataTensor apply_cloak_image(const DataTensor& x, const Cloak& cloak, double lo = 0.0, double hi = 1.0);

} // namespace idcloak
