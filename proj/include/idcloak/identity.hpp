#pragma once

#include <cstdint>
#include <vector>

#include "idcloak/denoiser.hpp"
#include "idcloak/diffusion.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/tensor.hpp"
#include "idcloak/text_encoder.hpp"

namespace idcloak {

// ---------------------------------------------------------------------------
// Identity token learning: joint fine-tuning of the denoiser and the text
// encoder on the few-shot set, conditioned on the V* prompt.

struct IdentityLearningOptions {
    int steps = 1000;   // C
    double lr = 1e-4;
    int batch = 4;
};

struct PersonalizedModel {
    DenoiserModel model;
    TextEncoderStub encoder;
    std::vector<double> losses;
};

PersonalizedModel learn_identity(const std::vector<DataTensor>& images, const DenoiserModel& model,
                                 const TextEncoderStub& encoder, const PromptTemplate& prompt,
                                 const IdentityLearningOptions& opt, Rng& rng, const NoiseSchedule& sched);

// c_ID = encoder(prompt)
ConditionEmbedding core_identity(const TextEncoderStub& encoder, const PromptTemplate& prompt);

// ---------------------------------------------------------------------------
// Context diversification: one soft embedding per training image, started at
// c_ID and tuned by plain gradient descent against the frozen model.

struct AnchorSet {
    std::vector<ConditionEmbedding> anchors;
    std::vector<int> image_ids;
};

struct PromptTuningOptions {
    int steps = 50;     // M
    double lr = 1e-3;
    int batch = 1;      // (t, eps) draws averaged per update
};

AnchorSet diversify_contexts(const std::vector<DataTensor>& images, const DenoiserModel& model,
                             const ConditionEmbedding& c_id, const PromptTuningOptions& opt, Rng& rng,
                             const NoiseSchedule& sched);

struct NoiseDraw {
    int t = 1;
    Eigen::VectorXd eps;
};

// ||eps - eps_model(x_t, t, c)||^2 averaged over the draws, with d/dc.
struct AnchorLoss {
    double loss = 0.0;
    Eigen::VectorXd grad;
};
AnchorLoss anchor_objective(const DenoiserModel& model, const DataTensor& image, const ConditionEmbedding& c,
                            const std::vector<NoiseDraw>& draws, const NoiseSchedule& sched);

// ---------------------------------------------------------------------------
// Gaussian identity subspace over the anchors.

enum class SigmaDivisor { unbiased, population };  // N-1 or N

struct IdentitySubspace {
    ConditionEmbedding mu;
    Eigen::VectorXd sigma;
    int anchor_count = 0;
    SigmaDivisor divisor = SigmaDivisor::unbiased;

    int dim() const { return mu.dim(); }
    std::uint64_t hash() const;
    // Degenerate subspace concentrated on one point.
    static IdentitySubspace point(const ConditionEmbedding& c);
};

IdentitySubspace estimate_subspace(const AnchorSet& anchors, SigmaDivisor divisor = SigmaDivisor::unbiased);

// c = mu + sigma * clamp(z, -truncation, truncation), z ~ N(0, I).
// truncation may be +infinity.
ConditionEmbedding sample_condition(const IdentitySubspace& q, Rng& rng, double truncation = 3.0);

} // namespace idcloak
