#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "idcloak/denoiser.hpp"
#include "idcloak/embedder.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/tensor.hpp"
#include "idcloak/text_encoder.hpp"

namespace idcloak {

enum class AttackMethod { full_finetune, low_rank, embedding_only };

AttackMethod parse_attack_method(const std::string& name);
std::string to_string(AttackMethod m);

struct AttackConfig {
    AttackMethod method = AttackMethod::full_finetune;
    int steps = 1000;
    double lr = 1e-4;
    int rank = 4;        // low_rank only
    int batch = 4;
    int prompt = 0;      // index into the prompt list used for personalization
    std::uint64_t seed = 0;

    void validate() const;
};

// Slices that receive low-rank adapters: every hidden weight, condition
// projection and the output weight.
std::vector<std::string> low_rank_targets(const DenoiserModel& model);

struct AttackResult {
    DenoiserModel model;       // adapters merged in for low_rank
    TextEncoderStub encoder;
    std::vector<double> losses;
};

// Fine-tunes a copy of the base model on the published images with the
// prompt's V* token:
//   full_finetune  - all denoiser parameters and the whole token table
//   low_rank       - only rank-r factors A B added to the target slices
//   embedding_only - only the V* column of the token table
AttackResult personalize_attack(const std::vector<DataTensor>& published, const DenoiserModel& base,
                                const TextEncoderStub& encoder, const PromptTemplate& prompt,
                                const AttackConfig& cfg, const NoiseSchedule& sched);

// n full DDIM samples conditioned on encoder(prompt), clamped to [lo, hi].
std::vector<DataTensor> generate_batch(const DenoiserModel& model, const TextEncoderStub& encoder,
                                       const PromptTemplate& prompt, int n, int steps, Rng& rng,
                                       const NoiseSchedule& sched, const Shape& shape, double lo = 0.0,
                                       double hi = 1.0);

struct MetricsReport {
    double ism_proxy = 0.0;      // mean over generations of the best cosine to any reference
    double fdfr_proxy = 0.0;     // share of generations whose recognition confidence < threshold
    double quality_proxy = 0.0;  // Frechet distance between Gaussian fits of embeddings
    int n = 0;
    double threshold = 0.5;
};

// Frechet distance between Gaussian fits of two sample sets (columns):
//   |mu_a - mu_b|^2 + tr(S_a) + tr(S_b) - 2 tr((S_a^1/2 S_b S_a^1/2)^1/2)
// The trace term is computed as the nuclear norm of A^T B, where S = A A^T
// are the centred, (n-1)-scaled sample matrices.
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Recognition confidence of each generation: its highest cosine similarity to
// the reference gallery, floored at zero.
Eigen::VectorXd recognition_confidence(const Eigen::MatrixXd& generated_emb, const Eigen::MatrixXd& reference_emb);

MetricsReport evaluate_protection(const std::vector<DataTensor>& generated, const std::vector<DataTensor>& reference,
                                  const IdentityEmbedder& embedder, double threshold = 0.5);

} // namespace idcloak
