#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "idcloak/config.hpp"
#include "idcloak/dataset.hpp"
#include "idcloak/embedder.hpp"
#include "idcloak/identity.hpp"
#include "idcloak/text_encoder.hpp"
#include "idcloak/threat.hpp"

namespace idcloak {

using Logger = std::function<void(const std::string&)>;

// Pre-trained pieces shared by every arm: the base text-to-image model and
// its text encoder, the proxy-metric embedder and, for the transfer analog,
// a second base model with a different architecture.
struct World {
    NoiseSchedule sched;
    Vocabulary vocab;
    TextEncoderStub encoder;
    DenoiserModel base;
    std::vector<double> base_losses;
    IdentityEmbedder embedder;
    std::optional<DenoiserModel> transfer_base;
    std::vector<double> transfer_losses;
};

// Captions every corpus image with the prompt for its render style and the
// image's identity word.
std::vector<TrainingExample> caption_corpus(const std::vector<LabeledImage>& corpus, const Vocabulary& vocab,
                                            const TextEncoderStub& encoder, const std::vector<std::string>& prompts);

TextEncoderStub make_base_encoder(const ExperimentConfig& cfg, const Vocabulary& vocab);
std::vector<LabeledImage> base_corpus(const ExperimentConfig& cfg);
std::vector<LabeledImage> embedder_corpus(const ExperimentConfig& cfg);

TrainResult train_base_model(const ExperimentConfig& cfg, const DenoiserArch& arch, const TextEncoderStub& encoder,
                             const Vocabulary& vocab, std::uint64_t seed, const NoiseSchedule& sched);

World build_world(const ExperimentConfig& cfg, const Logger& log = {});

// base.tns, encoder.tns, embedder.tns, optional transfer_base.tns and the
// config that produced them.
void save_world(const std::filesystem::path& dir, const World& world, const ExperimentConfig& cfg);
World load_world(const std::filesystem::path& dir, const ExperimentConfig& cfg);

// Defender-side state learned once per arm from the clean training images.
struct DefenderState {
    PersonalizedModel personalized;
    ConditionEmbedding c_id;
    AnchorSet anchors;
    IdentitySubspace subspace;
};

// Stream roots for one (identity, seed) arm.
struct ArmSeeds {
    std::uint64_t root = 0;
    std::uint64_t identity = 0;
    std::uint64_t tuning = 0;
    std::uint64_t cloak = 0;
    std::uint64_t single_point = 0;
    std::uint64_t image_specific = 0;
    std::uint64_t gradient_average = 0;
    std::uint64_t transfer = 0;
    std::uint64_t attack = 0;
    std::uint64_t generate = 0;

    static ArmSeeds derive(std::uint64_t identity_seed, std::uint64_t seed);
};

DefenderState learn_defender(const IdentityDataset& data, const World& world, const ExperimentConfig& cfg,
                             const ArmSeeds& seeds);

struct DefenseOutput {
    Defense defense = Defense::none;
    std::optional<Cloak> cloak;               // universal defenses
    std::vector<DataTensor> train_cloaks;     // per training image
    std::vector<DataTensor> test_cloaks;      // per test image
    std::vector<DataTensor> cloaked_train;
    std::vector<DataTensor> cloaked_test;
};

DefenseOutput craft_defense(Defense defense, const IdentityDataset& data, const DefenderState& state,
                            const ExperimentConfig& cfg, const ArmSeeds& seeds, const NoiseSchedule& sched,
                            CloakTrace* trace = nullptr);

struct PromptOutcome {
    std::string prompt;
    MetricsReport metrics;
    std::vector<DataTensor> generated;
};

struct AttackOutcome {
    AttackResult attack;
    std::vector<PromptOutcome> prompts;
    MetricsReport pooled;  // all prompts together
};

// Personalizes `base` on the published images, generates for every
// evaluation prompt and scores the generations against `reference`.
AttackOutcome attack_and_evaluate(const std::vector<DataTensor>& published, const std::vector<DataTensor>& reference,
                                  const DenoiserModel& base, const World& world, const ExperimentConfig& cfg,
                                  const ArmSeeds& seeds);

struct ProtectionResult {
    Defense defense = Defense::none;
    DefenseOutput output;
    AttackOutcome train;  // attacker sees the cloaked training images
    AttackOutcome test;   // attacker sees the cloaked held-out images
};

// Crafts the defense on the training split, applies it to both splits and
// attacks each. `state` is learned on demand when empty.
ProtectionResult run_protection_experiment(const IdentityDataset& data, Defense defense, const World& world,
                                           const ExperimentConfig& cfg, std::uint64_t seed,
                                           std::optional<DefenderState>* state = nullptr);

// One CSV row of reports/metrics.csv.
struct MetricsRow {
    std::string identity;
    std::string split;
    std::string arch;  // "A" is the defender's family, "B" the transfer analog
    Defense defense = Defense::none;
    AttackMethod attack = AttackMethod::full_finetune;
    std::string prompt;  // prompt text, or "all"
    std::uint64_t seed = 0;
    MetricsReport metrics;
};

std::string metrics_csv_header();
std::string to_csv(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

// Runs every (identity, seed) arm and writes the experiment directory.
// Returns the rows of reports/metrics.csv.
std::vector<MetricsRow> run_pipeline(const ExperimentConfig& cfg, const Logger& log = {});

inline constexpr int kLayoutVersion = 1;

} // namespace idcloak
