#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "idcloak/baselines.hpp"
#include "idcloak/cloak.hpp"
#include "idcloak/denoiser.hpp"
#include "idcloak/embedder.hpp"
#include "idcloak/identity.hpp"
#include "idcloak/keyvalue.hpp"
#include "idcloak/schedule.hpp"
#include "idcloak/threat.hpp"

namespace idcloak {

enum class Defense { none, image_specific_transfer, gradient_avg_universal, id_cloak, id_cloak_single_point };

Defense parse_defense(const std::string& name);
std::string to_string(Defense d);

struct ExperimentConfig {
    // diffusion
    int T = 1000;
    ScheduleKind schedule = ScheduleKind::linear;
    int image_size = 16;
    int hidden = 512;
    int depth = 2;
    int time_dim = 32;
    int cond_dim = 32;

    // base model pre-training corpus
    int base_identities = 40;
    int base_images_per_identity = 12;
    int base_steps = 20000;
    double base_lr = 1e-3;
    int base_batch = 32;
    std::uint64_t base_seed = 7;
    double token_scale = 1.0;

    // attacker-side architecture for the transfer analog
    bool transfer = false;
    int transfer_hidden = 384;
    int transfer_depth = 3;

    // proxy-metric embedder
    int embedder_identities = 64;
    int embedder_images_per_identity = 12;
    EmbedderTrainOptions embedder;

    // protected identities
    int identities = 5;
    std::uint64_t identity_seed = 1000;
    int n_train = 4;
    int n_test = 8;
    double context_spread = 1.0;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    // identity subspace
    IdentityLearningOptions identity;
    PromptTuningOptions tuning;
    SigmaDivisor divisor = SigmaDivisor::unbiased;

    // cloaks
    CloakOptConfig cloak;
    ImageCloakConfig baseline;

    // attacker and evaluation
    AttackConfig attack;
    int generate_n = 30;
    int generate_steps = 50;
    double threshold = 0.5;
    std::vector<std::string> prompts;
    std::vector<Defense> defenses{Defense::none, Defense::image_specific_transfer, Defense::gradient_avg_universal,
                                  Defense::id_cloak, Defense::id_cloak_single_point};

    std::filesystem::path output_dir = "experiment";
    bool force = false;
    bool attack_checkpoints = true;
    int threads = 1;

    ExperimentConfig();

    KeyValue to_keyvalue() const;
    // Applies every key in kv; unknown keys and bad values raise ConfigError.
    void apply(const KeyValue& kv);
    void set(const std::string& key, const std::string& value);
    void validate() const;

    static ExperimentConfig load(const std::filesystem::path& path);
    static std::vector<std::string> keys();
    // Small, fast settings for smoke runs and tests.
    static ExperimentConfig smoke();

    DenoiserArch arch() const;
    DenoiserArch transfer_arch() const;
    std::uint64_t hash() const;
};

} // namespace idcloak
