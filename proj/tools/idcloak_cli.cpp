#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "idcloak/artifacts.hpp"
#include "idcloak/baselines.hpp"
#include "idcloak/config.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/experiment.hpp"
#include "idcloak/report.hpp"
#include "idcloak/tns_io.hpp"

namespace fs = std::filesystem;
using namespace idcloak;

namespace {

// --config plus one flag per config key; flags win over the file.
struct ConfigFlags {
    std::string config_path;
    bool smoke = false;
    std::map<std::string, std::string> values;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_flag("--smoke", smoke, "start from the small smoke-test settings");
        for (const auto& key : ExperimentConfig::keys()) {
            cmd->add_option("--" + key, values[key])->group("Config keys");
        }
    }

    ExperimentConfig resolve(const std::optional<fs::path>& world_dir = std::nullopt) const {
        ExperimentConfig cfg = smoke ? ExperimentConfig::smoke() : ExperimentConfig();
        if (world_dir && fs::exists(*world_dir / "config.txt")) {
            try {
                cfg.apply(KeyValue::load(*world_dir / "config.txt"));
            } catch (const DataError& e) {
                throw ConfigError(e.what());
            }
        }
        if (!config_path.empty()) {
            try {
                cfg.apply(KeyValue::load(config_path));
            } catch (const DataError& e) {
                throw ConfigError(e.what());
            }
        }
        for (const auto& key : ExperimentConfig::keys()) {
            const auto it = values.find(key);
            if (it != values.end() && !it->second.empty()) cfg.set(key, it->second);
        }
        cfg.validate();
        return cfg;
    }
};

void log_line(const std::string& msg) { std::cerr << "[idcloak] " << msg << std::endl; }

std::uint64_t arm_seed(const ExperimentConfig& cfg, std::int64_t seed) {
    return seed >= 0 ? static_cast<std::uint64_t>(seed) : cfg.seeds.front();
}

PersonalizedModel read_personalized(const fs::path& dir) {
    return {read_checkpoint(dir / "personalized.tns"), read_encoder(dir / "personalized_encoder.tns"), {}};
}

void write_dataset_dir(const fs::path& dir, const IdentityDataset& data) {
    fs::create_directories(dir);
    std::ofstream m(dir / "manifest.txt");
    m << "identity=" << data.identity << "\n";
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        write_tensor(dir / ("train_" + std::to_string(i) + ".tns"), data.train[i]);
        m << "train=train_" << i << ".tns\n";
    }
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        write_tensor(dir / ("test_" + std::to_string(i) + ".tns"), data.test[i]);
        m << "test=test_" << i << ".tns\n";
    }
}

void print_metrics(const std::string& label, const MetricsReport& m) {
    std::printf("%-44s ism=%.4f fdfr=%.4f quality=%.4f n=%d\n", label.c_str(), m.ism_proxy, m.fdfr_proxy,
                m.quality_proxy, m.n);
}

int run(int argc, char** argv) {
    CLI::App app{"Identity-specific universal cloaks at toy scale"};
    app.require_subcommand(1);

    // synth-data
    ConfigFlags synth_flags;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth-data", "render a synthetic identity dataset");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth_flags.attach(synth);

    // import-data
    std::string import_manifest, import_out;
    auto* import = app.add_subcommand("import-data", "validate a manifest of .tns images");
    import->add_option("--manifest", import_manifest)->required();
    import->add_option("--out", import_out, "optional directory for a normalized copy");

    // train-base
    ConfigFlags base_flags;
    std::string base_out;
    auto* train_base = app.add_subcommand("train-base", "pre-train the base model, encoder and embedder");
    train_base->add_option("--out", base_out, "world directory")->required();
    base_flags.attach(train_base);

    // learn-identity
    ConfigFlags id_flags;
    std::string id_world, id_data, id_out;
    std::int64_t id_seed = -1;
    auto* learn_id = app.add_subcommand("learn-identity", "personalize the defender's model on clean images");
    learn_id->add_option("--world", id_world)->required();
    learn_id->add_option("--data", id_data, "dataset manifest")->required();
    learn_id->add_option("--out", id_out, "identity directory")->required();
    learn_id->add_option("--seed", id_seed);
    id_flags.attach(learn_id);

    // learn-subspace
    ConfigFlags sub_flags;
    std::string sub_world, sub_data, sub_identity;
    std::int64_t sub_seed = -1;
    auto* learn_sub = app.add_subcommand("learn-subspace", "prompt-tune anchors and fit the identity subspace");
    learn_sub->add_option("--world", sub_world)->required();
    learn_sub->add_option("--data", sub_data)->required();
    learn_sub->add_option("--identity", sub_identity, "directory written by learn-identity")->required();
    learn_sub->add_option("--seed", sub_seed);
    sub_flags.attach(learn_sub);

    // craft-cloak
    ConfigFlags craft_flags;
    std::string craft_world, craft_data, craft_identity, craft_out, craft_defense_name = "id_cloak";
    std::int64_t craft_seed = -1;
    auto* craft = app.add_subcommand("craft-cloak", "optimize a cloak for one defense");
    craft->add_option("--world", craft_world)->required();
    craft->add_option("--data", craft_data)->required();
    craft->add_option("--identity", craft_identity)->required();
    craft->add_option("--defense", craft_defense_name);
    craft->add_option("--out", craft_out, ".tns output")->required();
    craft->add_option("--seed", craft_seed);
    craft_flags.attach(craft);

    // apply-cloak
    std::string apply_cloak_path, apply_data, apply_split = "test", apply_out;
    std::uint64_t apply_seed = 0;
    auto* apply = app.add_subcommand("apply-cloak", "add a cloak to a dataset split");
    apply->add_option("--cloak", apply_cloak_path)->required();
    apply->add_option("--data", apply_data)->required();
    apply->add_option("--split", apply_split)->check(CLI::IsMember({"train", "test"}));
    apply->add_option("--out", apply_out, "stacked .tns output")->required();
    apply->add_option("--seed", apply_seed, "assignment seed for per-image cloak stacks");

    // attack
    ConfigFlags atk_flags;
    std::string atk_world, atk_images, atk_out;
    bool atk_transfer = false;
    std::int64_t atk_seed = -1;
    auto* attack = app.add_subcommand("attack", "personalize the base model on published images");
    attack->add_option("--world", atk_world)->required();
    attack->add_option("--images", atk_images, "stacked .tns of published images")->required();
    attack->add_option("--out", atk_out)->required();
    attack->add_flag("--transfer-base", atk_transfer, "attack the second architecture");
    attack->add_option("--seed", atk_seed);
    atk_flags.attach(attack);

    // evaluate
    ConfigFlags ev_flags;
    std::string ev_world, ev_attack, ev_data, ev_out, ev_defense = "none", ev_split = "test", ev_arch = "A";
    std::int64_t ev_seed = -1;
    auto* evaluate = app.add_subcommand("evaluate", "generate with an attacked model and score the generations");
    evaluate->add_option("--world", ev_world)->required();
    evaluate->add_option("--attack", ev_attack, "directory written by attack")->required();
    evaluate->add_option("--data", ev_data, "manifest whose test split is the reference")->required();
    evaluate->add_option("--out", ev_out)->required();
    evaluate->add_option("--defense", ev_defense, "label for the CSV row");
    evaluate->add_option("--split", ev_split, "label for the CSV row");
    evaluate->add_option("--arch", ev_arch, "label for the CSV row");
    evaluate->add_option("--seed", ev_seed);
    ev_flags.attach(evaluate);

    // report
    std::string report_dir;
    auto* report = app.add_subcommand("report", "emit tables and plots for an experiment directory");
    report->add_option("--dir", report_dir)->required();

    // pipeline
    ConfigFlags pipe_flags;
    auto* pipeline = app.add_subcommand("pipeline", "run every arm end to end");
    pipe_flags.attach(pipeline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (*synth) {
        const ExperimentConfig cfg = synth_flags.resolve();
        const IdentityDataset data =
            synth_dataset(cfg.identity_seed, cfg.n_train, cfg.n_test, cfg.context_spread, cfg.image_size);
        write_dataset_dir(synth_out, data);
        std::printf("%s: %zu train, %zu test, shape %s\n", data.identity.c_str(), data.train.size(), data.test.size(),
                    shape_string(data.shape()).c_str());
    } else if (*import) {
        const IdentityDataset data = import_dataset(import_manifest);
        if (!import_out.empty()) write_dataset_dir(import_out, data);
        std::printf("%s: %zu train, %zu test, shape %s\n", data.identity.c_str(), data.train.size(), data.test.size(),
                    shape_string(data.shape()).c_str());
    } else if (*train_base) {
        const ExperimentConfig cfg = base_flags.resolve();
        const World world = build_world(cfg, log_line);
        save_world(base_out, world, cfg);
        std::printf("base %s, embedder held-out same %.3f cross %.3f\n", hex_hash(world.base.hash()).c_str(),
                    world.embedder.info.heldout.same, world.embedder.info.heldout.cross);
    } else if (*learn_id) {
        const ExperimentConfig cfg = id_flags.resolve(fs::path(id_world));
        const World world = load_world(id_world, cfg);
        const IdentityDataset data = import_dataset(id_data);
        const ArmSeeds seeds = ArmSeeds::derive(data.seed, arm_seed(cfg, id_seed));
        const PromptTemplate prompt = PromptTemplate::parse(cfg.prompts.front(), world.vocab);
        Rng rng(seeds.identity);
        const PersonalizedModel p =
            learn_identity(data.train, world.base, world.encoder, prompt, cfg.identity, rng, world.sched);
        fs::create_directories(id_out);
        write_checkpoint(fs::path(id_out) / "personalized.tns", p.model);
        write_encoder(fs::path(id_out) / "personalized_encoder.tns", p.encoder);
        write_condition(fs::path(id_out) / "core_identity.tns", core_identity(p.encoder, prompt));
        std::printf("personalized %s, final loss %.5f\n", hex_hash(p.model.hash()).c_str(),
                    p.losses.empty() ? 0.0 : p.losses.back());
    } else if (*learn_sub) {
        const ExperimentConfig cfg = sub_flags.resolve(fs::path(sub_world));
        const World world = load_world(sub_world, cfg);
        const IdentityDataset data = import_dataset(sub_data);
        const ArmSeeds seeds = ArmSeeds::derive(data.seed, arm_seed(cfg, sub_seed));
        const fs::path dir = sub_identity;
        const PersonalizedModel p = read_personalized(dir);
        const ConditionEmbedding c_id = read_condition(dir / "core_identity.tns");
        Rng rng(seeds.tuning);
        const AnchorSet anchors = diversify_contexts(data.train, p.model, c_id, cfg.tuning, rng, world.sched);
        const IdentitySubspace q = estimate_subspace(anchors, cfg.divisor);
        write_anchors(dir / "anchors.tns", anchors);
        write_subspace(dir / "subspace.tns", q);
        std::printf("subspace %s over %d anchors, mean sigma %.5f\n", hex_hash(q.hash()).c_str(), q.anchor_count,
                    q.sigma.mean());
    } else if (*craft) {
        const ExperimentConfig cfg = craft_flags.resolve(fs::path(craft_world));
        const World world = load_world(craft_world, cfg);
        const IdentityDataset data = import_dataset(craft_data);
        const ArmSeeds seeds = ArmSeeds::derive(data.seed, arm_seed(cfg, craft_seed));
        const fs::path dir = craft_identity;
        const Defense defense = parse_defense(craft_defense_name);
        DefenderState state{read_personalized(dir), read_condition(dir / "core_identity.tns"), {}, {}};
        if (defense == Defense::id_cloak) state.subspace = read_subspace(dir / "subspace.tns");
        const DefenseOutput out = craft_defense(defense, data, state, cfg, seeds, world.sched);
        if (out.cloak) {
            write_cloak(craft_out, *out.cloak);
            std::printf("%s cloak, max |delta| %.6f\n", craft_defense_name.c_str(), out.cloak->delta.max_abs());
        } else if (!out.train_cloaks.empty()) {
            write_tensor_stack(craft_out, out.train_cloaks);
            std::printf("%zu per-image cloaks\n", out.train_cloaks.size());
        } else {
            throw ConfigError("defense 'none' has no cloak");
        }
    } else if (*apply) {
        const IdentityDataset data = import_dataset(apply_data);
        const auto& images = apply_split == "train" ? data.train : data.test;
        std::vector<DataTensor> cloaked;
        if (fs::exists(sidecar_path(apply_cloak_path))) {
            const Cloak c = read_cloak(apply_cloak_path);
            for (const auto& x : images) cloaked.push_back(apply_cloak_image(x, c));
        } else {
            const auto stack = read_tensor_stack(apply_cloak_path);
            Rng rng(apply_seed);
            const auto assigned =
                apply_split == "train" && stack.size() == images.size() ? stack : transfer_cloaks(stack, images.size(), rng);
            for (std::size_t i = 0; i < images.size(); ++i) cloaked.push_back(apply_cloak_image(images[i], assigned[i]));
        }
        write_tensor_stack(apply_out, cloaked);
        std::printf("wrote %zu cloaked images\n", cloaked.size());
    } else if (*attack) {
        const ExperimentConfig cfg = atk_flags.resolve(fs::path(atk_world));
        const World world = load_world(atk_world, cfg);
        if (atk_transfer && !world.transfer_base) throw DataError(atk_world + ": no transfer base model");
        const auto published = read_tensor_stack(atk_images);
        AttackConfig acfg = cfg.attack;
        acfg.seed = atk_seed >= 0 ? static_cast<std::uint64_t>(atk_seed) : cfg.seeds.front();
        const PromptTemplate prompt = PromptTemplate::parse(cfg.prompts.at(acfg.prompt), world.vocab);
        const AttackResult r = personalize_attack(published, atk_transfer ? *world.transfer_base : world.base,
                                                  world.encoder, prompt, acfg, world.sched);
        fs::create_directories(atk_out);
        write_checkpoint(fs::path(atk_out) / "attack.tns", r.model);
        write_encoder(fs::path(atk_out) / "attack_encoder.tns", r.encoder);
        std::printf("attack %s (%s), final loss %.5f\n", hex_hash(r.model.hash()).c_str(),
                    to_string(acfg.method).c_str(), r.losses.empty() ? 0.0 : r.losses.back());
    } else if (*evaluate) {
        const ExperimentConfig cfg = ev_flags.resolve(fs::path(ev_world));
        const World world = load_world(ev_world, cfg);
        const IdentityDataset data = import_dataset(ev_data);
        const std::uint64_t seed = arm_seed(cfg, ev_seed);
        const ArmSeeds seeds = ArmSeeds::derive(data.seed, seed);
        const DenoiserModel model = read_checkpoint(fs::path(ev_attack) / "attack.tns");
        const TextEncoderStub encoder = read_encoder(fs::path(ev_attack) / "attack_encoder.tns");
        const fs::path out = ev_out;
        fs::create_directories(out);
        std::ofstream csv(out / "metrics.csv");
        csv << metrics_csv_header() << "\n";
        std::vector<DataTensor> pooled;
        for (std::size_t k = 0; k < cfg.prompts.size(); ++k) {
            Rng rng(Rng::derive(seeds.generate, k));
            const PromptTemplate p = PromptTemplate::parse(cfg.prompts[k], world.vocab);
            const auto gens =
                generate_batch(model, encoder, p, cfg.generate_n, cfg.generate_steps, rng, world.sched, data.shape());
            write_tensor_stack(out / ("generations_p" + std::to_string(k) + ".tns"), gens);
            const MetricsReport m = evaluate_protection(gens, data.test, world.embedder, cfg.threshold);
            csv << to_csv({data.identity, ev_split, ev_arch, parse_defense(ev_defense), cfg.attack.method,
                           cfg.prompts[k], seed, m})
                << "\n";
            print_metrics(cfg.prompts[k], m);
            pooled.insert(pooled.end(), gens.begin(), gens.end());
        }
        const MetricsReport all = evaluate_protection(pooled, data.test, world.embedder, cfg.threshold);
        csv << to_csv({data.identity, ev_split, ev_arch, parse_defense(ev_defense), cfg.attack.method, "all", seed, all})
            << "\n";
        print_metrics("all", all);
    } else if (*report) {
        const ReportFiles files = emit_report(report_dir);
        std::printf("%zu rows -> %s, %s, %s and %zu plots\n", files.rows, files.summary.string().c_str(),
                    files.comparison.string().c_str(), files.ablation.string().c_str(), files.plots.size());
    } else if (*pipeline) {
        const ExperimentConfig cfg = pipe_flags.resolve();
        const auto start = std::chrono::steady_clock::now();
        const auto rows = run_pipeline(cfg, log_line);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%zu metric rows in %s (%.1f s)\n", rows.size(), cfg.output_dir.string().c_str(), s);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
