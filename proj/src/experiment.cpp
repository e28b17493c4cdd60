#include "idcloak/experiment.hpp"

#include <chrono>
#include <fstream>
#include <future>
#include <mutex>
#include <sstream>

#include "idcloak/artifacts.hpp"
#include "idcloak/baselines.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/report.hpp"
#include "idcloak/tns_io.hpp"

namespace idcloak {

namespace fs = std::filesystem;

std::vector<TrainingExample> caption_corpus(const std::vector<LabeledImage>& corpus, const Vocabulary& vocab,
                                            const TextEncoderStub& encoder, const std::vector<std::string>& prompts) {
    if (prompts.empty()) throw std::invalid_argument("caption_corpus: no prompts");
    std::vector<PromptTemplate> templates;
    for (const auto& p : prompts) templates.push_back(PromptTemplate::parse(p, vocab));
    std::vector<TrainingExample> out;
    out.reserve(corpus.size());
    for (const auto& item : corpus) {
        const auto& tmpl = templates[static_cast<std::size_t>(item.style) % templates.size()];
        out.push_back({item.image, encoder.encode(tmpl.with_identity(vocab.name_token(item.identity)))});
    }
    return out;
}

TextEncoderStub make_base_encoder(const ExperimentConfig& cfg, const Vocabulary& vocab) {
    Rng init(Rng::derive(cfg.base_seed, 1));
    return TextEncoderStub(vocab.size(), cfg.cond_dim, init, cfg.token_scale);
}

std::vector<LabeledImage> base_corpus(const ExperimentConfig& cfg) {
    return synth_corpus(Rng::derive(cfg.base_seed, 2), cfg.base_identities, cfg.base_images_per_identity,
                        cfg.context_spread, cfg.image_size);
}

std::vector<LabeledImage> embedder_corpus(const ExperimentConfig& cfg) {
    return synth_corpus(Rng::derive(cfg.base_seed, 3), cfg.embedder_identities, cfg.embedder_images_per_identity,
                        cfg.context_spread, cfg.image_size);
}

TrainResult train_base_model(const ExperimentConfig& cfg, const DenoiserArch& arch, const TextEncoderStub& encoder,
                             const Vocabulary& vocab, std::uint64_t seed, const NoiseSchedule& sched) {
    const auto examples = caption_corpus(base_corpus(cfg), vocab, encoder, cfg.prompts);
    Rng init(Rng::derive(seed, 0));
    DenoiserModel model(arch, init);
    Rng rng(Rng::derive(seed, 1));
    return train_denoiser(examples, std::move(model), {cfg.base_steps, cfg.base_lr, cfg.base_batch}, rng, sched);
}

World build_world(const ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    const NoiseSchedule sched = make_schedule(cfg.T, cfg.schedule);
    Vocabulary vocab(cfg.base_identities);
    TextEncoderStub encoder = make_base_encoder(cfg, vocab);

    if (log) log("training base model (" + std::to_string(cfg.base_steps) + " steps)");
    TrainResult base = train_base_model(cfg, cfg.arch(), encoder, vocab, Rng::derive(cfg.base_seed, 4), sched);

    if (log) log("training identity embedder (" + std::to_string(cfg.embedder.steps) + " steps)");
    EmbedderTrainOptions eopt = cfg.embedder;
    IdentityEmbedder embedder = train_identity_embedder(embedder_corpus(cfg), eopt);

    World world{sched, vocab, encoder, std::move(base.model), std::move(base.losses), std::move(embedder), {}, {}};
    if (cfg.transfer) {
        if (log) log("training transfer base model");
        TrainResult b = train_base_model(cfg, cfg.transfer_arch(), encoder, vocab, Rng::derive(cfg.base_seed, 5), sched);
        world.transfer_base = std::move(b.model);
        world.transfer_losses = std::move(b.losses);
    }
    return world;
}

void save_world(const fs::path& dir, const World& world, const ExperimentConfig& cfg) {
    fs::create_directories(dir);
    write_checkpoint(dir / "base.tns", world.base);
    write_encoder(dir / "encoder.tns", world.encoder);
    write_embedder(dir / "embedder.tns", world.embedder);
    if (world.transfer_base) write_checkpoint(dir / "transfer_base.tns", *world.transfer_base);
    cfg.to_keyvalue().save(dir / "config.txt");
}

World load_world(const fs::path& dir, const ExperimentConfig& cfg) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": world directory not found");
    const NoiseSchedule sched = make_schedule(cfg.T, cfg.schedule);
    Vocabulary vocab(cfg.base_identities);
    TextEncoderStub encoder = read_encoder(dir / "encoder.tns");
    if (encoder.vocab_size() != vocab.size()) {
        throw DataError((dir / "encoder.tns").string() + ": token table does not match the vocabulary");
    }
    World world{sched, vocab, std::move(encoder), read_checkpoint(dir / "base.tns"), {},
                read_embedder(dir / "embedder.tns"), {}, {}};
    if (world.base.cond_dim() != world.encoder.dim()) throw DataError(dir.string() + ": condition widths differ");
    if (fs::exists(dir / "transfer_base.tns")) world.transfer_base = read_checkpoint(dir / "transfer_base.tns");
    return world;
}

ArmSeeds ArmSeeds::derive(std::uint64_t identity_seed, std::uint64_t seed) {
    ArmSeeds s;
    s.root = Rng::derive(identity_seed, seed);
    s.identity = Rng::derive(s.root, 1);
    s.tuning = Rng::derive(s.root, 2);
    s.cloak = Rng::derive(s.root, 3);
    s.single_point = Rng::derive(s.root, 4);
    s.image_specific = Rng::derive(s.root, 5);
    s.gradient_average = Rng::derive(s.root, 6);
    s.transfer = Rng::derive(s.root, 7);
    s.attack = Rng::derive(s.root, 8);
    s.generate = Rng::derive(s.root, 9);
    return s;
}

DefenderState learn_defender(const IdentityDataset& data, const World& world, const ExperimentConfig& cfg,
                             const ArmSeeds& seeds) {
    const PromptTemplate prompt = PromptTemplate::parse(cfg.prompts.front(), world.vocab);
    Rng id_rng(seeds.identity);
    PersonalizedModel personalized =
        learn_identity(data.train, world.base, world.encoder, prompt, cfg.identity, id_rng, world.sched);
    ConditionEmbedding c_id = core_identity(personalized.encoder, prompt);
    Rng tune_rng(seeds.tuning);
    AnchorSet anchors = diversify_contexts(data.train, personalized.model, c_id, cfg.tuning, tune_rng, world.sched);
    IdentitySubspace subspace = estimate_subspace(anchors, cfg.divisor);
    return {std::move(personalized), std::move(c_id), std::move(anchors), std::move(subspace)};
}

namespace {

std::vector<DataTensor> apply_each(const std::vector<DataTensor>& images, const std::vector<DataTensor>& cloaks) {
    std::vector<DataTensor> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) out.push_back(apply_cloak_image(images[i], cloaks[i]));
    return out;
}

void use_universal(DefenseOutput& out, const IdentityDataset& data, const Cloak& cloak) {
    out.cloak = cloak;
    out.train_cloaks.assign(data.train.size(), cloak.delta);
    out.test_cloaks.assign(data.test.size(), cloak.delta);
}

} // namespace

DefenseOutput craft_defense(Defense defense, const IdentityDataset& data, const DefenderState& state,
                            const ExperimentConfig& cfg, const ArmSeeds& seeds, const NoiseSchedule& sched,
                            CloakTrace* trace) {
    DefenseOutput out;
    out.defense = defense;
    const DenoiserModel& model = state.personalized.model;
    switch (defense) {
    case Defense::none:
        out.cloaked_train = data.train;
        out.cloaked_test = data.test;
        return out;
    case Defense::image_specific_transfer: {
        Rng rng(seeds.image_specific);
        out.train_cloaks = craft_image_specific(model, data.train, state.c_id, cfg.baseline, sched, rng);
        Rng assign(seeds.transfer);
        out.test_cloaks = transfer_cloaks(out.train_cloaks, data.test.size(), assign);
        break;
    }
    case Defense::gradient_avg_universal: {
        Rng rng(seeds.gradient_average);
        Cloak c;
        c.delta = craft_gradient_average(model, data.train, state.c_id, cfg.baseline, sched, rng);
        c.eta = cfg.baseline.eta;
        c.alpha = cfg.baseline.alpha;
        c.outer = cfg.baseline.steps;
        c.inner = static_cast<int>(data.train.size());
        c.seed = seeds.gradient_average;
        c.model_hash = model.hash();
        use_universal(out, data, c);
        break;
    }
    case Defense::id_cloak:
    case Defense::id_cloak_single_point: {
        CloakOptConfig ccfg = cfg.cloak;
        const bool point = defense == Defense::id_cloak_single_point;
        ccfg.seed = point ? seeds.single_point : seeds.cloak;
        const IdentitySubspace q = point ? IdentitySubspace::point(state.c_id) : state.subspace;
        use_universal(out, data, optimize_cloak(model, q, ccfg, sched, data.shape(), trace));
        break;
    }
    }
    out.cloaked_train = apply_each(data.train, out.train_cloaks);
    out.cloaked_test = apply_each(data.test, out.test_cloaks);
    return out;
}

AttackOutcome attack_and_evaluate(const std::vector<DataTensor>& published, const std::vector<DataTensor>& reference,
                                  const DenoiserModel& base, const World& world, const ExperimentConfig& cfg,
                                  const ArmSeeds& seeds) {
    if (reference.empty()) throw std::invalid_argument("attack_and_evaluate: no reference images");
    AttackConfig acfg = cfg.attack;
    acfg.seed = seeds.attack;
    const PromptTemplate attack_prompt =
        PromptTemplate::parse(cfg.prompts.at(static_cast<std::size_t>(acfg.prompt)), world.vocab);
    AttackOutcome out{personalize_attack(published, base, world.encoder, attack_prompt, acfg, world.sched), {}, {}};

    std::vector<DataTensor> pooled;
    for (std::size_t k = 0; k < cfg.prompts.size(); ++k) {
        Rng rng(Rng::derive(seeds.generate, k));
        const PromptTemplate p = PromptTemplate::parse(cfg.prompts[k], world.vocab);
        PromptOutcome po;
        po.prompt = cfg.prompts[k];
        po.generated = generate_batch(out.attack.model, out.attack.encoder, p, cfg.generate_n, cfg.generate_steps, rng,
                                      world.sched, reference.front().shape());
        po.metrics = evaluate_protection(po.generated, reference, world.embedder, cfg.threshold);
        pooled.insert(pooled.end(), po.generated.begin(), po.generated.end());
        out.prompts.push_back(std::move(po));
    }
    out.pooled = evaluate_protection(pooled, reference, world.embedder, cfg.threshold);
    return out;
}

ProtectionResult run_protection_experiment(const IdentityDataset& data, Defense defense, const World& world,
                                           const ExperimentConfig& cfg, std::uint64_t seed,
                                           std::optional<DefenderState>* state) {
    if (data.train.empty() || data.test.empty()) throw std::invalid_argument("run_protection_experiment: empty split");
    const ArmSeeds seeds = ArmSeeds::derive(data.seed, seed);
    std::optional<DefenderState> local;
    std::optional<DefenderState>& st = state ? *state : local;
    if (!st) st = learn_defender(data, world, cfg, seeds);

    DefenseOutput output = craft_defense(defense, data, *st, cfg, seeds, world.sched);
    AttackOutcome train = attack_and_evaluate(output.cloaked_train, data.test, world.base, world, cfg, seeds);
    AttackOutcome test = attack_and_evaluate(output.cloaked_test, data.test, world.base, world, cfg, seeds);
    return {defense, std::move(output), std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// CSV rows

std::string metrics_csv_header() {
    return "identity,split,arch,defense,attack,prompt,seed,ism_proxy,fdfr_proxy,quality_proxy,n";
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

} // namespace

std::string to_csv(const MetricsRow& r) {
    std::ostringstream os;
    os << csv_field(r.identity) << ',' << r.split << ',' << r.arch << ',' << to_string(r.defense) << ','
       << to_string(r.attack) << ',' << csv_field(r.prompt) << ',' << r.seed << ',' << format_double(r.metrics.ism_proxy)
       << ',' << format_double(r.metrics.fdfr_proxy) << ',' << format_double(r.metrics.quality_proxy) << ','
       << r.metrics.n;
    return os.str();
}

std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header()) {
        throw FormatError(path.string() + ": unexpected header");
    }
    std::vector<MetricsRow> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 11) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 11 fields");
        try {
            MetricsRow r;
            r.identity = f[0];
            r.split = f[1];
            r.arch = f[2];
            r.defense = parse_defense(f[3]);
            r.attack = parse_attack_method(f[4]);
            r.prompt = f[5];
            r.seed = std::stoull(f[6]);
            r.metrics.ism_proxy = parse_number(f[7]);
            r.metrics.fdfr_proxy = parse_number(f[8]);
            r.metrics.quality_proxy = parse_number(f[9]);
            r.metrics.n = std::stoi(f[10]);
            rows.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

[[noreturn]] void rethrow_in_stage(const std::string& stage) {
    const std::string prefix = "stage '" + stage + "': ";
    try {
        throw;
    } catch (const NumericError& e) {
        throw NumericError(prefix + e.what());
    } catch (const FormatError& e) {
        throw FormatError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(prefix + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(prefix + e.what());
    }
}

class StageRunner {
public:
    StageRunner(const Logger& log, std::mutex& mu) : log_(log), mu_(mu) {}

    template <typename F>
    auto operator()(const std::string& name, F&& f) {
        current_ = name;
        const auto start = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                done(name, start);
            } else {
                auto r = f();
                done(name, start);
                return r;
            }
        } catch (...) {
            rethrow_in_stage(name);
        }
    }

    const std::string& current() const { return current_; }

private:
    void done(const std::string& name, std::chrono::steady_clock::time_point start) {
        if (!log_) return;
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ostringstream os;
        os.precision(3);
        os << name << " done in " << s << " s";
        std::lock_guard<std::mutex> lock(mu_);
        log_(os.str());
    }

    const Logger& log_;
    std::mutex& mu_;
    std::string current_;
};

struct ArmSpec {
    int identity_index = 0;
    std::uint64_t seed = 0;
};

std::string arm_name(const IdentityDataset& data, std::uint64_t seed) {
    return data.identity + "_s" + std::to_string(seed);
}

void write_dataset(const fs::path& dir, const IdentityDataset& data) {
    fs::create_directories(dir);
    std::ofstream m(dir / "manifest.txt");
    m << "identity=" << data.identity << "\n";
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const std::string name = "train_" + std::to_string(i) + ".tns";
        write_tensor(dir / name, data.train[i]);
        m << "train=" << name << "\n";
    }
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const std::string name = "test_" + std::to_string(i) + ".tns";
        write_tensor(dir / name, data.test[i]);
        m << "test=" << name << "\n";
    }
}

struct ArmResult {
    std::vector<MetricsRow> rows;
    KeyValue manifest;
};

void append_rows(std::vector<MetricsRow>& rows, const AttackOutcome& o, const IdentityDataset& data,
                 const std::string& split, const std::string& arch, Defense defense, const ExperimentConfig& cfg,
                 std::uint64_t seed) {
    auto row = [&](const std::string& prompt, const MetricsReport& m) {
        rows.push_back({data.identity, split, arch, defense, cfg.attack.method, prompt, seed, m});
    };
    for (const auto& p : o.prompts) row(p.prompt, p.metrics);
    row("all", o.pooled);
}

ArmResult run_arm(const ArmSpec& spec, const World& world, const ExperimentConfig& cfg, const fs::path& root,
                  const Logger& log, std::mutex& log_mu) {
    StageRunner stage(log, log_mu);
    const IdentityDataset data = stage("data", [&] {
        return synth_dataset(cfg.identity_seed + static_cast<std::uint64_t>(spec.identity_index), cfg.n_train,
                             cfg.n_test, cfg.context_spread, cfg.image_size);
    });
    const std::string name = arm_name(data, spec.seed);
    const fs::path dir = root / "arms" / name;
    const ArmSeeds seeds = ArmSeeds::derive(data.seed, spec.seed);
    ArmResult result;
    KeyValue& mf = result.manifest;
    const std::string key = "arm." + name + ".";
    mf.set(key + "identity", data.identity);
    mf.set(key + "seed", spec.seed);
    mf.set(key + "root_seed", seeds.root);

    stage(name + "/write-data", [&] { write_dataset(dir / "data", data); });

    const DefenderState state = stage(name + "/identity", [&] {
        DefenderState s = learn_defender(data, world, cfg, seeds);
        write_checkpoint(dir / "personalized.tns", s.personalized.model);
        write_encoder(dir / "personalized_encoder.tns", s.personalized.encoder);
        write_condition(dir / "core_identity.tns", s.c_id);
        write_anchors(dir / "anchors.tns", s.anchors);
        write_subspace(dir / "subspace.tns", s.subspace);
        return s;
    });
    mf.set(key + "personalized_hash", hex_hash(state.personalized.model.hash()));
    mf.set(key + "subspace_hash", hex_hash(state.subspace.hash()));

    struct Target {
        std::string arch;
        const DenoiserModel* base;
    };
    std::vector<Target> targets{{"A", &world.base}};
    if (world.transfer_base) targets.push_back({"B", &*world.transfer_base});

    for (Defense d : cfg.defenses) {
        const std::string dname = to_string(d);
        const DefenseOutput out = stage(name + "/craft/" + dname, [&] {
            DefenseOutput o = craft_defense(d, data, state, cfg, seeds, world.sched);
            fs::create_directories(dir / "cloaks");
            fs::create_directories(dir / "cloaked");
            if (o.cloak) write_cloak(dir / "cloaks" / (dname + ".tns"), *o.cloak);
            else if (!o.train_cloaks.empty()) {
                write_tensor_stack(dir / "cloaks" / (dname + "_train.tns"), o.train_cloaks);
                write_tensor_stack(dir / "cloaks" / (dname + "_test.tns"), o.test_cloaks);
            }
            write_tensor_stack(dir / "cloaked" / (dname + "_train.tns"), o.cloaked_train);
            write_tensor_stack(dir / "cloaked" / (dname + "_test.tns"), o.cloaked_test);
            return o;
        });
        if (out.cloak) mf.set(key + "cloak." + dname, hex_hash(hash_vector(out.cloak->delta.values())));

        for (const auto& target : targets) {
            for (const std::string split : {"train", "test"}) {
                const std::string tag = target.arch + "_" + dname + "_" + split;
                const auto& published = split == "train" ? out.cloaked_train : out.cloaked_test;
                const AttackOutcome o = stage(name + "/attack/" + tag, [&] {
                    AttackOutcome r = attack_and_evaluate(published, data.test, *target.base, world, cfg, seeds);
                    if (cfg.attack_checkpoints) {
                        fs::create_directories(dir / "attacks");
                        write_checkpoint(dir / "attacks" / (tag + ".tns"), r.attack.model);
                        write_encoder(dir / "attacks" / (tag + "_encoder.tns"), r.attack.encoder);
                    }
                    fs::create_directories(dir / "generations");
                    for (std::size_t k = 0; k < r.prompts.size(); ++k) {
                        write_tensor_stack(dir / "generations" / (tag + "_p" + std::to_string(k) + ".tns"),
                                           r.prompts[k].generated);
                    }
                    return r;
                });
                append_rows(result.rows, o, data, split, target.arch, d, cfg, spec.seed);
            }
        }
    }

    std::ofstream csv(dir / "metrics.csv");
    csv << metrics_csv_header() << "\n";
    for (const auto& r : result.rows) csv << to_csv(r) << "\n";
    return result;
}

void write_manifest(const fs::path& root, const std::string& status, const KeyValue& extra) {
    KeyValue kv;
    kv.set("layout_version", kLayoutVersion);
    kv.set("status", status);
    for (const auto& [k, v] : extra.entries()) kv.set(k, v);
    kv.save(root / "manifest.txt");
}

} // namespace

std::vector<MetricsRow> run_pipeline(const ExperimentConfig& cfg, const Logger& log) {
    cfg.validate();
    const fs::path root = cfg.output_dir;
    if (fs::exists(root) && !fs::is_directory(root)) throw ConfigError(root.string() + " exists and is not a directory");
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!cfg.force) throw ConfigError(root.string() + " is not empty; rerun with force to overwrite");
        fs::remove_all(root);
    }
    fs::create_directories(root / "world");
    fs::create_directories(root / "reports");
    cfg.to_keyvalue().save(root / "config.txt");

    KeyValue mf;
    mf.set("config_hash", hex_hash(cfg.hash()));
    std::string seeds;
    for (auto s : cfg.seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    mf.set("seeds", seeds);
    mf.set("base_seed", cfg.base_seed);
    mf.set("identity_seed", cfg.identity_seed);
    write_manifest(root, "running", mf);

    std::mutex log_mu;
    StageRunner stage(log, log_mu);
    auto fail = [&](const std::string& st) {
        KeyValue m = mf;
        m.set("failed_stage", st);
        write_manifest(root, "failed", m);
    };

    std::vector<MetricsRow> rows;
    try {
        const World world = stage("world", [&] {
            World w = build_world(cfg, log);
            save_world(root / "world", w, cfg);
            return w;
        });
        mf.set("base_hash", hex_hash(world.base.hash()));
        if (world.transfer_base) mf.set("transfer_base_hash", hex_hash(world.transfer_base->hash()));
        mf.set("embedder_hash", hex_hash(hash_vector(world.embedder.params())));
        mf.set("embedder.heldout_same", world.embedder.info.heldout.same);
        mf.set("embedder.heldout_cross", world.embedder.info.heldout.cross);

        std::vector<ArmSpec> arms;
        for (int i = 0; i < cfg.identities; ++i) {
            for (auto s : cfg.seeds) arms.push_back({i, s});
        }
        std::vector<ArmResult> results(arms.size());
        const std::size_t width = static_cast<std::size_t>(cfg.threads);
        for (std::size_t start = 0; start < arms.size(); start += width) {
            const std::size_t end = std::min(arms.size(), start + width);
            if (width == 1) {
                results[start] = run_arm(arms[start], world, cfg, root, log, log_mu);
                continue;
            }
            std::vector<std::future<ArmResult>> jobs;
            for (std::size_t a = start; a < end; ++a) {
                jobs.push_back(std::async(std::launch::async,
                                          [&, a] { return run_arm(arms[a], world, cfg, root, log, log_mu); }));
            }
            for (std::size_t a = start; a < end; ++a) results[a] = jobs[a - start].get();
        }
        for (auto& r : results) {
            rows.insert(rows.end(), r.rows.begin(), r.rows.end());
            for (const auto& [k, v] : r.manifest.entries()) mf.set(k, v);
        }

        stage("report", [&] {
            std::ofstream csv(root / "reports" / "metrics.csv");
            csv << metrics_csv_header() << "\n";
            for (const auto& r : rows) csv << to_csv(r) << "\n";
            csv.close();
            emit_report(root);
        });
    } catch (const std::exception& e) {
        std::string msg = e.what();
        const auto end = msg.find("': ");
        fail(msg.rfind("stage '", 0) == 0 && end != std::string::npos ? msg.substr(7, end - 7) : stage.current());
        throw;
    }
    write_manifest(root, "complete", mf);
    return rows;
}

} // namespace idcloak
