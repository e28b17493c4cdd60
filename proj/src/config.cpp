#include "idcloak/config.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "idcloak/errors.hpp"
#include "idcloak/text_encoder.hpp"

namespace idcloak {

Defense parse_defense(const std::string& name) {
    if (name == "none") return Defense::none;
    if (name == "image_specific_transfer") return Defense::image_specific_transfer;
    if (name == "gradient_avg_universal") return Defense::gradient_avg_universal;
    if (name == "id_cloak") return Defense::id_cloak;
    if (name == "id_cloak_single_point") return Defense::id_cloak_single_point;
    throw std::invalid_argument("unknown defense '" + name + "'");
}

std::string to_string(Defense d) {
    switch (d) {
    case Defense::none: return "none";
    case Defense::image_specific_transfer: return "image_specific_transfer";
    case Defense::gradient_avg_universal: return "gradient_avg_universal";
    case Defense::id_cloak: return "id_cloak";
    case Defense::id_cloak_single_point: return "id_cloak_single_point";
    }
    return "?";
}

namespace {

struct Field {
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
T parse_int_value(const std::string& v) {
    std::size_t used = 0;
    long long r = 0;
    try {
        r = std::stoll(v, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("not an integer: '" + v + "'");
    }
    if (used != v.size()) throw std::invalid_argument("not an integer: '" + v + "'");
    return static_cast<T>(r);
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("not a boolean: '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) {
        const auto b = cur.find_first_not_of(' ');
        const auto e = cur.find_last_not_of(' ');
        if (b != std::string::npos) out.push_back(cur.substr(b, e - b + 1));
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f, char sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += sep;
        out += f(v[i]);
    }
    return out;
}

template <typename M>
Field int_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); },
            [member](ExperimentConfig& c, const std::string& v) {
                auto& ref = member(c);
                ref = parse_int_value<std::remove_reference_t<decltype(ref)>>(v);
            }};
}

template <typename M>
Field real_field(std::string key, M member) {
    return {key, [member](const ExperimentConfig& c) { return format_double(member(const_cast<ExperimentConfig&>(c))); },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_number(v); }};
}

template <typename M>
Field bool_field(std::string key, M member) {
    return {key,
            [member](const ExperimentConfig& c) {
                return std::string(member(const_cast<ExperimentConfig&>(c)) ? "true" : "false");
            },
            [member](ExperimentConfig& c, const std::string& v) { member(c) = parse_bool(v); }};
}

#define IDC_REF(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        int_field("schedule.T", IDC_REF(T)),
        {"schedule.kind", [](const ExperimentConfig& c) { return to_string(c.schedule); },
         [](ExperimentConfig& c, const std::string& v) { c.schedule = parse_schedule_kind(v); }},
        int_field("model.image_size", IDC_REF(image_size)),
        int_field("model.hidden", IDC_REF(hidden)),
        int_field("model.depth", IDC_REF(depth)),
        int_field("model.time_dim", IDC_REF(time_dim)),
        int_field("model.cond_dim", IDC_REF(cond_dim)),

        int_field("base.identities", IDC_REF(base_identities)),
        int_field("base.images_per_identity", IDC_REF(base_images_per_identity)),
        int_field("base.steps", IDC_REF(base_steps)),
        real_field("base.lr", IDC_REF(base_lr)),
        int_field("base.batch", IDC_REF(base_batch)),
        int_field("base.seed", IDC_REF(base_seed)),
        real_field("base.token_scale", IDC_REF(token_scale)),

        bool_field("transfer.enabled", IDC_REF(transfer)),
        int_field("transfer.hidden", IDC_REF(transfer_hidden)),
        int_field("transfer.depth", IDC_REF(transfer_depth)),

        int_field("embedder.identities", IDC_REF(embedder_identities)),
        int_field("embedder.images_per_identity", IDC_REF(embedder_images_per_identity)),
        int_field("embedder.hidden", IDC_REF(embedder.hidden)),
        int_field("embedder.feature_dim", IDC_REF(embedder.feature_dim)),
        int_field("embedder.steps", IDC_REF(embedder.steps)),
        int_field("embedder.batch", IDC_REF(embedder.batch)),
        real_field("embedder.lr", IDC_REF(embedder.lr)),
        real_field("embedder.scale", IDC_REF(embedder.scale)),
        int_field("embedder.holdout_per_identity", IDC_REF(embedder.holdout_per_identity)),
        int_field("embedder.seed", IDC_REF(embedder.seed)),

        int_field("data.identities", IDC_REF(identities)),
        int_field("data.identity_seed", IDC_REF(identity_seed)),
        int_field("data.n_train", IDC_REF(n_train)),
        int_field("data.n_test", IDC_REF(n_test)),
        real_field("data.context_spread", IDC_REF(context_spread)),
        {"experiment.seeds",
         [](const ExperimentConfig& c) {
             return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); }, ',');
         },
         [](ExperimentConfig& c, const std::string& v) {
             c.seeds.clear();
             for (const auto& s : split(v, ',')) c.seeds.push_back(parse_int_value<std::uint64_t>(s));
         }},
        {"experiment.defenses",
         [](const ExperimentConfig& c) {
             return join<Defense>(c.defenses, [](const Defense& d) { return to_string(d); }, ',');
         },
         [](ExperimentConfig& c, const std::string& v) {
             c.defenses.clear();
             for (const auto& s : split(v, ',')) c.defenses.push_back(parse_defense(s));
         }},
        int_field("experiment.threads", IDC_REF(threads)),

        int_field("identity.steps", IDC_REF(identity.steps)),
        real_field("identity.lr", IDC_REF(identity.lr)),
        int_field("identity.batch", IDC_REF(identity.batch)),
        int_field("prompt_tuning.steps", IDC_REF(tuning.steps)),
        real_field("prompt_tuning.lr", IDC_REF(tuning.lr)),
        int_field("prompt_tuning.batch", IDC_REF(tuning.batch)),
        {"subspace.divisor",
         [](const ExperimentConfig& c) { return std::string(c.divisor == SigmaDivisor::unbiased ? "n-1" : "n"); },
         [](ExperimentConfig& c, const std::string& v) {
             if (v == "n-1") c.divisor = SigmaDivisor::unbiased;
             else if (v == "n") c.divisor = SigmaDivisor::population;
             else throw std::invalid_argument("divisor must be 'n-1' or 'n'");
         }},
        real_field("subspace.truncation", IDC_REF(cloak.truncation)),

        int_field("cloak.outer", IDC_REF(cloak.outer)),
        int_field("cloak.inner", IDC_REF(cloak.inner)),
        real_field("cloak.alpha", IDC_REF(cloak.alpha)),
        real_field("cloak.eta", IDC_REF(cloak.eta)),
        int_field("cloak.sampler_steps", IDC_REF(cloak.sampler_steps)),
        int_field("cloak.t_min", IDC_REF(cloak.t_min)),
        int_field("cloak.t_max", IDC_REF(cloak.t_max)),
        bool_field("cloak.presearch", IDC_REF(cloak.presearch)),
        bool_field("cloak.scale_grad", IDC_REF(cloak.scale_grad)),

        int_field("baseline.steps", IDC_REF(baseline.steps)),
        real_field("baseline.alpha", IDC_REF(baseline.alpha)),
        int_field("baseline.t_min", IDC_REF(baseline.t_min)),
        int_field("baseline.t_max", IDC_REF(baseline.t_max)),

        {"attack.method", [](const ExperimentConfig& c) { return to_string(c.attack.method); },
         [](ExperimentConfig& c, const std::string& v) { c.attack.method = parse_attack_method(v); }},
        int_field("attack.steps", IDC_REF(attack.steps)),
        real_field("attack.lr", IDC_REF(attack.lr)),
        int_field("attack.rank", IDC_REF(attack.rank)),
        int_field("attack.batch", IDC_REF(attack.batch)),
        int_field("attack.prompt", IDC_REF(attack.prompt)),

        int_field("generate.n", IDC_REF(generate_n)),
        int_field("generate.steps", IDC_REF(generate_steps)),
        real_field("eval.threshold", IDC_REF(threshold)),
        {"eval.prompts",
         [](const ExperimentConfig& c) {
             return join<std::string>(c.prompts, [](const std::string& s) { return s; }, ';');
         },
         [](ExperimentConfig& c, const std::string& v) { c.prompts = split(v, ';'); }},

        {"output.dir", [](const ExperimentConfig& c) { return c.output_dir.string(); },
         [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},
        bool_field("output.force", IDC_REF(force)),
        bool_field("output.attack_checkpoints", IDC_REF(attack_checkpoints)),
    };
    return table;
}

#undef IDC_REF

} // namespace

ExperimentConfig::ExperimentConfig() : prompts(default_prompts()) {
    embedder.seed = 11;
    cloak.seed = 0;
}

std::vector<std::string> ExperimentConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
}

KeyValue ExperimentConfig::to_keyvalue() const {
    KeyValue kv;
    for (const auto& f : fields()) kv.set(f.key, f.get(*this));
    return kv;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key != key) continue;
        try {
            f.set(*this, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + key + "': " + e.what());
        }
        return;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void ExperimentConfig::apply(const KeyValue& kv) {
    for (const auto& [k, v] : kv.entries()) set(k, v);
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    ExperimentConfig cfg;
    try {
        cfg.apply(KeyValue::load(path));
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid config: " + m); };
    if (T < 1) fail("schedule.T must be >= 1");
    if (image_size < 4) fail("model.image_size must be >= 4");
    if (hidden < 1 || depth < 1 || cond_dim < 1 || time_dim < 2 || time_dim % 2) fail("bad model sizes");
    if (base_identities < 1 || base_images_per_identity < 1 || base_steps < 0 || base_batch < 1) fail("bad base corpus");
    if (embedder_identities < 2) fail("embedder.identities must be >= 2");
    if (identities < 1 || n_train < 1 || n_test < 1) fail("need at least one identity, train and test image");
    if (seeds.empty()) fail("experiment.seeds is empty");
    if (identity.steps < 0 || tuning.steps < 0) fail("negative step counts");
    if (generate_n < 1 || generate_steps < 1 || generate_steps > T) fail("bad generation settings");
    if (!(threshold >= 0.0 && threshold <= 1.0)) fail("eval.threshold must lie in [0, 1]");
    if (prompts.empty()) fail("eval.prompts is empty");
    if (attack.prompt < 0 || attack.prompt >= static_cast<int>(prompts.size())) fail("attack.prompt out of range");
    if (threads < 1) fail("experiment.threads must be >= 1");
    try {
        const NoiseSchedule sched = make_schedule(T, schedule);
        cloak.validate(sched);
        baseline.validate(sched);
        attack.validate();
        Vocabulary vocab(base_identities);
        for (const auto& p : prompts) PromptTemplate::parse(p, vocab);
    } catch (const std::invalid_argument& e) {
        fail(e.what());
    }
}

ExperimentConfig ExperimentConfig::smoke() {
    ExperimentConfig c;
    c.T = 50;
    c.image_size = 8;
    c.hidden = 64;
    c.time_dim = 16;
    c.cond_dim = 16;
    c.base_identities = 8;
    c.base_images_per_identity = 6;
    c.base_steps = 400;
    c.embedder_identities = 8;
    c.embedder_images_per_identity = 6;
    c.embedder.hidden = 32;
    c.embedder.feature_dim = 8;
    c.embedder.steps = 200;
    c.identities = 1;
    c.seeds = {1};
    c.identity.steps = 50;
    c.tuning.steps = 10;
    c.cloak.outer = 20;
    c.cloak.inner = 2;
    c.cloak.sampler_steps = 10;
    c.baseline.steps = 20;
    c.attack.steps = 50;
    c.generate_n = 4;
    c.generate_steps = 10;
    c.transfer_hidden = 48;
    c.transfer_depth = 2;
    return c;
}

DenoiserArch ExperimentConfig::arch() const {
    return {image_size * image_size, hidden, depth, time_dim, cond_dim};
}

DenoiserArch ExperimentConfig::transfer_arch() const {
    return {image_size * image_size, transfer_hidden, transfer_depth, time_dim, cond_dim};
}

std::uint64_t ExperimentConfig::hash() const {
    KeyValue kv = to_keyvalue();
    std::string s;
    for (const auto& [k, v] : kv.entries()) {
        if (k == "output.dir" || k == "output.force" || k == "output.attack_checkpoints" || k == "experiment.threads") continue;
        s += k + "=" + v + "\n";
    }
    return fnv1a(s.data(), s.size());
}

} // namespace idcloak
