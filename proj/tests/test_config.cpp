#include <doctest.h>

#include <fstream>

#include "idcloak/config.hpp"
#include "idcloak/errors.hpp"
#include "scratch.hpp"

using namespace idcloak;

TEST_CASE("defaults follow the reference setup") {
    const ExperimentConfig c;
    CHECK(c.cloak.eta == 16.0 / 255.0);
    CHECK(c.cloak.alpha == 0.05);
    CHECK(c.cloak.outer == 200);
    CHECK(c.cloak.inner == 10);
    CHECK(c.cloak.sampler_steps == 50);
    CHECK(c.cloak.presearch);
    CHECK(c.identity.steps == 1000);
    CHECK(c.tuning.steps == 50);
    CHECK(c.tuning.lr == 1e-3);
    CHECK(c.attack.steps == 1000);
    CHECK(c.attack.method == AttackMethod::full_finetune);
    CHECK(c.generate_n == 30);
    CHECK(c.generate_steps == 50);
    CHECK(c.n_train == 4);
    CHECK(c.n_test == 8);
    CHECK(c.identities == 5);
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.T == 1000);
    CHECK(c.schedule == ScheduleKind::linear);
    CHECK(c.divisor == SigmaDivisor::unbiased);
    CHECK(c.prompts == default_prompts());
    CHECK(c.defenses.size() == 5);
    CHECK_NOTHROW(c.validate());
    CHECK_NOTHROW(ExperimentConfig::smoke().validate());
}

TEST_CASE("every key round trips through key/value text") {
    ExperimentConfig c;
    c.set("cloak.eta", "8/255");
    c.set("experiment.seeds", "4,5");
    c.set("experiment.defenses", "none,id_cloak");
    c.set("eval.prompts", "a photo of V* person;a dslr portrait of V* person");
    c.set("subspace.divisor", "n");
    c.set("attack.method", "low_rank");
    c.set("schedule.kind", "cosine");
    c.set("transfer.enabled", "true");
    const auto kv = c.to_keyvalue();
    CHECK(kv.entries().size() == ExperimentConfig::keys().size());

    ExperimentConfig d;
    d.apply(KeyValue::parse(kv.str()));
    CHECK(d.to_keyvalue().str() == kv.str());
    CHECK(d.cloak.eta == 8.0 / 255.0);
    CHECK(d.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(d.defenses == std::vector<Defense>{Defense::none, Defense::id_cloak});
    CHECK(d.prompts.size() == 2);
    CHECK(d.divisor == SigmaDivisor::population);
    CHECK(d.attack.method == AttackMethod::low_rank);
    CHECK(d.schedule == ScheduleKind::cosine);
    CHECK(d.transfer);
    CHECK(d.hash() == c.hash());
}

TEST_CASE("bad keys and values are configuration errors") {
    ExperimentConfig c;
    CHECK_THROWS_AS(c.set("cloak.nope", "1"), ConfigError);
    CHECK_THROWS_AS(c.set("cloak.outer", "many"), ConfigError);
    CHECK_THROWS_AS(c.set("transfer.enabled", "maybe"), ConfigError);
    CHECK_THROWS_AS(c.set("experiment.defenses", "none,fog"), ConfigError);
    CHECK_THROWS_AS(c.set("subspace.divisor", "n+1"), ConfigError);

    ExperimentConfig v;
    v.n_test = 0;
    CHECK_THROWS_AS(v.validate(), ConfigError);
    v = {};
    v.cloak.t_max = 5000;
    CHECK_THROWS_AS(v.validate(), ConfigError);
    v = {};
    v.attack.prompt = 3;
    CHECK_THROWS_AS(v.validate(), ConfigError);
    v = {};
    v.generate_steps = 2000;
    CHECK_THROWS_AS(v.validate(), ConfigError);
}

TEST_CASE("config files") {
    ScratchDir dir("cfg");
    std::ofstream(dir / "ok.txt") << "# tweaks\ncloak.outer=7\nexperiment.seeds=9\n";
    const auto c = ExperimentConfig::load(dir / "ok.txt");
    CHECK(c.cloak.outer == 7);
    CHECK(c.seeds == std::vector<std::uint64_t>{9});
    CHECK(c.cloak.inner == 10);

    std::ofstream(dir / "bad.txt") << "cloak.outer 7\n";
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "bad.txt"), ConfigError);
    std::ofstream(dir / "invalid.txt") << "data.n_train=0\n";
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "invalid.txt"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "absent.txt"), ConfigError);
}

TEST_CASE("hash ignores output placement but tracks settings") {
    ExperimentConfig a, b;
    b.output_dir = "elsewhere";
    b.force = true;
    b.threads = 4;
    b.attack_checkpoints = false;
    CHECK(a.hash() == b.hash());
    b.cloak.outer = 199;
    CHECK(a.hash() != b.hash());
}

TEST_CASE("defense names") {
    for (auto d : {Defense::none, Defense::image_specific_transfer, Defense::gradient_avg_universal,
                   Defense::id_cloak, Defense::id_cloak_single_point}) {
        CHECK(parse_defense(to_string(d)) == d);
    }
    CHECK_THROWS(parse_defense("veil"));
}

TEST_CASE("architectures derive from the image size") {
    const auto c = ExperimentConfig::smoke();
    CHECK(c.arch().data_dim == 64);
    CHECK(c.arch().hidden == c.hidden);
    CHECK(c.transfer_arch().hidden == c.transfer_hidden);
    CHECK(c.transfer_arch().depth == c.transfer_depth);
}
