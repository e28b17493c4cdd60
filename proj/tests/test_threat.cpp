#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "idcloak/dataset.hpp"
#include "idcloak/embedder.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/threat.hpp"
#include "idcloak/tns_io.hpp"
#include "oracles.hpp"
#include "scratch.hpp"

using namespace idcloak;

namespace {

DenoiserArch small_arch() { return {16, 12, 2, 8, 6}; }

DataTensor random_image(Rng& r) {
    const double level = r.uniform(0.0, 1.0);
    return DataTensor({4, 4}, level * Eigen::VectorXd::Ones(16) + 0.1 * r.normal_vector(16));
}

struct Setup {
    NoiseSchedule sched = make_schedule(50, ScheduleKind::linear);
    Vocabulary vocab;
    DenoiserModel model;
    TextEncoderStub encoder;
    PromptTemplate prompt;
    std::vector<DataTensor> images;

    static Setup make() {
        Rng r(1);
        Vocabulary v;
        DenoiserModel m(small_arch(), r);
        TextEncoderStub e(v.size(), 6, r);
        auto p = PromptTemplate::parse("a photo of V* person", v);
        std::vector<DataTensor> imgs{random_image(r), random_image(r), random_image(r)};
        return {make_schedule(50, ScheduleKind::linear), v, m, e, p, imgs};
    }
};

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * 8) == 0;
}

// Square root of a symmetric positive semi-definite matrix.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

double frechet_oracle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::VectorXd ma = a.rowwise().mean(), mb = b.rowwise().mean();
    const Eigen::MatrixXd ca = a.colwise() - ma, cb = b.colwise() - mb;
    const Eigen::MatrixXd sa = ca * ca.transpose() / (a.cols() - 1.0);
    const Eigen::MatrixXd sb = cb * cb.transpose() / (b.cols() - 1.0);
    const Eigen::MatrixXd ra = psd_sqrt(sa);
    return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * psd_sqrt(ra * sb * ra).trace();
}

} // namespace

TEST_CASE("attack method names") {
    for (auto m : {AttackMethod::full_finetune, AttackMethod::low_rank, AttackMethod::embedding_only}) {
        CHECK(parse_attack_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_attack_method("dreamy"), std::invalid_argument);
    AttackConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = {};
    bad.method = AttackMethod::low_rank;
    bad.rank = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("low-rank targets are the weight and condition matrices") {
    const auto s = Setup::make();
    const auto targets = low_rank_targets(s.model);
    CHECK(!targets.empty());
    for (const auto& name : targets) {
        CHECK((name[0] == 'W' || name[0] == 'V'));
        CHECK(s.model.slice(name).cols > 1);
    }
    CHECK(std::find(targets.begin(), targets.end(), "W_out") != targets.end());
    CHECK(std::find(targets.begin(), targets.end(), "V1") != targets.end());
}

TEST_CASE("zero attack steps return the base model unchanged") {
    const auto s = Setup::make();
    for (auto m : {AttackMethod::full_finetune, AttackMethod::low_rank, AttackMethod::embedding_only}) {
        AttackConfig cfg;
        cfg.method = m;
        cfg.steps = 0;
        const auto out = personalize_attack(s.images, s.model, s.encoder, s.prompt, cfg, s.sched);
        CHECK(same_bits(out.model.params(), s.model.params()));
        CHECK(out.encoder == s.encoder);
        CHECK(out.losses.empty());
    }
}

TEST_CASE("attack masks touch only their parameters") {
    const auto s = Setup::make();
    AttackConfig cfg;
    cfg.steps = 15;
    cfg.lr = 1e-2;
    cfg.seed = 4;

    cfg.method = AttackMethod::embedding_only;
    auto out = personalize_attack(s.images, s.model, s.encoder, s.prompt, cfg, s.sched);
    CHECK(same_bits(out.model.params(), s.model.params()));
    const int vstar = s.vocab.identity_token();
    for (int j = 0; j < s.encoder.vocab_size(); ++j) {
        const Eigen::VectorXd before = s.encoder.table().col(j), after = out.encoder.table().col(j);
        if (j == vstar) {
            CHECK(!same_bits(before, after));
        } else {
            CHECK(same_bits(before, after));
        }
    }

    cfg.method = AttackMethod::low_rank;
    out = personalize_attack(s.images, s.model, s.encoder, s.prompt, cfg, s.sched);
    CHECK(out.encoder == s.encoder);
    const auto targets = low_rank_targets(s.model);
    for (const auto& slice : s.model.slices()) {
        const bool target = std::find(targets.begin(), targets.end(), slice.name) != targets.end();
        const Eigen::MatrixXd diff = out.model.matrix(slice) - s.model.matrix(slice);
        if (target) {
            CHECK(diff.cwiseAbs().maxCoeff() > 0.0);
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(diff);
            int rank = 0;
            for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) rank += svd.singularValues()[i] > 1e-10;
            CHECK(rank <= cfg.rank);
        } else {
            CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
        }
    }

    cfg.method = AttackMethod::full_finetune;
    out = personalize_attack(s.images, s.model, s.encoder, s.prompt, cfg, s.sched);
    CHECK(!same_bits(out.model.params(), s.model.params()));
    CHECK(out.losses.size() == 15);
    const auto again = personalize_attack(s.images, s.model, s.encoder, s.prompt, cfg, s.sched);
    CHECK(same_bits(out.model.params(), again.model.params()));
}

TEST_CASE("attack input checks") {
    const auto s = Setup::make();
    AttackConfig cfg;
    cfg.steps = 1;
    CHECK_THROWS_AS(personalize_attack({}, s.model, s.encoder, s.prompt, cfg, s.sched), std::invalid_argument);
    CHECK_THROWS_AS(personalize_attack({DataTensor::zeros({3, 3})}, s.model, s.encoder, s.prompt, cfg, s.sched),
                    std::invalid_argument);
}

TEST_CASE("generations are clamped and reproducible") {
    const auto s = Setup::make();
    Rng a(3), b(3);
    const auto g = generate_batch(s.model, s.encoder, s.prompt, 5, 10, a, s.sched, {4, 4});
    const auto h = generate_batch(s.model, s.encoder, s.prompt, 5, 10, b, s.sched, {4, 4});
    REQUIRE(g.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(g[i] == h[i]);
        CHECK(g[i].values().minCoeff() >= 0.0);
        CHECK(g[i].values().maxCoeff() <= 1.0);
        CHECK(g[i].shape() == Shape{4, 4});
    }
    CHECK_THROWS_AS(generate_batch(s.model, s.encoder, s.prompt, 0, 10, a, s.sched, {4, 4}), std::invalid_argument);
}

TEST_CASE("Frechet distance matches an eigen-decomposition oracle") {
    Rng r(5);
    for (int trial = 0; trial < 5; ++trial) {
        Eigen::MatrixXd a(4, 12), b(4, 9);
        for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) = r.normal_vector(4);
        for (Eigen::Index j = 0; j < b.cols(); ++j) b.col(j) = 0.5 + 2.0 * r.normal_vector(4).array();
        CHECK(frechet_distance(a, b) == doctest::Approx(frechet_oracle(a, b)).epsilon(1e-9));
    }
    Eigen::MatrixXd a(4, 6);
    for (Eigen::Index j = 0; j < 6; ++j) a.col(j) = r.normal_vector(4);
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).scale(1.0).epsilon(1e-10));
    // one dimension: (mu_a - mu_b)^2 + (sd_a - sd_b)^2
    Eigen::MatrixXd x(1, 3), y(1, 3);
    x << 0.0, 1.0, 2.0;
    y << 3.0, 5.0, 7.0;
    CHECK(frechet_distance(x, y) == doctest::Approx(16.0 + 1.0));
    CHECK_THROWS_AS(frechet_distance(x, Eigen::MatrixXd(2, 3)), std::invalid_argument);
}

TEST_CASE("embedder outputs unit vectors and its gradient matches finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng r(seed);
        IdentityEmbedder emb(EmbedderArch{16, 10, 5}, r);
        Eigen::MatrixXd x(16, 3);
        for (Eigen::Index j = 0; j < 3; ++j) x.col(j) = r.normal_vector(16);
        const auto e = emb.embed(x);
        for (Eigen::Index j = 0; j < 3; ++j) CHECK(e.col(j).norm() == doctest::Approx(1.0).epsilon(1e-12));

        Eigen::MatrixXd w(5, 3);
        for (Eigen::Index j = 0; j < 3; ++j) w.col(j) = r.normal_vector(5);
        const auto pass = emb.forward(x);
        const Eigen::VectorXd g = emb.backward(pass, w);
        auto f = [&](const Eigen::VectorXd& p) {
            IdentityEmbedder other(emb.arch(), p);
            return (w.array() * other.embed(x).array()).sum();
        };
        Rng pick(seed);
        CHECK(oracle::worst_fd_error(f, emb.params(), g, 24, pick) < 1e-3);
    }
}

TEST_CASE("trained embedder separates held-out identities") {
    const auto corpus = synth_corpus(17, 12, 8, 1.0, 16);
    EmbedderTrainOptions opt;
    opt.hidden = 48;
    opt.feature_dim = 8;
    opt.steps = 600;
    opt.seed = 3;
    const auto emb = train_identity_embedder(corpus, opt);
    CHECK(emb.info.identities == 12);
    CHECK(emb.info.heldout.gap() >= 0.2);

    // unseen identities from another corpus
    const auto fresh = synth_corpus(99, 6, 4, 1.0, 16);
    CHECK(measure_separation(emb, fresh).gap() >= 0.2);

    CHECK_THROWS_AS(train_identity_embedder({}, opt), std::invalid_argument);
}

TEST_CASE("protection metrics on self-comparison and noise") {
    const auto corpus = synth_corpus(17, 10, 8, 1.0, 16);
    EmbedderTrainOptions opt;
    opt.hidden = 48;
    opt.feature_dim = 8;
    opt.steps = 400;
    opt.seed = 3;
    const auto emb = train_identity_embedder(corpus, opt);

    const auto ds = synth_dataset(1000, 4, 8, 1.0);
    const auto self = evaluate_protection(ds.train, ds.train, emb, 0.5);
    CHECK(self.ism_proxy == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(self.fdfr_proxy == 0.0);
    CHECK(self.quality_proxy == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(self.n == 4);

    Rng r(4);
    std::vector<DataTensor> noise;
    for (int i = 0; i < 8; ++i) {
        Eigen::VectorXd v(256);
        for (auto& x : v) x = r.uniform();
        noise.push_back(ds.train[0].with_values(v));
    }
    const auto held = evaluate_protection(ds.test, ds.train, emb, 0.5);
    const auto rand = evaluate_protection(noise, ds.train, emb, 0.5);
    CHECK(rand.ism_proxy < held.ism_proxy);
    CHECK(rand.quality_proxy > held.quality_proxy);

    const Eigen::MatrixXd ref = emb.embed(ds.train);
    const auto conf = recognition_confidence(emb.embed(noise), ref);
    CHECK(conf.minCoeff() >= 0.0);
    CHECK(conf.maxCoeff() <= 1.0 + 1e-12);
    CHECK_THROWS_AS(evaluate_protection({}, ds.train, emb), std::invalid_argument);
}

TEST_CASE("synthetic datasets") {
    const auto a = synth_dataset(5, 3, 4, 1.0);
    const auto b = synth_dataset(5, 3, 4, 1.0);
    REQUIRE(a.train.size() == 3);
    REQUIRE(a.test.size() == 4);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.train[i] == b.train[i]);
    CHECK(a.shape() == Shape{16, 16});
    CHECK(!(a.train[0] == a.train[1]));
    for (const auto& img : a.train) {
        CHECK(img.values().minCoeff() >= 0.0);
        CHECK(img.values().maxCoeff() <= 1.0);
    }
    CHECK(!(synth_dataset(6, 3, 4, 1.0).train[0] == a.train[0]));

    const auto still = synth_dataset(5, 3, 4, 0.0);
    for (const auto& img : still.train) CHECK(img == still.train[0]);
    for (const auto& img : still.test) CHECK(img == still.train[0]);

    CHECK(synth_dataset(5, 1, 1, 1.0, 8).shape() == Shape{8, 8});
    CHECK_THROWS_AS(synth_dataset(5, 0, 4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(synth_dataset(5, 3, 4, -1.0), std::invalid_argument);

    const auto corpus = synth_corpus(3, 4, 6, 1.0, 16);
    CHECK(corpus.size() == 24);
    CHECK(corpus[5].identity == 0);
    CHECK(corpus[6].identity == 1);
    CHECK(corpus[4].style == RenderStyle::dslr);
}

TEST_CASE("dataset import") {
    ScratchDir dir("import");
    const auto ds = synth_dataset(5, 2, 2, 1.0);
    write_tensor(dir / "a.tns", ds.train[0]);
    write_tensor(dir / "b.tns", ds.train[1]);
    write_tensor(dir / "c.tns", ds.test[0]);
    write_tensor(dir / "small.tns", DataTensor::zeros({8, 8}));
    auto manifest = [&](const std::string& text) {
        std::ofstream(dir / "m.txt") << text;
        return dir / "m.txt";
    };

    const auto in = import_dataset(manifest("# faces\nidentity=alice\ntrain=a.tns\ntrain=b.tns\ntest=c.tns\n"));
    CHECK(in.identity == "alice");
    CHECK(in.train.size() == 2);
    CHECK(in.train[1] == ds.train[1]);
    CHECK(in.test[0] == ds.test[0]);

    CHECK_THROWS_AS(import_dataset(dir / "none.txt"), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train=a.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train=a.tns\ntest=missing.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train=a.tns\ntest=a.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train=a.tns\ntrain=a.tns\ntest=c.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train=a.tns\ntest=small.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("train a.tns\n")), DataError);
    CHECK_THROWS_AS(import_dataset(manifest("val=a.tns\n")), DataError);
}
