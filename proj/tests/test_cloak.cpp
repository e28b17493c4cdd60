#include <doctest.h>

#include <cmath>

#include "idcloak/baselines.hpp"
#include "idcloak/cloak.hpp"
#include "idcloak/diffusion.hpp"
#include "oracles.hpp"

using namespace idcloak;

namespace {

DenoiserArch small_arch() { return {16, 12, 2, 8, 6}; }

DenoiserModel jittered_model(std::uint64_t seed) {
    Rng init(seed);
    DenoiserModel m(small_arch(), init);
    Rng jitter(seed + 50);
    for (Eigen::Index i = 0; i < m.params().size(); ++i) m.params()[i] += 0.1 * jitter.normal();
    return m;
}

DataTensor random_image(Rng& r) { return DataTensor({4, 4}, r.normal_vector(16)); }

IdentitySubspace random_subspace(Rng& r) {
    IdentitySubspace q;
    q.mu = ConditionEmbedding(r.normal_vector(6));
    q.sigma = 0.3 * r.normal_vector(6).cwiseAbs();
    q.anchor_count = 4;
    return q;
}

CloakOptConfig small_config() {
    CloakOptConfig cfg;
    cfg.outer = 6;
    cfg.inner = 3;
    cfg.sampler_steps = 5;
    cfg.seed = 77;
    return cfg;
}

} // namespace

TEST_CASE("one-step latent cloaking equals a scaled shift of the latent") {
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        const auto s = make_schedule(1000, kind);
        Rng r(3);
        for (int t : {1, 50, 500, 999}) {
            const auto x = random_image(r);
            const auto eps = random_image(r);
            const auto delta = x.with_values(0.06 * r.normal_vector(16));
            const auto out = apply_cloak_latent(x, t, eps, delta, s);
            const Eigen::VectorXd want = x.values() + std::sqrt(s[t]) * delta.values();
            CHECK((out.values() - want).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }
}

TEST_CASE("cloak objective vanishes when the cloaked latent equals the clean one") {
    const auto model = jittered_model(1);
    Rng r(2);
    const auto x = random_image(r);
    const ConditionEmbedding c(r.normal_vector(6));
    const auto ev = cloak_objective(model, x, x, 40, c);
    CHECK(ev.value == 0.0);
    CHECK(ev.grad.values().isZero(0.0));

    const auto s = make_schedule(100, ScheduleKind::linear);
    const auto eps = model.predict(x, 40, c);
    const auto zero = apply_cloak_latent(x, 40, eps, DataTensor::zeros(x.shape()), s);
    CHECK(cloak_objective(model, x, zero, 40, c).value <= 1e-24);
}

TEST_CASE("cloak objective gradient matches finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto model = jittered_model(seed);
        Rng r(seed * 3);
        const auto x = random_image(r);
        const auto xc = x.with_values(x.values() + 0.1 * r.normal_vector(16));
        const ConditionEmbedding c(r.normal_vector(6));
        const int t = r.uniform_int(1, 100);
        const auto ev = cloak_objective(model, x, xc, t, c);
        auto f = [&](const Eigen::VectorXd& v) { return cloak_objective(model, x, x.with_values(v), t, c).value; };
        Rng pick(seed);
        CHECK(oracle::worst_fd_error(f, xc.values(), ev.grad.values(), 24, pick) < 1e-3);
    }
}

TEST_CASE("signed projected step") {
    const DataTensor d({4}, Eigen::Vector4d(0.0, 0.05, -0.05, 0.01));
    const DataTensor g({4}, Eigen::Vector4d(1.0, 2.0, -3.0, 0.0));
    const auto out = pgd_step(d, g, 0.02, 0.06);
    CHECK(out[0] == 0.02);
    CHECK(out[1] == 0.06);
    CHECK(out[2] == -0.06);
    CHECK(out[3] == 0.01);
    CHECK(sign0(0.0) == 0.0);
    CHECK(sign0(-2.0) == -1.0);
    CHECK_THROWS_AS(pgd_step(d, g, 0.0, 0.06), std::invalid_argument);
    CHECK_THROWS_AS(pgd_step(d, DataTensor::zeros({3}), 0.1, 0.06), std::invalid_argument);
}

TEST_CASE("single inner draw without pre-search reduces to the plain universal loop") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    const auto model = jittered_model(4);
    Rng r(4);
    const auto q = random_subspace(r);
    for (bool presearch : {false, true}) {
        auto cfg = small_config();
        cfg.inner = 1;
        cfg.presearch = presearch;
        cfg.outer = 8;
        CloakTrace trace;
        const auto cloak = optimize_cloak(model, q, cfg, sched, {4, 4}, &trace);

        Rng rng(cfg.seed);
        DataTensor delta = DataTensor::zeros({4, 4});
        for (int n = 0; n < cfg.outer; ++n) {
            const auto c = sample_condition(q, rng, cfg.truncation);
            const int t = rng.uniform_int(cfg.t_min, sched.T);
            const auto x_t = sample_latent(model, c, t, cfg.sampler_steps, rng, sched, {4, 4});
            const auto eps = model.predict(x_t, t, c);
            const auto cloaked = apply_cloak_latent(x_t, t, eps, delta, sched);
            auto g = cloak_objective(model, x_t, cloaked, t, c).grad;
            g.values() *= std::sqrt(sched[t]);
            delta = pgd_step(delta, g, cfg.alpha, cfg.eta);
            REQUIRE(trace.iterates[static_cast<std::size_t>(n)] == delta);
        }
        CHECK(cloak.delta == delta);
    }
}

TEST_CASE("aggregation loop records its inner draws and respects the budget") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    const auto model = jittered_model(5);
    Rng r(5);
    const auto q = random_subspace(r);
    auto cfg = small_config();
    cfg.alpha = 0.01;
    CloakTrace trace;
    trace.keep_inner = 2;
    const auto cloak = optimize_cloak(model, q, cfg, sched, {4, 4}, &trace);
    REQUIRE(trace.iterates.size() == 6);
    REQUIRE(trace.inner.size() == 2);
    for (const auto& it : trace.iterates) CHECK(it.max_abs() <= cfg.eta);
    CHECK(cloak.delta.max_abs() > 0.0);

    // accumulator is the sum of the inner contributions; pre-search advances
    // the surrogate between draws
    for (std::size_t n = 0; n < 2; ++n) {
        const auto& inner = trace.inner[n];
        REQUIRE(inner.size() == 3);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(16);
        for (const auto& s : inner) sum += s.grad.values();
        CHECK((sum - trace.aggregates[n].values()).cwiseAbs().maxCoeff() <= 1e-15);
        const DataTensor start = n == 0 ? DataTensor::zeros({4, 4}) : trace.iterates[n - 1];
        CHECK(inner[0].delta_used == start);
        CHECK(inner[1].delta_used == pgd_step(start, inner[0].grad, cfg.alpha, cfg.eta));
        const DataTensor next = pgd_step(start, trace.aggregates[n], cfg.alpha, cfg.eta);
        CHECK(trace.iterates[n] == next);
    }

    const auto again = optimize_cloak(model, q, cfg, sched, {4, 4});
    CHECK(again.delta == cloak.delta);
    CHECK(cloak.model_hash == model.hash());
    CHECK(cloak.subspace_hash == q.hash());
}

TEST_CASE("cloak configuration and shape checks") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    const auto model = jittered_model(6);
    Rng r(6);
    const auto q = random_subspace(r);
    auto bad = small_config();
    bad.t_min = 0;
    CHECK_THROWS_AS(optimize_cloak(model, q, bad, sched, {4, 4}), std::invalid_argument);
    bad = small_config();
    bad.eta = 0.0;
    CHECK_THROWS_AS(optimize_cloak(model, q, bad, sched, {4, 4}), std::invalid_argument);
    bad = small_config();
    bad.sampler_steps = 101;
    CHECK_THROWS_AS(optimize_cloak(model, q, bad, sched, {4, 4}), std::invalid_argument);
    CHECK_THROWS_AS(optimize_cloak(model, q, small_config(), sched, {5, 4}), std::invalid_argument);
    CHECK_THROWS_AS(optimize_cloak(model, IdentitySubspace::point(ConditionEmbedding(r.normal_vector(5))),
                                   small_config(), sched, {4, 4}),
                    std::invalid_argument);

    auto zero = small_config();
    zero.outer = 0;
    CHECK(optimize_cloak(model, q, zero, sched, {4, 4}).delta.values().isZero(0.0));
}

TEST_CASE("cloaked images are clamped to the pixel range") {
    const DataTensor x({3}, Eigen::Vector3d(0.0, 0.5, 0.99));
    const DataTensor d({3}, Eigen::Vector3d(-0.05, 0.05, 0.05));
    const auto out = apply_cloak_image(x, d);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.55);
    CHECK(out[2] == 1.0);
}

TEST_CASE("image cloak loss gradient matches finite differences") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto model = jittered_model(seed);
        Rng r(seed + 10);
        const auto x = random_image(r);
        const auto delta = x.with_values(0.03 * r.normal_vector(16));
        const Eigen::VectorXd eps = r.normal_vector(16);
        const ConditionEmbedding c(r.normal_vector(6));
        const int t = r.uniform_int(1, 100);
        const auto ev = image_cloak_loss(model, x, delta, t, eps, c, sched);
        auto f = [&](const Eigen::VectorXd& v) {
            return image_cloak_loss(model, x, x.with_values(v), t, eps, c, sched).loss;
        };
        Rng pick(seed);
        CHECK(oracle::worst_fd_error(f, delta.values(), ev.grad.values(), 24, pick) < 1e-3);
    }
}

TEST_CASE("gradient-average baseline with one image follows the image-specific trajectory") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    const auto model = jittered_model(7);
    Rng r(7);
    const std::vector<DataTensor> one{random_image(r)};
    const ConditionEmbedding c(r.normal_vector(6));
    ImageCloakConfig cfg;
    cfg.steps = 25;
    Rng a(3), b(3);
    std::vector<std::vector<DataTensor>> specific;
    std::vector<DataTensor> averaged;
    const auto s = craft_image_specific(model, one, c, cfg, sched, a, &specific);
    const auto u = craft_gradient_average(model, one, c, cfg, sched, b, &averaged);
    REQUIRE(specific.size() == 1);
    REQUIRE(specific[0].size() == averaged.size());
    for (std::size_t k = 0; k < averaged.size(); ++k) CHECK(specific[0][k] == averaged[k]);
    CHECK(s[0] == u);
    for (const auto& d : averaged) CHECK(d.max_abs() <= cfg.eta);
}

TEST_CASE("baselines raise the surrogate loss and stay within budget") {
    const auto sched = make_schedule(100, ScheduleKind::linear);
    const auto model = jittered_model(8);
    Rng r(8);
    const std::vector<DataTensor> images{random_image(r), random_image(r), random_image(r)};
    const ConditionEmbedding c(r.normal_vector(6));
    ImageCloakConfig cfg;
    cfg.steps = 60;
    Rng a(1);
    const auto cloaks = craft_image_specific(model, images, c, cfg, sched, a);
    REQUIRE(cloaks.size() == 3);
    Rng e(2);
    double clean = 0.0, cloaked = 0.0;
    for (int k = 0; k < 300; ++k) {
        const int t = e.uniform_int(1, 100);
        const Eigen::VectorXd eps = e.normal_vector(16);
        for (std::size_t i = 0; i < 3; ++i) {
            clean += image_cloak_loss(model, images[i], DataTensor::zeros({4, 4}), t, eps, c, sched).loss;
            cloaked += image_cloak_loss(model, images[i], cloaks[i], t, eps, c, sched).loss;
        }
    }
    CHECK(cloaked > clean);
    for (const auto& d : cloaks) CHECK(d.max_abs() <= cfg.eta);

    Rng t(4);
    const auto moved = transfer_cloaks(cloaks, 7, t);
    CHECK(moved.size() == 7);
    for (const auto& m : moved) CHECK((m == cloaks[0] || m == cloaks[1] || m == cloaks[2]));
    CHECK_THROWS_AS(transfer_cloaks({}, 2, t), std::invalid_argument);
    CHECK_THROWS_AS(craft_gradient_average(model, {}, c, cfg, sched, t), std::invalid_argument);
}
