#include <doctest.h>

#include <cmath>
#include <numbers>

#include "idcloak/diffusion.hpp"
#include "idcloak/errors.hpp"
#include "idcloak/schedule.hpp"

using namespace idcloak;

namespace {

DataTensor random_image(Rng& r, std::size_t side = 4) {
    return DataTensor({side, side}, r.normal_vector(static_cast<Eigen::Index>(side * side)));
}

// Predicts the same noise vector regardless of input.
class ConstantPredictor final : public NoisePredictor {
public:
    explicit ConstantPredictor(Eigen::VectorXd e) : e_(std::move(e)) {}
    int data_dim() const override { return static_cast<int>(e_.size()); }
    int cond_dim() const override { return 2; }
    using NoisePredictor::predict;
    Batch predict(const Batch& x, const Timesteps&, const Batch&) const override {
        return e_.replicate(1, x.cols());
    }

private:
    Eigen::VectorXd e_;
};

} // namespace

TEST_CASE("schedules start at one and decrease strictly") {
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        for (int T : {1, 2, 50, 1000}) {
            const auto s = make_schedule(T, kind);
            REQUIRE(s.alpha_bar.size() == static_cast<std::size_t>(T) + 1);
            CHECK(s[0] == 1.0);
            CHECK(s[T] > 0.0);
            for (int t = 0; t < T; ++t) CHECK(s[t + 1] < s[t]);
        }
    }
}

TEST_CASE("single-step linear schedule keeps one beta") {
    const auto s = make_schedule(1, ScheduleKind::linear);
    CHECK(s[1] == doctest::Approx(1.0 - 0.85).epsilon(1e-15));
}

TEST_CASE("linear schedule matches an explicit product of evenly spaced betas") {
    const int T = 1000;
    const auto s = make_schedule(T, ScheduleKind::linear);
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double beta = 0.00085 + (0.012 - 0.00085) * (t - 1) / (T - 1.0);
        prod *= 1.0 - beta;
        CHECK(s[t] == doctest::Approx(prod).epsilon(1e-12));
    }
}

TEST_CASE("cosine schedule matches a scalar recomputation at the midpoint") {
    const int T = 50;
    const auto s = make_schedule(T, ScheduleKind::cosine);
    auto f = [&](double t) {
        const double c = std::cos((t / T + 0.008) / 1.008 * std::numbers::pi / 2.0);
        return c * c;
    };
    CHECK(s[25] == doctest::Approx(f(25) / f(0)).epsilon(1e-12));
}

TEST_CASE("schedule kind names round trip and bad input is rejected") {
    CHECK(parse_schedule_kind("linear") == ScheduleKind::linear);
    CHECK(parse_schedule_kind(to_string(ScheduleKind::cosine)) == ScheduleKind::cosine);
    CHECK_THROWS_AS(parse_schedule_kind("quadratic"), std::invalid_argument);
    CHECK_THROWS_AS(make_schedule(0, ScheduleKind::linear), std::invalid_argument);
    const auto s = make_schedule(10, ScheduleKind::linear);
    CHECK_THROWS_AS(s.check_timestep(11), std::invalid_argument);
    CHECK_THROWS_AS(s.check_timestep(0, 1), std::invalid_argument);
    CHECK_NOTHROW(s.check_timestep(10));
}

TEST_CASE("forward diffusion trivial cases") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng r(3);
    const auto x0 = random_image(r);
    const auto eps = random_image(r);
    CHECK(forward_diffuse(x0, 0, eps, s) == x0);
    const auto zero = DataTensor::zeros(x0.shape());
    const auto scaled = forward_diffuse(x0, 40, zero, s);
    CHECK((scaled.values() - std::sqrt(s[40]) * x0.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("clean-image prediction inverts forward diffusion") {
    for (auto kind : {ScheduleKind::linear, ScheduleKind::cosine}) {
        const auto s = make_schedule(1000, kind);
        Rng r(7);
        for (int t : {1, 10, 250, 500, 900}) {
            const auto x0 = random_image(r);
            const auto eps = random_image(r);
            const auto back = predict_x0(forward_diffuse(x0, t, eps, s), t, eps, s);
            CHECK((back.values() - x0.values()).cwiseAbs().maxCoeff() <= 1e-10);
        }
    }
}

TEST_CASE("clean-image prediction with zero noise divides by the signal coefficient") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng r(8);
    const auto x = random_image(r);
    const auto out = predict_x0(x, 30, DataTensor::zeros(x.shape()), s);
    CHECK((out.values() - x.values() / std::sqrt(s[30])).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("forward diffusion marginals match Monte Carlo moments") {
    const auto s = make_schedule(1000, ScheduleKind::linear);
    const int t = 500;
    const int n = 100000;
    const auto x0 = DataTensor::filled({1}, 1.0);
    Rng r(11);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = forward_diffuse(x0, t, DataTensor::filled({1}, r.normal()), s)[0];
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    const double want_var = 1.0 - s[t];
    CHECK(std::abs(mean - std::sqrt(s[t])) < 3.0 * std::sqrt(want_var / n));
    // the variance of a sample variance of a Gaussian is 2 sigma^4 / (n - 1)
    CHECK(std::abs(var - want_var) < 3.0 * std::sqrt(2.0 * want_var * want_var / (n - 1)));
}

TEST_CASE("DDIM step formulas") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng r(5);
    const auto x = random_image(r);
    const auto eps = random_image(r);
    const auto extra = random_image(r);

    const auto last = ddim_step(x, 20, 0, eps, 0.0, extra, s);
    CHECK(last == predict_x0(x, 20, eps, s));

    const double sigma = 0.1;
    const auto step = ddim_step(x, 40, 30, eps, sigma, extra, s);
    const auto x0 = predict_x0(x, 40, eps, s);
    const Eigen::VectorXd want = std::sqrt(s[30]) * x0.values() +
                                 std::sqrt(1.0 - s[30] - sigma * sigma) * eps.values() + sigma * extra.values();
    CHECK((step.values() - want).cwiseAbs().maxCoeff() <= 1e-13);

    CHECK_THROWS_AS(ddim_step(x, 40, 40, eps, 0.0, extra, s), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(x, 40, 30, eps, -0.1, extra, s), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(x, 40, 30, eps, 1.0, extra, s), std::invalid_argument);
}

TEST_CASE("reverse chain grid") {
    CHECK(reverse_chain(1000, 0, 50).front() == 1000);
    CHECK(reverse_chain(1000, 0, 50).size() == 51);
    CHECK(reverse_chain(1000, 0, 50)[1] == 980);
    CHECK(reverse_chain(1000, 0, 1000).size() == 1001);
    CHECK(reverse_chain(10, 10, 5) == std::vector<int>{10});
    CHECK(reverse_chain(10, 7, 5) == std::vector<int>{10, 8, 7});
    CHECK(reverse_chain(10, 0, 3) == std::vector<int>{10, 7, 3, 0});
    for (int stop : {0, 1, 13, 500}) {
        const auto chain = reverse_chain(1000, stop, 50);
        CHECK(chain.back() == stop);
        for (std::size_t k = 0; k + 1 < chain.size(); ++k) CHECK(chain[k + 1] < chain[k]);
    }
    CHECK_THROWS_AS(reverse_chain(10, 11, 5), std::invalid_argument);
    CHECK_THROWS_AS(reverse_chain(10, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(reverse_chain(10, 0, 11), std::invalid_argument);
}

TEST_CASE("deterministic sampler follows the closed form for a constant noise predictor") {
    // With a constant prediction e, every DDIM step preserves
    // x_t = sqrt(ab_t) z + sqrt(1 - ab_t) e, where z is the first clean estimate.
    const auto s = make_schedule(1000, ScheduleKind::linear);
    Rng er(2);
    const Eigen::VectorXd e = er.normal_vector(16);
    const ConstantPredictor model(e);
    const ConditionEmbedding c(Eigen::VectorXd::Zero(2));
    for (int stop : {0, 1, 250, 999}) {
        Rng a(17), b(17);
        const auto out = sample_latent(model, c, stop, 50, a, s, {4, 4});
        const Eigen::VectorXd xT = b.normal_vector(16);
        const Eigen::VectorXd z = (xT - std::sqrt(1.0 - s[1000]) * e) / std::sqrt(s[1000]);
        const Eigen::VectorXd want = std::sqrt(s[stop]) * z + std::sqrt(1.0 - s[stop]) * e;
        CHECK((out.values() - want).cwiseAbs().maxCoeff() <= 1e-9 * want.cwiseAbs().maxCoeff());
        CHECK(out.space() == Space::latent);
    }
}

TEST_CASE("sampling at t_stop = T returns the initial noise") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng er(4);
    const ConstantPredictor model(er.normal_vector(9));
    Rng a(1), b(1);
    const auto out = sample_latent(model, ConditionEmbedding(Eigen::VectorXd::Zero(2)), 100, 10, a, s, {3, 3});
    CHECK(out.values() == b.normal_vector(9));
}

TEST_CASE("denoise loss agrees with its recorded draw and training reduces it") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng init(1);
    DenoiserModel model(DenoiserArch{16, 32, 2, 8, 4}, init);
    Rng r(2);
    const auto x0 = random_image(r);
    const ConditionEmbedding c(r.normal_vector(4));
    DenoiseDraw draw;
    Rng lr(9);
    const auto eval = denoise_loss(model, x0, c, lr, s, &draw);
    CHECK(draw.t >= 1);
    CHECK(draw.t <= 100);
    const auto xt = forward_diffuse(x0, draw.t, x0.with_values(draw.eps), s);
    const double want = (model.predict(xt, draw.t, c).values() - draw.eps).squaredNorm();
    CHECK(eval.loss == doctest::Approx(want).epsilon(1e-12));
    CHECK(eval.grads.params.size() == static_cast<Eigen::Index>(model.parameter_count()));

    std::vector<TrainingExample> data;
    for (int i = 0; i < 4; ++i) data.push_back({random_image(r), c});
    Rng tr(3);
    const auto res = train_denoiser(data, model, TrainOptions{600, 3e-3, 4}, tr, s);
    REQUIRE(res.losses.size() == 600);
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 100; ++i) {
        head += res.losses[static_cast<std::size_t>(i)];
        tail += res.losses[res.losses.size() - 1 - static_cast<std::size_t>(i)];
    }
    CHECK(tail < head);

    CHECK_THROWS_AS(train_denoiser({}, model, TrainOptions{1, 1e-3, 1}, tr, s), std::invalid_argument);
    CHECK_THROWS_AS(denoise_loss(model, x0, ConditionEmbedding(Eigen::VectorXd::Zero(3)), lr, s),
                    std::invalid_argument);
}

TEST_CASE("training with a huge learning rate reports a numeric failure") {
    const auto s = make_schedule(100, ScheduleKind::linear);
    Rng init(1);
    DenoiserModel model(DenoiserArch{16, 16, 1, 8, 4}, init);
    model.params().setConstant(1e200);
    Rng r(2);
    std::vector<TrainingExample> data{{random_image(r), ConditionEmbedding(r.normal_vector(4))}};
    Rng tr(3);
    CHECK_THROWS_AS(train_denoiser(data, model, TrainOptions{5, 1.0, 1}, tr, s), NumericError);
}
