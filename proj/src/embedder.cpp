#include "idcloak/embedder.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "idcloak/errors.hpp"
#include "idcloak/optim.hpp"

namespace idcloak {

namespace {

Eigen::MatrixXd silu(const Eigen::MatrixXd& a) {
    return a.unaryExpr([](double v) { return v / (1.0 + std::exp(-v)); });
}

Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& a) {
    return a.unaryExpr([](double v) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
    });
}

struct Views {
    Eigen::Map<const Eigen::MatrixXd> W1, b1, W2, b2, W3, b3;
};

Views views(const EmbedderArch& a, const double* p) {
    const int D = a.input_dim, H = a.hidden, F = a.feature_dim;
    const double* W1 = p;
    const double* b1 = W1 + H * D;
    const double* W2 = b1 + H;
    const double* b2 = W2 + H * H;
    const double* W3 = b2 + H;
    const double* b3 = W3 + F * H;
    return {{W1, H, D}, {b1, H, 1}, {W2, H, H}, {b2, H, 1}, {W3, F, H}, {b3, F, 1}};
}

// d/dz of z/||z|| applied to g, column-wise.
Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& e, const Eigen::VectorXd& norms, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd out(g.rows(), g.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
        out.col(j) = (g.col(j) - e.col(j) * e.col(j).dot(g.col(j))) / norms[j];
    }
    return out;
}

} // namespace

std::size_t IdentityEmbedder::parameter_count(const EmbedderArch& a) {
    const std::size_t D = a.input_dim, H = a.hidden, F = a.feature_dim;
    return H * D + H + H * H + H + F * H + F;
}

IdentityEmbedder::IdentityEmbedder(const EmbedderArch& arch, Rng& init) : arch_(arch) {
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(parameter_count(arch)));
    const int D = arch.input_dim, H = arch.hidden, F = arch.feature_dim;
    Eigen::Index off = 0;
    auto fill = [&](int rows, int cols) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (int i = 0; i < rows * cols; ++i) params_[off + i] = scale * init.normal();
        off += rows * cols + rows;  // skip the bias that follows
    };
    fill(H, D);
    fill(H, H);
    fill(F, H);
}

IdentityEmbedder::IdentityEmbedder(const EmbedderArch& arch, Eigen::VectorXd params)
    : arch_(arch), params_(std::move(params)) {
    if (static_cast<std::size_t>(params_.size()) != parameter_count(arch)) {
        throw std::invalid_argument("embedder parameter count does not match architecture");
    }
}

IdentityEmbedder::Pass IdentityEmbedder::forward(const Eigen::MatrixXd& x) const {
    if (x.rows() != arch_.input_dim) throw std::invalid_argument("embedder input dim mismatch");
    const Views v = views(arch_, params_.data());
    Pass p;
    p.x = x;
    p.a1 = (v.W1 * x).colwise() + v.b1.col(0);
    p.h1 = silu(p.a1);
    p.a2 = (v.W2 * p.h1).colwise() + v.b2.col(0);
    p.h2 = silu(p.a2);
    p.z = (v.W3 * p.h2).colwise() + v.b3.col(0);
    p.norms = p.z.colwise().norm().transpose().cwiseMax(1e-12);
    p.e = p.z;
    for (Eigen::Index j = 0; j < p.e.cols(); ++j) p.e.col(j) /= p.norms[j];
    return p;
}

Eigen::VectorXd IdentityEmbedder::backward(const Pass& p, const Eigen::MatrixXd& grad_e) const {
    const Views v = views(arch_, params_.data());
    const int D = arch_.input_dim, H = arch_.hidden, F = arch_.feature_dim;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(params_.size());
    double* base = g.data();
    Eigen::Map<Eigen::MatrixXd> dW1(base, H, D), db1(base + H * D, H, 1);
    double* p2 = base + H * D + H;
    Eigen::Map<Eigen::MatrixXd> dW2(p2, H, H), db2(p2 + H * H, H, 1);
    double* p3 = p2 + H * H + H;
    Eigen::Map<Eigen::MatrixXd> dW3(p3, F, H), db3(p3 + F * H, F, 1);

    const Eigen::MatrixXd dz = normalize_backward(p.e, p.norms, grad_e);
    dW3.noalias() = dz * p.h2.transpose();
    db3 = dz.rowwise().sum();
    const Eigen::MatrixXd da2 = (v.W3.transpose() * dz).cwiseProduct(silu_grad(p.a2));
    dW2.noalias() = da2 * p.h1.transpose();
    db2 = da2.rowwise().sum();
    const Eigen::MatrixXd da1 = (v.W2.transpose() * da2).cwiseProduct(silu_grad(p.a1));
    dW1.noalias() = da1 * p.x.transpose();
    db1 = da1.rowwise().sum();
    return g;
}

Eigen::MatrixXd IdentityEmbedder::embed(const Eigen::MatrixXd& x) const {
    return forward(x).e;
}

Eigen::VectorXd IdentityEmbedder::embed(const DataTensor& x) const {
    return embed(Eigen::MatrixXd(x.values())).col(0);
}

Eigen::MatrixXd IdentityEmbedder::embed(const std::vector<DataTensor>& xs) const {
    if (xs.empty()) return Eigen::MatrixXd(arch_.feature_dim, 0);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(xs[0].size()), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t j = 0; j < xs.size(); ++j) x.col(static_cast<Eigen::Index>(j)) = xs[j].values();
    return embed(x);
}

Separation measure_separation(const IdentityEmbedder& embedder, const std::vector<LabeledImage>& images) {
    std::vector<DataTensor> xs;
    for (const auto& li : images) xs.push_back(li.image);
    const Eigen::MatrixXd e = embedder.embed(xs);
    const Eigen::MatrixXd gram = e.transpose() * e;
    double same = 0, cross = 0;
    long n_same = 0, n_cross = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t j = i + 1; j < images.size(); ++j) {
            const double c = gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (images[i].identity == images[j].identity) {
                same += c;
                ++n_same;
            } else {
                cross += c;
                ++n_cross;
            }
        }
    }
    return {n_same ? same / n_same : 0.0, n_cross ? cross / n_cross : 0.0};
}

IdentityEmbedder train_identity_embedder(const std::vector<LabeledImage>& corpus, const EmbedderTrainOptions& opt) {
    if (corpus.empty()) throw std::invalid_argument("train_identity_embedder: empty corpus");
    std::map<int, std::vector<std::size_t>> by_id;
    for (std::size_t i = 0; i < corpus.size(); ++i) by_id[corpus[i].identity].push_back(i);
    if (by_id.size() < 2) throw std::invalid_argument("train_identity_embedder: need at least two identities");

    std::vector<std::size_t> train_idx;
    std::vector<LabeledImage> heldout;
    std::map<int, int> label;
    for (auto& [id, idx] : by_id) {
        label.emplace(id, static_cast<int>(label.size()));
        const std::size_t keep = idx.size() > static_cast<std::size_t>(opt.holdout_per_identity)
                                     ? idx.size() - static_cast<std::size_t>(opt.holdout_per_identity)
                                     : idx.size();
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (k < keep) train_idx.push_back(idx[k]);
            else heldout.push_back(corpus[idx[k]]);
        }
    }

    Rng rng(opt.seed);
    const EmbedderArch arch{static_cast<int>(corpus[0].image.size()), opt.hidden, opt.feature_dim};
    IdentityEmbedder emb(arch, rng);
    const int K = static_cast<int>(label.size());
    Eigen::MatrixXd classes(opt.feature_dim, K);
    for (Eigen::Index i = 0; i < classes.size(); ++i) classes.data()[i] = rng.normal();

    Adam adam(emb.params().size(), opt.lr);
    Adam adam_cls(classes.size(), opt.lr);
    const int last = static_cast<int>(train_idx.size()) - 1;
    double loss = 0.0;
    for (int step = 0; step < opt.steps; ++step) {
        Eigen::MatrixXd x(arch.input_dim, opt.batch);
        std::vector<int> y(static_cast<std::size_t>(opt.batch));
        for (int j = 0; j < opt.batch; ++j) {
            const auto& li = corpus[train_idx[static_cast<std::size_t>(rng.uniform_int(0, last))]];
            x.col(j) = li.image.values();
            y[static_cast<std::size_t>(j)] = label.at(li.identity);
        }
        const auto pass = emb.forward(x);
        const Eigen::VectorXd cnorm = classes.colwise().norm().transpose();
        Eigen::MatrixXd w = classes;
        for (int k = 0; k < K; ++k) w.col(k) /= cnorm[k];
        const Eigen::MatrixXd logits = opt.scale * (w.transpose() * pass.e);  // K x B
        Eigen::MatrixXd dlogits(K, opt.batch);
        loss = 0.0;
        for (int j = 0; j < opt.batch; ++j) {
            const double mx = logits.col(j).maxCoeff();
            const Eigen::VectorXd ex = (logits.col(j).array() - mx).exp();
            const double z = ex.sum();
            dlogits.col(j) = ex / z;
            loss += -(logits(y[static_cast<std::size_t>(j)], j) - mx - std::log(z));
            dlogits(y[static_cast<std::size_t>(j)], j) -= 1.0;
        }
        loss /= opt.batch;
        if (!std::isfinite(loss)) throw NumericError("train_identity_embedder: non-finite loss");
        dlogits /= opt.batch;
        const Eigen::MatrixXd grad_e = opt.scale * (w * dlogits);
        const Eigen::MatrixXd grad_w = opt.scale * (pass.e * dlogits.transpose());
        adam.step(emb.params(), emb.backward(pass, grad_e));
        Eigen::MatrixXd grad_cls = normalize_backward(w, cnorm, grad_w);
        adam_cls.step(classes.reshaped(), grad_cls.reshaped());
    }
    emb.info.steps = opt.steps;
    emb.info.identities = K;
    emb.info.final_loss = loss;
    if (!heldout.empty()) emb.info.heldout = measure_separation(emb, heldout);
    return emb;
}

} // namespace idcloak
