#include "idcloak/denoiser.hpp"

#include <cmath>
#include <stdexcept>

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

std::string layer_name(const char* kind, int l) {
    return std::string(kind) + std::to_string(l);
}

} // namespace

DataTensor NoisePredictor::predict(const DataTensor& x_t, int t, const ConditionEmbedding& c) const {
    const Batch out = predict(Batch(x_t.values()), Timesteps{t}, Batch(c.values));
    return x_t.with_values(out.col(0));
}

Eigen::MatrixXd timestep_features(const Timesteps& t, int time_dim) {
    const int half = time_dim / 2;
    Eigen::MatrixXd f(time_dim, static_cast<Eigen::Index>(t.size()));
    for (std::size_t j = 0; j < t.size(); ++j) {
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            f(k, j) = std::sin(t[j] * freq);
            f(k + half, j) = std::cos(t[j] * freq);
        }
    }
    return f;
}

std::vector<ParamSlice> DenoiserModel::layout(const DenoiserArch& a) {
    if (a.data_dim <= 0 || a.hidden <= 0 || a.depth <= 0 || a.cond_dim <= 0 || a.time_dim <= 0 ||
        a.time_dim % 2 != 0) {
        throw std::invalid_argument("invalid denoiser architecture");
    }
    std::vector<ParamSlice> s;
    std::size_t off = 0;
    auto add = [&](std::string name, int rows, int cols) {
        s.push_back({std::move(name), off, rows, cols});
        off += s.back().length();
    };
    for (int l = 1; l <= a.depth; ++l) {
        add(layer_name("W", l), a.hidden, l == 1 ? a.data_dim : a.hidden);
        add(layer_name("U", l), a.hidden, a.time_dim);
        add(layer_name("V", l), a.hidden, a.cond_dim);
        add(layer_name("b", l), a.hidden, 1);
    }
    add("W_out", a.data_dim, a.hidden);
    add("b_out", a.data_dim, 1);
    add("G_skip", 1, a.time_dim);
    add("g_skip", 1, 1);
    return s;
}

DenoiserModel::DenoiserModel(const DenoiserArch& arch, Rng& init) : arch_(arch), slices_(layout(arch)) {
    const auto& last = slices_.back();
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(last.offset + last.length()));
    for (const auto& s : slices_) {
        if (s.cols == 1 || s.name == "G_skip") continue;  // biases and the skip gate start at zero
        const double scale = 1.0 / std::sqrt(static_cast<double>(s.cols));
        auto m = matrix(s);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = scale * init.normal();
    }
}

DenoiserModel::DenoiserModel(const DenoiserArch& arch, Eigen::VectorXd params)
    : arch_(arch), slices_(layout(arch)), params_(std::move(params)) {
    const auto& last = slices_.back();
    if (static_cast<std::size_t>(params_.size()) != last.offset + last.length()) {
        throw std::invalid_argument("parameter vector length " + std::to_string(params_.size()) +
                                    " does not match architecture (" +
                                    std::to_string(last.offset + last.length()) + ")");
    }
}

const ParamSlice& DenoiserModel::slice(const std::string& name) const {
    for (const auto& s : slices_)
        if (s.name == name) return s;
    throw std::invalid_argument("no parameter slice named '" + name + "'");
}

Eigen::Map<const Eigen::MatrixXd> DenoiserModel::matrix(const ParamSlice& s) const {
    return {params_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Eigen::MatrixXd> DenoiserModel::matrix(const ParamSlice& s) {
    return {params_.data() + s.offset, s.rows, s.cols};
}

void DenoiserModel::check_inputs(const Batch& x, const Timesteps& t, const Batch& c) const {
    if (x.rows() != arch_.data_dim) {
        throw std::invalid_argument("denoiser input has " + std::to_string(x.rows()) + " rows, expected " +
                                    std::to_string(arch_.data_dim));
    }
    if (c.rows() != arch_.cond_dim) {
        throw std::invalid_argument("condition dim " + std::to_string(c.rows()) + " does not match model (" +
                                    std::to_string(arch_.cond_dim) + ")");
    }
    if (c.cols() != x.cols() || static_cast<Eigen::Index>(t.size()) != x.cols()) {
        throw std::invalid_argument("denoiser batch sizes disagree");
    }
}

Batch DenoiserModel::predict(const Batch& x, const Timesteps& t, const Batch& c) const {
    Tape tape;
    return forward(x, t, c, tape);
}

// Tape layout: [x, temb, c, a_1, h_1, ..., a_L, h_L, gate]
Batch DenoiserModel::forward(const Batch& x, const Timesteps& t, const Batch& c, Tape& tape) const {
    check_inputs(x, t, c);
    auto& buf = tape.buffers;
    buf.clear();
    buf.reserve(3 + 2 * static_cast<std::size_t>(arch_.depth));
    buf.push_back(x);
    buf.push_back(timestep_features(t, arch_.time_dim));
    buf.push_back(c);

    std::size_t k = 0;
    for (int l = 1; l <= arch_.depth; ++l) {
        const auto W = matrix(slices_[k++]);
        const auto U = matrix(slices_[k++]);
        const auto V = matrix(slices_[k++]);
        const auto b = matrix(slices_[k++]);
        const Eigen::MatrixXd& prev = buf[l == 1 ? 0 : buf.size() - 1];
        Eigen::MatrixXd a = W * prev + U * buf[1] + V * buf[2];
        a.colwise() += b.col(0);
        Eigen::MatrixXd h = silu(a);
        buf.push_back(std::move(a));
        buf.push_back(std::move(h));
    }
    const auto Wo = matrix(slices_[k++]);
    const auto bo = matrix(slices_[k++]);
    const auto G = matrix(slices_[k++]);
    const double g0 = matrix(slices_[k++])(0, 0);
    Batch out = Wo * buf.back();
    out.colwise() += bo.col(0);
    Eigen::MatrixXd gate = ((G * buf[1]).array() + g0).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    out += x * gate.row(0).asDiagonal();
    buf.push_back(std::move(gate));
    return out;
}

Gradients DenoiserModel::backward(const Tape& tape, const Batch& grad_out, GradRequest want) const {
    const auto& buf = tape.buffers;
    const int L = arch_.depth;
    Gradients g;
    if (want.params) g.params = Eigen::VectorXd::Zero(params_.size());
    if (want.condition) g.condition = Eigen::MatrixXd::Zero(arch_.cond_dim, grad_out.cols());

    auto grad_slice = [&](const ParamSlice& s) {
        return Eigen::Map<Eigen::MatrixXd>(g.params.data() + s.offset, s.rows, s.cols);
    };

    const std::size_t head = 4 * static_cast<std::size_t>(L);
    const ParamSlice& so = slices_[head];
    const ParamSlice& sbo = slices_[head + 1];
    const Eigen::MatrixXd& gate = buf.back();
    const Eigen::MatrixXd& h_last = buf[buf.size() - 2];
    if (want.params) {
        grad_slice(so).noalias() = grad_out * h_last.transpose();
        grad_slice(sbo) = grad_out.rowwise().sum();
        const Eigen::RowVectorXd dgate = grad_out.cwiseProduct(buf[0]).colwise().sum();
        const Eigen::RowVectorXd dz = dgate.array() * gate.row(0).array() * (1.0 - gate.row(0).array());
        grad_slice(slices_[head + 2]).noalias() = dz * buf[1].transpose();
        grad_slice(slices_[head + 3])(0, 0) = dz.sum();
    }
    Eigen::MatrixXd dh = matrix(so).transpose() * grad_out;

    for (int l = L; l >= 1; --l) {
        const std::size_t base = 4 * static_cast<std::size_t>(l - 1);
        const Eigen::MatrixXd& a = buf[3 + 2 * static_cast<std::size_t>(l - 1)];
        const Eigen::MatrixXd& prev = l == 1 ? buf[0] : buf[3 + 2 * static_cast<std::size_t>(l - 2) + 1];
        const Eigen::MatrixXd da = dh.cwiseProduct(silu_grad(a));
        if (want.params) {
            grad_slice(slices_[base]).noalias() = da * prev.transpose();
            grad_slice(slices_[base + 1]).noalias() = da * buf[1].transpose();
            grad_slice(slices_[base + 2]).noalias() = da * buf[2].transpose();
            grad_slice(slices_[base + 3]) = da.rowwise().sum();
        }
        if (want.condition) g.condition.noalias() += matrix(slices_[base + 2]).transpose() * da;
        if (l > 1 || want.input) dh = matrix(slices_[base]).transpose() * da;
    }
    if (want.input) g.input = dh + grad_out * gate.row(0).asDiagonal();
    return g;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t hash_vector(const Eigen::VectorXd& v, std::uint64_t h) {
    return fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
}

std::uint64_t DenoiserModel::hash() const {
    const int dims[] = {arch_.data_dim, arch_.hidden, arch_.depth, arch_.time_dim, arch_.cond_dim};
    return hash_vector(params_, fnv1a(dims, sizeof(dims)));
}

} // namespace idcloak
