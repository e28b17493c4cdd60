#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "idcloak/rng.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

// Batched tensors are column-major: one sample per column.
using Batch = Eigen::MatrixXd;
using Timesteps = std::vector<int>;

struct GradRequest {
    bool params = false;
    bool input = false;
    bool condition = false;
};

struct Gradients {
    Eigen::VectorXd params;   // empty unless requested
    Batch input;              // d loss / d x_t
    Batch condition;          // d loss / d c
};

// Scratch space filled by a forward pass and consumed by backward. Each
// predictor decides what it stores.
struct Tape {
    std::vector<Eigen::MatrixXd> buffers;
};

// Anything that maps (x_t, t, c) to a noise estimate of the same shape as x_t.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual int data_dim() const = 0;
    virtual int cond_dim() const = 0;
    virtual Batch predict(const Batch& x, const Timesteps& t, const Batch& c) const = 0;

    DataTensor predict(const DataTensor& x_t, int t, const ConditionEmbedding& c) const;
};

// A predictor that can also back-propagate an upstream gradient.
class DifferentiablePredictor : public NoisePredictor {
public:
    using NoisePredictor::predict;
    virtual std::size_t parameter_count() const = 0;
    virtual Batch forward(const Batch& x, const Timesteps& t, const Batch& c, Tape& tape) const = 0;
    virtual Gradients backward(const Tape& tape, const Batch& grad_out, GradRequest want) const = 0;
};

struct DenoiserArch {
    int data_dim = 256;
    int hidden = 256;
    int depth = 2;       // hidden layers
    int time_dim = 32;   // sinusoidal features, even
    int cond_dim = 32;

    friend bool operator==(const DenoiserArch&, const DenoiserArch&) = default;
};

struct ParamSlice {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
    std::size_t length() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

Eigen::MatrixXd timestep_features(const Timesteps& t, int time_dim);

// Fully connected noise predictor. Each hidden layer receives the previous
// activation plus additive projections of the timestep features and the
// condition embedding:
//   a_l = W_l h_{l-1} + U_l temb(t) + V_l c + b_l,  h_l = silu(a_l)
//   eps = W_out h_L + b_out + sigmoid(G temb(t) + g) x_t
class DenoiserModel final : public DifferentiablePredictor {
public:
    DenoiserModel(const DenoiserArch& arch, Rng& init);
    DenoiserModel(const DenoiserArch& arch, Eigen::VectorXd params);

    static std::vector<ParamSlice> layout(const DenoiserArch& arch);

    const DenoiserArch& arch() const { return arch_; }
    const std::vector<ParamSlice>& slices() const { return slices_; }
    const ParamSlice& slice(const std::string& name) const;

    const Eigen::VectorXd& params() const { return params_; }
    Eigen::VectorXd& params() { return params_; }

    Eigen::Map<const Eigen::MatrixXd> matrix(const ParamSlice& s) const;
    Eigen::Map<Eigen::MatrixXd> matrix(const ParamSlice& s);

    int data_dim() const override { return arch_.data_dim; }
    int cond_dim() const override { return arch_.cond_dim; }
    std::size_t parameter_count() const override { return static_cast<std::size_t>(params_.size()); }

    using DifferentiablePredictor::predict;
    Batch predict(const Batch& x, const Timesteps& t, const Batch& c) const override;
    Batch forward(const Batch& x, const Timesteps& t, const Batch& c, Tape& tape) const override;
    Gradients backward(const Tape& tape, const Batch& grad_out, GradRequest want) const override;

    // FNV-1a over the architecture and the raw parameter bytes.
    std::uint64_t hash() const;

private:
    void check_inputs(const Batch& x, const Timesteps& t, const Batch& c) const;

    DenoiserArch arch_;
    std::vector<ParamSlice> slices_;
    Eigen::VectorXd params_;
};

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t hash_vector(const Eigen::VectorXd& v, std::uint64_t h = 0xcbf29ce484222325ULL);

} // namespace idcloak
