#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "idcloak/dataset.hpp"
#include "idcloak/rng.hpp"
#include "idcloak/tensor.hpp"

namespace idcloak {

struct EmbedderArch {
    int input_dim = 256;
    int hidden = 128;
    int feature_dim = 16;
    friend bool operator==(const EmbedderArch&, const EmbedderArch&) = default;
};

struct Separation {
    double same = 0.0;   // mean cosine over same-identity pairs
    double cross = 0.0;  // mean cosine over cross-identity pairs
    double gap() const { return same - cross; }
};

struct EmbedderInfo {
    int steps = 0;
    int identities = 0;
    double final_loss = 0.0;
    Separation heldout;
};

// Two SiLU layers and a linear projection, followed by l2 normalisation.
class IdentityEmbedder {
public:
    IdentityEmbedder(const EmbedderArch& arch, Rng& init);
    IdentityEmbedder(const EmbedderArch& arch, Eigen::VectorXd params);

    static std::size_t parameter_count(const EmbedderArch& arch);

    const EmbedderArch& arch() const { return arch_; }
    const Eigen::VectorXd& params() const { return params_; }
    Eigen::VectorXd& params() { return params_; }

    // Unit-norm embeddings, one column per input column.
    Eigen::MatrixXd embed(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd embed(const DataTensor& x) const;
    Eigen::MatrixXd embed(const std::vector<DataTensor>& xs) const;

    struct Pass {
        Eigen::MatrixXd x, a1, h1, a2, h2, z, e;
        Eigen::VectorXd norms;
    };
    Pass forward(const Eigen::MatrixXd& x) const;
    // Parameter gradient from d loss / d e (the normalised output).
    Eigen::VectorXd backward(const Pass& pass, const Eigen::MatrixXd& grad_e) const;

    EmbedderInfo info;

private:
    EmbedderArch arch_;
    Eigen::VectorXd params_;
};

struct EmbedderTrainOptions {
    int hidden = 128;
    int feature_dim = 16;
    int steps = 3000;
    int batch = 64;
    double lr = 2e-3;
    double scale = 12.0;       // cosine-logit temperature
    int holdout_per_identity = 2;
    std::uint64_t seed = 0;
};

// Normalised-softmax classification over the corpus identities; the class
// weights are discarded after training. The last `holdout_per_identity`
// images of every identity are kept out and used for `info.heldout`.
IdentityEmbedder train_identity_embedder(const std::vector<LabeledImage>& corpus, const EmbedderTrainOptions& opt);

Separation measure_separation(const IdentityEmbedder& embedder, const std::vector<LabeledImage>& images);

} // namespace idcloak
