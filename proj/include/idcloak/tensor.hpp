#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace idcloak {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

// Images and latents share one space at toy scale; the tag is carried along so
// an encoder/decoder pair can be slotted in later without changing signatures.
enum class Space { image, latent };

class DataTensor {
public:
    DataTensor() = default;
    DataTensor(Shape shape, Eigen::VectorXd values, Space space = Space::image);

    static DataTensor zeros(Shape shape, Space space = Space::image);
    static DataTensor filled(Shape shape, double value, Space space = Space::image);

    const Shape& shape() const { return shape_; }
    Space space() const { return space_; }
    std::size_t size() const { return static_cast<std::size_t>(values_.size()); }

    const Eigen::VectorXd& values() const { return values_; }
    Eigen::VectorXd& values() { return values_; }

    double operator[](std::size_t i) const { return values_[static_cast<Eigen::Index>(i)]; }
    double& operator[](std::size_t i) { return values_[static_cast<Eigen::Index>(i)]; }

    bool all_finite() const { return values_.allFinite(); }
    double max_abs() const;

    // Same shape, new values.
    DataTensor with_values(Eigen::VectorXd values) const;

    friend bool operator==(const DataTensor& a, const DataTensor& b);

private:
    Shape shape_;
    Eigen::VectorXd values_;
    Space space_ = Space::image;
};

void require_same_shape(const DataTensor& a, const DataTensor& b, const char* what);

// A point in the condition-embedding space.
struct ConditionEmbedding {
    Eigen::VectorXd values;

    ConditionEmbedding() = default;
    explicit ConditionEmbedding(Eigen::VectorXd v) : values(std::move(v)) {}

    int dim() const { return static_cast<int>(values.size()); }
    friend bool operator==(const ConditionEmbedding& a, const ConditionEmbedding& b) {
        return a.values.size() == b.values.size() && a.values == b.values;
    }
};

} // namespace idcloak
