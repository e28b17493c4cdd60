#include "idcloak/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace idcloak {

std::size_t shape_volume(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

DataTensor::DataTensor(Shape shape, Eigen::VectorXd values, Space space)
    : shape_(std::move(shape)), values_(std::move(values)), space_(space) {
    if (shape_volume(shape_) != static_cast<std::size_t>(values_.size())) {
        throw std::invalid_argument("tensor value count " + std::to_string(values_.size()) +
                                    " does not match shape " + shape_string(shape_));
    }
}

DataTensor DataTensor::zeros(Shape shape, Space space) {
    return filled(std::move(shape), 0.0, space);
}

DataTensor DataTensor::filled(Shape shape, double value, Space space) {
    const auto n = static_cast<Eigen::Index>(shape_volume(shape));
    return DataTensor(std::move(shape), Eigen::VectorXd::Constant(n, value), space);
}

double DataTensor::max_abs() const {
    return values_.size() == 0 ? 0.0 : values_.cwiseAbs().maxCoeff();
}

DataTensor DataTensor::with_values(Eigen::VectorXd values) const {
    return DataTensor(shape_, std::move(values), space_);
}

bool operator==(const DataTensor& a, const DataTensor& b) {
    return a.shape_ == b.shape_ && a.values_.size() == b.values_.size() && a.values_ == b.values_;
}

void require_same_shape(const DataTensor& a, const DataTensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
    }
}

} // namespace idcloak
