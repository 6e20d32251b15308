#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vflow {

// Error taxonomy. Messages carry the offending values (shapes, names,
// field constraints) so callers can report without re-deriving context.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error("domain error: " + msg) {}
};
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense row-major N-dimensional array. Shape is fixed at construction;
// the element type is a template parameter so oracle tests can run the
// same code in double precision (production code uses float).
template <typename S>
class TensorT {
  public:
    using value_type = S;

    TensorT() = default;

    explicit TensorT(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<size_t>(shape_numel(shape_)), S(0));
    }

    TensorT(std::vector<int> shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
        }
    }

    static TensorT full(std::vector<int> shape, S v) {
        TensorT t(std::move(shape));
        for (S& x : t.data_) x = v;
        return t;
    }

    static TensorT scalar(S v) { return TensorT({1}, {v}); }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    const std::vector<S>& data() const { return data_; }
    std::vector<S>& data() { return data_; }
    const S* ptr() const { return data_.data(); }
    S* ptr() { return data_.data(); }

    S operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

    // Value of a scalar (shape [1]) tensor.
    S item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S x : data_) {
            if (!std::isfinite(static_cast<double>(x))) return false;
        }
        return true;
    }

    template <typename T>
    TensorT<T> cast() const {
        std::vector<T> d(data_.size());
        for (size_t i = 0; i < data_.size(); ++i) d[i] = static_cast<T>(data_[i]);
        return TensorT<T>(shape_, std::move(d));
    }

  private:
    void validate_shape() const {
        for (int d : shape_) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape_));
        }
    }

    std::vector<int> shape_;
    std::vector<S> data_;
};

using Tensor = TensorT<float>;
using TensorF64 = TensorT<double>;

}  // namespace vflow
