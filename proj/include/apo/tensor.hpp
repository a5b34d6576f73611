#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace apo {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major f64 tensor. A rank-0 tensor holds one scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor vector(std::vector<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const;
    bool all_finite() const;
    Tensor reshaped(Shape shape) const;
    void fill(double v);

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_{};
    std::vector<double> data_{0.0};
};

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor& axpy_inplace(Tensor& y, double a, const Tensor& x);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);
double squared_norm(const Tensor& a);
double squared_distance(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// c[n,m] = a[n,k] * b[k,m]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[n,m] = a[n,k] * b[m,k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// c[k,m] = a[n,k]^T * b[n,m]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Row `r` of a rank-2 tensor as a rank-1 tensor.
Tensor row(const Tensor& a, std::size_t r);
// Stack equal-shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

}  // namespace apo
