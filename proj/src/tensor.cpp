#include "ga/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "ga/errors.hpp"

namespace ga::num {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
        throw ShapeError("Tensor2: data length " + std::to_string(data_.size()) + " does not match " +
                         shape_string());
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Tensor2: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Tensor2::shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

// Copies into Eigen-owned (aligned) storage. Vectorised kernels peel differently
// for unaligned pointers, which would make results depend on heap addresses.
RowMat owned(const Tensor2& t) {
    return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void store(const RowMat& m, Tensor2& out) { std::copy(m.data(), m.data() + m.size(), out.data().begin()); }

} // namespace

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + a.shape_string() + " by " + b.shape_string());
    Tensor2 out(a.rows(), b.cols());
    if (a.cols() > 0) { RowMat r = owned(a) * owned(b); store(r, out); }
    return out;
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + a.shape_string() + " by transpose of " + b.shape_string());
    Tensor2 out(a.rows(), b.rows());
    if (a.cols() > 0) { RowMat r = owned(a) * owned(b).transpose(); store(r, out); }
    return out;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: transpose of " + a.shape_string() + " by " + b.shape_string());
    Tensor2 out(a.cols(), b.cols());
    if (a.rows() > 0) { RowMat r = owned(a).transpose() * owned(b); store(r, out); }
    return out;
}

Tensor2 transpose(const Tensor2& a) {
    Tensor2 out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

Tensor2 softmax_rows(const Tensor2& x) {
    Tensor2 out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto in = x.row(i);
        auto o = out.row(i);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

double max_abs_diff(const Tensor2& a, const Tensor2& b) {
    if (!a.same_shape(b))
        throw ShapeError("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

} // namespace ga::num
