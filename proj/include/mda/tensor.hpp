#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mda {

/// Dense row-major array of doubles, rank 1 to 4, laid out as
/// [batch, channels, height, width] with trailing dimensions optional.
class Tensor {
public:
    using Shape = std::vector<std::size_t>;

    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        check_shape(shape_);
        values_.assign(count(shape_), fill);
        if (!std::isfinite(fill)) {
            throw std::invalid_argument("Tensor: non-finite fill value");
        }
    }

    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        check_shape(shape_);
        if (count(shape_) != values_.size()) {
            throw std::invalid_argument("Tensor: shape " + describe(shape_) + " does not match " +
                                        std::to_string(values_.size()) + " values");
        }
        for (double v : values_) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("Tensor: non-finite value on construction");
            }
        }
    }

    /// Rank-2 tensor from nested rows, e.g. `Tensor::matrix({{1, 2}, {3, 4}})`.
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        std::vector<double> flat;
        std::size_t cols = rows.size() ? rows.begin()->size() : 0;
        for (const auto& r : rows) {
            if (r.size() != cols) {
                throw std::invalid_argument("Tensor::matrix: ragged rows");
            }
            flat.insert(flat.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(flat));
    }

    static Tensor vector(std::initializer_list<double> values) {
        return Tensor({values.size()}, std::vector<double>(values));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    /// Leading dimension.
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    /// Elements per leading-dimension slice.
    std::size_t row_size() const { return rows() ? size() / rows() : 0; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::size_t r, std::size_t c) { return values_[r * row_size() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * row_size() + c]; }

    std::span<double> row(std::size_t r) { return std::span<double>(values_).subspan(r * row_size(), row_size()); }
    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * row_size(), row_size());
    }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
    }

    /// Same values viewed under a new shape of equal element count.
    Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

    /// Copy of the listed leading-dimension slices, in order.
    Tensor select_rows(std::span<const std::size_t> indices) const {
        if (indices.empty()) throw std::invalid_argument("Tensor::select_rows: empty selection");
        Shape s = shape_;
        s[0] = indices.size();
        Tensor out;
        out.shape_ = std::move(s);
        out.values_.reserve(indices.size() * row_size());
        for (std::size_t i : indices) {
            auto r = row(i);
            out.values_.insert(out.values_.end(), r.begin(), r.end());
        }
        return out;
    }

    Tensor& operator+=(const Tensor& other) {
        require_same_shape(*this, other, "operator+=");
        for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
        return *this;
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

    static std::string describe(const Shape& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ']';
        return os.str();
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
        if (a.shape_ != b.shape_) {
            throw std::invalid_argument(std::string(where) + ": shape mismatch " + describe(a.shape_) + " vs " +
                                        describe(b.shape_));
        }
    }

private:
    static std::size_t count(const Shape& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static void check_shape(const Shape& s) {
        if (s.empty() || s.size() > 4) {
            throw std::invalid_argument("Tensor: rank must be 1..4, got " + std::to_string(s.size()));
        }
        for (std::size_t d : s) {
            if (d == 0) throw std::invalid_argument("Tensor: zero-sized dimension in " + describe(s));
        }
    }

    Shape shape_;
    std::vector<double> values_;
};

/// Trainable parameter with its gradient and SGD momentum buffer.
struct ParamBlock {
    Tensor value;
    Tensor grad;
    Tensor momentum;

    ParamBlock() = default;
    explicit ParamBlock(Tensor v) : value(std::move(v)), grad(value.shape()), momentum(value.shape()) {}

    void zero_grad() { grad.fill(0.0); }
};

/// Deterministic normal draws; every call with the same seed yields the same tensor.
inline Tensor rng_normal(std::uint64_t seed, Tensor::Shape shape, double stddev) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("rng_normal: stddev must be >= 0");
    Tensor out(std::move(shape));
    if (stddev == 0.0) return out;
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : out.values()) v = dist(gen);
    return out;
}

/// Kaiming-normal weight matrix [fan_in, fan_out].
inline Tensor kaiming_normal(std::uint64_t seed, std::size_t fan_in, std::size_t fan_out) {
    return rng_normal(seed, {fan_in, fan_out}, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

}  // namespace mda
