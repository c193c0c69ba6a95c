#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmc {

/// Error type for all structured failures in the library. The message is a
/// single line suitable for machine parsing on the diagnostic stream.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (numel() != static_cast<int64_t>(values.size()))
            throw Error("tensor: shape/value length mismatch");
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols() + c)]; }

    bool sameShape(const Tensor& o) const { return shape == o.shape; }
    bool allFinite() const;
};

std::string shapeToString(const std::vector<int64_t>& shape);

}  // namespace cmc
