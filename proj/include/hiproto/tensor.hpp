#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "hiproto/io.hpp"

namespace hiproto {

// Dense row-major tensor of doubles. Compute runs in 64-bit; file payloads
// store 32-bit values.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel(shape), 0.0);
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t size() const { return v.size(); }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    Tensor zeros_like() const { return Tensor(shape); }
};

using GradientSet = std::vector<Tensor>;

inline std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

}  // namespace hiproto
