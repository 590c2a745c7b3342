#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "sarmatch/serialize.hpp"
#include "sarmatch/tensor.hpp"

namespace sarmatch {

// Named trainable leaves. Initialization is a pure function of
// (store seed, parameter name, shape), so construction order does not affect
// the values and two models built from the same seed are identical.
class ParamStore {
public:
    explicit ParamStore(uint64_t seed) : seed_(seed) {}

    Tensor create(const std::string& name, Shape shape, float stddev) {
        if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
        Tensor t;
        if (stddev > 0.0f) {
            Rng rng(seed_ ^ fnv1a(name));
            t = Tensor::randn(std::move(shape), rng, stddev, true);
        } else {
            t = Tensor::zeros(std::move(shape), true);
        }
        index_[name] = items_.size();
        items_.emplace_back(name, t);
        return t;
    }

    Tensor create_const(const std::string& name, Shape shape, float value) {
        if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
        Tensor t = Tensor::full(std::move(shape), value, true);
        index_[name] = items_.size();
        items_.emplace_back(name, t);
        return t;
    }

    // He initialization for conv kernels
    Tensor create_conv(const std::string& name, int co, int ci, int k) {
        const float stddev = std::sqrt(2.0f / (static_cast<float>(ci) * k * k));
        return create(name, {co, ci, k, k}, stddev);
    }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const NamedTensors& items() const { return items_; }
    uint64_t seed() const { return seed_; }

    void zero_grads() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

    // overwrite values in place by name; shapes must match
    void load_values(const NamedTensors& values) {
        for (const auto& [name, src] : values) {
            auto it = index_.find(name);
            if (it == index_.end()) throw ArgumentError("checkpoint has unknown parameter: " + name);
            Tensor dst = items_[it->second].second;
            if (dst.shape() != src.shape())
                throw ShapeError("checkpoint shape mismatch for " + name + ": " +
                                 shape_str(dst.shape()) + " vs " + shape_str(src.shape()));
            std::copy(src.data().begin(), src.data().end(), dst.raw_data().begin());
        }
    }

private:
    static uint64_t fnv1a(const std::string& s) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    uint64_t seed_;
    NamedTensors items_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace sarmatch
