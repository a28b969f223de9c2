#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/errors.hpp"
#include "chorus/tensor.hpp"

namespace chorus {

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Named f32 parameters with per-parameter AdamW state.
class ParamStore {
public:
    struct Param {
        Tensor value;
        Tensor m;
        Tensor v;
        int64_t steps = 0;
    };

    Tensor& add(const std::string& name, Tensor init) {
        if (items_.count(name)) throw ContractViolation("parameter '" + name + "' already exists");
        Param p;
        p.m = Tensor(init.shape());
        p.v = Tensor(init.shape());
        p.value = std::move(init);
        p.value.requires_grad = true;
        auto [it, ok] = items_.emplace(name, std::move(p));
        (void)ok;
        return it->second.value;
    }

    bool has(const std::string& name) const { return items_.count(name) > 0; }
    size_t count() const { return items_.size(); }

    Param& param(const std::string& name) {
        auto it = items_.find(name);
        if (it == items_.end()) throw ContractViolation("unknown parameter '" + name + "'");
        return it->second;
    }
    const Param& param(const std::string& name) const {
        auto it = items_.find(name);
        if (it == items_.end()) throw ContractViolation("unknown parameter '" + name + "'");
        return it->second;
    }

    Tensor& value(const std::string& name) { return param(name).value; }
    const Tensor& value(const std::string& name) const { return param(name).value; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(items_.size());
        for (const auto& [k, _] : items_) out.push_back(k);
        return out;
    }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    // Decoupled weight decay, then the bias-corrected Adam update. Only the
    // parameters named in grads are touched.
    void adamw_step(const std::map<std::string, Tensor>& grads, const AdamWConfig& cfg) {
        if (cfg.lr <= 0.0) throw ConfigError("adamw: learning rate must be positive");
        for (const auto& [name, g] : grads) {
            Param& p = param(name);
            if (!p.value.same_shape(g)) {
                throw ContractViolation("adamw: gradient shape mismatch for '" + name + "'");
            }
            p.steps += 1;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.steps));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.steps));
            const int64_t n = p.value.size();
            for (int64_t i = 0; i < n; ++i) {
                double w = static_cast<double>(p.value[i]);
                w *= 1.0 - cfg.lr * cfg.weight_decay;
                const double gi = static_cast<double>(g[i]);
                const double m = cfg.beta1 * static_cast<double>(p.m[i]) + (1.0 - cfg.beta1) * gi;
                const double v = cfg.beta2 * static_cast<double>(p.v[i]) + (1.0 - cfg.beta2) * gi * gi;
                p.m[i] = static_cast<float>(m);
                p.v[i] = static_cast<float>(v);
                const double mh = m / bc1;
                const double vh = v / bc2;
                w -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
                p.value[i] = static_cast<float>(w);
            }
        }
    }

    // FNV-1a over names and value bytes; used by freeze checks and tests.
    uint64_t content_hash() const {
        uint64_t h = 0xCBF29CE484222325ULL;
        auto feed = [&h](const void* ptr, size_t len) {
            const auto* b = static_cast<const unsigned char*>(ptr);
            for (size_t i = 0; i < len; ++i) {
                h ^= b[i];
                h *= 0x100000001B3ULL;
            }
        };
        for (const auto& [name, p] : items_) {
            feed(name.data(), name.size());
            feed(p.value.data(), sizeof(float) * static_cast<size_t>(p.value.size()));
        }
        return h;
    }

private:
    std::map<std::string, Param> items_;
};

// Parameters bound to a tape as leaves, addressable by name.
template <class T>
struct BoundParams {
    std::map<std::string, ag::VarT<T>> vars;

    ag::VarT<T> operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ContractViolation("unbound parameter '" + name + "'");
        return it->second;
    }
};

template <class T>
BoundParams<T> bind_raw(ag::TapeT<T>& tape, const std::map<std::string, TensorT<T>>& values,
                        bool trainable) {
    BoundParams<T> out;
    for (const auto& [name, v] : values) out.vars.emplace(name, tape.leaf(v, trainable, name));
    return out;
}

template <class T>
BoundParams<T> bind_params(ag::TapeT<T>& tape, const ParamStore& store, bool trainable = true) {
    BoundParams<T> out;
    for (const auto& [name, p] : store) {
        out.vars.emplace(name, tape.leaf(p.value.template cast<T>(), trainable, name));
    }
    return out;
}

// Gradients per bound parameter (zeros where nothing flowed).
inline std::map<std::string, Tensor> collect_grads(const BoundParams<float>& bound) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : bound.vars) out.emplace(name, var.grad());
    return out;
}

}  // namespace chorus
