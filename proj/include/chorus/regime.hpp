#pragma once

#include <string>

#include "chorus/errors.hpp"

namespace chorus {

// Pre-training regularization regime: L_pre = L_recon + lambda * (L_KL + gamma * L_con).
struct RegimeConfig {
    std::string name;  // weak | medium | strong
    double lambda = 0.0;
    double gamma = 0.0;
    double lambda_xc = 1.0;
    double lambda_cx = 1.0;

    void validate() const {
        if (!(lambda_xc > 0.0) || !(lambda_cx > 0.0)) {
            throw ConfigError("regime: reconstruction weights must be positive");
        }
        if (name == "weak") {
            if (lambda != 0.0) throw ConfigError("regime weak requires lambda == 0");
        } else if (name == "medium") {
            if (!(lambda > 0.0) || gamma != 0.0) {
                throw ConfigError("regime medium requires lambda > 0 and gamma == 0");
            }
        } else if (name == "strong") {
            if (!(lambda > 0.0) || !(gamma > 0.0)) {
                throw ConfigError("regime strong requires lambda > 0 and gamma > 0");
            }
        } else {
            throw ConfigError("unknown regime name '" + name + "'");
        }
    }
};

inline RegimeConfig regime_weak() { return {"weak", 0.0, 0.0, 1.0, 1.0}; }
inline RegimeConfig regime_medium() { return {"medium", 1e-2, 0.0, 1.0, 1.0}; }
inline RegimeConfig regime_strong() { return {"strong", 1e-2, 0.5, 1.0, 1.0}; }

inline RegimeConfig regime_from_name(const std::string& name) {
    if (name == "weak") return regime_weak();
    if (name == "medium") return regime_medium();
    if (name == "strong") return regime_strong();
    throw ConfigError("unknown regime name '" + name + "'");
}

}  // namespace chorus
