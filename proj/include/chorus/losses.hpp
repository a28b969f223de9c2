#pragma once

#include <cstdint>
#include <vector>

#include "chorus/autodiff.hpp"
#include "chorus/encoders.hpp"
#include "chorus/errors.hpp"
#include "chorus/optim.hpp"

namespace chorus::losses {

// Element-mean squared error; the target is a fixed tensor.
template <class T>
ag::VarT<T> mse_to_const(ag::VarT<T> a, TensorT<T> target) {
    TensorT<T> neg(target.shape());
    for (int64_t i = 0; i < target.size(); ++i) neg[i] = -target[i];
    auto diff = ag::add_const(a, std::move(neg));
    return ag::mean_all(ag::mul(diff, diff));
}

template <class T>
struct ReconParts {
    ag::VarT<T> l_xc;
    ag::VarT<T> l_cx;
    ag::VarT<T> l_recon;
};

// L_xc = MSE(chat, c), L_cx = MSE(xhat, x); L_recon is their weighted sum.
template <class T>
ReconParts<T> recon_loss_graph(ag::VarT<T> chat, TensorT<T> c_target, ag::VarT<T> xhat,
                               TensorT<T> x_target, double lambda_xc, double lambda_cx) {
    ReconParts<T> out{mse_to_const(chat, std::move(c_target)),
                      mse_to_const(xhat, std::move(x_target)), {}};
    out.l_recon = ag::add(ag::mul_scalar(out.l_xc, lambda_xc), ag::mul_scalar(out.l_cx, lambda_cx));
    return out;
}

// Mean over the batch of 0.5 * sum_j (mu^2 + exp(logvar) - 1 - logvar).
template <class T>
ag::VarT<T> kl_loss_graph(ag::VarT<T> mu, ag::VarT<T> logvar) {
    if (!mu.value().same_shape(logvar.value())) {
        throw ContractViolation("kl_loss: mu/logvar shape mismatch");
    }
    const int64_t B = mu.value().dim(0);
    auto t = ag::add_scalar(ag::sub(ag::add(ag::mul(mu, mu), ag::exp(logvar)), logvar), -1.0);
    return ag::mul_scalar(ag::sum_all(t), 0.5 / static_cast<double>(B));
}

template <class T>
struct SupConGraph {
    ag::VarT<T> loss;
    bool degenerate = false;  // every anchor lacked a positive
    int64_t contributing = 0;
};

// Supervised contrastive loss on L2-normalized embeddings. Anchors without a
// positive are skipped; if all are skipped the loss is a constant 0 and the
// degenerate flag is set.
template <class T>
SupConGraph<T> supcon_loss_graph(ag::TapeT<T>& tape, ag::VarT<T> z,
                                 const std::vector<int64_t>& labels, double tau) {
    const int64_t B = z.value().dim(0);
    if (B < 2) throw ContractViolation("supcon_loss: batch must have at least 2 samples");
    if (static_cast<int64_t>(labels.size()) != B) {
        throw ContractViolation("supcon_loss: label count mismatch");
    }
    if (!(tau > 0.0)) throw ContractViolation("supcon_loss: tau must be positive");

    std::vector<int64_t> pos_count(static_cast<size_t>(B), 0);
    int64_t contributing = 0;
    for (int64_t i = 0; i < B; ++i) {
        for (int64_t j = 0; j < B; ++j) {
            if (i != j && labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)]) {
                ++pos_count[static_cast<size_t>(i)];
            }
        }
        if (pos_count[static_cast<size_t>(i)] > 0) ++contributing;
    }
    if (contributing == 0) {
        return {tape.constant(TensorT<T>::scalar(T(0)), "supcon_zero"), true, 0};
    }

    auto zn = ag::l2_normalize_rows(z);
    auto sim = ag::mul_scalar(ag::matmul_nt(zn, zn), 1.0 / tau);

    // Detached per-row max over the off-diagonal stabilizes the exponentials;
    // it cancels analytically, so gradients are unaffected.
    std::vector<T> rowmax(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) {
        T m = -std::numeric_limits<T>::infinity();
        for (int64_t j = 0; j < B; ++j) {
            if (i != j) m = std::max(m, sim.value()[i * B + j]);
        }
        rowmax[static_cast<size_t>(i)] = m;
    }

    TensorT<T> shift({B, B});
    TensorT<T> offdiag({B, B});
    TensorT<T> posw({B, B});
    for (int64_t i = 0; i < B; ++i) {
        for (int64_t j = 0; j < B; ++j) {
            shift[i * B + j] = -rowmax[static_cast<size_t>(i)];
            offdiag[i * B + j] = (i == j) ? T(0) : T(1);
            const bool positive = i != j && labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(j)];
            posw[i * B + j] = positive ? T(1) / static_cast<T>(pos_count[static_cast<size_t>(i)]) : T(0);
        }
    }

    auto expd = ag::exp(ag::add_const(sim, std::move(shift)));
    auto denom = ag::sum_rows(ag::mul_const(expd, std::move(offdiag)));
    TensorT<T> rowmax_col({B, 1});
    for (int64_t i = 0; i < B; ++i) rowmax_col[i] = rowmax[static_cast<size_t>(i)];
    auto logden = ag::add_const(ag::log(denom), std::move(rowmax_col));
    auto posmean = ag::sum_rows(ag::mul_const(sim, std::move(posw)));
    auto per_anchor = ag::sub(logden, posmean);

    TensorT<T> anchor_w({B, 1});
    for (int64_t i = 0; i < B; ++i) {
        anchor_w[i] = pos_count[static_cast<size_t>(i)] > 0 ? T(1) / static_cast<T>(contributing) : T(0);
    }
    auto loss = ag::sum_all(ag::mul_const(per_anchor, std::move(anchor_w)));
    return {loss, false, contributing};
}

// L_balance = K * sum_k (mean_alpha_k - 1/K)^2
template <class T>
ag::VarT<T> balance_loss_graph(ag::VarT<T> alpha, int64_t K) {
    if (alpha.value().rank() != 2 || alpha.value().dim(1) != K) {
        throw ContractViolation("balance_loss: alpha must be [B,K]");
    }
    auto mean = ag::mean_over_rows(alpha);
    auto dev = ag::add_scalar(mean, -1.0 / static_cast<double>(K));
    return ag::mul_scalar(ag::sum_all(ag::mul(dev, dev)), static_cast<double>(K));
}

// ---------------------------------------------------------------------------
// f32 value wrappers (spec operation signatures).
// ---------------------------------------------------------------------------

float kl_loss(const Tensor& mu, const Tensor& logvar);

struct SupConValue {
    float value = 0.0f;
    bool degenerate = false;
};
SupConValue supcon_loss(const Tensor& z, const std::vector<int64_t>& context_labels, float tau);

float balance_loss(const Tensor& alpha, int64_t K);

float cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels);

struct ReconValue {
    float l_xc = 0.0f;
    float l_cx = 0.0f;
    float l_recon = 0.0f;
};
// Decodes z_x -> chat and z_c -> xhat with the stored decoders, then applies
// the weighted MSE pair.
ReconValue recon_loss(const Tensor& z_x, const Tensor& z_c, const Tensor& x, const Tensor& c,
                      const ParamStore& decoders, const ModelDims& dims, float lambda_xc,
                      float lambda_cx);

}  // namespace chorus::losses
