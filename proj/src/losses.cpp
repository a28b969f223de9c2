#include "chorus/losses.hpp"

namespace chorus::losses {

float kl_loss(const Tensor& mu, const Tensor& logvar) {
    ag::TapeT<float> tape;
    auto m = tape.constant(mu, "mu");
    auto lv = tape.constant(logvar, "logvar");
    return kl_loss_graph(m, lv).value().item();
}

SupConValue supcon_loss(const Tensor& z, const std::vector<int64_t>& context_labels, float tau) {
    ag::TapeT<float> tape;
    auto zv = tape.constant(z, "z");
    auto g = supcon_loss_graph(tape, zv, context_labels, tau);
    return {g.loss.value().item(), g.degenerate};
}

float balance_loss(const Tensor& alpha, int64_t K) {
    ag::TapeT<float> tape;
    auto a = tape.constant(alpha, "alpha");
    return balance_loss_graph(a, K).value().item();
}

float cross_entropy(const Tensor& logits, const std::vector<int64_t>& labels) {
    ag::TapeT<float> tape;
    auto l = tape.constant(logits, "logits");
    return ag::cross_entropy_logits(l, labels).value().item();
}

ReconValue recon_loss(const Tensor& z_x, const Tensor& z_c, const Tensor& x, const Tensor& c,
                      const ParamStore& decoders, const ModelDims& dims, float lambda_xc,
                      float lambda_cx) {
    if (z_x.dim(0) != z_c.dim(0) || z_x.dim(0) != x.dim(0) || z_x.dim(0) != c.dim(0)) {
        throw ContractViolation("recon_loss: batch sizes do not match");
    }
    ag::TapeT<float> tape;
    auto bound = bind_params<float>(tape, decoders, false);
    auto zx = tape.constant(z_x, "z_x");
    auto zc = tape.constant(z_c, "z_c");
    auto chat = decode_context_fwd(bound, zx, dims);
    auto xhat = decode_sensor_fwd(bound, zc, dims);
    auto parts = recon_loss_graph(chat, c, xhat, x, lambda_xc, lambda_cx);
    return {parts.l_xc.value().item(), parts.l_cx.value().item(), parts.l_recon.value().item()};
}

}  // namespace chorus::losses
