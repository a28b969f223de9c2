#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "chorus/errors.hpp"
#include "chorus/kernels.hpp"
#include "chorus/tensor.hpp"

namespace chorus::ag {

template <class T>
class TapeT;

template <class T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated on first accumulation
    bool requires_grad{false};
    bool grad_live{false};
    std::string name;
    std::function<void()> backward;  // empty for leaves and no-grad nodes

    TensorT<T>& grad_acc() {
        if (!grad_live) {
            grad = TensorT<T>(value.shape());
            grad_live = true;
        }
        return grad;
    }
};

// Lightweight handle; the tape owns the nodes.
template <class T>
class VarT {
public:
    VarT() = default;
    VarT(NodeT<T>* n, TapeT<T>* t) : node_(n), tape_(t) {}

    const TensorT<T>& value() const { return node_->value; }
    const std::vector<int64_t>& shape() const { return node_->value.shape(); }
    int64_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    // Zero tensor if no gradient reached this node.
    TensorT<T> grad() const {
        if (!node_->grad_live) return TensorT<T>(node_->value.shape());
        return node_->grad;
    }

    NodeT<T>* node() const { return node_; }
    TapeT<T>* tape() const { return tape_; }
    bool valid() const { return node_ != nullptr; }

private:
    NodeT<T>* node_{nullptr};
    TapeT<T>* tape_{nullptr};
};

// Single forward tape; node creation order is a topological order, so the
// backward sweep is just the reverse.
template <class T>
class TapeT {
public:
    VarT<T> leaf(TensorT<T> v, bool requires_grad = false, std::string name = "leaf") {
        check_finite(v, name);
        auto node = std::make_unique<NodeT<T>>();
        node->value = std::move(v);
        node->requires_grad = requires_grad;
        node->name = std::move(name);
        nodes_.push_back(std::move(node));
        return VarT<T>(nodes_.back().get(), this);
    }

    VarT<T> constant(TensorT<T> v, std::string name = "const") {
        return leaf(std::move(v), false, std::move(name));
    }

    // Emits an op node. make_backward receives the finished node and returns
    // the closure run during the reverse sweep; it is only invoked when some
    // parent requires a gradient.
    VarT<T> emit(TensorT<T> value, std::vector<NodeT<T>*> parents, std::string name,
                 const std::function<std::function<void()>(NodeT<T>*)>& make_backward) {
        check_finite(value, name);
        auto node = std::make_unique<NodeT<T>>();
        node->value = std::move(value);
        node->name = std::move(name);
        for (NodeT<T>* p : parents) {
            if (p->requires_grad) {
                node->requires_grad = true;
                break;
            }
        }
        if (node->requires_grad && make_backward) node->backward = make_backward(node.get());
        nodes_.push_back(std::move(node));
        return VarT<T>(nodes_.back().get(), this);
    }

    void backward(VarT<T> loss) {
        if (loss.size() != 1) {
            throw ContractViolation("backward() requires a scalar loss, got shape " +
                                    loss.node()->value.shape_str());
        }
        loss.node()->grad_acc()[0] = T(1);
        for (size_t i = nodes_.size(); i-- > 0;) {
            NodeT<T>* n = nodes_[i].get();
            if (n->grad_live && n->backward) n->backward();
        }
    }

    size_t node_count() const { return nodes_.size(); }

private:
    static void check_finite(const TensorT<T>& v, const std::string& name) {
        if (!v.all_finite()) {
            throw NumericError("non-finite values produced by node '" + name + "'");
        }
    }

    std::vector<std::unique_ptr<NodeT<T>>> nodes_;
};

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void require_same_shape(const VarT<T>& a, const VarT<T>& b, const char* op) {
    if (!a.value().same_shape(b.value())) {
        throw ContractViolation(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                " vs " + b.value().shape_str());
    }
}

template <class T>
void require_rank(const VarT<T>& a, int64_t r, const char* op) {
    if (a.value().rank() != r) {
        throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(r) +
                                ", got " + a.value().shape_str());
    }
}

}  // namespace detail

template <class T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    detail::require_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "add", [a, b](NodeT<T>* node) {
        return [a, b, node]() {
            const int64_t n = node->value.size();
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i];
            }
            if (b.node()->requires_grad) {
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] += node->grad[i];
            }
        };
    });
}

template <class T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
    detail::require_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "sub", [a, b](NodeT<T>* node) {
        return [a, b, node]() {
            const int64_t n = node->value.size();
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i];
            }
            if (b.node()->requires_grad) {
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] -= node->grad[i];
            }
        };
    });
}

template <class T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    detail::require_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "mul", [a, b](NodeT<T>* node) {
        return [a, b, node]() {
            const int64_t n = node->value.size();
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i] * b.node()->value[i];
            }
            if (b.node()->requires_grad) {
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < n; ++i) gb[i] += node->grad[i] * a.node()->value[i];
            }
        };
    });
}

template <class T>
VarT<T> add_scalar(VarT<T> a, double c) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + static_cast<T>(c);
    return a.tape()->emit(std::move(out), {a.node()}, "add_scalar", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i];
        };
    });
}

template <class T>
VarT<T> mul_scalar(VarT<T> a, double c) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(a.value()[i] * c);
    return a.tape()->emit(std::move(out), {a.node()}, "mul_scalar", [a, c](NodeT<T>* node) {
        return [a, c, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += static_cast<T>(node->grad[i] * c);
        };
    });
}

// Elementwise add/mul with a fixed (non-differentiated) tensor.
template <class T>
VarT<T> add_const(VarT<T> a, TensorT<T> c) {
    if (!a.value().same_shape(c)) throw ContractViolation("add_const: shape mismatch");
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + c[i];
    return a.tape()->emit(std::move(out), {a.node()}, "add_const", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i];
        };
    });
}

template <class T>
VarT<T> mul_const(VarT<T> a, TensorT<T> c) {
    if (!a.value().same_shape(c)) throw ContractViolation("mul_const: shape mismatch");
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * c[i];
    auto cs = std::make_shared<TensorT<T>>(std::move(c));
    return a.tape()->emit(std::move(out), {a.node()}, "mul_const", [a, cs](NodeT<T>* node) {
        return [a, cs, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i] * (*cs)[i];
        };
    });
}

template <class T>
VarT<T> relu(VarT<T> a) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
    return a.tape()->emit(std::move(out), {a.node()}, "relu", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) {
                if (a.node()->value[i] > T(0)) ga[i] += node->grad[i];
            }
        };
    });
}

template <class T>
VarT<T> exp(VarT<T> a) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = std::exp(a.value()[i]);
    return a.tape()->emit(std::move(out), {a.node()}, "exp", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i] * node->value[i];
        };
    });
}

template <class T>
VarT<T> log(VarT<T> a) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = std::log(a.value()[i]);
    return a.tape()->emit(std::move(out), {a.node()}, "log", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i] / a.node()->value[i];
        };
    });
}

// Gradient passes through where lo <= x <= hi.
template <class T>
VarT<T> clamp(VarT<T> a, double lo, double hi) {
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) {
        T v = a.value()[i];
        if (v < static_cast<T>(lo)) v = static_cast<T>(lo);
        if (v > static_cast<T>(hi)) v = static_cast<T>(hi);
        out[i] = v;
    }
    return a.tape()->emit(std::move(out), {a.node()}, "clamp", [a, lo, hi](NodeT<T>* node) {
        return [a, lo, hi, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) {
                const T v = a.node()->value[i];
                if (v >= static_cast<T>(lo) && v <= static_cast<T>(hi)) ga[i] += node->grad[i];
            }
        };
    });
}

template <class T>
VarT<T> matmul(VarT<T> a, VarT<T> b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    const int64_t M = a.value().dim(0), K = a.value().dim(1), N = b.value().dim(1);
    if (b.value().dim(0) != K) throw ContractViolation("matmul: inner dimensions differ");
    TensorT<T> out({M, N});
    kernels::matmul(a.value().data(), b.value().data(), out.data(), M, K, N);
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "matmul", [a, b, M, K, N](NodeT<T>* node) {
        return [a, b, M, K, N, node]() {
            if (a.node()->requires_grad) {
                TensorT<T> tmp({M, K});
                kernels::matmul_nt(node->grad.data(), b.node()->value.data(), tmp.data(), M, N, K);
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
            }
            if (b.node()->requires_grad) {
                TensorT<T> tmp({K, N});
                kernels::matmul_tn(a.node()->value.data(), node->grad.data(), tmp.data(), K, M, N);
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
            }
        };
    });
}

// a[M,K] * b[N,K]^T -> [M,N]
template <class T>
VarT<T> matmul_nt(VarT<T> a, VarT<T> b) {
    detail::require_rank(a, 2, "matmul_nt");
    detail::require_rank(b, 2, "matmul_nt");
    const int64_t M = a.value().dim(0), K = a.value().dim(1), N = b.value().dim(0);
    if (b.value().dim(1) != K) throw ContractViolation("matmul_nt: inner dimensions differ");
    TensorT<T> out({M, N});
    kernels::matmul_nt(a.value().data(), b.value().data(), out.data(), M, K, N);
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "matmul_nt", [a, b, M, K, N](NodeT<T>* node) {
        return [a, b, M, K, N, node]() {
            if (a.node()->requires_grad) {
                TensorT<T> tmp({M, K});
                kernels::matmul(node->grad.data(), b.node()->value.data(), tmp.data(), M, N, K);
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
            }
            if (b.node()->requires_grad) {
                TensorT<T> tmp({N, K});
                kernels::matmul_tn(node->grad.data(), a.node()->value.data(), tmp.data(), N, M, K);
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
            }
        };
    });
}

// a[B,N] + v[N] broadcast over rows.
template <class T>
VarT<T> add_rowvec(VarT<T> a, VarT<T> v) {
    detail::require_rank(a, 2, "add_rowvec");
    const int64_t B = a.value().dim(0), N = a.value().dim(1);
    if (v.size() != N) throw ContractViolation("add_rowvec: vector length mismatch");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < N; ++j) out[i * N + j] = a.value()[i * N + j] + v.value()[j];
    return a.tape()->emit(std::move(out), {a.node(), v.node()}, "add_rowvec", [a, v, B, N](NodeT<T>* node) {
        return [a, v, B, N, node]() {
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < B * N; ++i) ga[i] += node->grad[i];
            }
            if (v.node()->requires_grad) {
                auto& gv = v.node()->grad_acc();
                for (int64_t j = 0; j < N; ++j) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < B; ++i) acc += static_cast<double>(node->grad[i * N + j]);
                    gv[j] += static_cast<T>(acc);
                }
            }
        };
    });
}

// x[B,Ci,Ti] (*) w[Co,Ci,kw] + bias[Co], valid padding.
template <class T>
VarT<T> conv1d(VarT<T> x, VarT<T> w, VarT<T> bias, int64_t stride) {
    detail::require_rank(x, 3, "conv1d");
    detail::require_rank(w, 3, "conv1d");
    const int64_t B = x.value().dim(0), Ci = x.value().dim(1), Ti = x.value().dim(2);
    const int64_t Co = w.value().dim(0), kw = w.value().dim(2);
    if (w.value().dim(1) != Ci) throw ContractViolation("conv1d: channel mismatch");
    if (Ti < kw) throw ContractViolation("conv1d: input shorter than kernel");
    if (bias.size() != Co) throw ContractViolation("conv1d: bias length mismatch");
    const int64_t To = kernels::serial::conv_out_len(Ti, kw, stride);
    TensorT<T> out({B, Co, To});
    kernels::conv1d_fwd(x.value().data(), w.value().data(), bias.value().data(), out.data(),
                        B, Ci, Ti, Co, kw, stride);
    return x.tape()->emit(std::move(out), {x.node(), w.node(), bias.node()}, "conv1d",
                          [x, w, bias, B, Ci, Ti, Co, kw, stride](NodeT<T>* node) {
        return [x, w, bias, B, Ci, Ti, Co, kw, stride, node]() {
            const int64_t To = kernels::serial::conv_out_len(Ti, kw, stride);
            if (x.node()->requires_grad) {
                TensorT<T> tmp({B, Ci, Ti});
                kernels::conv1d_bwd_input(node->grad.data(), w.node()->value.data(), tmp.data(),
                                          B, Ci, Ti, Co, kw, stride);
                auto& gx = x.node()->grad_acc();
                for (int64_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
            }
            if (w.node()->requires_grad || bias.node()->requires_grad) {
                TensorT<T> gw({Co, Ci, kw});
                TensorT<T> gb({Co});
                kernels::conv1d_bwd_params(x.node()->value.data(), node->grad.data(), gw.data(),
                                           gb.data(), B, Ci, Ti, Co, kw, stride);
                if (w.node()->requires_grad) {
                    auto& acc = w.node()->grad_acc();
                    for (int64_t i = 0; i < gw.size(); ++i) acc[i] += gw[i];
                }
                if (bias.node()->requires_grad) {
                    auto& acc = bias.node()->grad_acc();
                    for (int64_t i = 0; i < gb.size(); ++i) acc[i] += gb[i];
                }
            }
            (void)To;
        };
    });
}

// [B,C,T] -> [B,C], mean over the time axis.
template <class T>
VarT<T> mean_pool_time(VarT<T> x) {
    detail::require_rank(x, 3, "mean_pool_time");
    const int64_t B = x.value().dim(0), C = x.value().dim(1), Tt = x.value().dim(2);
    TensorT<T> out({B, C});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t c = 0; c < C; ++c) {
            double acc = 0.0;
            const T* row = x.value().data() + (b * C + c) * Tt;
            for (int64_t t = 0; t < Tt; ++t) acc += static_cast<double>(row[t]);
            out[b * C + c] = static_cast<T>(acc / static_cast<double>(Tt));
        }
    }
    return x.tape()->emit(std::move(out), {x.node()}, "mean_pool_time", [x, B, C, Tt](NodeT<T>* node) {
        return [x, B, C, Tt, node]() {
            auto& gx = x.node()->grad_acc();
            const T inv = static_cast<T>(1.0 / static_cast<double>(Tt));
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T g = node->grad[b * C + c] * inv;
                    T* row = gx.data() + (b * C + c) * Tt;
                    for (int64_t t = 0; t < Tt; ++t) row[t] += g;
                }
        };
    });
}

template <class T>
VarT<T> reshape(VarT<T> a, std::vector<int64_t> shape) {
    TensorT<T> out(std::move(shape), a.value().vec());
    if (out.size() != a.size()) throw ContractViolation("reshape: element count mismatch");
    return a.tape()->emit(std::move(out), {a.node()}, "reshape", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += node->grad[i];
        };
    });
}

template <class T>
VarT<T> sum_all(VarT<T> a) {
    const double s = kernels::reduce_sum(a.value().data(), a.size());
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(s));
    return a.tape()->emit(std::move(out), {a.node()}, "sum_all", [a](NodeT<T>* node) {
        return [a, node]() {
            auto& ga = a.node()->grad_acc();
            const T g = node->grad[0];
            const int64_t n = ga.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += g;
        };
    });
}

template <class T>
VarT<T> mean_all(VarT<T> a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

// [B,D] -> [B,1]
template <class T>
VarT<T> sum_rows(VarT<T> a) {
    detail::require_rank(a, 2, "sum_rows");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    TensorT<T> out({B, 1});
    for (int64_t i = 0; i < B; ++i) {
        double acc = 0.0;
        const T* row = a.value().data() + i * D;
        for (int64_t j = 0; j < D; ++j) acc += static_cast<double>(row[j]);
        out[i] = static_cast<T>(acc);
    }
    return a.tape()->emit(std::move(out), {a.node()}, "sum_rows", [a, B, D](NodeT<T>* node) {
        return [a, B, D, node]() {
            auto& ga = a.node()->grad_acc();
            for (int64_t i = 0; i < B; ++i) {
                const T g = node->grad[i];
                T* row = ga.data() + i * D;
                for (int64_t j = 0; j < D; ++j) row[j] += g;
            }
        };
    });
}

// [B,D] -> [1,D], mean over the batch axis.
template <class T>
VarT<T> mean_over_rows(VarT<T> a) {
    detail::require_rank(a, 2, "mean_over_rows");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    TensorT<T> out({1, D});
    for (int64_t j = 0; j < D; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < B; ++i) acc += static_cast<double>(a.value()[i * D + j]);
        out[j] = static_cast<T>(acc / static_cast<double>(B));
    }
    return a.tape()->emit(std::move(out), {a.node()}, "mean_over_rows", [a, B, D](NodeT<T>* node) {
        return [a, B, D, node]() {
            auto& ga = a.node()->grad_acc();
            const T inv = static_cast<T>(1.0 / static_cast<double>(B));
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < D; ++j) ga[i * D + j] += node->grad[j] * inv;
        };
    });
}

template <class T>
VarT<T> softmax_rows(VarT<T> a) {
    detail::require_rank(a, 2, "softmax_rows");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < B; ++i) {
        const T* row = a.value().data() + i * D;
        T m = row[0];
        for (int64_t j = 1; j < D; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < D; ++j) denom += std::exp(static_cast<double>(row[j] - m));
        for (int64_t j = 0; j < D; ++j)
            out[i * D + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - m)) / denom);
    }
    return a.tape()->emit(std::move(out), {a.node()}, "softmax_rows", [a, B, D](NodeT<T>* node) {
        return [a, B, D, node]() {
            auto& ga = a.node()->grad_acc();
            for (int64_t i = 0; i < B; ++i) {
                const T* y = node->value.data() + i * D;
                const T* g = node->grad.data() + i * D;
                double dot = 0.0;
                for (int64_t j = 0; j < D; ++j) dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                T* gr = ga.data() + i * D;
                for (int64_t j = 0; j < D; ++j)
                    gr[j] += static_cast<T>(y[j] * (static_cast<double>(g[j]) - dot));
            }
        };
    });
}

// Mean cross-entropy over rows; labels are class indices.
template <class T>
VarT<T> cross_entropy_logits(VarT<T> logits, std::vector<int64_t> labels) {
    detail::require_rank(logits, 2, "cross_entropy");
    const int64_t B = logits.value().dim(0), K = logits.value().dim(1);
    if (static_cast<int64_t>(labels.size()) != B) {
        throw ContractViolation("cross_entropy: label count mismatch");
    }
    for (int64_t y : labels) {
        if (y < 0 || y >= K) throw ContractViolation("cross_entropy: label out of range [0, K)");
    }
    double total = 0.0;
    for (int64_t i = 0; i < B; ++i) {
        const T* row = logits.value().data() + i * K;
        T m = row[0];
        for (int64_t j = 1; j < K; ++j) m = std::max(m, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < K; ++j) denom += std::exp(static_cast<double>(row[j] - m));
        total += static_cast<double>(m) + std::log(denom) - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
    }
    TensorT<T> out = TensorT<T>::scalar(static_cast<T>(total / static_cast<double>(B)));
    auto lbl = std::make_shared<std::vector<int64_t>>(std::move(labels));
    return logits.tape()->emit(std::move(out), {logits.node()}, "cross_entropy", [logits, lbl, B, K](NodeT<T>* node) {
        return [logits, lbl, B, K, node]() {
            auto& gl = logits.node()->grad_acc();
            const double g = static_cast<double>(node->grad[0]) / static_cast<double>(B);
            for (int64_t i = 0; i < B; ++i) {
                const T* row = logits.node()->value.data() + i * K;
                T m = row[0];
                for (int64_t j = 1; j < K; ++j) m = std::max(m, row[j]);
                double denom = 0.0;
                for (int64_t j = 0; j < K; ++j) denom += std::exp(static_cast<double>(row[j] - m));
                for (int64_t j = 0; j < K; ++j) {
                    const double p = std::exp(static_cast<double>(row[j] - m)) / denom;
                    const double onehot = (j == (*lbl)[static_cast<size_t>(i)]) ? 1.0 : 0.0;
                    gl[i * K + j] += static_cast<T>(g * (p - onehot));
                }
            }
        };
    });
}

// Row-wise x / max(||x||, eps).
template <class T>
VarT<T> l2_normalize_rows(VarT<T> a, double eps = 1e-12) {
    detail::require_rank(a, 2, "l2_normalize_rows");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    TensorT<T> out(a.shape());
    std::vector<double> norms(static_cast<size_t>(B));
    for (int64_t i = 0; i < B; ++i) {
        double sq = 0.0;
        const T* row = a.value().data() + i * D;
        for (int64_t j = 0; j < D; ++j) sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
        const double n = std::max(std::sqrt(sq), eps);
        norms[static_cast<size_t>(i)] = n;
        for (int64_t j = 0; j < D; ++j) out[i * D + j] = static_cast<T>(row[j] / n);
    }
    auto ns = std::make_shared<std::vector<double>>(std::move(norms));
    return a.tape()->emit(std::move(out), {a.node()}, "l2_normalize_rows", [a, ns, B, D](NodeT<T>* node) {
        return [a, ns, B, D, node]() {
            auto& ga = a.node()->grad_acc();
            for (int64_t i = 0; i < B; ++i) {
                const T* y = node->value.data() + i * D;
                const T* g = node->grad.data() + i * D;
                double dot = 0.0;
                for (int64_t j = 0; j < D; ++j) dot += static_cast<double>(g[j]) * static_cast<double>(y[j]);
                const double inv = 1.0 / (*ns)[static_cast<size_t>(i)];
                for (int64_t j = 0; j < D; ++j)
                    ga[i * D + j] += static_cast<T>((static_cast<double>(g[j]) - dot * static_cast<double>(y[j])) * inv);
            }
        };
    });
}

// y[i,j] = a[i,j] * s[i]; s has shape [B,1].
template <class T>
VarT<T> scale_rows(VarT<T> a, VarT<T> s) {
    detail::require_rank(a, 2, "scale_rows");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    if (s.size() != B) throw ContractViolation("scale_rows: scale length mismatch");
    TensorT<T> out(a.shape());
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < D; ++j) out[i * D + j] = a.value()[i * D + j] * s.value()[i];
    return a.tape()->emit(std::move(out), {a.node(), s.node()}, "scale_rows", [a, s, B, D](NodeT<T>* node) {
        return [a, s, B, D, node]() {
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < D; ++j) ga[i * D + j] += node->grad[i * D + j] * s.node()->value[i];
            }
            if (s.node()->requires_grad) {
                auto& gs = s.node()->grad_acc();
                for (int64_t i = 0; i < B; ++i) {
                    double acc = 0.0;
                    for (int64_t j = 0; j < D; ++j)
                        acc += static_cast<double>(node->grad[i * D + j]) * static_cast<double>(a.node()->value[i * D + j]);
                    gs[i] += static_cast<T>(acc);
                }
            }
        };
    });
}

template <class T>
VarT<T> concat_cols(VarT<T> a, VarT<T> b) {
    detail::require_rank(a, 2, "concat_cols");
    detail::require_rank(b, 2, "concat_cols");
    const int64_t B = a.value().dim(0), Da = a.value().dim(1), Db = b.value().dim(1);
    if (b.value().dim(0) != B) throw ContractViolation("concat_cols: batch mismatch");
    TensorT<T> out({B, Da + Db});
    for (int64_t i = 0; i < B; ++i) {
        for (int64_t j = 0; j < Da; ++j) out[i * (Da + Db) + j] = a.value()[i * Da + j];
        for (int64_t j = 0; j < Db; ++j) out[i * (Da + Db) + Da + j] = b.value()[i * Db + j];
    }
    return a.tape()->emit(std::move(out), {a.node(), b.node()}, "concat_cols", [a, b, B, Da, Db](NodeT<T>* node) {
        return [a, b, B, Da, Db, node]() {
            if (a.node()->requires_grad) {
                auto& ga = a.node()->grad_acc();
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < Da; ++j) ga[i * Da + j] += node->grad[i * (Da + Db) + j];
            }
            if (b.node()->requires_grad) {
                auto& gb = b.node()->grad_acc();
                for (int64_t i = 0; i < B; ++i)
                    for (int64_t j = 0; j < Db; ++j) gb[i * Db + j] += node->grad[i * (Da + Db) + Da + j];
            }
        };
    });
}

// Columns [c0, c1) of a [B,D] matrix.
template <class T>
VarT<T> slice_cols(VarT<T> a, int64_t c0, int64_t c1) {
    detail::require_rank(a, 2, "slice_cols");
    const int64_t B = a.value().dim(0), D = a.value().dim(1);
    if (c0 < 0 || c1 > D || c0 >= c1) throw ContractViolation("slice_cols: bad column range");
    const int64_t W = c1 - c0;
    TensorT<T> out({B, W});
    for (int64_t i = 0; i < B; ++i)
        for (int64_t j = 0; j < W; ++j) out[i * W + j] = a.value()[i * D + c0 + j];
    return a.tape()->emit(std::move(out), {a.node()}, "slice_cols", [a, B, D, c0, W](NodeT<T>* node) {
        return [a, B, D, c0, W, node]() {
            auto& ga = a.node()->grad_acc();
            for (int64_t i = 0; i < B; ++i)
                for (int64_t j = 0; j < W; ++j) ga[i * D + c0 + j] += node->grad[i * W + j];
        };
    });
}

// Inverted-dropout with a caller-supplied 0/1 mask.
template <class T>
VarT<T> dropout_mask(VarT<T> a, TensorT<T> mask, double keep_prob) {
    if (!a.value().same_shape(mask)) throw ContractViolation("dropout_mask: shape mismatch");
    const double scale = 1.0 / keep_prob;
    TensorT<T> out(a.shape());
    const int64_t n = out.size();
    for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(a.value()[i] * mask[i] * scale);
    auto ms = std::make_shared<TensorT<T>>(std::move(mask));
    return a.tape()->emit(std::move(out), {a.node()}, "dropout", [a, ms, scale](NodeT<T>* node) {
        return [a, ms, scale, node]() {
            auto& ga = a.node()->grad_acc();
            const int64_t n = node->value.size();
            for (int64_t i = 0; i < n; ++i) ga[i] += static_cast<T>(node->grad[i] * (*ms)[i] * scale);
        };
    });
}

// loss-side helper: fully-connected layer y = x*W + b.
template <class T>
VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace chorus::ag
