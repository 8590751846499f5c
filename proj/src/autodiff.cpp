#include "relemb/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace relemb::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace

int Tape::check(Value v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw std::logic_error("Value does not belong to this tape");
    return v.id;
}

const Tensor& Tape::grad(Value v) const {
    const Node& n = nodes_[check(v)];
    if (!n.needs_grad) throw std::logic_error("grad requested for non-tracked value");
    return n.grad;
}

bool Tape::track(std::initializer_list<Value> parents) const {
    if (!grad_enabled_) return false;
    for (Value p : parents)
        if (nodes_[p.id].needs_grad) return true;
    return false;
}

Value Tape::make(Tensor val, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.val = std::move(val);
    n.needs_grad = needs_grad && grad_enabled_;
    if (n.needs_grad) n.grad = Tensor(n.val.rows(), n.val.cols());
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::input(Tensor t, bool needs_grad) {
    return make(std::move(t), needs_grad, {});
}

Value Tape::add(Value a, Value b) {
    const Tensor& A = val(a);
    require(A.same_shape(val(b)), "add: shape mismatch");
    Tensor out = A;
    {
        const Tensor& B = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    }
    Value o = make(std::move(out), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            for (Value p : {a, b}) {
                if (!t.nodes_[p.id].needs_grad) continue;
                Tensor& gp = t.grad_buf(p.id);
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        };
    return o;
}

Value Tape::sub(Value a, Value b) {
    const Tensor& A = val(a);
    require(A.same_shape(val(b)), "sub: shape mismatch");
    Tensor out = A;
    {
        const Tensor& B = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    }
    Value o = make(std::move(out), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            if (t.nodes_[a.id].needs_grad) {
                Tensor& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (t.nodes_[b.id].needs_grad) {
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        };
    return o;
}

Value Tape::mul(Value a, Value b) {
    const Tensor& A = val(a);
    require(A.same_shape(val(b)), "mul: shape mismatch");
    Tensor out = A;
    {
        const Tensor& B = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    }
    Value o = make(std::move(out), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& A2 = t.val(a);
            const Tensor& B2 = t.val(b);
            if (t.nodes_[a.id].needs_grad) {
                Tensor& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B2[i];
            }
            if (t.nodes_[b.id].needs_grad) {
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A2[i];
            }
        };
    return o;
}

Value Tape::affine(Value a, double k, double c) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * out[i] + c;
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, k](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += k * g[i];
        };
    return o;
}

Value Tape::matmul(Value a, Value b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.cols() == B.rows(), "matmul: inner dimension mismatch");
    std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = A.row_ptr(i);
        double* or_ = out.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            double av = ar[p];
            const double* br = B.row_ptr(p);
            for (std::size_t j = 0; j < n; ++j) or_[j] += av * br[j];
        }
    }
    Value o = make(std::move(out), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& A2 = t.val(a);
            const Tensor& B2 = t.val(b);
            std::size_t m = A2.rows(), k = A2.cols(), n = B2.cols();
            if (t.nodes_[a.id].needs_grad) { // dA += g . B^T
                Tensor& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* gr = g.row_ptr(i);
                        const double* br = B2.row_ptr(p);
                        for (std::size_t j = 0; j < n; ++j) s += gr[j] * br[j];
                        ga.at(i, p) += s;
                    }
            }
            if (t.nodes_[b.id].needs_grad) { // dB += A^T . g
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < m; ++i) {
                        double av = A2.at(i, p);
                        const double* gr = g.row_ptr(i);
                        double* gbr = gb.row_ptr(p);
                        for (std::size_t j = 0; j < n; ++j) gbr[j] += av * gr[j];
                    }
            }
        };
    return o;
}

Value Tape::matmul_nt(Value a, Value b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.cols() == B.cols(), "matmul_nt: inner dimension mismatch");
    std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* ar = A.row_ptr(i);
        double* or_ = out.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double* br = B.row_ptr(j);
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
            or_[j] = s;
        }
    }
    Value o = make(std::move(out), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad; // [m,n]
            const Tensor& A2 = t.val(a);
            const Tensor& B2 = t.val(b);
            std::size_t m = A2.rows(), k = A2.cols(), n = B2.rows();
            if (t.nodes_[a.id].needs_grad) { // dA += g . B
                Tensor& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        const double* br = B2.row_ptr(j);
                        double* gar = ga.row_ptr(i);
                        for (std::size_t p = 0; p < k; ++p) gar[p] += gv * br[p];
                    }
            }
            if (t.nodes_[b.id].needs_grad) { // dB += g^T . A
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double gv = g.at(i, j);
                        if (gv == 0.0) continue;
                        const double* ar = A2.row_ptr(i);
                        double* gbr = gb.row_ptr(j);
                        for (std::size_t p = 0; p < k; ++p) gbr[p] += gv * ar[p];
                    }
            }
        };
    return o;
}

Value Tape::add_rowvec(Value x, Value b) {
    const Tensor& X = val(x);
    const Tensor& B = val(b);
    require(B.rows() == 1 && B.cols() == X.cols(), "add_rowvec: shape mismatch");
    Tensor out = X;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        double* orow = out.row_ptr(r);
        for (std::size_t c = 0; c < out.cols(); ++c) orow[c] += B[c];
    }
    Value o = make(std::move(out), track({x, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, b](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            if (t.nodes_[x.id].needs_grad) {
                Tensor& gx = t.grad_buf(x.id);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (t.nodes_[b.id].needs_grad) {
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double* grow = g.row_ptr(r);
                    for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += grow[c];
                }
            }
        };
    return o;
}

Value Tape::relu(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (X[i] > 0.0) ga[i] += g[i];
        };
    return o;
}

Value Tape::gelu(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = out[i];
        out[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = X[i];
                double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] += g[i] * (phi + x * pdf);
            }
        };
    return o;
}

Value Tape::tanh(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& Y = t.val(o);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - Y[i] * Y[i]);
        };
    return o;
}

Value Tape::sigmoid(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& Y = t.val(o);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * Y[i] * (1.0 - Y[i]);
        };
    return o;
}

Value Tape::abs(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            // subgradient 0 at the kink
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * (X[i] > 0.0 ? 1.0 : (X[i] < 0.0 ? -1.0 : 0.0));
        };
    return o;
}

Value Tape::log(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / X[i];
        };
    return o;
}

Value Tape::sqrt(Value a) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& Y = t.val(o);
            Tensor& ga = t.grad_buf(a.id);
            // gradient defined 0 at exactly 0 (norm of identical vectors)
            for (std::size_t i = 0; i < g.size(); ++i)
                if (Y[i] > 0.0) ga[i] += g[i] * 0.5 / Y[i];
        };
    return o;
}

Value Tape::clamp(Value a, double lo, double hi) {
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(hi, std::max(lo, out[i]));
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, lo, hi](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X = t.val(a);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (X[i] > lo && X[i] < hi) ga[i] += g[i];
        };
    return o;
}

Value Tape::softmax_rows(Value a, const std::vector<unsigned char>* valid) {
    const Tensor& X = val(a);
    if (valid) require(valid->size() == X.cols(), "softmax_rows: mask size mismatch");
    Tensor out(X.rows(), X.cols());
    std::vector<unsigned char> mask = valid ? *valid : std::vector<unsigned char>(X.cols(), 1);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const double* xr = X.row_ptr(r);
        double* yr = out.row_ptr(r);
        double mx = -HUGE_VAL;
        for (std::size_t c = 0; c < X.cols(); ++c)
            if (mask[c] && xr[c] > mx) mx = xr[c];
        double z = 0.0;
        for (std::size_t c = 0; c < X.cols(); ++c) {
            if (mask[c]) {
                yr[c] = std::exp(xr[c] - mx);
                z += yr[c];
            } else {
                yr[c] = 0.0;
            }
        }
        for (std::size_t c = 0; c < X.cols(); ++c) yr[c] /= z;
    }
    Value o = make(std::move(out), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& Y = t.val(o);
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t r = 0; r < Y.rows(); ++r) {
                const double* gr = g.row_ptr(r);
                const double* yr = Y.row_ptr(r);
                double* gar = ga.row_ptr(r);
                double s = 0.0;
                for (std::size_t c = 0; c < Y.cols(); ++c) s += gr[c] * yr[c];
                for (std::size_t c = 0; c < Y.cols(); ++c) gar[c] += yr[c] * (gr[c] - s);
            }
        };
    return o;
}

Value Tape::layer_norm(Value x, Value gain, Value bias, double eps) {
    const Tensor& X = val(x);
    const Tensor& G = val(gain);
    const Tensor& B = val(bias);
    require(G.rows() == 1 && G.cols() == X.cols(), "layer_norm: gain shape");
    require(B.rows() == 1 && B.cols() == X.cols(), "layer_norm: bias shape");
    std::size_t n = X.cols();
    Tensor out(X.rows(), n);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const double* xr = X.row_ptr(r);
        double* yr = out.row_ptr(r);
        double mu = 0.0;
        for (std::size_t c = 0; c < n; ++c) mu += xr[c];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
            double d = xr[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < n; ++c) yr[c] = (xr[c] - mu) * inv * G[c] + B[c];
    }
    Value o = make(std::move(out), track({x, gain, bias}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, gain, bias, eps](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            const Tensor& X2 = t.val(x);
            const Tensor& G2 = t.val(gain);
            std::size_t n = X2.cols();
            double dn = static_cast<double>(n);
            bool need_x = t.nodes_[x.id].needs_grad;
            bool need_g = t.nodes_[gain.id].needs_grad;
            bool need_b = t.nodes_[bias.id].needs_grad;
            for (std::size_t r = 0; r < X2.rows(); ++r) {
                const double* xr = X2.row_ptr(r);
                const double* gr = g.row_ptr(r);
                double mu = 0.0;
                for (std::size_t c = 0; c < n; ++c) mu += xr[c];
                mu /= dn;
                double var = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    double d = xr[c] - mu;
                    var += d * d;
                }
                var /= dn;
                double inv = 1.0 / std::sqrt(var + eps);
                if (need_g || need_b) {
                    Tensor* gg = need_g ? &t.grad_buf(gain.id) : nullptr;
                    Tensor* gb = need_b ? &t.grad_buf(bias.id) : nullptr;
                    for (std::size_t c = 0; c < n; ++c) {
                        double xhat = (xr[c] - mu) * inv;
                        if (gg) (*gg)[c] += gr[c] * xhat;
                        if (gb) (*gb)[c] += gr[c];
                    }
                }
                if (need_x) {
                    // dxhat = g * gain; standard layer-norm backward
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                        double xhat = (xr[c] - mu) * inv;
                        double dxhat = gr[c] * G2[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    Tensor& gx = t.grad_buf(x.id);
                    double* gxr = gx.row_ptr(r);
                    for (std::size_t c = 0; c < n; ++c) {
                        double xhat = (xr[c] - mu) * inv;
                        double dxhat = gr[c] * G2[c];
                        gxr[c] += inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / dn);
                    }
                }
            }
        };
    return o;
}

Value Tape::embed_rows(Value table, const std::vector<int>& ids) {
    const Tensor& T = val(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < T.rows(),
                "embed_rows: id out of range");
    Tensor out(ids.size(), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = T.row_ptr(static_cast<std::size_t>(ids[i]));
        double* dst = out.row_ptr(i);
        std::copy(src, src + T.cols(), dst);
    }
    Value o = make(std::move(out), track({table}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, table, ids](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            Tensor& gt = t.grad_buf(table.id);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double* gr = g.row_ptr(i);
                double* dst = gt.row_ptr(static_cast<std::size_t>(ids[i]));
                for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += gr[c];
            }
        };
    return o;
}

Value Tape::replace_row(Value x, std::size_t row, Value r) {
    const Tensor& X = val(x);
    const Tensor& R = val(r);
    require(row < X.rows(), "replace_row: row out of range");
    require(R.rows() == 1 && R.cols() == X.cols(), "replace_row: row shape mismatch");
    Tensor out = X;
    std::copy(R.data(), R.data() + R.cols(), out.row_ptr(row));
    Value o = make(std::move(out), track({x, r}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, r, row](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            if (t.nodes_[x.id].needs_grad) {
                Tensor& gx = t.grad_buf(x.id);
                for (std::size_t rr = 0; rr < g.rows(); ++rr) {
                    if (rr == row) continue;
                    const double* gr = g.row_ptr(rr);
                    double* dst = gx.row_ptr(rr);
                    for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += gr[c];
                }
            }
            if (t.nodes_[r.id].needs_grad) {
                Tensor& grr = t.grad_buf(r.id);
                const double* gr = g.row_ptr(row);
                for (std::size_t c = 0; c < g.cols(); ++c) grr[c] += gr[c];
            }
        };
    return o;
}

Value Tape::slice_rows(Value x, std::size_t from, std::size_t n) {
    const Tensor& X = val(x);
    require(from + n <= X.rows(), "slice_rows: out of range");
    Tensor out(n, X.cols());
    for (std::size_t r = 0; r < n; ++r) {
        const double* src = X.row_ptr(from + r);
        std::copy(src, src + X.cols(), out.row_ptr(r));
    }
    Value o = make(std::move(out), track({x}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, from, n](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            Tensor& gx = t.grad_buf(x.id);
            for (std::size_t r = 0; r < n; ++r) {
                const double* gr = g.row_ptr(r);
                double* dst = gx.row_ptr(from + r);
                for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += gr[c];
            }
        };
    return o;
}

Value Tape::slice_cols(Value x, std::size_t from, std::size_t n) {
    const Tensor& X = val(x);
    require(from + n <= X.cols(), "slice_cols: out of range");
    Tensor out(X.rows(), n);
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const double* src = X.row_ptr(r) + from;
        std::copy(src, src + n, out.row_ptr(r));
    }
    Value o = make(std::move(out), track({x}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, from, n](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            Tensor& gx = t.grad_buf(x.id);
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const double* gr = g.row_ptr(r);
                double* dst = gx.row_ptr(r) + from;
                for (std::size_t c = 0; c < n; ++c) dst[c] += gr[c];
            }
        };
    return o;
}

Value Tape::concat_cols(const std::vector<Value>& xs) {
    require(!xs.empty(), "concat_cols: empty input");
    std::size_t rows = val(xs[0]).rows();
    std::size_t cols = 0;
    for (Value v : xs) {
        require(val(v).rows() == rows, "concat_cols: row count mismatch");
        cols += val(v).cols();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Value v : xs) {
        const Tensor& X = val(v);
        for (std::size_t r = 0; r < rows; ++r)
            std::copy(X.row_ptr(r), X.row_ptr(r) + X.cols(), out.row_ptr(r) + off);
        off += X.cols();
    }
    bool ng = grad_enabled_ && [&] {
        for (Value v : xs)
            if (nodes_[v.id].needs_grad) return true;
        return false;
    }();
    Value o = make(std::move(out), ng, {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, xs](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            std::size_t off = 0;
            for (Value v : xs) {
                const Tensor& X = t.val(v);
                if (t.nodes_[v.id].needs_grad) {
                    Tensor& gx = t.grad_buf(v.id);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                        const double* gr = g.row_ptr(r) + off;
                        double* dst = gx.row_ptr(r);
                        for (std::size_t c = 0; c < X.cols(); ++c) dst[c] += gr[c];
                    }
                }
                off += X.cols();
            }
        };
    return o;
}

Value Tape::concat_rows(const std::vector<Value>& xs) {
    require(!xs.empty(), "concat_rows: empty input");
    std::size_t cols = val(xs[0]).cols();
    std::size_t rows = 0;
    for (Value v : xs) {
        require(val(v).cols() == cols, "concat_rows: column count mismatch");
        rows += val(v).rows();
    }
    Tensor out(rows, cols);
    std::size_t off = 0;
    for (Value v : xs) {
        const Tensor& X = val(v);
        for (std::size_t r = 0; r < X.rows(); ++r)
            std::copy(X.row_ptr(r), X.row_ptr(r) + cols, out.row_ptr(off + r));
        off += X.rows();
    }
    bool ng = grad_enabled_ && [&] {
        for (Value v : xs)
            if (nodes_[v.id].needs_grad) return true;
        return false;
    }();
    Value o = make(std::move(out), ng, {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, xs](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            std::size_t off = 0;
            for (Value v : xs) {
                const Tensor& X = t.val(v);
                if (t.nodes_[v.id].needs_grad) {
                    Tensor& gx = t.grad_buf(v.id);
                    for (std::size_t r = 0; r < X.rows(); ++r) {
                        const double* gr = g.row_ptr(off + r);
                        double* dst = gx.row_ptr(r);
                        for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += gr[c];
                    }
                }
                off += X.rows();
            }
        };
    return o;
}

Value Tape::mean_rows(Value x, const std::vector<unsigned char>& mask) {
    const Tensor& X = val(x);
    require(mask.size() == X.rows(), "mean_rows: mask size mismatch");
    std::size_t count = 0;
    for (unsigned char m : mask)
        if (m) ++count;
    require(count > 0, "mean_rows: mask selects no rows");
    Tensor out(1, X.cols());
    for (std::size_t r = 0; r < X.rows(); ++r) {
        if (!mask[r]) continue;
        const double* xr = X.row_ptr(r);
        for (std::size_t c = 0; c < X.cols(); ++c) out[c] += xr[c];
    }
    double inv = 1.0 / static_cast<double>(count);
    for (std::size_t c = 0; c < X.cols(); ++c) out[c] *= inv;
    Value o = make(std::move(out), track({x}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, x, mask, inv](Tape& t) {
            const Tensor& g = t.nodes_[o.id].grad;
            Tensor& gx = t.grad_buf(x.id);
            for (std::size_t r = 0; r < gx.rows(); ++r) {
                if (!mask[r]) continue;
                double* dst = gx.row_ptr(r);
                for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += g[c] * inv;
            }
        };
    return o;
}

Value Tape::sum(Value a) {
    const Tensor& X = val(a);
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
    Value o = make(Tensor::scalar(s), track({a}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a](Tape& t) {
            double g = t.nodes_[o.id].grad[0];
            Tensor& ga = t.grad_buf(a.id);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        };
    return o;
}

Value Tape::dot(Value a, Value b) {
    const Tensor& A = val(a);
    const Tensor& B = val(b);
    require(A.size() == B.size(), "dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) s += A[i] * B[i];
    Value o = make(Tensor::scalar(s), track({a, b}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, a, b](Tape& t) {
            double g = t.nodes_[o.id].grad[0];
            const Tensor& A2 = t.val(a);
            const Tensor& B2 = t.val(b);
            if (t.nodes_[a.id].needs_grad) {
                Tensor& ga = t.grad_buf(a.id);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * B2[i];
            }
            if (t.nodes_[b.id].needs_grad) {
                Tensor& gb = t.grad_buf(b.id);
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * A2[i];
            }
        };
    return o;
}

Value Tape::cross_entropy_mean(Value logits, const std::vector<int>& labels) {
    const Tensor& X = val(logits);
    require(labels.size() == X.rows(), "cross_entropy_mean: label count mismatch");
    for (int y : labels)
        require(y >= 0 && static_cast<std::size_t>(y) < X.cols(),
                "cross_entropy_mean: label out of range");
    double loss = 0.0;
    for (std::size_t r = 0; r < X.rows(); ++r) {
        const double* xr = X.row_ptr(r);
        double mx = xr[0];
        for (std::size_t c = 1; c < X.cols(); ++c) mx = std::max(mx, xr[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < X.cols(); ++c) z += std::exp(xr[c] - mx);
        loss += std::log(z) + mx - xr[static_cast<std::size_t>(labels[r])];
    }
    loss /= static_cast<double>(X.rows());
    Value o = make(Tensor::scalar(loss), track({logits}), {});
    if (nodes_[o.id].needs_grad)
        nodes_[o.id].back = [o, logits, labels](Tape& t) {
            double g = t.nodes_[o.id].grad[0];
            const Tensor& X2 = t.val(logits);
            Tensor& gx = t.grad_buf(logits.id);
            double invn = 1.0 / static_cast<double>(X2.rows());
            for (std::size_t r = 0; r < X2.rows(); ++r) {
                const double* xr = X2.row_ptr(r);
                double* gr = gx.row_ptr(r);
                double mx = xr[0];
                for (std::size_t c = 1; c < X2.cols(); ++c) mx = std::max(mx, xr[c]);
                double z = 0.0;
                for (std::size_t c = 0; c < X2.cols(); ++c) z += std::exp(xr[c] - mx);
                for (std::size_t c = 0; c < X2.cols(); ++c) {
                    double p = std::exp(xr[c] - mx) / z;
                    double onehot = (static_cast<std::size_t>(labels[r]) == c) ? 1.0 : 0.0;
                    gr[c] += g * invn * (p - onehot);
                }
            }
        };
    return o;
}

void Tape::backward(Value root) {
    if (!grad_enabled_) throw std::logic_error("backward on a no-grad tape");
    Node& r = nodes_[check(root)];
    if (r.val.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!r.needs_grad) throw std::logic_error("backward: root does not depend on any tracked value");
    r.grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.needs_grad && n.back) n.back(*this);
    }
}

} // namespace relemb::nn
