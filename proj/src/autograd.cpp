#include "silicon/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace silicon::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

void require(bool cond, const char* what) {
    if (!cond) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_string() +
                                    " vs " + b->value.shape_string());
}

template <typename F>
Var unary(const Var& a, F&& f, std::function<void(Node&)> bw) {
    Tensor out(a->value.shape());
    const auto& in = a->value;
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_node(std::move(out), {a}, std::move(bw));
}

struct Axis {
    std::vector<int> i0, i1;
    std::vector<double> w1;
};

Axis bilinear_axis(int in, int out) {
    Axis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.w1.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        int lo = static_cast<int>(std::floor(src));
        int hi = std::min(lo + 1, in - 1);
        ax.i0[o] = lo;
        ax.i1[o] = hi;
        ax.w1[o] = src - lo;
    }
    return ax;
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return n;
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                   [](const Var& p) { return p && p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return n;
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!root->requires_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order)
        if (n->backward_fn) n->grad = Tensor(n->value.shape(), 0.0);
    root->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

void zero_grad(std::span<const Var> params) {
    for (const auto& p : params) p->grad = Tensor(p->value.shape(), 0.0);
}

double scalar(const Var& v) {
    if (v->value.size() != 1) throw std::invalid_argument("scalar: tensor has more than one element");
    return v->value[0];
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const double sign[2] = {1.0, -1.0};
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[k];
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        auto& a = n.parents[0];
        auto& b = n.parents[1];
        if (a->requires_grad) {
            auto& g = a->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            auto& g = b->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a->value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double v) { return s * v; }, [s](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double v) { return v + s; }, [](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var relu(const Var& a) {
    return unary(a, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& n) {
        auto& p = *n.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (p.value[i] > 0.0) g[i] += n.grad[i];
    });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(a, [slope](double v) { return v > 0.0 ? v : slope * v; }, [slope](Node& n) {
        auto& p = *n.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (p.value[i] > 0.0 ? 1.0 : slope);
    });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](Node& n) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double s = n.value[i];
                g[i] += n.grad[i] * s * (1.0 - s);
            }
        });
}

Var exp(const Var& a) {
    return unary(a, [](double v) { return std::exp(v); }, [](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

Var square(const Var& a) {
    return unary(a, [](double v) { return v * v; }, [](Node& n) {
        auto& p = *n.parents[0];
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.value[i] * n.grad[i];
    });
}

Var mul_channel_broadcast(const Var& x, const Var& a) {
    const auto& xs = x->value;
    const auto& as = a->value;
    if (xs.rank() != 3 || as.rank() != 3 || as.dim(0) != 1 || as.dim(1) != xs.dim(1) || as.dim(2) != xs.dim(2))
        throw std::invalid_argument("mul_channel_broadcast: shape mismatch " + xs.shape_string() + " vs " +
                                    as.shape_string());
    const int c = xs.dim(0);
    const std::size_t plane = as.size();
    Tensor out(xs.shape());
    for (int ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < plane; ++i) out[ch * plane + i] = xs[ch * plane + i] * as[i];
    return make_node(std::move(out), {x, a}, [c, plane](Node& n) {
        auto& x = *n.parents[0];
        auto& a = *n.parents[1];
        if (x.requires_grad) {
            auto& g = x.grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += n.grad[ch * plane + i] * a.value[i];
        }
        if (a.requires_grad) {
            auto& g = a.grad_buffer();
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < plane; ++i) g[i] += n.grad[ch * plane + i] * x.value[ch * plane + i];
        }
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a->value.values()) s += v;
    return make_node(Tensor({1}, s), {a}, [](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        const double d = n.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d;
    });
}

Var mean(const Var& a) {
    require(a->value.size() > 0, "mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

Var add_all(std::span<const Var> terms) {
    require(!terms.empty(), "add_all: no terms");
    Tensor out(terms[0]->value.shape(), 0.0);
    for (const auto& t : terms) {
        require_same_shape(terms[0], t, "add_all");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t->value[i];
    }
    return make_node(std::move(out), std::vector<Var>(terms.begin(), terms.end()), [](Node& n) {
        for (auto& p : n.parents) {
            if (!p->requires_grad) continue;
            auto& g = p->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var mean_abs_diff(const Var& a, const Var& b) {
    require_same_shape(a, b, "mean_abs_diff");
    const double inv = 1.0 / static_cast<double>(a->value.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += std::abs(a->value[i] - b->value[i]);
    return make_node(Tensor({1}, s * inv), {a, b}, [inv](Node& n) {
        auto& a = *n.parents[0];
        auto& b = *n.parents[1];
        const double d = n.grad[0] * inv;
        for (std::size_t i = 0; i < a.value.size(); ++i) {
            const double diff = a.value[i] - b.value[i];
            const double sgn = diff > 0 ? 1.0 : (diff < 0 ? -1.0 : 0.0);
            if (a.requires_grad) a.grad_buffer()[i] += d * sgn;
            if (b.requires_grad) b.grad_buffer()[i] -= d * sgn;
        }
    });
}

Var mean_sq_diff(const Var& a, const Var& b) {
    require_same_shape(a, b, "mean_sq_diff");
    return mean(square(sub(a, b)));
}

Var reshape(const Var& a, std::vector<int> shape) {
    require(shape_volume(shape) == a->value.size(), "reshape: volume mismatch");
    return make_node(a->value.reshaped(std::move(shape)), {a}, [](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var concat_channels(std::span<const Var> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const int h = parts[0]->value.dim(1), w = parts[0]->value.dim(2);
    int c = 0;
    for (const auto& p : parts) {
        if (p->value.rank() != 3 || p->value.dim(1) != h || p->value.dim(2) != w)
            throw std::invalid_argument("concat_channels: spatial mismatch " + p->value.shape_string());
        c += p->value.dim(0);
    }
    Tensor out = Tensor::chw(c, h, w);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p->value.storage().begin(), p->value.storage().end(), out.storage().begin() + off);
        off += p->value.size();
    }
    return make_node(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& n) {
        std::size_t off = 0;
        for (auto& p : n.parents) {
            const std::size_t len = p->value.size();
            if (p->requires_grad) {
                auto& g = p->grad_buffer();
                for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
            }
            off += len;
        }
    });
}

Var concat_flat(std::span<const Var> parts) {
    require(!parts.empty(), "concat_flat: no inputs");
    std::vector<double> data;
    for (const auto& p : parts) data.insert(data.end(), p->value.storage().begin(), p->value.storage().end());
    const int len = static_cast<int>(data.size());
    return make_node(Tensor({len}, std::move(data)), std::vector<Var>(parts.begin(), parts.end()),
                     [](Node& n) {
                         std::size_t off = 0;
                         for (auto& p : n.parents) {
                             const std::size_t len = p->value.size();
                             if (p->requires_grad) {
                                 auto& g = p->grad_buffer();
                                 for (std::size_t i = 0; i < len; ++i) g[i] += n.grad[off + i];
                             }
                             off += len;
                         }
                     });
}

Var broadcast_spatial(const Var& v, int h, int w) {
    require(v->value.rank() == 1, "broadcast_spatial: expects a vector");
    const int d = v->value.dim(0);
    Tensor out = Tensor::chw(d, h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int c = 0; c < d; ++c)
        std::fill_n(out.data() + c * plane, plane, v->value[c]);
    return make_node(std::move(out), {v}, [d, plane](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int c = 0; c < d; ++c) {
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += n.grad[c * plane + i];
            g[c] += s;
        }
    });
}

Var upsample_bilinear(const Var& x, int h, int w) {
    require(x->value.rank() == 3, "upsample_bilinear: expects (C,H,W)");
    const int c = x->value.dim(0), ih = x->value.dim(1), iw = x->value.dim(2);
    auto ay = std::make_shared<Axis>(bilinear_axis(ih, h));
    auto ax = std::make_shared<Axis>(bilinear_axis(iw, w));
    Tensor out = Tensor::chw(c, h, w);
    const auto& in = x->value;
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < h; ++r) {
            const double wy = ay->w1[r];
            for (int q = 0; q < w; ++q) {
                const double wx = ax->w1[q];
                const double top = (1 - wx) * in.at(ch, ay->i0[r], ax->i0[q]) + wx * in.at(ch, ay->i0[r], ax->i1[q]);
                const double bot = (1 - wx) * in.at(ch, ay->i1[r], ax->i0[q]) + wx * in.at(ch, ay->i1[r], ax->i1[q]);
                out.at(ch, r, q) = (1 - wy) * top + wy * bot;
            }
        }
    return make_node(std::move(out), {x}, [ay, ax, c, h, w](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch)
            for (int r = 0; r < h; ++r) {
                const double wy = ay->w1[r];
                for (int q = 0; q < w; ++q) {
                    const double wx = ax->w1[q];
                    const double d = n.grad.at(ch, r, q);
                    g.at(ch, ay->i0[r], ax->i0[q]) += d * (1 - wy) * (1 - wx);
                    g.at(ch, ay->i0[r], ax->i1[q]) += d * (1 - wy) * wx;
                    g.at(ch, ay->i1[r], ax->i0[q]) += d * wy * (1 - wx);
                    g.at(ch, ay->i1[r], ax->i1[q]) += d * wy * wx;
                }
            }
    });
}

Var global_avg_pool(const Var& x) {
    require(x->value.rank() == 3, "global_avg_pool: expects (C,H,W)");
    const int c = x->value.dim(0);
    const std::size_t plane = static_cast<std::size_t>(x->value.dim(1)) * x->value.dim(2);
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += x->value[ch * plane + i];
        out[ch] = s / static_cast<double>(plane);
    }
    return make_node(std::move(out), {x}, [c, plane](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (int ch = 0; ch < c; ++ch) {
            const double d = n.grad[ch] / static_cast<double>(plane);
            for (std::size_t i = 0; i < plane; ++i) g[ch * plane + i] += d;
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    const auto& xs = x->value;
    const auto& ws = weight->value;
    if (xs.rank() != 3 || ws.rank() != 4 || ws.dim(1) != xs.dim(0) || ws.dim(2) != ws.dim(3))
        throw std::invalid_argument("conv2d: incompatible shapes x" + xs.shape_string() + " w" +
                                    ws.shape_string());
    require(stride >= 1, "conv2d: stride must be positive");
    const int cin = xs.dim(0), h = xs.dim(1), w = xs.dim(2);
    const int cout = ws.dim(0), k = ws.dim(2);
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (w + 2 * pad - k) / stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d: kernel larger than padded input");
    if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != cout))
        throw std::invalid_argument("conv2d: bias shape mismatch");

    const int rows = cin * k * k;
    const int cols = oh * ow;
    auto col = std::make_shared<RowMat>(rows, cols);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const int row = (c * k + ky) * k + kx;
                double* dst = col->row(row).data();
                for (int r = 0; r < oh; ++r) {
                    const int iy = r * stride - pad + ky;
                    for (int q = 0; q < ow; ++q) {
                        const int ix = q * stride - pad + kx;
                        dst[r * ow + q] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? xs.at(c, iy, ix) : 0.0;
                    }
                }
            }

    Tensor out = Tensor::chw(cout, oh, ow);
    ConstMatMap wm(ws.data(), cout, rows);
    MatMap om(out.data(), cout, cols);
    om.noalias() = wm * (*col);
    if (bias)
        for (int o = 0; o < cout; ++o) om.row(o).array() += bias->value[o];

    std::vector<Var> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node(std::move(out), std::move(parents),
                     [col, cin, h, w, k, stride, pad, oh, ow, rows, cols, cout](Node& n) {
                         ConstMatMap gm(n.grad.data(), cout, cols);
                         auto& x = *n.parents[0];
                         auto& wt = *n.parents[1];
                         if (wt.requires_grad) {
                             MatMap gw(wt.grad_buffer().data(), cout, rows);
                             gw.noalias() += gm * col->transpose();
                         }
                         if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
                             auto& gb = n.parents[2]->grad_buffer();
                             for (int o = 0; o < cout; ++o) gb[o] += gm.row(o).sum();
                         }
                         if (x.requires_grad) {
                             ConstMatMap wm(wt.value.data(), cout, rows);
                             RowMat dcol = wm.transpose() * gm;
                             auto& gx = x.grad_buffer();
                             for (int c = 0; c < cin; ++c)
                                 for (int ky = 0; ky < k; ++ky)
                                     for (int kx = 0; kx < k; ++kx) {
                                         const double* src = dcol.row((c * k + ky) * k + kx).data();
                                         for (int r = 0; r < oh; ++r) {
                                             const int iy = r * stride - pad + ky;
                                             if (iy < 0 || iy >= h) continue;
                                             for (int q = 0; q < ow; ++q) {
                                                 const int ix = q * stride - pad + kx;
                                                 if (ix >= 0 && ix < w) gx.at(c, iy, ix) += src[r * ow + q];
                                             }
                                         }
                                     }
                         }
                     });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const auto& xs = x->value;
    require(xs.rank() == 3, "instance_norm: expects (C,H,W)");
    const int c = xs.dim(0);
    if (gamma->value.size() != static_cast<std::size_t>(c) || beta->value.size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("instance_norm: affine parameter size mismatch");
    const std::size_t plane = static_cast<std::size_t>(xs.dim(1)) * xs.dim(2);

    auto xhat = std::make_shared<Tensor>(xs.shape());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    Tensor out(xs.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* src = xs.data() + ch * plane;
        double m = 0.0;
        for (std::size_t i = 0; i < plane; ++i) m += src[i];
        m /= static_cast<double>(plane);
        double v = 0.0;
        for (std::size_t i = 0; i < plane; ++i) v += (src[i] - m) * (src[i] - m);
        v /= static_cast<double>(plane);
        const double is = 1.0 / std::sqrt(v + eps);
        (*inv_std)[ch] = is;
        for (std::size_t i = 0; i < plane; ++i) {
            const double xh = (src[i] - m) * is;
            (*xhat)[ch * plane + i] = xh;
            out[ch * plane + i] = gamma->value[ch] * xh + beta->value[ch];
        }
    }
    return make_node(std::move(out), {x, gamma, beta}, [xhat, inv_std, c, plane](Node& n) {
        auto& x = *n.parents[0];
        auto& gamma = *n.parents[1];
        auto& beta = *n.parents[2];
        const double np = static_cast<double>(plane);
        for (int ch = 0; ch < c; ++ch) {
            const double* dy = n.grad.data() + ch * plane;
            const double* xh = xhat->data() + ch * plane;
            double sdy = 0.0, sdyx = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                sdy += dy[i];
                sdyx += dy[i] * xh[i];
            }
            if (beta.requires_grad) beta.grad_buffer()[ch] += sdy;
            if (gamma.requires_grad) gamma.grad_buffer()[ch] += sdyx;
            if (x.requires_grad) {
                const double g = gamma.value[ch];
                const double is = (*inv_std)[ch];
                double* gx = x.grad_buffer().data() + ch * plane;
                const double mdy = g * sdy / np, mdyx = g * sdyx / np;
                for (std::size_t i = 0; i < plane; ++i) gx[i] += is * (g * dy[i] - mdy - xh[i] * mdyx);
            }
        }
    });
}

Var linear(const Var& v, const Var& weight, const Var& bias) {
    const auto& ws = weight->value;
    if (v->value.rank() != 1 || ws.rank() != 2 || ws.dim(1) != v->value.dim(0) || bias->value.size() != static_cast<std::size_t>(ws.dim(0)))
        throw std::invalid_argument("linear: incompatible shapes v" + v->value.shape_string() + " w" +
                                    ws.shape_string());
    const int out_dim = ws.dim(0), in_dim = ws.dim(1);
    Tensor out({out_dim});
    ConstMatMap wm(ws.data(), out_dim, in_dim);
    ConstVecMap vm(v->value.data(), in_dim);
    VecMap om(out.data(), out_dim);
    om.noalias() = wm * vm;
    for (int o = 0; o < out_dim; ++o) out[o] += bias->value[o];
    return make_node(std::move(out), {v, weight, bias}, [out_dim, in_dim](Node& n) {
        auto& v = *n.parents[0];
        auto& w = *n.parents[1];
        auto& b = *n.parents[2];
        ConstVecMap gm(n.grad.data(), out_dim);
        if (b.requires_grad) {
            auto& gb = b.grad_buffer();
            for (int o = 0; o < out_dim; ++o) gb[o] += gm[o];
        }
        if (w.requires_grad) {
            MatMap gw(w.grad_buffer().data(), out_dim, in_dim);
            gw.noalias() += gm * ConstVecMap(v.value.data(), in_dim).transpose();
        }
        if (v.requires_grad) {
            VecMap gv(v.grad_buffer().data(), in_dim);
            gv.noalias() += ConstMatMap(w.value.data(), out_dim, in_dim).transpose() * gm;
        }
    });
}

}  // namespace silicon::ad
