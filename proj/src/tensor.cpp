#include "stgcrn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <unordered_set>

namespace stgcrn {

namespace {

bool read_test_mode_env() {
    const char* v = std::getenv("STGCRN_TEST_MODE");
    return v != nullptr && std::string(v) == "1";
}

bool g_test_mode = read_test_mode_env();
thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Tensor::Node>;

void check_finite(const std::vector<double>& v, const char* ctx) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by ") + ctx);
        }
    }
}

NodePtr make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

// Record provenance on a freshly computed node. Parents and the backward
// closure are kept only when recording is on and some input needs grads.
Tensor finish_op(NodePtr out, std::vector<NodePtr> parents,
                 std::function<void(Tensor::Node&)> backward_fn, const char* ctx) {
    if (g_test_mode) check_finite(out->value, ctx);
    bool needs = false;
    if (g_grad_enabled) {
        for (const auto& p : parents) {
            if (p->requires_grad) {
                needs = true;
                break;
            }
        }
    }
    if (needs) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

void validate_shape(const Shape& s) {
    if (s.size() > 4) {
        throw DimensionError("tensor rank " + std::to_string(s.size()) + " exceeds 4");
    }
    for (int64_t e : s) {
        if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    }
}

int64_t tail_numel(const Shape& s, size_t from) {
    int64_t n = 1;
    for (size_t i = from; i < s.size(); ++i) n *= s[i];
    return n;
}

// C(P,R) += A(P,Q) * B(Q,R); caller owns initialization of C.
void gemm_acc(const double* a, const double* b, double* c, int64_t p, int64_t q, int64_t r) {
    for (int64_t i = 0; i < p; ++i) {
        double* crow = c + i * r;
        const double* arow = a + i * q;
        for (int64_t k = 0; k < q; ++k) {
            const double av = arow[k];
            const double* brow = b + k * r;
            for (int64_t j = 0; j < r; ++j) crow[j] += av * brow[j];
        }
    }
}

std::vector<double> transpose_copy(const double* m, int64_t p, int64_t q) {
    std::vector<double> t(static_cast<size_t>(p * q));
    for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < q; ++j) t[static_cast<size_t>(j * p + i)] = m[i * q + j];
    return t;
}

void add_into(std::vector<double>& dst, const std::vector<double>& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t e : s) n *= e;
    return n;
}

bool test_mode() { return g_test_mode; }
void set_test_mode(bool on) { g_test_mode = on; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Activation activation_from_tag(const std::string& tag) {
    if (tag == "sigmoid") return Activation::Sigmoid;
    if (tag == "tanh") return Activation::Tanh;
    if (tag == "relu") return Activation::Relu;
    throw ConfigError("unknown activation tag '" + tag + "' (expected sigmoid|tanh|relu)");
}

// ---- construction ----

Tensor Tensor::zeros(Shape s) {
    validate_shape(s);
    int64_t n = shape_numel(s);
    return Tensor(make_node(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0)));
}

Tensor Tensor::full(Shape s, double v) {
    validate_shape(s);
    if (!std::isfinite(v)) throw NumericError("non-finite fill value");
    int64_t n = shape_numel(s);
    return Tensor(make_node(std::move(s), std::vector<double>(static_cast<size_t>(n), v)));
}

Tensor Tensor::identity(int64_t n) {
    if (n < 1) throw DimensionError("identity extent must be >= 1");
    std::vector<double> v(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i * n + i)] = 1.0;
    return Tensor(make_node({n, n}, std::move(v)));
}

Tensor Tensor::from_data(Shape s, std::vector<double> data) {
    validate_shape(s);
    if (shape_numel(s) != static_cast<int64_t>(data.size())) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(s));
    }
    check_finite(data, "from_data");
    return Tensor(make_node(std::move(s), std::move(data)));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::leaf(Shape s, std::vector<double> data, std::string name) {
    Tensor t = from_data(std::move(s), std::move(data));
    t.node_->requires_grad = true;
    t.node_->leaf = true;
    t.node_->name = std::move(name);
    return t;
}

int64_t Tensor::extent(int64_t axis) const {
    int64_t r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for " + shape_str(shape()));
    return node_->shape[static_cast<size_t>(axis)];
}

std::vector<double>& Tensor::values_mut() {
    if (!node_->leaf && node_->requires_grad) {
        throw ContractError("mutating a recorded intermediate tensor");
    }
    return node_->value;
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
    int64_t flat = 0;
    size_t d = 0;
    for (int64_t i : idx) {
        if (i < 0 || i >= s[d]) throw DimensionError("index out of bounds for " + shape_str(s));
        flat = flat * s[d] + i;
        ++d;
    }
    return node_->value[static_cast<size_t>(flat)];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

std::vector<double>& Tensor::grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        const_cast<Node*>(node_.get())->grad.assign(node_->value.size(), 0.0);
    }
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return Tensor(make_node(shape(), node_->value)); }

// ---- binary elementwise ----

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.values());
    add_into(out, b.values());
    auto pa = a.node_, pb = b.node_;
    return finish_op(make_node(a.shape(), std::move(out)), {pa, pb},
                     [pa, pb](Tensor::Node& self) {
                         if (pa->requires_grad) add_into(pa->grad, self.grad);
                         if (pb->requires_grad) add_into(pb->grad, self.grad);
                     },
                     "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    auto pa = a.node_, pb = b.node_;
    return finish_op(make_node(a.shape(), std::move(out)), {pa, pb},
                     [pa, pb](Tensor::Node& self) {
                         if (pa->requires_grad) add_into(pa->grad, self.grad);
                         if (pb->requires_grad) {
                             for (size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] -= self.grad[i];
                         }
                     },
                     "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    auto pa = a.node_, pb = b.node_;
    return finish_op(make_node(a.shape(), std::move(out)), {pa, pb},
                     [pa, pb](Tensor::Node& self) {
                         if (pa->requires_grad)
                             for (size_t i = 0; i < self.grad.size(); ++i)
                                 pa->grad[i] += self.grad[i] * pb->value[i];
                         if (pb->requires_grad)
                             for (size_t i = 0; i < self.grad.size(); ++i)
                                 pb->grad[i] += self.grad[i] * pa->value[i];
                     },
                     "mul");
}

Tensor add_broadcast(const Tensor& x, const Tensor& y) {
    const Shape& xs = x.shape();
    const Shape& ys = y.shape();
    if (ys.size() > xs.size()) {
        throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " +
                             shape_str(xs));
    }
    for (size_t i = 0; i < ys.size(); ++i) {
        if (ys[ys.size() - 1 - i] != xs[xs.size() - 1 - i]) {
            throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " +
                                 shape_str(xs));
        }
    }
    const int64_t yn = y.numel();
    std::vector<double> out(x.values());
    const auto& yv = y.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += yv[i % static_cast<size_t>(yn)];
    auto px = x.node_, py = y.node_;
    return finish_op(make_node(xs, std::move(out)), {px, py},
                     [px, py, yn](Tensor::Node& self) {
                         if (px->requires_grad) add_into(px->grad, self.grad);
                         if (py->requires_grad) {
                             for (size_t i = 0; i < self.grad.size(); ++i)
                                 py->grad[i % static_cast<size_t>(yn)] += self.grad[i];
                         }
                     },
                     "add_broadcast");
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

Tensor affine(const Tensor& x, double m, double shift) {
    if (!std::isfinite(m) || !std::isfinite(shift)) throw NumericError("non-finite affine coef");
    std::vector<double> out(x.values());
    for (auto& v : out) v = m * v + shift;
    auto px = x.node_;
    return finish_op(make_node(x.shape(), std::move(out)), {px},
                     [px, m](Tensor::Node& self) {
                         if (px->requires_grad)
                             for (size_t i = 0; i < self.grad.size(); ++i)
                                 px->grad[i] += m * self.grad[i];
                     },
                     "affine");
}

// ---- unary elementwise ----

namespace {

Tensor unary_op(const Tensor& x, const char* ctx, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx_from_x_y) {
    std::vector<double> out(x.values());
    for (auto& v : out) v = f(v);
    auto px = x.node_;
    auto yv = std::make_shared<std::vector<double>>(out);  // saved for backward
    return finish_op(make_node(x.shape(), std::move(out)), {px},
                     [px, yv, dfdx_from_x_y](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         for (size_t i = 0; i < self.grad.size(); ++i)
                             px->grad[i] += self.grad[i] * dfdx_from_x_y(px->value[i], (*yv)[i]);
                     },
                     ctx);
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
    return unary_op(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_t(const Tensor& x) {
    return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
    return unary_op(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
                    [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor abs_t(const Tensor& x) {
    return unary_op(x, "abs", [](double v) { return std::fabs(v); },
                    [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sqrt_t(const Tensor& x) {
    for (double v : x.values()) {
        if (v < 0) throw NumericError("sqrt of negative value");
    }
    return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); },
                    [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor elementwise(Activation act, const Tensor& x) {
    switch (act) {
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Tanh: return tanh_t(x);
        case Activation::Relu: return relu(x);
    }
    throw ConfigError("unknown activation tag");
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if ((sa.size() != 2 && sa.size() != 3) || (sb.size() != 2 && sb.size() != 3)) {
        throw DimensionError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
    }
    const int64_t p = sa[sa.size() - 2], qa = sa[sa.size() - 1];
    const int64_t qb = sb[sb.size() - 2], r = sb[sb.size() - 1];
    if (qa != qb) {
        throw DimensionError("matmul: inner extents disagree " + shape_str(sa) + " x " +
                             shape_str(sb));
    }
    const int64_t ba = sa.size() == 3 ? sa[0] : 0;
    const int64_t bb = sb.size() == 3 ? sb[0] : 0;
    if (ba > 0 && bb > 0 && ba != bb) {
        throw DimensionError("matmul: batch extents disagree " + shape_str(sa) + " x " +
                             shape_str(sb));
    }
    const int64_t q = qa;
    const int64_t batch = std::max<int64_t>({ba, bb, 0});

    Shape out_shape = batch > 0 ? Shape{batch, p, r} : Shape{p, r};
    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    const int64_t loops = batch > 0 ? batch : 1;
    for (int64_t s = 0; s < loops; ++s) {
        const double* as = av + (ba > 0 ? s * p * q : 0);
        const double* bs = bv + (bb > 0 ? s * q * r : 0);
        gemm_acc(as, bs, out.data() + s * p * r, p, q, r);
    }

    auto pa = a.node_, pb = b.node_;
    return finish_op(
        make_node(std::move(out_shape), std::move(out)), {pa, pb},
        [pa, pb, p, q, r, ba, bb, loops](Tensor::Node& self) {
            const double* dout = self.grad.data();
            for (int64_t s = 0; s < loops; ++s) {
                const double* g = dout + s * p * r;
                const double* as = pa->value.data() + (ba > 0 ? s * p * q : 0);
                const double* bs = pb->value.data() + (bb > 0 ? s * q * r : 0);
                if (pa->requires_grad) {
                    // dA += dC * B^T
                    std::vector<double> bt = transpose_copy(bs, q, r);
                    gemm_acc(g, bt.data(), pa->grad.data() + (ba > 0 ? s * p * q : 0), p, r, q);
                }
                if (pb->requires_grad) {
                    // dB += A^T * dC
                    std::vector<double> at = transpose_copy(as, p, q);
                    gemm_acc(at.data(), g, pb->grad.data() + (bb > 0 ? s * q * r : 0), q, p, r);
                }
            }
        },
        "matmul");
}

Tensor transpose_last2(const Tensor& x) {
    const Shape& s = x.shape();
    if (s.size() < 2) throw DimensionError("transpose_last2 needs rank >= 2, got " + shape_str(s));
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 1], out_shape[s.size() - 2]);
    const int64_t p = s[s.size() - 2], q = s[s.size() - 1];
    const int64_t outer = x.numel() / (p * q);
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* v = x.values().data();
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = v + o * p * q;
        double* dst = out.data() + o * p * q;
        for (int64_t i = 0; i < p; ++i)
            for (int64_t j = 0; j < q; ++j) dst[j * p + i] = src[i * q + j];
    }
    auto px = x.node_;
    return finish_op(make_node(std::move(out_shape), std::move(out)), {px},
                     [px, p, q, outer](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* g = self.grad.data();
                         for (int64_t o = 0; o < outer; ++o) {
                             const double* src = g + o * p * q;  // (q, p)
                             double* dst = px->grad.data() + o * p * q;
                             for (int64_t j = 0; j < q; ++j)
                                 for (int64_t i = 0; i < p; ++i) dst[i * q + j] += src[j * p + i];
                         }
                     },
                     "transpose_last2");
}

namespace {

// value-side permute used by forward and backward
std::vector<double> permute_copy(const std::vector<double>& v, const Shape& in_shape,
                                 const std::vector<int64_t>& perm) {
    const size_t r = in_shape.size();
    Shape out_shape(r);
    for (size_t i = 0; i < r; ++i) out_shape[i] = in_shape[static_cast<size_t>(perm[i])];
    std::vector<int64_t> in_stride(r, 1), out_stride(r, 1);
    for (size_t i = r - 1; i > 0; --i) in_stride[i - 1] = in_stride[i] * in_shape[i];
    for (size_t i = r - 1; i > 0; --i) out_stride[i - 1] = out_stride[i] * out_shape[i];
    std::vector<double> out(v.size());
    std::vector<int64_t> idx(r, 0);
    const int64_t n = static_cast<int64_t>(v.size());
    for (int64_t flat = 0; flat < n; ++flat) {
        // idx enumerates the OUTPUT coordinates in row-major order
        int64_t src = 0;
        for (size_t i = 0; i < r; ++i) src += idx[i] * in_stride[static_cast<size_t>(perm[i])];
        out[static_cast<size_t>(flat)] = v[static_cast<size_t>(src)];
        for (size_t i = r; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int64_t>& perm) {
    const Shape& s = x.shape();
    if (perm.size() != s.size()) throw DimensionError("permute rank mismatch for " + shape_str(s));
    std::vector<bool> seen(s.size(), false);
    for (int64_t p : perm) {
        if (p < 0 || p >= static_cast<int64_t>(s.size()) || seen[static_cast<size_t>(p)])
            throw DimensionError("invalid permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(s.size());
    for (size_t i = 0; i < s.size(); ++i) out_shape[i] = s[static_cast<size_t>(perm[i])];
    std::vector<double> out = permute_copy(x.values(), s, perm);
    std::vector<int64_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
    auto px = x.node_;
    Shape saved_out_shape = out_shape;
    return finish_op(make_node(std::move(out_shape), std::move(out)), {px},
                     [px, inv, saved_out_shape](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         std::vector<double> g = permute_copy(self.grad, saved_out_shape, inv);
                         add_into(px->grad, g);
                     },
                     "permute");
}

Tensor reshape(const Tensor& x, Shape s) {
    validate_shape(s);
    if (shape_numel(s) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(s) +
                             " changes element count");
    }
    auto px = x.node_;
    return finish_op(make_node(std::move(s), x.values()), {px},
                     [px](Tensor::Node& self) {
                         if (px->requires_grad) add_into(px->grad, self.grad);
                     },
                     "reshape");
}

// ---- softmax / layer norm ----

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("softmax_rows needs rank >= 1");
    const int64_t c = x.extent(-1);
    const int64_t rows = x.numel() / c;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    const double* v = x.values().data();
    for (int64_t rI = 0; rI < rows; ++rI) {
        const double* src = v + rI * c;
        double* dst = out.data() + rI * c;
        double mx = src[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, src[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (int64_t j = 0; j < c; ++j) dst[j] /= sum;
    }
    auto px = x.node_;
    auto yv = std::make_shared<std::vector<double>>(out);
    return finish_op(make_node(x.shape(), std::move(out)), {px},
                     [px, yv, c, rows](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* y = yv->data();
                         const double* dy = self.grad.data();
                         for (int64_t rI = 0; rI < rows; ++rI) {
                             const double* yr = y + rI * c;
                             const double* gr = dy + rI * c;
                             double dot = 0.0;
                             for (int64_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
                             double* dst = px->grad.data() + rI * c;
                             for (int64_t j = 0; j < c; ++j) dst[j] += yr[j] * (gr[j] - dot);
                         }
                     },
                     "softmax_rows");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int64_t c = x.extent(-1);
    if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != c || bias.extent(0) != c) {
        throw DimensionError("layer_norm: gain/bias must be rank-1 of extent " + std::to_string(c) +
                             ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    if (eps <= 0) throw ConfigError("layer_norm eps must be > 0");
    const int64_t rows = x.numel() / c;
    std::vector<double> out(static_cast<size_t>(x.numel()));
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(x.numel()));
    auto invstd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* v = x.values().data();
    const double* g = gain.values().data();
    const double* b = bias.values().data();
    for (int64_t rI = 0; rI < rows; ++rI) {
        const double* src = v + rI * c;
        double mean = 0.0;
        for (int64_t j = 0; j < c; ++j) mean += src[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            const double d = src[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        (*invstd)[static_cast<size_t>(rI)] = is;
        for (int64_t j = 0; j < c; ++j) {
            const double xh = (src[j] - mean) * is;
            (*xhat)[static_cast<size_t>(rI * c + j)] = xh;
            out[static_cast<size_t>(rI * c + j)] = xh * g[j] + b[j];
        }
    }
    auto px = x.node_, pg = gain.node_, pb = bias.node_;
    return finish_op(
        make_node(x.shape(), std::move(out)), {px, pg, pb},
        [px, pg, pb, xhat, invstd, c, rows](Tensor::Node& self) {
            const double* dy = self.grad.data();
            const double* xh = xhat->data();
            const double* gv = pg->value.data();
            for (int64_t rI = 0; rI < rows; ++rI) {
                const double* dyr = dy + rI * c;
                const double* xhr = xh + rI * c;
                if (px->requires_grad) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t j = 0; j < c; ++j) {
                        const double dxh = dyr[j] * gv[j];
                        s1 += dxh;
                        s2 += dxh * xhr[j];
                    }
                    const double is = (*invstd)[static_cast<size_t>(rI)];
                    double* dst = px->grad.data() + rI * c;
                    const double cinv = 1.0 / static_cast<double>(c);
                    for (int64_t j = 0; j < c; ++j) {
                        const double dxh = dyr[j] * gv[j];
                        dst[j] += is * (dxh - s1 * cinv - xhr[j] * s2 * cinv);
                    }
                }
                if (pg->requires_grad) {
                    for (int64_t j = 0; j < c; ++j) pg->grad[static_cast<size_t>(j)] += dyr[j] * xhr[j];
                }
                if (pb->requires_grad) {
                    for (int64_t j = 0; j < c; ++j) pb->grad[static_cast<size_t>(j)] += dyr[j];
                }
            }
        },
        "layer_norm");
}

// ---- structural ops ----

Tensor concat_axis(const std::vector<Tensor>& parts, int64_t axis) {
    if (parts.empty()) throw DimensionError("concat_axis: no inputs");
    const Shape& s0 = parts[0].shape();
    const int64_t r = static_cast<int64_t>(s0.size());
    int64_t ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) throw DimensionError("concat_axis: axis out of range");
    int64_t total_ext = 0;
    for (const Tensor& t : parts) {
        const Shape& s = t.shape();
        if (static_cast<int64_t>(s.size()) != r)
            throw DimensionError("concat_axis: rank mismatch " + shape_str(s0) + " vs " + shape_str(s));
        for (int64_t i = 0; i < r; ++i) {
            if (i != ax && s[static_cast<size_t>(i)] != s0[static_cast<size_t>(i)])
                throw DimensionError("concat_axis: shape mismatch " + shape_str(s0) + " vs " +
                                     shape_str(s));
        }
        total_ext += s[static_cast<size_t>(ax)];
    }
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(ax)] = total_ext;
    const int64_t outer = [&] {
        int64_t n = 1;
        for (int64_t i = 0; i < ax; ++i) n *= s0[static_cast<size_t>(i)];
        return n;
    }();
    const int64_t tail = tail_numel(s0, static_cast<size_t>(ax) + 1);

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    std::vector<int64_t> blocks;  // per-part block size = extent*tail
    blocks.reserve(parts.size());
    for (const Tensor& t : parts) blocks.push_back(t.extent(ax) * tail);
    const int64_t out_block = total_ext * tail;
    for (int64_t o = 0; o < outer; ++o) {
        int64_t off = 0;
        for (size_t i = 0; i < parts.size(); ++i) {
            const double* src = parts[i].values().data() + o * blocks[i];
            std::copy(src, src + blocks[i], out.data() + o * out_block + off);
            off += blocks[i];
        }
    }
    std::vector<NodePtr> ps;
    ps.reserve(parts.size());
    for (const Tensor& t : parts) ps.push_back(t.node_);
    return finish_op(make_node(std::move(out_shape), std::move(out)), ps,
                     [blocks, outer, out_block](Tensor::Node& self) {
                         const double* g = self.grad.data();
                         for (int64_t o = 0; o < outer; ++o) {
                             int64_t off = 0;
                             for (size_t i = 0; i < self.parents.size(); ++i) {
                                 auto& p = self.parents[i];
                                 if (p->requires_grad) {
                                     double* dst = p->grad.data() + o * blocks[i];
                                     const double* src = g + o * out_block + off;
                                     for (int64_t j = 0; j < blocks[i]; ++j) dst[j] += src[j];
                                 }
                                 off += blocks[i];
                             }
                         }
                     },
                     "concat_axis");
}

Tensor select_axis(const Tensor& x, int64_t axis, int64_t index) {
    const Shape& s = x.shape();
    const int64_t r = static_cast<int64_t>(s.size());
    int64_t ax = axis < 0 ? axis + r : axis;
    if (ax < 0 || ax >= r) throw DimensionError("select_axis: axis out of range");
    const int64_t ext = s[static_cast<size_t>(ax)];
    if (index < 0 || index >= ext) {
        throw DimensionError("select_axis: index " + std::to_string(index) + " out of range for " +
                             shape_str(s));
    }
    Shape out_shape;
    for (int64_t i = 0; i < r; ++i)
        if (i != ax) out_shape.push_back(s[static_cast<size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);
    int64_t outer = 1;
    for (int64_t i = 0; i < ax; ++i) outer *= s[static_cast<size_t>(i)];
    const int64_t tail = tail_numel(s, static_cast<size_t>(ax) + 1);
    std::vector<double> out(static_cast<size_t>(outer * tail));
    const double* v = x.values().data();
    for (int64_t o = 0; o < outer; ++o) {
        const double* src = v + (o * ext + index) * tail;
        std::copy(src, src + tail, out.data() + o * tail);
    }
    auto px = x.node_;
    return finish_op(make_node(std::move(out_shape), std::move(out)), {px},
                     [px, outer, tail, ext, index](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* g = self.grad.data();
                         for (int64_t o = 0; o < outer; ++o) {
                             double* dst = px->grad.data() + (o * ext + index) * tail;
                             const double* src = g + o * tail;
                             for (int64_t j = 0; j < tail; ++j) dst[j] += src[j];
                         }
                     },
                     "select_axis");
}

Tensor slice_last(const Tensor& x, int64_t start, int64_t len) {
    const int64_t c = x.extent(-1);
    if (start < 0 || len < 1 || start + len > c) {
        throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of range for " +
                             shape_str(x.shape()));
    }
    const int64_t rows = x.numel() / c;
    Shape out_shape = x.shape();
    out_shape.back() = len;
    std::vector<double> out(static_cast<size_t>(rows * len));
    const double* v = x.values().data();
    for (int64_t rI = 0; rI < rows; ++rI) {
        std::copy(v + rI * c + start, v + rI * c + start + len, out.data() + rI * len);
    }
    auto px = x.node_;
    return finish_op(make_node(std::move(out_shape), std::move(out)), {px},
                     [px, rows, c, start, len](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* g = self.grad.data();
                         for (int64_t rI = 0; rI < rows; ++rI) {
                             double* dst = px->grad.data() + rI * c + start;
                             const double* src = g + rI * len;
                             for (int64_t j = 0; j < len; ++j) dst[j] += src[j];
                         }
                     },
                     "slice_last");
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    auto px = x.node_;
    return finish_op(make_node({1}, {s}), {px},
                     [px](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double g = self.grad[0];
                         for (auto& d : px->grad) d += g;
                     },
                     "sum_all");
}

Tensor mean_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    const double n = static_cast<double>(x.numel());
    auto px = x.node_;
    return finish_op(make_node({1}, {s / n}), {px},
                     [px, n](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double g = self.grad[0] / n;
                         for (auto& d : px->grad) d += g;
                     },
                     "mean_all");
}

Tensor mean_rows(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("mean_rows needs rank >= 2, got " + shape_str(x.shape()));
    const int64_t c = x.extent(-1);
    const int64_t t = x.extent(-2);
    const int64_t outer = x.numel() / (t * c);
    Shape out_shape = x.shape();
    out_shape[out_shape.size() - 2] = 1;
    std::vector<double> out(static_cast<size_t>(outer * c), 0.0);
    const double* v = x.values().data();
    for (int64_t o = 0; o < outer; ++o) {
        double* dst = out.data() + o * c;
        for (int64_t i = 0; i < t; ++i) {
            const double* src = v + (o * t + i) * c;
            for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
        }
        for (int64_t j = 0; j < c; ++j) dst[j] /= static_cast<double>(t);
    }
    auto px = x.node_;
    return finish_op(make_node(std::move(out_shape), std::move(out)), {px},
                     [px, outer, t, c](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* g = self.grad.data();
                         for (int64_t o = 0; o < outer; ++o) {
                             const double* src = g + o * c;
                             for (int64_t i = 0; i < t; ++i) {
                                 double* dst = px->grad.data() + (o * t + i) * c;
                                 for (int64_t j = 0; j < c; ++j)
                                     dst[j] += src[j] / static_cast<double>(t);
                             }
                         }
                     },
                     "mean_rows");
}

// ---- model-specific contractions ----

Tensor node_mix(const Tensor& xg, const Tensor& w) {
    // xg: (B, N, F), w: (N, F, C) -> (B, N, C)
    if (xg.rank() != 3 || w.rank() != 3 || xg.extent(1) != w.extent(0) ||
        xg.extent(2) != w.extent(1)) {
        throw DimensionError("node_mix: incompatible shapes " + shape_str(xg.shape()) + " and " +
                             shape_str(w.shape()));
    }
    const int64_t b = xg.extent(0), n = xg.extent(1), f = xg.extent(2), c = w.extent(2);
    std::vector<double> out(static_cast<size_t>(b * n * c), 0.0);
    const double* xv = xg.values().data();
    const double* wv = w.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ni = 0; ni < n; ++ni) {
            gemm_acc(xv + (bi * n + ni) * f, wv + ni * f * c, out.data() + (bi * n + ni) * c, 1,
                     f, c);
        }
    }
    auto px = xg.node_, pw = w.node_;
    return finish_op(
        make_node({b, n, c}, std::move(out)), {px, pw},
        [px, pw, b, n, f, c](Tensor::Node& self) {
            const double* g = self.grad.data();
            if (px->requires_grad) {
                // dxg[b,n,f] = sum_c g[b,n,c] * w[n,f,c]
                for (int64_t ni = 0; ni < n; ++ni) {
                    std::vector<double> wt = transpose_copy(pw->value.data() + ni * f * c, f, c);
                    for (int64_t bi = 0; bi < b; ++bi) {
                        gemm_acc(g + (bi * n + ni) * c, wt.data(),
                                 px->grad.data() + (bi * n + ni) * f, 1, c, f);
                    }
                }
            }
            if (pw->requires_grad) {
                // dw[n,f,c] += sum_b xg[b,n,f]^T g[b,n,c]
                for (int64_t bi = 0; bi < b; ++bi) {
                    for (int64_t ni = 0; ni < n; ++ni) {
                        const double* xrow = px->value.data() + (bi * n + ni) * f;
                        const double* grow = g + (bi * n + ni) * c;
                        double* dst = pw->grad.data() + ni * f * c;
                        for (int64_t fi = 0; fi < f; ++fi) {
                            const double xvv = xrow[fi];
                            double* drow = dst + fi * c;
                            for (int64_t ci = 0; ci < c; ++ci) drow[ci] += xvv * grow[ci];
                        }
                    }
                }
            }
        },
        "node_mix");
}

namespace {

void validate_row_indices(const std::vector<std::vector<int64_t>>& idx, int64_t b, int64_t t,
                          const char* op) {
    if (static_cast<int64_t>(idx.size()) != b)
        throw DimensionError(std::string(op) + ": index list count does not match batch extent");
    for (const auto& rows : idx) {
        for (int64_t rI : rows) {
            if (rI < 0 || rI >= t)
                throw DimensionError(std::string(op) + ": row index out of range");
        }
    }
}

}  // namespace

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int64_t>>& idx) {
    if (x.rank() != 3) throw DimensionError("gather_rows expects rank-3, got " + shape_str(x.shape()));
    const int64_t b = x.extent(0), t = x.extent(1), d = x.extent(2);
    validate_row_indices(idx, b, t, "gather_rows");
    const int64_t u = static_cast<int64_t>(idx[0].size());
    for (const auto& rows : idx) {
        if (static_cast<int64_t>(rows.size()) != u)
            throw DimensionError("gather_rows: ragged index lists");
    }
    std::vector<double> out(static_cast<size_t>(b * u * d));
    const double* v = x.values().data();
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t r = 0; r < u; ++r) {
            const double* src = v + (bi * t + idx[static_cast<size_t>(bi)][static_cast<size_t>(r)]) * d;
            std::copy(src, src + d, out.data() + (bi * u + r) * d);
        }
    }
    auto px = x.node_;
    return finish_op(make_node({b, u, d}, std::move(out)), {px},
                     [px, idx, b, t, u, d](Tensor::Node& self) {
                         if (!px->requires_grad) return;
                         const double* g = self.grad.data();
                         for (int64_t bi = 0; bi < b; ++bi) {
                             for (int64_t r = 0; r < u; ++r) {
                                 double* dst = px->grad.data() +
                                               (bi * t + idx[static_cast<size_t>(bi)][static_cast<size_t>(r)]) * d;
                                 const double* src = g + (bi * u + r) * d;
                                 for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                             }
                         }
                     },
                     "gather_rows");
}

Tensor compose_rows(int64_t t_total, const std::vector<std::vector<int64_t>>& idx,
                    const Tensor& sel, const Tensor& fill) {
    if (sel.rank() != 3 || fill.rank() != 3)
        throw DimensionError("compose_rows expects rank-3 inputs");
    const int64_t b = sel.extent(0), u = sel.extent(1), d = sel.extent(2);
    if (fill.extent(0) != b || fill.extent(1) != 1 || fill.extent(2) != d) {
        throw DimensionError("compose_rows: fill shape " + shape_str(fill.shape()) +
                             " incompatible with selection " + shape_str(sel.shape()));
    }
    validate_row_indices(idx, b, t_total, "compose_rows");
    std::vector<double> out(static_cast<size_t>(b * t_total * d));
    const double* sv = sel.values().data();
    const double* fv = fill.values().data();
    std::vector<char> selected(static_cast<size_t>(t_total));
    for (int64_t bi = 0; bi < b; ++bi) {
        std::fill(selected.begin(), selected.end(), 0);
        for (int64_t r = 0; r < u; ++r)
            selected[static_cast<size_t>(idx[static_cast<size_t>(bi)][static_cast<size_t>(r)])] = 1;
        for (int64_t ti = 0; ti < t_total; ++ti) {
            if (!selected[static_cast<size_t>(ti)]) {
                std::copy(fv + bi * d, fv + (bi + 1) * d, out.data() + (bi * t_total + ti) * d);
            }
        }
        for (int64_t r = 0; r < u; ++r) {
            const int64_t ti = idx[static_cast<size_t>(bi)][static_cast<size_t>(r)];
            std::copy(sv + (bi * u + r) * d, sv + (bi * u + r + 1) * d,
                      out.data() + (bi * t_total + ti) * d);
        }
    }
    auto ps = sel.node_, pf = fill.node_;
    return finish_op(
        make_node({b, t_total, d}, std::move(out)), {ps, pf},
        [ps, pf, idx, b, t_total, u, d](Tensor::Node& self) {
            const double* g = self.grad.data();
            std::vector<char> selected(static_cast<size_t>(t_total));
            for (int64_t bi = 0; bi < b; ++bi) {
                std::fill(selected.begin(), selected.end(), 0);
                for (int64_t r = 0; r < u; ++r)
                    selected[static_cast<size_t>(idx[static_cast<size_t>(bi)][static_cast<size_t>(r)])] = 1;
                if (ps->requires_grad) {
                    for (int64_t r = 0; r < u; ++r) {
                        const int64_t ti = idx[static_cast<size_t>(bi)][static_cast<size_t>(r)];
                        double* dst = ps->grad.data() + (bi * u + r) * d;
                        const double* src = g + (bi * t_total + ti) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                }
                if (pf->requires_grad) {
                    double* dst = pf->grad.data() + bi * d;
                    for (int64_t ti = 0; ti < t_total; ++ti) {
                        if (selected[static_cast<size_t>(ti)]) continue;
                        const double* src = g + (bi * t_total + ti) * d;
                        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
                    }
                }
            }
        },
        "compose_rows");
}

// ---- backward ----

void backward(const Tensor& root) {
    if (!root.defined()) throw ContractError("backward on undefined tensor");
    if (root.numel() != 1) {
        throw ContractError("backward root must be scalar, got " + shape_str(root.shape()));
    }
    if (!root.node_->requires_grad) return;  // nothing reachable

    // iterative post-order DFS: parents precede consumers in `order`
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    struct Frame {
        Tensor::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({root.node_.get(), 0});
    visited.insert(root.node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Tensor::Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && visited.insert(p).second) {
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    for (Tensor::Node* n : order) {
        if (n->leaf) {
            if (n->grad.empty()) n->grad.assign(n->value.size(), 0.0);
        } else {
            n->grad.assign(n->value.size(), 0.0);
        }
    }
    root.node_->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Node* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---- Parameter ----

Parameter::Parameter(Shape s, std::vector<double> init, std::string name)
    : t_(Tensor::leaf(std::move(s), std::move(init), std::move(name))) {}

// ---- finite differences ----

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<Parameter*>& params, double step, double rtol,
                                  double atol) {
    if (step <= 0) throw ConfigError("finite_diff_check: step must be > 0");
    if (rtol <= 0) throw ConfigError("finite_diff_check: rtol must be > 0");

    auto eval = [&]() {
        NoGradGuard ng;
        return loss_fn().item();
    };

    const double f1 = eval();
    const double f2 = eval();
    if (f1 != f2) {
        throw OracleError("finite_diff_check: loss is not deterministic (" + std::to_string(f1) +
                          " vs " + std::to_string(f2) + ")");
    }

    for (Parameter* p : params) p->zero_grad();
    Tensor loss = loss_fn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad());

    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        GradCheckEntry entry;
        entry.param = p->name();
        auto& vals = p->values();
        for (size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + step;
            const double fp = eval();
            vals[i] = orig - step;
            const double fm = eval();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[pi][i];
            const double absdiff = std::fabs(a - numeric);
            double rel = 0.0;
            if (absdiff > atol) {
                rel = absdiff / std::max({std::fabs(a), std::fabs(numeric), 1e-12});
            }
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = static_cast<int64_t>(i);
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        entry.pass = entry.max_rel_err <= rtol;
        report.worst_rel_err = std::max(report.worst_rel_err, entry.max_rel_err);
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace stgcrn
