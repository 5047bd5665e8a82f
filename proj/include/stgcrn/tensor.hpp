#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "stgcrn/errors.hpp"

namespace stgcrn {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// True when STGCRN_TEST_MODE=1 (read once at startup) or forced via
// set_test_mode. Test mode turns on strict per-op finiteness checks and
// masks wall-clock fields in reports so runs are byte-reproducible.
bool test_mode();
void set_test_mode(bool on);

// Recording guard: while disabled, ops compute values only (no tape).
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

enum class Activation { Sigmoid, Tanh, Relu };
Activation activation_from_tag(const std::string& tag);  // ConfigError on unknown tag

// Dense real tensor, rank <= 4, row-major, double storage. Doubles as the
// node of a reverse-mode tape: ops record a backward function and parent
// links when any input requires gradients.
class Tensor {
public:
    struct Node {
        Shape shape;
        std::vector<double> value;
        std::vector<double> grad;  // sized lazily; persists on leaves
        bool requires_grad = false;
        bool leaf = false;
        std::string name;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward_fn;
        int64_t numel() const { return static_cast<int64_t>(value.size()); }
    };

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor identity(int64_t n);
    static Tensor from_data(Shape s, std::vector<double> data);
    static Tensor scalar(double v);
    // Gradient-carrying leaf (parameter storage).
    static Tensor leaf(Shape s, std::vector<double> data, std::string name);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
    int64_t numel() const { return node_->numel(); }
    int64_t extent(int64_t axis) const;  // negative axis counts from the back

    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& values_mut();  // leaf-only (optimizer updates)
    double at(std::initializer_list<int64_t> idx) const;
    double item() const;  // scalar tensors only

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }
    const std::string& name() const { return node_->name; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    Tensor detach() const;  // value copy without tape history

    std::shared_ptr<Node> node_;
};

// ---- ops (all differentiable unless noted) ----

// Matrix product. Supported shapes: (P,Q)x(Q,R), (B,P,Q)x(Q,R),
// (P,Q)x(B,Q,R), (B,P,Q)x(B,Q,R). Higher ranks: reshape at the call site.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<int64_t>& perm);
Tensor reshape(const Tensor& x, Shape s);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
// y broadcasts over the leading axes of x (y.shape is a suffix of x.shape).
Tensor add_broadcast(const Tensor& x, const Tensor& y);
Tensor scale(const Tensor& x, double s);
Tensor affine(const Tensor& x, double mul, double shift);  // mul*x + shift

Tensor elementwise(Activation act, const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_t(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);

// Softmax over the last axis, max-subtracted for stability.
Tensor softmax_rows(const Tensor& x);
// Normalization over the last axis; gain/bias are rank-1 of that extent.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor concat_axis(const std::vector<Tensor>& parts, int64_t axis);
Tensor select_axis(const Tensor& x, int64_t axis, int64_t index);  // drops axis
Tensor slice_last(const Tensor& x, int64_t start, int64_t len);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Mean over axis -2, keeping it: (..., T, d) -> (..., 1, d).
Tensor mean_rows(const Tensor& x);

// out[b,n,c] = sum_f xg[b,n,f] * w[n,f,c] (per-node kernel contraction).
Tensor node_mix(const Tensor& xg, const Tensor& w);
// Row selection per batch slice: x (B,T,d), idx[b] lists rows -> (B,u,d).
Tensor gather_rows(const Tensor& x, const std::vector<std::vector<int64_t>>& idx);
// Inverse assembly: selected rows from sel (B,u,d), all others take the
// fill row (B,1,d) -> (B,t_total,d).
Tensor compose_rows(int64_t t_total, const std::vector<std::vector<int64_t>>& idx,
                    const Tensor& sel, const Tensor& fill);

// Reverse-mode sweep from a scalar root. Accumulates into leaf grads;
// repeated calls add. Non-scalar root -> ContractError.
void backward(const Tensor& root);

// ---- Parameter ----

class Parameter {
public:
    Parameter() = default;
    Parameter(Shape s, std::vector<double> init, std::string name);

    Tensor& tensor() { return t_; }
    const Tensor& tensor() const { return t_; }
    const std::string& name() const { return t_.name(); }
    const Shape& shape() const { return t_.shape(); }
    int64_t numel() const { return t_.numel(); }
    std::vector<double>& values() { return t_.values_mut(); }
    const std::vector<double>& values() const { return t_.values(); }
    std::vector<double>& grad() { return t_.grad(); }
    void zero_grad() { t_.zero_grad(); }
    bool defined() const { return t_.defined(); }

private:
    Tensor t_;
};

// ---- gradient checking ----

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
    int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst_rel_err = 0.0;
    bool all_pass = true;
};

// Central-difference check of every element of every parameter against the
// tape gradient. loss_fn must be deterministic (verified with two forward
// passes); entries with |analytic - numeric| <= atol pass regardless of the
// relative error.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  const std::vector<Parameter*>& params, double step,
                                  double rtol, double atol = 1e-8);

}  // namespace stgcrn
