#include "stgcrn/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace stgcrn {
namespace oracle {

std::vector<double> agc_dense(const std::vector<double>& x, int64_t b, int64_t n, int64_t c_in,
                              const std::vector<std::vector<double>>& stack,
                              const std::vector<double>& embedding, int64_t d_e,
                              const std::vector<double>& weight, int64_t k, int64_t c_out,
                              const std::vector<double>* bias) {
    // psi[n,k,ci,co] = sum_d E[n,d] W[d,k,ci,co]
    std::vector<double> psi(static_cast<size_t>(n * k * c_in * c_out), 0.0);
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ki = 0; ki < k; ++ki)
            for (int64_t ci = 0; ci < c_in; ++ci)
                for (int64_t co = 0; co < c_out; ++co) {
                    double s = 0.0;
                    for (int64_t d = 0; d < d_e; ++d) {
                        s += embedding[ni * d_e + d] *
                             weight[((d * k + ki) * c_in + ci) * c_out + co];
                    }
                    psi[((ni * k + ki) * c_in + ci) * c_out + co] = s;
                }

    std::vector<double> out(static_cast<size_t>(b * n * c_out), 0.0);
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ni = 0; ni < n; ++ni)
            for (int64_t co = 0; co < c_out; ++co) {
                double acc = 0.0;
                for (int64_t ki = 0; ki < k; ++ki)
                    for (int64_t ci = 0; ci < c_in; ++ci) {
                        // (T_k x)[n, ci]
                        double conv = 0.0;
                        for (int64_t mi = 0; mi < n; ++mi)
                            conv += stack[static_cast<size_t>(ki)][ni * n + mi] *
                                    x[(bi * n + mi) * c_in + ci];
                        acc += conv * psi[((ni * k + ki) * c_in + ci) * c_out + co];
                    }
                if (bias != nullptr) {
                    for (int64_t d = 0; d < d_e; ++d)
                        acc += embedding[ni * d_e + d] * (*bias)[d * c_out + co];
                }
                out[(bi * n + ni) * c_out + co] = acc;
            }
    return out;
}

std::vector<std::vector<double>> cheb_recurrence(const std::vector<double>& lap, int64_t n,
                                                 int64_t depth) {
    std::vector<std::vector<double>> slices;
    std::vector<double> eye(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
    slices.push_back(eye);
    if (depth >= 2) slices.push_back(lap);
    for (int64_t k = 2; k < depth; ++k) {
        std::vector<double> next(static_cast<size_t>(n * n), 0.0);
        const auto& prev = slices[static_cast<size_t>(k - 1)];
        const auto& prev2 = slices[static_cast<size_t>(k - 2)];
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (int64_t m = 0; m < n; ++m) s += lap[i * n + m] * prev[m * n + j];
                next[i * n + j] = 2.0 * s - prev2[i * n + j];
            }
        slices.push_back(next);
    }
    slices.resize(static_cast<size_t>(depth));
    return slices;
}

namespace {

double osigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<double> gate(const std::vector<double>& cat, int64_t b, int64_t n, int64_t c_total,
                         const std::vector<std::vector<double>>& stack,
                         const std::vector<double>& embedding, int64_t d_e,
                         const std::vector<double>& w, const std::vector<double>& bias, int64_t k,
                         int64_t c_out) {
    return agc_dense(cat, b, n, c_total, stack, embedding, d_e, w, k, c_out, &bias);
}

}  // namespace

std::vector<double> gcrn_cell_dense(const std::vector<double>& x_t, int64_t b, int64_t n,
                                    int64_t c_in, const std::vector<double>& h_prev, int64_t c_out,
                                    const std::vector<std::vector<double>>& stack,
                                    const std::vector<double>& embedding, int64_t d_e,
                                    const GcrnCellOracleParams& p) {
    const int64_t k = static_cast<int64_t>(stack.size());
    const int64_t c_total = c_in + c_out;
    auto concat = [&](const std::vector<double>& state) {
        std::vector<double> cat(static_cast<size_t>(b * n * c_total));
        for (int64_t bi = 0; bi < b; ++bi)
            for (int64_t ni = 0; ni < n; ++ni) {
                for (int64_t ci = 0; ci < c_in; ++ci)
                    cat[(bi * n + ni) * c_total + ci] = x_t[(bi * n + ni) * c_in + ci];
                for (int64_t co = 0; co < c_out; ++co)
                    cat[(bi * n + ni) * c_total + c_in + co] = state[(bi * n + ni) * c_out + co];
            }
        return cat;
    };

    std::vector<double> cat_xh = concat(h_prev);
    std::vector<double> z =
        gate(cat_xh, b, n, c_total, stack, embedding, d_e, p.w_update, p.b_update, k, c_out);
    std::vector<double> r =
        gate(cat_xh, b, n, c_total, stack, embedding, d_e, p.w_reset, p.b_reset, k, c_out);
    for (auto& v : z) v = osigmoid(v);
    for (auto& v : r) v = osigmoid(v);

    std::vector<double> rh(h_prev.size());
    for (size_t i = 0; i < rh.size(); ++i) rh[i] = r[i] * h_prev[i];
    std::vector<double> cat_xrh = concat(rh);
    std::vector<double> cand =
        gate(cat_xrh, b, n, c_total, stack, embedding, d_e, p.w_cand, p.b_cand, k, c_out);
    for (auto& v : cand) v = std::tanh(v);

    std::vector<double> h(h_prev.size());
    for (size_t i = 0; i < h.size(); ++i) h[i] = z[i] * h_prev[i] + (1.0 - z[i]) * cand[i];
    return h;
}

std::vector<double> attention_dense(const std::vector<double>& q, int64_t t_q,
                                    const std::vector<double>& k, int64_t t, int64_t d,
                                    const std::vector<double>& v, int64_t d_v) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> out(static_cast<size_t>(t_q * d_v), 0.0);
    std::vector<double> logits(static_cast<size_t>(t));
    for (int64_t i = 0; i < t_q; ++i) {
        for (int64_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (int64_t x = 0; x < d; ++x) s += q[i * d + x] * k[j * d + x];
            logits[static_cast<size_t>(j)] = s * inv_sqrt_d;
        }
        double mx = *std::max_element(logits.begin(), logits.end());
        double sum = 0.0;
        for (auto& l : logits) {
            l = std::exp(l - mx);
            sum += l;
        }
        for (auto& l : logits) l /= sum;
        for (int64_t j = 0; j < t; ++j)
            for (int64_t x = 0; x < d_v; ++x)
                out[i * d_v + x] += logits[static_cast<size_t>(j)] * v[j * d_v + x];
    }
    return out;
}

std::vector<double> dilution_full(const std::vector<double>& q, const std::vector<double>& k,
                                  int64_t t, int64_t d) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> m(static_cast<size_t>(t));
    for (int64_t i = 0; i < t; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        double mean = 0.0;
        for (int64_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (int64_t x = 0; x < d; ++x) s += q[i * d + x] * k[j * d + x];
            s *= inv_sqrt_d;
            mx = std::max(mx, s);
            mean += s;
        }
        m[static_cast<size_t>(i)] = mx - mean / static_cast<double>(t);
    }
    return m;
}

double adam_scalar_step(double theta, double grad, double& m, double& v, int64_t step, double lr,
                        double beta1, double beta2, double eps, double weight_decay) {
    const double g = grad + weight_decay * theta;
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(beta1, static_cast<double>(step)));
    const double vhat = v / (1.0 - std::pow(beta2, static_cast<double>(step)));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
}

void metrics_reference(const std::vector<double>& pred, const std::vector<double>& truth,
                       double& mae, double& rmse, double& mape, double mape_guard) {
    double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
    int64_t pct_count = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double diff = pred[i] - truth[i];
        abs_sum += std::fabs(diff);
        sq_sum += diff * diff;
        if (std::fabs(truth[i]) >= mape_guard) {
            pct_sum += std::fabs(diff / truth[i]);
            ++pct_count;
        }
    }
    const double n = static_cast<double>(pred.size());
    mae = abs_sum / n;
    rmse = std::sqrt(sq_sum / n);
    mape = pct_count > 0 ? 100.0 * pct_sum / static_cast<double>(pct_count) : 0.0;
}

}  // namespace oracle
}  // namespace stgcrn
