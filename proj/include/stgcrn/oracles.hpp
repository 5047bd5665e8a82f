#pragma once

#include <cstdint>
#include <vector>

#include "stgcrn/tensor.hpp"

namespace stgcrn {

// Reference implementations written as plain loops over values. They share
// no code with the tensor ops they check: kernels here materialize every
// intermediate the production path factorizes away.
namespace oracle {

// Dense adaptive graph convolution: materializes the per-node kernel bank
// psi[n,k,ci,co] = sum_d E[n,d] W[d,k,ci,co] and loops over nodes/depths.
// x: (B, N, C_in) values; stack: K slices of (N, N); returns (B, N, C_out).
std::vector<double> agc_dense(const std::vector<double>& x, int64_t b, int64_t n, int64_t c_in,
                              const std::vector<std::vector<double>>& stack,
                              const std::vector<double>& embedding, int64_t d_e,
                              const std::vector<double>& weight, int64_t k, int64_t c_out,
                              const std::vector<double>* bias);

// Chebyshev recurrence by explicit loops: returns K dense (N, N) slices.
std::vector<std::vector<double>> cheb_recurrence(const std::vector<double>& lap, int64_t n,
                                                 int64_t depth);

// One GRU-with-graph-conv step evaluated with dense loops. Channel layout
// of each gate weight matches AgcWeights (D_e, K, C_in_total, C_out) with
// C_in_total = c_in + c_out and the input concatenated before the state.
struct GcrnCellOracleParams {
    std::vector<double> w_update, w_reset, w_cand;  // (D_e, K, c_in+c_out, c_out)
    std::vector<double> b_update, b_reset, b_cand;  // (D_e, c_out)
};
std::vector<double> gcrn_cell_dense(const std::vector<double>& x_t, int64_t b, int64_t n,
                                    int64_t c_in, const std::vector<double>& h_prev, int64_t c_out,
                                    const std::vector<std::vector<double>>& stack,
                                    const std::vector<double>& embedding, int64_t d_e,
                                    const GcrnCellOracleParams& p);

// Scaled dot-product attention for one (T_q, d) x (T, d) x (T, d_v) slice.
std::vector<double> attention_dense(const std::vector<double>& q, int64_t t_q,
                                    const std::vector<double>& k, int64_t t, int64_t d,
                                    const std::vector<double>& v, int64_t d_v);

// Full-key query dilution: max_j(q k^T / sqrt(d)) - mean_j(...), per query.
std::vector<double> dilution_full(const std::vector<double>& q, const std::vector<double>& k,
                                  int64_t t, int64_t d);

// Reference Adam on a scalar parameter; returns the next value.
double adam_scalar_step(double theta, double grad, double& m, double& v, int64_t step, double lr,
                        double beta1, double beta2, double eps, double weight_decay);

// Reference metrics (MAE, RMSE, MAPE%) with the |true| < guard exclusion.
void metrics_reference(const std::vector<double>& pred, const std::vector<double>& truth,
                       double& mae, double& rmse, double& mape, double mape_guard = 1e-3);

}  // namespace oracle
}  // namespace stgcrn
