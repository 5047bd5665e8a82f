#pragma once

#include <optional>
#include <vector>

#include "stgcrn/graph.hpp"

namespace stgcrn {

// One recurrent layer: GRU gates realized as adaptive graph convolutions
// over the concatenated [input, state] signal.
struct GcrnCellParams {
    AgcWeights w_update, w_reset, w_cand;  // C_in = in_ch + out_ch each
    Parameter b_update, b_reset, b_cand;   // (D_e, out_ch)

    static GcrnCellParams init(int64_t embed_dim, int64_t cheb_k, int64_t in_ch, int64_t out_ch,
                               Rng& rng, const std::string& prefix);
    int64_t out_channels() const { return w_update.out_channels(); }
};

// Test hooks for gate surgery.
struct CellHooks {
    std::optional<double> clamp_update_gate;  // force z to a constant
};

// x_t: (B, N, C_in), h_prev: (B, N, C_out) -> next state (B, N, C_out).
Tensor gcrn_cell_step(const Tensor& x_t, const Tensor& h_prev, const GcrnCellParams& params,
                      const ChebStack& stack, const Tensor& embedding,
                      const CellHooks* hooks = nullptr);

// Runs the stacked recurrence over (B, T, N, C) left to right from zero
// states; returns the last layer's state at every step as (B, N, T, C_out).
Tensor gcrn_encode(const Tensor& x, const std::vector<GcrnCellParams>& layers,
                   const ChebStack& stack, const Tensor& embedding,
                   const CellHooks* hooks = nullptr);

}  // namespace stgcrn
