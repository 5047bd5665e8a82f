#pragma once

#include <vector>

#include "stgcrn/rng.hpp"
#include "stgcrn/tensor.hpp"

namespace stgcrn {

// Learnable node embedding; generates both the adjacency and the per-node
// convolution kernels.
struct NodeEmbedding {
    Parameter table;  // (N, D_e)

    static NodeEmbedding init(int64_t num_nodes, int64_t embed_dim, Rng& rng,
                              const std::string& name = "embedding");
    int64_t num_nodes() const { return table.shape()[0]; }
    int64_t embed_dim() const { return table.shape()[1]; }
};

// Row-stochastic adjacency from the embedding: softmax over rows of E E^T.
Tensor adaptive_adjacency(const Tensor& embedding);

// Chebyshev polynomial stack over a square operator: slices
// [I, L, 2 L T_1 - T_0, ...]. Slice 0 is exactly the identity.
struct ChebStack {
    std::vector<Tensor> slices;  // each (N, N)
    int64_t order() const { return static_cast<int64_t>(slices.size()); }
    int64_t num_nodes() const { return slices.empty() ? 0 : slices[0].shape()[0]; }
};

ChebStack cheb_stack(const Tensor& laplacian, int64_t depth);

// Factorized per-node convolution weights: the dense kernel bank
// (N, K, C_in, C_out) is generated as embedding x weight and never stored.
struct AgcWeights {
    Parameter weight;  // (D_e, K, C_in, C_out)

    static AgcWeights init(int64_t embed_dim, int64_t cheb_k, int64_t in_ch, int64_t out_ch,
                           Rng& rng, const std::string& name);
    int64_t cheb_k() const { return weight.shape()[1]; }
    int64_t in_channels() const { return weight.shape()[2]; }
    int64_t out_channels() const { return weight.shape()[3]; }
};

// Adaptive graph convolution. x is (N, C_in) or batched (B, N, C_in);
// returns the same rank with C_out channels. When bias (D_e, C_out) is
// given, embedding x bias is added per node.
Tensor agc_forward(const Tensor& x, const ChebStack& stack, const Tensor& embedding,
                   const AgcWeights& w, const Tensor* bias = nullptr);

}  // namespace stgcrn
