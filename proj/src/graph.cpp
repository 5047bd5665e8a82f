#include "stgcrn/graph.hpp"

#include <cmath>

namespace stgcrn {

NodeEmbedding NodeEmbedding::init(int64_t num_nodes, int64_t embed_dim, Rng& rng,
                                  const std::string& name) {
    if (num_nodes < 1 || embed_dim < 1) {
        throw ConfigError("node embedding needs N >= 1 and D_e >= 1");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    return NodeEmbedding{
        Parameter({num_nodes, embed_dim}, rng.uniform_vec(num_nodes * embed_dim, -bound, bound),
                  name)};
}

Tensor adaptive_adjacency(const Tensor& embedding) {
    if (embedding.rank() != 2) {
        throw DimensionError("adaptive_adjacency expects (N, D_e), got " +
                             shape_str(embedding.shape()));
    }
    return softmax_rows(matmul(embedding, transpose_last2(embedding)));
}

ChebStack cheb_stack(const Tensor& laplacian, int64_t depth) {
    if (depth < 1) throw ConfigError("cheb_stack depth must be >= 1, got " + std::to_string(depth));
    if (laplacian.rank() != 2 || laplacian.extent(0) != laplacian.extent(1)) {
        throw DimensionError("cheb_stack operator must be square, got " +
                             shape_str(laplacian.shape()));
    }
    const int64_t n = laplacian.extent(0);
    ChebStack stack;
    stack.slices.reserve(static_cast<size_t>(depth));
    stack.slices.push_back(Tensor::identity(n));
    if (depth >= 2) stack.slices.push_back(laplacian);
    for (int64_t k = 2; k < depth; ++k) {
        // T_{k} = 2 L T_{k-1} - T_{k-2}
        Tensor next = sub(scale(matmul(laplacian, stack.slices[static_cast<size_t>(k - 1)]), 2.0),
                          stack.slices[static_cast<size_t>(k - 2)]);
        stack.slices.push_back(next);
    }
    return stack;
}

AgcWeights AgcWeights::init(int64_t embed_dim, int64_t cheb_k, int64_t in_ch, int64_t out_ch,
                            Rng& rng, const std::string& name) {
    if (embed_dim < 1 || cheb_k < 1 || in_ch < 1 || out_ch < 1) {
        throw ConfigError("agc weights need positive extents");
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(cheb_k * in_ch));
    return AgcWeights{Parameter({embed_dim, cheb_k, in_ch, out_ch},
                                rng.uniform_vec(embed_dim * cheb_k * in_ch * out_ch, -bound, bound),
                                name)};
}

Tensor agc_forward(const Tensor& x, const ChebStack& stack, const Tensor& embedding,
                   const AgcWeights& w, const Tensor* bias) {
    const bool batched = x.rank() == 3;
    if (x.rank() != 2 && x.rank() != 3) {
        throw DimensionError("agc_forward expects (N, C_in) or (B, N, C_in), got " +
                             shape_str(x.shape()));
    }
    Tensor xb = batched ? x : reshape(x, {1, x.extent(0), x.extent(1)});
    const int64_t n = xb.extent(1);
    const int64_t c_in = xb.extent(2);
    const int64_t k = w.cheb_k();
    const int64_t c_out = w.out_channels();
    const int64_t d_e = embedding.extent(1);
    if (stack.order() != k) {
        throw DimensionError("agc_forward: stack depth " + std::to_string(stack.order()) +
                             " does not match weight depth " + std::to_string(k));
    }
    if (stack.num_nodes() != n || embedding.extent(0) != n) {
        throw DimensionError("agc_forward: node counts disagree (x " + shape_str(x.shape()) +
                             ", stack " + std::to_string(stack.num_nodes()) + ", embedding " +
                             shape_str(embedding.shape()) + ")");
    }
    if (w.in_channels() != c_in) {
        throw DimensionError("agc_forward: input channels " + std::to_string(c_in) +
                             " do not match weights " + shape_str(w.weight.shape()));
    }
    if (w.weight.shape()[0] != d_e) {
        throw DimensionError("agc_forward: embedding dim " + std::to_string(d_e) +
                             " does not match weights " + shape_str(w.weight.shape()));
    }

    // depth-stacked signal: concat_k [T_k x]  -> (B, N, K*C_in)
    std::vector<Tensor> pieces;
    pieces.reserve(static_cast<size_t>(k));
    for (int64_t ki = 0; ki < k; ++ki) {
        pieces.push_back(matmul(stack.slices[static_cast<size_t>(ki)], xb));
    }
    Tensor xg = concat_axis(pieces, 2);

    // per-node kernels: (N, K*C_in, C_out) from embedding x flattened weight
    Tensor w2 = reshape(w.weight.tensor(), {d_e, k * c_in * c_out});
    Tensor node_w = reshape(matmul(embedding, w2), {n, k * c_in, c_out});

    Tensor out = node_mix(xg, node_w);
    if (bias != nullptr) {
        if (bias->rank() != 2 || bias->extent(0) != d_e || bias->extent(1) != c_out) {
            throw DimensionError("agc_forward: bias must be (D_e, C_out), got " +
                                 shape_str(bias->shape()));
        }
        out = add_broadcast(out, matmul(embedding, *bias));
    }
    return batched ? out : reshape(out, {n, c_out});
}

}  // namespace stgcrn
