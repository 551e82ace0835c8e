#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "oryx/core.hpp"
#include "oryx/errors.hpp"
#include "oryx/geometry.hpp"
#include "oryx/packing.hpp"
#include "oryx/posembed.hpp"

namespace oryx {

struct EncoderConfig {
    int patch_size = kPatchSize;
    int in_channels = 1;
    int channels = 32;
    int depth = 2;
    int heads = 4;
    double mlp_ratio = 4.0;
    int table_grid = 128; // position table side, covers 2048-pixel inputs at p=16
    std::uint64_t seed = 0;

    int hidden() const { return static_cast<int>(mlp_ratio * channels); }
    void validate() const {
        if (patch_size <= 0 || in_channels <= 0 || channels <= 0 || depth < 0 ||
            heads <= 0 || table_grid <= 0)
            throw InvalidInput("encoder config values must be positive");
        if (channels % heads != 0) throw InvalidInput("channels must divide evenly into heads");
        if (hidden() <= 0) throw InvalidInput("mlp hidden width must be positive");
    }
};

// ---- layer norm over the channel axis, eps 1e-6 ----

template <typename T>
struct LayerNormParams {
    std::vector<T> gamma, beta;
    explicit LayerNormParams(int c = 0)
        : gamma(static_cast<std::size_t>(c), T(1)), beta(static_cast<std::size_t>(c), T(0)) {}
};

template <typename T>
struct LayerNormCache {
    Mat<T> x;
    std::vector<T> mean, rstd;
};

inline constexpr double kLnEps = 1e-6;

template <typename T>
Mat<T> layernorm_cached(const Mat<T>& x, const LayerNormParams<T>& p, LayerNormCache<T>* cache) {
    if (static_cast<std::int64_t>(p.gamma.size()) != x.cols)
        throw ShapeError("layernorm parameter width mismatch");
    Mat<T> y(x.rows, x.cols);
    std::vector<T> means, rstds;
    if (cache) {
        means.resize(static_cast<std::size_t>(x.rows));
        rstds.resize(static_cast<std::size_t>(x.rows));
    }
    for (std::int64_t i = 0; i < x.rows; ++i) {
        T mu = T(0);
        for (std::int64_t j = 0; j < x.cols; ++j) mu += x(i, j);
        mu /= static_cast<T>(x.cols);
        T var = T(0);
        for (std::int64_t j = 0; j < x.cols; ++j) {
            const T d = x(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<T>(x.cols);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
        for (std::int64_t j = 0; j < x.cols; ++j)
            y(i, j) = (x(i, j) - mu) * rstd * p.gamma[static_cast<std::size_t>(j)] + p.beta[static_cast<std::size_t>(j)];
        if (cache) {
            means[static_cast<std::size_t>(i)] = mu;
            rstds[static_cast<std::size_t>(i)] = rstd;
        }
    }
    if (cache) {
        cache->x = x;
        cache->mean = std::move(means);
        cache->rstd = std::move(rstds);
    }
    return y;
}

template <typename T>
void layernorm_backward(const LayerNormParams<T>& p, const LayerNormCache<T>& cache,
                        const Mat<T>& dy, Mat<T>& dx, std::span<T> dgamma, std::span<T> dbeta) {
    const std::int64_t c = cache.x.cols;
    for (std::int64_t i = 0; i < cache.x.rows; ++i) {
        const T mu = cache.mean[static_cast<std::size_t>(i)];
        const T rstd = cache.rstd[static_cast<std::size_t>(i)];
        T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
        for (std::int64_t j = 0; j < c; ++j) {
            const T xhat = (cache.x(i, j) - mu) * rstd;
            const T dyij = dy(i, j);
            dgamma[static_cast<std::size_t>(j)] += dyij * xhat;
            dbeta[static_cast<std::size_t>(j)] += dyij;
            const T dxhat = dyij * p.gamma[static_cast<std::size_t>(j)];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        const T inv_c = T(1) / static_cast<T>(c);
        for (std::int64_t j = 0; j < c; ++j) {
            const T xhat = (cache.x(i, j) - mu) * rstd;
            const T dxhat = dy(i, j) * p.gamma[static_cast<std::size_t>(j)];
            dx(i, j) += rstd * (dxhat - sum_dxhat * inv_c - xhat * sum_dxhat_xhat * inv_c);
        }
    }
}

// exact-erf gelu
template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244)));
}

template <typename T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865475244)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014326779);
    return cdf + x * pdf;
}

// ---- transformer block: pre-norm attention then pre-norm mlp ----

template <typename T>
struct BlockWeights {
    LayerNormParams<T> ln1, ln2;
    AttentionWeights<T> attn;
    Mat<T> wo;
    std::vector<T> bo;
    Mat<T> w1;
    std::vector<T> b1;
    Mat<T> w2;
    std::vector<T> b2;
};

template <typename T>
struct BlockCache {
    LayerNormCache<T> ln1, ln2;
    AttentionCache<T> attn;
    Mat<T> attn_concat; // head-concat output, input to wo
    Mat<T> x1;          // after attention residual
    Mat<T> mlp_in;      // ln2 output
    Mat<T> mlp_pre;     // before gelu
};

template <typename T>
struct EncoderWeights {
    EncoderConfig cfg;
    Mat<T> w_patch;          // [p*p*in_channels x C]
    std::vector<T> b_patch;  // [C]
    PositionTable<T> pos;
    std::vector<BlockWeights<T>> blocks;
};

template <typename T>
EncoderWeights<T> make_encoder(const EncoderConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    EncoderWeights<T> w;
    w.cfg = cfg;
    const int c = cfg.channels, hid = cfg.hidden();
    const int pvec = cfg.patch_size * cfg.patch_size * cfg.in_channels;
    w.w_patch = Mat<T>(pvec, c);
    fill_truncated_normal<T>(w.w_patch.v, rng, T(0.02));
    w.b_patch.assign(static_cast<std::size_t>(c), T(0));
    w.pos.grid_rows = cfg.table_grid;
    w.pos.grid_cols = cfg.table_grid;
    w.pos.channels = c;
    w.pos.values.resize(static_cast<std::size_t>(cfg.table_grid) * cfg.table_grid * c);
    fill_truncated_normal<T>(w.pos.values, rng, T(0.02));
    w.blocks.resize(static_cast<std::size_t>(cfg.depth));
    for (auto& blk : w.blocks) {
        blk.ln1 = LayerNormParams<T>(c);
        blk.ln2 = LayerNormParams<T>(c);
        blk.attn = make_attention_weights<T>(c, cfg.heads, rng);
        blk.wo = Mat<T>(c, c);
        fill_truncated_normal<T>(blk.wo.v, rng, T(0.02));
        blk.bo.assign(static_cast<std::size_t>(c), T(0));
        blk.w1 = Mat<T>(c, hid);
        fill_truncated_normal<T>(blk.w1.v, rng, T(0.02));
        blk.b1.assign(static_cast<std::size_t>(hid), T(0));
        blk.w2 = Mat<T>(hid, c);
        fill_truncated_normal<T>(blk.w2.v, rng, T(0.02));
        blk.b2.assign(static_cast<std::size_t>(c), T(0));
    }
    return w;
}

// zero-filled twin of the weights, used as a gradient store
template <typename T>
EncoderWeights<T> zero_like(const EncoderWeights<T>& w) {
    EncoderWeights<T> g;
    g.cfg = w.cfg;
    g.w_patch = Mat<T>(w.w_patch.rows, w.w_patch.cols);
    g.b_patch.assign(w.b_patch.size(), T(0));
    g.pos.grid_rows = w.pos.grid_rows;
    g.pos.grid_cols = w.pos.grid_cols;
    g.pos.channels = w.pos.channels;
    g.pos.values.assign(w.pos.values.size(), T(0));
    g.blocks.resize(w.blocks.size());
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        auto& gb = g.blocks[i];
        const auto& wb = w.blocks[i];
        gb.ln1.gamma.assign(wb.ln1.gamma.size(), T(0));
        gb.ln1.beta.assign(wb.ln1.beta.size(), T(0));
        gb.ln2.gamma.assign(wb.ln2.gamma.size(), T(0));
        gb.ln2.beta.assign(wb.ln2.beta.size(), T(0));
        gb.attn.heads = wb.attn.heads;
        gb.attn.wq = Mat<T>(wb.attn.wq.rows, wb.attn.wq.cols);
        gb.attn.wk = Mat<T>(wb.attn.wk.rows, wb.attn.wk.cols);
        gb.attn.wv = Mat<T>(wb.attn.wv.rows, wb.attn.wv.cols);
        gb.attn.bq.assign(wb.attn.bq.size(), T(0));
        gb.attn.bk.assign(wb.attn.bk.size(), T(0));
        gb.attn.bv.assign(wb.attn.bv.size(), T(0));
        gb.wo = Mat<T>(wb.wo.rows, wb.wo.cols);
        gb.bo.assign(wb.bo.size(), T(0));
        gb.w1 = Mat<T>(wb.w1.rows, wb.w1.cols);
        gb.b1.assign(wb.b1.size(), T(0));
        gb.w2 = Mat<T>(wb.w2.rows, wb.w2.cols);
        gb.b2.assign(wb.b2.size(), T(0));
    }
    return g;
}

// ---- patch embedding ----

// Each p x p x in_channels block, flattened row-major (y, x, channel), is
// projected to C. Trailing pixels that do not fill a patch are dropped.
template <typename T>
Mat<T> patch_embed(const VisualInput<T>& input, const EncoderWeights<T>& w) {
    const EncoderConfig& cfg = w.cfg;
    if (input.channels != cfg.in_channels) throw ShapeError("input channel count mismatch");
    const PatchGrid g = patch_grid({input.height, input.width}, cfg.patch_size);
    const int p = cfg.patch_size, ch = cfg.in_channels, c = cfg.channels;
    Mat<T> tokens(g.token_count, c);
    std::vector<T> patch(static_cast<std::size_t>(p) * p * ch);
    for (int gi = 0; gi < g.rows; ++gi)
        for (int gj = 0; gj < g.cols; ++gj) {
            std::size_t f = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int ci = 0; ci < ch; ++ci)
                        patch[f++] = input.at(gi * p + py, gj * p + px, ci);
            const std::int64_t row = static_cast<std::int64_t>(gi) * g.cols + gj;
            for (int j = 0; j < c; ++j) {
                T acc = w.b_patch[static_cast<std::size_t>(j)];
                for (std::size_t k = 0; k < patch.size(); ++k)
                    acc += patch[k] * w.w_patch(static_cast<std::int64_t>(k), j);
                tokens(row, j) = acc;
            }
        }
    return tokens;
}

template <typename T>
void patch_embed_backward(const VisualInput<T>& input, const EncoderWeights<T>& w,
                          const Mat<T>& d_tokens, EncoderWeights<T>& grads) {
    const EncoderConfig& cfg = w.cfg;
    const PatchGrid g = patch_grid({input.height, input.width}, cfg.patch_size);
    const int p = cfg.patch_size, ch = cfg.in_channels, c = cfg.channels;
    if (d_tokens.rows != g.token_count || d_tokens.cols != c)
        throw ShapeError("token cotangent shape mismatch");
    std::vector<T> patch(static_cast<std::size_t>(p) * p * ch);
    for (int gi = 0; gi < g.rows; ++gi)
        for (int gj = 0; gj < g.cols; ++gj) {
            std::size_t f = 0;
            for (int py = 0; py < p; ++py)
                for (int px = 0; px < p; ++px)
                    for (int ci = 0; ci < ch; ++ci)
                        patch[f++] = input.at(gi * p + py, gj * p + px, ci);
            const std::int64_t row = static_cast<std::int64_t>(gi) * g.cols + gj;
            for (int j = 0; j < c; ++j) {
                const T dt = d_tokens(row, j);
                if (dt == T(0)) continue;
                grads.b_patch[static_cast<std::size_t>(j)] += dt;
                for (std::size_t k = 0; k < patch.size(); ++k)
                    grads.w_patch(static_cast<std::int64_t>(k), j) += patch[k] * dt;
            }
        }
}

// ---- packed transformer forward/backward ----

template <typename T>
struct EncoderCache {
    Mat<T> x0;                         // block stack input
    std::vector<BlockCache<T>> blocks;
    std::vector<PatchGrid> grids;
};

template <typename T>
Mat<T> run_blocks_cached(const PackedBatch<T>& batch, const EncoderWeights<T>& w,
                         EncoderCache<T>* cache) {
    batch.validate();
    const std::int64_t c = w.cfg.channels;
    if (batch.tokens.cols != c) throw ShapeError("token width differs from encoder channels");
    Mat<T> x = batch.tokens;
    if (cache) {
        cache->x0 = x;
        cache->blocks.assign(w.blocks.size(), BlockCache<T>());
    }
    PackedBatch<T> scratch;
    scratch.offsets = batch.offsets;
    for (std::size_t bi = 0; bi < w.blocks.size(); ++bi) {
        const auto& blk = w.blocks[bi];
        BlockCache<T>* bc = cache ? &cache->blocks[bi] : nullptr;
        Mat<T> normed = layernorm_cached(x, blk.ln1, bc ? &bc->ln1 : nullptr);
        scratch.tokens = std::move(normed);
        PackedBatch<T> att = segment_attention_cached(scratch, blk.attn, bc ? &bc->attn : nullptr);
        Mat<T> proj = matmul(att.tokens, blk.wo);
        add_row_bias(proj, std::span<const T>(blk.bo));
        for (std::int64_t k = 0; k < x.size(); ++k) x.v[static_cast<std::size_t>(k)] += proj.v[static_cast<std::size_t>(k)];
        if (bc) {
            bc->attn_concat = std::move(att.tokens);
            bc->x1 = x;
        }
        Mat<T> normed2 = layernorm_cached(x, blk.ln2, bc ? &bc->ln2 : nullptr);
        Mat<T> pre = matmul(normed2, blk.w1);
        add_row_bias(pre, std::span<const T>(blk.b1));
        Mat<T> act(pre.rows, pre.cols);
        for (std::int64_t k = 0; k < pre.size(); ++k)
            act.v[static_cast<std::size_t>(k)] = gelu(pre.v[static_cast<std::size_t>(k)]);
        Mat<T> mlp_out = matmul(act, blk.w2);
        add_row_bias(mlp_out, std::span<const T>(blk.b2));
        for (std::int64_t k = 0; k < x.size(); ++k) x.v[static_cast<std::size_t>(k)] += mlp_out.v[static_cast<std::size_t>(k)];
        if (bc) {
            bc->mlp_in = std::move(normed2);
            bc->mlp_pre = std::move(pre);
        }
    }
    return x;
}

// d_flat: cotangent of the block-stack output. Returns cotangent of the
// stack input; parameter gradients accumulate into grads.
template <typename T>
Mat<T> run_blocks_backward(const PackedBatch<T>& batch, const EncoderWeights<T>& w,
                           const EncoderCache<T>& cache, const Mat<T>& d_flat,
                           EncoderWeights<T>& grads) {
    Mat<T> dx = d_flat;
    for (std::size_t bi = w.blocks.size(); bi-- > 0;) {
        const auto& blk = w.blocks[bi];
        const auto& bc = cache.blocks[bi];
        auto& gb = grads.blocks[bi];

        // mlp half: x2 = x1 + gelu(ln2(x1) w1 + b1) w2 + b2
        Mat<T> act(bc.mlp_pre.rows, bc.mlp_pre.cols);
        for (std::int64_t k = 0; k < act.size(); ++k)
            act.v[static_cast<std::size_t>(k)] = gelu(bc.mlp_pre.v[static_cast<std::size_t>(k)]);
        matmul_at_acc(act, dx, gb.w2);
        col_sums_acc(dx, std::span<T>(gb.b2));
        Mat<T> dact = matmul_bt(dx, blk.w2);
        for (std::int64_t k = 0; k < dact.size(); ++k)
            dact.v[static_cast<std::size_t>(k)] *= gelu_grad(bc.mlp_pre.v[static_cast<std::size_t>(k)]);
        matmul_at_acc(bc.mlp_in, dact, gb.w1);
        col_sums_acc(dact, std::span<T>(gb.b1));
        Mat<T> dnormed2 = matmul_bt(dact, blk.w1);
        Mat<T> dx1 = dx; // residual branch
        layernorm_backward(blk.ln2, bc.ln2, dnormed2, dx1,
                           std::span<T>(gb.ln2.gamma), std::span<T>(gb.ln2.beta));

        // attention half: x1 = x0 + attn(ln1(x0)) wo + bo
        matmul_at_acc(bc.attn_concat, dx1, gb.wo);
        col_sums_acc(dx1, std::span<T>(gb.bo));
        Mat<T> datt = matmul_bt(dx1, blk.wo);
        PackedBatch<T> normed_batch;
        normed_batch.offsets = batch.offsets;
        normed_batch.tokens = bc.attn.x;
        Mat<T> dnormed(dx1.rows, dx1.cols);
        AttentionGrads<T> ag(static_cast<int>(w.cfg.channels));
        segment_attention_backward(normed_batch, blk.attn, bc.attn, datt, dnormed, ag);
        for (std::int64_t k = 0; k < ag.dwq.size(); ++k) {
            gb.attn.wq.v[static_cast<std::size_t>(k)] += ag.dwq.v[static_cast<std::size_t>(k)];
            gb.attn.wk.v[static_cast<std::size_t>(k)] += ag.dwk.v[static_cast<std::size_t>(k)];
            gb.attn.wv.v[static_cast<std::size_t>(k)] += ag.dwv.v[static_cast<std::size_t>(k)];
        }
        for (std::size_t k = 0; k < ag.dbq.size(); ++k) {
            gb.attn.bq[k] += ag.dbq[k];
            gb.attn.bk[k] += ag.dbk[k];
            gb.attn.bv[k] += ag.dbv[k];
        }
        Mat<T> dx0 = dx1;
        layernorm_backward(blk.ln1, bc.ln1, dnormed, dx0,
                           std::span<T>(gb.ln1.gamma), std::span<T>(gb.ln1.beta));
        dx = std::move(dx0);
    }
    return dx;
}

// Blocks over a packed batch whose position embeddings are already applied;
// one feature map per segment, shaped by its grid.
template <typename T>
std::vector<FeatureMap<T>> encode_packed(const PackedBatch<T>& batch,
                                         std::span<const PatchGrid> grids,
                                         const EncoderWeights<T>& w,
                                         EncoderCache<T>* cache = nullptr) {
    batch.validate();
    if (static_cast<std::int64_t>(grids.size()) != batch.segments())
        throw ShapeError("one grid required per segment");
    for (std::int64_t s = 0; s < batch.segments(); ++s)
        if (batch.length(s) != grids[static_cast<std::size_t>(s)].token_count)
            throw ShapeError("segment length does not match its grid");
    Mat<T> out = run_blocks_cached(batch, w, cache);
    if (cache) cache->grids.assign(grids.begin(), grids.end());
    std::vector<FeatureMap<T>> maps;
    maps.reserve(grids.size());
    for (std::int64_t s = 0; s < batch.segments(); ++s) {
        const PatchGrid& g = grids[static_cast<std::size_t>(s)];
        FeatureMap<T> f(g.rows, g.cols, static_cast<int>(out.cols));
        std::copy(out.v.begin() + batch.offsets[s] * out.cols,
                  out.v.begin() + batch.offsets[s + 1] * out.cols, f.values.begin());
        maps.push_back(std::move(f));
    }
    return maps;
}

// Full per-input pipeline: patch embed, add rescaled positions, pack.
template <typename T>
PackedBatch<T> embed_inputs(std::span<const VisualInput<T>> inputs, const EncoderWeights<T>& w,
                            std::vector<PatchGrid>* grids_out,
                            std::vector<Mat<T>>* patch_tokens_out = nullptr) {
    if (inputs.empty()) throw InvalidInput("no inputs to embed");
    std::vector<Mat<T>> embedded;
    embedded.reserve(inputs.size());
    if (grids_out) grids_out->clear();
    for (const auto& in : inputs) {
        const PatchGrid g = patch_grid({in.height, in.width}, w.cfg.patch_size);
        Mat<T> tok = patch_embed(in, w);
        if (patch_tokens_out) patch_tokens_out->push_back(tok);
        const FeatureMap<T> pos = interpolate(w.pos, g);
        Mat<T> pos_tokens = pos.to_tokens();
        embedded.push_back(apply_positions(tok, pos_tokens));
        if (grids_out) grids_out->push_back(g);
    }
    return pack(std::span<const Mat<T>>(embedded));
}

template <typename T>
std::vector<FeatureMap<T>> encode_inputs(std::span<const VisualInput<T>> inputs,
                                         const EncoderWeights<T>& w) {
    std::vector<PatchGrid> grids;
    PackedBatch<T> batch = embed_inputs(inputs, w, &grids);
    return encode_packed(batch, std::span<const PatchGrid>(grids), w);
}

} // namespace oryx
