#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "oryx/core.hpp"
#include "oryx/encoder.hpp" // gelu
#include "oryx/errors.hpp"
#include "oryx/rng.hpp"

namespace oryx {

enum class DownsampleVariant { AvgPool, DWConv, ConvMLP };

inline bool valid_ratio(int r) { return r == 1 || r == 2 || r == 4; }

// depthwise r x r, stride r; kernel laid out [channel][ky*r+kx]
template <typename T>
struct DepthwiseKernel {
    int r = 0;
    std::vector<T> k;
};

template <typename T>
struct PointwiseMlp {
    Mat<T> w1;
    std::vector<T> b1;
    Mat<T> w2;
    std::vector<T> b2;
};

// phi_q/phi_k are bias-free linear maps into d_k dims; V is raw, so the only
// other parameters are the shared output MLP and the optional kernels of the
// r=2 and r=4 downsample paths.
template <typename T>
struct CompressorWeights {
    int channels = 0;
    int d_k = 0;
    int lm_channels = 0;
    DownsampleVariant variant = DownsampleVariant::AvgPool;
    Mat<T> phi_q, phi_k;     // [C x d_k]
    Mat<T> mlp_w1;           // [C x 2*C_lm]
    std::vector<T> mlp_b1;
    Mat<T> mlp_w2;           // [2*C_lm x C_lm]
    std::vector<T> mlp_b2;
    DepthwiseKernel<T> dw2, dw4;
    PointwiseMlp<T> pw2, pw4;

    const DepthwiseKernel<T>& dw(int r) const { return r == 2 ? dw2 : dw4; }
    DepthwiseKernel<T>& dw(int r) { return r == 2 ? dw2 : dw4; }
    const PointwiseMlp<T>& pw(int r) const { return r == 2 ? pw2 : pw4; }
    PointwiseMlp<T>& pw(int r) { return r == 2 ? pw2 : pw4; }
};

template <typename T>
CompressorWeights<T> make_compressor(int channels, int lm_channels, DownsampleVariant variant,
                                     std::uint64_t seed, int d_k = 0) {
    if (channels <= 0 || lm_channels <= 0) throw InvalidInput("compressor dims must be positive");
    if (d_k == 0) d_k = std::max(1, channels / 4);
    if (d_k < 1) throw InvalidInput("d_k must be at least 1");
    Rng rng(seed);
    CompressorWeights<T> w;
    w.channels = channels;
    w.d_k = d_k;
    w.lm_channels = lm_channels;
    w.variant = variant;
    w.phi_q = Mat<T>(channels, d_k);
    w.phi_k = Mat<T>(channels, d_k);
    fill_truncated_normal<T>(w.phi_q.v, rng, T(0.02));
    fill_truncated_normal<T>(w.phi_k.v, rng, T(0.02));
    const int hid = 2 * lm_channels;
    w.mlp_w1 = Mat<T>(channels, hid);
    fill_truncated_normal<T>(w.mlp_w1.v, rng, T(0.02));
    w.mlp_b1.assign(static_cast<std::size_t>(hid), T(0));
    w.mlp_w2 = Mat<T>(hid, lm_channels);
    fill_truncated_normal<T>(w.mlp_w2.v, rng, T(0.02));
    w.mlp_b2.assign(static_cast<std::size_t>(lm_channels), T(0));
    for (int r : {2, 4}) {
        auto& dk = w.dw(r);
        dk.r = r;
        dk.k.resize(static_cast<std::size_t>(channels) * r * r);
        fill_truncated_normal<T>(dk.k, rng, T(0.02));
        auto& p = w.pw(r);
        p.w1 = Mat<T>(channels, channels);
        fill_truncated_normal<T>(p.w1.v, rng, T(0.02));
        p.b1.assign(static_cast<std::size_t>(channels), T(0));
        p.w2 = Mat<T>(channels, channels);
        fill_truncated_normal<T>(p.w2.v, rng, T(0.02));
        p.b2.assign(static_cast<std::size_t>(channels), T(0));
    }
    return w;
}

template <typename T>
CompressorWeights<T> zero_like(const CompressorWeights<T>& w) {
    CompressorWeights<T> g;
    g.channels = w.channels;
    g.d_k = w.d_k;
    g.lm_channels = w.lm_channels;
    g.variant = w.variant;
    g.phi_q = Mat<T>(w.phi_q.rows, w.phi_q.cols);
    g.phi_k = Mat<T>(w.phi_k.rows, w.phi_k.cols);
    g.mlp_w1 = Mat<T>(w.mlp_w1.rows, w.mlp_w1.cols);
    g.mlp_b1.assign(w.mlp_b1.size(), T(0));
    g.mlp_w2 = Mat<T>(w.mlp_w2.rows, w.mlp_w2.cols);
    g.mlp_b2.assign(w.mlp_b2.size(), T(0));
    for (int r : {2, 4}) {
        g.dw(r).r = r;
        g.dw(r).k.assign(w.dw(r).k.size(), T(0));
        g.pw(r).w1 = Mat<T>(w.pw(r).w1.rows, w.pw(r).w1.cols);
        g.pw(r).b1.assign(w.pw(r).b1.size(), T(0));
        g.pw(r).w2 = Mat<T>(w.pw(r).w2.rows, w.pw(r).w2.cols);
        g.pw(r).b2.assign(w.pw(r).b2.size(), T(0));
    }
    return g;
}

// ---- edge-replication padding up to multiples of r ----

template <typename T>
FeatureMap<T> pad_replicate(const FeatureMap<T>& f, int r) {
    const int rows_p = (f.rows + r - 1) / r * r;
    const int cols_p = (f.cols + r - 1) / r * r;
    if (rows_p == f.rows && cols_p == f.cols) return f;
    FeatureMap<T> out(rows_p, cols_p, f.channels);
    for (int i = 0; i < rows_p; ++i) {
        const int si = std::min(i, f.rows - 1);
        for (int j = 0; j < cols_p; ++j) {
            const int sj = std::min(j, f.cols - 1);
            for (int ch = 0; ch < f.channels; ++ch) out.at(i, j, ch) = f.at(si, sj, ch);
        }
    }
    return out;
}

template <typename T>
void pad_replicate_backward(int rows, int cols, int channels, const FeatureMap<T>& d_padded,
                            FeatureMap<T>& d_f) {
    for (int i = 0; i < d_padded.rows; ++i) {
        const int si = std::min(i, rows - 1);
        for (int j = 0; j < d_padded.cols; ++j) {
            const int sj = std::min(j, cols - 1);
            for (int ch = 0; ch < channels; ++ch) d_f.at(si, sj, ch) += d_padded.at(i, j, ch);
        }
    }
}

// ---- downsample paths ----

namespace detail {

template <typename T>
FeatureMap<T> pointwise_mlp_forward(const FeatureMap<T>& x, const PointwiseMlp<T>& p,
                                    Mat<T>* pre_out) {
    const int c = x.channels;
    Mat<T> tokens = x.to_tokens();
    Mat<T> pre = matmul(tokens, p.w1);
    add_row_bias(pre, std::span<const T>(p.b1));
    Mat<T> act(pre.rows, pre.cols);
    for (std::int64_t k = 0; k < pre.size(); ++k)
        act.v[static_cast<std::size_t>(k)] = gelu(pre.v[static_cast<std::size_t>(k)]);
    Mat<T> out = matmul(act, p.w2);
    add_row_bias(out, std::span<const T>(p.b2));
    if (pre_out) *pre_out = std::move(pre);
    FeatureMap<T> fm(x.rows, x.cols, c);
    fm.values = std::move(out.v);
    return fm;
}

} // namespace detail

template <typename T>
struct CompressCache {
    int r = 1;
    DownsampleVariant variant = DownsampleVariant::AvgPool;
    FeatureMap<T> f_H;      // original input
    FeatureMap<T> padded;   // edge-padded input (cells align with f_L)
    FeatureMap<T> dw_out;   // depthwise output (ConvMLP only)
    Mat<T> pw_pre;          // pointwise pre-activation (ConvMLP only)
    FeatureMap<T> f_L0;     // downsample result
    Mat<T> alpha;           // [cells x r*r] region attention weights
    Mat<T> qp;              // [cells x d_k]
    Mat<T> kp;              // [cells*r*r x d_k]
    FeatureMap<T> fused;    // after residual fusion, input to the shared mlp
    Mat<T> mlp_pre;         // [N x 2*C_lm]
};

// r=1 is the untouched path regardless of variant.
template <typename T>
FeatureMap<T> downsample(const FeatureMap<T>& f_H, int r, DownsampleVariant variant,
                         const CompressorWeights<T>& w, CompressCache<T>* cache = nullptr) {
    if (!valid_ratio(r)) throw InvalidInput("ratio must be 1, 2, or 4");
    if (f_H.channels != w.channels) throw ShapeError("feature channels mismatch");
    if (cache) {
        cache->r = r;
        cache->variant = variant;
        cache->f_H = f_H;
    }
    if (r == 1) {
        if (cache) cache->padded = f_H;
        if (cache) cache->f_L0 = f_H;
        return f_H;
    }
    FeatureMap<T> padded = pad_replicate(f_H, r);
    const int rows_o = padded.rows / r, cols_o = padded.cols / r, c = f_H.channels;
    FeatureMap<T> out(rows_o, cols_o, c);
    if (variant == DownsampleVariant::AvgPool) {
        const T inv = T(1) / static_cast<T>(r * r);
        for (int i = 0; i < rows_o; ++i)
            for (int j = 0; j < cols_o; ++j)
                for (int ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    for (int py = 0; py < r; ++py)
                        for (int px = 0; px < r; ++px)
                            acc += padded.at(i * r + py, j * r + px, ch);
                    out.at(i, j, ch) = acc * inv;
                }
    } else {
        const DepthwiseKernel<T>& dk = w.dw(r);
        for (int i = 0; i < rows_o; ++i)
            for (int j = 0; j < cols_o; ++j)
                for (int ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    for (int py = 0; py < r; ++py)
                        for (int px = 0; px < r; ++px)
                            acc += dk.k[static_cast<std::size_t>(ch) * r * r + py * r + px] *
                                   padded.at(i * r + py, j * r + px, ch);
                    out.at(i, j, ch) = acc;
                }
        if (variant == DownsampleVariant::ConvMLP) {
            if (cache) cache->dw_out = out;
            out = detail::pointwise_mlp_forward(out, w.pw(r), cache ? &cache->pw_pre : nullptr);
        }
    }
    if (cache) {
        cache->padded = std::move(padded);
        cache->f_L0 = out;
    }
    return out;
}

// f_L = f_L + Softmax(phi_q(Q) phi_k(K)^T / sqrt(d_k)) V, one head, V raw.
// Every f_L patch attends to exactly the r x r patches of its cell.
template <typename T>
FeatureMap<T> region_attention(const FeatureMap<T>& f_L, const FeatureMap<T>& f_H, int r,
                               const CompressorWeights<T>& w, CompressCache<T>* cache = nullptr) {
    if (!valid_ratio(r)) throw InvalidInput("ratio must be 1, 2, or 4");
    if (f_L.channels != w.channels || f_H.channels != w.channels)
        throw ShapeError("feature channels mismatch");
    FeatureMap<T> padded = (cache && cache->padded.rows > 0 && cache->r == r)
                               ? cache->padded
                               : pad_replicate(f_H, r);
    if (f_L.rows * r != padded.rows || f_L.cols * r != padded.cols)
        throw ShapeError("low-res grid does not match padded high-res grid / r");
    const int c = w.channels, dk = w.d_k, rr = r * r;
    const std::int64_t cells = f_L.token_count();
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));

    Mat<T> qp(cells, dk);        // phi_q(Q)
    Mat<T> kp(cells * rr, dk);   // phi_k(K), keys grouped per cell
    Mat<T> alpha(cells, rr);
    FeatureMap<T> out(f_L.rows, f_L.cols, c);

    for (int i = 0; i < f_L.rows; ++i)
        for (int j = 0; j < f_L.cols; ++j) {
            const std::int64_t cell = static_cast<std::int64_t>(i) * f_L.cols + j;
            for (int a = 0; a < dk; ++a) {
                T acc = T(0);
                for (int ch = 0; ch < c; ++ch) acc += f_L.at(i, j, ch) * w.phi_q(ch, a);
                qp(cell, a) = acc;
            }
            T logits[16];
            T mx = T(0);
            for (int m = 0; m < rr; ++m) {
                const int py = m / r, px = m % r;
                const std::int64_t key_row = cell * rr + m;
                for (int a = 0; a < dk; ++a) {
                    T acc = T(0);
                    for (int ch = 0; ch < c; ++ch)
                        acc += padded.at(i * r + py, j * r + px, ch) * w.phi_k(ch, a);
                    kp(key_row, a) = acc;
                }
                T dot = T(0);
                for (int a = 0; a < dk; ++a) dot += qp(cell, a) * kp(key_row, a);
                logits[m] = dot * inv_sqrt;
                mx = m == 0 ? logits[m] : std::max(mx, logits[m]);
            }
            T z = T(0);
            for (int m = 0; m < rr; ++m) {
                logits[m] = std::exp(logits[m] - mx);
                z += logits[m];
            }
            for (int m = 0; m < rr; ++m) alpha(cell, m) = logits[m] / z;
            for (int ch = 0; ch < c; ++ch) {
                T acc = f_L.at(i, j, ch);
                for (int m = 0; m < rr; ++m)
                    acc += alpha(cell, m) * padded.at(i * r + m / r, j * r + m % r, ch);
                out.at(i, j, ch) = acc;
            }
        }
    if (cache) {
        if (cache->padded.rows == 0 || cache->r != r) {
            cache->r = r;
            cache->padded = std::move(padded);
        }
        cache->f_L0 = f_L;
        cache->qp = std::move(qp);
        cache->kp = std::move(kp);
        cache->alpha = std::move(alpha);
        cache->fused = out;
    }
    return out;
}

// Shared two-layer MLP into LM space; same object whichever downsample path
// produced f_L. Tokens come out flattened row-major.
template <typename T>
Mat<T> project_shared(const FeatureMap<T>& f_L, const CompressorWeights<T>& w,
                      CompressCache<T>* cache = nullptr) {
    if (f_L.channels != w.channels) throw ShapeError("feature channels mismatch");
    Mat<T> tokens = f_L.to_tokens();
    Mat<T> pre = matmul(tokens, w.mlp_w1);
    add_row_bias(pre, std::span<const T>(w.mlp_b1));
    Mat<T> act(pre.rows, pre.cols);
    for (std::int64_t k = 0; k < pre.size(); ++k)
        act.v[static_cast<std::size_t>(k)] = gelu(pre.v[static_cast<std::size_t>(k)]);
    Mat<T> out = matmul(act, w.mlp_w2);
    add_row_bias(out, std::span<const T>(w.mlp_b2));
    if (cache) cache->mlp_pre = std::move(pre);
    return out;
}

template <typename T>
Mat<T> compress(const FeatureMap<T>& f_H, int r, DownsampleVariant variant,
                const CompressorWeights<T>& w, CompressCache<T>* cache = nullptr) {
    FeatureMap<T> f_L = downsample(f_H, r, variant, w, cache);
    FeatureMap<T> fused = region_attention(f_L, f_H, r, w, cache);
    return project_shared(fused, w, cache);
}

// Full reverse pass for compress. Accumulates parameter gradients into grads
// and the input cotangent into d_fH (which must be f_H shaped, zeroed or
// holding prior accumulation).
template <typename T>
void compress_backward(const CompressorWeights<T>& w, const CompressCache<T>& cache,
                       const Mat<T>& d_tokens, FeatureMap<T>& d_fH, CompressorWeights<T>& grads) {
    const int r = cache.r, rr = r * r, c = w.channels, dk = w.d_k;
    const FeatureMap<T>& fused = cache.fused;
    const std::int64_t n = fused.token_count();
    if (d_tokens.rows != n || d_tokens.cols != w.lm_channels)
        throw ShapeError("token cotangent shape mismatch");
    if (d_fH.rows != cache.f_H.rows || d_fH.cols != cache.f_H.cols)
        throw ShapeError("input cotangent shape mismatch");

    // shared mlp
    Mat<T> act(cache.mlp_pre.rows, cache.mlp_pre.cols);
    for (std::int64_t k = 0; k < act.size(); ++k)
        act.v[static_cast<std::size_t>(k)] = gelu(cache.mlp_pre.v[static_cast<std::size_t>(k)]);
    matmul_at_acc(act, d_tokens, grads.mlp_w2);
    col_sums_acc(d_tokens, std::span<T>(grads.mlp_b2));
    Mat<T> dact = matmul_bt(d_tokens, w.mlp_w2);
    for (std::int64_t k = 0; k < dact.size(); ++k)
        dact.v[static_cast<std::size_t>(k)] *= gelu_grad(cache.mlp_pre.v[static_cast<std::size_t>(k)]);
    Mat<T> fused_tokens = fused.to_tokens();
    matmul_at_acc(fused_tokens, dact, grads.mlp_w1);
    col_sums_acc(dact, std::span<T>(grads.mlp_b1));
    Mat<T> d_fused_tokens = matmul_bt(dact, w.mlp_w1);

    // region attention
    FeatureMap<T> d_fL(fused.rows, fused.cols, c);
    FeatureMap<T> d_padded(cache.padded.rows, cache.padded.cols, c);
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dk));
    std::vector<T> dqp(static_cast<std::size_t>(dk));
    for (int i = 0; i < fused.rows; ++i)
        for (int j = 0; j < fused.cols; ++j) {
            const std::int64_t cell = static_cast<std::int64_t>(i) * fused.cols + j;
            const T* d_out = &d_fused_tokens(cell, 0);
            // residual into f_L
            for (int ch = 0; ch < c; ++ch) d_fL.at(i, j, ch) += d_out[ch];
            // attended sum: d_alpha_m = d_out . v_m ; d_v_m += alpha_m d_out
            T dalpha[16];
            for (int m = 0; m < rr; ++m) {
                const int py = m / r, px = m % r;
                T acc = T(0);
                for (int ch = 0; ch < c; ++ch) {
                    acc += d_out[ch] * cache.padded.at(i * r + py, j * r + px, ch);
                    d_padded.at(i * r + py, j * r + px, ch) += cache.alpha(cell, m) * d_out[ch];
                }
                dalpha[m] = acc;
            }
            // softmax
            T rowdot = T(0);
            for (int m = 0; m < rr; ++m) rowdot += dalpha[m] * cache.alpha(cell, m);
            T dlogit[16];
            for (int m = 0; m < rr; ++m)
                dlogit[m] = cache.alpha(cell, m) * (dalpha[m] - rowdot);
            // logits = qp . kp_m * inv_sqrt
            for (int a = 0; a < dk; ++a) dqp[static_cast<std::size_t>(a)] = T(0);
            for (int m = 0; m < rr; ++m) {
                const std::int64_t key_row = cell * rr + m;
                const int py = m / r, px = m % r;
                for (int a = 0; a < dk; ++a) {
                    dqp[a] += dlogit[m] * cache.kp(key_row, a) * inv_sqrt;
                    const T dkp = dlogit[m] * cache.qp(cell, a) * inv_sqrt;
                    // kp = phi_k^T k : d phi_k[ch,a] += k[ch] dkp ; dk[ch] += phi_k[ch,a] dkp
                    for (int ch = 0; ch < c; ++ch) {
                        grads.phi_k(ch, a) += cache.padded.at(i * r + py, j * r + px, ch) * dkp;
                        d_padded.at(i * r + py, j * r + px, ch) += w.phi_k(ch, a) * dkp;
                    }
                }
            }
            // qp = phi_q^T q with q = f_L[i,j]
            for (int a = 0; a < dk; ++a)
                for (int ch = 0; ch < c; ++ch) {
                    grads.phi_q(ch, a) += cache.f_L0.at(i, j, ch) * dqp[a];
                    d_fL.at(i, j, ch) += w.phi_q(ch, a) * dqp[a];
                }
        }

    // downsample
    if (r == 1) {
        // f_L and padded are both f_H itself
        for (std::size_t k = 0; k < d_fH.values.size(); ++k)
            d_fH.values[k] += d_fL.values[k] + d_padded.values[k];
        return;
    }
    FeatureMap<T> d_pad_from_pool(cache.padded.rows, cache.padded.cols, c);
    const int rows_o = fused.rows, cols_o = fused.cols;
    if (cache.variant == DownsampleVariant::AvgPool) {
        const T inv = T(1) / static_cast<T>(rr);
        for (int i = 0; i < rows_o; ++i)
            for (int j = 0; j < cols_o; ++j)
                for (int ch = 0; ch < c; ++ch) {
                    const T g = d_fL.at(i, j, ch) * inv;
                    for (int py = 0; py < r; ++py)
                        for (int px = 0; px < r; ++px)
                            d_pad_from_pool.at(i * r + py, j * r + px, ch) += g;
                }
    } else {
        FeatureMap<T> d_dw_out = d_fL;
        if (cache.variant == DownsampleVariant::ConvMLP) {
            // pointwise mlp backward onto the depthwise output
            const PointwiseMlp<T>& p = w.pw(r);
            PointwiseMlp<T>& gp = grads.pw(r);
            Mat<T> d_out_t = d_fL.to_tokens();
            Mat<T> act2(cache.pw_pre.rows, cache.pw_pre.cols);
            for (std::int64_t k = 0; k < act2.size(); ++k)
                act2.v[static_cast<std::size_t>(k)] = gelu(cache.pw_pre.v[static_cast<std::size_t>(k)]);
            matmul_at_acc(act2, d_out_t, gp.w2);
            col_sums_acc(d_out_t, std::span<T>(gp.b2));
            Mat<T> dact2 = matmul_bt(d_out_t, p.w2);
            for (std::int64_t k = 0; k < dact2.size(); ++k)
                dact2.v[static_cast<std::size_t>(k)] *= gelu_grad(cache.pw_pre.v[static_cast<std::size_t>(k)]);
            Mat<T> dw_tokens = cache.dw_out.to_tokens();
            matmul_at_acc(dw_tokens, dact2, gp.w1);
            col_sums_acc(dact2, std::span<T>(gp.b1));
            Mat<T> d_dw_tokens = matmul_bt(dact2, p.w1);
            d_dw_out = FeatureMap<T>(rows_o, cols_o, c);
            d_dw_out.values = std::move(d_dw_tokens.v);
        }
        const DepthwiseKernel<T>& dkn = w.dw(r);
        DepthwiseKernel<T>& gk = grads.dw(r);
        for (int i = 0; i < rows_o; ++i)
            for (int j = 0; j < cols_o; ++j)
                for (int ch = 0; ch < c; ++ch) {
                    const T g = d_dw_out.at(i, j, ch);
                    if (g == T(0)) continue;
                    for (int py = 0; py < r; ++py)
                        for (int px = 0; px < r; ++px) {
                            const std::size_t ki = static_cast<std::size_t>(ch) * rr + py * r + px;
                            gk.k[ki] += cache.padded.at(i * r + py, j * r + px, ch) * g;
                            d_pad_from_pool.at(i * r + py, j * r + px, ch) += dkn.k[ki] * g;
                        }
                }
    }
    for (std::size_t k = 0; k < d_padded.values.size(); ++k)
        d_padded.values[k] += d_pad_from_pool.values[k];
    pad_replicate_backward(cache.f_H.rows, cache.f_H.cols, c, d_padded, d_fH);
}

} // namespace oryx
