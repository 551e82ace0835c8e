#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "oryx/core.hpp"
#include "oryx/errors.hpp"
#include "oryx/rng.hpp"

namespace oryx {

// Flat [sum N_i x C] token store plus cumulative offsets; the paper's
// [1, sum N_i, C] with the leading batch dim implicit.
template <typename T>
struct PackedBatch {
    Mat<T> tokens;
    std::vector<std::int64_t> offsets; // b+1 entries, offsets[0] = 0

    std::int64_t segments() const { return static_cast<std::int64_t>(offsets.size()) - 1; }
    std::int64_t length(std::int64_t s) const { return offsets[s + 1] - offsets[s]; }

    void validate() const {
        if (offsets.size() < 2 || offsets.front() != 0)
            throw IntegrityError("offsets must start at 0 and describe at least one segment");
        for (std::size_t i = 1; i < offsets.size(); ++i)
            if (offsets[i] <= offsets[i - 1])
                throw IntegrityError("offsets must be strictly increasing");
        if (offsets.back() != tokens.rows)
            throw IntegrityError("offsets end does not match token count");
    }
};

template <typename T>
PackedBatch<T> pack(std::span<const Mat<T>> sequences) {
    if (sequences.empty()) throw InvalidInput("nothing to pack");
    const std::int64_t c = sequences[0].cols;
    std::int64_t total = 0;
    for (const auto& s : sequences) {
        if (s.cols != c) throw ShapeError("packed sequences must share channel count");
        if (s.rows < 1) throw InvalidInput("empty sequence in pack");
        total += s.rows;
    }
    PackedBatch<T> b;
    b.tokens = Mat<T>(total, c);
    b.offsets.reserve(sequences.size() + 1);
    b.offsets.push_back(0);
    std::int64_t at = 0;
    for (const auto& s : sequences) {
        std::copy(s.v.begin(), s.v.end(), b.tokens.v.begin() + at * c);
        at += s.rows;
        b.offsets.push_back(at);
    }
    return b;
}

template <typename T>
std::vector<Mat<T>> unpack(const PackedBatch<T>& b) {
    b.validate();
    std::vector<Mat<T>> out;
    out.reserve(static_cast<std::size_t>(b.segments()));
    for (std::int64_t s = 0; s < b.segments(); ++s) {
        Mat<T> m(b.length(s), b.tokens.cols);
        std::copy(b.tokens.v.begin() + b.offsets[s] * b.tokens.cols,
                  b.tokens.v.begin() + b.offsets[s + 1] * b.tokens.cols, m.v.begin());
        out.push_back(std::move(m));
    }
    return out;
}

// Q/K/V projections only; heads are concatenated straight back, any output
// projection belongs to the caller's block.
template <typename T>
struct AttentionWeights {
    int heads = 4;
    Mat<T> wq, wk, wv;          // [C x C]
    std::vector<T> bq, bk, bv;  // [C]
};

template <typename T>
AttentionWeights<T> make_attention_weights(int channels, int heads, Rng& rng, T scale = T(0.02)) {
    if (heads < 1 || channels % heads != 0)
        throw InvalidInput("channels must divide evenly into heads");
    AttentionWeights<T> w;
    w.heads = heads;
    for (Mat<T>* m : {&w.wq, &w.wk, &w.wv}) {
        *m = Mat<T>(channels, channels);
        fill_truncated_normal<T>(m->v, rng, scale);
    }
    w.bq.assign(static_cast<std::size_t>(channels), T(0));
    w.bk.assign(static_cast<std::size_t>(channels), T(0));
    w.bv.assign(static_cast<std::size_t>(channels), T(0));
    return w;
}

// Everything the backward pass reuses. probs is indexed segment * heads + h.
template <typename T>
struct AttentionCache {
    Mat<T> x, q, k, v;
    std::vector<Mat<T>> probs;
};

template <typename T>
struct AttentionGrads {
    Mat<T> dwq, dwk, dwv;
    std::vector<T> dbq, dbk, dbv;

    explicit AttentionGrads(int channels)
        : dwq(channels, channels), dwk(channels, channels), dwv(channels, channels),
          dbq(static_cast<std::size_t>(channels), T(0)),
          dbk(static_cast<std::size_t>(channels), T(0)),
          dbv(static_cast<std::size_t>(channels), T(0)) {}
};

namespace detail {

template <typename T>
void check_attention_shapes(const PackedBatch<T>& b, const AttentionWeights<T>& w) {
    b.validate();
    const std::int64_t c = b.tokens.cols;
    if (w.heads < 1 || c % w.heads != 0)
        throw InvalidInput("channels must divide evenly into heads");
    if (w.wq.rows != c || w.wq.cols != c || w.wk.rows != c || w.wk.cols != c ||
        w.wv.rows != c || w.wv.cols != c)
        throw ShapeError("projection weights must be C x C");
    if (static_cast<std::int64_t>(w.bq.size()) != c ||
        static_cast<std::int64_t>(w.bk.size()) != c ||
        static_cast<std::int64_t>(w.bv.size()) != c)
        throw ShapeError("projection biases must be length C");
}

// rowwise stable softmax in place
template <typename T>
void softmax_rows(Mat<T>& m) {
    for (std::int64_t i = 0; i < m.rows; ++i) {
        T mx = m(i, 0);
        for (std::int64_t j = 1; j < m.cols; ++j) mx = std::max(mx, m(i, j));
        T sum = T(0);
        for (std::int64_t j = 0; j < m.cols; ++j) {
            const T e = std::exp(m(i, j) - mx);
            m(i, j) = e;
            sum += e;
        }
        for (std::int64_t j = 0; j < m.cols; ++j) m(i, j) /= sum;
    }
}

} // namespace detail

// Per-segment multi-head scaled dot-product attention over the packed store.
// Tokens of segment i read only tokens of segment i; nothing crosses an
// offset boundary.
template <typename T>
PackedBatch<T> segment_attention_cached(const PackedBatch<T>& b, const AttentionWeights<T>& w,
                                        AttentionCache<T>* cache) {
    detail::check_attention_shapes(b, w);
    const std::int64_t c = b.tokens.cols;
    const int heads = w.heads;
    const std::int64_t dh = c / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));

    Mat<T> q = matmul(b.tokens, w.wq);
    add_row_bias(q, std::span<const T>(w.bq));
    Mat<T> k = matmul(b.tokens, w.wk);
    add_row_bias(k, std::span<const T>(w.bk));
    Mat<T> v = matmul(b.tokens, w.wv);
    add_row_bias(v, std::span<const T>(w.bv));

    PackedBatch<T> out;
    out.offsets = b.offsets;
    out.tokens = Mat<T>(b.tokens.rows, c);
    if (cache) cache->probs.assign(static_cast<std::size_t>(b.segments() * heads), Mat<T>());

    for (std::int64_t s = 0; s < b.segments(); ++s) {
        const std::int64_t lo = b.offsets[s], n = b.length(s);
        for (int h = 0; h < heads; ++h) {
            const std::int64_t hc = h * dh;
            Mat<T> scores(n, n);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    T dot = T(0);
                    for (std::int64_t d = 0; d < dh; ++d)
                        dot += q(lo + i, hc + d) * k(lo + j, hc + d);
                    scores(i, j) = dot * inv_sqrt;
                }
            detail::softmax_rows(scores);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t d = 0; d < dh; ++d) {
                    T acc = T(0);
                    for (std::int64_t j = 0; j < n; ++j)
                        acc += scores(i, j) * v(lo + j, hc + d);
                    out.tokens(lo + i, hc + d) = acc;
                }
            if (cache) cache->probs[static_cast<std::size_t>(s * heads + h)] = std::move(scores);
        }
    }
    if (cache) {
        cache->x = b.tokens;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
    }
    return out;
}

template <typename T>
PackedBatch<T> segment_attention(const PackedBatch<T>& b, const AttentionWeights<T>& w) {
    return segment_attention_cached<T>(b, w, nullptr);
}

// Reverse pass. d_out matches the packed output; gradients accumulate into
// d_x and grads.
template <typename T>
void segment_attention_backward(const PackedBatch<T>& b, const AttentionWeights<T>& w,
                                const AttentionCache<T>& cache, const Mat<T>& d_out,
                                Mat<T>& d_x, AttentionGrads<T>& grads) {
    const std::int64_t c = b.tokens.cols;
    const int heads = w.heads;
    const std::int64_t dh = c / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    if (!d_out.same_shape(b.tokens) || !d_x.same_shape(b.tokens))
        throw ShapeError("attention backward shape mismatch");

    Mat<T> dq(b.tokens.rows, c), dk(b.tokens.rows, c), dv(b.tokens.rows, c);

    for (std::int64_t s = 0; s < b.segments(); ++s) {
        const std::int64_t lo = b.offsets[s], n = b.length(s);
        for (int h = 0; h < heads; ++h) {
            const std::int64_t hc = h * dh;
            const Mat<T>& p = cache.probs[static_cast<std::size_t>(s * heads + h)];
            // out = P V: dV += P^T dO, dP = dO V^T
            Mat<T> dp(n, n);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < n; ++j) {
                    T acc = T(0);
                    for (std::int64_t d = 0; d < dh; ++d)
                        acc += d_out(lo + i, hc + d) * cache.v(lo + j, hc + d);
                    dp(i, j) = acc;
                }
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t d = 0; d < dh; ++d) {
                    T acc = T(0);
                    for (std::int64_t i = 0; i < n; ++i)
                        acc += p(i, j) * d_out(lo + i, hc + d);
                    dv(lo + j, hc + d) += acc;
                }
            // softmax: dS = P o (dP - rowdot), rowdot_i = sum_j dP_ij P_ij
            for (std::int64_t i = 0; i < n; ++i) {
                T rowdot = T(0);
                for (std::int64_t j = 0; j < n; ++j) rowdot += dp(i, j) * p(i, j);
                for (std::int64_t j = 0; j < n; ++j) dp(i, j) = p(i, j) * (dp(i, j) - rowdot);
            }
            // S = Q K^T * inv_sqrt: dQ += dS K * inv_sqrt, dK += dS^T Q * inv_sqrt
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t d = 0; d < dh; ++d) {
                    T acc = T(0);
                    for (std::int64_t j = 0; j < n; ++j)
                        acc += dp(i, j) * cache.k(lo + j, hc + d);
                    dq(lo + i, hc + d) += acc * inv_sqrt;
                }
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t d = 0; d < dh; ++d) {
                    T acc = T(0);
                    for (std::int64_t i = 0; i < n; ++i)
                        acc += dp(i, j) * cache.q(lo + i, hc + d);
                    dk(lo + j, hc + d) += acc * inv_sqrt;
                }
        }
    }

    // Q = x Wq + bq and friends
    matmul_at_acc(cache.x, dq, grads.dwq);
    matmul_at_acc(cache.x, dk, grads.dwk);
    matmul_at_acc(cache.x, dv, grads.dwv);
    col_sums_acc(dq, std::span<T>(grads.dbq));
    col_sums_acc(dk, std::span<T>(grads.dbk));
    col_sums_acc(dv, std::span<T>(grads.dbv));
    for (std::int64_t i = 0; i < b.tokens.rows; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
            T acc = T(0);
            for (std::int64_t kk = 0; kk < c; ++kk)
                acc += dq(i, kk) * w.wq(j, kk) + dk(i, kk) * w.wk(j, kk) + dv(i, kk) * w.wv(j, kk);
            d_x(i, j) += acc;
        }
}

// Textbook single-sequence reference, double precision throughout, written
// independently of the packed path.
template <typename T>
Mat<T> dense_oracle_attention(const Mat<T>& x, const AttentionWeights<T>& w) {
    const std::int64_t n = x.rows, c = x.cols;
    if (w.heads < 1 || c % w.heads != 0) throw InvalidInput("channels must divide evenly into heads");
    const std::int64_t dh = c / w.heads;
    auto proj = [&](const Mat<T>& wm, const std::vector<T>& bias) {
        std::vector<double> out(static_cast<std::size_t>(n * c));
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < c; ++j) {
                double acc = static_cast<double>(bias[static_cast<std::size_t>(j)]);
                for (std::int64_t kk = 0; kk < c; ++kk)
                    acc += static_cast<double>(x(i, kk)) * static_cast<double>(wm(kk, j));
                out[static_cast<std::size_t>(i * c + j)] = acc;
            }
        return out;
    };
    const auto q = proj(w.wq, w.bq), k = proj(w.wk, w.bk), v = proj(w.wv, w.bv);
    Mat<T> out(n, c);
    for (int h = 0; h < w.heads; ++h) {
        const std::int64_t hc = h * dh;
        for (std::int64_t i = 0; i < n; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(n));
            double mx = -1e300;
            for (std::int64_t j = 0; j < n; ++j) {
                double dot = 0.0;
                for (std::int64_t d = 0; d < dh; ++d)
                    dot += q[static_cast<std::size_t>(i * c + hc + d)] * k[static_cast<std::size_t>(j * c + hc + d)];
                logits[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (auto& l : logits) {
                l = std::exp(l - mx);
                z += l;
            }
            for (std::int64_t d = 0; d < dh; ++d) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < n; ++j)
                    acc += (logits[static_cast<std::size_t>(j)] / z) * v[static_cast<std::size_t>(j * c + hc + d)];
                out(i, hc + d) = static_cast<T>(acc);
            }
        }
    }
    return out;
}

} // namespace oryx
