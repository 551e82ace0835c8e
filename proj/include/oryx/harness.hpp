#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "oryx/compressor.hpp"
#include "oryx/core.hpp"
#include "oryx/encoder.hpp"
#include "oryx/errors.hpp"
#include "oryx/planner.hpp"
#include "oryx/rng.hpp"

namespace oryx {

// Toy trainable stack: encoder, compressor, then a linear head over the
// mean-pooled compressed tokens against a scalar target. The head stands in
// for the sequence model; only the interface and freeze semantics matter.

enum class StageId { ViTAdapt, Stage1Pretrain, Stage1SFT, Stage2Joint };

inline const char* stage_name(StageId id) {
    switch (id) {
        case StageId::ViTAdapt: return "ViTAdapt";
        case StageId::Stage1Pretrain: return "Stage1Pretrain";
        case StageId::Stage1SFT: return "Stage1SFT";
        case StageId::Stage2Joint: return "Stage2Joint";
    }
    return "?";
}

struct StageSchedule {
    StageId id = StageId::ViTAdapt;
    std::vector<std::string> trainable;
};

inline StageSchedule stage_schedule(StageId id) {
    switch (id) {
        case StageId::ViTAdapt: return {id, {"encoder"}};
        case StageId::Stage1Pretrain: return {id, {"compressor", "projector"}};
        case StageId::Stage1SFT: return {id, {"compressor", "head"}};
        case StageId::Stage2Joint: return {id, {"compressor", "head"}};
    }
    throw InvalidInput("unknown stage id");
}

template <typename T>
struct Model {
    EncoderWeights<T> enc;
    CompressorWeights<T> comp;
    Mat<T> head_w;          // [lm_channels x 1]
    std::vector<T> head_b;  // [1]
};

template <typename T>
Model<T> make_model(const EncoderConfig& cfg, int lm_channels, DownsampleVariant variant,
                    std::uint64_t seed) {
    Model<T> m;
    EncoderConfig ec = cfg;
    ec.seed = seed;
    m.enc = make_encoder<T>(ec);
    m.comp = make_compressor<T>(cfg.channels, lm_channels, variant, seed + 1);
    Rng rng(seed + 2);
    m.head_w = Mat<T>(lm_channels, 1);
    fill_truncated_normal<T>(m.head_w.v, rng, T(0.02));
    m.head_b.assign(1, T(0));
    return m;
}

template <typename T>
Model<T> zero_like(const Model<T>& m) {
    Model<T> g;
    g.enc = zero_like(m.enc);
    g.comp = zero_like(m.comp);
    g.head_w = Mat<T>(m.head_w.rows, m.head_w.cols);
    g.head_b.assign(m.head_b.size(), T(0));
    return g;
}

// ---- named parameter groups ----
// encoder: patch projection, position table, transformer blocks
// compressor: phi_q/phi_k and the r=2 / r=4 downsample kernels
// projector: the shared output MLP into LM width
// head: the toy sequence head

template <typename T>
struct NamedGroup {
    std::string name;
    std::vector<std::span<T>> tensors;

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.size();
        return n;
    }
};

template <typename T>
std::vector<NamedGroup<T>> param_groups(Model<T>& m) {
    std::vector<NamedGroup<T>> out(4);
    auto vec = [](std::vector<T>& v) { return std::span<T>(v); };
    auto mat = [](Mat<T>& w) { return std::span<T>(w.v); };

    NamedGroup<T>& enc = out[0];
    enc.name = "encoder";
    enc.tensors = {mat(m.enc.w_patch), vec(m.enc.b_patch), vec(m.enc.pos.values)};
    for (auto& b : m.enc.blocks) {
        enc.tensors.push_back(vec(b.ln1.gamma));
        enc.tensors.push_back(vec(b.ln1.beta));
        enc.tensors.push_back(mat(b.attn.wq));
        enc.tensors.push_back(mat(b.attn.wk));
        enc.tensors.push_back(mat(b.attn.wv));
        enc.tensors.push_back(vec(b.attn.bq));
        enc.tensors.push_back(vec(b.attn.bk));
        enc.tensors.push_back(vec(b.attn.bv));
        enc.tensors.push_back(mat(b.wo));
        enc.tensors.push_back(vec(b.bo));
        enc.tensors.push_back(vec(b.ln2.gamma));
        enc.tensors.push_back(vec(b.ln2.beta));
        enc.tensors.push_back(mat(b.w1));
        enc.tensors.push_back(vec(b.b1));
        enc.tensors.push_back(mat(b.w2));
        enc.tensors.push_back(vec(b.b2));
    }

    NamedGroup<T>& comp = out[1];
    comp.name = "compressor";
    comp.tensors = {mat(m.comp.phi_q), mat(m.comp.phi_k)};
    for (int r : {2, 4}) {
        comp.tensors.push_back(vec(m.comp.dw(r).k));
        comp.tensors.push_back(mat(m.comp.pw(r).w1));
        comp.tensors.push_back(vec(m.comp.pw(r).b1));
        comp.tensors.push_back(mat(m.comp.pw(r).w2));
        comp.tensors.push_back(vec(m.comp.pw(r).b2));
    }

    NamedGroup<T>& proj = out[2];
    proj.name = "projector";
    proj.tensors = {mat(m.comp.mlp_w1), vec(m.comp.mlp_b1), mat(m.comp.mlp_w2),
                    vec(m.comp.mlp_b2)};

    NamedGroup<T>& head = out[3];
    head.name = "head";
    head.tensors = {mat(m.head_w), vec(m.head_b)};
    return out;
}

// The trainable subset named by the schedule; parameters outside it are never
// handed to the optimizer, so freezing is exact by construction.
template <typename T>
std::vector<NamedGroup<T>> apply_stage(Model<T>& m, const StageSchedule& s) {
    auto groups = param_groups(m);
    std::vector<NamedGroup<T>> picked;
    for (const std::string& name : s.trainable) {
        bool found = false;
        for (auto& g : groups)
            if (g.name == name) {
                picked.push_back(g);
                found = true;
                break;
            }
        if (!found) throw InvalidInput("unknown parameter group: " + name);
    }
    return picked;
}

// ---- samples and batches ----

template <typename T>
struct Sample {
    VisualInput<T> input;
    int ratio = 1;
    T target = T(0);
};

// Routes a clip through the classifier so the sample carries the planner's
// compression ratio for its modality.
template <typename T>
Sample<T> make_sample(VisualInput<T> frame, std::int64_t clip_frames, T target,
                      std::int64_t long_threshold = kLongThreshold) {
    const Category cat = classify_input(clip_frames, long_threshold);
    Sample<T> s;
    s.input = std::move(frame);
    s.ratio = ratio_for(cat);
    s.target = target;
    return s;
}

template <typename T>
Sample<T> synthetic_sample(int height, int width, std::int64_t clip_frames, T target, Rng& rng) {
    VisualInput<T> f(height, width, 1,
                     clip_frames == 1 ? Modality::Image
                                      : (clip_frames > kLongThreshold ? Modality::LongVideoFrame
                                                                      : Modality::ShortVideoFrame));
    for (auto& px : f.pixels) px = static_cast<T>(rng.uniform());
    return make_sample(std::move(f), clip_frames, target);
}

template <typename T>
struct BatchCache {
    PackedBatch<T> batch;
    std::vector<PatchGrid> grids;
    EncoderCache<T> enc;
    std::vector<FeatureMap<T>> feats;
    std::vector<CompressCache<T>> comp;
    std::vector<Mat<T>> tokens;
    std::vector<std::vector<T>> pooled;
    std::vector<T> preds;
};

template <typename T>
T batch_forward(const Model<T>& m, std::span<const Sample<T>> samples, BatchCache<T>* cache) {
    if (samples.empty()) throw InvalidInput("batch needs at least one sample");
    std::vector<VisualInput<T>> inputs;
    inputs.reserve(samples.size());
    for (const auto& s : samples) inputs.push_back(s.input);

    std::vector<PatchGrid> grids;
    PackedBatch<T> batch = embed_inputs(std::span<const VisualInput<T>>(inputs), m.enc, &grids);
    if (cache) {
        cache->grids = grids;
        cache->comp.assign(samples.size(), CompressCache<T>());
        cache->tokens.assign(samples.size(), Mat<T>());
        cache->pooled.assign(samples.size(), {});
        cache->preds.assign(samples.size(), T(0));
    }
    std::vector<FeatureMap<T>> feats = encode_packed(batch, std::span<const PatchGrid>(grids),
                                                     m.enc, cache ? &cache->enc : nullptr);

    T loss = T(0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        Mat<T> toks = compress(feats[i], samples[i].ratio, m.comp.variant, m.comp,
                               cache ? &cache->comp[i] : nullptr);
        std::vector<T> pooled(static_cast<std::size_t>(toks.cols), T(0));
        for (std::int64_t r = 0; r < toks.rows; ++r)
            for (std::int64_t c = 0; c < toks.cols; ++c)
                pooled[static_cast<std::size_t>(c)] += toks(r, c);
        const T inv = T(1) / static_cast<T>(toks.rows);
        for (auto& p : pooled) p *= inv;
        T pred = m.head_b[0];
        for (std::int64_t c = 0; c < m.head_w.rows; ++c)
            pred += pooled[static_cast<std::size_t>(c)] * m.head_w(c, 0);
        const T diff = pred - samples[i].target;
        loss += diff * diff;
        if (cache) {
            cache->tokens[i] = std::move(toks);
            cache->pooled[i] = std::move(pooled);
            cache->preds[i] = pred;
        }
    }
    loss /= static_cast<T>(samples.size());
    if (!std::isfinite(static_cast<double>(loss))) {
        std::string diag = "loss is not finite;";
        for (std::size_t i = 0; i < samples.size(); ++i) {
            char buf[96];
            std::snprintf(buf, sizeof buf, " sample %zu: r=%d target=%g", i, samples[i].ratio,
                          static_cast<double>(samples[i].target));
            diag += buf;
        }
        throw NumericalError(diag);
    }
    if (cache) {
        cache->batch = std::move(batch);
        cache->feats = std::move(feats);
    }
    return loss;
}

// Forward plus full reverse pass; gradients accumulate into a Model-shaped
// zero_like structure so they walk in the same group order as the weights.
template <typename T>
T batch_backward(const Model<T>& m, std::span<const Sample<T>> samples, Model<T>& grads) {
    BatchCache<T> cache;
    const T loss = batch_forward(m, samples, &cache);
    const std::int64_t c = m.enc.cfg.channels;
    Mat<T> d_flat(cache.batch.tokens.rows, c);

    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Mat<T>& toks = cache.tokens[i];
        const T d_pred = T(2) * (cache.preds[i] - samples[i].target) / static_cast<T>(samples.size());
        grads.head_b[0] += d_pred;
        for (std::int64_t ch = 0; ch < m.head_w.rows; ++ch)
            grads.head_w(ch, 0) += cache.pooled[i][static_cast<std::size_t>(ch)] * d_pred;
        Mat<T> d_toks(toks.rows, toks.cols);
        const T inv = T(1) / static_cast<T>(toks.rows);
        for (std::int64_t r = 0; r < toks.rows; ++r)
            for (std::int64_t ch = 0; ch < toks.cols; ++ch)
                d_toks(r, ch) = m.head_w(ch, 0) * d_pred * inv;
        FeatureMap<T> d_fH(cache.feats[i].rows, cache.feats[i].cols, static_cast<int>(c));
        compress_backward(m.comp, cache.comp[i], d_toks, d_fH, grads.comp);
        const std::int64_t base = cache.batch.offsets[static_cast<std::int64_t>(i)];
        Mat<T> d_seg = d_fH.to_tokens();
        for (std::int64_t r = 0; r < d_seg.rows; ++r)
            for (std::int64_t ch = 0; ch < c; ++ch) d_flat(base + r, ch) = d_seg(r, ch);
    }

    Mat<T> dx0 = run_blocks_backward(cache.batch, m.enc, cache.enc, d_flat, grads.enc);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const PatchGrid& g = cache.grids[i];
        const std::int64_t base = cache.batch.offsets[static_cast<std::int64_t>(i)];
        Mat<T> d_tok(g.token_count, c);
        for (std::int64_t r = 0; r < g.token_count; ++r)
            for (std::int64_t ch = 0; ch < c; ++ch) d_tok(r, ch) = dx0(base + r, ch);
        patch_embed_backward(samples[i].input, m.enc, d_tok, grads.enc);
        const FeatureMap<T> d_pos = FeatureMap<T>::from_tokens(d_tok, g.rows, g.cols);
        interpolate_backward(m.enc.pos, g, d_pos, std::span<T>(grads.enc.pos.values));
    }
    return loss;
}

// Plain SGD over the stage's trainable groups. No optimizer state exists, so
// the per-stage reset is vacuous.
template <typename T>
void sgd_step(Model<T>& m, Model<T>& grads, const StageSchedule& schedule, T lr) {
    auto target = apply_stage(m, schedule);
    auto source = apply_stage(grads, schedule);
    for (std::size_t g = 0; g < target.size(); ++g)
        for (std::size_t t = 0; t < target[g].tensors.size(); ++t) {
            std::span<T> w = target[g].tensors[t];
            std::span<T> dw = source[g].tensors[t];
            for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * dw[k];
        }
}

template <typename T>
T train_step(Model<T>& m, std::span<const Sample<T>> samples, const StageSchedule& schedule,
             T lr) {
    Model<T> grads = zero_like(m);
    const T loss = batch_backward(m, samples, grads);
    sgd_step(m, grads, schedule, lr);
    return loss;
}

template <typename T>
std::vector<double> run_stage(Model<T>& m, std::span<const Sample<T>> samples,
                              const StageSchedule& schedule, int steps, T lr) {
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps));
    for (int s = 0; s < steps; ++s)
        losses.push_back(static_cast<double>(train_step(m, samples, schedule, lr)));
    return losses;
}

inline std::string loss_csv(std::span<const double> losses) {
    std::string out = "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
        out += buf;
    }
    return out;
}

// Central differences against the analytic gradient on randomly probed
// scalars of one group ("all" spans every group). Step 1e-4 max(1,|theta|),
// relative error against max(|analytic|, |numeric|, 1e-8).
template <typename T>
double finite_diff_check(Model<T>& m, std::span<const Sample<T>> samples,
                         const std::string& group_name, int probe_count, std::uint64_t seed) {
    Model<T> grads = zero_like(m);
    batch_backward(m, samples, grads);

    auto pick = [&](Model<T>& model) {
        std::vector<NamedGroup<T>> all = param_groups(model);
        std::vector<NamedGroup<T>> out;
        for (auto& g : all)
            if (group_name == "all" || g.name == group_name) out.push_back(g);
        if (out.empty()) throw InvalidInput("unknown parameter group: " + group_name);
        return out;
    };
    auto wg = pick(m);
    auto gg = pick(grads);
    std::size_t total = 0;
    for (const auto& g : wg) total += g.scalar_count();
    if (total == 0) throw InvalidInput("group has no parameters");

    Rng rng(seed);
    double worst = 0.0;
    for (int p = 0; p < probe_count; ++p) {
        std::size_t flat = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(total) - 1));
        std::size_t gi = 0, ti = 0;
        while (flat >= wg[gi].tensors[ti].size()) {
            flat -= wg[gi].tensors[ti].size();
            if (++ti == wg[gi].tensors.size()) {
                ti = 0;
                ++gi;
            }
        }
        T& theta = wg[gi].tensors[ti][flat];
        const T saved = theta;
        const double h = 1e-4 * std::max(1.0, std::abs(static_cast<double>(saved)));
        theta = saved + static_cast<T>(h);
        const double lp = static_cast<double>(batch_forward(m, samples, static_cast<BatchCache<T>*>(nullptr)));
        theta = saved - static_cast<T>(h);
        const double lm = static_cast<double>(batch_forward(m, samples, static_cast<BatchCache<T>*>(nullptr)));
        theta = saved;
        const double numeric = (lp - lm) / (2.0 * h);
        const double analytic = static_cast<double>(gg[gi].tensors[ti][flat]);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

} // namespace oryx
