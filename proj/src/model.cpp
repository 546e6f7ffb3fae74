#include "advlora/model.hpp"

#include <algorithm>
#include <cmath>

#include "advlora/errors.hpp"
#include "advlora/kernels.hpp"
#include "advlora/linalg.hpp"
#include "advlora/rng.hpp"

namespace advlora {

namespace {

AdapterUnit make_unit(std::size_t d_out, std::size_t d_in, const ModelConfig& cfg,
                      std::size_t layer, std::size_t unit_idx) {
    AdapterUnit u;
    const double w_sigma = 1.0 / std::sqrt(static_cast<double>(d_in));
    u.w0 = Matrix::gaussian(d_out, d_in, w_sigma,
                            substream(cfg.backbone_seed, Stream::backbone, layer, unit_idx));
    auto [a, b] = init_lora_pair(d_out, d_in, cfg.rank, cfg.init_sigma,
                                 substream(cfg.adapter_seed, Stream::lora_init, layer, unit_idx));
    u.a = std::move(a);
    u.b = std::move(b);
    u.rank = cfg.rank;
    u.scale = cfg.scale;
    u.enabled = true;
    return u;
}

} // namespace

AdapterModel make_model(const ModelConfig& cfg) {
    if (cfg.layer_dims.size() < 1)
        throw ConfigError("model needs at least one layer");
    if (cfg.input_dim == 0 || cfg.num_classes == 0)
        throw ConfigError("model input_dim and num_classes must be positive");
    for (std::size_t l = 0; l < cfg.layer_dims.size(); ++l) {
        const std::size_t d_in = l == 0 ? cfg.input_dim : cfg.layer_dims[l - 1];
        if (cfg.rank > std::min(cfg.layer_dims[l], d_in))
            throw ConfigError("rank " + std::to_string(cfg.rank) +
                              " exceeds layer " + std::to_string(l) + " dimensions");
    }

    AdapterModel model;
    model.config = cfg;
    model.input_dim = cfg.input_dim;
    model.temperature = cfg.temperature;

    const std::size_t L = cfg.layer_dims.size();
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t d_in = l == 0 ? cfg.input_dim : cfg.layer_dims[l - 1];
        const std::size_t d_out = cfg.layer_dims[l];
        LoRALinear layer;
        layer.q = make_unit(d_out, d_in, cfg, l, 0);
        if (cfg.qv_mode) layer.v = make_unit(d_out, d_in, cfg, l, 1);
        layer.act = l + 1 == L ? Activation::identity : Activation::tanh_act;
        layer.dropout_p = cfg.dropout_p;
        model.layers.push_back(std::move(layer));
    }

    const std::size_t d_embed = cfg.layer_dims.back();
    model.class_embeddings =
        Matrix::gaussian(cfg.num_classes, d_embed, 1.0,
                         substream(cfg.backbone_seed, Stream::class_embed));
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        double* row = model.class_embeddings.row(k);
        const double n = std::sqrt(kernels::sum_sq(row, d_embed));
        kernels::scal(row, 1.0 / n, d_embed);
    }
    return model;
}

Matrix effective_weight(const AdapterUnit& unit) {
    if (unit.b.cols() != unit.a.rows() || unit.b.rows() != unit.w0.rows() ||
        unit.a.cols() != unit.w0.cols())
        throw ContractError("effective_weight: adapter shapes inconsistent with w0");
    if (!unit.enabled) return unit.w0;
    Matrix w = unit.w0;
    Matrix ba = matmul(unit.b, unit.a);
    w.add_scaled(ba, unit.scale);
    return w;
}

Matrix effective_weight(const LoRALinear& layer) {
    Matrix w = effective_weight(layer.q);
    if (layer.v) w += effective_weight(*layer.v);
    return w;
}

namespace {

Matrix dropout_mask(std::size_t m, std::size_t d, double p, std::uint64_t mask_seed) {
    Matrix mask(m, d);
    const double keep = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask.data()[i] = uniform01(mask_seed, i) > p ? keep : 0.0;
    return mask;
}

// pre += s * ((u A^T) B^T)
void add_adapter_branch(Matrix& pre, const Matrix& u, const AdapterUnit& unit) {
    Matrix p = matmul_nt(u, unit.a);       // M x r
    Matrix branch = matmul_nt(p, unit.b);  // M x d_out
    pre.add_scaled(branch, unit.scale);
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* row = m.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] /= sum;
    }
}

} // namespace

ForwardCache forward(const AdapterModel& model, const Matrix& inputs,
                     const std::vector<double>* delta, const PassOptions& opts) {
    if (!inputs.all_finite()) throw NumericalError("forward: non-finite input");
    if (inputs.cols() != model.input_dim)
        throw ContractError("forward: input dim " + std::to_string(inputs.cols()) +
                            " != model input dim " + std::to_string(model.input_dim));
    if (delta && delta->size() != model.input_dim)
        throw ContractError("forward: delta dimension mismatch");

    ForwardCache cache;
    Matrix h = inputs;
    if (delta)
        for (std::size_t i = 0; i < h.rows(); ++i)
            kernels::add(h.row(i), delta->data(), h.cols());

    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const LoRALinear& layer = model.layers[l];
        ForwardCache::Layer lc;
        lc.input = h;

        const bool any_adapter = layer.q.enabled || (layer.v && layer.v->enabled);
        const bool use_mask = opts.train_mode && layer.dropout_p > 0.0 && any_adapter;
        if (use_mask) {
            lc.mask = dropout_mask(h.rows(), h.cols(), layer.dropout_p,
                                   substream(opts.seed, Stream::dropout, opts.step, l));
            lc.has_mask = true;
            lc.masked = Matrix(h.rows(), h.cols());
            kernels::mul(lc.masked.data(), h.data(), lc.mask.data(), h.size());
        } else {
            lc.masked = h;
        }

        Matrix pre = matmul_nt(h, layer.q.w0);
        if (layer.v) pre += matmul_nt(h, layer.v->w0);
        if (layer.q.enabled) add_adapter_branch(pre, lc.masked, layer.q);
        if (layer.v && layer.v->enabled) add_adapter_branch(pre, lc.masked, *layer.v);

        if (layer.act == Activation::tanh_act)
            for (std::size_t i = 0; i < pre.size(); ++i)
                pre.data()[i] = std::tanh(pre.data()[i]);
        lc.output = std::move(pre);
        h = lc.output;
        cache.layers.push_back(std::move(lc));
    }

    cache.z = h;
    cache.embed_norm.resize(h.rows());
    for (std::size_t i = 0; i < h.rows(); ++i) {
        const double n = std::sqrt(kernels::sum_sq(cache.z.row(i), cache.z.cols()));
        if (!(n > 0.0) || !std::isfinite(n))
            throw NumericalError("forward: degenerate embedding norm");
        cache.embed_norm[i] = n;
        kernels::scal(cache.z.row(i), 1.0 / n, cache.z.cols());
    }

    cache.logits = matmul_nt(cache.z, model.class_embeddings);
    cache.logits *= 1.0 / model.temperature;
    cache.probs = cache.logits;
    softmax_rows(cache.probs);
    return cache;
}

double loss_ce(const Matrix& probs, const std::vector<std::size_t>& labels) {
    if (probs.rows() != labels.size())
        throw ContractError("loss_ce: batch size mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= probs.cols())
            throw ContractError("loss_ce: label out of range");
        total += std::log(std::max(probs(i, labels[i]), 1e-12));
    }
    return -total / static_cast<double>(labels.size());
}

BackwardResult backward(const AdapterModel& model, const Batch& batch,
                        const std::vector<double>* delta, const PassOptions& opts,
                        bool want_dense_w) {
    ForwardCache cache = forward(model, batch.inputs, delta, opts);
    const std::size_t m = batch.size();
    const std::size_t num_k = model.num_classes();

    BackwardResult res;
    res.probs = cache.probs;
    res.bundle.loss = loss_ce(cache.probs, batch.labels);

    // d(loss)/d(logits) of softmax + mean cross-entropy
    Matrix dlogits = cache.probs;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < num_k; ++j) dlogits(i, j) /= static_cast<double>(m);
        dlogits(i, batch.labels[i]) -= 1.0 / static_cast<double>(m);
    }

    Matrix dz = matmul(dlogits, model.class_embeddings);
    dz *= 1.0 / model.temperature;

    // through z = e / ||e||
    Matrix dh = dz;
    for (std::size_t i = 0; i < m; ++i) {
        const double zdz = kernels::dot(cache.z.row(i), dz.row(i), dz.cols());
        kernels::axpy(dh.row(i), -zdz, cache.z.row(i), dh.cols());
        kernels::scal(dh.row(i), 1.0 / cache.embed_norm[i], dh.cols());
    }

    if (want_dense_w) res.dense_w.resize(model.layers.size());

    for (std::size_t li = model.layers.size(); li-- > 0;) {
        const LoRALinear& layer = model.layers[li];
        const ForwardCache::Layer& lc = cache.layers[li];

        Matrix dpre = std::move(dh);
        if (layer.act == Activation::tanh_act)
            for (std::size_t i = 0; i < dpre.size(); ++i)
                dpre.data()[i] *= 1.0 - lc.output.data()[i] * lc.output.data()[i];

        if (want_dense_w) res.dense_w[li] = matmul_tn(dpre, lc.input);

        Matrix dh_prev = matmul(dpre, layer.q.w0);
        if (layer.v) dh_prev += matmul(dpre, layer.v->w0);

        auto handle_unit = [&](const AdapterUnit& unit, std::size_t unit_idx) {
            if (!unit.enabled) return;
            Matrix t1 = matmul(dpre, unit.b);       // M x r
            UnitGrads g;
            g.layer = li;
            g.unit = unit_idx;
            g.grad_a = matmul_tn(t1, lc.masked);    // r x d_in
            g.grad_a *= unit.scale;
            Matrix p = matmul_nt(lc.masked, unit.a);  // M x r
            g.grad_b = matmul_tn(dpre, p);            // d_out x r
            g.grad_b *= unit.scale;
            res.bundle.units.push_back(std::move(g));

            Matrix branch = matmul(t1, unit.a);     // M x d_in
            branch *= unit.scale;
            if (lc.has_mask) {
                Matrix masked_branch(branch.rows(), branch.cols());
                kernels::mul(masked_branch.data(), branch.data(), lc.mask.data(),
                             branch.size());
                dh_prev += masked_branch;
            } else {
                dh_prev += branch;
            }
        };
        handle_unit(layer.q, 0);
        if (layer.v) handle_unit(*layer.v, 1);

        dh = std::move(dh_prev);
    }

    res.input_grads = std::move(dh);
    res.bundle.grad_delta.assign(model.input_dim, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        kernels::add(res.bundle.grad_delta.data(), res.input_grads.row(i),
                     model.input_dim);

    // The bundle walks layers top-down; present it bottom-up.
    std::reverse(res.bundle.units.begin(), res.bundle.units.end());
    return res;
}

double chain_rule_residual(const AdapterModel& model, const Batch& batch,
                           const std::vector<double>* delta) {
    PassOptions opts;  // dropout off
    BackwardResult res = backward(model, batch, delta, opts, true);

    double worst = 0.0;
    for (const UnitGrads& g : res.bundle.units) {
        const LoRALinear& layer = model.layers[g.layer];
        const AdapterUnit& unit = g.unit == 0 ? layer.q : *layer.v;
        const Matrix& dw = res.dense_w[g.layer];

        Matrix lhs_a = matmul_tn(unit.b, dw);  // B^T dW
        lhs_a *= unit.scale;
        lhs_a -= g.grad_a;
        Matrix lhs_b = matmul_nt(dw, unit.a);  // dW A^T
        lhs_b *= unit.scale;
        lhs_b -= g.grad_b;
        worst = std::max(worst, frobenius_norm(lhs_a) + frobenius_norm(lhs_b));
    }
    return worst;
}

std::vector<std::size_t> placement_layers(const AdapterPlacement& placement,
                                          std::size_t num_layers) {
    const std::size_t L = num_layers;
    std::vector<std::size_t> out;
    auto range = [&](std::size_t start, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(start + i);
    };
    switch (placement.band) {
    case LayerBand::all:
        range(0, L);
        break;
    case LayerBand::bottom:
        range(0, L / 2);
        break;
    case LayerBand::up:
        range(L - L / 2, L / 2);
        break;
    case LayerBand::half_bottom:
        range(0, (L + 1) / 2);
        break;
    case LayerBand::half_up:
        range(L - (L + 1) / 2, (L + 1) / 2);
        break;
    case LayerBand::mid: {
        const std::size_t count = (L + 1) / 2;
        range((L - count) / 2, count);
        break;
    }
    case LayerBand::explicit_list:
        for (std::size_t l : placement.layer_list) {
            if (l >= L)
                throw ConfigError("placement layer " + std::to_string(l) +
                                  " out of range for " + std::to_string(L) + " layers");
            out.push_back(l);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        break;
    }
    return out;
}

void apply_placement(AdapterModel& model, const AdapterPlacement& placement) {
    const auto selected = placement_layers(placement, model.layers.size());
    const bool want_q = placement.matrices != MatrixTarget::v_only;
    const bool want_v = placement.matrices != MatrixTarget::q_only;

    bool any = false;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const bool in_band =
            std::find(selected.begin(), selected.end(), l) != selected.end();
        LoRALinear& layer = model.layers[l];
        layer.q.enabled = in_band && want_q;
        if (layer.v) layer.v->enabled = in_band && want_v;
        any = any || layer.q.enabled || (layer.v && layer.v->enabled);
    }
    if (!any)
        throw ConfigError("placement selects no adapters");
    model.placement = placement;
}

} // namespace advlora
