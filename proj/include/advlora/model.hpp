#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advlora/matrix.hpp"

namespace advlora {

enum class Activation { tanh_act, identity };

// One adapted weight matrix: frozen w0 plus the trainable low-rank pair.
struct AdapterUnit {
    Matrix w0;            // d_out x d_in, frozen
    Matrix a;             // r x d_in
    Matrix b;             // d_out x r
    std::size_t rank = 0;
    double scale = 1.0;
    bool enabled = true;
};

// A layer owns one weight matrix, or a parallel (q, v) pair summed at the
// output for the per-matrix ablation study.
struct LoRALinear {
    AdapterUnit q;
    std::optional<AdapterUnit> v;
    Activation act = Activation::tanh_act;
    double dropout_p = 0.0;

    std::size_t in_dim() const { return q.w0.cols(); }
    std::size_t out_dim() const { return q.w0.rows(); }
};

enum class LayerBand { all, up, bottom, half_up, half_bottom, mid, explicit_list };
enum class MatrixTarget { all, q_only, v_only, qv };

struct AdapterPlacement {
    LayerBand band = LayerBand::all;
    std::vector<std::size_t> layer_list;  // used with explicit_list
    MatrixTarget matrices = MatrixTarget::all;
};

struct ModelConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> layer_dims;  // per-layer output dims; last is the embedding dim
    std::size_t num_classes = 0;
    std::size_t rank = 2;
    double scale = 1.0;
    double dropout_p = 0.25;
    double temperature = 0.01;
    bool qv_mode = false;
    double init_sigma = 0.02;
    std::uint64_t backbone_seed = 1;
    std::uint64_t adapter_seed = 1;
};

struct AdapterModel {
    ModelConfig config;
    std::vector<LoRALinear> layers;
    Matrix class_embeddings;  // K x d_out, unit-norm rows
    double temperature = 0.01;
    std::size_t input_dim = 0;
    AdapterPlacement placement;

    std::size_t num_classes() const { return class_embeddings.rows(); }
    std::size_t embed_dim() const { return class_embeddings.cols(); }
};

struct Batch {
    Matrix inputs;  // M x n
    std::vector<std::size_t> labels;
    std::vector<std::uint64_t> sample_ids;

    std::size_t size() const { return labels.size(); }
};

struct PassOptions {
    bool train_mode = false;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
};

struct ForwardCache {
    struct Layer {
        Matrix input;   // M x d_in
        Matrix masked;  // adapter-branch input (equals input without dropout)
        Matrix mask;    // multiplicative mask; empty when inactive
        Matrix output;  // M x d_out, post-activation
        bool has_mask = false;
    };
    std::vector<Layer> layers;
    Matrix z;                        // normalized embeddings, M x d
    std::vector<double> embed_norm;  // per-row pre-normalization norms
    Matrix logits;                   // M x K
    Matrix probs;                    // M x K
};

struct UnitGrads {
    std::size_t layer = 0;
    std::size_t unit = 0;  // 0 = q, 1 = v
    Matrix grad_a;
    Matrix grad_b;
};

struct GradBundle {
    std::vector<UnitGrads> units;     // enabled adapters only
    std::vector<double> grad_delta;   // length n
    double loss = 0.0;
};

struct BackwardResult {
    GradBundle bundle;
    Matrix input_grads;               // M x n, gradient of the batch-mean loss
    Matrix probs;
    std::vector<Matrix> dense_w;      // per-layer dense grad of the effective weight (optional)
};

AdapterModel make_model(const ModelConfig& cfg);

Matrix effective_weight(const AdapterUnit& unit);
// Total linear map of the layer (q + v when the pair is present).
Matrix effective_weight(const LoRALinear& layer);

ForwardCache forward(const AdapterModel& model, const Matrix& inputs,
                     const std::vector<double>* delta, const PassOptions& opts);

double loss_ce(const Matrix& probs, const std::vector<std::size_t>& labels);

BackwardResult backward(const AdapterModel& model, const Batch& batch,
                        const std::vector<double>* delta, const PassOptions& opts,
                        bool want_dense_w = false);

// Max over enabled adapters of the chain-rule defect
// ||grad_a - s B^T dW||_F + ||grad_b - s dW A^T||_F, dropout off.
double chain_rule_residual(const AdapterModel& model, const Batch& batch,
                           const std::vector<double>* delta);

std::vector<std::size_t> placement_layers(const AdapterPlacement& placement,
                                          std::size_t num_layers);
void apply_placement(AdapterModel& model, const AdapterPlacement& placement);

// JSON checkpoint; all reals hex-encoded so round-trips are bit-exact.
void save_checkpoint(const AdapterModel& model, const std::string& path,
                     bool store_frozen = false);
AdapterModel load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const AdapterModel& model, bool store_frozen = false);
AdapterModel checkpoint_from_string(const std::string& text);

} // namespace advlora
