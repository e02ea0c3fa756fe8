#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tstok/embed_geometry.hpp"
#include "tstok/regularizers.hpp"
#include "tstok/specials.hpp"
#include "tstok/synth_tasks.hpp"

namespace tstok {

struct ModelConfig {
    int dim = 64;
    int layers = 2;
    int heads = 2;
    int ffn = 256;
    int context = 288;
    int n_ts_tokens = 2001;
    double epsilon = 0.001;  // metadata: the grid the TS tokens encode

    int vocab() const { return kNumSpecials + n_ts_tokens; }
    int ts_start() const { return kNumSpecials; }
    void validate() const;
};

struct LossBreakdown {
    double ce = 0.0;
    double ord = 0.0;
    double mono = 0.0;
    double total = 0.0;
};

struct TokenBatch {
    std::vector<std::vector<int>> inputs;
    std::vector<int> ask_positions;
    std::vector<int> targets;
};

TokenBatch make_batch(const std::vector<EncodedSample>& samples,
                      const std::vector<int>& indices);

// Pre-norm causal decoder over the extended vocabulary. Double
// instantiation backs the finite-difference gradient checks, float the
// training runs.
template <typename T>
class MicroLm {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    struct BlockTensors {
        Mat ln1_g, ln1_b;
        Mat wq, bq, wk, bk, wv, bv, wo, bo;
        Mat ln2_g, ln2_b;
        Mat w1, b1, w2, b2;
    };

    struct Tensors {
        Mat tok_embed;  // vocab x D
        Mat pos_embed;  // context x D
        std::vector<BlockTensors> blocks;
        Mat lnf_g, lnf_b;
        Mat head_w;  // vocab x D (untied from tok_embed)
        Mat head_b;  // 1 x vocab

        std::vector<std::pair<std::string, Mat*>> tensor_list();
    };

    MicroLm(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    Tensors& params() { return params_; }
    const Tensors& params() const { return params_; }
    Tensors& grads() { return grads_; }
    const Tensors& grads() const { return grads_; }

    void zero_grads();

    // Copies the container's TS block into tok_embed rows [ts_start, ...)
    // and the first kNumSpecials base rows into the special rows.
    void load_embeddings(const EmbeddingMatrix& container);

    MatrixRM ts_block_as_double() const;
    void set_ts_block(const MatrixRM& block);

    // Logits at the ASK position, one row per batch element.
    Mat forward(const TokenBatch& batch) const;

    // Mean answer-token cross-entropy of the batch.
    double ce_loss(const TokenBatch& batch) const;

    // Accumulates exact gradients of ce + lambda_ord*ord + lambda_mono*mono
    // into grads(). The regularizer projection basis is held fixed; pass
    // nullptr to fit it from the current TS block.
    LossBreakdown backward(const TokenBatch& batch, const RegularizerConfig& reg,
                           const Eigen::MatrixXd* reg_basis = nullptr);

private:
    struct SeqCache;
    void forward_seq(const std::vector<int>& ids, int ask, SeqCache& cache) const;

    ModelConfig cfg_;
    Tensors params_;
    Tensors grads_;
};

// One AdamW tensor update with decoupled weight decay and bias-corrected
// moments; shared by the optimizer and the scalar tests.
template <typename MatT>
void adamw_update(MatT& p, const MatT& g, MatT& m, MatT& v, long step, double lr, double beta1,
                  double beta2, double eps, double weight_decay) {
    using T = typename MatT::Scalar;
    const T b1 = static_cast<T>(beta1);
    const T b2 = static_cast<T>(beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(beta1, static_cast<double>(step)));
    const T bc2 = static_cast<T>(1.0 - std::pow(beta2, static_cast<double>(step)));
    m = b1 * m + (static_cast<T>(1) - b1) * g;
    v = (b2 * v.array() + (static_cast<T>(1) - b2) * g.array().square()).matrix();
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    p.array() -= static_cast<T>(lr) *
                 (m_hat / (v_hat.sqrt() + static_cast<T>(eps)) + static_cast<T>(weight_decay) * p.array());
}

template <typename T>
struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    explicit AdamW(MicroLm<T>& model);

    // Decoupled weight decay; zero gradients with zero decay leave the
    // parameters unchanged.
    void step(MicroLm<T>& model, double lr);

    long step_count = 0;
    typename MicroLm<T>::Tensors m_state;
    typename MicroLm<T>::Tensors v_state;
};

// Linear warmup over warmup_ratio of total_steps (lr 0 at step 0), then
// cosine decay from the peak to 0.
struct CosineSchedule {
    double peak = 3e-4;
    double warmup_ratio = 0.03;
    long total_steps = 1000;

    double lr_at(long step) const;
};

// Unweighted mean of per-class F1; empty-class F1 counts as 0.
double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted,
                int n_classes);

struct EvalResult {
    double overall_accuracy = 0.0;
    std::array<double, kNumTasks> task_accuracy{};
    std::array<double, kNumTasks> task_macro_f1{};
    std::array<int, kNumTasks> task_counts{};
};

// Prediction = argmax over the four option-token logits at ASK.
template <typename T>
EvalResult evaluate(const MicroLm<T>& model, const std::vector<EncodedSample>& samples);

template <typename T>
void save_checkpoint(const MicroLm<T>& model, const std::string& path_prefix);

template <typename T>
MicroLm<T> load_checkpoint(const std::string& path_prefix);

}  // namespace tstok
