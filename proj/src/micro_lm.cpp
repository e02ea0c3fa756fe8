#include "tstok/micro_lm.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "tstok/rng.hpp"

namespace tstok {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;

template <typename T>
T gelu(T x) {
    const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
    const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
    return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T c = static_cast<T>(0.7978845608028654);
    const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
    const T th = std::tanh(u);
    const T du = c * (static_cast<T>(1) + static_cast<T>(3) * static_cast<T>(0.044715) * x * x);
    return static_cast<T>(0.5) * (static_cast<T>(1) + th) +
           static_cast<T>(0.5) * x * (static_cast<T>(1) - th * th) * du;
}

}  // namespace

void ModelConfig::validate() const {
    if (dim < 3 || layers < 1 || heads < 1 || ffn < 1 || context < 6 || n_ts_tokens < 2) {
        throw ConfigError("model config fields out of range");
    }
    if (dim % heads != 0) {
        throw ConfigError("dim must be divisible by heads");
    }
}

TokenBatch make_batch(const std::vector<EncodedSample>& samples,
                      const std::vector<int>& indices) {
    TokenBatch batch;
    batch.inputs.reserve(indices.size());
    batch.ask_positions.reserve(indices.size());
    batch.targets.reserve(indices.size());
    for (const int idx : indices) {
        const EncodedSample& s = samples.at(static_cast<std::size_t>(idx));
        batch.inputs.push_back(s.input_ids);
        batch.ask_positions.push_back(s.ask_pos);
        batch.targets.push_back(s.target_id);
    }
    return batch;
}

template <typename T>
std::vector<std::pair<std::string, typename MicroLm<T>::Mat*>>
MicroLm<T>::Tensors::tensor_list() {
    std::vector<std::pair<std::string, Mat*>> list;
    list.emplace_back("tok_embed", &tok_embed);
    list.emplace_back("pos_embed", &pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        BlockTensors& b = blocks[l];
        const std::string p = "block" + std::to_string(l) + ".";
        list.emplace_back(p + "ln1_g", &b.ln1_g);
        list.emplace_back(p + "ln1_b", &b.ln1_b);
        list.emplace_back(p + "wq", &b.wq);
        list.emplace_back(p + "bq", &b.bq);
        list.emplace_back(p + "wk", &b.wk);
        list.emplace_back(p + "bk", &b.bk);
        list.emplace_back(p + "wv", &b.wv);
        list.emplace_back(p + "bv", &b.bv);
        list.emplace_back(p + "wo", &b.wo);
        list.emplace_back(p + "bo", &b.bo);
        list.emplace_back(p + "ln2_g", &b.ln2_g);
        list.emplace_back(p + "ln2_b", &b.ln2_b);
        list.emplace_back(p + "w1", &b.w1);
        list.emplace_back(p + "b1", &b.b1);
        list.emplace_back(p + "w2", &b.w2);
        list.emplace_back(p + "b2", &b.b2);
    }
    list.emplace_back("lnf_g", &lnf_g);
    list.emplace_back("lnf_b", &lnf_b);
    list.emplace_back("head_w", &head_w);
    list.emplace_back("head_b", &head_b);
    return list;
}

template <typename T>
MicroLm<T>::MicroLm(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, "micro-lm"));
    const int d = cfg_.dim;
    const int f = cfg_.ffn;
    const int v = cfg_.vocab();

    auto gauss = [&rng](Mat& m, int rows, int cols) {
        m.resize(rows, cols);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                m(i, j) = static_cast<T>(rng.normal() * kInitStd);
            }
        }
    };
    auto zeros = [](Mat& m, int rows, int cols) { m = Mat::Zero(rows, cols); };
    auto ones = [](Mat& m, int rows, int cols) { m = Mat::Ones(rows, cols); };

    gauss(params_.tok_embed, v, d);
    gauss(params_.pos_embed, cfg_.context, d);
    params_.blocks.resize(static_cast<std::size_t>(cfg_.layers));
    for (auto& b : params_.blocks) {
        ones(b.ln1_g, 1, d);
        zeros(b.ln1_b, 1, d);
        gauss(b.wq, d, d);
        zeros(b.bq, 1, d);
        gauss(b.wk, d, d);
        zeros(b.bk, 1, d);
        gauss(b.wv, d, d);
        zeros(b.bv, 1, d);
        gauss(b.wo, d, d);
        zeros(b.bo, 1, d);
        ones(b.ln2_g, 1, d);
        zeros(b.ln2_b, 1, d);
        gauss(b.w1, d, f);
        zeros(b.b1, 1, f);
        gauss(b.w2, f, d);
        zeros(b.b2, 1, d);
    }
    ones(params_.lnf_g, 1, d);
    zeros(params_.lnf_b, 1, d);
    gauss(params_.head_w, v, d);
    zeros(params_.head_b, 1, v);

    grads_ = params_;
    zero_grads();
}

template <typename T>
void MicroLm<T>::zero_grads() {
    for (auto& [name, tensor] : grads_.tensor_list()) {
        tensor->setZero();
    }
}

template <typename T>
void MicroLm<T>::load_embeddings(const EmbeddingMatrix& container) {
    if (container.dim() != cfg_.dim) {
        throw DataError("container dim does not match the model");
    }
    if (container.ts_count() != cfg_.n_ts_tokens) {
        throw DataError("container TS block does not match the model vocabulary");
    }
    const int n_base = container.rows() - container.ts_count();
    if (n_base < kNumSpecials) {
        throw DataError("container base too small for the special tokens");
    }
    for (int i = 0; i < kNumSpecials; ++i) {
        params_.tok_embed.row(i) = container.data.row(i).template cast<T>();
    }
    for (int i = 0; i < cfg_.n_ts_tokens; ++i) {
        params_.tok_embed.row(cfg_.ts_start() + i) =
            container.data.row(container.ts_start + i).template cast<T>();
    }
}

template <typename T>
MatrixRM MicroLm<T>::ts_block_as_double() const {
    return params_.tok_embed.middleRows(cfg_.ts_start(), cfg_.n_ts_tokens)
        .template cast<double>();
}

template <typename T>
void MicroLm<T>::set_ts_block(const MatrixRM& block) {
    if (block.rows() != cfg_.n_ts_tokens || block.cols() != cfg_.dim) {
        throw DataError("TS block shape mismatch");
    }
    params_.tok_embed.middleRows(cfg_.ts_start(), cfg_.n_ts_tokens) = block.cast<T>();
}

// ---------------------------------------------------------------------
//  forward / backward
// ---------------------------------------------------------------------

template <typename T>
struct MicroLm<T>::SeqCache {
    using Mat = typename MicroLm<T>::Mat;
    std::vector<int> ids;
    int ask = 0;

    Mat x0;  // embeddings in, L x D
    struct BlockCache {
        Mat ln1_xhat, ln1_out;
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1;
        Mat q, k, v;
        std::vector<Mat> probs;  // per head, L x L, causal rows
        Mat ctx;                  // L x D before wo
        Mat x_attn;               // residual after attention
        Mat ln2_xhat, ln2_out;
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd2;
        Mat mlp_pre, mlp_act;
        Mat x_out;
    };
    std::vector<BlockCache> blocks;

    Eigen::Matrix<T, Eigen::Dynamic, 1> lnf_xhat;  // D, at ask only
    T lnf_rstd = 0;
    Eigen::Matrix<T, Eigen::Dynamic, 1> logits;    // vocab
};

namespace {

// Row-wise layer norm; fills xhat, rstd and out.
template <typename T, typename Mat, typename Vec>
void layer_norm_forward(const Mat& x, const Mat& gamma, const Mat& beta, Mat& xhat, Vec& rstd,
                        Mat& out) {
    const Eigen::Index rows = x.rows();
    const Eigen::Index cols = x.cols();
    xhat.resize(rows, cols);
    out.resize(rows, cols);
    rstd.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const T mean = x.row(i).mean();
        const T var = (x.row(i).array() - mean).square().mean();
        const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLnEps));
        rstd(i) = r;
        xhat.row(i) = (x.row(i).array() - mean) * r;
        out.row(i) = xhat.row(i).cwiseProduct(gamma.row(0)) + beta.row(0);
    }
}

// Backward for one layer-norm call; accumulates dgamma/dbeta, returns dx.
template <typename T, typename Mat, typename Vec>
Mat layer_norm_backward(const Mat& dy, const Mat& xhat, const Vec& rstd, const Mat& gamma,
                        Mat& dgamma, Mat& dbeta) {
    const Eigen::Index rows = dy.rows();
    const Eigen::Index cols = dy.cols();
    Mat dx(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        dgamma.row(0) += dy.row(i).cwiseProduct(xhat.row(i));
        dbeta.row(0) += dy.row(i);
        const auto dxhat = dy.row(i).cwiseProduct(gamma.row(0));
        const T m1 = dxhat.mean();
        const T m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
        dx.row(i) = rstd(i) * (dxhat.array() - m1 - xhat.row(i).array() * m2);
    }
    return dx;
}

}  // namespace

template <typename T>
void MicroLm<T>::forward_seq(const std::vector<int>& ids, int ask, SeqCache& cache) const {
    const int len = static_cast<int>(ids.size());
    if (len < 1 || len > cfg_.context) {
        throw DataError("sequence length outside the context window");
    }
    if (ask < 0 || ask >= len) {
        throw DataError("ask position outside the sequence");
    }
    const int d = cfg_.dim;
    const int hd = d / cfg_.heads;
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(hd));

    cache.ids = ids;
    cache.ask = ask;
    cache.x0.resize(len, d);
    for (int t = 0; t < len; ++t) {
        const int id = ids[static_cast<std::size_t>(t)];
        if (id < 0 || id >= cfg_.vocab()) {
            throw DataError("token ID out of range");
        }
        cache.x0.row(t) = params_.tok_embed.row(id) + params_.pos_embed.row(t);
    }

    cache.blocks.resize(static_cast<std::size_t>(cfg_.layers));
    Mat x = cache.x0;
    for (int l = 0; l < cfg_.layers; ++l) {
        const BlockTensors& w = params_.blocks[static_cast<std::size_t>(l)];
        auto& bc = cache.blocks[static_cast<std::size_t>(l)];

        layer_norm_forward<T>(x, w.ln1_g, w.ln1_b, bc.ln1_xhat, bc.rstd1, bc.ln1_out);
        bc.q = (bc.ln1_out * w.wq).rowwise() + w.bq.row(0);
        bc.k = (bc.ln1_out * w.wk).rowwise() + w.bk.row(0);
        bc.v = (bc.ln1_out * w.wv).rowwise() + w.bv.row(0);

        bc.ctx.resize(len, d);
        bc.probs.assign(static_cast<std::size_t>(cfg_.heads), Mat());
        for (int h = 0; h < cfg_.heads; ++h) {
            const auto qh = bc.q.middleCols(h * hd, hd);
            const auto kh = bc.k.middleCols(h * hd, hd);
            const auto vh = bc.v.middleCols(h * hd, hd);
            Mat scores = qh * kh.transpose() * scale;
            Mat& probs = bc.probs[static_cast<std::size_t>(h)];
            probs = Mat::Zero(len, len);
            for (int i = 0; i < len; ++i) {
                const T row_max = scores.row(i).head(i + 1).maxCoeff();
                T denom = 0;
                for (int j = 0; j <= i; ++j) {
                    const T e = std::exp(scores(i, j) - row_max);
                    probs(i, j) = e;
                    denom += e;
                }
                probs.row(i).head(i + 1) /= denom;
            }
            bc.ctx.middleCols(h * hd, hd) = probs * vh;
        }
        bc.x_attn = x + ((bc.ctx * w.wo).rowwise() + w.bo.row(0));

        layer_norm_forward<T>(bc.x_attn, w.ln2_g, w.ln2_b, bc.ln2_xhat, bc.rstd2, bc.ln2_out);
        bc.mlp_pre = (bc.ln2_out * w.w1).rowwise() + w.b1.row(0);
        bc.mlp_act = bc.mlp_pre.unaryExpr([](T u) { return gelu(u); });
        bc.x_out = bc.x_attn + ((bc.mlp_act * w.w2).rowwise() + w.b2.row(0));
        x = bc.x_out;
    }

    // Final norm and head at the ask position only.
    const auto x_ask = x.row(ask);
    const T mean = x_ask.mean();
    const T var = (x_ask.array() - mean).square().mean();
    const T r = static_cast<T>(1) / std::sqrt(var + static_cast<T>(kLnEps));
    cache.lnf_rstd = r;
    cache.lnf_xhat = ((x_ask.array() - mean) * r).matrix().transpose();
    Eigen::Matrix<T, Eigen::Dynamic, 1> hf =
        cache.lnf_xhat.cwiseProduct(params_.lnf_g.row(0).transpose()) +
        params_.lnf_b.row(0).transpose();
    cache.logits = params_.head_w * hf + params_.head_b.row(0).transpose();
}

template <typename T>
typename MicroLm<T>::Mat MicroLm<T>::forward(const TokenBatch& batch) const {
    const int bsz = static_cast<int>(batch.inputs.size());
    Mat logits(bsz, cfg_.vocab());
    SeqCache cache;
    for (int b = 0; b < bsz; ++b) {
        forward_seq(batch.inputs[static_cast<std::size_t>(b)],
                    batch.ask_positions[static_cast<std::size_t>(b)], cache);
        logits.row(b) = cache.logits.transpose();
    }
    return logits;
}

template <typename T>
double MicroLm<T>::ce_loss(const TokenBatch& batch) const {
    const Mat logits = forward(batch);
    double total = 0.0;
    for (int b = 0; b < logits.rows(); ++b) {
        const auto row = logits.row(b);
        const T row_max = row.maxCoeff();
        double denom = 0.0;
        for (int j = 0; j < row.size(); ++j) {
            denom += std::exp(static_cast<double>(row(j) - row_max));
        }
        const int target = batch.targets[static_cast<std::size_t>(b)];
        total += std::log(denom) - static_cast<double>(row(target) - row_max);
    }
    return total / static_cast<double>(logits.rows());
}

template <typename T>
LossBreakdown MicroLm<T>::backward(const TokenBatch& batch, const RegularizerConfig& reg,
                                   const Eigen::MatrixXd* reg_basis) {
    const int bsz = static_cast<int>(batch.inputs.size());
    if (bsz == 0) {
        throw DataError("empty batch");
    }
    const int d = cfg_.dim;
    const int hd = d / cfg_.heads;
    const T scale = static_cast<T>(1) / std::sqrt(static_cast<T>(hd));
    const T inv_b = static_cast<T>(1) / static_cast<T>(bsz);

    LossBreakdown breakdown;
    SeqCache cache;
    for (int b = 0; b < bsz; ++b) {
        const std::vector<int>& ids = batch.inputs[static_cast<std::size_t>(b)];
        const int ask = batch.ask_positions[static_cast<std::size_t>(b)];
        const int target = batch.targets[static_cast<std::size_t>(b)];
        const int len = static_cast<int>(ids.size());
        forward_seq(ids, ask, cache);

        // CE at the answer position.
        const T row_max = cache.logits.maxCoeff();
        Eigen::Matrix<T, Eigen::Dynamic, 1> probs =
            (cache.logits.array() - row_max).exp().matrix();
        const T denom = probs.sum();
        probs /= denom;
        breakdown.ce += static_cast<double>(-std::log(
            std::max(probs(target), std::numeric_limits<T>::min())));

        Eigen::Matrix<T, Eigen::Dynamic, 1> dlogits = probs * inv_b;
        dlogits(target) -= inv_b;

        // Head and final norm.
        Eigen::Matrix<T, Eigen::Dynamic, 1> hf =
            cache.lnf_xhat.cwiseProduct(params_.lnf_g.row(0).transpose()) +
            params_.lnf_b.row(0).transpose();
        grads_.head_w += dlogits * hf.transpose();
        grads_.head_b.row(0) += dlogits.transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> dhf = params_.head_w.transpose() * dlogits;

        grads_.lnf_g.row(0) += dhf.cwiseProduct(cache.lnf_xhat).transpose();
        grads_.lnf_b.row(0) += dhf.transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> dxhat =
            dhf.cwiseProduct(params_.lnf_g.row(0).transpose());
        const T m1 = dxhat.mean();
        const T m2 = dxhat.cwiseProduct(cache.lnf_xhat).mean();
        Eigen::Matrix<T, Eigen::Dynamic, 1> dx_ask =
            cache.lnf_rstd * (dxhat.array() - m1 - cache.lnf_xhat.array() * m2).matrix();

        Mat dx = Mat::Zero(len, d);
        dx.row(ask) = dx_ask.transpose();

        for (int l = cfg_.layers - 1; l >= 0; --l) {
            const BlockTensors& w = params_.blocks[static_cast<std::size_t>(l)];
            BlockTensors& g = grads_.blocks[static_cast<std::size_t>(l)];
            auto& bc = cache.blocks[static_cast<std::size_t>(l)];

            // MLP
            Mat dact = dx * w.w2.transpose();
            g.w2 += bc.mlp_act.transpose() * dx;
            g.b2.row(0) += dx.colwise().sum();
            Mat dpre(dact.rows(), dact.cols());
            for (Eigen::Index i = 0; i < dact.rows(); ++i) {
                for (Eigen::Index j = 0; j < dact.cols(); ++j) {
                    dpre(i, j) = dact(i, j) * gelu_grad(bc.mlp_pre(i, j));
                }
            }
            Mat dln2_out = dpre * w.w1.transpose();
            g.w1 += bc.ln2_out.transpose() * dpre;
            g.b1.row(0) += dpre.colwise().sum();
            Mat dx_attn =
                dx + layer_norm_backward<T>(dln2_out, bc.ln2_xhat, bc.rstd2, w.ln2_g,
                                            g.ln2_g, g.ln2_b);

            // Attention
            Mat dctx = dx_attn * w.wo.transpose();
            g.wo += bc.ctx.transpose() * dx_attn;
            g.bo.row(0) += dx_attn.colwise().sum();

            Mat dq = Mat::Zero(len, d);
            Mat dk = Mat::Zero(len, d);
            Mat dv = Mat::Zero(len, d);
            for (int h = 0; h < cfg_.heads; ++h) {
                const auto vh = bc.v.middleCols(h * hd, hd);
                const auto qh = bc.q.middleCols(h * hd, hd);
                const auto kh = bc.k.middleCols(h * hd, hd);
                const Mat& probs = bc.probs[static_cast<std::size_t>(h)];
                const auto dctx_h = dctx.middleCols(h * hd, hd);

                Mat dprobs = dctx_h * vh.transpose();
                dv.middleCols(h * hd, hd) = probs.transpose() * dctx_h;

                Mat dscores = Mat::Zero(len, len);
                for (int i = 0; i < len; ++i) {
                    T dot = 0;
                    for (int j = 0; j <= i; ++j) {
                        dot += dprobs(i, j) * probs(i, j);
                    }
                    for (int j = 0; j <= i; ++j) {
                        dscores(i, j) = probs(i, j) * (dprobs(i, j) - dot) * scale;
                    }
                }
                dq.middleCols(h * hd, hd) = dscores * kh;
                dk.middleCols(h * hd, hd) = dscores.transpose() * qh;
            }
            Mat dln1_out = dq * w.wq.transpose() + dk * w.wk.transpose() + dv * w.wv.transpose();
            g.wq += bc.ln1_out.transpose() * dq;
            g.bq.row(0) += dq.colwise().sum();
            g.wk += bc.ln1_out.transpose() * dk;
            g.bk.row(0) += dk.colwise().sum();
            g.wv += bc.ln1_out.transpose() * dv;
            g.bv.row(0) += dv.colwise().sum();

            dx = dx_attn + layer_norm_backward<T>(dln1_out, bc.ln1_xhat, bc.rstd1, w.ln1_g,
                                                  g.ln1_g, g.ln1_b);
        }

        for (int t = 0; t < len; ++t) {
            grads_.tok_embed.row(ids[static_cast<std::size_t>(t)]) += dx.row(t);
            grads_.pos_embed.row(t) += dx.row(t);
        }
    }
    breakdown.ce /= static_cast<double>(bsz);

    if (reg.lambda_ord != 0.0 || reg.lambda_mono != 0.0) {
        const MatrixRM block = ts_block_as_double();
        Eigen::MatrixXd basis;
        if (reg_basis != nullptr) {
            basis = *reg_basis;
        } else {
            basis = fit_projection(block).basis;
        }
        if (reg.lambda_ord != 0.0) {
            const LossResult ord = loss_ord(block, basis, reg.step_k, reg.margin_ord);
            breakdown.ord = ord.value;
            grads_.tok_embed.middleRows(cfg_.ts_start(), cfg_.n_ts_tokens) +=
                (reg.lambda_ord * ord.grad).cast<T>();
        }
        if (reg.lambda_mono != 0.0) {
            const LossResult mono = loss_mono(block, basis, reg.step_k, reg.margin_mono);
            breakdown.mono = mono.value;
            grads_.tok_embed.middleRows(cfg_.ts_start(), cfg_.n_ts_tokens) +=
                (reg.lambda_mono * mono.grad).cast<T>();
        }
    }

    breakdown.total =
        breakdown.ce + reg.lambda_ord * breakdown.ord + reg.lambda_mono * breakdown.mono;
    if (!std::isfinite(breakdown.total)) {
        throw TrainError("non-finite loss: ce=" + std::to_string(breakdown.ce) +
                         " ord=" + std::to_string(breakdown.ord) +
                         " mono=" + std::to_string(breakdown.mono));
    }
    return breakdown;
}

// ---------------------------------------------------------------------
//  optimizer / schedule
// ---------------------------------------------------------------------

template <typename T>
AdamW<T>::AdamW(MicroLm<T>& model) {
    m_state = model.params();
    v_state = model.params();
    for (auto& [name, tensor] : m_state.tensor_list()) {
        tensor->setZero();
    }
    for (auto& [name, tensor] : v_state.tensor_list()) {
        tensor->setZero();
    }
}

template <typename T>
void AdamW<T>::step(MicroLm<T>& model, double lr) {
    ++step_count;
    auto params = model.params().tensor_list();
    auto grads = model.grads().tensor_list();
    auto ms = m_state.tensor_list();
    auto vs = v_state.tensor_list();
    for (std::size_t i = 0; i < params.size(); ++i) {
        adamw_update(*params[i].second, *grads[i].second, *ms[i].second, *vs[i].second,
                     step_count, lr, beta1, beta2, eps, weight_decay);
    }
}

double CosineSchedule::lr_at(long step) const {
    const long warmup = std::lround(warmup_ratio * static_cast<double>(total_steps));
    if (warmup > 0 && step < warmup) {
        return peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps <= warmup) {
        return peak;
    }
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return peak * 0.5 * (1.0 + std::cos(M_PI * std::clamp(progress, 0.0, 1.0)));
}

// ---------------------------------------------------------------------
//  evaluation
// ---------------------------------------------------------------------

double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted,
                int n_classes) {
    if (truth.size() != predicted.size()) {
        throw DataError("macro_f1 length mismatch");
    }
    double sum = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        long tp = 0;
        long fp = 0;
        long fn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool is_true = truth[i] == c;
            const bool is_pred = predicted[i] == c;
            tp += is_true && is_pred;
            fp += !is_true && is_pred;
            fn += is_true && !is_pred;
        }
        const double precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 =
            (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        sum += f1;
    }
    return sum / static_cast<double>(n_classes);
}

template <typename T>
EvalResult evaluate(const MicroLm<T>& model, const std::vector<EncodedSample>& samples) {
    EvalResult result;
    std::array<std::vector<int>, kNumTasks> truth;
    std::array<std::vector<int>, kNumTasks> pred;
    long correct = 0;

    TokenBatch batch;
    batch.inputs.resize(1);
    batch.ask_positions.resize(1);
    batch.targets.resize(1);
    for (const EncodedSample& s : samples) {
        batch.inputs[0] = s.input_ids;
        batch.ask_positions[0] = s.ask_pos;
        batch.targets[0] = s.target_id;
        const auto logits = model.forward(batch);
        int best = 0;
        for (int o = 1; o < kNumOptions; ++o) {
            if (logits(0, special::kOpt0 + o) > logits(0, special::kOpt0 + best)) {
                best = o;
            }
        }
        const int task = static_cast<int>(s.task);
        truth[static_cast<std::size_t>(task)].push_back(s.label);
        pred[static_cast<std::size_t>(task)].push_back(best);
        correct += best == s.label;
    }

    result.overall_accuracy =
        samples.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(samples.size());
    for (int t = 0; t < kNumTasks; ++t) {
        const auto& tr = truth[static_cast<std::size_t>(t)];
        const auto& pr = pred[static_cast<std::size_t>(t)];
        result.task_counts[static_cast<std::size_t>(t)] = static_cast<int>(tr.size());
        if (tr.empty()) {
            result.task_accuracy[static_cast<std::size_t>(t)] = 0.0;
            result.task_macro_f1[static_cast<std::size_t>(t)] = 0.0;
            continue;
        }
        long ok = 0;
        for (std::size_t i = 0; i < tr.size(); ++i) {
            ok += tr[i] == pr[i];
        }
        result.task_accuracy[static_cast<std::size_t>(t)] =
            static_cast<double>(ok) / static_cast<double>(tr.size());
        result.task_macro_f1[static_cast<std::size_t>(t)] = macro_f1(tr, pr, kNumClasses);
    }
    return result;
}

// ---------------------------------------------------------------------
//  checkpoint IO
// ---------------------------------------------------------------------

template <typename T>
void save_checkpoint(const MicroLm<T>& model, const std::string& path_prefix) {
    const ModelConfig& cfg = model.config();
    nlohmann::json header;
    header["dim"] = cfg.dim;
    header["layers"] = cfg.layers;
    header["heads"] = cfg.heads;
    header["ffn"] = cfg.ffn;
    header["context"] = cfg.context;
    header["n_ts_tokens"] = cfg.n_ts_tokens;
    header["epsilon"] = cfg.epsilon;
    std::ofstream json_out(path_prefix + ".json");
    if (!json_out) {
        throw DataError("cannot write " + path_prefix + ".json");
    }
    json_out << header.dump(2) << "\n";

    std::ofstream bin_out(path_prefix + ".bin", std::ios::binary);
    if (!bin_out) {
        throw DataError("cannot write " + path_prefix + ".bin");
    }
    auto tensors = const_cast<MicroLm<T>&>(model).params().tensor_list();
    for (auto& [name, tensor] : tensors) {
        for (Eigen::Index i = 0; i < tensor->rows(); ++i) {
            for (Eigen::Index j = 0; j < tensor->cols(); ++j) {
                const float v = static_cast<float>((*tensor)(i, j));
                bin_out.write(reinterpret_cast<const char*>(&v), sizeof(float));
            }
        }
    }
}

template <typename T>
MicroLm<T> load_checkpoint(const std::string& path_prefix) {
    std::ifstream json_in(path_prefix + ".json");
    if (!json_in) {
        throw DataError("cannot open " + path_prefix + ".json");
    }
    nlohmann::json header;
    try {
        json_in >> header;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint header: " + std::string(e.what()));
    }
    ModelConfig cfg;
    cfg.dim = header.at("dim").get<int>();
    cfg.layers = header.at("layers").get<int>();
    cfg.heads = header.at("heads").get<int>();
    cfg.ffn = header.at("ffn").get<int>();
    cfg.context = header.at("context").get<int>();
    cfg.n_ts_tokens = header.at("n_ts_tokens").get<int>();
    cfg.epsilon = header.at("epsilon").get<double>();

    MicroLm<T> model(cfg, 0);
    std::ifstream bin_in(path_prefix + ".bin", std::ios::binary);
    if (!bin_in) {
        throw DataError("cannot open " + path_prefix + ".bin");
    }
    for (auto& [name, tensor] : model.params().tensor_list()) {
        for (Eigen::Index i = 0; i < tensor->rows(); ++i) {
            for (Eigen::Index j = 0; j < tensor->cols(); ++j) {
                float v = 0.0F;
                bin_in.read(reinterpret_cast<char*>(&v), sizeof(float));
                if (!bin_in) {
                    throw DataError("checkpoint blob truncated at tensor " + name);
                }
                (*tensor)(i, j) = static_cast<T>(v);
            }
        }
    }
    return model;
}

template class MicroLm<float>;
template class MicroLm<double>;
template struct AdamW<float>;
template struct AdamW<double>;
template EvalResult evaluate<float>(const MicroLm<float>&, const std::vector<EncodedSample>&);
template EvalResult evaluate<double>(const MicroLm<double>&, const std::vector<EncodedSample>&);
template void save_checkpoint<float>(const MicroLm<float>&, const std::string&);
template void save_checkpoint<double>(const MicroLm<double>&, const std::string&);
template MicroLm<float> load_checkpoint<float>(const std::string&);
template MicroLm<double> load_checkpoint<double>(const std::string&);

}  // namespace tstok
