#include "tstok/regularizers.hpp"

#include <algorithm>
#include <cmath>

namespace tstok {

namespace {

constexpr double kNormFloor = 1e-12;

void check_step(int step_k, Eigen::Index n) {
    if (step_k < 1) {
        throw ConfigError("step k must be >= 1");
    }
    if (2 * static_cast<Eigen::Index>(step_k) >= n) {
        throw ConfigError("step k too large: 2k must be < N");
    }
}

Eigen::MatrixXd project(const MatrixRM& block, const Eigen::MatrixXd& basis,
                        Eigen::RowVectorXd& mean_out) {
    mean_out = block.colwise().mean();
    return (block.rowwise() - mean_out) * basis;
}

// Maps a gradient w.r.t. the projected rows back to the block, including
// the mean term: d e'_j / d e_l = P^T (delta_jl - 1/N).
MatrixRM backproject(const Eigen::MatrixXd& grad_projected, const Eigen::MatrixXd& basis) {
    const Eigen::RowVectorXd mean_grad = grad_projected.colwise().mean();
    return (grad_projected.rowwise() - mean_grad) * basis.transpose();
}

}  // namespace

GeometryContext fit_projection(const MatrixRM& ts_block) {
    const Eigen::Index n = ts_block.rows();
    const Eigen::Index dim = ts_block.cols();
    if (n < 4) {
        throw ConfigError("projection fit needs at least 4 rows");
    }
    if (dim < 3) {
        throw ConfigError("projection fit needs dim >= 3");
    }

    GeometryContext ctx;
    ctx.mean = ts_block.colwise().mean().transpose();
    const MatrixRM centered = ts_block.rowwise() - ctx.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    ctx.singular_values = svd.singularValues();
    if (!(ctx.singular_values(0) > 0.0)) {
        throw GeometryError("TS block is degenerate: all rows identical");
    }

    ctx.basis = svd.matrixV().leftCols(3);
    for (int c = 0; c < 3; ++c) {
        int idx = 0;
        ctx.basis.col(c).cwiseAbs().maxCoeff(&idx);
        if (ctx.basis(idx, c) < 0.0) {
            ctx.basis.col(c) = -ctx.basis.col(c);
        }
    }
    ctx.projected = centered * ctx.basis;
    return ctx;
}

LossResult loss_ord(const MatrixRM& ts_block, const Eigen::MatrixXd& basis, int step_k,
                    double margin) {
    const Eigen::Index n = ts_block.rows();
    check_step(step_k, n);
    const Eigen::Index k = step_k;
    const Eigen::Index terms = n - 2 * k;

    Eigen::RowVectorXd mean;
    const Eigen::MatrixXd projected = project(ts_block, basis, mean);
    Eigen::MatrixXd grad_projected = Eigen::MatrixXd::Zero(n, 3);

    double total = 0.0;
    for (Eigen::Index i = 2 * k; i < n; ++i) {
        const Eigen::RowVector3d near_diff = projected.row(i) - projected.row(i - k);
        const Eigen::RowVector3d far_diff = projected.row(i) - projected.row(i - 2 * k);
        const double d_near = near_diff.norm();
        const double d_far = far_diff.norm();
        const double hinge = d_near - d_far - margin;
        if (hinge > 0.0) {
            total += hinge;
            const Eigen::RowVector3d g_near = near_diff / std::max(d_near, kNormFloor);
            const Eigen::RowVector3d g_far = far_diff / std::max(d_far, kNormFloor);
            grad_projected.row(i) += g_near - g_far;
            grad_projected.row(i - k) -= g_near;
            grad_projected.row(i - 2 * k) += g_far;
        }
    }

    LossResult result;
    result.value = total / static_cast<double>(terms);
    grad_projected /= static_cast<double>(terms);
    result.grad = backproject(grad_projected, basis);
    return result;
}

LossResult loss_mono(const MatrixRM& ts_block, const Eigen::MatrixXd& basis, int step_k,
                     double margin) {
    const Eigen::Index n = ts_block.rows();
    check_step(step_k, n);
    const Eigen::Index k = step_k;
    const Eigen::Index terms = n - 2 * k;

    Eigen::RowVectorXd mean;
    const Eigen::MatrixXd projected = project(ts_block, basis, mean);
    Eigen::MatrixXd grad_projected = Eigen::MatrixXd::Zero(n, 3);

    double total = 0.0;
    for (Eigen::Index i = k; i < n - k; ++i) {
        const Eigen::RowVector3d prev = projected.row(i) - projected.row(i - k);
        const Eigen::RowVector3d next = projected.row(i + k) - projected.row(i);
        const double norm_prev = std::max(prev.norm(), kNormFloor);
        const double norm_next = std::max(next.norm(), kNormFloor);
        const double sim = prev.dot(next) / (norm_prev * norm_next);
        const double hinge = -sim - margin;
        if (hinge > 0.0) {
            total += hinge;
            // d(-sim)/d prev and d(-sim)/d next; when a norm sits at the
            // floor its denominator is a constant.
            Eigen::RowVector3d d_prev = -next / (norm_prev * norm_next);
            if (prev.norm() > kNormFloor) {
                d_prev += sim * prev / (norm_prev * norm_prev);
            }
            Eigen::RowVector3d d_next = -prev / (norm_prev * norm_next);
            if (next.norm() > kNormFloor) {
                d_next += sim * next / (norm_next * norm_next);
            }
            grad_projected.row(i) += d_prev - d_next;
            grad_projected.row(i - k) -= d_prev;
            grad_projected.row(i + k) += d_next;
        }
    }

    LossResult result;
    result.value = total / static_cast<double>(terms);
    grad_projected /= static_cast<double>(terms);
    result.grad = backproject(grad_projected, basis);
    return result;
}

GeometryReport measure(const MatrixRM& ts_block, const RegularizerConfig& cfg) {
    const Eigen::Index n = ts_block.rows();
    if (2 * static_cast<Eigen::Index>(cfg.k_global) >= n) {
        throw ConfigError("TS block too small for the global step");
    }
    const GeometryContext ctx = fit_projection(ts_block);

    GeometryReport report;
    report.r_ord_local = loss_ord(ts_block, ctx.basis, cfg.k_local, 0.0).value;
    report.r_ord_global = loss_ord(ts_block, ctx.basis, cfg.k_global, 0.0).value;
    report.r_mono_local = loss_mono(ts_block, ctx.basis, cfg.k_local, 0.0).value;
    report.r_mono_global = loss_mono(ts_block, ctx.basis, cfg.k_global, 0.0).value;
    report.l_ord = loss_ord(ts_block, ctx.basis, cfg.step_k, cfg.margin_ord).value;
    report.l_mono = loss_mono(ts_block, ctx.basis, cfg.step_k, cfg.margin_mono).value;
    return report;
}

LossResult total_regularizer(const MatrixRM& ts_block, const Eigen::MatrixXd& basis,
                             const RegularizerConfig& cfg) {
    LossResult result;
    result.grad = MatrixRM::Zero(ts_block.rows(), ts_block.cols());
    if (cfg.lambda_ord != 0.0) {
        const LossResult ord = loss_ord(ts_block, basis, cfg.step_k, cfg.margin_ord);
        result.value += cfg.lambda_ord * ord.value;
        result.grad += cfg.lambda_ord * ord.grad;
    }
    if (cfg.lambda_mono != 0.0) {
        const LossResult mono = loss_mono(ts_block, basis, cfg.step_k, cfg.margin_mono);
        result.value += cfg.lambda_mono * mono.value;
        result.grad += cfg.lambda_mono * mono.grad;
    }
    return result;
}

LossResult total_regularizer(const MatrixRM& ts_block, const RegularizerConfig& cfg) {
    if (cfg.lambda_ord == 0.0 && cfg.lambda_mono == 0.0) {
        LossResult result;
        result.grad = MatrixRM::Zero(ts_block.rows(), ts_block.cols());
        return result;
    }
    const GeometryContext ctx = fit_projection(ts_block);
    return total_regularizer(ts_block, ctx.basis, cfg);
}

}  // namespace tstok
