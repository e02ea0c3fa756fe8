#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "tstok/errors.hpp"
#include "tstok/rng.hpp"
#include "tstok/ts_processor.hpp"

namespace tstok {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense embedding table with the TS token block at rows [ts_start, ts_end).
// Rows outside that range are the "existing" base embeddings the
// initialization schemes anchor to.
struct EmbeddingMatrix {
    MatrixRM data;
    int ts_start = 0;
    int ts_end = 0;
    std::string scheme = "default";
    std::uint64_t seed = 0;
    double epsilon = 0.0;

    int rows() const { return static_cast<int>(data.rows()); }
    int dim() const { return static_cast<int>(data.cols()); }
    int ts_count() const { return ts_end - ts_start; }

    MatrixRM ts_block() const { return data.middleRows(ts_start, ts_count()); }
};

// Radial statistics of a row set: mean vector, mean and std of the row
// distances to it. Defined for any non-empty row set.
struct RadialStats {
    Eigen::VectorXd mean_embed;
    double avg_radius = 0.0;
    double radius_std = 0.0;
};

// Radial stats plus the top-3 principal axes of the centered base rows
// and the projection span of the base rows along axis1.
struct BaseStats {
    Eigen::VectorXd mean_embed;
    double avg_radius = 0.0;
    double radius_std = 0.0;
    Eigen::VectorXd axis1, axis2, axis3;
    double proj_min = 0.0;
    double proj_max = 0.0;
};

enum class InitScheme { Default, Slerp, PcaMain, Helix, Vmf };

struct InitSpec {
    InitScheme scheme = InitScheme::Default;
    std::uint64_t seed = 0;
    double noise_scale = 0.01;    // fraction of avg_radius
    int num_turns = 2;            // Helix only
    double concentration = 50.0;  // VMF kappa
    double margin_frac = 0.05;    // PCA-Main only
    bool shuffled = false;
};

std::string scheme_label(const InitSpec& spec);
InitSpec parse_scheme_label(const std::string& label);

RadialStats radial_stats(const MatrixRM& rows);

// Statistics over the base rows of `emb`. Throws GeometryError when the
// centered base has fewer than 3 nonzero singular values.
BaseStats base_stats(const EmbeddingMatrix& emb);
BaseStats base_stats_of_rows(const MatrixRM& base_rows);

// Point on the great circle through start/end at parameter t in [0, 1].
Eigen::VectorXd slerp_point(const Eigen::VectorXd& start, const Eigen::VectorXd& end, double t);

// Unit vector drawn from the von Mises-Fisher distribution with mean
// direction mu and concentration kappa (Ulrich/Wood rejection scheme).
Eigen::VectorXd sample_vmf(const Eigen::VectorXd& mu, double kappa, Rng& rng);

MatrixRM init_default(int n, const BaseStats& stats, std::uint64_t seed);
MatrixRM init_slerp(int n, const BaseStats& stats, const InitSpec& spec);
MatrixRM init_pca_main(int n, const BaseStats& stats, const InitSpec& spec);
MatrixRM init_helix(int n, const BaseStats& stats, const InitSpec& spec);
MatrixRM init_vmf(int n, const BaseStats& stats, const InitSpec& spec);

// Dispatch on spec.scheme; does not apply the shuffle.
MatrixRM init_ts_block(int n, const BaseStats& stats, const InitSpec& spec);

std::vector<int> shuffle_permutation(int n, std::uint64_t seed);

// Applies a seeded uniform permutation to the TS rows only.
EmbeddingMatrix shuffle_ts_block(const EmbeddingMatrix& emb, std::uint64_t seed);

// Full container: seeded Gaussian stand-in base table plus a TS block
// initialized per spec (shuffled afterwards when requested).
EmbeddingMatrix make_container(int base_rows, int dim, const TokenVocab& vocab,
                               const InitSpec& spec);

// Container IO: <prefix>.json header + <prefix>.bin row-major float32 LE.
void save_container(const EmbeddingMatrix& emb, const std::string& path_prefix);
EmbeddingMatrix load_container(const std::string& path_prefix);

}  // namespace tstok
