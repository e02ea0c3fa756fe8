#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "tstok/export_csv.hpp"
#include "tstok/specials.hpp"

using namespace tstok;

namespace {

std::vector<std::vector<double>> read_csv(const std::string& path, std::string& header) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::getline(in, header);
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            row.push_back(std::stod(field));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST_SUITE("cli_export") {

TEST_CASE("pca export of a full-size container") {
    const TokenVocab vocab = build_vocab(0.001, kNumSpecials);
    InitSpec spec;
    spec.scheme = InitScheme::Slerp;
    spec.seed = 644;
    const EmbeddingMatrix emb = make_container(1024, 64, vocab, spec);
    export_pca(emb, "/tmp/tstok_export_full.csv");
    std::string header;
    const auto rows = read_csv("/tmp/tstok_export_full.csv", header);
    CHECK(header == "index,value,pc1_2d,pc2_2d,pc1_3d,pc2_3d,pc3_3d");
    CHECK(rows.size() == 2001);
    for (const auto& row : rows) {
        REQUIRE(row.size() == 7);
        for (const double v : row) {
            CHECK(std::isfinite(v));
        }
        // 2-D coordinates are the first two of the single deterministic fit
        CHECK(row[2] == row[4]);
        CHECK(row[3] == row[5]);
    }
    CHECK(rows.front()[1] == doctest::Approx(-1.0));
    CHECK(rows.back()[1] == doctest::Approx(1.0));
}

TEST_CASE("zero-noise pca_main exports an arithmetic progression") {
    const TokenVocab vocab = build_vocab(0.01, kNumSpecials);
    InitSpec spec;
    spec.scheme = InitScheme::PcaMain;
    spec.seed = 9;
    spec.noise_scale = 0.0;
    spec.margin_frac = 0.0;
    const EmbeddingMatrix emb = make_container(256, 16, vocab, spec);
    export_pca(emb, "/tmp/tstok_export_line.csv");
    std::string header;
    const auto rows = read_csv("/tmp/tstok_export_line.csv", header);
    REQUIRE(rows.size() == 201);
    const double spacing = rows[1][4] - rows[0][4];
    for (std::size_t i = 1; i < rows.size(); ++i) {
        CHECK(std::fabs((rows[i][4] - rows[i - 1][4]) - spacing) < 1e-8);
    }
}

TEST_CASE("export is byte-deterministic") {
    const TokenVocab vocab = build_vocab(0.02, kNumSpecials);
    InitSpec spec;
    spec.scheme = InitScheme::Helix;
    spec.seed = 31;
    const EmbeddingMatrix emb = make_container(128, 12, vocab, spec);
    export_pca(emb, "/tmp/tstok_export_a.csv");
    export_pca(emb, "/tmp/tstok_export_b.csv");
    std::ifstream a("/tmp/tstok_export_a.csv");
    std::ifstream b("/tmp/tstok_export_b.csv");
    std::stringstream sa;
    std::stringstream sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
}

}  // TEST_SUITE
